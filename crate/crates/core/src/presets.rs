//! Named bundles of module configs.
//!
//! `desk` runs the whole pipeline on one core in a few minutes.
//! `full_scale` uses the full experiment sizes and is meant for real
//! assets.

use serde::{Deserialize, Serialize};

use crate::data::WorldConfig;
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::reconstructor::SearchConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub world: WorldConfig,
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
    pub search: SearchConfig,
}

/// Desk-scale sizes. The encoder stops at 4 epochs: with noisy voxels the
/// held-out correlation peaks early and then declines. Library searches keep
/// only entries under the decoded category, as generator searches do.
pub fn desk() -> Preset {
    Preset {
        world: WorldConfig::default(),
        decoder: DecoderConfig::default(),
        encoder: EncoderConfig {
            epochs: 4,
            ..EncoderConfig::default()
        },
        search: SearchConfig {
            library_filter: true,
            ..SearchConfig::default()
        },
    }
}

/// Full sizes: 1750/120 splits at 128x128, 256 x 400 candidates,
/// Top-10, threshold 0.27, 100 voxels per node and 16 hidden units per
/// direction.
pub fn full_scale() -> Preset {
    let d = desk();
    Preset {
        world: WorldConfig {
            n_train: 1750,
            n_test: 120,
            resolution: 128,
            ..d.world
        },
        decoder: DecoderConfig {
            voxels_per_node: 100,
            hidden_per_direction: 16,
            ..d.decoder
        },
        encoder: d.encoder,
        search: SearchConfig {
            batch_size: 256,
            iterations: 400,
            top_k: 10,
            effective_threshold: 0.27,
            ..d.search
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_sizes() {
        let p = full_scale();
        assert_eq!(p.search.budget(), 102_400);
        assert_eq!((p.world.n_train, p.world.n_test, p.world.resolution), (1750, 120, 128));
        assert_eq!(p.world.generator_config().resolution, 128);
        assert!(p.world.voxels_per_roi >= p.decoder.voxels_per_node);
    }

    #[test]
    fn desk_is_valid() {
        let d = desk();
        d.search.validate().unwrap();
        d.decoder.validate().unwrap();
        d.encoder.validate().unwrap();
        assert_eq!(d.world.n_train + d.world.n_test, 420);
    }
}
