//! Sample-evaluate-rank reconstruction.
//!
//! Candidates come only from the generator (or, as a baseline, a finite
//! library); the score only looks at voxel space. For each target the search
//! draws `iterations x batch_size` candidates, encodes them, scores them
//! against the measured V1-V3 responses and keeps the best `top_k`.

mod evaluator;
mod report;
mod search;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CategoryMap, MaskConfig, VoxelRecord, N_COARSE};
use crate::decoder::{decode_category, DecoderModel};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::generator::{FiniteLibrary, SyntheticGenerator};
use crate::numerics::RngStream;

pub use evaluator::{fit_calibration, score, Calibration, EffectiveMask, Scorer};
pub use report::{load_report, write_report, ReconstructionReport, ReportEntry};
pub use search::{
    rank_merge, run_shard, shard_ranges, Candidate, CandidateSource, FinePrior, GeneratorSource, LibrarySource,
    PlantedSource, Proposal, ShardResult, TopK,
};

/// Where candidates come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    /// Fine categories drawn under the decoded coarse label.
    Predicted,
    /// Fine categories uniform over the whole generator.
    Random,
    /// Fine categories drawn under a given coarse label.
    Fixed(usize),
    /// Entries of a finite library instead of fresh generator samples.
    Library,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchMode::Predicted => f.write_str("predicted"),
            SearchMode::Random => f.write_str("random"),
            SearchMode::Fixed(l) => write!(f, "fixed:{l}"),
            SearchMode::Library => f.write_str("library"),
        }
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(SearchMode::Predicted),
            "random" => Ok(SearchMode::Random),
            "library" => Ok(SearchMode::Library),
            _ => {
                let label = s
                    .strip_prefix("fixed:")
                    .and_then(|l| l.parse::<usize>().ok())
                    .filter(|&l| l < N_COARSE)
                    .ok_or_else(|| {
                        Error::invalid(format!("unknown mode `{s}` (predicted, random, fixed:<0-9>, library)"))
                    })?;
                Ok(SearchMode::Fixed(label))
            }
        }
    }
}

impl Serialize for SearchMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SearchMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub top_k: usize,
    pub mode: SearchMode,
    pub truncation: Option<f64>,
    /// Training-correlation threshold for effective voxels.
    pub effective_threshold: f64,
    /// Library mode only: keep entries under the decoded coarse label.
    pub library_filter: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 25,
            top_k: 10,
            mode: SearchMode::Predicted,
            truncation: None,
            effective_threshold: 0.27,
            library_filter: false,
            seed: 17,
        }
    }
}

impl SearchConfig {
    pub fn budget(&self) -> usize {
        self.batch_size * self.iterations
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.top_k == 0 {
            return Err(Error::invalid("batch size, iterations and top_k must be positive"));
        }
        if self.budget() < self.top_k {
            return Err(Error::invalid(format!(
                "budget {}x{} = {} is smaller than top_k {}",
                self.batch_size,
                self.iterations,
                self.budget(),
                self.top_k
            )));
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::invalid(format!("truncation must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub label: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub target_id: String,
    pub config: SearchConfig,
    pub decoded: Option<Decoded>,
    /// Best first; scores non-decreasing.
    pub candidates: Vec<Candidate>,
    /// Best score so far after each iteration.
    pub best_trace: Vec<f64>,
    pub evaluated: usize,
}

/// Models and assets shared by every target.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub generator: &'a SyntheticGenerator,
    pub mask: &'a MaskConfig,
    pub encoder: &'a EncoderModel,
    pub scorer: &'a Scorer,
    pub category_map: &'a CategoryMap,
    pub decoder: Option<&'a DecoderModel>,
    pub library: Option<&'a FiniteLibrary>,
}

/// Random stream of one target's candidates.
pub fn candidate_stream(seed: u64, target_id: &str) -> RngStream {
    RngStream::new(seed).child("search").child(target_id)
}

/// Runs the search for one target over `workers` threads; the result does
/// not depend on `workers`.
pub fn reconstruct(
    ctx: &SearchContext<'_>,
    target_id: &str,
    target: &VoxelRecord,
    config: &SearchConfig,
    workers: usize,
) -> Result<ReconstructionResult> {
    config.validate()?;
    let decoded = match (config.mode, ctx.decoder) {
        (SearchMode::Predicted, None) => return Err(Error::invalid("predicted mode needs a decoder")),
        (SearchMode::Library, None) if config.library_filter => {
            return Err(Error::invalid("filtered library mode needs a decoder"))
        }
        (_, Some(d)) => {
            let (label, probs) = decode_category(d, target)?;
            Some(Decoded { label, probs })
        }
        (_, None) => None,
    };
    let root = candidate_stream(config.seed, target_id);
    let prior = |label: usize| FinePrior::coarse(label, ctx.category_map);
    let generator_source = |p: FinePrior| GeneratorSource::new(ctx.generator, *ctx.mask, p, config.truncation, root.clone());
    let source: Box<dyn CandidateSource + '_> = match config.mode {
        SearchMode::Predicted => Box::new(generator_source(prior(decoded.as_ref().map_or(0, |d| d.label))?)?),
        SearchMode::Random => Box::new(generator_source(FinePrior::Uniform)?),
        SearchMode::Fixed(label) => Box::new(generator_source(prior(label)?)?),
        SearchMode::Library => {
            let lib = ctx.library.ok_or_else(|| Error::invalid("library mode needs a library"))?;
            let filter = match (&decoded, config.library_filter) {
                (Some(d), true) => Some((d.label, ctx.category_map)),
                _ => None,
            };
            Box::new(LibrarySource::new(lib.stream(filter)?, config.batch_size))
        }
    };
    let measured: Vec<f64> = target.encoded_concat();
    let mut result = reconstruct_with_source(source.as_ref(), ctx.encoder, ctx.scorer, target_id, &measured, config, workers)?;
    result.decoded = decoded;
    Ok(result)
}

/// Search loop over an explicit source against concatenated V1-V3 targets.
pub fn reconstruct_with_source(
    source: &dyn CandidateSource,
    encoder: &EncoderModel,
    scorer: &Scorer,
    target_id: &str,
    target: &[f64],
    config: &SearchConfig,
    workers: usize,
) -> Result<ReconstructionResult> {
    config.validate()?;
    if target.len() != scorer.n_voxels() {
        return Err(Error::shape(
            "reconstruct",
            format!("target has {} V1-V3 voxels, scorer expects {}", target.len(), scorer.n_voxels()),
        ));
    }
    let ranges = shard_ranges(config.budget(), workers);
    let shards: Vec<Result<ShardResult>> = if ranges.len() == 1 {
        vec![run_shard(source, encoder, scorer, target, config.batch_size, ranges[0].clone(), config.top_k)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .cloned()
                .map(|r| scope.spawn(move || run_shard(source, encoder, scorer, target, config.batch_size, r, config.top_k)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
        })
    };
    let shards = shards.into_iter().collect::<Result<Vec<_>>>()?;
    let (candidates, best_trace) = rank_merge(shards, config.top_k)?;
    Ok(ReconstructionResult {
        target_id: target_id.to_string(),
        config: config.clone(),
        decoded: None,
        candidates,
        best_trace,
        evaluated: config.budget(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_world, WorldConfig};
    use crate::generator::GeneratorConfig;

    #[test]
    fn mode_strings() {
        for m in [SearchMode::Predicted, SearchMode::Random, SearchMode::Fixed(7), SearchMode::Library] {
            assert_eq!(m.to_string().parse::<SearchMode>().unwrap(), m);
        }
        assert!("fixed:10".parse::<SearchMode>().is_err());
        assert!("best".parse::<SearchMode>().is_err());
        let cfg: SearchConfig = serde_json::from_str(r#"{"mode": "fixed:3"}"#).unwrap();
        assert_eq!(cfg.mode, SearchMode::Fixed(3));
    }

    #[test]
    fn budget_must_cover_k() {
        let cfg = SearchConfig {
            batch_size: 3,
            iterations: 3,
            top_k: 10,
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
        let paper = SearchConfig {
            batch_size: 256,
            iterations: 400,
            ..SearchConfig::default()
        };
        assert_eq!(paper.budget(), 102_400);
    }

    fn small_world() -> (crate::data::Dataset, crate::data::WorldTruth, WorldConfig) {
        let cfg = WorldConfig {
            n_train: 10,
            n_test: 3,
            voxels_per_roi: 12,
            noise_std: 0.0,
            resolution: 16,
            reference_size: 32,
            ..WorldConfig::default()
        };
        let (ds, truth) = make_world(21, &cfg).unwrap();
        (ds, truth, cfg)
    }

    #[test]
    fn planted_truth_is_found_with_zero_score() {
        let (ds, truth, cfg) = small_world();
        let gen = SyntheticGenerator::new(cfg.generator_config()).unwrap();
        let scorer = Scorer::new(Calibration::identity(36), EffectiveMask::all(36).unwrap()).unwrap();
        let search = SearchConfig {
            batch_size: 8,
            iterations: 4,
            top_k: 3,
            mode: SearchMode::Random,
            ..SearchConfig::default()
        };
        for (s, t) in ds.test.iter().zip(&truth.test) {
            let inner = GeneratorSource::new(&gen, cfg.mask, FinePrior::Uniform, None, candidate_stream(1, &s.id)).unwrap();
            let planted = PlantedSource {
                inner,
                iteration: 2,
                slot: 5,
                proposal: Proposal {
                    fine_category: t.fine_category,
                    latent: Some(t.latent.clone()),
                    library_id: None,
                    image: gen.generate_preprocessed(t.fine_category, &t.latent, &cfg.mask).unwrap(),
                },
            };
            let r = reconstruct_with_source(&planted, &truth.encoder, &scorer, &s.id, &s.voxels.encoded_concat(), &search, 1).unwrap();
            assert_eq!(r.candidates[0].score, 0.0);
            assert_eq!(r.candidates[0].proposal.image, s.image);
            assert_eq!((r.candidates[0].iteration, r.candidates[0].slot), (2, 5));
            assert!(r.candidates.windows(2).all(|w| w[0].score <= w[1].score));
            assert!(r.best_trace.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(r.best_trace.len(), 4);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (ds, truth, cfg) = small_world();
        let gen = SyntheticGenerator::new(GeneratorConfig {
            resolution: 16,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let scorer = Scorer::new(Calibration::identity(36), EffectiveMask::all(36).unwrap()).unwrap();
        let map = CategoryMap::standard();
        let ctx = SearchContext {
            generator: &gen,
            mask: &cfg.mask,
            encoder: &truth.encoder,
            scorer: &scorer,
            category_map: &map,
            decoder: None,
            library: None,
        };
        let search = SearchConfig {
            batch_size: 7,
            iterations: 5,
            top_k: 4,
            mode: SearchMode::Fixed(4),
            ..SearchConfig::default()
        };
        let one = reconstruct(&ctx, "tst0000", &ds.test[0].voxels, &search, 1).unwrap();
        for w in [2, 4, 35, 100] {
            assert_eq!(reconstruct(&ctx, "tst0000", &ds.test[0].voxels, &search, w).unwrap(), one);
        }
        let fine = map.fine_set(4).unwrap();
        assert!(one.candidates.iter().all(|c| fine.contains(&c.proposal.fine_category)));
        let predicted = SearchConfig {
            mode: SearchMode::Predicted,
            ..search
        };
        assert!(reconstruct(&ctx, "tst0000", &ds.test[0].voxels, &predicted, 1).is_err());
    }
}
