//! Encoder training on synthetic worlds.

use bvrm_core::data::{make_world, Roi, WorldConfig};
use bvrm_core::encoder::{train_encoder, voxelwise_corr, EncoderConfig};
use bvrm_core::numerics::RngStream;
use rand_distr::{Distribution, StandardNormal};

fn small_world(noise_std: f64) -> WorldConfig {
    WorldConfig {
        noise_std,
        resolution: 32,
        reference_size: 128,
        ..WorldConfig::default()
    }
}

#[test]
fn noiseless_world_is_learnable_and_training_pc_climbs() {
    let (d, _) = make_world(7, &small_world(0.0)).unwrap();
    let d = d.zscored().unwrap();
    let cfg = EncoderConfig {
        epochs: 50,
        seed: 7,
        ..EncoderConfig::default()
    };
    let (model, history) = train_encoder(&cfg, &d.train, None).unwrap();
    let corr = voxelwise_corr(&model, &d.test).unwrap();
    let mean = corr.iter().map(|p| p.r).sum::<f64>() / corr.len() as f64;
    assert!(mean >= 0.8, "held-out mean PC {mean}");
    for w in history.train_mean_pc.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{:?}", history.train_mean_pc);
    }
}

/// A voxel that is pure noise, independent of the fitted model, stays
/// near zero correlation.
#[test]
fn pure_noise_voxel_has_small_training_correlation() {
    let (d, _) = make_world(8, &small_world(1.0)).unwrap();
    let d = d.zscored().unwrap();
    let cfg = EncoderConfig {
        epochs: 4,
        seed: 7,
        ..EncoderConfig::default()
    };
    let (model, _) = train_encoder(&cfg, &d.train, None).unwrap();
    let column = model.roi_sizes()[0];
    let mut samples = d.train.clone();
    let mut rng = RngStream::new(4);
    let mut small = 0;
    for _ in 0..100 {
        for s in &mut samples {
            s.voxels.get_mut(Roi::V2)[0] = StandardNormal.sample(&mut rng);
        }
        let r = voxelwise_corr(&model, &samples).unwrap()[column].r;
        small += usize::from(r.abs() < 0.2);
    }
    assert!(small >= 99, "{small}/100 below 0.2");
}
