//! Image metrics against encoder features and chance baselines.

use bvrm_core::data::{GrayImage, MaskConfig, Roi};
use bvrm_core::encoder::{EncoderConfig, EncoderModel, RoiArch, RoiModel, RoiNet};
use bvrm_core::generator::{sample_latent, GeneratorConfig, SyntheticGenerator};
use bvrm_core::metrics::{identification, pcc, perceptual_layer_corrs};
use bvrm_core::numerics::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const RES: usize = 32;

fn encoder(seed: u64) -> EncoderModel {
    let config = EncoderConfig::default();
    let mut rng = RngStream::new(seed);
    let rois = Roi::ENCODED
        .iter()
        .zip(config.kernel_sizes)
        .map(|(&roi, kernel)| {
            let arch = RoiArch {
                resolution: RES,
                kernel,
                channels: config.channels,
                stages: config.conv_stages,
                n_voxels: 10,
            };
            RoiModel {
                roi,
                net: RoiNet::random(arch, 1.0, &mut rng).unwrap(),
                train_corr: vec![0.0; 10],
                loss_weights: vec![0.1; 10],
            }
        })
        .collect();
    EncoderModel { config, rois }
}

fn generator() -> SyntheticGenerator {
    SyntheticGenerator::new(GeneratorConfig {
        resolution: RES,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn draw(gen: &SyntheticGenerator, rng: &mut RngStream) -> GrayImage {
    let category = rng.random_range(0..gen.n_categories());
    let z = sample_latent(rng, None).unwrap();
    gen.generate_preprocessed(category, &z, &MaskConfig::default()).unwrap()
}

#[test]
fn identical_images_correlate_perfectly_at_every_stage() {
    let enc = encoder(1);
    let gen = generator();
    let mut rng = RngStream::new(2);
    for _ in 0..5 {
        let a = draw(&gen, &mut rng);
        let corrs = perceptual_layer_corrs(&a, &a, &enc).unwrap();
        assert_eq!(corrs.len(), 3 * enc.config.conv_stages);
        for c in corrs {
            assert!((c - 1.0).abs() < 1e-9, "{c}");
        }
    }
}

#[test]
fn noisy_copies_do_not_gain_correlation_with_depth() {
    let enc = encoder(3);
    let gen = generator();
    let mut rng = RngStream::new(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let stages = 3 * enc.config.conv_stages;
    let (mut pixel, mut layers) = (0.0, vec![0.0; stages]);
    for _ in 0..50 {
        let a = draw(&gen, &mut rng);
        let noisy: Vec<f64> = a.pixels().iter().map(|p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect();
        let b = GrayImage::new(RES, RES, noisy).unwrap();
        pixel += pcc(&a, &b).unwrap() / 50.0;
        for (l, c) in layers.iter_mut().zip(perceptual_layer_corrs(&a, &b, &enc).unwrap()) {
            *l += c / 50.0;
        }
    }
    for (k, l) in layers.iter().enumerate() {
        assert!(*l <= pixel + 0.2, "stage {k}: {l} vs pixel {pixel}");
    }
}

#[test]
fn unrelated_reconstructions_are_identified_at_chance() {
    let gen = generator();
    let (n, rounds) = (10, 200);
    let mut hits = 0.0;
    for seed in 0..rounds {
        let mut rng = RngStream::new(seed);
        let stimuli: Vec<GrayImage> = (0..n).map(|_| draw(&gen, &mut rng)).collect();
        let recons: Vec<GrayImage> = (0..n).map(|_| draw(&gen, &mut rng)).collect();
        hits += identification(&recons, &stimuli).unwrap() * n as f64;
    }
    let trials = (n * rounds as usize) as f64;
    let p = 1.0 / n as f64;
    let sigma = (p * (1.0 - p) / trials).sqrt();
    let rate = hits / trials;
    assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate}, chance {p}");
}

#[test]
fn perfect_reconstructions_are_always_identified() {
    let gen = generator();
    let mut rng = RngStream::new(5);
    let stimuli: Vec<GrayImage> = (0..8).map(|_| draw(&gen, &mut rng)).collect();
    assert_eq!(identification(&stimuli, &stimuli).unwrap(), 1.0);
}
