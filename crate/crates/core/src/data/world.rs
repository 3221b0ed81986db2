//! Synthetic stand-in for recorded fMRI.
//!
//! Stimuli come from the synthetic generator. V1-V3 responses are produced by
//! a hidden encoder with the same architecture as the learned one, but with
//! population-receptive-field readouts (a Gaussian spatial footprint times a
//! per-voxel channel profile). V4 and LO add a category-dependent component
//! to an image-driven one. Every voxel is scaled to unit signal variance on a
//! reference set of generator images, so `1 / noise_std^2` is the per-voxel
//! SNR.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::category::{CategoryMap, N_COARSE};
use super::dataset::{Dataset, DatasetMeta, Sample};
use super::image::{GrayImage, MaskConfig};
use super::voxels::{Roi, VoxelRecord};
use crate::encoder::{EncoderConfig, EncoderFile, EncoderModel, RoiArch, RoiModel, RoiNet};
use crate::error::{Error, Result};
use crate::fsio;
use crate::generator::{sample_latent, GeneratorConfig, Latent, SyntheticGenerator};
use crate::numerics::{NamedArray, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub voxels_per_roi: usize,
    pub noise_std: f64,
    pub resolution: usize,
    pub generator_seed: u64,
    pub truncation: Option<f64>,
    pub mask: MaskConfig,
    /// Share of V4/LO signal variance carried by the category component.
    pub category_mix: f64,
    /// Generator images used to fix each voxel's signal scale.
    pub reference_size: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_test: 20,
            voxels_per_roi: 120,
            noise_std: 1.0,
            resolution: 64,
            generator_seed: GeneratorConfig::default().seed,
            truncation: None,
            mask: MaskConfig::default(),
            category_mix: 0.2,
            reference_size: 512,
        }
    }
}

impl WorldConfig {
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            resolution: self.resolution,
            truncation: self.truncation,
            seed: self.generator_seed,
            ..GeneratorConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.voxels_per_roi == 0 || self.reference_size < 2 {
            return Err(Error::invalid("world needs >= 2 training samples, >= 1 voxel and a reference set"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.category_mix) {
            return Err(Error::invalid("category_mix must lie in [0, 1]"));
        }
        self.generator_config().validate()
    }
}

/// Hidden response model of V4 or LO.
#[derive(Clone, Debug, PartialEq)]
pub struct HighLevelTruth {
    pub roi: Roi,
    /// Image-driven part, already scaled to unit variance per voxel.
    pub net: RoiNet,
    /// `N_COARSE` rows; each voxel column has zero mean and unit variance.
    pub class_means: Vec<Vec<f64>>,
    pub category_mix: f64,
}

impl HighLevelTruth {
    pub fn response(&self, image: &GrayImage, label: usize) -> Vec<f64> {
        let (a, b) = ((1.0 - self.category_mix).sqrt(), self.category_mix.sqrt());
        self.net
            .predict(image.pixels())
            .iter()
            .zip(&self.class_means[label])
            .map(|(x, c)| a * x + b * c)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub coarse_label: usize,
    pub fine_category: usize,
    pub latent: Latent,
}

/// Everything hidden from training and reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldTruth {
    pub seed: u64,
    pub noise_std: f64,
    /// Noiseless V1-V3 response model.
    pub encoder: EncoderModel,
    /// V4 then LO.
    pub high_level: Vec<HighLevelTruth>,
    /// Generating (category, latent) of every test sample.
    pub test: Vec<SampleTruth>,
}

impl WorldTruth {
    /// Noiseless responses of all five ROIs.
    pub fn signal(&self, image: &GrayImage, label: usize) -> Result<VoxelRecord> {
        let [v1, v2, v3] = self.encoder.encode(image)?;
        let v4 = self.high_level[0].response(image, label);
        let lo = self.high_level[1].response(image, label);
        Ok(VoxelRecord::new([v1, v2, v3, v4, lo]))
    }

    pub fn find_test(&self, id: &str) -> Option<&SampleTruth> {
        self.test.iter().find(|t| t.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TruthFile {
            seed: self.seed,
            noise_std: self.noise_std,
            encoder: self.encoder.to_file(),
            high_level: self
                .high_level
                .iter()
                .map(|h| HighLevelFile {
                    roi: h.roi,
                    arch: *h.net.arch(),
                    params: h.net.params().to_records(),
                    class_means: h.class_means.clone(),
                    category_mix: h.category_mix,
                })
                .collect(),
            test: self.test.clone(),
        };
        fsio::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TruthFile = fsio::read_json(path)?;
        let encoder = EncoderModel::from_file(file.encoder, path)?;
        let high_level = file
            .high_level
            .into_iter()
            .map(|h| {
                let net = RoiNet::from_records(h.arch, h.params).map_err(|e| Error::format(path, "high_level", e.to_string()))?;
                if h.class_means.len() != N_COARSE || h.class_means.iter().any(|r| r.len() != h.arch.n_voxels) {
                    return Err(Error::format(path, "class_means", "expected 10 rows of ROI length"));
                }
                Ok(HighLevelTruth {
                    roi: h.roi,
                    net,
                    class_means: h.class_means,
                    category_mix: h.category_mix,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if high_level.iter().map(|h| h.roi).ne([Roi::V4, Roi::LO]) {
            return Err(Error::format(path, "high_level", "expected V4 and LO"));
        }
        Ok(Self {
            seed: file.seed,
            noise_std: file.noise_std,
            encoder,
            high_level,
            test: file.test,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HighLevelFile {
    roi: Roi,
    arch: RoiArch,
    params: Vec<NamedArray>,
    class_means: Vec<Vec<f64>>,
    category_mix: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    seed: u64,
    noise_std: f64,
    encoder: EncoderFile,
    high_level: Vec<HighLevelFile>,
    test: Vec<SampleTruth>,
}

/// Receptive-field scale (fraction of the feature map) per ROI.
fn rf_scale(roi: Roi) -> f64 {
    match roi {
        Roi::V1 => 0.08,
        Roi::V2 => 0.11,
        Roi::V3 => 0.15,
        Roi::V4 => 0.2,
        Roi::LO => 0.28,
    }
}

fn hidden_kernel(roi: Roi) -> usize {
    match roi {
        Roi::V1 | Roi::V2 => 3,
        _ => 5,
    }
}

/// Hidden network with Gaussian-footprint readouts.
fn hidden_net(roi: Roi, resolution: usize, n_voxels: usize, rng: &mut RngStream) -> Result<RoiNet> {
    let arch = RoiArch {
        resolution,
        kernel: hidden_kernel(roi),
        channels: 8,
        stages: 2,
        n_voxels,
    };
    let mut net = RoiNet::random(arch, 1.0, rng)?;
    for k in 0..arch.stages {
        for b in net.params_mut().value_mut(&format!("conv{k}.b")) {
            *b = 0.05 * normal(rng);
        }
    }
    let m = resolution >> arch.stages;
    let c = arch.channels;
    let half = m as f64 / 2.0;
    let mut w = vec![0.0; n_voxels * m * m * c];
    for row in w.chunks_exact_mut(m * m * c) {
        let (radius, angle) = (0.4 * half * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>());
        let (cy, cx) = (half + radius * angle.sin(), half + radius * angle.cos());
        let sigma = (rf_scale(roi) * m as f64 * (0.7 + 0.6 * rng.random::<f64>())).max(0.5);
        let profile: Vec<f64> = (0..c).map(|_| normal(rng)).collect();
        for y in 0..m {
            for x in 0..m {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                for ch in 0..c {
                    row[(y * m + x) * c + ch] = g * profile[ch];
                }
            }
        }
    }
    net.params_mut().value_mut("f2v.w").copy_from_slice(&w);
    net.params_mut().value_mut("f2v.b").fill(0.0);
    Ok(net)
}

/// Rescales the readout so every output has zero mean and unit variance over `images`.
fn standardize_readout(net: &mut RoiNet, images: &[GrayImage]) -> Result<()> {
    let n = net.arch().n_voxels;
    let outs: Vec<Vec<f64>> = images.iter().map(|im| net.predict(im.pixels())).collect();
    let count = outs.len() as f64;
    let feat = net.arch().feature_len()?;
    for i in 0..n {
        let mean = outs.iter().map(|o| o[i]).sum::<f64>() / count;
        let var = outs.iter().map(|o| (o[i] - mean).powi(2)).sum::<f64>() / count;
        if !(var > 1e-20) {
            return Err(Error::invalid(format!("hidden voxel {i} has no signal on the reference set")));
        }
        let sd = var.sqrt();
        let p = net.params_mut();
        p.value_mut("f2v.w")[i * feat..(i + 1) * feat].iter_mut().for_each(|w| *w /= sd);
        let b = &mut p.value_mut("f2v.b")[i];
        *b = (*b - mean) / sd;
    }
    Ok(())
}

fn class_means(n_voxels: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..N_COARSE).map(|_| (0..n_voxels).map(|_| normal(rng)).collect()).collect();
    for i in 0..n_voxels {
        let mean = m.iter().map(|r| r[i]).sum::<f64>() / N_COARSE as f64;
        let sd = (m.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / N_COARSE as f64).sqrt();
        m.iter_mut().for_each(|r| r[i] = (r[i] - mean) / sd);
    }
    m
}

fn normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

struct Draw {
    coarse: usize,
    fine: usize,
    latent: Latent,
    image: GrayImage,
}

fn draw(gen: &SyntheticGenerator, map: &CategoryMap, cfg: &WorldConfig, mut rng: RngStream) -> Result<Draw> {
    let coarse = rng.random_range(0..N_COARSE);
    let fine = map.map_to_fine(coarse, &mut rng)?;
    let latent = sample_latent(&mut rng, cfg.truncation)?;
    let image = gen.generate_preprocessed(fine, &latent, &cfg.mask)?;
    Ok(Draw {
        coarse,
        fine,
        latent,
        image,
    })
}

/// Builds a dataset and its hidden truth; bit-identical for equal inputs.
pub fn make_world(seed: u64, cfg: &WorldConfig) -> Result<(Dataset, WorldTruth)> {
    cfg.validate()?;
    let gen = SyntheticGenerator::new(cfg.generator_config())?;
    let map = CategoryMap::standard();
    let root = RngStream::new(seed).child("world");

    let reference: Vec<GrayImage> = (0..cfg.reference_size)
        .map(|j| draw(&gen, &map, cfg, root.child("reference").child(j)).map(|d| d.image))
        .collect::<Result<_>>()?;

    let truth_rng = root.child("truth");
    let mut hidden = Vec::new();
    for roi in Roi::ALL {
        let mut net = hidden_net(roi, cfg.resolution, cfg.voxels_per_roi, &mut truth_rng.child(roi.name()))?;
        standardize_readout(&mut net, &reference)?;
        hidden.push(net);
    }
    let high_nets = hidden.split_off(3);
    let encoder = EncoderModel {
        config: EncoderConfig {
            kernel_sizes: [0, 1, 2].map(|k| hidden[k].arch().kernel),
            ..EncoderConfig::default()
        },
        rois: Roi::ENCODED
            .iter()
            .zip(hidden)
            .map(|(&roi, net)| RoiModel {
                roi,
                net,
                train_corr: vec![1.0; cfg.voxels_per_roi],
                loss_weights: vec![1.0 / cfg.voxels_per_roi as f64; cfg.voxels_per_roi],
            })
            .collect(),
    };
    let high_level = [Roi::V4, Roi::LO]
        .iter()
        .zip(high_nets)
        .map(|(&roi, net)| HighLevelTruth {
            roi,
            net,
            class_means: class_means(cfg.voxels_per_roi, &mut truth_rng.child(roi.name()).child("class")),
            category_mix: cfg.category_mix,
        })
        .collect();
    let mut truth = WorldTruth {
        seed,
        noise_std: cfg.noise_std,
        encoder,
        high_level,
        test: Vec::new(),
    };

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut train = Vec::with_capacity(cfg.n_train);
    let mut test = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_train + cfg.n_test {
        let is_test = i >= cfg.n_train;
        let id = if is_test {
            format!("tst{:04}", i - cfg.n_train)
        } else {
            format!("trn{i:04}")
        };
        let d = draw(&gen, &map, cfg, root.child("sample").child(i))?;
        let mut voxels = truth.signal(&d.image, d.coarse)?;
        if cfg.noise_std > 0.0 {
            let mut nrng = root.child("noise").child(i);
            for roi in Roi::ALL {
                voxels.get_mut(roi).iter_mut().for_each(|v| *v += noise.sample(&mut nrng));
            }
        }
        let sample = Sample {
            id: id.clone(),
            image: d.image,
            voxels,
            label: d.coarse,
        };
        if is_test {
            truth.test.push(SampleTruth {
                id,
                coarse_label: d.coarse,
                fine_category: d.fine,
                latent: d.latent,
            });
            test.push(sample);
        } else {
            train.push(sample);
        }
    }
    let meta = DatasetMeta {
        resolution: cfg.resolution,
        roi_sizes: [cfg.voxels_per_roi; 5],
        seed,
        noise_std: cfg.noise_std,
        train_ids: train.iter().map(|s| s.id.clone()).collect(),
        test_ids: test.iter().map(|s| s.id.clone()).collect(),
        generator: Some(cfg.generator_config()),
        mask: cfg.mask,
    };
    Ok((Dataset { meta, train, test }, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise_std: f64) -> WorldConfig {
        WorldConfig {
            n_train: 24,
            n_test: 4,
            voxels_per_roi: 10,
            noise_std,
            resolution: 16,
            reference_size: 64,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn shapes_and_ids() {
        let (ds, truth) = make_world(3, &small(1.0)).unwrap();
        assert_eq!(ds.train.len(), 24);
        assert_eq!(ds.test.len(), 4);
        assert_eq!(ds.train[0].id, "trn0000");
        assert_eq!(ds.test[3].id, "tst0003");
        assert!(ds.samples().all(|s| s.voxels.sizes() == [10; 5] && s.label < 10));
        assert_eq!(truth.test.len(), 4);
        for (s, t) in ds.test.iter().zip(&truth.test) {
            assert_eq!(s.id, t.id);
            assert_eq!(s.label, t.coarse_label);
            assert_eq!(CategoryMap::standard().coarse_of(t.fine_category), Some(t.coarse_label));
        }
    }

    #[test]
    fn noiseless_voxels_equal_hidden_encoding() {
        let (ds, truth) = make_world(4, &small(0.0)).unwrap();
        for s in ds.samples() {
            assert_eq!(s.voxels, truth.signal(&s.image, s.label).unwrap());
            let enc = truth.encoder.encode(&s.image).unwrap();
            assert_eq!(enc[1], s.voxels.get(Roi::V2));
        }
    }

    #[test]
    fn test_truth_regenerates_the_stimulus() {
        let cfg = small(0.5);
        let (ds, truth) = make_world(5, &cfg).unwrap();
        let gen = SyntheticGenerator::new(cfg.generator_config()).unwrap();
        for (s, t) in ds.test.iter().zip(&truth.test) {
            let img = gen.generate_preprocessed(t.fine_category, &t.latent, &cfg.mask).unwrap();
            assert_eq!(img, s.image);
        }
    }

    #[test]
    fn seeds_control_the_world() {
        let a = make_world(8, &small(1.0)).unwrap();
        let b = make_world(8, &small(1.0)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = make_world(9, &small(1.0)).unwrap();
        assert_ne!(a.0.train[0].image, c.0.train[0].image);
    }

    #[test]
    fn truth_file_round_trip() {
        let (_, truth) = make_world(10, &small(0.3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        truth.save(&path).unwrap();
        assert_eq!(WorldTruth::load(&path).unwrap(), truth);
    }

    #[test]
    fn empirical_snr_matches_configuration() {
        let noise_std = 0.7;
        let cfg = WorldConfig {
            n_train: 300,
            n_test: 0,
            voxels_per_roi: 1000,
            noise_std,
            resolution: 16,
            reference_size: 256,
            ..WorldConfig::default()
        };
        let (ds, truth) = make_world(12, &cfg).unwrap();
        let target = 1.0 / (noise_std * noise_std);
        let signals: Vec<VoxelRecord> = ds.train.iter().map(|s| truth.signal(&s.image, s.label).unwrap()).collect();
        for roi in Roi::ALL {
            let mut var_sum = 0.0;
            for i in 0..1000 {
                let col: Vec<f64> = signals.iter().map(|r| r.get(roi)[i]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                var_sum += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            }
            let snr = var_sum / 1000.0 / (noise_std * noise_std);
            assert!((snr / target - 1.0).abs() < 0.1, "{roi}: snr {snr} vs {target}");
            // realised noise has the configured scale
            let mut nvar = 0.0;
            for (s, sig) in ds.train.iter().zip(&signals) {
                nvar += s.voxels.get(roi).iter().zip(sig.get(roi)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            nvar /= (1000 * ds.train.len()) as f64;
            assert!((nvar.sqrt() / noise_std - 1.0).abs() < 0.02);
        }
    }
}
