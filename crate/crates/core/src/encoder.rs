//! ROI-wise convolutional encoding model for V1, V2 and V3.
//!
//! Each ROI gets its own network: a stack of stride-2 convolutions with ReLU
//! (stimulus-to-feature) followed by one linear map to the ROI's voxels
//! (feature-to-voxel). Networks are trained end to end with a weighted
//! negative Pearson-correlation loss computed across the batch, with Gaussian
//! pixel noise on the inputs. After every epoch the per-voxel weights are
//! reset proportional to the rectified training correlation plus a floor,
//! which shifts effort toward voxels the model can actually explain.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{GrayImage, Roi, Sample};
use crate::error::{Error, Result};
use crate::fsio;
use crate::numerics::{
    dense_backward, dense_forward, conditioned_grad_check, optimizer_step, pearson, pearson_with_grad, ConvGeometry,
    GradCheckReport, NamedArray, OptimizerConfig, Padding, ParamSet, Pearson, RngStream, Tensor,
};

/// Pixels are centred before the first convolution.
const INPUT_OFFSET: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Kernel size for V1, V2, V3.
    pub kernel_sizes: [usize; 3],
    pub channels: usize,
    pub conv_stages: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Std of the Gaussian pixel noise added to every training input.
    pub input_noise_std: f64,
    /// Floor added to rectified correlations when re-weighting voxels.
    pub weight_floor: f64,
    /// When false the voxel weights stay uniform.
    pub adaptive_weights: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: [3, 3, 5],
            channels: 8,
            conv_stages: 2,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(1e-3),
            input_noise_std: 0.02,
            weight_floor: 1e-3,
            adaptive_weights: true,
            seed: 11,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0 || k == 0) {
            return Err(Error::invalid(format!("encoder kernel sizes must be odd, got {k}")));
        }
        if self.channels == 0 || self.conv_stages == 0 {
            return Err(Error::invalid("encoder needs at least one conv stage and channel"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("correlation loss needs batch size >= 2"));
        }
        if !(self.input_noise_std >= 0.0) || !(self.weight_floor > 0.0) {
            return Err(Error::invalid("noise std must be >= 0 and weight floor > 0"));
        }
        Ok(())
    }
}

/// Shape of one ROI network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiArch {
    pub resolution: usize,
    pub kernel: usize,
    pub channels: usize,
    pub stages: usize,
    pub n_voxels: usize,
}

impl RoiArch {
    fn geometries(&self) -> Result<Vec<ConvGeometry>> {
        let mut size = self.resolution;
        let mut cin = 1;
        let mut out = Vec::with_capacity(self.stages);
        for _ in 0..self.stages {
            let g = ConvGeometry::new(
                (size, size, cin),
                (self.kernel, self.kernel, self.channels),
                Padding::Same,
                2,
            )?;
            size = g.out_h;
            cin = self.channels;
            out.push(g);
        }
        Ok(out)
    }

    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.geometries()?.last().map_or(0, |g| g.output_len()))
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct RoiForward {
    input: Vec<f64>,
    /// Post-ReLU output of each conv stage.
    pub stages: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// One ROI's conv stack plus linear readout. Parameters: `conv<k>.w`,
/// `conv<k>.b`, `f2v.w` (`n_voxels x features`), `f2v.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiNet {
    arch: RoiArch,
    geoms: Vec<ConvGeometry>,
    params: ParamSet,
}

impl RoiNet {
    pub fn from_params(arch: RoiArch, params: ParamSet) -> Result<Self> {
        let geoms = arch.geometries()?;
        let feat = arch.feature_len()?;
        let mut expected = Vec::new();
        for (k, g) in geoms.iter().enumerate() {
            expected.push((format!("conv{k}.w"), vec![g.kh, g.kw, g.cin, g.cout]));
            expected.push((format!("conv{k}.b"), vec![g.cout]));
        }
        expected.push(("f2v.w".into(), vec![arch.n_voxels, feat]));
        expected.push(("f2v.b".into(), vec![arch.n_voxels]));
        if params.len() != expected.len() {
            return Err(Error::shape("encoder params", format!("{} entries, expected {}", params.len(), expected.len())));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(p) if p.value.shape() == shape.as_slice() => {}
                _ => {
                    return Err(Error::shape("encoder params", format!("`{name}` missing or not {shape:?}")));
                }
            }
        }
        Ok(Self { arch, geoms, params })
    }

    pub fn from_records(arch: RoiArch, records: Vec<NamedArray>) -> Result<Self> {
        Self::from_params(arch, ParamSet::from_records(records)?)
    }

    /// He-initialised convolutions; readout weights with std `readout_scale / sqrt(features)`.
    pub fn random(arch: RoiArch, readout_scale: f64, rng: &mut RngStream) -> Result<Self> {
        let geoms = arch.geometries()?;
        let feat = arch.feature_len()?;
        let mut params = ParamSet::new();
        for (k, g) in geoms.iter().enumerate() {
            let std = (2.0 / (g.kh * g.kw * g.cin) as f64).sqrt();
            params.insert(
                format!("conv{k}.w"),
                Tensor::from_fn(&[g.kh, g.kw, g.cin, g.cout], |_| std * normal(rng)),
            )?;
            params.insert(format!("conv{k}.b"), Tensor::zeros(&[g.cout]))?;
        }
        let std = readout_scale / (feat as f64).sqrt();
        params.insert("f2v.w", Tensor::from_fn(&[arch.n_voxels, feat], |_| std * normal(rng)))?;
        params.insert("f2v.b", Tensor::zeros(&[arch.n_voxels]))?;
        Ok(Self { arch, geoms, params })
    }

    pub fn arch(&self) -> &RoiArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `pixels` is a row-major `resolution x resolution` image (noise allowed).
    pub fn forward(&self, pixels: &[f64]) -> RoiForward {
        let input: Vec<f64> = pixels.iter().map(|p| p - INPUT_OFFSET).collect();
        let mut stages = Vec::with_capacity(self.geoms.len());
        for (k, g) in self.geoms.iter().enumerate() {
            let x = stages.last().unwrap_or(&input);
            let mut out = vec![0.0; g.output_len()];
            g.forward(
                x,
                self.params.value(&format!("conv{k}.w")),
                Some(self.params.value(&format!("conv{k}.b"))),
                &mut out,
            );
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            stages.push(out);
        }
        let feat = stages.last().expect("at least one stage");
        let mut output = vec![0.0; self.arch.n_voxels];
        dense_forward(self.params.value("f2v.w"), self.params.value("f2v.b"), feat, &mut output);
        RoiForward {
            input,
            stages,
            output,
        }
    }

    /// Accumulates parameter gradients for `dout` (gradient w.r.t. `output`).
    pub fn backward(&mut self, fwd: &RoiForward, dout: &[f64]) {
        let n_stages = self.geoms.len();
        let feat = &fwd.stages[n_stages - 1];
        let mut dfeat = vec![0.0; feat.len()];
        {
            let mut db = vec![0.0; dout.len()];
            let p = self.params.param_mut("f2v.w");
            dense_backward(p.value.data(), feat, dout, p.grad.data_mut(), &mut db, Some(&mut dfeat));
            let gb = self.params.grad_mut("f2v.b");
            gb.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
        }
        let mut dcur = dfeat;
        for k in (0..n_stages).rev() {
            let g = self.geoms[k];
            // ReLU
            for (d, &a) in dcur.iter_mut().zip(&fwd.stages[k]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let db = self.params.grad_mut(&format!("conv{k}.b"));
            for px in dcur.chunks_exact(g.cout) {
                for (b, d) in db.iter_mut().zip(px) {
                    *b += d;
                }
            }
            let x = if k == 0 { &fwd.input } else { &fwd.stages[k - 1] };
            let p = self.params.param_mut(&format!("conv{k}.w"));
            if k == 0 {
                g.backward(x, p.value.data(), &dcur, p.grad.data_mut(), None);
            } else {
                let mut dx = vec![0.0; g.input_len()];
                g.backward(x, p.value.data(), &dcur, p.grad.data_mut(), Some(&mut dx));
                dcur = dx;
            }
        }
    }

    pub fn predict(&self, pixels: &[f64]) -> Vec<f64> {
        self.forward(pixels).output
    }
}

fn normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// `-sum_i w_i * PC(pred[:, i], target[:, i])` over a batch, plus its
/// gradient w.r.t. `pred`. Rows are samples. Degenerate voxels add nothing.
pub fn batch_pc_loss(pred: &[Vec<f64>], target: &[Vec<f64>], weights: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = pred.len();
    if b < 2 {
        return Err(Error::invalid(format!("correlation loss needs batch >= 2, got {b}")));
    }
    if target.len() != b {
        return Err(Error::shape("batch_pc_loss", format!("{b} predictions vs {} targets", target.len())));
    }
    let n = weights.len();
    if pred.iter().chain(target).any(|row| row.len() != n) {
        return Err(Error::shape("batch_pc_loss", format!("rows must have {n} voxels")));
    }
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; n]; b];
    let mut pcol = vec![0.0; b];
    let mut tcol = vec![0.0; b];
    for i in 0..n {
        for s in 0..b {
            pcol[s] = pred[s][i];
            tcol[s] = target[s][i];
        }
        let (pc, g) = pearson_with_grad(&pcol, &tcol)?;
        if pc.degenerate {
            continue;
        }
        loss -= weights[i] * pc.r;
        for s in 0..b {
            grad[s][i] = -weights[i] * g[s];
        }
    }
    Ok((loss, grad))
}

/// Trained network of one ROI plus its training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiModel {
    pub roi: Roi,
    pub net: RoiNet,
    /// Per-voxel correlation on the training set after the last epoch.
    pub train_corr: Vec<f64>,
    /// Loss weights; non-negative, sum to one.
    pub loss_weights: Vec<f64>,
}

/// Encoding model for V1, V2, V3 (in that order).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub rois: Vec<RoiModel>,
}

/// Per-ROI predictions in V1, V2, V3 order.
pub type Encoded = [Vec<f64>; 3];

impl EncoderModel {
    pub fn resolution(&self) -> usize {
        self.rois[0].net.arch.resolution
    }

    pub fn roi_sizes(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.rois[k].net.arch.n_voxels)
    }

    pub fn encode(&self, image: &GrayImage) -> Result<Encoded> {
        self.check_image(image)?;
        Ok([0, 1, 2].map(|k| self.rois[k].net.predict(image.pixels())))
    }

    /// Concatenated V1-V3 prediction.
    pub fn encode_concat(&self, image: &GrayImage) -> Result<Vec<f64>> {
        Ok(self.encode(image)?.concat())
    }

    /// Post-ReLU feature maps of every conv stage, ROI by ROI in forward order.
    pub fn feature_maps(&self, image: &GrayImage) -> Result<Vec<Vec<f64>>> {
        self.check_image(image)?;
        Ok(self
            .rois
            .iter()
            .flat_map(|r| r.net.forward(image.pixels()).stages)
            .collect())
    }

    fn check_image(&self, image: &GrayImage) -> Result<()> {
        let r = self.resolution();
        if image.height() != r || image.width() != r {
            return Err(Error::shape(
                "encode",
                format!("image is {}x{}, encoder expects {r}x{r}", image.height(), image.width()),
            ));
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for r in &self.rois {
            h.update(r.roi.name().as_bytes());
            h.update(r.net.params.content_hash().as_bytes());
            for v in r.train_corr.iter().chain(&r.loss_weights) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn to_file(&self) -> EncoderFile {
        EncoderFile {
            kind: "encoder".into(),
            config: self.config.clone(),
            rois: self
                .rois
                .iter()
                .map(|r| RoiFile {
                    roi: r.roi,
                    arch: r.net.arch,
                    params: r.net.params.to_records(),
                    train_corr: r.train_corr.clone(),
                    loss_weights: r.loss_weights.clone(),
                })
                .collect(),
            content_hash: self.content_hash(),
        }
    }

    pub(crate) fn from_file(file: EncoderFile, path: &Path) -> Result<Self> {
        let bad = |field: &str, detail: String| Error::format(path, field, detail);
        if file.kind != "encoder" {
            return Err(bad("kind", format!("expected `encoder`, found `{}`", file.kind)));
        }
        if file.rois.iter().map(|r| r.roi).ne(Roi::ENCODED) {
            return Err(bad("rois", "expected V1, V2, V3".into()));
        }
        let rois = file
            .rois
            .into_iter()
            .map(|r| {
                let net = RoiNet::from_records(r.arch, r.params).map_err(|e| bad("params", e.to_string()))?;
                if r.train_corr.len() != r.arch.n_voxels || r.loss_weights.len() != r.arch.n_voxels {
                    return Err(bad("train_corr", "length differs from voxel count".into()));
                }
                Ok(RoiModel {
                    roi: r.roi,
                    net,
                    train_corr: r.train_corr,
                    loss_weights: r.loss_weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            config: file.config,
            rois,
        };
        if model.content_hash() != file.content_hash {
            return Err(bad("content_hash", "does not match parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(fsio::read_json(path)?, path)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RoiFile {
    roi: Roi,
    arch: RoiArch,
    params: Vec<NamedArray>,
    train_corr: Vec<f64>,
    loss_weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct EncoderFile {
    kind: String,
    config: EncoderConfig,
    rois: Vec<RoiFile>,
    content_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderHistory {
    /// Mean training correlation over all V1-V3 voxels after each epoch.
    pub train_mean_pc: Vec<f64>,
    /// Same on the validation samples, when given.
    pub validation_mean_pc: Vec<f64>,
}

fn weights_from_corr(corr: &[f64], floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = corr.iter().map(|r| r.max(0.0) + floor).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Pearson across samples for every voxel of one ROI network.
fn roi_corr(net: &RoiNet, images: &[&GrayImage], targets: &[&[f64]]) -> Result<Vec<Pearson>> {
    let preds: Vec<Vec<f64>> = images.iter().map(|im| net.predict(im.pixels())).collect();
    columnwise_pearson(&preds, targets)
}

fn columnwise_pearson(preds: &[Vec<f64>], targets: &[&[f64]]) -> Result<Vec<Pearson>> {
    let n = preds.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let p: Vec<f64> = preds.iter().map(|r| r[i]).collect();
            let t: Vec<f64> = targets.iter().map(|r| r[i]).collect();
            pearson(&p, &t)
        })
        .collect()
}

/// A trained ROI network with its per-epoch train and validation mean PC.
type RoiRun = (RoiModel, Vec<f64>, Vec<f64>);

fn train_roi(
    cfg: &EncoderConfig,
    roi: Roi,
    kernel: usize,
    train: &[Sample],
    validation: Option<&[Sample]>,
    rng: RngStream,
) -> Result<RoiRun> {
    let resolution = train[0].image.height();
    let n_voxels = train[0].voxels.get(roi).len();
    let arch = RoiArch {
        resolution,
        kernel,
        channels: cfg.channels,
        stages: cfg.conv_stages,
        n_voxels,
    };
    let mut net = RoiNet::random(arch, 0.1, &mut rng.child("init"))?;
    let mut weights = vec![1.0 / n_voxels as f64; n_voxels];
    let mut corr = vec![0.0; n_voxels];
    let images: Vec<&GrayImage> = train.iter().map(|s| &s.image).collect();
    let targets: Vec<&[f64]> = train.iter().map(|s| s.voxels.get(roi)).collect();
    let noise = Normal::new(0.0, cfg.input_noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut train_hist = Vec::with_capacity(cfg.epochs);
    let mut val_hist = Vec::new();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut erng = rng.child("epoch").child(epoch);
        order.shuffle(&mut erng);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            net.params.zero_grad();
            let mut fwds = Vec::with_capacity(batch.len());
            for &i in batch {
                let px: Vec<f64> = if cfg.input_noise_std > 0.0 {
                    images[i].pixels().iter().map(|p| p + noise.sample(&mut erng)).collect()
                } else {
                    images[i].pixels().to_vec()
                };
                fwds.push(net.forward(&px));
            }
            let preds: Vec<Vec<f64>> = fwds.iter().map(|f| f.output.clone()).collect();
            let tgts: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].to_vec()).collect();
            let (_, dpred) = batch_pc_loss(&preds, &tgts, &weights)?;
            for (f, d) in fwds.iter().zip(&dpred) {
                net.backward(f, d);
            }
            optimizer_step(&mut net.params, &cfg.optimizer);
        }
        corr = roi_corr(&net, &images, &targets)?.iter().map(|p| p.r).collect();
        if cfg.adaptive_weights {
            weights = weights_from_corr(&corr, cfg.weight_floor);
        }
        train_hist.push(corr.iter().sum::<f64>());
        if let Some(val) = validation {
            let vi: Vec<&GrayImage> = val.iter().map(|s| &s.image).collect();
            let vt: Vec<&[f64]> = val.iter().map(|s| s.voxels.get(roi)).collect();
            val_hist.push(roi_corr(&net, &vi, &vt)?.iter().map(|p| p.r).sum::<f64>());
        }
    }
    if !net.params.all_finite() {
        return Err(Error::NonFinite(format!("{roi} encoder parameters after training")));
    }
    Ok((
        RoiModel {
            roi,
            net,
            train_corr: corr,
            loss_weights: weights,
        },
        train_hist,
        val_hist,
    ))
}

/// Trains the three ROI networks (concurrently, each on its own random
/// sub-stream) on z-scored samples. History entries are means over all
/// V1-V3 voxels.
pub fn train_encoder(
    config: &EncoderConfig,
    train: &[Sample],
    validation: Option<&[Sample]>,
) -> Result<(EncoderModel, EncoderHistory)> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("encoder training needs at least 2 samples"));
    }
    let res = train[0].image.height();
    if train.iter().any(|s| s.image.height() != res || s.image.width() != res) {
        return Err(Error::shape("train_encoder", "all images must share one square resolution"));
    }
    let root = RngStream::new(config.seed).child("encoder");
    let results: Vec<Result<RoiRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = Roi::ENCODED
            .iter()
            .zip(config.kernel_sizes)
            .map(|(&roi, kernel)| {
                let rng = root.child(roi.name());
                scope.spawn(move || train_roi(config, roi, kernel, train, validation, rng))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("encoder training thread panicked"))
            .collect()
    });
    let mut rois = Vec::new();
    let mut train_sum = vec![0.0; config.epochs];
    let mut val_sum = vec![0.0; if validation.is_some() { config.epochs } else { 0 }];
    for r in results {
        let (m, th, vh) = r?;
        train_sum.iter_mut().zip(th).for_each(|(a, b)| *a += b);
        val_sum.iter_mut().zip(vh).for_each(|(a, b)| *a += b);
        rois.push(m);
    }
    let total: usize = rois.iter().map(|r| r.net.arch.n_voxels).sum();
    let history = EncoderHistory {
        train_mean_pc: train_sum.into_iter().map(|s| s / total as f64).collect(),
        validation_mean_pc: val_sum.into_iter().map(|s| s / total as f64).collect(),
    };
    Ok((
        EncoderModel {
            config: config.clone(),
            rois,
        },
        history,
    ))
}

/// Per-voxel Pearson correlation between predictions and measured responses
/// across `samples`, concatenated V1, V2, V3.
pub fn voxelwise_corr(model: &EncoderModel, samples: &[Sample]) -> Result<Vec<Pearson>> {
    let mut out = Vec::new();
    for (k, roi) in Roi::ENCODED.iter().enumerate() {
        let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
        let targets: Vec<&[f64]> = samples.iter().map(|s| s.voxels.get(*roi)).collect();
        out.extend(roi_corr(&model.rois[k].net, &images, &targets)?);
    }
    Ok(out)
}

/// Mean of [`voxelwise_corr`] over all V1-V3 voxels.
pub fn mean_corr(model: &EncoderModel, samples: &[Sample]) -> Result<f64> {
    let c = voxelwise_corr(model, samples)?;
    Ok(c.iter().map(|p| p.r).sum::<f64>() / c.len() as f64)
}

/// Smallest `|pre-activation|` over every ReLU for `pixels`.
fn kink_margin(net: &RoiNet, pixels: &[f64]) -> f64 {
    let mut x: Vec<f64> = pixels.iter().map(|p| p - INPUT_OFFSET).collect();
    let mut margin = f64::INFINITY;
    for (k, g) in net.geoms.iter().enumerate() {
        let mut out = vec![0.0; g.output_len()];
        g.forward(
            &x,
            net.params.value(&format!("conv{k}.w")),
            Some(net.params.value(&format!("conv{k}.b"))),
            &mut out,
        );
        margin = out.iter().fold(margin, |m, v| m.min(v.abs()));
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        x = out;
    }
    margin
}

/// Keeps perturbed pre-activations on one side of the ReLU kink.
const KINK_MARGIN: f64 = 1e-4;

type CheckSetup = (RoiNet, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Candidate `attempt` for the checks, or `None` when some ReLU input sits
/// within [`KINK_MARGIN`] of zero.
fn check_setup(seed: u64, kernel: usize, attempt: usize) -> Result<Option<CheckSetup>> {
    use rand::Rng;
    let mut rng = RngStream::new(seed).child("gradcheck").child(attempt);
    let arch = RoiArch {
        resolution: 16,
        kernel,
        channels: 3,
        stages: 2,
        n_voxels: 4,
    };
    let mut net = RoiNet::random(arch, 1.0, &mut rng)?;
    for name in ["conv0.b", "conv1.b", "f2v.b"] {
        for v in net.params.value_mut(name) {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let images: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..256).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let targets = (0..4)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    if images.iter().any(|im| kink_margin(&net, im) < KINK_MARGIN) {
        return Ok(None);
    }
    Ok(Some((net, images, targets)))
}

/// Central-difference check of the network's backward pass for the loss
/// `sum(c * out) + 0.5 * sum(out^2)` over a few random images.
pub fn encode_gradient_check(seed: u64, kernel: usize) -> Result<GradCheckReport> {
    let draw = |attempt| {
        Ok(check_setup(seed, kernel, attempt)?.map(|(net, images, coeffs)| {
            let params = net.params.clone();
            (params, (net.arch, images, coeffs))
        }))
    };
    conditioned_grad_check(1e-5, draw, |(arch, images, coeffs), p: &mut ParamSet| {
        let mut n = RoiNet::from_params(*arch, p.clone())?;
        n.params.zero_grad();
        let mut loss = 0.0;
        for (im, c) in images.iter().zip(coeffs) {
            let f = n.forward(im);
            let d: Vec<f64> = f.output.iter().zip(c).map(|(o, c)| c + o).collect();
            loss += f.output.iter().zip(c).map(|(o, c)| c * o + 0.5 * o * o).sum::<f64>();
            n.backward(&f, &d);
        }
        copy_grads(&n.params, p);
        Ok(loss)
    })
}

/// Central-difference check of network plus weighted correlation loss. The
/// loss is exactly invariant to the readout bias, whose true gradient is
/// zero; that entry is held fixed and covered by [`encode_gradient_check`].
pub fn pc_loss_gradient_check(seed: u64, kernel: usize) -> Result<GradCheckReport> {
    let draw = |attempt| -> Result<_> {
        let Some((net, images, targets)) = check_setup(seed, kernel, attempt)? else {
            return Ok(None);
        };
        let bias = net.params.param("f2v.b").value.clone();
        let mut free = ParamSet::new();
        for (name, p) in net.params.iter().filter(|(n, _)| *n != "f2v.b") {
            free.insert(name, p.value.clone())?;
        }
        Ok(Some((free, (net.arch, bias, images, targets))))
    };
    let weights = [0.1, 0.2, 0.3, 0.4];
    conditioned_grad_check(1e-5, draw, |(arch, bias, images, targets), p: &mut ParamSet| {
        let mut full = p.clone();
        full.insert("f2v.b", bias.clone())?;
        let mut n = RoiNet::from_params(*arch, full)?;
        n.params.zero_grad();
        let fwds: Vec<RoiForward> = images.iter().map(|im| n.forward(im)).collect();
        let preds: Vec<Vec<f64>> = fwds.iter().map(|f| f.output.clone()).collect();
        let (loss, d) = batch_pc_loss(&preds, targets, &weights)?;
        for (f, g) in fwds.iter().zip(&d) {
            n.backward(f, g);
        }
        copy_grads(&n.params, p);
        Ok(loss)
    })
}

fn copy_grads(from: &ParamSet, to: &mut ParamSet) {
    for (name, q) in to.iter_mut() {
        q.grad.data_mut().iter_mut().zip(from.grad(name)).for_each(|(a, b)| *a += b);
    }
}
