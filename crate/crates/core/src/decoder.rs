//! Coarse-category decoder: ANOVA voxel selection followed by a
//! bidirectional LSTM over the ROI sequence V1, V2, V3, V4, LO.
//!
//! Each ROI contributes one time step (its selected voxels). The forward cell
//! reads V1 to LO, the backward cell LO to V1; their final hidden states are
//! concatenated, passed through dropout (training only) and a dense softmax
//! layer over the ten coarse categories.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Roi, Sample, VoxelRecord, N_COARSE};
use crate::error::{Error, Result};
use crate::fsio;
use crate::numerics::{
    dense_backward, dense_forward, conditioned_grad_check, optimizer_step, softmax, softmax_xent, GradCheckReport,
    LstmCache, LstmCell, NamedArray, OptimizerConfig, ParamSet, RngStream, Tensor,
};

const N_STEPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub voxels_per_node: usize,
    pub hidden_per_direction: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            voxels_per_node: 100,
            hidden_per_direction: 16,
            n_classes: N_COARSE,
            dropout_rate: 0.5,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(5e-3),
            seed: 5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes != N_COARSE {
            return Err(Error::invalid(format!("decoder has {N_COARSE} classes, config says {}", self.n_classes)));
        }
        if self.voxels_per_node == 0 || self.hidden_per_direction == 0 || self.batch_size == 0 {
            return Err(Error::invalid("decoder sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    fn cell(&self) -> LstmCell {
        LstmCell {
            input: self.voxels_per_node,
            hidden: self.hidden_per_direction,
        }
    }
}

/// One-way ANOVA F statistic of `values` grouped by `labels`. A voxel with no
/// within-group spread scores infinity unless it is constant (zero).
pub fn anova_f(values: &[f64], labels: &[usize]) -> f64 {
    let n = values.len();
    let mut sums = [0.0; N_COARSE];
    let mut counts = [0usize; N_COARSE];
    for (&v, &l) in values.iter().zip(labels) {
        sums[l] += v;
        counts[l] += 1;
    }
    let groups = counts.iter().filter(|&&c| c > 0).count();
    let grand = values.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let between: f64 = (0..N_COARSE).map(|k| counts[k] as f64 * (means[k] - grand).powi(2)).sum();
    let within: f64 = values.iter().zip(labels).map(|(v, &l)| (v - means[l]).powi(2)).sum();
    if groups < 2 || between <= 0.0 {
        return 0.0;
    }
    if within <= 0.0 || n <= groups {
        return f64::INFINITY;
    }
    (between / (groups - 1) as f64) / (within / (n - groups) as f64)
}

/// Top-`n` voxels of each ROI by F-score against the training labels (ties
/// to the lower index), returned in increasing index order.
pub fn select_voxels(train: &[Sample], n_per_roi: usize) -> Result<[Vec<usize>; 5]> {
    let Some(first) = train.first() else {
        return Err(Error::invalid("voxel selection needs training samples"));
    };
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let mut out: [Vec<usize>; 5] = Default::default();
    for roi in Roi::ALL {
        let size = first.voxels.get(roi).len();
        if size < n_per_roi {
            return Err(Error::invalid(format!("{roi} has {size} voxels, decoder needs {n_per_roi}")));
        }
        let scores: Vec<f64> = (0..size)
            .map(|j| {
                let col: Vec<f64> = train.iter().map(|s| s.voxels.get(roi)[j]).collect();
                anova_f(&col, &labels)
            })
            .collect();
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut chosen = order[..n_per_roi].to_vec();
        chosen.sort_unstable();
        out[roi.index()] = chosen;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderModel {
    pub config: DecoderConfig,
    /// Selected voxel indices per ROI, V1..LO.
    pub selection: [Vec<usize>; 5],
    /// `fwd.w`, `fwd.b`, `bwd.w`, `bwd.b`, `out.w`, `out.b`.
    pub params: ParamSet,
}

struct ForwardCache {
    fwd: Vec<LstmCache>,
    bwd: Vec<LstmCache>,
    /// Dropout multipliers (0 or 1/(1-p)); all ones at inference.
    mask: Vec<f64>,
    feature: Vec<f64>,
    logits: Vec<f64>,
}

impl DecoderModel {
    /// Glorot-style uniform weights, forget-gate bias 1, zero elsewhere.
    pub fn init(config: DecoderConfig, selection: [Vec<usize>; 5], rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let cell = config.cell();
        let [rows, cols] = cell.weight_shape();
        let h = config.hidden_per_direction;
        let mut params = ParamSet::new();
        for dir in ["fwd", "bwd"] {
            let lim = (6.0 / (rows / 4 + cols) as f64).sqrt();
            params.insert(format!("{dir}.w"), Tensor::from_fn(&[rows, cols], |_| rng.random_range(-lim..lim)))?;
            params.insert(
                format!("{dir}.b"),
                Tensor::from_fn(&[rows], |k| if (h..2 * h).contains(&k) { 1.0 } else { 0.0 }),
            )?;
        }
        let lim = (6.0 / (2 * h + config.n_classes) as f64).sqrt();
        params.insert("out.w", Tensor::from_fn(&[config.n_classes, 2 * h], |_| rng.random_range(-lim..lim)))?;
        params.insert("out.b", Tensor::zeros(&[config.n_classes]))?;
        let model = Self {
            config,
            selection,
            params,
        };
        model.check_selection()?;
        Ok(model)
    }

    fn check_selection(&self) -> Result<()> {
        for (roi, sel) in Roi::ALL.iter().zip(&self.selection) {
            if sel.len() != self.config.voxels_per_node || sel.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "{roi} selection must hold {} strictly increasing indices",
                    self.config.voxels_per_node
                )));
            }
        }
        Ok(())
    }

    /// The five ROI input vectors for a full voxel record.
    pub fn sequence(&self, voxels: &VoxelRecord) -> Result<Vec<Vec<f64>>> {
        Roi::ALL
            .iter()
            .zip(&self.selection)
            .map(|(&roi, sel)| {
                let v = voxels.get(roi);
                sel.iter()
                    .map(|&j| {
                        v.get(j)
                            .copied()
                            .ok_or_else(|| Error::shape("decoder", format!("{roi} has {} voxels, index {j} selected", v.len())))
                    })
                    .collect()
            })
            .collect()
    }

    fn forward_cached(&self, steps: &[Vec<f64>], dropout: Option<&mut RngStream>) -> Result<ForwardCache> {
        if steps.len() != N_STEPS {
            return Err(Error::shape("decoder_forward", format!("{} ROI vectors, expected {N_STEPS}", steps.len())));
        }
        if let Some(bad) = steps.iter().find(|s| s.len() != self.config.voxels_per_node) {
            return Err(Error::shape(
                "decoder_forward",
                format!("ROI vector has {} entries, expected {}", bad.len(), self.config.voxels_per_node),
            ));
        }
        let cell = self.config.cell();
        let h = cell.hidden;
        let run = |dir: &str, order: &mut dyn Iterator<Item = &Vec<f64>>| {
            let (w, b) = (self.params.value(&format!("{dir}.w")), self.params.value(&format!("{dir}.b")));
            let mut caches: Vec<LstmCache> = Vec::with_capacity(N_STEPS);
            let zeros = vec![0.0; h];
            for x in order {
                let (hp, cp) = caches.last().map_or((&zeros, &zeros), |c| (&c.h, &c.c));
                let next = cell.forward(w, b, x, hp, cp);
                caches.push(next);
            }
            caches
        };
        let fwd = run("fwd", &mut steps.iter());
        let bwd = run("bwd", &mut steps.iter().rev());
        let mut feature: Vec<f64> = fwd[N_STEPS - 1].h.iter().chain(&bwd[N_STEPS - 1].h).copied().collect();
        let mask = match dropout {
            Some(rng) if self.config.dropout_rate > 0.0 => {
                let keep = 1.0 - self.config.dropout_rate;
                (0..2 * h)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            }
            _ => vec![1.0; 2 * h],
        };
        feature.iter_mut().zip(&mask).for_each(|(f, m)| *f *= m);
        let mut logits = vec![0.0; self.config.n_classes];
        dense_forward(self.params.value("out.w"), self.params.value("out.b"), &feature, &mut logits);
        Ok(ForwardCache {
            fwd,
            bwd,
            mask,
            feature,
            logits,
        })
    }

    /// Accumulates gradients of the loss whose logit gradient is `dlogits`.
    fn backward(&mut self, cache: &ForwardCache, dlogits: &[f64]) {
        let cell = self.config.cell();
        let h = cell.hidden;
        let mut dfeat = vec![0.0; 2 * h];
        let mut db = vec![0.0; dlogits.len()];
        {
            let p = self.params.param_mut("out.w");
            dense_backward(p.value.data(), &cache.feature, dlogits, p.grad.data_mut(), &mut db, Some(&mut dfeat));
        }
        add(self.params.grad_mut("out.b"), &db);
        dfeat.iter_mut().zip(&cache.mask).for_each(|(d, m)| *d *= m);
        for (dir, caches, dh_last) in [("fwd", &cache.fwd, &dfeat[..h]), ("bwd", &cache.bwd, &dfeat[h..])] {
            let mut dbias = vec![0.0; 4 * h];
            let p = self.params.param_mut(&format!("{dir}.w"));
            let mut dh = dh_last.to_vec();
            let mut dc = vec![0.0; h];
            for c in caches.iter().rev() {
                let (_, dh_prev, dc_prev) = cell.backward(p.value.data(), c, &dh, &dc, p.grad.data_mut(), &mut dbias);
                dh = dh_prev;
                dc = dc_prev;
            }
            add(self.params.grad_mut(&format!("{dir}.b")), &dbias);
        }
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.params.content_hash().as_bytes());
        for sel in &self.selection {
            h.update((sel.len() as u64).to_le_bytes());
            for &j in sel {
                h.update((j as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = DecoderFile {
            kind: "decoder".into(),
            config: self.config.clone(),
            selection: self.selection.clone(),
            params: self.params.to_records(),
            content_hash: self.content_hash(),
        };
        fsio::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DecoderFile = fsio::read_json(path)?;
        let bad = |field: &str, detail: String| Error::format(path, field, detail);
        if file.kind != "decoder" {
            return Err(bad("kind", format!("expected `decoder`, found `{}`", file.kind)));
        }
        file.config.validate().map_err(|e| bad("config", e.to_string()))?;
        let params = ParamSet::from_records(file.params).map_err(|e| bad("params", e.to_string()))?;
        let mut reference = DecoderModel::init(file.config.clone(), file.selection.clone(), &mut RngStream::new(0))
            .map_err(|e| bad("selection", e.to_string()))?;
        for (name, p) in reference.params.iter() {
            if params.get(name).map(|q| q.value.shape()) != Some(p.value.shape()) {
                return Err(bad("params", format!("`{name}` missing or wrong shape")));
            }
        }
        if params.len() != reference.params.len() {
            return Err(bad("params", "unexpected entries".into()));
        }
        reference.params = params;
        if reference.content_hash() != file.content_hash {
            return Err(bad("content_hash", "does not match parameters".into()));
        }
        Ok(reference)
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderFile {
    kind: String,
    config: DecoderConfig,
    selection: [Vec<usize>; 5],
    params: Vec<NamedArray>,
    content_hash: String,
}

/// Class probabilities for one ROI sequence. With `train_mode` the dropout
/// mask is drawn from `rng`, which is then required.
pub fn decoder_forward(
    model: &DecoderModel,
    steps: &[Vec<f64>],
    train_mode: bool,
    rng: Option<&mut RngStream>,
) -> Result<Vec<f64>> {
    let dropout = match (train_mode, rng) {
        (true, Some(r)) => Some(r),
        (true, None) => return Err(Error::invalid("training-mode forward needs an rng")),
        (false, _) => None,
    };
    Ok(softmax(&model.forward_cached(steps, dropout)?.logits))
}

/// Index of the largest probability, lower index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

/// Predicted coarse label and class probabilities (dropout off).
pub fn decode_category(model: &DecoderModel, voxels: &VoxelRecord) -> Result<(usize, Vec<f64>)> {
    let probs = decoder_forward(model, &model.sequence(voxels)?, false, None)?;
    Ok((argmax(&probs), probs))
}

/// Fraction of samples whose decoded label matches.
pub fn accuracy(model: &DecoderModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample set"));
    }
    let mut hits = 0usize;
    for s in samples {
        hits += usize::from(decode_category(model, &s.voxels)?.0 == s.label);
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoderHistory {
    /// Mean training cross-entropy per epoch (dropout on).
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub validation_accuracy: Vec<f64>,
}

/// Trains on z-scored samples; `validation` only feeds the history.
pub fn decoder_train(
    config: &DecoderConfig,
    train: &[Sample],
    validation: Option<&[Sample]>,
) -> Result<(DecoderModel, DecoderHistory)> {
    config.validate()?;
    let selection = select_voxels(train, config.voxels_per_node)?;
    let root = RngStream::new(config.seed).child("decoder");
    let mut model = DecoderModel::init(config.clone(), selection, &mut root.child("init"))?;
    let inputs: Vec<Vec<Vec<f64>>> = train.iter().map(|s| model.sequence(&s.voxels)).collect::<Result<_>>()?;
    let mut history = DecoderHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = root.child("epoch").child(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.params.zero_grad();
            for &i in batch {
                let cache = model.forward_cached(&inputs[i], Some(&mut rng))?;
                let (loss, probs) = softmax_xent(&cache.logits, train[i].label)?;
                total += loss;
                let mut d = probs;
                d[train[i].label] -= 1.0;
                d.iter_mut().for_each(|v| *v /= batch.len() as f64);
                model.backward(&cache, &d);
            }
            optimizer_step(&mut model.params, &config.optimizer);
        }
        if !model.params.all_finite() {
            return Err(Error::NonFinite(format!("decoder parameters after epoch {epoch}")));
        }
        history.loss.push(total / train.len() as f64);
        history.train_accuracy.push(accuracy(&model, train)?);
        if let Some(val) = validation {
            history.validation_accuracy.push(accuracy(&model, val)?);
        }
    }
    Ok((model, history))
}

/// Central-difference check of the full forward pass plus cross-entropy
/// (dropout off) on a small random model.
pub fn decoder_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let config = DecoderConfig {
        voxels_per_node: 6,
        hidden_per_direction: 4,
        ..DecoderConfig::default()
    };
    let root = RngStream::new(seed).child("gradcheck");
    let draw = |attempt: usize| -> Result<Option<(ParamSet, (DecoderModel, CheckData))>> {
        let mut rng = root.child(attempt);
        let selection: [Vec<usize>; 5] = Default::default();
        let mut model = DecoderModel::init(config.clone(), selection.map(|_| (0..6).collect()), &mut rng)?;
        for (_, p) in model.params.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let data: CheckData = (0..3)
            .map(|_| {
                let steps = (0..N_STEPS).map(|_| (0..6).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
                (steps, rng.random_range(0..N_COARSE))
            })
            .collect();
        Ok(Some((model.params.clone(), (model, data))))
    };
    conditioned_grad_check(CHECK_STEP, draw, |(base, data), p: &mut ParamSet| {
        let mut m = DecoderModel {
            params: p.clone(),
            ..base.clone()
        };
        m.params.zero_grad();
        let mut total = 0.0;
        for (steps, label) in data {
            let cache = m.forward_cached(steps, None)?;
            let (loss, mut d) = softmax_xent(&cache.logits, *label)?;
            d[*label] -= 1.0;
            total += loss;
            m.backward(&cache, &d);
        }
        for (name, q) in p.iter_mut() {
            add(q.grad.data_mut(), m.params.grad(name));
        }
        Ok(total)
    })
}

type CheckData = Vec<(Vec<Vec<f64>>, usize)>;

const CHECK_STEP: f64 = 1e-5;
