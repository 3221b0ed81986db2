//! Voxel-space scoring: per-voxel affine calibration from predicted to
//! measured responses, the effective-voxel mask and the masked MSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-voxel `measured ~ scale * predicted + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Calibration {
    pub fn identity(n: usize) -> Self {
        Self {
            scale: vec![1.0; n],
            bias: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }
}

/// Closed-form least squares per voxel over the rows of `pred` / `measured`
/// (samples x voxels). A voxel with constant prediction gets `scale = 0` and
/// the measured mean as bias.
pub fn fit_calibration(pred: &[Vec<f64>], measured: &[Vec<f64>]) -> Result<Calibration> {
    let n = pred.len();
    if n < 2 {
        return Err(Error::invalid(format!("calibration needs at least 2 samples, got {n}")));
    }
    if measured.len() != n {
        return Err(Error::shape("fit_calibration", format!("{n} predictions vs {} measurements", measured.len())));
    }
    let width = pred[0].len();
    if pred.iter().chain(measured).any(|r| r.len() != width) {
        return Err(Error::shape("fit_calibration", format!("every row must have {width} voxels")));
    }
    let mut cal = Calibration {
        scale: vec![0.0; width],
        bias: vec![0.0; width],
    };
    for i in 0..width {
        let mp = pred.iter().map(|r| r[i]).sum::<f64>() / n as f64;
        let mt = measured.iter().map(|r| r[i]).sum::<f64>() / n as f64;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (p, t) in pred.iter().zip(measured) {
            let dp = p[i] - mp;
            sxx += dp * dp;
            sxy += dp * (t[i] - mt);
        }
        let a = if sxx > 1e-24 * n as f64 * (1.0 + mp * mp) { sxy / sxx } else { 0.0 };
        cal.scale[i] = a;
        cal.bias[i] = mt - a * mp;
    }
    if cal.scale.iter().chain(&cal.bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration coefficients".into()));
    }
    Ok(cal)
}

/// Voxels whose training correlation exceeds the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMask {
    pub threshold: f64,
    pub effective: Vec<bool>,
}

impl EffectiveMask {
    pub fn from_corr(train_corr: &[f64], threshold: f64) -> Result<Self> {
        let effective: Vec<bool> = train_corr.iter().map(|&r| r > threshold).collect();
        if !effective.contains(&true) {
            return Err(Error::invalid(format!(
                "no voxel has training correlation above {threshold}; nothing to score"
            )));
        }
        Ok(Self { threshold, effective })
    }

    /// Every voxel effective.
    pub fn all(n: usize) -> Result<Self> {
        Self::from_corr(&vec![1.0; n], f64::NEG_INFINITY)
    }

    pub fn count(&self) -> usize {
        self.effective.iter().filter(|&&e| e).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.effective.len()).filter(|&i| self.effective[i]).collect()
    }
}

/// Calibration and mask bundled for repeated scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    calibration: Calibration,
    mask: EffectiveMask,
    indices: Vec<usize>,
}

impl Scorer {
    pub fn new(calibration: Calibration, mask: EffectiveMask) -> Result<Self> {
        if calibration.len() != mask.effective.len() {
            return Err(Error::shape(
                "scorer",
                format!("calibration covers {} voxels, mask {}", calibration.len(), mask.effective.len()),
            ));
        }
        let indices = mask.indices();
        if indices.is_empty() {
            return Err(Error::invalid("effective mask is empty"));
        }
        Ok(Self {
            calibration,
            mask,
            indices,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn mask(&self) -> &EffectiveMask {
        &self.mask
    }

    pub fn n_voxels(&self) -> usize {
        self.mask.effective.len()
    }

    /// Mean over effective voxels of `(scale * pred + bias - target)^2`.
    pub fn score(&self, pred: &[f64], target: &[f64]) -> Result<f64> {
        let n = self.n_voxels();
        if pred.len() != n || target.len() != n {
            return Err(Error::shape("score", format!("expected {n} voxels, got {} and {}", pred.len(), target.len())));
        }
        let (a, b) = (&self.calibration.scale, &self.calibration.bias);
        let sum: f64 = self
            .indices
            .iter()
            .map(|&i| {
                let d = a[i] * pred[i] + b[i] - target[i];
                d * d
            })
            .sum();
        Ok(sum / self.indices.len() as f64)
    }
}

/// Free-function form of [`Scorer::score`].
pub fn score(pred: &[f64], target: &[f64], calibration: &Calibration, mask: &EffectiveMask) -> Result<f64> {
    Scorer::new(calibration.clone(), mask.clone())?.score(pred, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    #[test]
    fn exact_affine_relations_are_inverted() {
        let pred: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let id = fit_calibration(&pred, &pred).unwrap();
        for i in 0..2 {
            assert!((id.scale[i] - 1.0).abs() < 1e-9 && id.bias[i].abs() < 1e-9);
        }
        let up: Vec<Vec<f64>> = pred.iter().map(|r| r.iter().map(|v| 2.0 * v + 3.0).collect()).collect();
        let inv = fit_calibration(&up, &pred).unwrap();
        for i in 0..2 {
            assert!((inv.scale[i] - 0.5).abs() < 1e-9 && (inv.bias[i] + 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let mut rng = RngStream::new(3);
        let pred: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let meas: Vec<Vec<f64>> = pred
            .iter()
            .map(|r| vec![0.7 * r[0] - 0.2 + rng.random_range(-0.5..0.5)])
            .collect();
        let cal = fit_calibration(&pred, &meas).unwrap();
        // [sum x^2, sum x; sum x, n] [a; b] = [sum xy; sum y], solved by Cramer's rule
        let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
        for (p, m) in pred.iter().zip(&meas) {
            sxx += p[0] * p[0];
            sx += p[0];
            sxy += p[0] * m[0];
            sy += m[0];
        }
        let n = 25.0;
        let det = sxx * n - sx * sx;
        let a = (sxy * n - sx * sy) / det;
        let b = (sxx * sy - sx * sxy) / det;
        assert!((cal.scale[0] - a).abs() < 1e-9 && (cal.bias[0] - b).abs() < 1e-9);
    }

    #[test]
    fn constant_prediction_falls_back_to_mean() {
        let pred = vec![vec![4.0]; 4];
        let meas = vec![vec![1.0], vec![2.0], vec![3.0], vec![6.0]];
        let cal = fit_calibration(&pred, &meas).unwrap();
        assert_eq!((cal.scale[0], cal.bias[0]), (0.0, 3.0));
        assert!(fit_calibration(&pred[..1], &meas[..1]).is_err());
    }

    #[test]
    fn score_examples() {
        let mask = EffectiveMask::from_corr(&[0.9, 0.1], 0.27).unwrap();
        let cal = Calibration::identity(2);
        assert_eq!(score(&[1.0, 50.0], &[3.0, -7.0], &cal, &mask).unwrap(), 4.0);
        assert_eq!(score(&[3.0, 0.0], &[3.0, 1.0], &cal, &mask).unwrap(), 0.0);
        assert!(EffectiveMask::from_corr(&[0.27, 0.1], 0.27).is_err());
    }

    #[test]
    fn ineffective_voxels_never_matter() {
        let mut rng = RngStream::new(4);
        let corr: Vec<f64> = (0..30).map(|_| rng.random_range(-0.2..1.0)).collect();
        let mask = EffectiveMask::from_corr(&corr, 0.27).unwrap();
        let cal = Calibration {
            scale: (0..30).map(|_| rng.random_range(0.1..2.0)).collect(),
            bias: (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let scorer = Scorer::new(cal, mask.clone()).unwrap();
        let pred: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = scorer.score(&pred, &target).unwrap();
        let mut moved = pred.clone();
        for (i, e) in mask.effective.iter().enumerate() {
            if !e {
                moved[i] = 1e6;
            }
        }
        assert_eq!(base.to_bits(), scorer.score(&moved, &target).unwrap().to_bits());
    }

    #[test]
    fn rankings_survive_positive_affine_encoder_changes() {
        let mut rng = RngStream::new(5);
        let n = 8;
        let train_pred: Vec<Vec<f64>> = (0..40).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let train_meas: Vec<Vec<f64>> = train_pred
            .iter()
            .map(|r| r.iter().map(|v| 0.8 * v + rng.random_range(-0.3..0.3)).collect())
            .collect();
        let cands: Vec<Vec<f64>> = (0..30).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = EffectiveMask::all(n).unwrap();
        let rank = |f: &dyn Fn(usize, f64) -> f64| {
            let tp: Vec<Vec<f64>> = train_pred.iter().map(|r| r.iter().enumerate().map(|(i, &v)| f(i, v)).collect()).collect();
            let s = Scorer::new(fit_calibration(&tp, &train_meas).unwrap(), mask.clone()).unwrap();
            let scores: Vec<f64> = cands
                .iter()
                .map(|c| {
                    let p: Vec<f64> = c.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
                    s.score(&p, &target).unwrap()
                })
                .collect();
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            idx
        };
        let base = rank(&|_, v| v);
        let moved = rank(&|i, v| (1.0 + i as f64) * 3.0 * v - 2.0 * i as f64);
        assert_eq!(base, moved);
    }
}
