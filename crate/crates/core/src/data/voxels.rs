use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visual regions of interest, ordered from low to high level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Roi {
    V1,
    V2,
    V3,
    V4,
    LO,
}

impl Roi {
    pub const ALL: [Roi; 5] = [Roi::V1, Roi::V2, Roi::V3, Roi::V4, Roi::LO];
    /// Regions covered by the encoding model.
    pub const ENCODED: [Roi; 3] = [Roi::V1, Roi::V2, Roi::V3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Roi::V1 => "V1",
            Roi::V2 => "V2",
            Roi::V3 => "V3",
            Roi::V4 => "V4",
            Roi::LO => "LO",
        }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Roi::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ROI `{s}`")))
    }
}

/// Responses of one stimulus, one vector per ROI.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoxelRecord {
    rois: [Vec<f64>; 5],
}

impl VoxelRecord {
    pub fn new(rois: [Vec<f64>; 5]) -> Self {
        Self { rois }
    }

    pub fn get(&self, roi: Roi) -> &[f64] {
        &self.rois[roi.index()]
    }

    pub fn get_mut(&mut self, roi: Roi) -> &mut Vec<f64> {
        &mut self.rois[roi.index()]
    }

    pub fn sizes(&self) -> [usize; 5] {
        Roi::ALL.map(|r| self.rois[r.index()].len())
    }

    /// V1, V2 and V3 concatenated in that order.
    pub fn encoded_concat(&self) -> Vec<f64> {
        Roi::ENCODED
            .iter()
            .flat_map(|&r| self.get(r).iter().copied())
            .collect()
    }
}

/// Per-voxel normalisation fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelStats {
    pub mean: [Vec<f64>; 5],
    pub std: [Vec<f64>; 5],
    pub constant: [Vec<bool>; 5],
}

impl VoxelStats {
    /// Population mean and standard deviation of every voxel.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a VoxelRecord>) -> Result<Self> {
        let train: Vec<&VoxelRecord> = train.into_iter().collect();
        let Some(first) = train.first() else {
            return Err(Error::invalid("z-scoring needs a non-empty training set"));
        };
        let sizes = first.sizes();
        if let Some(bad) = train.iter().find(|r| r.sizes() != sizes) {
            return Err(Error::shape("zscore", format!("ROI sizes {:?} vs {:?}", bad.sizes(), sizes)));
        }
        let n = train.len() as f64;
        let mut stats = VoxelStats {
            mean: Default::default(),
            std: Default::default(),
            constant: Default::default(),
        };
        for roi in Roi::ALL {
            let k = roi.index();
            let mut mean = vec![0.0; sizes[k]];
            for r in &train {
                for (m, v) in mean.iter_mut().zip(r.get(roi)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; sizes[k]];
            for r in &train {
                for ((s, v), m) in var.iter_mut().zip(r.get(roi)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let constant: Vec<bool> = var
                .iter()
                .zip(&mean)
                .map(|(s, m)| *s <= 1e-24 * n * (1.0 + m * m))
                .collect();
            stats.std[k] = var.iter().map(|s| (s / n).sqrt()).collect();
            stats.mean[k] = mean;
            stats.constant[k] = constant;
        }
        Ok(stats)
    }

    pub fn apply(&self, record: &VoxelRecord) -> Result<VoxelRecord> {
        let mut out = VoxelRecord::default();
        for roi in Roi::ALL {
            let k = roi.index();
            let values = record.get(roi);
            if values.len() != self.mean[k].len() {
                return Err(Error::shape(
                    "zscore",
                    format!("{roi} has {} voxels, statistics have {}", values.len(), self.mean[k].len()),
                ));
            }
            *out.get_mut(roi) = values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if self.constant[k][i] {
                        0.0
                    } else {
                        (v - self.mean[k][i]) / self.std[k][i]
                    }
                })
                .collect();
        }
        Ok(out)
    }
}

/// Fits statistics on `train` only and applies them to both sets.
pub fn zscore_fit_apply(
    train: &[VoxelRecord],
    other: &[VoxelRecord],
) -> Result<(Vec<VoxelRecord>, Vec<VoxelRecord>, VoxelStats)> {
    let stats = VoxelStats::fit(train)?;
    let a = train.iter().map(|r| stats.apply(r)).collect::<Result<_>>()?;
    let b = other.iter().map(|r| stats.apply(r)).collect::<Result<_>>()?;
    Ok((a, b, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v1: Vec<f64>) -> VoxelRecord {
        VoxelRecord::new([v1, vec![1.0], vec![1.0], vec![1.0], vec![1.0]])
    }

    #[test]
    fn three_values_population_sigma() {
        let train = [rec(vec![1.0]), rec(vec![2.0]), rec(vec![3.0])];
        let (z, _, stats) = zscore_fit_apply(&train, &[]).unwrap();
        let got: Vec<f64> = z.iter().map(|r| r.get(Roi::V1)[0]).collect();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((got[0] + 1.0 / s).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
        assert!((got[2] - 1.2247).abs() < 1e-4);
        assert!(stats.constant[Roi::V2.index()][0]);
    }

    #[test]
    fn constant_voxel_maps_to_zero_with_flag() {
        let train = [rec(vec![4.0]), rec(vec![4.0])];
        let (z, other, stats) = zscore_fit_apply(&train, &[rec(vec![9.0])]).unwrap();
        assert!(stats.constant[0][0]);
        assert!(z.iter().all(|r| r.get(Roi::V1)[0] == 0.0));
        assert_eq!(other[0].get(Roi::V1)[0], 0.0);
    }

    #[test]
    fn fitted_training_voxels_are_standardised() {
        let train: Vec<VoxelRecord> = (0..50)
            .map(|i| rec(vec![(i as f64 * 0.37).sin() * 3.0 + 7.0, i as f64]))
            .collect();
        let (z, _, _) = zscore_fit_apply(&train, &[]).unwrap();
        for v in 0..2 {
            let xs: Vec<f64> = z.iter().map(|r| r.get(Roi::V1)[v]).collect();
            let mean = xs.iter().sum::<f64>() / 50.0;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn test_set_uses_training_statistics() {
        let train = [rec(vec![0.0]), rec(vec![2.0])];
        let (_, other, _) = zscore_fit_apply(&train, &[rec(vec![3.0])]).unwrap();
        assert_eq!(other[0].get(Roi::V1)[0], 2.0);
    }

    #[test]
    fn empty_training_set_and_mismatch_are_rejected() {
        assert!(zscore_fit_apply(&[], &[]).is_err());
        assert!(zscore_fit_apply(&[rec(vec![1.0]), rec(vec![1.0, 2.0])], &[]).is_err());
    }

    #[test]
    fn roi_names_parse() {
        for roi in Roi::ALL {
            assert_eq!(roi.name().parse::<Roi>().unwrap(), roi);
        }
        assert!("V5".parse::<Roi>().is_err());
    }
}
