//! Image-space evaluation of reconstructions: MSE, PCC, SSIM, layer-wise
//! feature correlations through the encoder, and identification accuracy.

use serde::{Deserialize, Serialize};

use crate::data::GrayImage;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::pearson;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_size(op: &'static str, a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ))
    }
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size("mse", a, b)?;
    let sum: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Pearson correlation over flattened pixels; 0 when either image is flat.
pub fn pcc(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size("pcc", a, b)?;
    let p = pearson(a.pixels(), b.pixels())?;
    Ok(if p.degenerate { 0.0 } else { p.r })
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    w
}

/// Mean structural similarity over all fully contained 11x11 Gaussian
/// windows (sigma 1.5, K1 0.01, K2 0.03, dynamic range 1).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let win = gaussian_window();
    let (pa, pb) = (a.pixels(), b.pixels());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (y0 + dy) * w + x0;
                for dx in 0..SSIM_WINDOW {
                    let g = win[dy * SSIM_WINDOW + dx];
                    let (u, v) = (pa[row + dx], pb[row + dx]);
                    ma += g * u;
                    mb += g * v;
                    saa += g * u * u;
                    sbb += g * v * v;
                    sab += g * u * v;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Pearson correlation between the feature maps of `a` and `b` at every
/// conv stage of every ROI network, in forward order.
pub fn perceptual_layer_corrs(a: &GrayImage, b: &GrayImage, encoder: &EncoderModel) -> Result<Vec<f64>> {
    same_size("perceptual_layer_corrs", a, b)?;
    let fa = encoder.feature_maps(a)?;
    let fb = encoder.feature_maps(b)?;
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| {
            let p = pearson(x, y)?;
            Ok(if p.degenerate { 0.0 } else { p.r })
        })
        .collect()
}

/// Fraction of reconstructions more similar (SSIM) to their own stimulus
/// than to every other stimulus.
pub fn identification(recons: &[GrayImage], stimuli: &[GrayImage]) -> Result<f64> {
    let n = recons.len();
    if n < 2 || stimuli.len() != n {
        return Err(Error::invalid(format!(
            "identification needs equal lists of at least 2 images, got {n} and {}",
            stimuli.len()
        )));
    }
    let mut hits = 0usize;
    for (i, r) in recons.iter().enumerate() {
        let own = ssim(r, &stimuli[i])?;
        let mut best = true;
        for (j, s) in stimuli.iter().enumerate() {
            if j != i && ssim(r, s)? >= own {
                best = false;
                break;
            }
        }
        hits += usize::from(best);
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub mse: f64,
    pub ssim: f64,
    pub pcc: f64,
}

impl ImageScores {
    pub fn compute(recon: &GrayImage, truth: &GrayImage) -> Result<Self> {
        Ok(Self {
            mse: mse(recon, truth)?,
            ssim: ssim(recon, truth)?,
            pcc: pcc(recon, truth)?,
        })
    }

    pub fn mean(items: &[ImageScores]) -> Self {
        let n = items.len() as f64;
        Self {
            mse: items.iter().map(|s| s.mse).sum::<f64>() / n,
            ssim: items.iter().map(|s| s.ssim).sum::<f64>() / n,
            pcc: items.iter().map(|s| s.pcc).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusMetrics {
    pub id: String,
    pub top1: ImageScores,
    /// Mean over all returned ranks.
    pub topk_mean: ImageScores,
    pub per_rank: Vec<ImageScores>,
    /// Feature correlations of the rank-1 reconstruction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layer_corrs: Vec<f64>,
    /// Mean SSIM of unrelated generator images against the stimulus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_baseline_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mse: f64,
    pub ssim: f64,
    pub pcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub stimuli: Vec<StimulusMetrics>,
    /// `Top1` and `Top<K>` rows of means over stimuli.
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_layer_corrs: Vec<f64>,
    pub identification_top1: f64,
    /// Stimuli whose Top-1 SSIM beats their random baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beats_random_baseline: Option<usize>,
}

/// One stimulus with its ranked reconstructions (best first).
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub stimulus: &'a GrayImage,
    pub ranked: &'a [GrayImage],
    pub baseline: Option<&'a [GrayImage]>,
}

pub fn evaluate(items: &[EvalItem<'_>], encoder: Option<&EncoderModel>) -> Result<MetricReport> {
    if items.len() < 2 {
        return Err(Error::invalid("evaluation needs at least 2 stimuli"));
    }
    let mut stimuli = Vec::with_capacity(items.len());
    for it in items {
        if it.ranked.is_empty() {
            return Err(Error::invalid(format!("no reconstructions for {}", it.id)));
        }
        let per_rank = it
            .ranked
            .iter()
            .map(|r| ImageScores::compute(r, it.stimulus))
            .collect::<Result<Vec<_>>>()?;
        let layer_corrs = match encoder {
            Some(e) => perceptual_layer_corrs(&it.ranked[0], it.stimulus, e)?,
            None => Vec::new(),
        };
        let random_baseline_ssim = match it.baseline {
            Some(imgs) if !imgs.is_empty() => {
                let s = imgs.iter().map(|b| ssim(b, it.stimulus)).collect::<Result<Vec<_>>>()?;
                Some(s.iter().sum::<f64>() / s.len() as f64)
            }
            _ => None,
        };
        stimuli.push(StimulusMetrics {
            id: it.id.to_string(),
            top1: per_rank[0],
            topk_mean: ImageScores::mean(&per_rank),
            per_rank,
            layer_corrs,
            random_baseline_ssim,
        });
    }
    let k = items.iter().map(|i| i.ranked.len()).max().unwrap_or(1);
    let row = |name: String, f: &dyn Fn(&StimulusMetrics) -> ImageScores| {
        let m = ImageScores::mean(&stimuli.iter().map(f).collect::<Vec<_>>());
        SummaryRow {
            name,
            mse: m.mse,
            ssim: m.ssim,
            pcc: m.pcc,
        }
    };
    let summary = vec![row("Top1".into(), &|s| s.top1), row(format!("Top{k}"), &|s| s.topk_mean)];
    let n_layers = stimuli[0].layer_corrs.len();
    let mean_layer_corrs = (0..n_layers)
        .map(|l| stimuli.iter().map(|s| s.layer_corrs[l]).sum::<f64>() / stimuli.len() as f64)
        .collect();
    let recons: Vec<GrayImage> = items.iter().map(|i| i.ranked[0].clone()).collect();
    let truths: Vec<GrayImage> = items.iter().map(|i| i.stimulus.clone()).collect();
    let beats_random_baseline = if stimuli.iter().all(|s| s.random_baseline_ssim.is_some()) {
        Some(
            stimuli
                .iter()
                .filter(|s| s.top1.ssim > s.random_baseline_ssim.unwrap_or(f64::INFINITY))
                .count(),
        )
    } else {
        None
    };
    Ok(MetricReport {
        summary,
        mean_layer_corrs,
        identification_top1: identification(&recons, &truths)?,
        beats_random_baseline,
        stimuli,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    fn random_image(h: usize, w: usize, rng: &mut RngStream) -> GrayImage {
        GrayImage::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Smooth texture with mid contrast around 0.5.
    fn texture(h: usize, w: usize, rng: &mut RngStream) -> GrayImage {
        let (fy, fx, ph) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6), rng.random_range(0.0..6.0));
        GrayImage::new(
            h,
            w,
            (0..h * w)
                .map(|i| 0.5 + 0.3 * ((i / w) as f64 * fy + ph).sin() * ((i % w) as f64 * fx).cos())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_similarity() {
        let mut rng = RngStream::new(1);
        for _ in 0..20 {
            let x = random_image(16, 20, &mut rng);
            assert_eq!(mse(&x, &x).unwrap(), 0.0);
            assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simple_values() {
        let zero = GrayImage::filled(12, 12, 0.0).unwrap();
        let one = GrayImage::filled(12, 12, 1.0).unwrap();
        assert_eq!(mse(&zero, &one).unwrap(), 1.0);
        assert!(mse(&zero, &GrayImage::filled(12, 13, 0.0).unwrap()).is_err());
        assert!(ssim(&GrayImage::filled(10, 30, 0.0).unwrap(), &GrayImage::filled(10, 30, 0.0).unwrap()).is_err());
    }

    #[test]
    fn inverted_texture_has_negative_ssim() {
        let mut rng = RngStream::new(2);
        let x = texture(32, 32, &mut rng);
        let inv = GrayImage::new(32, 32, x.pixels().iter().map(|p| 1.0 - p).collect()).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.0);
    }

    #[test]
    fn luminance_shift_on_flat_images() {
        let a = GrayImage::filled(20, 20, 0.4).unwrap();
        let b = GrayImage::filled(20, 20, 0.5).unwrap();
        let expected = (2.0 * 0.4 * 0.5 + SSIM_C1) / (0.4 * 0.4 + 0.5 * 0.5 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = RngStream::new(3);
        for _ in 0..10 {
            let (a, b) = (random_image(14, 14, &mut rng), random_image(14, 14, &mut rng));
            assert!((mse(&a, &b).unwrap() - mse(&b, &a).unwrap()).abs() < 1e-12);
            assert!((pcc(&a, &b).unwrap() - pcc(&b, &a).unwrap()).abs() < 1e-12);
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn common_translation_keeps_ssim() {
        let mut rng = RngStream::new(4);
        let patch_a = random_image(8, 8, &mut rng);
        let patch_b = random_image(8, 8, &mut rng);
        let place = |p: &GrayImage, oy: usize, ox: usize| {
            let mut px = vec![0.5; 48 * 48];
            for y in 0..8 {
                for x in 0..8 {
                    px[(oy + y) * 48 + ox + x] = p.get(y, x);
                }
            }
            GrayImage::new(48, 48, px).unwrap()
        };
        let base = ssim(&place(&patch_a, 16, 16), &place(&patch_b, 16, 16)).unwrap();
        let moved = ssim(&place(&patch_a, 19, 14), &place(&patch_b, 19, 14)).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn identification_examples() {
        let mut rng = RngStream::new(5);
        let stim: Vec<GrayImage> = (0..6).map(|_| texture(16, 16, &mut rng)).collect();
        assert_eq!(identification(&stim, &stim).unwrap(), 1.0);
        let swapped = vec![stim[1].clone(), stim[0].clone()];
        assert_eq!(identification(&swapped, &stim[..2]).unwrap(), 0.0);
        assert!(identification(&stim[..1], &stim[..1]).is_err());
    }

    #[test]
    fn top_k_mean_is_mean_of_ranks() {
        let mut rng = RngStream::new(6);
        let stim: Vec<GrayImage> = (0..3).map(|_| random_image(12, 12, &mut rng)).collect();
        let ranked: Vec<Vec<GrayImage>> = (0..3).map(|_| (0..4).map(|_| random_image(12, 12, &mut rng)).collect()).collect();
        let items: Vec<EvalItem> = (0..3)
            .map(|i| EvalItem {
                id: "x",
                stimulus: &stim[i],
                ranked: &ranked[i],
                baseline: None,
            })
            .collect();
        let report = evaluate(&items, None).unwrap();
        for s in &report.stimuli {
            let m = s.per_rank.iter().map(|r| r.ssim).sum::<f64>() / 4.0;
            assert!((s.topk_mean.ssim - m).abs() < 1e-12);
        }
        assert_eq!(report.summary[1].name, "Top4");
        assert_eq!(report.beats_random_baseline, None);
    }
}
