use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `true_index`.
/// The gradient w.r.t. the logits is `probs - one_hot(true_index)`.
pub fn softmax_xent(logits: &[f64], true_index: usize) -> Result<(f64, Vec<f64>)> {
    if true_index >= logits.len() {
        return Err(Error::invalid(format!(
            "class index {true_index} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = log_sum - (logits[true_index] - max);
    Ok((loss, softmax(logits)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson {
    pub r: f64,
    /// Set when either input has (numerically) zero variance; `r` is 0 then.
    pub degenerate: bool,
}

struct Centered {
    xc: Vec<f64>,
    yc: Vec<f64>,
    sxx: f64,
    syy: f64,
    sxy: f64,
    degenerate: bool,
}

fn is_flat(sum_sq: f64, mean: f64, n: usize) -> bool {
    sum_sq <= 1e-24 * n as f64 * (1.0 + mean * mean)
}

fn center(x: &[f64], y: &[f64]) -> Result<Centered> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson", format!("lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("pearson needs at least 2 values"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    let syy: f64 = yc.iter().map(|v| v * v).sum();
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let degenerate = is_flat(sxx, mx, n) || is_flat(syy, my, n);
    Ok(Centered {
        xc,
        yc,
        sxx,
        syy,
        sxy,
        degenerate,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    let c = center(x, y)?;
    if c.degenerate {
        return Ok(Pearson { r: 0.0, degenerate: true });
    }
    let r = (c.sxy / (c.sxx.sqrt() * c.syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Pearson { r, degenerate: false })
}

/// Pearson correlation and its gradient with respect to `x`.
/// Degenerate inputs give `r = 0` and a zero gradient.
pub fn pearson_with_grad(x: &[f64], y: &[f64]) -> Result<(Pearson, Vec<f64>)> {
    let c = center(x, y)?;
    if c.degenerate {
        return Ok((Pearson { r: 0.0, degenerate: true }, vec![0.0; x.len()]));
    }
    let denom = c.sxx.sqrt() * c.syy.sqrt();
    let r = c.sxy / denom;
    // dr/dx_i = yc_i / denom - r xc_i / sxx; centering terms cancel.
    let grad = c
        .xc
        .iter()
        .zip(&c.yc)
        .map(|(xv, yv)| yv / denom - r * xv / c.sxx)
        .collect();
    Ok((Pearson { r, degenerate: false }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, probs) = softmax_xent(&[0.0; 10], 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn saturated_logit() {
        let mut logits = vec![0.0; 10];
        logits[4] = 50.0;
        let (loss, probs) = softmax_xent(&logits, 4).unwrap();
        assert!(loss < 1e-9);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // stays finite far beyond exp overflow
        logits[4] = 1e4;
        let (loss, _) = softmax_xent(&logits, 0).unwrap();
        assert!((loss - 1e4).abs() < 1e-9);
    }

    #[test]
    fn index_out_of_range() {
        assert!(softmax_xent(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn xent_gradient_is_probs_minus_one_hot() {
        let logits = [0.3, -1.2, 2.0, 0.5];
        let (_, probs) = softmax_xent(&logits, 2).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut up = logits;
            up[k] += h;
            let mut dn = logits;
            dn[k] -= h;
            let fd = (softmax_xent(&up, 2).unwrap().0 - softmax_xent(&dn, 2).unwrap().0) / (2.0 * h);
            let analytic = probs[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((fd - analytic).abs() < 1e-9, "k={k} fd={fd} analytic={analytic}");
        }
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap().r - 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap().r + 1.0).abs() < 1e-15);
        // xc = (-1.5,-.5,.5,1.5), yc = (-1.5,.5,-.5,1.5): sxy = 4, sxx = syy = 5
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let p = pearson(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, Pearson { r: 0.0, degenerate: true });
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_grad_matches_finite_differences() {
        let x = [0.3, -1.0, 2.2, 0.7, -0.4];
        let y = [1.0, 0.2, -0.3, 0.9, 2.0];
        let (_, grad) = pearson_with_grad(&x, &y).unwrap();
        let h = 1e-6;
        for k in 0..x.len() {
            let mut up = x;
            up[k] += h;
            let mut dn = x;
            dn[k] -= h;
            let fd = (pearson(&up, &y).unwrap().r - pearson(&dn, &y).unwrap().r) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            xs in prop::collection::vec(-10.0f64..10.0, 3..30),
            shift in -100.0f64..100.0,
            scale in 0.01f64..100.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v.sin() + 0.1 * i as f64).collect();
            let base = pearson(&xs, &ys).unwrap();
            prop_assume!(!base.degenerate);
            let moved: Vec<f64> = xs.iter().map(|v| v * scale + shift).collect();
            let r = pearson(&moved, &ys).unwrap().r;
            prop_assert!((r - base.r).abs() < 1e-10);
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn softmax_is_probability_vector(logits in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
