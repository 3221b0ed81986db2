use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Entry name and flat index of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the analytic gradient of `loss` against central differences for
/// every scalar in `params`.
///
/// `loss` must return the scalar loss and *accumulate* its analytic gradient
/// into the grads of the set it is handed (they are zeroed before the
/// analytic pass). The relative error of one entry is
/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(params: &ParamSet, step: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let mut work = params.clone();
    work.zero_grad();
    let f0 = loss(&mut work)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("loss {f0} at base point")));
    }
    let analytic: Vec<(String, Vec<f64>)> = work
        .iter()
        .map(|(name, p)| (name.to_owned(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (name, grad) in &analytic {
        for (idx, &a) in grad.iter().enumerate() {
            let orig = work.value(name)[idx];
            work.value_mut(name)[idx] = orig + step;
            let up = loss(&mut work)?;
            work.value_mut(name)[idx] = orig - step;
            let down = loss(&mut work)?;
            work.value_mut(name)[idx] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{idx}]")));
            }
            let numeric = (up - down) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
        work.zero_grad();
    }
    Ok(report)
}

/// Analytic gradient entries below this are dominated by rounding in a
/// central difference at step `1e-5`.
pub const MIN_CHECKED_GRADIENT: f64 = 2e-4;

const MAX_ATTEMPTS: usize = 200;

/// Smallest nonzero analytic gradient magnitude of `loss` at `params`.
/// Exact zeros are skipped: a central difference reproduces them exactly.
pub fn min_abs_gradient<F>(params: &ParamSet, mut loss: F) -> Result<f64>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    let mut work = params.clone();
    work.zero_grad();
    loss(&mut work)?;
    Ok(work
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .filter(|g| **g != 0.0)
        .fold(f64::INFINITY, |m, g| m.min(g.abs())))
}

/// [`grad_check`] at the first candidate point whose analytic gradient has
/// no nonzero entry smaller than [`MIN_CHECKED_GRADIENT`].
///
/// `draw(attempt)` builds candidate `attempt` (0, 1, ...) or returns `None`
/// to reject it outright; it must be deterministic. Only the analytic pass
/// decides acceptance, never the comparison.
pub fn conditioned_grad_check<T, D, F>(step: f64, mut draw: D, mut loss: F) -> Result<GradCheckReport>
where
    D: FnMut(usize) -> Result<Option<(ParamSet, T)>>,
    F: FnMut(&T, &mut ParamSet) -> Result<f64>,
{
    for attempt in 0..MAX_ATTEMPTS {
        let Some((params, data)) = draw(attempt)? else { continue };
        if min_abs_gradient(&params, |p| loss(&data, p))? >= MIN_CHECKED_GRADIENT {
            return grad_check(&params, step, |p| loss(&data, p));
        }
    }
    Err(Error::invalid(format!(
        "no check point among {MAX_ATTEMPTS} draws has all gradient entries above {MIN_CHECKED_GRADIENT}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dense_backward, dense_forward, RngStream, Tensor};
    use rand::Rng;

    /// Dense layer followed by squared error against a fixed target.
    fn dense_problem(seed: u64) -> (ParamSet, Vec<f64>, Vec<f64>) {
        let mut rng = RngStream::new(seed);
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        p.insert("b", Tensor::from_fn(&[3], |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let x = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        (p, x, t)
    }

    fn dense_loss(p: &mut ParamSet, x: &[f64], t: &[f64]) -> Result<f64> {
        let w = p.value("w").to_vec();
        let b = p.value("b").to_vec();
        let mut y = vec![0.0; 3];
        dense_forward(&w, &b, x, &mut y);
        let dy: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
        let loss = 0.5 * dy.iter().map(|v| v * v).sum::<f64>();
        let mut dw = vec![0.0; 12];
        let mut db = vec![0.0; 3];
        dense_backward(&w, x, &dy, &mut dw, &mut db, None);
        p.grad_mut("w").iter_mut().zip(&dw).for_each(|(g, d)| *g += d);
        p.grad_mut("b").iter_mut().zip(&db).for_each(|(g, d)| *g += d);
        Ok(loss)
    }

    #[test]
    fn dense_squared_loss_passes_tightly() {
        for seed in 0..5 {
            let (p, x, t) = dense_problem(seed);
            let r = grad_check(&p, 1e-5, |q: &mut ParamSet| dense_loss(q, &x, &t)).unwrap();
            assert_eq!(r.checked, 15);
            assert!(r.max_relative_error < 1e-8, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn halving_the_step_does_not_blow_up_the_error() {
        let (p, x, t) = dense_problem(9);
        let e1 = grad_check(&p, 1e-5, |q: &mut ParamSet| dense_loss(q, &x, &t))
            .unwrap()
            .max_relative_error;
        let e2 = grad_check(&p, 5e-6, |q: &mut ParamSet| dense_loss(q, &x, &t))
            .unwrap()
            .max_relative_error;
        assert!(e2 <= 4.0 * e1.max(1e-15), "{e1} -> {e2}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let (p, x, t) = dense_problem(1);
        let r = grad_check(&p, 1e-5, |q: &mut ParamSet| {
            let l = dense_loss(q, &x, &t)?;
            q.grad_mut("b")[1] += 0.5;
            Ok(l)
        })
        .unwrap();
        assert!(r.max_relative_error > 0.1);
        assert_eq!(r.worst, Some(("b".to_owned(), 1)));
    }

    #[test]
    fn rejects_non_finite_loss_and_bad_step() {
        let (p, _, _) = dense_problem(1);
        assert!(grad_check(&p, 1e-5, |_: &mut ParamSet| Ok(f64::NAN)).is_err());
        assert!(grad_check(&p, 0.0, |_: &mut ParamSet| Ok(0.0)).is_err());
    }

    #[test]
    fn conditioned_check_skips_tiny_gradients_but_keeps_exact_zeros() {
        // loss = a * x0 + 0 * x1; attempt 0 has |a| below the floor.
        let scales = [1e-6, 0.5];
        let mut seen = vec![];
        let r = conditioned_grad_check(
            1e-5,
            |attempt| {
                seen.push(attempt);
                if attempt >= scales.len() {
                    return Ok(None);
                }
                let mut p = ParamSet::new();
                p.insert("x", Tensor::new(vec![2], vec![0.3, 0.7])?)?;
                Ok(Some((p, scales[attempt])))
            },
            |a, q: &mut ParamSet| {
                let x = q.value("x")[0];
                q.grad_mut("x")[0] += a;
                Ok(a * x)
            },
        )
        .unwrap();
        assert_eq!(seen, vec![0, 1]);
        assert_eq!(r.checked, 2);
        assert!(r.max_relative_error < 1e-8);
    }

    #[test]
    fn conditioned_check_still_detects_a_wrong_gradient() {
        let r = conditioned_grad_check(
            1e-5,
            |attempt| Ok(Some((dense_problem(attempt as u64).0, dense_problem(attempt as u64)))),
            |(_, x, t), q: &mut ParamSet| {
                let l = dense_loss(q, x, t)?;
                q.grad_mut("w")[2] *= 1.01;
                Ok(l)
            },
        )
        .unwrap();
        assert!(r.max_relative_error > 1e-3, "{r:?}");
    }

    #[test]
    fn conditioned_check_gives_up_after_rejections() {
        let r = conditioned_grad_check(1e-5, |_| Ok(None::<(ParamSet, ())>), |_, _: &mut ParamSet| Ok(0.0));
        assert!(r.is_err());
    }
}
