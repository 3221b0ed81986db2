//! The full central-difference gradient suite: every layer on its own, then
//! the two composite training losses.

use rand::Rng;
use serde::Serialize;

use crate::decoder::decoder_gradient_check;
use crate::encoder::{encode_gradient_check, pc_loss_gradient_check};
use crate::error::Result;
use crate::numerics::{
    conditioned_grad_check, dense_backward, dense_forward, pearson_with_grad, softmax_xent, ConvGeometry, GradCheckReport,
    LstmCell, Padding, ParamSet, RngStream, Tensor,
};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter entry with the largest error, as `name[index]`.
    pub worst: Option<String>,
    /// Set when the check could not run at all.
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_relative_error < TOLERANCE
    }
}

fn outcome(name: &str, r: Result<GradCheckReport>) -> CheckOutcome {
    match r {
        Ok(rep) => CheckOutcome {
            name: name.to_string(),
            checked: rep.checked,
            max_relative_error: rep.max_relative_error,
            worst: rep.worst.map(|(n, i)| format!("{n}[{i}]")),
            error: None,
        },
        Err(e) => CheckOutcome {
            name: name.to_string(),
            checked: 0,
            max_relative_error: f64::INFINITY,
            worst: None,
            error: Some(e.to_string()),
        },
    }
}

fn uniform(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0))
}

fn add_grad(p: &mut ParamSet, name: &str, g: &[f64]) {
    p.grad_mut(name).iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Loss `c . (W x + b)`, differentiated in `W`, `b` and `x`.
fn dense_check(seed: u64) -> Result<GradCheckReport> {
    let root = RngStream::new(seed).child("dense");
    let draw = |attempt: usize| -> Result<_> {
        let mut rng = root.child(attempt);
        let mut p = ParamSet::new();
        p.insert("w", uniform(&mut rng, &[4, 5], 1.0))?;
        p.insert("b", uniform(&mut rng, &[4], 1.0))?;
        p.insert("x", uniform(&mut rng, &[5], 1.0))?;
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Some((p, c)))
    };
    conditioned_grad_check(STEP, draw, |c, p: &mut ParamSet| {
        let (w, b, x) = (p.value("w").to_vec(), p.value("b").to_vec(), p.value("x").to_vec());
        let mut y = vec![0.0; 4];
        dense_forward(&w, &b, &x, &mut y);
        let loss = y.iter().zip(c).map(|(a, b)| a * b).sum();
        let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; 4], vec![0.0; 5]);
        dense_backward(&w, &x, c, &mut dw, &mut db, Some(&mut dx));
        add_grad(p, "w", &dw);
        add_grad(p, "b", &db);
        add_grad(p, "x", &dx);
        Ok(loss)
    })
}

/// Loss `c . (conv(x, k) + b)` for a random readout `c`, over kernel, bias
/// and input.
fn conv_check(seed: u64, kernel: usize, padding: Padding, stride: usize) -> Result<GradCheckReport> {
    let root = RngStream::new(seed).child("conv").child(format!("{kernel}{padding:?}{stride}"));
    let geom = ConvGeometry::new((7, 6, 2), (kernel, kernel, 3), padding, stride)?;
    let draw = |attempt: usize| -> Result<_> {
        let mut rng = root.child(attempt);
        let mut p = ParamSet::new();
        p.insert("k", uniform(&mut rng, &[kernel, kernel, 2, 3], 1.0))?;
        p.insert("b", uniform(&mut rng, &[3], 1.0))?;
        p.insert("x", uniform(&mut rng, &[7, 6, 2], 1.0))?;
        let c: Vec<f64> = (0..geom.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Some((p, c)))
    };
    conditioned_grad_check(STEP, draw, |c, p: &mut ParamSet| {
        let (k, b, x) = (p.value("k").to_vec(), p.value("b").to_vec(), p.value("x").to_vec());
        let mut out = vec![0.0; geom.output_len()];
        geom.forward(&x, &k, Some(&b), &mut out);
        let loss = out.iter().zip(c).map(|(o, c)| o * c).sum();
        let (mut dk, mut dx) = (vec![0.0; k.len()], vec![0.0; x.len()]);
        geom.backward(&x, &k, c, &mut dk, Some(&mut dx));
        let mut db = vec![0.0; 3];
        for (i, g) in c.iter().enumerate() {
            db[i % 3] += g;
        }
        add_grad(p, "k", &dk);
        add_grad(p, "b", &db);
        add_grad(p, "x", &dx);
        Ok(loss)
    })
}

/// Two unrolled steps with a linear readout of the final `h` and `c`.
fn lstm_check(seed: u64) -> Result<GradCheckReport> {
    let root = RngStream::new(seed).child("lstm");
    let cell = LstmCell { input: 3, hidden: 4 };
    let draw = |attempt: usize| -> Result<_> {
        let mut rng = root.child(attempt);
        let mut p = ParamSet::new();
        p.insert("w", uniform(&mut rng, &cell.weight_shape(), 0.8))?;
        p.insert("b", uniform(&mut rng, &[16], 0.8))?;
        p.insert("x", uniform(&mut rng, &[2, 3], 1.0))?;
        p.insert("h0", uniform(&mut rng, &[4], 0.5))?;
        p.insert("c0", uniform(&mut rng, &[4], 0.5))?;
        let readout: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Some((p, readout)))
    };
    conditioned_grad_check(STEP, draw, |readout, p: &mut ParamSet| {
        let (w, b, x) = (p.value("w").to_vec(), p.value("b").to_vec(), p.value("x").to_vec());
        let s1 = cell.forward(&w, &b, &x[..3], p.value("h0"), p.value("c0"));
        let s2 = cell.forward(&w, &b, &x[3..], &s1.h, &s1.c);
        let loss = s2.h.iter().chain(&s2.c).zip(readout).map(|(a, b)| a * b).sum();
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; b.len()]);
        let (dx2, dh1, dc1) = cell.backward(&w, &s2, &readout[..4], &readout[4..], &mut dw, &mut db);
        let (dx1, dh0, dc0) = cell.backward(&w, &s1, &dh1, &dc1, &mut dw, &mut db);
        add_grad(p, "w", &dw);
        add_grad(p, "b", &db);
        add_grad(p, "x", &[dx1, dx2].concat());
        add_grad(p, "h0", &dh0);
        add_grad(p, "c0", &dc0);
        Ok(loss)
    })
}

fn softmax_xent_check(seed: u64) -> Result<GradCheckReport> {
    let root = RngStream::new(seed).child("xent");
    let draw = |attempt: usize| -> Result<_> {
        let mut p = ParamSet::new();
        p.insert("logits", uniform(&mut root.child(attempt), &[10], 2.0))?;
        Ok(Some((p, ())))
    };
    conditioned_grad_check(STEP, draw, |_, p: &mut ParamSet| {
        let (loss, probs) = softmax_xent(p.value("logits"), 3)?;
        let mut d = probs;
        d[3] -= 1.0;
        add_grad(p, "logits", &d);
        Ok(loss)
    })
}

fn pearson_check(seed: u64) -> Result<GradCheckReport> {
    let root = RngStream::new(seed).child("pearson");
    let draw = |attempt: usize| -> Result<_> {
        let mut rng = root.child(attempt);
        let mut p = ParamSet::new();
        p.insert("x", uniform(&mut rng, &[12], 1.0))?;
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Some((p, y)))
    };
    conditioned_grad_check(STEP, draw, |y, p: &mut ParamSet| {
        let (r, g) = pearson_with_grad(p.value("x"), y)?;
        add_grad(p, "x", &g);
        Ok(r.r)
    })
}

/// Runs every check. Deterministic for a given `seed`.
pub fn gradient_suite(seed: u64) -> Vec<CheckOutcome> {
    let mut out = vec![
        outcome("dense", dense_check(seed)),
        outcome("conv3x3 same", conv_check(seed, 3, Padding::Same, 1)),
        outcome("conv5x5 same", conv_check(seed, 5, Padding::Same, 1)),
        outcome("conv3x3 valid", conv_check(seed, 3, Padding::Valid, 1)),
        outcome("conv3x3 same stride2", conv_check(seed, 3, Padding::Same, 2)),
        outcome("lstm two steps", lstm_check(seed)),
        outcome("softmax cross-entropy", softmax_xent_check(seed)),
        outcome("pearson", pearson_check(seed)),
        outcome("decoder forward + cross-entropy", decoder_gradient_check(seed)),
    ];
    for k in [3, 5] {
        out.push(outcome(&format!("encoder {k}x{k} forward"), encode_gradient_check(seed, k)));
        out.push(outcome(
            &format!("encoder {k}x{k} forward + weighted PC loss"),
            pc_loss_gradient_check(seed, k),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn every_check_passes() {
        for c in gradient_suite(1) {
            assert!(c.passed(), "{c:?}");
            assert!(c.checked > 0);
        }
    }

    #[test]
    fn a_broken_gradient_fails() {
        let p = {
            let mut p = ParamSet::new();
            p.insert("x", Tensor::new(vec![2], vec![0.3, -0.4]).unwrap()).unwrap();
            p
        };
        let r = grad_check(&p, STEP, |p: &mut ParamSet| {
            let x = p.value("x").to_vec();
            // true gradient is 2x; report x
            add_grad(p, "x", &x);
            Ok(x.iter().map(|v| v * v).sum())
        });
        assert!(!outcome("bad", r).passed());
    }
}
