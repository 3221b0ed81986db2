use super::Tensor;
use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored row-major as `out x in`.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    assert_eq!(w.len(), y.len() * n_in);
    assert_eq!(b.len(), y.len());
    for ((yo, row), bo) in y.iter_mut().zip(w.chunks_exact(n_in)).zip(b) {
        *yo = bo + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dw`, `db`, and `dx` (if given) from `dy`.
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for ((g, drow), d) in dy.iter().zip(dw.chunks_exact_mut(n_in)).zip(db.iter_mut()) {
        *d += g;
        if *g != 0.0 {
            for (dwv, xv) in drow.iter_mut().zip(x) {
                *dwv += g * xv;
            }
        }
    }
    if let Some(dx) = dx {
        for (g, row) in dy.iter().zip(w.chunks_exact(n_in)) {
            if *g != 0.0 {
                for (d, wv) in dx.iter_mut().zip(row) {
                    *d += g * wv;
                }
            }
        }
    }
}

pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let &[n_out, n_in] = w.shape() else {
        return Err(Error::shape("dense", format!("weight must be 2-D, got {:?}", w.shape())));
    };
    if x.len() != n_in || b.len() != n_out {
        return Err(Error::shape(
            "dense",
            format!("weight {n_out}x{n_in}, input {}, bias {}", x.len(), b.len()),
        ));
    }
    let mut y = vec![0.0; n_out];
    dense_forward(w.data(), b.data(), x.data(), &mut y);
    Tensor::new(vec![n_out], y)
}
