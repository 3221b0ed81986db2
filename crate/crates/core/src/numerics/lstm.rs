use super::{dense_backward, dense_forward, sigmoid, ParamSet, Tensor};
use crate::error::{Error, Result};

/// One LSTM cell. Parameters live in a [`ParamSet`] under `<prefix>.w`
/// (`4h x (in + h)`, gate blocks ordered i, f, o, g) and `<prefix>.b` (`4h`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub z: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn weight_shape(&self) -> [usize; 2] {
        [4 * self.hidden, self.input + self.hidden]
    }

    pub fn forward(&self, w: &[f64], b: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
        let h = self.hidden;
        assert_eq!(x.len(), self.input);
        assert_eq!(h_prev.len(), h);
        assert_eq!(c_prev.len(), h);
        let mut z = Vec::with_capacity(self.input + h);
        z.extend_from_slice(x);
        z.extend_from_slice(h_prev);
        let mut a = vec![0.0; 4 * h];
        dense_forward(w, b, &z, &mut a);
        let i: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = a[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = a[3 * h..].iter().map(|&v| v.tanh()).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hv = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        LstmCache {
            z,
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            h: hv,
        }
    }

    /// Backpropagates `dh`/`dc` (gradients w.r.t. this step's outputs) into
    /// `dw`/`db`, returning `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        w: &[f64],
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let mut da = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            let d_f = dct * cache.c_prev[k];
            let d_i = dct * g;
            let d_g = dct * i;
            dc_prev[k] = dct * f;
            da[k] = d_i * i * (1.0 - i);
            da[h + k] = d_f * f * (1.0 - f);
            da[2 * h + k] = d_o * o * (1.0 - o);
            da[3 * h + k] = d_g * (1.0 - g * g);
        }
        let mut dz = vec![0.0; self.input + h];
        dense_backward(w, &cache.z, &da, dw, db, Some(&mut dz));
        let dh_prev = dz.split_off(self.input);
        (dz, dh_prev, dc_prev)
    }
}

/// Shape-checked single step: `(h, c)` from `x`, `h_prev`, `c_prev` and the
/// `<prefix>.w` / `<prefix>.b` entries of `params`.
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &ParamSet,
    prefix: &str,
) -> Result<(Tensor, Tensor)> {
    let wname = format!("{prefix}.w");
    let bname = format!("{prefix}.b");
    let (Some(w), Some(b)) = (params.get(&wname), params.get(&bname)) else {
        return Err(Error::invalid(format!("missing LSTM parameters under `{prefix}`")));
    };
    let &[rows, cols] = w.value.shape() else {
        return Err(Error::shape("lstm_step", "weight must be 2-D"));
    };
    if rows % 4 != 0 || b.value.len() != rows {
        return Err(Error::shape("lstm_step", format!("weight rows {rows}, bias {}", b.value.len())));
    }
    let hidden = rows / 4;
    if cols < hidden || cols - hidden != x.len() {
        return Err(Error::shape(
            "lstm_step",
            format!("input has {} entries, cell expects {}", x.len(), cols.saturating_sub(hidden)),
        ));
    }
    if h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::shape(
            "lstm_step",
            format!("state sizes {}/{} but hidden is {hidden}", h_prev.len(), c_prev.len()),
        ));
    }
    let cell = LstmCell {
        input: x.len(),
        hidden,
    };
    let cache = cell.forward(w.value.data(), b.value.data(), x.data(), h_prev.data(), c_prev.data());
    Ok((
        Tensor::new(vec![hidden], cache.h)?,
        Tensor::new(vec![hidden], cache.c)?,
    ))
}
