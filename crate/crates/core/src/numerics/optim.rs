use serde::{Deserialize, Serialize};

use super::params::{AdamState, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Apply one update using the gradients currently stored in `params`.
/// Gradients are left untouched; callers zero them before the next pass.
pub fn optimizer_step(params: &mut ParamSet, cfg: &OptimizerConfig) {
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (_, p) in params.iter_mut() {
                let grad = p.grad.data().to_vec();
                for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
                    *v -= cfg.lr * g;
                }
            }
        }
        OptimizerKind::Adam => {
            let names: Vec<String> = params.names().map(str::to_owned).collect();
            for name in names {
                let n = params.param(&name).value.len();
                let state = params
                    .adam
                    .entry(name.clone())
                    .or_insert_with(|| AdamState {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                        t: 0,
                    });
                state.t += 1;
                let t = state.t as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                let mut m = std::mem::take(&mut state.m);
                let mut v = std::mem::take(&mut state.v);
                let p = params.param_mut(&name);
                let grad = p.grad.data();
                let mut delta = vec![0.0; n];
                for i in 0..n {
                    let g = grad[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    delta[i] = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
                for (value, d) in p.value.data_mut().iter_mut().zip(&delta) {
                    *value -= d;
                }
                let state = params.adam.get_mut(&name).expect("state inserted above");
                state.m = m;
                state.v = v;
            }
        }
    }
}
