use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamWState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn check(&self, params: &ParamStore) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Invalid(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for ((_, p), (m, v)) in params.iter().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// One AdamW update of every trainable parameter: decoupled weight decay
/// `θ ← θ − lr·wd·θ`, then the bias-corrected Adam step. All gradients are
/// zeroed afterwards.
pub fn adamw_step(params: &mut ParamStore, state: &mut AdamWState, lr: f64, hyper: &AdamWHyper) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    let (b1, b2) = hyper.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (p, (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        if p.trainable {
            let theta = p.value.data_mut();
            let g = p.grad.data();
            for (((th, &g), m), v) in theta.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *th -= lr * hyper.weight_decay * *th;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *th -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
            }
        }
    }
    params.zero_grad();
    Ok(())
}
