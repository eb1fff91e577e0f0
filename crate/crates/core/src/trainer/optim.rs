use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderGrads, EncoderParams};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments, laid out like the parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
}

/// Scalar summary written next to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        let shapes = [params.w1t.len(), params.b1.len(), params.w2.len(), params.b2.len()];
        Self {
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            m: shapes.map(|n| vec![0.0; n]),
            v: shapes.map(|n| vec![0.0; n]),
        }
    }

    pub fn summary(&self) -> OptimizerSummary {
        OptimizerSummary {
            step: self.step,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

struct Update {
    lr: f64,
    decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl Update {
    #[inline]
    fn apply(&self, p: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *p *= self.decay;
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.bc1;
        let v_hat = *v / self.bc2;
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

/// One AdamW step with bias correction and decoupled weight decay (`p *= 1 - lr * wd` first).
///
/// Parameters without a gradient entry are updated with a zero gradient.
pub fn adamw_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight decay must be non-negative, got {weight_decay}")));
    }
    if grads.b1.len() != params.b1.len() || grads.w2.len() != params.w2.len() || grads.b2.len() != params.b2.len() {
        return Err(Error::Shape("gradients do not match parameter shapes".into()));
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { tensor });
    }
    state.step += 1;
    let t = state.step as i32;
    let up = Update {
        lr,
        decay: 1.0 - lr * weight_decay,
        beta1: state.beta1,
        beta2: state.beta2,
        eps: state.eps,
        bc1: 1.0 - state.beta1.powi(t),
        bc2: 1.0 - state.beta2.powi(t),
    };

    let hidden = params.hidden();
    let zeros = vec![0.0; hidden];
    let [m1, mb1, m2, mb2] = &mut state.m;
    let [v1, vb1, v2, vb2] = &mut state.v;
    for (k, ((p, m), v)) in params
        .w1t
        .chunks_mut(hidden)
        .zip(m1.chunks_mut(hidden))
        .zip(v1.chunks_mut(hidden))
        .enumerate()
    {
        let g = grads.w1.get(&(k as u32)).unwrap_or(&zeros);
        for j in 0..hidden {
            up.apply(&mut p[j], &mut m[j], &mut v[j], g[j]);
        }
    }
    for (p, m, v, g) in [
        (&mut params.b1, mb1, vb1, &grads.b1),
        (&mut params.w2, m2, v2, &grads.w2),
        (&mut params.b2, mb2, vb2, &grads.b2),
    ] {
        for i in 0..p.len() {
            up.apply(&mut p[i], &mut m[i], &mut v[i], g[i]);
        }
    }
    if grads.w1.keys().any(|&k| k as usize >= params.vocab()) {
        return Err(Error::Shape("W1 gradient bucket out of range".into()));
    }
    Ok(())
}
