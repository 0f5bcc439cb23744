use super::{ModelDims, TinyLM, Weights};
use crate::{Error, Result};

/// Adam moments and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// Global L2 norm before clipping.
    pub norm: f64,
    /// Factor applied to the gradient (1 when no clipping happened).
    pub scale: f64,
}

impl AdamState {
    pub fn new(dims: ModelDims) -> Self {
        Self {
            m: Weights::zeros(dims),
            v: Weights::zeros(dims),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Clips the global gradient norm to `clip_norm` (disabled when
    /// `clip_norm <= 0`) and applies one bias-corrected Adam update.
    pub fn update(&mut self, model: &mut TinyLM, grads: &Weights, lr: f64, clip_norm: f64) -> Result<GradReport> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let norm = grads.sum_squares().sqrt();
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);

        let params = model.weights.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        if let Some(name) = model.weights.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!("{name} (after update)")));
        }
        Ok(GradReport { norm, scale })
    }
}
