//! Adam and AdamW with bias-corrected moments, plus global-norm gradient
//! clipping. Moments are kept per trainable parameter in ParamSet order.

use crate::model::ParamSet;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Decoupled weight decay; used for pretraining and fine-tuning.
    AdamW,
    /// Plain Adam; used for the linear probe.
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    /// Moment buffers are allocated for every parameter, trainable or not,
    /// so indices track ParamSet order even if trainability changes.
    pub fn new(algorithm: Algorithm, lr: f64, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        OptimState {
            algorithm,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: match algorithm {
                Algorithm::AdamW => 0.01,
                Algorithm::Adam => 0.0,
            },
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update over all trainable parameters. `grads` is aligned with
    /// ParamSet order; `None` entries (untrainable or unreached parameters)
    /// are skipped. A NaN anywhere aborts before any parameter moves.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Vec<f64>>],
    ) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(TensorError::Shape(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.data.len() {
                    return Err(TensorError::Shape(format!(
                        "gradient length mismatch for {}",
                        p.name
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::Numeric(format!(
                        "non-finite gradient in {}",
                        p.name
                    )));
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                if self.algorithm == Algorithm::AdamW {
                    p.data[j] -= self.lr * self.weight_decay * p.data[j];
                }
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients down so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}
