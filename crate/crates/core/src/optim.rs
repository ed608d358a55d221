//! Optimizer and learning-rate schedule: adaptive moments with decoupled
//! weight decay, and the half-cosine decay used for every run.

use crate::network::{ModelGrads, ModelState};
use crate::num::Scalar;

/// Half-cosine decay: base_lr at step 0, base_lr/2 at total/2, 0 at total.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    if step == total_steps {
        return 0.0;
    }
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

/// Adam with decoupled weight decay. Moments are kept per parameter slice
/// in the model's canonical order.
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(model: &ModelState<F>, weight_decay: f64) -> Self {
        let mut m = Vec::new();
        model.visit_params(|_, s| m.push(vec![F::zero(); s.len()]));
        let v = m.clone();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            t: 0,
            m,
            v,
        }
    }

    /// One update with the given learning rate:
    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    pub fn step(&mut self, model: &mut ModelState<F>, grads: &ModelGrads<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let eps = F::from_f64(self.epsilon);
        let lr_f = F::from_f64(lr);
        let wd = F::from_f64(self.weight_decay);
        let corr1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));

        let mut grad_slices: Vec<&[F]> = Vec::with_capacity(self.m.len());
        grads.visit(|_, s| grad_slices.push(s));

        let mut idx = 0;
        let m = &mut self.m;
        let v = &mut self.v;
        model.visit_params_mut(|_, params| {
            let g = grad_slices[idx];
            let mi = &mut m[idx];
            let vi = &mut v[idx];
            for j in 0..params.len() {
                mi[j] = b1 * mi[j] + (one - b1) * g[j];
                vi[j] = b2 * vi[j] + (one - b2) * g[j] * g[j];
                let m_hat = mi[j] / corr1;
                let v_hat = vi[j] / corr2;
                params[j] =
                    params[j] - lr_f * (m_hat / (v_hat.sqrt() + eps) + wd * params[j]);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_model;

    #[test]
    fn cosine_endpoints_are_exact() {
        let base = 1e-4;
        let total = 1000;
        assert_eq!(cosine_lr(0, total, base), base);
        assert_eq!(cosine_lr(total / 2, total, base), base / 2.0);
        assert_eq!(cosine_lr(total, total, base), 0.0);
        // Monotone decreasing.
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = cosine_lr(step, total, base);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_zero_decay_step_is_noop() {
        let mut model = init_model::<f64>(1);
        let before: Vec<f64> = {
            let mut v = Vec::new();
            model.visit_params(|_, s| v.extend_from_slice(s));
            v
        };
        let grads = crate::network::ModelGrads::zeros_like(&model);
        let mut opt = AdamW::new(&model, 0.0);
        opt.step(&mut model, &grads, 1e-3);
        let mut after = Vec::new();
        model.visit_params(|_, s| after.extend_from_slice(s));
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let mut model = init_model::<f64>(2);
        let grads = crate::network::ModelGrads::zeros_like(&model);
        let mut opt = AdamW::new(&model, 0.1);
        let mut before = Vec::new();
        model.visit_params(|_, s| before.extend_from_slice(s));
        opt.step(&mut model, &grads, 1.0);
        let mut after = Vec::new();
        model.visit_params(|_, s| after.extend_from_slice(s));
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((b - a * 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut model = init_model::<f64>(3);
        let mut grads = crate::network::ModelGrads::zeros_like(&model);
        grads.visit_mut(|_, s| {
            for v in s.iter_mut() {
                *v = 1.0;
            }
        });
        let mut before = Vec::new();
        model.visit_params(|_, s| before.extend_from_slice(s));
        let mut opt = AdamW::new(&model, 0.0);
        opt.step(&mut model, &grads, 1e-2);
        let mut after = Vec::new();
        model.visit_params(|_, s| after.extend_from_slice(s));
        for (a, b) in before.iter().zip(after.iter()) {
            assert!(b < a, "positive gradient must decrease the parameter");
        }
    }
}
