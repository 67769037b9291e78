//! AdamW with decoupled weight decay, plus gradient accumulation by
//! micro-batch averaging.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};
use crate::regressor::{Gradients, Layer, RegressorParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(VraError::InvalidConfig(format!(
                "adamw betas ({}, {}) outside [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(VraError::InvalidConfig(format!("adamw eps {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(VraError::InvalidConfig(format!(
                "adamw weight decay {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// First/second moments, step counter, and the current learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(params: &RegressorParams, learning_rate: f64) -> OptimizerState {
        OptimizerState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
            learning_rate,
        }
    }
}

/// One AdamW step:
///   m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
///   t <- t + 1 (before bias correction)
///   p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps) - lr * wd * p
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut RegressorParams,
    grads: &Gradients,
    cfg: &AdamWConfig,
) -> Result<()> {
    grads.check_finite("adamw step")?;
    if grads.layers.len() != params.layers.len() {
        return Err(VraError::ShapeMismatch {
            context: "gradient layer count".into(),
            expected: params.layers.len(),
            found: grads.layers.len(),
        });
    }

    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let lr = state.learning_rate;

    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        update_tensor2(&mut p.weights, &g.weights, &mut m.weights, &mut v.weights, cfg, bc1, bc2, lr);
        update_tensor1(&mut p.biases, &g.biases, &mut m.biases, &mut v.biases, cfg, bc1, bc2, lr);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor2(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    cfg: &AdamWConfig,
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| update_scalar(p, g, m, v, cfg, bc1, bc2, lr));
}

#[allow(clippy::too_many_arguments)]
fn update_tensor1(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    cfg: &AdamWConfig,
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| update_scalar(p, g, m, v, cfg, bc1, bc2, lr));
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update_scalar(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, cfg: &AdamWConfig, bc1: f64, bc2: f64, lr: f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * (m_hat / (v_hat.sqrt() + cfg.eps)) + lr * cfg.weight_decay * *p;
}

/// Accumulated gradient for one optimizer step: the mean of the group's
/// micro-batch gradients, so the effective step size does not depend on the
/// accumulation count.
pub fn mean_gradients(group: &[Gradients]) -> Result<Gradients> {
    let first = group
        .first()
        .ok_or(VraError::EmptyInput("empty accumulation group"))?;
    let mut acc = Gradients {
        layers: first
            .layers
            .iter()
            .map(|l| Layer {
                weights: l.weights.clone(),
                biases: l.biases.clone(),
            })
            .collect(),
    };
    for g in &group[1..] {
        acc.add_assign(g);
    }
    acc.scale(1.0 / group.len() as f64);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::init_params;
    use crate::sampler::make_rng;

    fn small_params(seed: u64) -> RegressorParams {
        let mut rng = make_rng(seed, 0, "optim-test");
        init_params(4, &[3], 0.0, &mut rng).unwrap()
    }

    fn random_grads(params: &RegressorParams, seed: u64) -> Gradients {
        let mut rng = make_rng(seed, 1, "optim-grads");
        let mut g = Gradients::zeros_like(params);
        for layer in &mut g.layers {
            layer.weights.mapv_inplace(|_| rng.next_f64() * 2.0 - 1.0);
            layer.biases.mapv_inplace(|_| rng.next_f64() * 2.0 - 1.0);
        }
        g
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut params = small_params(1);
        let before = params.clone();
        let mut state = OptimizerState::new(&params, 1e-3);
        let zero = Gradients::zeros_like(&params);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        for _ in 0..5 {
            adamw_step(&mut state, &mut params, &zero, &cfg).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.m.max_abs(), 0.0);
        assert_eq!(state.v.max_abs(), 0.0);
        assert_eq!(state.t, 5);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_parameters() {
        let mut params = small_params(2);
        let before = params.clone();
        let lr = 1e-2;
        let mut state = OptimizerState::new(&params, lr);
        let zero = Gradients::zeros_like(&params);
        let cfg = AdamWConfig::default();
        adamw_step(&mut state, &mut params, &zero, &cfg).unwrap();
        for (after, orig) in params.layers.iter().zip(&before.layers) {
            for (a, o) in after.weights.iter().zip(orig.weights.iter()) {
                let expected = o - lr * cfg.weight_decay * o;
                assert!((a - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // Scalar parameter p=1 with gradient 1 at t=1 under the defaults.
        let mut params = RegressorParams {
            layers: vec![Layer {
                weights: Array2::from_elem((1, 1), 1.0),
                biases: Array1::zeros(1),
            }],
            input_dim: 1,
            dropout_rate: 0.0,
        };
        let lr = 2e-5;
        let mut state = OptimizerState::new(&params, lr);
        let mut grads = Gradients::zeros_like(&params);
        grads.layers[0].weights[(0, 0)] = 1.0;
        let cfg = AdamWConfig::default();
        adamw_step(&mut state, &mut params, &grads, &cfg).unwrap();

        // m=0.1, v=0.001; bias-corrected both become exactly 1 at t=1.
        let expected = 1.0 - lr * (1.0 / (1.0 + 1e-8)) - lr * 0.01 * 1.0;
        assert!((params.layers[0].weights[(0, 0)] - expected).abs() < 1e-18);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn multi_step_matches_scalar_oracle() {
        // Independent elementwise reimplementation of the update rule.
        let cfg = AdamWConfig::default();
        let lr = 1e-3;
        let mut p_oracle = 0.7f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;

        let mut params = RegressorParams {
            layers: vec![Layer {
                weights: Array2::from_elem((1, 1), 0.7),
                biases: Array1::zeros(1),
            }],
            input_dim: 1,
            dropout_rate: 0.0,
        };
        let mut state = OptimizerState::new(&params, lr);
        let mut rng = make_rng(3, 0, "oracle");

        for t in 1..=100u64 {
            let g = rng.next_f64() * 2.0 - 1.0;
            let mut grads = Gradients::zeros_like(&params);
            grads.layers[0].weights[(0, 0)] = g;
            adamw_step(&mut state, &mut params, &grads, &cfg).unwrap();

            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
            p_oracle -= lr * (m_hat / (v_hat.sqrt() + cfg.eps)) + lr * cfg.weight_decay * p_oracle;

            let got = params.layers[0].weights[(0, 0)];
            assert!((got - p_oracle).abs() < 1e-15, "step {t}: {got} vs {p_oracle}");
        }
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut params = small_params(5);
        let mut state = OptimizerState::new(&params, 1e-3);
        let cfg = AdamWConfig::default();
        for seed in 0..20 {
            let grads = random_grads(&params, seed);
            adamw_step(&mut state, &mut params, &grads, &cfg).unwrap();
        }
        for layer in &state.v.layers {
            assert!(layer.weights.iter().all(|&v| v >= 0.0));
            assert!(layer.biases.iter().all(|&v| v >= 0.0));
        }
        params.validate().unwrap();
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = small_params(6);
        let mut state = OptimizerState::new(&params, 1e-3);
        let mut grads = Gradients::zeros_like(&params);
        grads.layers[0].weights[(0, 0)] = f64::NAN;
        assert!(matches!(
            adamw_step(&mut state, &mut params, &grads, &AdamWConfig::default()),
            Err(VraError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn mean_of_identical_gradients_is_the_gradient() {
        let params = small_params(7);
        let g = random_grads(&params, 1);
        let group = vec![g.clone(), g.clone(), g.clone()];
        let mean = mean_gradients(&group).unwrap();
        for (a, b) in mean.layers.iter().zip(&g.layers) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singleton_group_is_identity() {
        let params = small_params(8);
        let g = random_grads(&params, 2);
        assert_eq!(mean_gradients(std::slice::from_ref(&g)).unwrap(), g);
    }

    #[test]
    fn mean_matches_independent_recomputation() {
        let params = small_params(9);
        let group: Vec<Gradients> = (0..8).map(|s| random_grads(&params, s)).collect();
        let mean = mean_gradients(&group).unwrap();
        for l in 0..params.layers.len() {
            for (idx, got) in mean.layers[l].weights.indexed_iter() {
                let manual: f64 =
                    group.iter().map(|g| g.layers[l].weights[idx]).sum::<f64>() / 8.0;
                assert!((got - manual).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(matches!(
            mean_gradients(&[]),
            Err(VraError::EmptyInput(_))
        ));
    }
}
