//! Fully-connected regression head mapping a pooled feature vector to a
//! scalar MOS prediction.
//!
//! Hidden layers are rectified, the output layer is linear, and inverted
//! dropout acts on the input vector only. The RMSE objective is
//! differentiated directly; all arithmetic is f64 so the analytic gradients
//! can be checked against central finite differences.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};
use crate::sampler::RngStream;

pub const DEFAULT_HIDDEN_DIMS: &[usize] = &[512, 128];
pub const DEFAULT_DROPOUT_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out x in
    pub weights: Array2<f64>,
    /// out
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub dropout_rate: f64,
}

impl RegressorParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(VraError::InvalidConfig("regressor has no layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(VraError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let mut expected_in = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.ncols() != expected_in {
                return Err(VraError::ShapeMismatch {
                    context: format!("layer {i} input"),
                    expected: expected_in,
                    found: layer.weights.ncols(),
                });
            }
            if layer.biases.len() != layer.weights.nrows() {
                return Err(VraError::ShapeMismatch {
                    context: format!("layer {i} bias"),
                    expected: layer.weights.nrows(),
                    found: layer.biases.len(),
                });
            }
            if layer.weights.iter().chain(layer.biases.iter()).any(|v| !v.is_finite()) {
                return Err(VraError::NonFinite {
                    context: format!("layer {i} parameters"),
                });
            }
            expected_in = layer.weights.nrows();
        }
        if expected_in != 1 {
            return Err(VraError::ShapeMismatch {
                context: "final layer output".into(),
                expected: 1,
                found: expected_in,
            });
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Layer output sizes, e.g. `[512, 128, 1]` for the default head.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.nrows()).collect()
    }
}

/// Glorot-uniform initialization: weights uniform in
/// +/- sqrt(6 / (fan_in + fan_out)), biases zero.
pub fn init_params(
    input_dim: usize,
    hidden_dims: &[usize],
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<RegressorParams> {
    if input_dim == 0 {
        return Err(VraError::InvalidConfig("input_dim must be >= 1".into()));
    }
    if hidden_dims.contains(&0) {
        return Err(VraError::InvalidConfig("hidden dims must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(VraError::InvalidConfig(format!(
            "dropout rate {dropout_rate} outside [0, 1)"
        )));
    }

    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden_dims);
    dims.push(1);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
            (rng.next_f64() * 2.0 - 1.0) * bound
        });
        layers.push(Layer {
            weights,
            biases: Array1::zeros(fan_out),
        });
    }
    let params = RegressorParams {
        layers,
        input_dim,
        dropout_rate,
    };
    params.validate()?;
    Ok(params)
}

/// Inverted-dropout mask: each component is 0 (dropped) or 1/(1-p) (kept).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn identity(dim: usize) -> DropoutMask {
        DropoutMask {
            scale: vec![1.0; dim],
        }
    }

    pub fn sample(dim: usize, rate: f64, rng: &mut RngStream) -> DropoutMask {
        if rate == 0.0 {
            return DropoutMask::identity(dim);
        }
        let keep = 1.0 - rate;
        let scale = (0..dim)
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        DropoutMask { scale }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().zip(&self.scale).map(|(v, s)| v * s))
    }
}

fn check_input(params: &RegressorParams, x: &Array1<f64>) -> Result<()> {
    if x.len() != params.input_dim {
        return Err(VraError::ShapeMismatch {
            context: "regressor input".into(),
            expected: params.input_dim,
            found: x.len(),
        });
    }
    Ok(())
}

struct ForwardTrace {
    /// activations[0] is the (possibly masked) input; activations[l+1] is
    /// layer l's post-activation output.
    activations: Vec<Array1<f64>>,
    /// pre-activation values per layer, kept for the rectifier subgradient.
    pre_activations: Vec<Array1<f64>>,
}

fn forward_trace(params: &RegressorParams, x: &Array1<f64>, mask: &DropoutMask) -> ForwardTrace {
    let n_layers = params.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut pre_activations = Vec::with_capacity(n_layers);
    activations.push(mask.apply(x));
    for (i, layer) in params.layers.iter().enumerate() {
        let z = layer.weights.dot(activations.last().unwrap()) + &layer.biases;
        let a = if i + 1 < n_layers {
            z.mapv(|v| v.max(0.0))
        } else {
            z.clone()
        };
        pre_activations.push(z);
        activations.push(a);
    }
    ForwardTrace {
        activations,
        pre_activations,
    }
}

/// Forward pass for one input. Train mode draws a fresh dropout mask from
/// `rng`; eval mode is deterministic.
pub fn forward(
    params: &RegressorParams,
    x: &Array1<f64>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<f64> {
    check_input(params, x)?;
    let mask = match mode {
        Mode::Train => DropoutMask::sample(x.len(), params.dropout_rate, rng),
        Mode::Eval => DropoutMask::identity(x.len()),
    };
    Ok(forward_trace(params, x, &mask).activations.last().unwrap()[0])
}

/// Deterministic eval-mode forward pass.
pub fn predict(params: &RegressorParams, x: &Array1<f64>) -> Result<f64> {
    check_input(params, x)?;
    let mask = DropoutMask::identity(x.len());
    Ok(forward_trace(params, x, &mask).activations.last().unwrap()[0])
}

/// RMSE training objective: sqrt(mean squared prediction error).
pub fn loss_rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    crate::metrics::rmse_metric(preds, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &RegressorParams) -> Gradients {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.mapv_inplace(|v| v * factor);
            layer.biases.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for layer in &self.layers {
            if layer
                .weights
                .iter()
                .chain(layer.biases.iter())
                .any(|v| !v.is_finite())
            {
                return Err(VraError::NonFiniteGradient {
                    context: context.to_owned(),
                });
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Batch loss under fixed dropout masks. Shared by `backward` and the
/// finite-difference tests so both differentiate the same function.
pub fn batch_loss(
    params: &RegressorParams,
    inputs: &[Array1<f64>],
    labels: &[f64],
    masks: &[DropoutMask],
) -> Result<f64> {
    check_batch(params, inputs, labels, masks)?;
    let preds: Vec<f64> = inputs
        .iter()
        .zip(masks)
        .map(|(x, m)| forward_trace(params, x, m).activations.last().unwrap()[0])
        .collect();
    loss_rmse(&preds, labels)
}

fn check_batch(
    params: &RegressorParams,
    inputs: &[Array1<f64>],
    labels: &[f64],
    masks: &[DropoutMask],
) -> Result<()> {
    if inputs.is_empty() {
        return Err(VraError::EmptyInput("backward over an empty batch"));
    }
    if inputs.len() != labels.len() {
        return Err(VraError::LengthMismatch {
            left: inputs.len(),
            right: labels.len(),
        });
    }
    if inputs.len() != masks.len() {
        return Err(VraError::LengthMismatch {
            left: inputs.len(),
            right: masks.len(),
        });
    }
    for x in inputs {
        check_input(params, x)?;
    }
    Ok(())
}

/// Analytic reverse-mode gradients of the batch RMSE loss with respect to
/// every weight and bias. The rectifier subgradient at 0 is 0; a zero-loss
/// batch yields exactly zero gradients.
pub fn backward(
    params: &RegressorParams,
    inputs: &[Array1<f64>],
    labels: &[f64],
    masks: &[DropoutMask],
) -> Result<(f64, Gradients)> {
    check_batch(params, inputs, labels, masks)?;
    let n_layers = params.layers.len();
    let batch = inputs.len() as f64;

    let traces: Vec<ForwardTrace> = inputs
        .iter()
        .zip(masks)
        .map(|(x, m)| forward_trace(params, x, m))
        .collect();
    let preds: Vec<f64> = traces
        .iter()
        .map(|t| t.activations.last().unwrap()[0])
        .collect();
    let loss = loss_rmse(&preds, labels)?;

    let mut grads = Gradients::zeros_like(params);
    if loss == 0.0 {
        return Ok((loss, grads));
    }

    // d(loss)/d(pred_i) for loss = sqrt(mean_i (pred_i - label_i)^2)
    for (i, trace) in traces.iter().enumerate() {
        let dpred = (preds[i] - labels[i]) / (batch * loss);
        let mut delta = Array1::from_elem(1, dpred);
        for l in (0..n_layers).rev() {
            let grad_layer = &mut grads.layers[l];
            let a_prev = &trace.activations[l];
            for (row, &d) in delta.iter().enumerate() {
                grad_layer.biases[row] += d;
                let mut w_row = grad_layer.weights.row_mut(row);
                w_row.scaled_add(d, a_prev);
            }
            if l > 0 {
                let back = params.layers[l].weights.t().dot(&delta);
                let z_prev = &trace.pre_activations[l - 1];
                delta = Array1::from_iter(
                    back.iter()
                        .zip(z_prev.iter())
                        .map(|(&b, &z)| if z > 0.0 { b } else { 0.0 }),
                );
            }
        }
    }
    grads.check_finite("backward pass")?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::make_rng;

    fn rng(tag: &str) -> RngStream {
        make_rng(0xA11CE, 0, tag)
    }

    fn random_input(params: &RegressorParams, seed: u64) -> Array1<f64> {
        let mut r = make_rng(seed, 0, "input");
        Array1::from_shape_fn(params.input_dim, |_| r.next_f64() * 2.0 - 1.0)
    }

    #[test]
    fn empty_hidden_list_gives_single_linear_layer() {
        let p = init_params(8, &[], 0.0, &mut rng("init")).unwrap();
        assert_eq!(p.n_layers(), 1);
        assert_eq!(p.layers[0].weights.shape(), &[1, 8]);
        assert_eq!(p.layer_dims(), vec![1]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(16, &[32, 8], 0.1, &mut rng("same")).unwrap();
        let b = init_params(16, &[32, 8], 0.1, &mut rng("same")).unwrap();
        assert_eq!(a, b);
        let c = init_params(16, &[32, 8], 0.1, &mut rng("other")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_biases() {
        let p = init_params(4, &[8], 0.0, &mut rng("bounds")).unwrap();
        let bounds = [(4usize, 8usize), (8, 1)];
        for (layer, (fan_in, fan_out)) in p.layers.iter().zip(bounds) {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
        // Draws should actually exercise the range, not cluster at zero.
        let spread = p.layers[0].weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(spread > 0.3 * (6.0f64 / 12.0).sqrt());
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(init_params(0, &[4], 0.0, &mut rng("z")).is_err());
        assert!(init_params(4, &[0], 0.0, &mut rng("z")).is_err());
        assert!(init_params(4, &[4], 1.0, &mut rng("z")).is_err());
        assert!(init_params(4, &[4], -0.1, &mut rng("z")).is_err());
    }

    #[test]
    fn constant_network_outputs_its_bias() {
        let mut p = init_params(6, &[4], 0.0, &mut rng("const")).unwrap();
        for layer in &mut p.layers {
            layer.weights.fill(0.0);
        }
        p.layers.last_mut().unwrap().biases[0] = 2.75;
        for seed in 0..5 {
            let x = random_input(&p, seed);
            assert_eq!(predict(&p, &x).unwrap(), 2.75);
        }
    }

    #[test]
    fn single_linear_layer_is_a_dot_product() {
        let mut p = init_params(3, &[], 0.0, &mut rng("dot")).unwrap();
        p.layers[0].weights = Array2::from_shape_vec((1, 3), vec![0.5, -1.0, 2.0]).unwrap();
        p.layers[0].biases[0] = 0.25;
        let x = Array1::from_vec(vec![2.0, 3.0, 0.5]);
        let expected = 0.5 * 2.0 - 1.0 * 3.0 + 2.0 * 0.5 + 0.25;
        assert_eq!(predict(&p, &x).unwrap(), expected);
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let p = init_params(10, &[6, 3], 0.0, &mut rng("nodrop")).unwrap();
        let x = random_input(&p, 7);
        let train = forward(&p, &x, Mode::Train, &mut rng("fwd")).unwrap();
        let eval = forward(&p, &x, Mode::Eval, &mut rng("fwd2")).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn eval_forward_is_bit_identical_across_calls() {
        let p = init_params(12, &[8], 0.1, &mut rng("det")).unwrap();
        let x = random_input(&p, 3);
        let first = predict(&p, &x).unwrap();
        for _ in 0..10 {
            assert_eq!(predict(&p, &x).unwrap().to_bits(), first.to_bits());
        }
    }

    #[test]
    fn input_dimension_mismatch_is_an_error() {
        let p = init_params(4, &[], 0.0, &mut rng("dim")).unwrap();
        let x = Array1::zeros(5);
        assert!(matches!(
            predict(&p, &x),
            Err(VraError::ShapeMismatch { expected: 4, found: 5, .. })
        ));
    }

    #[test]
    fn loss_trivial_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(loss_rmse(&a, &a).unwrap(), 0.0);
        let got = loss_rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((got - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dropout_mask_is_unbiased_in_expectation() {
        let mut r = rng("mask");
        let dim = 8;
        let n = 100_000;
        let mut sums = vec![0.0f64; dim];
        for _ in 0..n {
            let m = DropoutMask::sample(dim, 0.1, &mut r);
            for (s, v) in sums.iter_mut().zip(&m.scale) {
                *s += v;
            }
        }
        for s in sums {
            let mean = s / n as f64;
            assert!((mean - 1.0).abs() < 0.01, "mask mean {mean}");
        }
    }

    #[test]
    fn dropout_mask_values_are_zero_or_scaled() {
        let mut r = rng("maskvals");
        let m = DropoutMask::sample(1000, 0.1, &mut r);
        let keep = 1.0 / 0.9;
        assert!(m.scale.iter().all(|&v| v == 0.0 || v == keep));
        assert!(m.scale.contains(&0.0));
        assert!(m.scale.contains(&keep));
    }

    #[test]
    fn zero_loss_batch_has_zero_gradients() {
        let mut p = init_params(4, &[3], 0.0, &mut rng("zl")).unwrap();
        for layer in &mut p.layers {
            layer.weights.fill(0.0);
            layer.biases.fill(0.0);
        }
        let inputs = vec![random_input(&p, 1), random_input(&p, 2)];
        let labels = vec![0.0, 0.0];
        let masks = vec![DropoutMask::identity(4), DropoutMask::identity(4)];
        let (loss, grads) = backward(&p, &inputs, &labels, &masks).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn single_sample_linear_gradient_matches_closed_form() {
        // For B=1 the loss is |w.x + b - y|, so d/dw_j = sign(residual) * x_j.
        let mut p = init_params(3, &[], 0.0, &mut rng("cf")).unwrap();
        p.layers[0].weights = Array2::from_shape_vec((1, 3), vec![0.2, -0.4, 0.1]).unwrap();
        p.layers[0].biases[0] = 0.05;
        for (label, sign) in [(-0.5, 1.0), (5.0, -1.0)] {
            let x = Array1::from_vec(vec![1.5, -2.0, 0.5]);
            let masks = vec![DropoutMask::identity(3)];
            let (_, grads) = backward(&p, std::slice::from_ref(&x), &[label], &masks).unwrap();
            for j in 0..3 {
                let expected = sign * x[j];
                assert!((grads.layers[0].weights[(0, j)] - expected).abs() < 1e-12);
            }
            assert!((grads.layers[0].biases[0] - sign).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradients_match_central_finite_differences() {
        let archs: [&[usize]; 3] = [&[], &[5], &[6, 4]];
        for (ai, hidden) in archs.iter().enumerate() {
            for seed in 0..2u64 {
                let mut r = make_rng(seed, ai as u32, "gradcheck");
                let p = init_params(6, hidden, 0.1, &mut r).unwrap();
                let inputs: Vec<Array1<f64>> =
                    (0..3).map(|i| random_input(&p, seed * 10 + i)).collect();
                let labels = vec![3.1, 2.4, 4.2];
                let masks: Vec<DropoutMask> = (0..3)
                    .map(|_| DropoutMask::sample(6, 0.1, &mut r))
                    .collect();
                let (_, analytic) = backward(&p, &inputs, &labels, &masks).unwrap();
                let max_rel = max_fd_rel_error(&p, &inputs, &labels, &masks, &analytic);
                assert!(max_rel < 1e-4, "arch {hidden:?} seed {seed}: {max_rel}");
            }
        }
    }

    fn max_fd_rel_error(
        params: &RegressorParams,
        inputs: &[Array1<f64>],
        labels: &[f64],
        masks: &[DropoutMask],
        analytic: &Gradients,
    ) -> f64 {
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for l in 0..params.layers.len() {
            let (rows, cols) = params.layers[l].weights.dim();
            for r in 0..rows {
                for c in 0..cols + 1 {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    if c < cols {
                        plus.layers[l].weights[(r, c)] += h;
                        minus.layers[l].weights[(r, c)] -= h;
                    } else {
                        plus.layers[l].biases[r] += h;
                        minus.layers[l].biases[r] -= h;
                    }
                    let lp = batch_loss(&plus, inputs, labels, masks).unwrap();
                    let lm = batch_loss(&minus, inputs, labels, masks).unwrap();
                    let numeric = (lp - lm) / (2.0 * h);
                    let a = if c < cols {
                        analytic.layers[l].weights[(r, c)]
                    } else {
                        analytic.layers[l].biases[r]
                    };
                    // The floor keeps finite-difference noise on near-zero
                    // entries from dominating the relative error.
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        max_rel
    }

    #[test]
    fn gradient_accumulation_order_is_sample_index_order() {
        let p = init_params(5, &[4], 0.0, &mut rng("order")).unwrap();
        let inputs: Vec<Array1<f64>> = (0..4).map(|i| random_input(&p, i)).collect();
        let labels = vec![1.0, 2.0, 3.0, 4.0];
        let masks: Vec<DropoutMask> = (0..4).map(|_| DropoutMask::identity(5)).collect();
        let (_, a) = backward(&p, &inputs, &labels, &masks).unwrap();
        let (_, b) = backward(&p, &inputs, &labels, &masks).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_shape_errors() {
        let p = init_params(4, &[], 0.0, &mut rng("be")).unwrap();
        let x = vec![random_input(&p, 0)];
        assert!(matches!(
            backward(&p, &[], &[], &[]),
            Err(VraError::EmptyInput(_))
        ));
        assert!(matches!(
            backward(&p, &x, &[1.0, 2.0], &[DropoutMask::identity(4)]),
            Err(VraError::LengthMismatch { .. })
        ));
    }
}
