//! Feedforward regression network: tanh hidden layers, inverted dropout
//! after the last hidden layer, a linear output unit, sum-of-squares loss,
//! analytic backpropagation and bias-corrected Adam updates.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Weights are stored `out x in`, so a layer maps a row batch `X` to
/// `X * W^T + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
}

/// Gradient (or any other tensor) with the same shape as [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub layers: Vec<Layer>,
}

fn check_chain(layers: &[Layer]) -> Result<()> {
    for (l, w) in layers.windows(2).enumerate() {
        if w[0].outputs() != w[1].inputs() {
            return Err(Error::Shape(format!(
                "layer {l} emits {} values but layer {} expects {}",
                w[0].outputs(),
                l + 1,
                w[1].inputs()
            )));
        }
    }
    for (l, layer) in layers.iter().enumerate() {
        if layer.bias.len() != layer.outputs() {
            return Err(Error::Shape(format!("layer {l} bias length mismatch")));
        }
    }
    Ok(())
}

impl ModelParams {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(inputs: usize, hidden: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout_rate} outside [0,1)"
            )));
        }
        if inputs == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        let mut rng = seed::rng(seed, "init", &[]);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                layer
                    .weights
                    .mapv_inplace(|_| rng.random_range(-bound..=bound));
                layer
                    .bias
                    .mapv_inplace(|_| rng.random_range(-bound..=bound));
                layer
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout_rate} outside [0,1)"
            )));
        }
        check_chain(&layers)?;
        if layers.last().map(Layer::outputs) != Some(1) {
            return Err(Error::Shape("output layer must have one unit".into()));
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Widths from input to output, e.g. `[37, 16, 16, 1]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    /// Index of the layer whose output is dropped, if any hidden layer exists.
    pub fn dropout_layer_index(&self) -> Option<usize> {
        (self.layers.len() >= 2).then(|| self.layers.len() - 2)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn zeros_like(&self) -> ParamTensor {
        ParamTensor {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    /// Row-major weights then bias, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.layers, flat)
    }

    fn same_shape(&self, other: &[Layer]) -> bool {
        self.layers.len() == other.len()
            && self
                .layers
                .iter()
                .zip(other)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }
}

impl ParamTensor {
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn same_shape(&self, other: &ParamTensor) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamTensor) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

fn unflatten(layers: &mut [Layer], flat: &[f64]) -> Result<()> {
    let need: usize = layers.iter().map(Layer::num_params).sum();
    if flat.len() != need {
        return Err(Error::Shape(format!(
            "expected {need} values, got {}",
            flat.len()
        )));
    }
    let mut it = flat.iter().copied();
    for l in layers {
        l.weights
            .iter_mut()
            .for_each(|w| *w = it.next().unwrap_or_default());
        l.bias
            .iter_mut()
            .for_each(|b| *b = it.next().unwrap_or_default());
    }
    Ok(())
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// Input to each layer (after dropout for the output layer).
    inputs: Vec<Array2<f64>>,
    /// Hidden activations before dropout, one per hidden layer.
    hidden: Vec<Array2<f64>>,
    mask: Option<Array2<f64>>,
    output: Array1<f64>,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed, "dropout", &[]);
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

fn run(params: &ModelParams, x: ArrayView2<f64>, training: bool, seed: u64) -> Result<Trace> {
    if x.ncols() != params.input_width() {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            params.input_width()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut hidden = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut mask = None;
    let mut current = x.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = current.dot(&layer.weights.t());
        z += &layer.bias;
        inputs.push(current);
        if l + 1 == n_layers {
            let output = z.index_axis_move(Axis(1), 0);
            return Ok(Trace {
                inputs,
                hidden,
                mask,
                output,
            });
        }
        z.mapv_inplace(f64::tanh);
        hidden.push(z.clone());
        if training && params.dropout_rate > 0.0 && Some(l) == params.dropout_layer_index() {
            let m = dropout_mask(z.nrows(), z.ncols(), params.dropout_rate, seed);
            z *= &m;
            mask = Some(m);
        }
        current = z;
    }
    unreachable!("model has at least one layer")
}

/// Network output, one value per row of `x`. Dropout is active only when
/// `training` is set; its mask is a pure function of `rng_seed`.
pub fn forward(
    params: &ModelParams,
    x: ArrayView2<f64>,
    training: bool,
    rng_seed: u64,
) -> Result<Array1<f64>> {
    Ok(run(params, x, training, rng_seed)?.output)
}

pub fn predict(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    forward(params, x, false, 0)
}

fn check_labels(x: ArrayView2<f64>, y: &Array1<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Sum (not mean) of squared residuals with dropout disabled.
pub fn loss(params: &ModelParams, x: ArrayView2<f64>, y: &Array1<f64>) -> Result<f64> {
    check_labels(x, y)?;
    let pred = predict(params, x)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum())
}

/// Sum-of-squares loss of the training-mode forward pass with the given mask seed.
pub fn training_loss(
    params: &ModelParams,
    x: ArrayView2<f64>,
    y: &Array1<f64>,
    mask_seed: u64,
) -> Result<f64> {
    check_labels(x, y)?;
    let pred = forward(params, x, true, mask_seed)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum())
}

/// Analytic gradient of the sum-of-squares loss of the training-mode
/// forward pass (dropout mask drawn from `mask_seed`).
pub fn gradient(
    params: &ModelParams,
    x: ArrayView2<f64>,
    y: &Array1<f64>,
    mask_seed: u64,
) -> Result<(ParamTensor, f64)> {
    check_labels(x, y)?;
    let trace = run(params, x, true, mask_seed)?;
    let residual = &trace.output - y;
    let loss = residual.iter().map(|r| r * r).sum();

    let n_layers = params.layers.len();
    let mut grads = params.zeros_like();
    // dLoss/dz of the output layer, as an N x 1 column
    let mut delta = (residual * 2.0).insert_axis(Axis(1));
    for l in (0..n_layers).rev() {
        let input = &trace.inputs[l];
        grads.layers[l].weights = delta.t().dot(input);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut d_act = delta.dot(&params.layers[l].weights);
        if l == n_layers - 1 {
            if let Some(m) = &trace.mask {
                d_act *= m;
            }
        }
        let h = &trace.hidden[l - 1];
        d_act.zip_mut_with(h, |d, &a| *d *= 1.0 - a * a);
        delta = d_act;
    }
    Ok((grads, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    /// Base step size.
    pub lambda: f64,
    pub gamma_eta: f64,
    pub gamma_delta: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            gamma_eta: 0.9,
            gamma_delta: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let decay_ok = |g: f64| (0.0..1.0).contains(&g);
        if !decay_ok(self.gamma_eta) || !decay_ok(self.gamma_delta) {
            return Err(Error::InvalidArgument(
                "Adam decays must lie in [0,1)".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(
                "Adam step and epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub eta: ParamTensor,
    pub delta: ParamTensor,
    pub tau: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        Self {
            config,
            eta: params.zeros_like(),
            delta: params.zeros_like(),
            tau: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` along `grad`.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ModelParams,
    grad: &ParamTensor,
) -> Result<()> {
    if !params.same_shape(&grad.layers) || !grad.same_shape(&state.eta) {
        return Err(Error::Shape(
            "gradient, moments and parameters differ in shape".into(),
        ));
    }
    let c = state.config;
    let t = (state.tau + 1) as i32;
    let step = c.lambda * (1.0 - c.gamma_delta.powi(t)).sqrt() / (1.0 - c.gamma_eta.powi(t));
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grad.layers)
        .zip(&mut state.eta.layers)
        .zip(&mut state.delta.layers)
    {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = c.gamma_eta * *m + (1.0 - c.gamma_eta) * g;
            *v = c.gamma_delta * *v + (1.0 - c.gamma_delta) * g * g;
            *p -= step * *m / (v.sqrt() + c.epsilon);
        };
        ndarray::Zip::from(&mut p.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    state.tau += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> ModelParams {
        // 2 inputs -> 1 tanh unit -> linear output
        ModelParams::from_layers(
            vec![
                Layer {
                    weights: array![[1.0, 1.0]],
                    bias: array![0.0],
                },
                Layer {
                    weights: array![[2.0]],
                    bias: array![1.0],
                },
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_forward() {
        let out = predict(&tiny(), array![[0.5, -0.5]].view()).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut p = ModelParams::init(4, &[3, 3], 0.2, 1).unwrap();
        let zeros = vec![0.0; p.num_params()];
        p.set_flat(&zeros).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 3 + j) as f64 - 4.0);
        assert!(forward(&p, x.view(), true, 9)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn tanh_saturates() {
        let mut p = tiny();
        p.layers[0].weights = array![[10.0, 10.0]];
        let out = predict(&p, array![[1.0, 0.0]].view()).unwrap();
        // hidden unit at tanh(10) ~ 1 so output ~ 2 + 1
        assert!((out[0] - 3.0).abs() < 2.0 * 1e-6);
    }

    #[test]
    fn loss_is_sum_of_squares() {
        let p = tiny();
        let x = array![[0.5, -0.5], [0.5, -0.5]];
        assert_eq!(loss(&p, x.view(), &array![1.0, 1.0]).unwrap(), 0.0);
        // predictions are 1.0; residuals 3 and 4
        assert!((loss(&p, x.view(), &array![-2.0, -3.0]).unwrap() - 25.0).abs() < 1e-12);
        assert!(
            (loss(&p, x.slice(ndarray::s![0..1, ..]), &array![1.5]).unwrap() - 0.25).abs() < 1e-12
        );
    }

    #[test]
    fn shape_errors() {
        let p = tiny();
        assert!(matches!(
            predict(&p, array![[1.0, 2.0, 3.0]].view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            loss(&p, array![[1.0, 2.0]].view(), &array![1.0, 2.0]),
            Err(Error::Shape(_))
        ));
        let bad = vec![Layer::zeros(2, 3), Layer::zeros(2, 1)];
        assert!(ModelParams::from_layers(bad, 0.0).is_err());
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let p = tiny();
        let x = array![[0.5, -0.5]];
        let (g, l) = gradient(&p, x.view(), &array![1.0], 0).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn output_bias_gradient_is_linear_in_residual() {
        let p = ModelParams::init(3, &[4], 0.0, 5).unwrap();
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]];
        let pred = predict(&p, x.view()).unwrap();
        let r = array![0.7, -0.2];
        let (g1, _) = gradient(&p, x.view(), &(&pred - &r), 0).unwrap();
        let (g2, _) = gradient(&p, x.view(), &(&pred - &(&r * 2.0)), 0).unwrap();
        let b1 = g1.layers.last().unwrap().bias[0];
        let b2 = g2.layers.last().unwrap().bias[0];
        assert!((b1 - 2.0 * 0.5).abs() < 1e-12);
        assert!((b2 - 2.0 * b1).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_has_magnitude_lambda() {
        let mut p = ModelParams::from_layers(
            vec![Layer {
                weights: array![[0.0]],
                bias: array![0.0],
            }],
            0.0,
        )
        .unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let mut g = p.zeros_like();
        g.layers[0].weights[[0, 0]] = 0.3;
        adam_step(&mut st, &mut p, &g).unwrap();
        assert!((p.layers[0].weights[[0, 0]] + 0.01).abs() < 1e-7);
        assert_eq!(p.layers[0].bias[0], 0.0);
        assert_eq!(st.tau, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ModelParams::init(3, &[2], 0.0, 2).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let g = p.zeros_like();
        for _ in 0..3 {
            adam_step(&mut st, &mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn flat_layout_is_row_major_by_layer() {
        let p = tiny();
        assert_eq!(p.to_flat(), vec![1.0, 1.0, 0.0, 2.0, 1.0]);
        assert_eq!(p.layer_sizes(), vec![2, 1, 1]);
        assert_eq!(p.dropout_layer_index(), Some(0));
    }
}
