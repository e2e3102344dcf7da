//! Dense-network numerics for the autoencoder: forward passes, analytic
//! backpropagation through the energy normalization, Adam, and a
//! finite-difference gradient checker.
//!
//! The pipeline is fixed: one-hot message → encoder (ReLU hidden layers,
//! linear bottleneck of width `n`) → projection onto the radius-`sqrt(n)`
//! sphere → additive channel noise → decoder (ReLU hidden layers, softmax
//! output of width `M`).

use serde::{Deserialize, Serialize};

use crate::channel::SimRng;
use crate::error::{Error, Result};
use crate::uep::{LabelSet, Objective};

pub type Vector = Vec<f64>;

/// Denominator floor of the energy normalization.
pub const NORM_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply(self, pre: &[f64]) -> Vector {
        match self {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Linear => pre.to_vec(),
            Activation::Softmax => softmax(pre),
        }
    }
}

/// Affine map followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: Matrix,
    pub biases: Vector,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vector, activation: Activation) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::Dimension(format!(
                "{} weight rows but {} biases",
                weights.rows(),
                biases.len()
            )));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut SimRng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Self {
            weights: Matrix {
                rows: outputs,
                cols: inputs,
                data,
            },
            biases: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, input: &[f64]) -> Vector {
        self.weights
            .iter_rows()
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// Pre-activation for a one-hot input: column `hot` plus the bias.
    fn pre_activation_onehot(&self, hot: usize) -> Vector {
        (0..self.outputs())
            .map(|r| self.weights.get(r, hot) + self.biases[r])
            .collect()
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<LayerTrace> {
        if input.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                input.len()
            )));
        }
        let pre = self.pre_activation(input);
        let out = self.activation.apply(&pre);
        Ok(LayerTrace { pre, out })
    }
}

/// `activation(W x + b)`.
pub fn dense_forward(layer: &DenseLayer, input: &[f64]) -> Result<Vector> {
    Ok(layer.forward_cached(input)?.out)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vector = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn norm_denominator(norm: f64) -> f64 {
    if norm < NORM_FLOOR {
        norm + NORM_FLOOR
    } else {
        norm
    }
}

/// Projects `z` onto the sphere of radius `sqrt(n)`.
pub fn energy_normalize(z: &[f64], n: usize) -> Result<Vector> {
    if z.len() != n {
        return Err(Error::Dimension(format!("bottleneck width {} != n = {n}", z.len())));
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = (n as f64).sqrt() / norm_denominator(norm);
    Ok(z.iter().map(|v| v * scale).collect())
}

/// Vector-Jacobian product of [`energy_normalize`]:
/// `sqrt(n) (dx / d - (z . dx) z / (|z| d^2))` with `d` the floored norm.
pub fn energy_normalize_backward(z: &[f64], dx: &[f64]) -> Vector {
    let n = z.len() as f64;
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = norm_denominator(norm);
    let root_n = n.sqrt();
    let radial = if norm > 0.0 {
        z.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>() / (norm * d * d)
    } else {
        0.0
    };
    z.iter()
        .zip(dx)
        .map(|(zi, gi)| root_n * (gi / d - radial * zi))
        .collect()
}

/// Pre- and post-activation values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Vector,
    pub out: Vector,
}

/// Encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

impl MlpParams {
    /// Randomly initialized `M -> hidden_enc... -> n` encoder and
    /// `n -> hidden_dec... -> M` decoder.
    pub fn init(
        messages: usize,
        n: usize,
        hidden_encoder: &[usize],
        hidden_decoder: &[usize],
        rng: &mut SimRng,
    ) -> Result<Self> {
        if messages < 2 || n == 0 {
            return Err(Error::Config(format!("need M >= 2 and n >= 1, got M = {messages}, n = {n}")));
        }
        if hidden_encoder.iter().chain(hidden_decoder).any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        let stack = |widths: Vec<usize>, last: Activation, rng: &mut SimRng| {
            let layers = widths.len() - 1;
            (0..layers)
                .map(|l| {
                    let act = if l + 1 == layers { last } else { Activation::Relu };
                    DenseLayer::glorot(widths[l], widths[l + 1], act, rng)
                })
                .collect::<Vec<_>>()
        };
        let mut enc_widths = vec![messages];
        enc_widths.extend_from_slice(hidden_encoder);
        enc_widths.push(n);
        let mut dec_widths = vec![n];
        dec_widths.extend_from_slice(hidden_decoder);
        dec_widths.push(messages);
        let encoder = stack(enc_widths, Activation::Linear, rng);
        let decoder = stack(dec_widths, Activation::Softmax, rng);
        Ok(Self { encoder, decoder })
    }

    pub fn messages(&self) -> usize {
        self.encoder[0].inputs()
    }

    pub fn block_length(&self) -> usize {
        self.encoder.last().map_or(0, DenseLayer::outputs)
    }

    /// Checks the layer chain and the activation layout.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Dimension(msg));
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one layer".into());
        }
        for stack in [&self.encoder, &self.decoder] {
            for pair in stack.windows(2) {
                if pair[0].outputs() != pair[1].inputs() {
                    return bad(format!(
                        "layer widths do not chain: {} -> {}",
                        pair[0].outputs(),
                        pair[1].inputs()
                    ));
                }
            }
            for layer in &stack[..stack.len() - 1] {
                if layer.activation != Activation::Relu {
                    return bad("hidden layers must use ReLU".into());
                }
            }
            for layer in stack {
                if layer.biases.len() != layer.outputs() {
                    return bad("bias width mismatch".into());
                }
            }
        }
        let m = self.messages();
        let n = self.block_length();
        let last_dec = self.decoder.last().expect("non-empty");
        if self.encoder.last().expect("non-empty").activation != Activation::Linear {
            return bad("bottleneck must be linear".into());
        }
        if last_dec.activation != Activation::Softmax {
            return bad("decoder output must be softmax".into());
        }
        if self.decoder[0].inputs() != n || last_dec.outputs() != m {
            return bad(format!(
                "decoder maps {} -> {}, expected {n} -> {m}",
                self.decoder[0].inputs(),
                last_dec.outputs()
            ));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |layers: &[DenseLayer]| {
            layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    biases: vec![0.0; l.outputs()],
                    activation: l.activation,
                })
                .collect()
        };
        Self {
            encoder: zero(&self.encoder),
            decoder: zero(&self.decoder),
        }
    }

    /// All parameter tensors in a fixed order (per layer: weights, biases).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn param_mut(&mut self, mut flat: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if flat < t.len() {
                return &mut t[flat];
            }
            flat -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// Bottleneck output `z` and per-layer traces for message `m`.
    fn encoder_forward(&self, m: usize) -> Result<(Vec<LayerTrace>, Vector)> {
        if m >= self.messages() {
            return Err(Error::MessageOutOfRange {
                index: m,
                count: self.messages(),
            });
        }
        let mut traces = Vec::with_capacity(self.encoder.len());
        let first = &self.encoder[0];
        let pre = first.pre_activation_onehot(m);
        let out = first.activation.apply(&pre);
        traces.push(LayerTrace { pre, out });
        for layer in &self.encoder[1..] {
            let input = &traces.last().expect("non-empty").out;
            let t = layer.forward_cached(input)?;
            traces.push(t);
        }
        let z = traces.last().expect("non-empty").out.clone();
        Ok((traces, z))
    }

    /// Unit-energy-normalized codeword of message `m`.
    pub fn encode(&self, m: usize) -> Result<Vector> {
        let (_, z) = self.encoder_forward(m)?;
        energy_normalize(&z, z.len())
    }

    /// Decoder logits (pre-softmax outputs) for channel output `y`.
    pub fn decoder_logits(&self, y: &[f64]) -> Result<Vector> {
        let mut a = y.to_vec();
        for (idx, layer) in self.decoder.iter().enumerate() {
            if a.len() != layer.inputs() {
                return Err(Error::Dimension(format!(
                    "decoder layer {idx} expects {} inputs, got {}",
                    layer.inputs(),
                    a.len()
                )));
            }
            let pre = layer.pre_activation(&a);
            a = if idx + 1 == self.decoder.len() {
                pre
            } else {
                Activation::Relu.apply(&pre)
            };
        }
        Ok(a)
    }

    /// Full forward pass for message `m` with channel output `y = x + noise`.
    pub fn forward(&self, m: usize, noise: &[f64]) -> Result<ForwardTrace> {
        let (encoder, z) = self.encoder_forward(m)?;
        if noise.len() != z.len() {
            return Err(Error::Dimension(format!(
                "noise width {} != n = {}",
                noise.len(),
                z.len()
            )));
        }
        let x = energy_normalize(&z, z.len())?;
        let y: Vector = x.iter().zip(noise).map(|(a, b)| a + b).collect();
        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut input = y.clone();
        for (idx, layer) in self.decoder.iter().enumerate() {
            let pre = layer.pre_activation(&input);
            // the softmax is folded into the objective; keep logits as `out`
            let out = if idx + 1 == self.decoder.len() {
                pre.clone()
            } else {
                Activation::Relu.apply(&pre)
            };
            input = out.clone();
            decoder.push(LayerTrace { pre, out });
        }
        Ok(ForwardTrace {
            message: m,
            encoder,
            z,
            x,
            y,
            decoder,
        })
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub message: usize,
    pub encoder: Vec<LayerTrace>,
    /// Bottleneck output before normalization.
    pub z: Vector,
    /// Transmitted codeword.
    pub x: Vector,
    /// Channel output.
    pub y: Vector,
    pub decoder: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        &self.decoder.last().expect("non-empty decoder").out
    }

    pub fn probabilities(&self) -> Vector {
        softmax(self.logits())
    }
}

fn relu_mask(delta: &mut [f64], pre: &[f64]) {
    for (d, &p) in delta.iter_mut().zip(pre) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Accumulates `dW += delta a^T`, `db += delta` and returns `W^T delta`.
fn layer_backward(layer: &DenseLayer, grad: &mut DenseLayer, input: &[f64], delta: &[f64]) -> Vector {
    let mut delta_in = vec![0.0; layer.inputs()];
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.biases[r] += d;
        for (g, &a) in grad.weights.row_mut(r).iter_mut().zip(input) {
            *g += d * a;
        }
        for (acc, &w) in delta_in.iter_mut().zip(layer.weights.row(r)) {
            *acc += d * w;
        }
    }
    delta_in
}

/// Backpropagates the objective through a cached forward pass, accumulating
/// gradients into `grads` and returning the loss.
///
/// The channel noise is additive and parameter-free, so `dL/dx = dL/dy`.
pub fn backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    objective: &Objective,
    labels: &LabelSet,
    grads: &mut MlpParams,
) -> f64 {
    let mut delta = vec![0.0; trace.logits().len()];
    let loss = objective.loss_and_grad(labels, trace.logits(), &mut delta);

    for l in (0..params.decoder.len()).rev() {
        let input = if l == 0 { &trace.y } else { &trace.decoder[l - 1].out };
        delta = layer_backward(&params.decoder[l], &mut grads.decoder[l], input, &delta);
        if l > 0 {
            relu_mask(&mut delta, &trace.decoder[l - 1].pre);
        }
    }

    delta = energy_normalize_backward(&trace.z, &delta);

    for l in (1..params.encoder.len()).rev() {
        if params.encoder[l].activation == Activation::Relu {
            relu_mask(&mut delta, &trace.encoder[l].pre);
        }
        delta = layer_backward(
            &params.encoder[l],
            &mut grads.encoder[l],
            &trace.encoder[l - 1].out,
            &delta,
        );
    }
    let first = &mut grads.encoder[0];
    if params.encoder[0].activation == Activation::Relu {
        relu_mask(&mut delta, &trace.encoder[0].pre);
    }
    let hot = trace.message;
    let cols = first.weights.cols();
    for (r, &d) in delta.iter().enumerate() {
        first.biases[r] += d;
        first.weights.as_mut_slice()[r * cols + hot] += d;
    }
    loss
}

/// Loss of one forward pass with fixed noise.
pub fn evaluate_loss(
    params: &MlpParams,
    objective: &Objective,
    labels: &LabelSet,
    m: usize,
    noise: &[f64],
) -> Result<f64> {
    let trace = params.forward(m, noise)?;
    Ok(objective.loss(labels, trace.logits()))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates mirroring the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub step_count: u64,
    pub hyper: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamConfig) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            hyper,
        })
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpParams) {
    state.step_count += 1;
    let AdamConfig {
        alpha,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
        .zip(grads.tensors());
    for (((p, m), v), g) in tensors {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest `|analytic - numeric| / max(1, |analytic| + |numeric|)` over all
/// parameters for one message and a fixed noise realization.
pub fn gradient_check(
    params: &MlpParams,
    objective: &Objective,
    labels: &LabelSet,
    m: usize,
    noise: &[f64],
) -> Result<f64> {
    let trace = params.forward(m, noise)?;
    let mut analytic = params.zeros_like();
    backward(params, &trace, objective, labels, &mut analytic);
    let analytic: Vec<f64> = analytic.tensors().concat();

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (idx, &a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + FD_STEP;
        let plus = evaluate_loss(&probe, objective, labels, m, noise)?;
        *probe.param_mut(idx) = original - FD_STEP;
        let minus = evaluate_loss(&probe, objective, labels, m, noise)?;
        *probe.param_mut(idx) = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}
