//! A small dense-network substrate: exact reverse-mode gradients, Adam, and
//! finite-difference gradient checking.
//!
//! Networks here have at most a few hundred thousand parameters, so
//! everything is plain `f64` vectors with row-major weight storage. Forward
//! passes are pure; training code keeps the [`ForwardTrace`] of a pass and
//! hands it back to [`Mlp::backward`].

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows {
            return Err(Error::shape("DenseLayer bias", weights.rows, bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform Glorot initialisation with zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weights: Matrix {
                rows: outputs,
                cols: inputs,
                data,
            },
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }

    pub fn num_params(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    fn preactivation(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.weights.cols {
            return Err(Error::shape("dense_forward input", self.weights.cols, input.len()));
        }
        Ok((0..self.weights.rows)
            .map(|r| {
                self.weights
                    .row(r)
                    .iter()
                    .zip(input)
                    .fold(self.bias[r], |acc, (w, x)| acc + w * x)
            })
            .collect())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.preactivation(input)?;
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        Ok(z)
    }
}

/// `activation(W·input + b)`.
pub fn dense_forward(layer: &DenseLayer, input: &[f64]) -> Result<Vec<f64>> {
    layer.forward(input)
}

/// Intermediate values of one forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        self.inputs.first().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Smallest |pre-activation| over all relu units, or `None` without relus.
    pub fn min_relu_margin(&self, net: &Mlp) -> Option<f64> {
        net.layers
            .iter()
            .zip(&self.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.flatten_into(&mut v);
        v
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::shape("Mlp layer chaining", w[0].outputs(), w[1].inputs()));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with the given widths; `acts[i]` is the activation of layer `i`.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], acts: &[Activation], rng: &mut R) -> Self {
        assert_eq!(widths.len(), acts.len() + 1, "one activation per layer");
        let layers = widths
            .windows(2)
            .zip(acts)
            .map(|(w, &a)| DenseLayer::random(w[0], w[1], a, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut x = input.to_vec();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::default();
        let mut x = input.to_vec();
        for l in &self.layers {
            let z = l.preactivation(&x)?;
            let y: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            trace.inputs.push(x);
            trace.pre.push(z);
            x = y.clone();
            trace.outputs.push(y);
        }
        Ok(trace)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.data.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Accumulate parameter gradients of `upstream · output` into `grads`
    /// and return the gradient with respect to the input.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        if trace.pre.len() != self.layers.len() || self.layers.is_empty() {
            return Err(Error::Usage(
                "backward called without a forward trace from this network".into(),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("Mlp::backward grads", self.layers.len(), grads.layers.len()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("Mlp::backward upstream", self.output_dim(), upstream.len()));
        }
        let mut delta = upstream.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[idx];
            let y = &trace.outputs[idx];
            let x = &trace.inputs[idx];
            if z.len() != layer.outputs() || x.len() != layer.inputs() {
                return Err(Error::Usage("forward trace does not match network shape".into()));
            }
            for (d, (&zi, &yi)) in delta.iter_mut().zip(z.iter().zip(y)) {
                *d *= layer.activation.derivative(zi, yi);
            }
            let g = &mut grads.layers[idx];
            let cols = layer.inputs();
            let mut next = vec![0.0; cols];
            for (r, &dr) in delta.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                g.bias[r] += dr;
                let wrow = layer.weights.row(r);
                let grow = &mut g.weights[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    grow[c] += dr * x[c];
                    next[c] += dr * wrow[c];
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut v);
        v
    }

    /// Load parameters from the front of `flat`; returns how many were consumed.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.num_params();
        if flat.len() < need {
            return Err(Error::shape("Mlp::load_flat", need, flat.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data.len();
            l.weights.data.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(off)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the state untouched and returns an error.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Precondition(format!("non-finite gradient at index {i}")));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Result of comparing analytic against central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub passed: bool,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Finite-difference step used by all gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so that gradients which
/// are both ~0 do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare `analytic` against central differences of `objective` at `params`.
pub fn check_gradient<F>(params: &[f64], analytic: &[f64], tolerance: f64, mut objective: F) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = objective(&p);
        p[i] = orig - FD_STEP;
        let down = objective(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    GradCheck {
        passed: worst < tolerance,
        max_rel_error: worst,
        checked: p.len(),
    }
}

fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / (i as f64 + 1.0) - 0.3).collect()
}

/// Check [`Mlp::backward`] on every parameter and input coordinate, using the
/// scalar objective `u · net(input)` for a fixed probe vector `u`.
pub fn grad_check(net: &Mlp, input: &[f64], tolerance: f64) -> Result<GradCheck> {
    grad_check_with(net, input, tolerance, |g| g)
}

/// Like [`grad_check`], but lets the caller tamper with the analytic gradient
/// before comparison (used to confirm the check can fail).
pub fn grad_check_with<F>(net: &Mlp, input: &[f64], tolerance: f64, tamper: F) -> Result<GradCheck>
where
    F: FnOnce(Vec<f64>) -> Vec<f64>,
{
    let u = probe_weights(net.output_dim());
    let trace = net.forward_trace(input)?;
    let mut grads = net.zero_grads();
    let din = net.backward(&trace, &u, &mut grads)?;
    let mut analytic = grads.flatten();
    analytic.extend_from_slice(&din);
    let analytic = tamper(analytic);

    let n_params = net.num_params();
    let mut point = net.flatten();
    point.extend_from_slice(input);
    let mut scratch = net.clone();
    let objective = |flat: &[f64]| {
        scratch.load_flat(&flat[..n_params]).expect("parameter count");
        let out = scratch.forward(&flat[n_params..]).expect("shape");
        out.iter().zip(&u).map(|(o, w)| o * w).sum::<f64>()
    };
    Ok(check_gradient(&point, &analytic, tolerance, objective))
}

/// Checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    /// Code the policy is bound to, when known.
    #[serde(default)]
    pub code: Option<crate::code::CodeFamily>,
    pub code_distance: Option<usize>,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// JSON checkpoint of a single network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub layers: Vec<LayerRecord>,
    pub metadata: CheckpointMeta,
}

impl From<&Mlp> for Vec<LayerRecord> {
    fn from(net: &Mlp) -> Self {
        net.layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.weights.rows,
                cols: l.weights.cols,
                weights: l.weights.data.clone(),
                bias: l.bias.clone(),
                activation: l.activation,
            })
            .collect()
    }
}

impl Mlp {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.into()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let layers = records
            .iter()
            .map(|r| {
                DenseLayer::new(
                    Matrix::new(r.rows, r.cols, r.weights.clone())?,
                    r.bias.clone(),
                    r.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    pub fn to_checkpoint(&self, metadata: CheckpointMeta) -> NetworkCheckpoint {
        NetworkCheckpoint {
            layers: self.to_records(),
            metadata,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn layer(rows: usize, cols: usize, w: &[f64], b: &[f64], a: Activation) -> DenseLayer {
        DenseLayer::new(Matrix::new(rows, cols, w.to_vec()).unwrap(), b.to_vec(), a).unwrap()
    }

    #[test]
    fn dense_forward_examples() {
        let id = layer(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], Activation::Identity);
        assert_eq!(dense_forward(&id, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let relu = layer(1, 2, &[1.0, 1.0], &[-2.0], Activation::Relu);
        assert_eq!(dense_forward(&relu, &[1.0, 0.0]).unwrap(), vec![0.0]);
        let sig = layer(1, 1, &[0.0], &[0.0], Activation::Sigmoid);
        assert_eq!(dense_forward(&sig, &[5.0]).unwrap(), vec![0.5]);
        assert!(matches!(dense_forward(&id, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn invalid_layers_rejected() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(DenseLayer::new(Matrix::zeros(2, 2), vec![0.0], Activation::Relu).is_err());
    }

    #[test]
    fn backward_linear_chain() {
        let net = Mlp::new(vec![layer(1, 1, &[2.0], &[0.0], Activation::Identity)]).unwrap();
        let trace = net.forward_trace(&[3.0]).unwrap();
        let mut g = net.zero_grads();
        let din = net.backward(&trace, &[1.0], &mut g).unwrap();
        assert_eq!(g.layers[0].weights, vec![3.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
        assert_eq!(din, vec![2.0]);
    }

    #[test]
    fn sigmoid_local_gradient() {
        let net = Mlp::new(vec![layer(1, 1, &[1.0], &[0.0], Activation::Sigmoid)]).unwrap();
        let trace = net.forward_trace(&[0.0]).unwrap();
        let mut g = net.zero_grads();
        net.backward(&trace, &[1.0], &mut g).unwrap();
        assert_eq!(g.layers[0].bias, vec![0.25]);
    }

    #[test]
    fn backward_without_trace_is_usage_error() {
        let net = Mlp::new(vec![layer(1, 1, &[1.0], &[0.0], Activation::Identity)]).unwrap();
        let mut g = net.zero_grads();
        assert!(matches!(
            net.backward(&ForwardTrace::default(), &[1.0], &mut g),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn grad_check_random_two_layer() {
        let mut r = rng::stream(11, 0, 0);
        let mut checked = 0;
        while checked < 20 {
            let net = Mlp::random(&[4, 6, 3], &[Activation::Relu, Activation::Identity], &mut r);
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let trace = net.forward_trace(&x).unwrap();
            if trace.min_relu_margin(&net).unwrap() < 1e-3 {
                continue;
            }
            let rep = grad_check(&net, &x, 1e-4).unwrap();
            assert!(rep.passed, "{rep:?}");
            checked += 1;
        }
    }

    #[test]
    fn grad_check_linear_is_near_exact() {
        let mut r = rng::stream(12, 0, 0);
        let net = Mlp::random(&[3, 5, 2], &[Activation::Identity, Activation::Identity], &mut r);
        let rep = grad_check(&net, &[0.3, -0.2, 0.9], 1e-4).unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    }

    #[test]
    fn grad_check_detects_corruption() {
        let mut r = rng::stream(13, 0, 0);
        let net = Mlp::random(&[3, 4, 2], &[Activation::Sigmoid, Activation::Identity], &mut r);
        let rep = grad_check_with(&net, &[0.1, 0.2, 0.3], 1e-4, |g| g.into_iter().map(|v| v * 2.0).collect()).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, AdamConfig::with_lr(0.1));
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2, AdamConfig::with_lr(0.01));
        adam_step(&mut p, &[0.5, -3.0], &mut st).unwrap();
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε)
        assert_abs_diff_eq!(p[0], -0.01 * 0.5 / (0.5 + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.01 * 3.0 / (3.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(1, AdamConfig::with_lr(8e-4));
        assert_eq!(st.learning_rate(), 8e-4);
        assert!(adam_step(&mut p, &[f64::INFINITY], &mut st).is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut r = rng::stream(14, 0, 0);
        let net = Mlp::random(&[5, 7, 2], &[Activation::Relu, Activation::Sigmoid], &mut r);
        let ck = net.to_checkpoint(CheckpointMeta {
            code: None,
            code_distance: Some(3),
            seed: 9,
            epoch: 4,
        });
        let json = serde_json::to_string(&ck).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&json).unwrap();
        let net2 = Mlp::from_records(&back.layers).unwrap();
        let a: Vec<u64> = net.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = net2.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.metadata.epoch, 4);
    }
}
