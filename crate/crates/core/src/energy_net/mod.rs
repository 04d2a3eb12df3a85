//! Scalar-output MLP energy `E(y)` with exact reverse-mode gradients.
//!
//! The network is a stack of affine layers with a smooth activation between
//! them and no activation on the single output unit. One backward pass
//! yields `∇_y E` (consumed by Langevin chains) and, on request, `∇_θ E`
//! (consumed by the trainer). Parameters live in one flat [`ParamVector`];
//! for every layer the weights are stored row-major (`[fan_out][fan_in]`)
//! followed by the biases.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::rng_from_seed;

/// Anything a Langevin chain can descend: a scalar energy on `R^d` with an
/// input gradient. `Workspace` holds per-chain scratch memory so that a
/// frozen energy can be evaluated from many threads at once.
pub trait Energy: Sync {
    type Workspace: Send;

    fn dim(&self) -> usize;

    fn workspace(&self) -> Self::Workspace;

    /// Returns `E(y)` and writes `∇_y E(y)` into `grad`.
    fn value_and_grad(&self, y: &[f64], ws: &mut Self::Workspace, grad: &mut [f64]) -> f64;

    /// [`Energy::value_and_grad`] over the row-major points `ys`; `grads`
    /// has the same layout as `ys`.
    fn values_and_grads(&self, ys: &[f64], ws: &mut Self::Workspace, values: &mut [f64], grads: &mut [f64]) {
        let d = self.dim();
        for ((y, v), g) in ys.chunks_exact(d).zip(values.iter_mut()).zip(grads.chunks_exact_mut(d)) {
            *v = self.value_and_grad(y, ws, g);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
    Silu,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Value and derivative at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Softplus => {
                let e = (-z.abs()).exp();
                let s = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (z.max(0.0) + e.ln_1p(), s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Silu => {
                let s = sigmoid(z);
                (z * s, s * (1.0 + z * (1.0 - s)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    #[serde(default = "MlpConfig::default_hidden")]
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub param_seed: u64,
}

impl MlpConfig {
    fn default_hidden() -> Vec<usize> {
        vec![128, 128, 128]
    }

    /// Default architecture: three hidden Softplus layers of width 128.
    pub fn new(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_widths: Self::default_hidden(),
            activation: Activation::Softplus,
            param_seed: 0,
        }
    }

    pub fn with_hidden(mut self, widths: &[usize]) -> Self {
        self.hidden_widths = widths.to_vec();
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.param_seed = seed;
        self
    }

    /// An empty `hidden_widths` is accepted and describes a purely affine
    /// energy `w·y + b`.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("net.input_dim", "must be at least 1"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("net.hidden_widths", "widths must be positive"));
        }
        Ok(())
    }

    /// Widths of all layers, input first and the scalar output last.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(1);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter vector in the layout described in the module docs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Weights and biases of one affine layer, unpacked from a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `[fan_out][fan_in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl LayerSpan {
    fn end(&self) -> usize {
        self.bias + self.fan_out
    }
}

fn spans(config: &MlpConfig) -> Vec<LayerSpan> {
    let mut offset = 0;
    config
        .layer_dims()
        .windows(2)
        .map(|w| {
            let span = LayerSpan {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                bias: offset + w[0] * w[1],
            };
            offset = span.end();
            span
        })
        .collect()
}

pub fn unpack(config: &MlpConfig, params: &ParamVector) -> Result<Vec<LayerParams>> {
    check_dim(config.param_count(), params.len())?;
    Ok(spans(config)
        .into_iter()
        .map(|s| LayerParams {
            fan_in: s.fan_in,
            fan_out: s.fan_out,
            weights: params.0[s.weights..s.bias].to_vec(),
            bias: params.0[s.bias..s.end()].to_vec(),
        })
        .collect())
}

pub fn pack(layers: &[LayerParams]) -> ParamVector {
    let mut out = Vec::with_capacity(layers.iter().map(|l| l.weights.len() + l.bias.len()).sum());
    for layer in layers {
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.bias);
    }
    ParamVector(out)
}

/// Per-evaluation scratch buffers: pre-activation derivatives, activations
/// and backpropagated deltas for every layer.
#[derive(Clone, Debug)]
pub struct MlpWorkspace {
    act: Vec<Vec<f64>>,
    deriv: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    batch: BatchBuffers,
}

/// Row-major `rows × width` buffers per layer for batched evaluation.
#[derive(Clone, Debug, Default)]
struct BatchBuffers {
    rows: usize,
    act: Vec<Vec<f64>>,
    deriv: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl BatchBuffers {
    fn ensure(&mut self, spans: &[LayerSpan], rows: usize) {
        if self.rows == rows && self.act.len() == spans.len() {
            return;
        }
        let alloc = || spans.iter().map(|s| vec![0.0; rows * s.fan_out]).collect::<Vec<_>>();
        self.act = alloc();
        self.deriv = alloc();
        self.delta = alloc();
        self.rows = rows;
    }
}

/// `c = alpha·a·b + beta·c` for row-major operands given by (row, col) strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers pass buffers whose extents cover every index
    // addressed by the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyNet {
    config: MlpConfig,
    params: ParamVector,
    spans: Vec<LayerSpan>,
}

impl EnergyNet {
    /// Glorot-uniform weights, zero biases, seeded by `config.param_seed`.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let spans = spans(&config);
        let mut rng = rng_from_seed(config.param_seed);
        let mut params = ParamVector::zeros(config.param_count());
        for s in &spans {
            let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
            for w in &mut params.0[s.weights..s.bias] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(EnergyNet {
            config,
            params,
            spans,
        })
    }

    pub fn from_params(config: MlpConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        check_dim(config.param_count(), params.len())?;
        check_finite(params.as_slice(), "parameters")?;
        let spans = spans(&config);
        Ok(EnergyNet {
            config,
            params,
            spans,
        })
    }

    /// Affine energy `w·y + b` (no hidden layers).
    pub fn affine(weights: &[f64], bias: f64) -> Result<Self> {
        let config = MlpConfig::new(weights.len()).with_hidden(&[]);
        let mut params = weights.to_vec();
        params.push(bias);
        Self::from_params(config, ParamVector(params))
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Replaces the parameters, rejecting wrong lengths and non-finite entries.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_dim(self.params.len(), params.len())?;
        check_finite(params.as_slice(), "parameters")?;
        self.params = params;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        check_dim(self.config.input_dim, y.len())?;
        check_finite(y, "energy input")
    }

    pub fn energy(&self, y: &[f64]) -> Result<f64> {
        self.check_input(y)?;
        let mut ws = self.workspace();
        Ok(self.forward(y, &mut ws))
    }

    pub fn grad_input(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let mut ws = self.workspace();
        let mut grad = vec![0.0; y.len()];
        self.value_and_grad(y, &mut ws, &mut grad);
        Ok(grad)
    }

    pub fn grad_params(&self, y: &[f64]) -> Result<ParamVector> {
        self.check_input(y)?;
        let mut ws = self.workspace();
        let mut acc = ParamVector::zeros(self.params.len());
        self.accumulate_grad_params(y, &mut ws, 1.0, acc.as_mut_slice());
        Ok(acc)
    }

    /// `E(y) + β ρ(x, y)`: the energy of the conditional `p(y|x)`.
    pub fn conditional_energy(
        &self,
        x: &[f64],
        y: &[f64],
        beta: f64,
        rho: DistortionKind,
    ) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.energy(y)? + beta * rho.distortion(x, y)?)
    }

    pub fn conditional_grad_input(
        &self,
        x: &[f64],
        y: &[f64],
        beta: f64,
        rho: DistortionKind,
    ) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut grad = self.grad_input(y)?;
        let dist_grad = rho.grad_y(x, y)?;
        for (g, d) in grad.iter_mut().zip(dist_grad) {
            *g += beta * d;
        }
        Ok(grad)
    }

    /// Forward pass; fills `ws` with activations and activation derivatives.
    fn forward(&self, y: &[f64], ws: &mut MlpWorkspace) -> f64 {
        let p = &self.params.0;
        let last = self.spans.len() - 1;
        for (l, s) in self.spans.iter().enumerate().take(last) {
            let (before, after) = ws.act.split_at_mut(l);
            let input: &[f64] = if l == 0 { y } else { &before[l - 1] };
            let act = &mut after[0];
            let deriv = &mut ws.deriv[l];
            for o in 0..s.fan_out {
                let row = &p[s.weights + o * s.fan_in..s.weights + (o + 1) * s.fan_in];
                let z = p[s.bias + o] + dot(row, input);
                let (v, dv) = self.config.activation.eval(z);
                act[o] = v;
                deriv[o] = dv;
            }
        }
        let s = &self.spans[last];
        let input: &[f64] = if last == 0 { y } else { &ws.act[last - 1] };
        p[s.bias] + dot(&p[s.weights..s.bias], input)
    }

    /// Backpropagates a unit seed from the output; leaves deltas in `ws`.
    fn backward(&self, ws: &mut MlpWorkspace) {
        let p = &self.params.0;
        let last = self.spans.len() - 1;
        ws.delta[last][0] = 1.0;
        for l in (0..last).rev() {
            let next = &self.spans[l + 1];
            let (lower, upper) = ws.delta.split_at_mut(l + 1);
            let delta = &mut lower[l];
            delta.iter_mut().for_each(|d| *d = 0.0);
            for (o, &d_out) in upper[0].iter().enumerate() {
                let row = &p[next.weights + o * next.fan_in..next.weights + (o + 1) * next.fan_in];
                axpy(d_out, row, delta);
            }
            for (d, &dv) in delta.iter_mut().zip(&ws.deriv[l]) {
                *d *= dv;
            }
        }
    }

    fn input_grad_from_deltas(&self, ws: &MlpWorkspace, grad: &mut [f64]) {
        let p = &self.params.0;
        let s = &self.spans[0];
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (o, &d) in ws.delta[0].iter().enumerate() {
            axpy(d, &p[s.weights + o * s.fan_in..s.weights + (o + 1) * s.fan_in], grad);
        }
    }

    /// Adds `scale · ∇_θ E(y)` into `acc`; returns `E(y)`.
    pub(crate) fn accumulate_grad_params(
        &self,
        y: &[f64],
        ws: &mut MlpWorkspace,
        scale: f64,
        acc: &mut [f64],
    ) -> f64 {
        let value = self.forward(y, ws);
        self.backward(ws);
        for (l, s) in self.spans.iter().enumerate() {
            let input: &[f64] = if l == 0 { y } else { &ws.act[l - 1] };
            for (o, &d) in ws.delta[l].iter().enumerate() {
                let sd = scale * d;
                let start = s.weights + o * s.fan_in;
                axpy(sd, input, &mut acc[start..start + s.fan_in]);
                acc[s.bias + o] += sd;
            }
        }
        value
    }
}

impl EnergyNet {
    fn batch_forward(&self, ys: &[f64], rows: usize, bb: &mut BatchBuffers, values: &mut [f64]) {
        let p = &self.params.0;
        for (l, s) in self.spans.iter().enumerate() {
            let (before, after) = bb.act.split_at_mut(l);
            let input: &[f64] = if l == 0 { ys } else { &before[l - 1] };
            let z = &mut after[0];
            for r in z.chunks_exact_mut(s.fan_out) {
                r.copy_from_slice(&p[s.bias..s.bias + s.fan_out]);
            }
            // Z = A·Wᵀ + b, with W stored [out][in]
            gemm(
                rows,
                s.fan_in,
                s.fan_out,
                1.0,
                (input, s.fan_in as isize, 1),
                (&p[s.weights..s.bias], 1, s.fan_in as isize),
                1.0,
                z,
            );
            if l + 1 < self.spans.len() {
                let act = self.config.activation;
                for (zv, dv) in z.iter_mut().zip(bb.deriv[l].iter_mut()) {
                    let (v, d) = act.eval(*zv);
                    *zv = v;
                    *dv = d;
                }
            }
        }
        values[..rows].copy_from_slice(&bb.act[self.spans.len() - 1][..rows]);
    }

    fn batch_backward(&self, rows: usize, bb: &mut BatchBuffers) {
        let p = &self.params.0;
        let last = self.spans.len() - 1;
        bb.delta[last].iter_mut().for_each(|d| *d = 1.0);
        for l in (0..last).rev() {
            let next = &self.spans[l + 1];
            let (lower, upper) = bb.delta.split_at_mut(l + 1);
            gemm(
                rows,
                next.fan_out,
                next.fan_in,
                1.0,
                (&upper[0], next.fan_out as isize, 1),
                (&p[next.weights..next.bias], next.fan_in as isize, 1),
                0.0,
                &mut lower[l],
            );
            for (d, &dv) in lower[l].iter_mut().zip(&bb.deriv[l]) {
                *d *= dv;
            }
        }
    }

    /// Batched [`EnergyNet::accumulate_grad_params`] over row-major `ys`;
    /// returns the sum of the energies.
    pub(crate) fn accumulate_grad_params_batch(&self, ys: &[f64], ws: &mut MlpWorkspace, scale: f64, acc: &mut [f64]) -> f64 {
        let rows = ys.len() / self.config.input_dim;
        let bb = &mut ws.batch;
        bb.ensure(&self.spans, rows);
        let mut values = vec![0.0; rows];
        self.batch_forward(ys, rows, bb, &mut values);
        self.batch_backward(rows, bb);
        for (l, s) in self.spans.iter().enumerate() {
            let input: &[f64] = if l == 0 { ys } else { &bb.act[l - 1] };
            let delta = &bb.delta[l];
            // dW += scale · Δᵀ·A
            gemm(
                s.fan_out,
                rows,
                s.fan_in,
                scale,
                (delta, 1, s.fan_out as isize),
                (input, s.fan_in as isize, 1),
                1.0,
                &mut acc[s.weights..s.bias],
            );
            for r in delta.chunks_exact(s.fan_out) {
                axpy(scale, r, &mut acc[s.bias..s.bias + s.fan_out]);
            }
        }
        values.iter().sum()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // independent partial sums let the compiler vectorise
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Energy for EnergyNet {
    type Workspace = MlpWorkspace;

    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn workspace(&self) -> MlpWorkspace {
        let sizes: Vec<usize> = self.spans.iter().map(|s| s.fan_out).collect();
        let alloc = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        MlpWorkspace {
            act: alloc(),
            deriv: alloc(),
            delta: alloc(),
            batch: BatchBuffers::default(),
        }
    }

    fn value_and_grad(&self, y: &[f64], ws: &mut MlpWorkspace, grad: &mut [f64]) -> f64 {
        let value = self.forward(y, ws);
        self.backward(ws);
        self.input_grad_from_deltas(ws, grad);
        value
    }

    fn values_and_grads(&self, ys: &[f64], ws: &mut MlpWorkspace, values: &mut [f64], grads: &mut [f64]) {
        let rows = ys.len() / self.config.input_dim;
        let bb = &mut ws.batch;
        bb.ensure(&self.spans, rows);
        self.batch_forward(ys, rows, bb, values);
        self.batch_backward(rows, bb);
        let s = &self.spans[0];
        let w = &self.params.0[s.weights..s.bias];
        gemm(
            rows,
            s.fan_out,
            s.fan_in,
            1.0,
            (&bb.delta[0], s.fan_out as isize, 1),
            (w, s.fan_in as isize, 1),
            0.0,
            grads,
        );
    }
}
