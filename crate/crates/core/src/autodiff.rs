//! Exact input and parameter derivatives of fully connected networks.
//!
//! A batch of points is pushed through the network as a set of jet
//! channels: the value, first derivatives along selected input directions,
//! and diagonal second derivatives along a subset of those. Every channel of
//! every point is one column of a `width × (C·N)` matrix, so each affine
//! layer is a single GEMM. The reverse pass walks the same tape and yields
//! exact parameter gradients of any scalar built from the output jets,
//! including the mixed third-order terms that second-derivative residuals
//! need.

use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{stream, stream_rng, uniform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("unsupported activation: {0}")]
    Unsupported(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid network: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
    Gelu,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Elu,
        Activation::Gelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Checkpoint tag.
    pub fn tag(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Elu => 2,
            Activation::Gelu => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn twice_differentiable(self) -> bool {
        self != Activation::Relu
    }

    /// σ and its first three derivatives at `z`.
    #[inline]
    pub fn derivs(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s1 = 1.0 - t * t;
                [t, s1, -2.0 * t * s1, s1 * (6.0 * t * t - 2.0)]
            }
            Activation::Relu => {
                if z > 0.0 {
                    [z, 1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
            // α = 1
            Activation::Elu => {
                if z > 0.0 {
                    [z, 1.0, 0.0, 0.0]
                } else {
                    let e = z.exp();
                    [z.exp_m1(), e, e, e]
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
                [
                    z * cdf,
                    cdf + z * pdf,
                    pdf * (2.0 - z * z),
                    pdf * (z * z * z - 4.0 * z),
                ]
            }
        }
    }

    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Gelu => 0.5 * z * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_width: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.hidden_layers < 1 {
            return Err(AutodiffError::Spec("hidden_layers must be >= 1".into()));
        }
        if self.input_width < 1 || self.hidden_width < 1 || self.output_width < 1 {
            return Err(AutodiffError::Spec("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(rows, cols)` = `(fan_out, fan_in)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_width;
        for _ in 0..self.hidden_layers {
            shapes.push((self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        shapes.push((self.output_width, fan_in));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Weights and biases of all layers in one flat vector: per layer the
/// row-major `rows × cols` weights, then the `rows` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for (r, c) in shapes {
            offsets.push(at);
            at += r * c + r;
        }
        Self {
            shapes: shapes.to_vec(),
            offsets,
            data: vec![0.0; at],
        }
    }

    pub fn from_layers(
        layers: &[(usize, usize, Vec<f64>, Vec<f64>)],
    ) -> Result<Self, AutodiffError> {
        let shapes: Vec<_> = layers.iter().map(|(r, c, _, _)| (*r, *c)).collect();
        for w in shapes.windows(2) {
            if w[1].1 != w[0].0 {
                return Err(AutodiffError::Shape(format!(
                    "layer fan-in {} does not match previous fan-out {}",
                    w[1].1, w[0].0
                )));
            }
        }
        let mut p = Self::zeros(&shapes);
        for (l, (r, c, w, b)) in layers.iter().enumerate() {
            if w.len() != r * c || b.len() != *r {
                return Err(AutodiffError::Shape(format!("layer {l} payload size")));
            }
            p.weights_mut(l).copy_from_slice(w);
            p.biases_mut(l).copy_from_slice(b);
        }
        Ok(p)
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn input_width(&self) -> usize {
        self.shapes[0].1
    }

    pub fn output_width(&self) -> usize {
        self.shapes[self.shapes.len() - 1].0
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        if flat.len() != self.data.len() {
            return Err(AutodiffError::Shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.data.len()
            )));
        }
        self.data.copy_from_slice(flat);
        Ok(())
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (r, c) = self.shapes[l];
        &self.data[self.offsets[l]..self.offsets[l] + r * c]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (r, c) = self.shapes[l];
        let o = self.offsets[l];
        &mut self.data[o..o + r * c]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (r, c) = self.shapes[l];
        let o = self.offsets[l] + r * c;
        &self.data[o..o + r]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let (r, c) = self.shapes[l];
        let o = self.offsets[l] + r * c;
        &mut self.data[o..o + r]
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights from the seeded stream, zero biases.
pub fn init_parameters(spec: &NetworkSpec) -> Result<ParameterSet, AutodiffError> {
    spec.validate()?;
    let mut p = ParameterSet::zeros(&spec.layer_shapes());
    let mut rng = stream_rng(spec.init_seed, stream::GLOROT);
    for l in 0..p.layer_count() {
        let (r, c) = p.shapes[l];
        let a = (6.0 / (r + c) as f64).sqrt();
        for w in p.weights_mut(l) {
            *w = uniform(&mut rng, -a, a);
        }
    }
    Ok(p)
}

/// Plain evaluation of one input vector.
pub fn forward(
    params: &ParameterSet,
    activation: Activation,
    x: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    if x.len() != params.input_width() {
        return Err(AutodiffError::Shape(format!(
            "input of width {} for a network expecting {}",
            x.len(),
            params.input_width()
        )));
    }
    let mut a = x.to_vec();
    let last = params.layer_count() - 1;
    for l in 0..=last {
        let (r, c) = params.shapes[l];
        let w = params.weights(l);
        let b = params.biases(l);
        let mut z = vec![0.0; r];
        for i in 0..r {
            let row = &w[i * c..(i + 1) * c];
            z[i] = b[i] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
        }
        if l < last {
            for v in &mut z {
                *v = activation.eval(*v);
            }
        }
        a = z;
    }
    Ok(a)
}

/// Which jet channels are carried.
#[derive(Debug, Clone, PartialEq)]
pub struct JetLayout {
    /// Differentiated input directions: `(input index, seed scale)`. The
    /// scale is the chain-rule factor of an input normalization, so the jets
    /// come out as derivatives with respect to the unnormalized variable.
    pub first: Vec<(usize, f64)>,
    /// The leading `second` entries of `first` also carry the diagonal
    /// second derivative.
    pub second: usize,
}

impl JetLayout {
    pub fn value_only() -> Self {
        Self {
            first: Vec::new(),
            second: 0,
        }
    }

    /// First and diagonal second derivatives along every input, unscaled.
    pub fn full(input_width: usize) -> Self {
        Self {
            first: (0..input_width).map(|d| (d, 1.0)).collect(),
            second: input_width,
        }
    }

    pub fn channels(&self) -> usize {
        1 + self.first.len() + self.second
    }

    pub fn first_channel(&self, j: usize) -> usize {
        1 + j
    }

    pub fn second_channel(&self, j: usize) -> usize {
        debug_assert!(j < self.second);
        1 + self.first.len() + j
    }
}

/// Output jets of a batch, and the matching adjoint layout:
/// entry `(k, c, p)` lives at `k·C·N + c·N + p`.
#[derive(Debug, Clone, Copy)]
pub struct JetView<'a> {
    data: &'a [f64],
    channels: usize,
    points: usize,
}

impl<'a> JetView<'a> {
    #[inline]
    pub fn get(&self, k: usize, c: usize, p: usize) -> f64 {
        self.data[(k * self.channels + c) * self.points + p]
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Contiguous values of output `k`, channel `c`, across the batch.
    pub fn row(&self, k: usize, c: usize) -> &'a [f64] {
        let o = (k * self.channels + c) * self.points;
        &self.data[o..o + self.points]
    }
}

/// Adjoint accumulator with the same layout as [`JetView`].
pub struct JetAdjoint<'a> {
    data: &'a mut [f64],
    channels: usize,
    points: usize,
}

impl JetAdjoint<'_> {
    #[inline]
    pub fn add(&mut self, k: usize, c: usize, p: usize, v: f64) {
        self.data[(k * self.channels + c) * self.points + p] += v;
    }

    pub fn row_mut(&mut self, k: usize, c: usize) -> &mut [f64] {
        let o = (k * self.channels + c) * self.points;
        &mut self.data[o..o + self.points]
    }
}

/// Forward record of one batch.
pub struct Tape {
    layout: JetLayout,
    activation: Activation,
    points: usize,
    /// Layer inputs: `acts[l]` feeds affine layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every affine layer; the last one is the output.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> JetView<'_> {
        JetView {
            data: self.pre.last().expect("network has layers"),
            channels: self.layout.channels(),
            points: self.points,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn layout(&self) -> &JetLayout {
        &self.layout
    }
}

/// `C (m×n) = A (m×k) · B (k×n) + beta·C`, with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover the strided extents passed to dgemm; callers
    // size every operand from the same layer shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Pushes a batch of points (row-major `points × input_width`) through the
/// network, carrying the requested jet channels.
pub fn jet_forward(
    params: &ParameterSet,
    activation: Activation,
    layout: &JetLayout,
    inputs: &[f64],
) -> Result<Tape, AutodiffError> {
    let din = params.input_width();
    if inputs.len() % din != 0 {
        return Err(AutodiffError::Shape(format!(
            "{} input values are not a multiple of width {din}",
            inputs.len()
        )));
    }
    if layout.second > layout.first.len() || layout.first.iter().any(|(d, _)| *d >= din) {
        return Err(AutodiffError::Shape(
            "jet layout does not fit the input".into(),
        ));
    }
    if layout.second > 0 && !activation.twice_differentiable() {
        return Err(AutodiffError::Unsupported(format!(
            "{} has no second derivative",
            activation.name()
        )));
    }
    let n = inputs.len() / din;
    let ch = layout.channels();
    let cols = ch * n;
    let nf = layout.first.len();

    let mut a0 = vec![0.0; din * cols];
    for p in 0..n {
        for d in 0..din {
            a0[d * cols + p] = inputs[p * din + d];
        }
    }
    for (j, &(d, scale)) in layout.first.iter().enumerate() {
        let c = layout.first_channel(j);
        a0[d * cols + c * n..d * cols + (c + 1) * n].fill(scale);
    }

    let layers = params.layer_count();
    let mut acts = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    acts.push(a0);
    for l in 0..layers {
        let (r, c) = params.shapes[l];
        let mut z = vec![0.0; r * cols];
        gemm(
            r,
            c,
            cols,
            params.weights(l),
            c,
            1,
            &acts[l],
            cols,
            1,
            0.0,
            &mut z,
        );
        let b = params.biases(l);
        for i in 0..r {
            let bi = b[i];
            for v in &mut z[i * cols..i * cols + n] {
                *v += bi;
            }
        }
        if l + 1 < layers {
            let mut a = vec![0.0; r * cols];
            for i in 0..r {
                let zr = &z[i * cols..(i + 1) * cols];
                let ar = &mut a[i * cols..(i + 1) * cols];
                for p in 0..n {
                    let s = activation.derivs(zr[p]);
                    ar[p] = s[0];
                    for j in 0..nf {
                        let zd = zr[(1 + j) * n + p];
                        ar[(1 + j) * n + p] = s[1] * zd;
                        if j < layout.second {
                            let cs = (1 + nf + j) * n + p;
                            ar[cs] = s[2] * zd * zd + s[1] * zr[cs];
                        }
                    }
                }
            }
            acts.push(a);
        }
        pre.push(z);
    }
    Ok(Tape {
        layout: layout.clone(),
        activation,
        points: n,
        acts,
        pre,
    })
}

/// Reverse pass: given the adjoint of the output jets, accumulates the
/// parameter gradient into `grad` (flat [`ParameterSet`] order).
pub fn jet_backward(params: &ParameterSet, tape: &Tape, g_out: Vec<f64>, grad: &mut [f64]) {
    let n = tape.points;
    let layout = &tape.layout;
    let ch = layout.channels();
    let cols = ch * n;
    let nf = layout.first.len();
    let ns = layout.second;
    let mut g = g_out;
    for l in (0..params.layer_count()).rev() {
        let (r, c) = params.shapes[l];
        let o = params.offset(l);
        // dW += G · Aᵀ
        gemm(
            r,
            cols,
            c,
            &g,
            cols,
            1,
            &tape.acts[l],
            1,
            cols,
            1.0,
            &mut grad[o..o + r * c],
        );
        for i in 0..r {
            grad[o + r * c + i] += g[i * cols..i * cols + n].iter().sum::<f64>();
        }
        if l == 0 {
            break;
        }
        // dA = Wᵀ · G
        let mut ga = vec![0.0; c * cols];
        gemm(
            c,
            r,
            cols,
            params.weights(l),
            1,
            c,
            &g,
            cols,
            1,
            0.0,
            &mut ga,
        );
        let z = &tape.pre[l - 1];
        for i in 0..c {
            let zr = &z[i * cols..(i + 1) * cols];
            let gr = &mut ga[i * cols..(i + 1) * cols];
            for p in 0..n {
                let s = tape.activation.derivs(zr[p]);
                let mut g0 = gr[p] * s[1];
                for j in 0..nf {
                    let cd = (1 + j) * n + p;
                    let zd = zr[cd];
                    let gd = gr[cd];
                    g0 += gd * s[2] * zd;
                    let mut gzd = gd * s[1];
                    if j < ns {
                        let cs = (1 + nf + j) * n + p;
                        let gs = gr[cs];
                        g0 += gs * (s[3] * zd * zd + s[2] * zr[cs]);
                        gzd += 2.0 * gs * s[2] * zd;
                        gr[cs] = gs * s[1];
                    }
                    gr[cd] = gzd;
                }
                gr[p] = g0;
            }
        }
        g = ga;
    }
}

/// Default number of points per reverse-mode chunk.
pub const DEFAULT_CHUNK: usize = 256;

/// Value and parameter gradient of `Σ_chunks loss(chunk)`.
///
/// The closure receives the index of the chunk's first point, its output
/// jets and a zeroed adjoint to fill, and returns the chunk's share of the
/// loss. Chunks are evaluated in parallel and reduced in index order, so the
/// result is independent of the thread count.
pub fn loss_gradient<F>(
    params: &ParameterSet,
    activation: Activation,
    layout: &JetLayout,
    inputs: &[f64],
    chunk: usize,
    loss: F,
) -> Result<(f64, Vec<f64>), AutodiffError>
where
    F: Fn(usize, JetView<'_>, &mut JetAdjoint<'_>) -> Result<f64, AutodiffError> + Sync,
{
    let (parts, grad) = loss_gradient_parts(params, activation, layout, inputs, chunk, loss)?;
    let value: f64 = parts.iter().sum();
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite(format!(
            "loss evaluated to {value}"
        )));
    }
    Ok((value, grad))
}

/// Like [`loss_gradient`], but hands back each chunk's closure result in
/// chunk order instead of summing scalars.
pub fn loss_gradient_parts<T, F>(
    params: &ParameterSet,
    activation: Activation,
    layout: &JetLayout,
    inputs: &[f64],
    chunk: usize,
    loss: F,
) -> Result<(Vec<T>, Vec<f64>), AutodiffError>
where
    T: Send,
    F: Fn(usize, JetView<'_>, &mut JetAdjoint<'_>) -> Result<T, AutodiffError> + Sync,
{
    let din = params.input_width();
    if inputs.len() % din != 0 {
        return Err(AutodiffError::Shape(format!(
            "{} input values are not a multiple of width {din}",
            inputs.len()
        )));
    }
    let total = inputs.len() / din;
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..total).step_by(chunk).collect();
    let parts: Vec<Result<(T, Vec<f64>), AutodiffError>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + chunk).min(total);
            let tape = jet_forward(params, activation, layout, &inputs[s * din..e * din])?;
            let out = tape.output();
            let mut g = vec![0.0; out.data.len()];
            let value = {
                let mut adj = JetAdjoint {
                    data: &mut g,
                    channels: out.channels,
                    points: out.points,
                };
                loss(s, out, &mut adj)?
            };
            let mut grad = vec![0.0; params.len()];
            jet_backward(params, &tape, g, &mut grad);
            Ok((value, grad))
        })
        .collect();
    let mut values = Vec::with_capacity(parts.len());
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (v, g) = part?;
        values.push(v);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((values, grad))
}

/// Output jets of a batch without any reverse pass, chunk by chunk; the
/// closure sees each chunk's first point index and its jets.
pub fn map_jets<T, F>(
    params: &ParameterSet,
    activation: Activation,
    layout: &JetLayout,
    inputs: &[f64],
    chunk: usize,
    f: F,
) -> Result<Vec<T>, AutodiffError>
where
    T: Send,
    F: Fn(usize, JetView<'_>) -> Result<T, AutodiffError> + Sync,
{
    let din = params.input_width();
    let total = inputs.len() / din;
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..total).step_by(chunk).collect();
    starts
        .par_iter()
        .map(|&s| {
            let e = (s + chunk).min(total);
            let tape = jet_forward(params, activation, layout, &inputs[s * din..e * din])?;
            f(s, tape.output())
        })
        .collect()
}

/// Batched evaluation without derivatives; returns row-major
/// `points × output_width`.
pub fn forward_batch(
    params: &ParameterSet,
    activation: Activation,
    inputs: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    let dout = params.output_width();
    let parts = map_jets(
        params,
        activation,
        &JetLayout::value_only(),
        inputs,
        DEFAULT_CHUNK * 4,
        |_, out| {
            let mut rows = vec![0.0; out.points() * dout];
            for k in 0..dout {
                for (p, v) in out.row(k, 0).iter().enumerate() {
                    rows[p * dout + k] = *v;
                }
            }
            Ok(rows)
        },
    )?;
    Ok(parts.concat())
}

/// Jacobian and diagonal Hessian of every output at one point:
/// `J[k][d] = ∂y_k/∂x_d`, `H[k][d] = ∂²y_k/∂x_d²`.
#[allow(clippy::type_complexity)]
pub fn input_derivatives(
    params: &ParameterSet,
    activation: Activation,
    x: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), AutodiffError> {
    let din = params.input_width();
    if x.len() != din {
        return Err(AutodiffError::Shape(format!(
            "input of width {} for a network expecting {din}",
            x.len()
        )));
    }
    let layout = JetLayout::full(din);
    let tape = jet_forward(params, activation, &layout, x)?;
    let out = tape.output();
    let dout = params.output_width();
    let mut jac = vec![vec![0.0; din]; dout];
    let mut hess = vec![vec![0.0; din]; dout];
    for k in 0..dout {
        for d in 0..din {
            jac[k][d] = out.get(k, layout.first_channel(d), 0);
            hess[k][d] = out.get(k, layout.second_channel(d), 0);
        }
    }
    Ok((jac, hess))
}
