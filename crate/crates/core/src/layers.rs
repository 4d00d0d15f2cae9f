//! Layers with explicit forward/backward passes over `[n × c × T]` batches.
//!
//! `Dense` is applied to every time slice with shared weights. `Conv1d` and
//! `MaxPool1d` slide along the time axis, so their output is the
//! pre-activation sequence that a following `Lif` layer integrates step by
//! step. `Lif` emits its spikes stacked back along time.

use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::lif::{self, Layout, LifConfig, TraceBuffers};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Activations of a batch: `[n × c × T]` (batch, channels, time).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBatch<F = f32> {
    data: Tensor<F>,
}

impl<F: Scalar> TimeBatch<F> {
    pub fn new(data: Tensor<F>) -> Result<Self> {
        let [_, _, t] = data.dims3()?;
        if t == 0 {
            return Err(Error::Dimension("a time batch needs at least one step".into()));
        }
        Ok(Self { data })
    }

    /// From samples laid out `[n × T × D]`, as stored in datasets.
    pub fn from_samples(samples: &Tensor<F>) -> Result<Self> {
        Self::new(samples.permute3([0, 2, 1])?)
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn steps(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.data
    }

    /// The `[n × c]` slice at step `t`.
    pub fn slice(&self, t: usize) -> Tensor<F> {
        let (n, c, steps) = (self.batch(), self.channels(), self.steps());
        let d = self.data.data();
        Tensor::from_fn(&[n, c], |i| d[i * steps + t])
    }

    /// Stack `[n × c]` slices along a new trailing time axis.
    pub fn from_slices(slices: &[Tensor<F>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Dimension("no time slices to stack".into()))?;
        let [n, c] = first.dims2()?;
        let steps = slices.len();
        let mut out = vec![F::zero(); n * c * steps];
        for (t, s) in slices.iter().enumerate() {
            if s.shape() != first.shape() {
                return Err(Error::Dimension(format!(
                    "time slice {t} has shape {:?}, expected {:?}",
                    s.shape(),
                    first.shape()
                )));
            }
            for (i, &v) in s.data().iter().enumerate() {
                out[i * steps + t] = v;
            }
        }
        Self::new(Tensor::new(vec![n, c, steps], out)?)
    }

    /// `[T × n × c]` copy.
    pub fn time_major(&self) -> Tensor<F> {
        self.data.permute3([2, 0, 1]).expect("rank 3")
    }
}

/// Apply `f` to every `[n × c]` time slice and restack the results.
pub fn map_time_slices<F: Scalar>(
    input: &TimeBatch<F>,
    mut f: impl FnMut(&Tensor<F>) -> Result<Tensor<F>>,
) -> Result<TimeBatch<F>> {
    let slices = (0..input.steps())
        .map(|t| f(&input.slice(t)))
        .collect::<Result<Vec<_>>>()?;
    TimeBatch::from_slices(&slices)
}

/// Reference time distribution of a spatial layer: the layer's map is
/// evaluated separately on each slice and the outputs are stacked.
///
/// Only `Dense` acts per slice; convolution and pooling run along the time
/// axis itself and are rejected here.
pub fn time_distribute_forward<F: Scalar>(layer: &Layer<F>, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
    match layer {
        Layer::Dense(d) => map_time_slices(input, |x| d.apply_slice(x)),
        other => Err(Error::Argument(format!(
            "{} is not applied per time slice",
            other.kind()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1d,
    MaxPool1d,
    Lif,
    Relu,
    TemporalReadout,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv1d => "conv1d",
            LayerKind::MaxPool1d => "maxpool1d",
            LayerKind::Lif => "lif",
            LayerKind::Relu => "relu",
            LayerKind::TemporalReadout => "readout",
        };
        f.write_str(s)
    }
}

fn missing_cache(kind: LayerKind) -> Error {
    Error::State(format!("{kind} backward called without a preceding forward"))
}

fn check_grad_shape<F: Scalar>(kind: LayerKind, grad: &TimeBatch<F>, expected: &[usize]) -> Result<()> {
    if grad.tensor().shape() != expected {
        return Err(Error::Dimension(format!(
            "{kind} received gradient of shape {:?}, expected {:?}",
            grad.tensor().shape(),
            expected
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Dense<F = f32> {
    /// `[out × in]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub grad_weight: Tensor<F>,
    pub grad_bias: Tensor<F>,
    /// Input as a `[in × n·T]` matrix, plus `[n, T]`.
    cache: Option<(Vec<F>, usize, usize)>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        let [out, _] = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
        })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Result<Self> {
        let w = kernels::init_kaiming(&[outputs, inputs], inputs, rng)?;
        Self::new(w, Tensor::zeros(&[outputs]))
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x[n × in] -> x W^T + b`.
    pub fn apply_slice(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = kernels::matmul(x, &self.weight.transpose2()?)?;
        let out = self.outputs();
        for row in y.data_mut().chunks_mut(out) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    fn forward(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (n, c, t) = (input.batch(), input.channels(), input.steps());
        if c != self.inputs() {
            return Err(Error::Dimension(format!(
                "dense expects {} input channels, got {c}",
                self.inputs()
            )));
        }
        // [n, c, T] -> [c, n·T]
        let x = input.tensor().permute3([1, 0, 2])?.into_data();
        let h = self.outputs();
        let cols = n * t;
        let mut y = vec![F::zero(); h * cols];
        kernels::gemm_acc(h, c, cols, self.weight.data(), &x, &mut y);
        for (row, &b) in y.chunks_mut(cols).zip(self.bias.data()) {
            for v in row {
                *v += b;
            }
        }
        self.cache = Some((x, n, t));
        let y = Tensor::new(vec![h, n, t], y)?.permute3([1, 0, 2])?;
        TimeBatch::new(y)
    }

    fn backward(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (x, n, t) = self.cache.take().ok_or_else(|| missing_cache(LayerKind::Dense))?;
        let (h, c) = (self.outputs(), self.inputs());
        check_grad_shape(LayerKind::Dense, grad, &[n, h, t])?;
        let cols = n * t;
        let g = grad.tensor().permute3([1, 0, 2])?.into_data();

        let x_t = Tensor::new(vec![c, cols], x)?.transpose2()?;
        let mut gw = vec![F::zero(); h * c];
        kernels::gemm_acc(h, cols, c, &g, x_t.data(), &mut gw);
        self.grad_weight = Tensor::new(vec![h, c], gw)?;
        self.grad_bias = Tensor::new(
            vec![h],
            g.chunks(cols)
                .map(|r| r.iter().fold(F::zero(), |a, &v| a + v))
                .collect(),
        )?;

        let w_t = self.weight.transpose2()?;
        let mut gx = vec![F::zero(); c * cols];
        kernels::gemm_acc(c, h, cols, w_t.data(), &g, &mut gx);
        TimeBatch::new(Tensor::new(vec![c, n, t], gx)?.permute3([1, 0, 2])?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d<F = f32> {
    /// `[c_out × c_in × k]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
    pub grad_weight: Tensor<F>,
    pub grad_bias: Tensor<F>,
    cache: Option<(Vec<F>, ConvGeom)>,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>, stride: usize, padding: usize) -> Result<Self> {
        let [c_out, _, _] = weight.dims3()?;
        if bias.shape() != [c_out] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match kernel {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        Ok(Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            stride,
            padding,
            cache: None,
        })
    }

    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w = kernels::init_kaiming(&[c_out, c_in, kernel], c_in * kernel, rng)?;
        Self::new(w, Tensor::zeros(&[c_out]), stride, padding)
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn forward(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let ishape = input.tensor().dims3()?;
        if ishape[1] != self.c_in() {
            return Err(Error::Dimension(format!(
                "conv1d expects {} input channels, got {}",
                self.c_in(),
                ishape[1]
            )));
        }
        let g = ConvGeom::new(ishape, self.kernel(), self.stride, self.padding)?;
        let cols = kernels::im2col(input.tensor().data(), &g);
        let c_out = self.c_out();
        let ncols = g.batch * g.len_out;
        let mut y = vec![F::zero(); c_out * ncols];
        kernels::gemm_acc(c_out, g.c_in * g.kernel, ncols, self.weight.data(), &cols, &mut y);
        for (row, &b) in y.chunks_mut(ncols).zip(self.bias.data()) {
            for v in row {
                *v += b;
            }
        }
        let out = kernels::unfold_output(&y, c_out, &g);
        self.cache = Some((cols, g));
        TimeBatch::new(Tensor::new(vec![g.batch, c_out, g.len_out], out)?)
    }

    fn backward(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (cols, g) = self.cache.take().ok_or_else(|| missing_cache(LayerKind::Conv1d))?;
        let (gi, gk, gb) = kernels::conv1d_backward_cols(grad.tensor(), &cols, &self.weight, &g)?;
        self.grad_weight = gk;
        self.grad_bias = Tensor::new(vec![self.c_out()], gb)?;
        TimeBatch::new(gi)
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub window: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, [usize; 3])>,
}

impl MaxPool1d {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Argument("pool window and stride must be at least 1".into()));
        }
        Ok(Self {
            window,
            stride,
            cache: None,
        })
    }

    fn forward<F: Scalar>(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (y, idx) = kernels::maxpool1d(input.tensor(), self.window, self.stride)?;
        self.cache = Some((idx, input.tensor().dims3()?));
        TimeBatch::new(y)
    }

    fn backward<F: Scalar>(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (idx, shape) = self.cache.take().ok_or_else(|| missing_cache(LayerKind::MaxPool1d))?;
        TimeBatch::new(kernels::maxpool1d_backward(grad.tensor(), &idx, shape)?)
    }
}

/// LIF nonlinearity. Every `(sample, channel)` pair is one neuron whose
/// charges are the channel's pre-activations over time.
#[derive(Debug, Clone)]
pub struct LifLayer<F = f32> {
    pub config: LifConfig,
    /// `(v_pre, spikes, shape)`
    cache: Option<(Vec<F>, Vec<F>, [usize; 3])>,
}

impl<F: Scalar> LifLayer<F> {
    pub fn new(config: LifConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, cache: None })
    }

    fn forward(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let shape = input.tensor().dims3()?;
        let [n, c, t] = shape;
        let len = n * c * t;
        let mut v_pre = vec![F::zero(); len];
        let mut v_post = vec![F::zero(); len];
        let mut spikes = vec![F::zero(); len];
        lif::forward_core(
            input.tensor().data(),
            None,
            &self.config,
            Layout::unit_major(n * c, t),
            TraceBuffers {
                v_pre: &mut v_pre,
                v_post: &mut v_post,
                spikes: &mut spikes,
            },
        )?;
        let out = TimeBatch::new(Tensor::new(shape.to_vec(), spikes.clone())?)?;
        self.cache = Some((v_pre, spikes, shape));
        Ok(out)
    }

    fn backward(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (v_pre, spikes, shape) = self.cache.take().ok_or_else(|| missing_cache(LayerKind::Lif))?;
        check_grad_shape(LayerKind::Lif, grad, &shape)?;
        let [n, c, t] = shape;
        let mut gc = vec![F::zero(); n * c * t];
        lif::backward_core(
            grad.tensor().data(),
            &v_pre,
            &spikes,
            &self.config,
            Layout::unit_major(n * c, t),
            &mut gc,
        );
        TimeBatch::new(Tensor::new(shape.to_vec(), gc)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<(Vec<bool>, [usize; 3])>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    fn forward<F: Scalar>(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let mask: Vec<bool> = input.tensor().data().iter().map(|&v| v > F::zero()).collect();
        let y = input.tensor().map(|v| if v > F::zero() { v } else { F::zero() });
        self.cache = Some((mask, input.tensor().dims3()?));
        TimeBatch::new(y)
    }

    fn backward<F: Scalar>(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let (mask, shape) = self.cache.take().ok_or_else(|| missing_cache(LayerKind::Relu))?;
        check_grad_shape(LayerKind::Relu, grad, &shape)?;
        let data = grad
            .tensor()
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { F::zero() })
            .collect();
        TimeBatch::new(Tensor::new(shape.to_vec(), data)?)
    }
}

/// Mean over time of a `[n × k × T]` head output, emitted as `[n × k × 1]`.
pub fn readout_logits<F: Scalar>(output: &TimeBatch<F>) -> Tensor<F> {
    let (n, k, t) = (output.batch(), output.channels(), output.steps());
    let inv = F::one() / F::from_usize(t).expect("small integer");
    let data = output
        .tensor()
        .data()
        .chunks(t)
        .map(|row| row.iter().fold(F::zero(), |a, &v| a + v) * inv)
        .collect();
    Tensor::new(vec![n, k], data).expect("shape product")
}

#[derive(Debug, Clone, Default)]
pub struct TemporalReadout {
    cache: Option<[usize; 3]>,
}

impl TemporalReadout {
    pub fn new() -> Self {
        Self::default()
    }

    fn forward<F: Scalar>(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let shape = input.tensor().dims3()?;
        let logits = readout_logits(input);
        self.cache = Some(shape);
        TimeBatch::new(logits.reshape(&[shape[0], shape[1], 1])?)
    }

    fn backward<F: Scalar>(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        let [n, k, t] = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::TemporalReadout))?;
        check_grad_shape(LayerKind::TemporalReadout, grad, &[n, k, 1])?;
        let inv = F::one() / F::from_usize(t).expect("small integer");
        let g = grad.tensor().data();
        TimeBatch::new(Tensor::from_fn(&[n, k, t], |i| g[i / t] * inv))
    }
}

#[derive(Debug, Clone)]
pub enum Layer<F = f32> {
    Dense(Dense<F>),
    Conv1d(Conv1d<F>),
    MaxPool1d(MaxPool1d),
    Lif(LifLayer<F>),
    Relu(Relu),
    TemporalReadout(TemporalReadout),
}

impl<F: Scalar> Layer<F> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv1d(_) => LayerKind::Conv1d,
            Layer::MaxPool1d(_) => LayerKind::MaxPool1d,
            Layer::Lif(_) => LayerKind::Lif,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::TemporalReadout(_) => LayerKind::TemporalReadout,
        }
    }

    pub fn is_nonlinearity(&self) -> bool {
        matches!(self.kind(), LayerKind::Lif | LayerKind::Relu)
    }

    pub fn is_synaptic(&self) -> bool {
        matches!(self.kind(), LayerKind::Dense | LayerKind::Conv1d)
    }

    pub fn forward(&mut self, input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        match self {
            Layer::Dense(l) => l.forward(input),
            Layer::Conv1d(l) => l.forward(input),
            Layer::MaxPool1d(l) => l.forward(input),
            Layer::Lif(l) => l.forward(input),
            Layer::Relu(l) => l.forward(input),
            Layer::TemporalReadout(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, grad: &TimeBatch<F>) -> Result<TimeBatch<F>> {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Conv1d(l) => l.backward(grad),
            Layer::MaxPool1d(l) => l.backward(grad),
            Layer::Lif(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::TemporalReadout(l) => l.backward(grad),
        }
    }

    /// Parameters in a fixed order: weight, then bias.
    pub fn params(&self) -> Vec<&Tensor<F>> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv1d(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv1d(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<&Tensor<F>> {
        match self {
            Layer::Dense(l) => vec![&l.grad_weight, &l.grad_bias],
            Layer::Conv1d(l) => vec![&l.grad_weight, &l.grad_bias],
            _ => Vec::new(),
        }
    }

    /// Parameters paired with their gradients from the last backward pass.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<F>, &Tensor<F>)> {
        match self {
            Layer::Dense(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            Layer::Conv1d(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }
}

fn at_layer(i: usize, kind: LayerKind, e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Dimension(format!("layer {i} ({kind}): {m}")),
        Error::State(m) => Error::State(format!("layer {i} ({kind}): {m}")),
        Error::Numeric(m) => Error::Numeric(format!("layer {i} ({kind}): {m}")),
        other => other,
    }
}

/// Left-to-right composition. `probe` sees each layer's output.
pub fn sequential_forward_probe<F: Scalar>(
    layers: &mut [Layer<F>],
    input: &TimeBatch<F>,
    mut probe: impl FnMut(usize, &Layer<F>, &TimeBatch<F>),
) -> Result<TimeBatch<F>> {
    let mut x = input.clone();
    for (i, layer) in layers.iter_mut().enumerate() {
        x = layer.forward(&x).map_err(|e| at_layer(i, layer.kind(), e))?;
        probe(i, layer, &x);
    }
    Ok(x)
}

pub fn sequential_forward<F: Scalar>(layers: &mut [Layer<F>], input: &TimeBatch<F>) -> Result<TimeBatch<F>> {
    sequential_forward_probe(layers, input, |_, _, _| {})
}

/// Reverse pass; parameter gradients are left on the layers.
pub(crate) fn backward_in_place<F: Scalar>(
    layers: &mut [Layer<F>],
    grad_output: &TimeBatch<F>,
) -> Result<TimeBatch<F>> {
    let mut g = grad_output.clone();
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        g = layer.backward(&g).map_err(|e| at_layer(i, layer.kind(), e))?;
    }
    Ok(g)
}

/// Per layer, copies of the parameter gradients.
pub type LayerGrads<F> = Vec<Vec<Tensor<F>>>;

/// Reverse composition. Returns the input gradient and, per layer, copies of
/// the parameter gradients (empty for parameter-free layers).
pub fn sequential_backward<F: Scalar>(
    layers: &mut [Layer<F>],
    grad_output: &TimeBatch<F>,
) -> Result<(TimeBatch<F>, LayerGrads<F>)> {
    let g = backward_in_place(layers, grad_output)?;
    let grads = layers
        .iter()
        .map(|l| l.grads().into_iter().cloned().collect())
        .collect();
    Ok((g, grads))
}
