//! Reference architectures: SpikeCNN and its ReLU twin.
//!
//! ```text
//! [Conv1d(k=5, s=1, p=2) -> LIF|ReLU -> MaxPool1d(2)] x 3   (64, 128, 256 channels)
//! Dense(512) -> LIF|ReLU -> Dense(classes) -> mean over time
//! ```
//!
//! Convolutions and pooling run along the time axis; the two dense layers act
//! on every remaining time step. A tau = 0 SpikeCNN is the binary-activation
//! network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::conv_out_len;
use crate::layers::{self, Conv1d, Dense, Layer, LayerKind, LifLayer, MaxPool1d, Relu, TemporalReadout, TimeBatch};
use crate::lif::LifConfig;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Max-pool window (and stride) after the nonlinearity; 1 disables it.
    pub pool: usize,
}

impl BlockSpec {
    pub const fn new(channels: usize) -> Self {
        Self {
            channels,
            kernel: 5,
            stride: 1,
            padding: 2,
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Neuron {
    Lif(LifConfig),
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpikeCnn,
    ReluCnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::SpikeCnn => "spike_cnn",
            ModelKind::ReluCnn => "relu_cnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike_cnn" | "spikecnn" | "snn" => Ok(ModelKind::SpikeCnn),
            "relu_cnn" | "relucnn" | "cnn" | "ann" => Ok(ModelKind::ReluCnn),
            _ => Err(Error::Argument(format!("unknown model kind `{s}`"))),
        }
    }
}

pub const REFERENCE_CHANNELS: [usize; 3] = [64, 128, 256];
pub const REFERENCE_HIDDEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub time_steps: usize,
    pub class_count: usize,
    pub blocks: Vec<BlockSpec>,
    pub hidden: usize,
    pub neuron: Neuron,
    pub seed: u64,
}

/// Pool window actually used for a block at a given length. Windows longer
/// than the sequence shrink to fit, so short windows still build.
fn effective_pool(pool: usize, len: usize) -> usize {
    pool.min(len).max(1)
}

impl ModelSpec {
    /// The reference architecture for `D` channels, `T` steps and a class count.
    pub fn reference(input_channels: usize, time_steps: usize, class_count: usize, neuron: Neuron, seed: u64) -> Self {
        Self {
            input_channels,
            time_steps,
            class_count,
            blocks: REFERENCE_CHANNELS.iter().map(|&c| BlockSpec::new(c)).collect(),
            hidden: REFERENCE_HIDDEN,
            neuron,
            seed,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.neuron {
            Neuron::Lif(_) => ModelKind::SpikeCnn,
            Neuron::Relu => ModelKind::ReluCnn,
        }
    }

    pub fn with_neuron(mut self, neuron: Neuron) -> Self {
        self.neuron = neuron;
        self
    }

    /// Sequence length after every block, starting with the input length.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![self.time_steps];
        let mut len = self.time_steps;
        for (i, b) in self.blocks.iter().enumerate() {
            len = conv_out_len(len, b.kernel, b.stride, b.padding)
                .map_err(|e| Error::Argument(format!("block {i}: {e}")))?;
            let w = effective_pool(b.pool, len);
            len = conv_out_len(len, w, w, 0)?;
            lens.push(len);
        }
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Argument("class_count must be at least 2".into()));
        }
        if self.time_steps == 0 || self.input_channels == 0 {
            return Err(Error::Argument(
                "time_steps and input_channels must be at least 1".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(Error::Argument("hidden width must be at least 1".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.stride == 0 || b.pool == 0 {
                return Err(Error::Argument(format!("block {i} has a zero-sized field")));
            }
        }
        if let Neuron::Lif(cfg) = &self.neuron {
            cfg.validate()?;
        }
        self.lengths().map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct Model<F = f32> {
    spec: ModelSpec,
    layers: Vec<Layer<F>>,
}

fn nonlinearity<F: Scalar>(neuron: &Neuron) -> Result<Layer<F>> {
    Ok(match neuron {
        Neuron::Lif(cfg) => Layer::Lif(LifLayer::new(*cfg)?),
        Neuron::Relu => Layer::Relu(Relu::new()),
    })
}

fn build<F: Scalar>(spec: &ModelSpec) -> Result<Model<F>> {
    spec.validate()?;
    let lens = spec.lengths()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut layers = Vec::new();
    let mut c_in = spec.input_channels;
    for (i, b) in spec.blocks.iter().enumerate() {
        layers.push(Layer::Conv1d(Conv1d::init(
            c_in, b.channels, b.kernel, b.stride, b.padding, &mut rng,
        )?));
        layers.push(nonlinearity(&spec.neuron)?);
        let conv_len = conv_out_len(lens[i], b.kernel, b.stride, b.padding)?;
        let w = effective_pool(b.pool, conv_len);
        if w > 1 {
            layers.push(Layer::MaxPool1d(MaxPool1d::new(w, w)?));
        }
        c_in = b.channels;
    }
    layers.push(Layer::Dense(Dense::init(c_in, spec.hidden, &mut rng)?));
    layers.push(nonlinearity(&spec.neuron)?);
    layers.push(Layer::Dense(Dense::init(spec.hidden, spec.class_count, &mut rng)?));
    layers.push(Layer::TemporalReadout(TemporalReadout::new()));
    Ok(Model {
        spec: spec.clone(),
        layers,
    })
}

/// SpikeCNN; the spec's neuron must be LIF.
pub fn build_spike_cnn<F: Scalar>(spec: &ModelSpec) -> Result<Model<F>> {
    if spec.kind() != ModelKind::SpikeCnn {
        return Err(Error::Argument("build_spike_cnn needs a LIF neuron spec".into()));
    }
    build(spec)
}

/// The ReLU counterpart; same topology and, for equal seeds, same weights.
pub fn build_relu_cnn<F: Scalar>(spec: &ModelSpec) -> Result<Model<F>> {
    if spec.kind() != ModelKind::ReluCnn {
        return Err(Error::Argument("build_relu_cnn needs a ReLU neuron spec".into()));
    }
    build(spec)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Scalar> Model<F> {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        build(spec)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    /// Layer names numbered per kind: `conv1d_1`, `lif_1`, `maxpool1d_1`, ...
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::BTreeMap::<String, usize>::new();
        self.layers
            .iter()
            .map(|l| {
                let k = l.kind().to_string();
                let n = counts.entry(k.clone()).or_default();
                *n += 1;
                format!("{k}_{}", *n)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().flat_map(|l| l.grads()).collect()
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<F>, &Tensor<F>)> {
        self.layers.iter_mut().flat_map(|l| l.params_and_grads()).collect()
    }

    /// Named parameters in checkpoint order: `<layer index>.weight|bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (p, name) in l.params().into_iter().zip(["weight", "bias"]) {
                out.push((format!("{i}.{name}"), p));
            }
        }
        out
    }

    fn check_input(&self, batch: &TimeBatch<F>) -> Result<()> {
        if batch.channels() != self.spec.input_channels || batch.steps() != self.spec.time_steps {
            return Err(Error::Dimension(format!(
                "model expects [n, {}, {}] input, got {:?}",
                self.spec.input_channels,
                self.spec.time_steps,
                batch.tensor().shape()
            )));
        }
        Ok(())
    }

    /// Logits `[n × classes]`.
    pub fn forward(&mut self, batch: &TimeBatch<F>) -> Result<Tensor<F>> {
        self.forward_probe(batch, |_, _, _| {})
    }

    pub fn forward_probe(
        &mut self,
        batch: &TimeBatch<F>,
        probe: impl FnMut(usize, &Layer<F>, &TimeBatch<F>),
    ) -> Result<Tensor<F>> {
        self.check_input(batch)?;
        let out = layers::sequential_forward_probe(&mut self.layers, batch, probe)?;
        let [n, k, _] = out.tensor().dims3()?;
        out.into_tensor().reshape(&[n, k])
    }

    /// Backpropagate `dL/dlogits`; parameter gradients land on the layers.
    pub fn backward(&mut self, grad_logits: &Tensor<F>) -> Result<TimeBatch<F>> {
        let [n, k] = grad_logits.dims2()?;
        let g = TimeBatch::new(grad_logits.clone().reshape(&[n, k, 1])?)?;
        layers::backward_in_place(&mut self.layers, &g)
    }

    pub fn predict(&mut self, batch: &TimeBatch<F>) -> Result<Vec<usize>> {
        predict(self, batch)
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> Result<Model<G>> {
        let mut out = Model::<G>::build(&self.spec)?;
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        Ok(out)
    }

    /// Replace the LIF configuration of every spiking layer.
    pub fn set_lif_config(&mut self, cfg: LifConfig) -> Result<()> {
        cfg.validate()?;
        if let Neuron::Lif(c) = &mut self.spec.neuron {
            *c = cfg;
        }
        for l in &mut self.layers {
            if let Layer::Lif(lif) = l {
                lif.config = cfg;
            }
        }
        Ok(())
    }

    pub fn count_layers(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }
}

/// Argmax of the time-averaged head output for every sample.
pub fn predict<F: Scalar>(model: &mut Model<F>, batch: &TimeBatch<F>) -> Result<Vec<usize>> {
    let logits = model.forward(batch)?;
    let k = model.spec().class_count;
    Ok(logits.data().chunks(k).map(argmax).collect())
}
