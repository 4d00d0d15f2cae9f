//! Python bindings. Windows travel as nested lists shaped `[n][T][D]`,
//! neuron traces as `[T][units]`.

// pyo3's generated wrappers convert PyErr into itself
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spikehar::checkpoint::{self, CheckpointMeta};
use spikehar::commands::{parse_reset, parse_reset_grad, Prepared};
use spikehar::data::{self, NormStats};
use spikehar::lif;
use spikehar::metrics::{self, EnergyModel};
use spikehar::optim::{self, LrSchedule};
use spikehar::train::{self as training, TrainConfig, EVAL_BATCH};
use spikehar::{
    Error, ModelKind, ModelSpec, Neuron, ResetGrad, ResetMode, SynthSpec, Tensor, TimeBatch, WindowDataset,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Divergence { .. } | Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Tensor::new(vec![rows.len(), width], rows.concat()).map_err(py_err)
}

fn tensor_to_rows<F: spikehar::Scalar>(t: &Tensor<F>) -> Vec<Vec<f64>> {
    let width = t.shape().last().copied().unwrap_or(0).max(1);
    t.data()
        .chunks(width)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn windows_to_batch(windows: &[Vec<Vec<f64>>]) -> PyResult<TimeBatch<f32>> {
    let steps = windows.first().map_or(0, Vec::len);
    let chans = windows.first().and_then(|w| w.first()).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(windows.len() * steps * chans);
    for w in windows {
        if w.len() != steps || w.iter().any(|r| r.len() != chans) {
            return Err(PyValueError::new_err(
                "every window must be shaped [T][D] with the same T and D",
            ));
        }
        flat.extend(w.iter().flatten().map(|&v| v as f32));
    }
    let samples = Tensor::new(vec![windows.len(), steps, chans], flat).map_err(py_err)?;
    TimeBatch::from_samples(&samples).map_err(py_err)
}

#[pyclass(module = "spikehar", name = "LifConfig")]
#[derive(Clone)]
struct PyLifConfig {
    inner: spikehar::LifConfig,
}

#[pymethods]
impl PyLifConfig {
    #[new]
    #[pyo3(signature = (tau=0.75, v_th=0.5, reset="soft", reset_grad="attached"))]
    fn new(tau: f64, v_th: f64, reset: &str, reset_grad: &str) -> PyResult<Self> {
        let cfg = spikehar::LifConfig::new(tau, v_th, parse_reset(reset).map_err(py_err)?)
            .map_err(py_err)?
            .with_reset_grad(parse_reset_grad(reset_grad).map_err(py_err)?);
        Ok(Self { inner: cfg })
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn v_th(&self) -> f64 {
        self.inner.v_th
    }

    #[getter]
    fn reset(&self) -> &'static str {
        match self.inner.reset {
            ResetMode::Hard => "hard",
            ResetMode::Soft => "soft",
        }
    }

    #[getter]
    fn reset_grad(&self) -> &'static str {
        match self.inner.reset_grad {
            ResetGrad::Attached => "attached",
            ResetGrad::Detached => "detached",
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "LifConfig(tau={}, v_th={}, reset='{}', reset_grad='{}')",
            self.inner.tau,
            self.inner.v_th,
            self.reset(),
            self.reset_grad()
        )
    }
}

fn trace_of(charges: &[Vec<f64>], cfg: &PyLifConfig, v0: Option<Vec<f64>>) -> PyResult<lif::LifTrace<f64>> {
    let c = rows_to_tensor(charges)?;
    let units = c.shape()[1];
    let v0 = Tensor::new(vec![units], v0.unwrap_or_else(|| vec![0.0; units])).map_err(py_err)?;
    lif::lif_forward(&c, &cfg.inner, &v0).map_err(py_err)
}

/// Run a layer of LIF neurons over `charges[T][units]`. Returns a dict with
/// `v_pre`, `v_post` and `spikes`, each `[T][units]`.
#[pyfunction]
#[pyo3(signature = (charges, cfg, v0=None))]
fn lif_forward<'py>(
    py: Python<'py>,
    charges: Vec<Vec<f64>>,
    cfg: &PyLifConfig,
    v0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let tr = trace_of(&charges, cfg, v0)?;
    let out = PyDict::new_bound(py);
    out.set_item("v_pre", tensor_to_rows(&tr.v_pre))?;
    out.set_item("v_post", tensor_to_rows(&tr.v_post))?;
    out.set_item("spikes", tensor_to_rows(&tr.spikes))?;
    Ok(out)
}

/// Surrogate BPTT: gradient of the loss with respect to the charges, given
/// `grad[T][units]` with respect to the spikes.
#[pyfunction]
#[pyo3(signature = (grad, charges, cfg, v0=None))]
fn lif_backward(
    grad: Vec<Vec<f64>>,
    charges: Vec<Vec<f64>>,
    cfg: &PyLifConfig,
    v0: Option<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let tr = trace_of(&charges, cfg, v0)?;
    let g = rows_to_tensor(&grad)?;
    Ok(tensor_to_rows(&lif::lif_backward(&g, &tr, &cfg.inner).map_err(py_err)?))
}

#[pyfunction]
fn surrogate_grad(v_pre: Vec<f64>, v_th: f64) -> PyResult<Vec<f64>> {
    let v = Tensor::new(vec![v_pre.len()], v_pre).map_err(py_err)?;
    Ok(lif::surrogate_grad(&v, v_th).into_data())
}

#[pyfunction]
fn cosine_lr(epoch: usize, base_lr: f64, total_epochs: usize) -> PyResult<f64> {
    optim::cosine_lr(epoch, &LrSchedule::new(base_lr, total_epochs)).map_err(py_err)
}

#[pyclass(module = "spikehar", name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: WindowDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (classes=3, per_class=200, steps=64, channels=3, seed=0, noise=0.3))]
    fn synthetic(
        classes: usize,
        per_class: usize,
        steps: usize,
        channels: usize,
        seed: u64,
        noise: f64,
    ) -> PyResult<Self> {
        let mut spec = SynthSpec::new(classes, per_class, steps, channels, seed);
        spec.noise = noise;
        Ok(Self {
            inner: data::synth_generate(&spec).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load_ucihar(root: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_ucihar(&root).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_window_csv(&path).map_err(py_err)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::save_window_csv(&self.inner, &path).map_err(py_err)
    }

    /// Seeded 64/16/20 split, normalized with train statistics.
    fn prepare(&self, split_seed: u64) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
        let p = Prepared::new(&self.inner, split_seed, None).map_err(py_err)?;
        Ok((Self { inner: p.train }, Self { inner: p.val }, Self { inner: p.test }))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    fn window(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("window {i} out of range")));
        }
        let (t, d) = (self.inner.steps(), self.inner.channels());
        let w = &self.inner.samples.data()[i * t * d..(i + 1) * t * d];
        Ok(w.chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, steps={}, channels={}, classes={})",
            self.inner.len(),
            self.inner.steps(),
            self.inner.channels(),
            self.inner.class_count
        )
    }
}

#[pyclass(module = "spikehar", name = "Model")]
struct PyModel {
    inner: spikehar::Model<f32>,
    norm: Option<NormStats>,
}

#[pymethods]
impl PyModel {
    /// Three conv blocks and a two-layer head. `neuron` is `lif` or `relu`.
    #[staticmethod]
    #[pyo3(signature = (input_channels, time_steps, classes, neuron="lif", cfg=None, seed=0))]
    fn reference(
        input_channels: usize,
        time_steps: usize,
        classes: usize,
        neuron: &str,
        cfg: Option<PyLifConfig>,
        seed: u64,
    ) -> PyResult<Self> {
        let neuron = match neuron {
            "lif" => Neuron::Lif(cfg.map_or_else(spikehar::LifConfig::default, |c| c.inner)),
            "relu" => Neuron::Relu,
            other => {
                return Err(PyValueError::new_err(format!(
                    "neuron must be `lif` or `relu`, got `{other}`"
                )))
            }
        };
        let spec = ModelSpec::reference(input_channels, time_steps, classes, neuron, seed);
        Ok(Self {
            inner: spikehar::Model::build(&spec).map_err(py_err)?,
            norm: None,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, meta) = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner, norm: meta.norm })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = CheckpointMeta {
            norm: self.norm.clone(),
            split_seed: None,
        };
        checkpoint::save(&self.inner, &meta, &path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.layer_names()
    }

    /// Class scores for `windows[n][T][D]`.
    fn logits(&mut self, windows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let x = windows_to_batch(&windows)?;
        Ok(tensor_to_rows(&self.inner.forward(&x).map_err(py_err)?))
    }

    fn predict(&mut self, windows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<usize>> {
        let x = windows_to_batch(&windows)?;
        self.inner.predict(&x).map_err(py_err)
    }

    fn evaluate(&mut self, dataset: &PyDataset) -> PyResult<f64> {
        Ok(training::evaluate(&mut self.inner, &dataset.inner, EVAL_BATCH)
            .map_err(py_err)?
            .accuracy)
    }

    fn op_counts(&self) -> PyResult<Vec<(String, u64)>> {
        let c = metrics::count_ops(&self.inner).map_err(py_err)?;
        Ok(c.layers.into_iter().map(|l| (l.name, l.ops)).collect())
    }

    /// Zero fraction of every nonlinearity output over `dataset`.
    fn sparsity<'py>(&mut self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let r = metrics::measure_sparsity(&mut self.inner, &dataset.inner, EVAL_BATCH).map_err(py_err)?;
        let out = PyDict::new_bound(py);
        for l in &r.layers {
            out.set_item(&l.name, l.fraction())?;
        }
        out.set_item("weighted_average", r.weighted_average())?;
        Ok(out)
    }

    /// Energy proxy in pJ, with the equal-size ANN as reference.
    #[pyo3(signature = (dataset, e_mac=4.6, e_ac=0.9, steps=1))]
    fn energy<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        e_mac: f64,
        e_ac: f64,
        steps: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let e = EnergyModel::new(e_mac, e_ac).map_err(py_err)?;
        let sp = metrics::measure_sparsity(&mut self.inner, &dataset.inner, EVAL_BATCH).map_err(py_err)?;
        let counts = metrics::count_ops(&self.inner).map_err(py_err)?;
        let r = metrics::estimate_energy(&counts, &sp, self.inner.kind(), &e, steps).map_err(py_err)?;
        let out = PyDict::new_bound(py);
        out.set_item("total_pj", r.total_pj)?;
        out.set_item("ann_pj", r.ann_pj)?;
        out.set_item("ratio", r.ratio)?;
        out.set_item("ratio_excl_first", r.ratio_excl_first)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind='{}', parameters={})",
            self.inner.kind(),
            self.inner.parameter_count()
        )
    }
}

/// Adam with a cosine schedule and best-validation snapshot. Returns the
/// restored model and one dict per epoch.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (model, train, val, epochs=20, batch_size=128, lr=1e-3, seed=0))]
fn train<'py>(
    py: Python<'py>,
    model: &PyModel,
    train: &PyDataset,
    val: &PyDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = TrainConfig {
        epochs,
        batch_size,
        lr,
        seed,
    };
    let init = model.inner.clone();
    let outcome = py
        .allow_threads(|| training::train(init, &train.inner, &val.inner, &cfg, |_| {}))
        .map_err(py_err)?;
    let history = outcome
        .history
        .iter()
        .map(|m| {
            let d = PyDict::new_bound(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("lr", m.lr)?;
            d.set_item("train_loss", m.train_loss)?;
            d.set_item("train_acc", m.train_acc)?;
            d.set_item("val_acc", m.val_acc)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let trained = PyModel {
        inner: outcome.model,
        norm: model.norm.clone(),
    };
    Ok((trained, history))
}

#[pyfunction]
fn model_kinds() -> Vec<String> {
    [ModelKind::SpikeCnn, ModelKind::ReluCnn]
        .iter()
        .map(|k| k.to_string())
        .collect()
}

#[pymodule]
#[pyo3(name = "spikehar")]
fn spikehar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLifConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lif_forward, m)?)?;
    m.add_function(wrap_pyfunction!(lif_backward, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_grad, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(model_kinds, m)?)?;
    Ok(())
}
