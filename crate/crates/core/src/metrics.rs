//! Activation sparsity, synaptic operation counts and a per-operation energy
//! proxy for comparing spiking and ReLU networks.

use std::fmt::Write as _;

use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::kernels::conv_out_len;
use crate::layers::{Layer, LayerKind, TimeBatch};
use crate::model::{Model, ModelKind};
use crate::tensor::Scalar;

pub const SPARSITY_CSV_HEADER: &str = "# spikehar sparsity v1";
pub const ENERGY_CSV_HEADER: &str = "# spikehar energy v1";

/// Zero count of one activation tensor stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSparsity {
    pub name: String,
    pub zeros: u64,
    pub elements: u64,
}

impl LayerSparsity {
    pub fn fraction(&self) -> f64 {
        if self.elements == 0 {
            0.0
        } else {
            self.zeros as f64 / self.elements as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub kind: ModelKind,
    /// Outputs of every LIF / ReLU layer.
    pub layers: Vec<LayerSparsity>,
    /// Inputs of every conv / dense layer, aligned with [`OpCounts::layers`].
    pub synaptic_inputs: Vec<LayerSparsity>,
}

impl SparsityReport {
    /// Zero fraction over all nonlinearity outputs pooled together, i.e. the
    /// per-layer fractions weighted by element count.
    pub fn weighted_average(&self) -> f64 {
        let (z, e) = self
            .layers
            .iter()
            .fold((0u64, 0u64), |(z, e), l| (z + l.zeros, e + l.elements));
        if e == 0 {
            0.0
        } else {
            z as f64 / e as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SPARSITY_CSV_HEADER}\nlayer,zeros,elements,sparsity\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{},{}", l.name, l.zeros, l.elements, l.fraction());
        }
        let (z, e) = self
            .layers
            .iter()
            .fold((0u64, 0u64), |(z, e), l| (z + l.zeros, e + l.elements));
        let _ = writeln!(s, "weighted_average,{z},{e},{}", self.weighted_average());
        s
    }
}

fn zeros_of<F: Scalar>(x: &TimeBatch<F>) -> u64 {
    x.tensor().data().iter().filter(|v| v.is_zero()).count() as u64
}

/// Exact-zero fractions of nonlinearity outputs and synaptic-layer inputs
/// over the whole dataset, aggregated in sample order.
pub fn measure_sparsity<F: Scalar>(
    model: &mut Model<F>,
    dataset: &WindowDataset,
    batch_size: usize,
) -> Result<SparsityReport> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot measure sparsity on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let names = model.layer_names();
    let n_layers = names.len();
    let mut zeros = vec![0u64; n_layers];
    let mut elements = vec![0u64; n_layers];
    let mut in_zeros = vec![0u64; n_layers];
    let mut in_elements = vec![0u64; n_layers];
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (b32, _) = dataset.batch(chunk);
        let batch = TimeBatch::new(b32.tensor().cast::<F>())?;
        let mut prev_zeros = zeros_of(&batch);
        let mut prev_len = batch.tensor().len() as u64;
        model.forward_probe(&batch, |i, layer, out| {
            if layer.is_synaptic() {
                in_zeros[i] += prev_zeros;
                in_elements[i] += prev_len;
            }
            prev_zeros = zeros_of(out);
            prev_len = out.tensor().len() as u64;
            if layer.is_nonlinearity() {
                zeros[i] += prev_zeros;
                elements[i] += prev_len;
            }
        })?;
    }
    let mut layers = Vec::new();
    let mut synaptic_inputs = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        if layer.is_nonlinearity() {
            layers.push(LayerSparsity {
                name: names[i].clone(),
                zeros: zeros[i],
                elements: elements[i],
            });
        }
        if layer.is_synaptic() {
            synaptic_inputs.push(LayerSparsity {
                name: names[i].clone(),
                zeros: in_zeros[i],
                elements: in_elements[i],
            });
        }
    }
    Ok(SparsityReport {
        kind: model.kind(),
        layers,
        synaptic_inputs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOps {
    pub name: String,
    pub kind: LayerKind,
    pub ops: u64,
}

/// Dense multiply-accumulate positions of every synaptic layer for one
/// sample and one pass over its window.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCounts {
    pub layers: Vec<LayerOps>,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|l| l.ops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,ops\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{}", l.name, l.ops);
        }
        s
    }
}

/// Walk the layer shapes: conv is `c_out·L_out·c_in·k`, dense is
/// `in·out` at every remaining time position.
pub fn count_ops<F: Scalar>(model: &Model<F>) -> Result<OpCounts> {
    let names = model.layer_names();
    let mut len = model.spec().time_steps;
    let mut out = Vec::new();
    for (layer, name) in model.layers().iter().zip(names) {
        match layer {
            Layer::Conv1d(c) => {
                len = conv_out_len(len, c.kernel(), c.stride, c.padding)?;
                let ops = c.c_out() * len * c.c_in() * c.kernel();
                out.push(LayerOps {
                    name,
                    kind: LayerKind::Conv1d,
                    ops: ops as u64,
                });
            }
            Layer::Dense(d) => out.push(LayerOps {
                name,
                kind: LayerKind::Dense,
                ops: (d.inputs() * d.outputs() * len) as u64,
            }),
            Layer::MaxPool1d(p) => {
                if p.window > len {
                    return Err(Error::Dimension(format!(
                        "{name}: window {} exceeds length {len}",
                        p.window
                    )));
                }
                len = (len - p.window) / p.stride + 1;
            }
            Layer::TemporalReadout(_) => len = 1,
            Layer::Lif(_) | Layer::Relu(_) => {}
        }
    }
    Ok(OpCounts { layers: out })
}

/// Picojoules per operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { e_mac: 4.6, e_ac: 0.9 }
    }
}

impl EnergyModel {
    pub fn new(e_mac: f64, e_ac: f64) -> Result<Self> {
        let m = Self { e_mac, e_ac };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_ac > 0.0 && self.e_mac > self.e_ac && self.e_mac.is_finite()) {
            return Err(Error::Argument(format!(
                "energy constants need e_mac > e_ac > 0, got e_mac={} e_ac={}",
                self.e_mac, self.e_ac
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub name: String,
    pub ops: u64,
    /// Zero fraction of the layer's input; 0 for dense MAC layers.
    pub input_sparsity: f64,
    pub energy_pj: f64,
    /// Energy of the same layer as a dense MAC pass.
    pub ann_pj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub kind: ModelKind,
    pub rows: Vec<EnergyRow>,
    pub total_pj: f64,
    pub ann_pj: f64,
    /// `total / ann`, the ANN reference normalized to 1.
    pub ratio: f64,
    /// Same ratio with the first layer's term removed from both sides.
    pub ratio_excl_first: f64,
}

impl EnergyReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ENERGY_CSV_HEADER}\nlayer,op_count,sparsity,energy_pj,normalized\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                r.ops,
                r.input_sparsity,
                r.energy_pj,
                r.energy_pj / self.ann_pj
            );
        }
        let ops: u64 = self.rows.iter().map(|r| r.ops).sum();
        let _ = writeln!(s, "ann_reference,{ops},,{},1", self.ann_pj);
        let _ = writeln!(s, "total,{ops},,{},{}", self.total_pj, self.ratio);
        let _ = writeln!(s, "total_excl_first,,,,{}", self.ratio_excl_first);
        s
    }
}

/// ANN energy is `Σ ops·e_mac`. A spiking model pays `ops·rate·e_ac` per
/// time step, `rate` being one minus the measured input sparsity, except for
/// the first layer whose real-valued input costs full MACs.
pub fn estimate_energy(
    counts: &OpCounts,
    sparsity: &SparsityReport,
    kind: ModelKind,
    energy: &EnergyModel,
    steps: usize,
) -> Result<EnergyReport> {
    energy.validate()?;
    if counts.layers.len() != sparsity.synaptic_inputs.len() {
        return Err(Error::Argument(format!(
            "{} counted layers but {} measured synaptic inputs",
            counts.layers.len(),
            sparsity.synaptic_inputs.len()
        )));
    }
    if let Some((c, s)) = counts
        .layers
        .iter()
        .zip(&sparsity.synaptic_inputs)
        .find(|(c, s)| c.name != s.name)
    {
        return Err(Error::Argument(format!(
            "layer `{}` paired with measurement of `{}`",
            c.name, s.name
        )));
    }
    if steps == 0 {
        return Err(Error::Argument("steps must be at least 1".into()));
    }
    let t = steps as f64;
    let mut rows = Vec::with_capacity(counts.layers.len());
    for (i, (c, s)) in counts.layers.iter().zip(&sparsity.synaptic_inputs).enumerate() {
        let ops = c.ops as f64;
        let ann_pj = ops * energy.e_mac;
        let (input_sparsity, energy_pj) = match kind {
            ModelKind::ReluCnn => (0.0, ann_pj),
            ModelKind::SpikeCnn if i == 0 => (0.0, ann_pj * t),
            ModelKind::SpikeCnn => {
                let sp = s.fraction();
                (sp, ops * (1.0 - sp) * energy.e_ac * t)
            }
        };
        rows.push(EnergyRow {
            name: c.name.clone(),
            ops: c.ops,
            input_sparsity,
            energy_pj,
            ann_pj,
        });
    }
    let total_pj: f64 = rows.iter().map(|r| r.energy_pj).sum();
    let ann_pj: f64 = rows.iter().map(|r| r.ann_pj).sum();
    let (first, first_ann) = rows.first().map_or((0.0, 0.0), |r| (r.energy_pj, r.ann_pj));
    let rest_ann = ann_pj - first_ann;
    Ok(EnergyReport {
        kind,
        total_pj,
        ann_pj,
        ratio: if ann_pj > 0.0 { total_pj / ann_pj } else { 0.0 },
        ratio_excl_first: if rest_ann > 0.0 {
            (total_pj - first) / rest_ann
        } else {
            0.0
        },
        rows,
    })
}
