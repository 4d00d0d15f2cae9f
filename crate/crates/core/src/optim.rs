//! Adam, the cosine learning-rate schedule, and cross-entropy loss.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernels::softmax_rows;
use crate::tensor::{sc, Scalar, Tensor};

pub const LR_GRID: [f64; 3] = [1e-4, 3e-4, 1e-3];

#[derive(Debug, Clone)]
pub struct AdamState<F = f32> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Zeroed moments for parameters of the given shapes.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: m.clone(),
            m,
        }
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<F> {
        &self.m[i]
    }
}

/// One bias-corrected Adam update. Gradients are checked before any
/// parameter is touched, so a NaN leaves everything unchanged.
pub fn adam_step<F: Scalar>(
    params: &mut [(&mut Tensor<F>, &Tensor<F>)],
    state: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Dimension(format!(
                "parameter {i} {:?} / gradient {:?} / moment {:?} disagree",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("gradient of parameter {i} is not finite")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (sc::<F>(state.beta1), sc::<F>(state.beta2));
    let bc1 = sc::<F>(1.0 - state.beta1.powi(t));
    let bc2 = sc::<F>(1.0 - state.beta2.powi(t));
    let (lr, eps) = (sc::<F>(lr), sc::<F>(state.eps));
    for (i, (p, g)) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = b1 * *mv + (F::one() - b1) * gv;
            *vv = b2 * *vv + (F::one() - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub eta_min: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: usize) -> Self {
        Self {
            base_lr,
            total_epochs,
            eta_min: 0.0,
        }
    }
}

/// `eta_min + (base - eta_min) (1 + cos(pi e / E)) / 2`.
pub fn cosine_lr(epoch: usize, schedule: &LrSchedule) -> Result<f64> {
    if epoch > schedule.total_epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside schedule of {} epochs",
            schedule.total_epochs
        )));
    }
    if schedule.total_epochs == 0 {
        return Ok(schedule.base_lr);
    }
    let frac = epoch as f64 / schedule.total_epochs as f64;
    Ok(schedule.eta_min + (schedule.base_lr - schedule.eta_min) * (1.0 + (PI * frac).cos()) / 2.0)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, and its
/// gradient `(softmax - onehot) / n`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>)> {
    let [n, k] = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!("label {bad} outside [0, {k})")));
    }
    let probs = softmax_rows(logits)?;
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[y].as_f64();
    }
    let inv_n = sc::<F>(1.0 / n as f64);
    let mut grad = probs;
    for (row, &y) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[y] -= F::one();
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}
