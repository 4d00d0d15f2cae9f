//! Leaky integrate-and-fire neurons with a triangle surrogate gradient.
//!
//! Per neuron and step `t` (with `v_post[0] = v0`):
//!
//! ```text
//! v_pre[t]  = tau * v_post[t-1] + c[t]
//! s[t]      = 1 if v_pre[t] > v_th else 0
//! v_post[t] = v_pre[t] * (1 - s[t])        hard reset
//! v_post[t] = v_pre[t] - s[t] * v_th      soft reset
//! ```
//!
//! The backward pass differentiates this recursion exactly, replacing
//! `ds/dv_pre` with `max(0, 1 - |v_pre / v_th - 1|)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    Soft,
}

/// Whether the spike inside the reset is differentiated (through the
/// surrogate) or treated as a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetGrad {
    Attached,
    Detached,
}

/// How the forward pass turns a potential into a spike.
///
/// `Relaxed` replaces the step with its smooth antiderivative of the
/// surrogate (a piecewise quadratic rising from 0 at `v = 0` to `v_th` at
/// `v = 2 v_th`). The exact derivative of a relaxed network equals what
/// [`lif_backward`] computes, which lets finite differences check the whole
/// gradient pipeline. Training always uses `Step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FireMode {
    #[default]
    Step,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    /// Membrane decay factor in `[0, 1]`.
    pub tau: f64,
    /// Firing threshold, `> 0`.
    pub v_th: f64,
    pub reset: ResetMode,
    pub reset_grad: ResetGrad,
    #[serde(default)]
    pub fire: FireMode,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 0.75,
            v_th: 0.5,
            reset: ResetMode::Soft,
            reset_grad: ResetGrad::Attached,
            fire: FireMode::Step,
        }
    }
}

impl LifConfig {
    pub fn new(tau: f64, v_th: f64, reset: ResetMode) -> Result<Self> {
        let cfg = Self {
            tau,
            v_th,
            reset,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_reset_grad(mut self, reset_grad: ResetGrad) -> Self {
        self.reset_grad = reset_grad;
        self
    }

    pub fn with_fire(mut self, fire: FireMode) -> Self {
        self.fire = fire;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Argument(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::Argument(format!("v_th must be positive, got {}", self.v_th)));
        }
        Ok(())
    }
}

/// Potentials and spikes of one forward pass, all `[T × units]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifTrace<F = f32> {
    pub v_pre: Tensor<F>,
    pub v_post: Tensor<F>,
    pub spikes: Tensor<F>,
}

/// Triangle surrogate `max(0, 1 - |v / v_th - 1|)` for a single value.
#[inline]
pub fn surrogate<F: Scalar>(v_pre: F, v_th: F) -> F {
    (F::one() - (v_pre / v_th - F::one()).abs()).max(F::zero())
}

/// Elementwise triangle surrogate gradient.
pub fn surrogate_grad<F: Scalar>(v_pre: &Tensor<F>, v_th: F) -> Tensor<F> {
    v_pre.map(|v| surrogate(v, v_th))
}

#[inline]
fn relaxed_fire<F: Scalar>(v: F, v_th: F) -> F {
    let two = sc::<F>(2.0);
    if v <= F::zero() {
        F::zero()
    } else if v <= v_th {
        v * v / (two * v_th)
    } else if v < two * v_th {
        let r = two * v_th - v;
        v_th - r * r / (two * v_th)
    } else {
        v_th
    }
}

/// Index arithmetic so the same recursion serves `[T × units]` tensors and
/// the `[n × c × T]` activations used inside networks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub units: usize,
    pub steps: usize,
    pub unit_stride: usize,
    pub time_stride: usize,
}

impl Layout {
    pub fn time_major(steps: usize, units: usize) -> Self {
        Self {
            units,
            steps,
            unit_stride: 1,
            time_stride: units,
        }
    }

    pub fn unit_major(units: usize, steps: usize) -> Self {
        Self {
            units,
            steps,
            unit_stride: steps,
            time_stride: 1,
        }
    }

    #[inline]
    fn at(&self, unit: usize, t: usize) -> usize {
        unit * self.unit_stride + t * self.time_stride
    }
}

pub(crate) struct TraceBuffers<'a, F> {
    pub v_pre: &'a mut [F],
    pub v_post: &'a mut [F],
    pub spikes: &'a mut [F],
}

pub(crate) fn forward_core<F: Scalar>(
    charges: &[F],
    v0: Option<&[F]>,
    cfg: &LifConfig,
    layout: Layout,
    out: TraceBuffers<'_, F>,
) -> Result<()> {
    let tau = sc::<F>(cfg.tau);
    let v_th = sc::<F>(cfg.v_th);
    for u in 0..layout.units {
        let mut v = v0.map_or(F::zero(), |v0| v0[u]);
        for t in 0..layout.steps {
            let i = layout.at(u, t);
            let c = charges[i];
            if !c.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite charge {c} at time step {t} (unit {u})"
                )));
            }
            let pre = tau * v + c;
            let s = match cfg.fire {
                FireMode::Step if pre > v_th => F::one(),
                FireMode::Step => F::zero(),
                FireMode::Relaxed => relaxed_fire(pre, v_th),
            };
            v = match cfg.reset {
                ResetMode::Hard => pre * (F::one() - s),
                ResetMode::Soft => pre - s * v_th,
            };
            out.v_pre[i] = pre;
            out.v_post[i] = v;
            out.spikes[i] = s;
        }
    }
    Ok(())
}

/// Reverse-mode pass through the recursion. `grad_v_post` carries
/// dL/dv_post[t] backwards; each step adds the direct spike term and the
/// membrane path, then hands `tau * dL/dv_pre[t]` to step `t - 1`.
pub(crate) fn backward_core<F: Scalar>(
    grad_spikes: &[F],
    v_pre: &[F],
    spikes: &[F],
    cfg: &LifConfig,
    layout: Layout,
    grad_charges: &mut [F],
) {
    let tau = sc::<F>(cfg.tau);
    let v_th = sc::<F>(cfg.v_th);
    let attached = cfg.reset_grad == ResetGrad::Attached;
    for u in 0..layout.units {
        let mut grad_v_post = F::zero();
        for t in (0..layout.steps).rev() {
            let i = layout.at(u, t);
            let pre = v_pre[i];
            let s = spikes[i];
            let (dpost_dpre, dpost_ds) = match cfg.reset {
                ResetMode::Hard => (F::one() - s, -pre),
                ResetMode::Soft => (F::one(), -v_th),
            };
            let mut grad_s = grad_spikes[i];
            if attached {
                grad_s += grad_v_post * dpost_ds;
            }
            let grad_pre = grad_v_post * dpost_dpre + grad_s * surrogate(pre, v_th);
            grad_charges[i] = grad_pre;
            grad_v_post = tau * grad_pre;
        }
    }
}

/// Run the neuron over `charges[T × units]`, starting from `v0[units]`.
pub fn lif_forward<F: Scalar>(charges: &Tensor<F>, config: &LifConfig, v0: &Tensor<F>) -> Result<LifTrace<F>> {
    config.validate()?;
    let [steps, units] = charges.dims2()?;
    if v0.shape() != [units] {
        return Err(Error::Dimension(format!(
            "v0 has shape {:?}, expected [{units}]",
            v0.shape()
        )));
    }
    let mut v_pre = Tensor::zeros(&[steps, units]);
    let mut v_post = Tensor::zeros(&[steps, units]);
    let mut spikes = Tensor::zeros(&[steps, units]);
    forward_core(
        charges.data(),
        Some(v0.data()),
        config,
        Layout::time_major(steps, units),
        TraceBuffers {
            v_pre: v_pre.data_mut(),
            v_post: v_post.data_mut(),
            spikes: spikes.data_mut(),
        },
    )?;
    Ok(LifTrace { v_pre, v_post, spikes })
}

/// Gradient of the loss with respect to the charges, given its gradient with
/// respect to the emitted spikes.
pub fn lif_backward<F: Scalar>(grad_spikes: &Tensor<F>, trace: &LifTrace<F>, config: &LifConfig) -> Result<Tensor<F>> {
    config.validate()?;
    let [steps, units] = trace.v_pre.dims2()?;
    if grad_spikes.shape() != trace.v_pre.shape() || trace.spikes.shape() != trace.v_pre.shape() {
        return Err(Error::Dimension(format!(
            "spike gradient {:?} does not match trace {:?}",
            grad_spikes.shape(),
            trace.v_pre.shape()
        )));
    }
    let mut grad = Tensor::zeros(&[steps, units]);
    backward_core(
        grad_spikes.data(),
        trace.v_pre.data(),
        trace.spikes.data(),
        config,
        Layout::time_major(steps, units),
        grad.data_mut(),
    );
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn hand_evaluated_soft_reset() {
        let cfg = LifConfig::new(0.75, 0.5, ResetMode::Soft).unwrap();
        let tr = lif_forward(&col(&[0.6, 0.2]), &cfg, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(tr.spikes.data(), &[1.0, 0.0]);
        let expect_pre = [0.6, 0.275];
        let expect_post = [0.1, 0.275];
        for i in 0..2 {
            assert!((tr.v_pre.data()[i] - expect_pre[i]).abs() < 1e-12);
            assert!((tr.v_post.data()[i] - expect_post[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tau_is_binary_activation() {
        let charges = [0.1, 0.7, 0.5, 0.51, -2.0, 3.0];
        for reset in [ResetMode::Hard, ResetMode::Soft] {
            let cfg = LifConfig::new(0.0, 0.5, reset).unwrap();
            let tr = lif_forward(&col(&charges), &cfg, &Tensor::zeros(&[1])).unwrap();
            let expect: Vec<f64> = charges.iter().map(|&c| if c > 0.5 { 1.0 } else { 0.0 }).collect();
            assert_eq!(tr.spikes.data(), &expect[..]);
        }
    }

    #[test]
    fn zero_charges_stay_silent() {
        let cfg = LifConfig::default();
        let tr = lif_forward(&Tensor::<f64>::zeros(&[5, 3]), &cfg, &Tensor::zeros(&[3])).unwrap();
        assert!(tr.spikes.data().iter().all(|&s| s == 0.0));
        assert!(tr.v_pre.data().iter().chain(tr.v_post.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = LifConfig::new(0.0, 0.5, ResetMode::Hard).unwrap();
        let tr = lif_forward(&col(&[0.5]), &cfg, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(tr.spikes.data(), &[0.0]);
    }

    #[test]
    fn non_finite_charge_names_step() {
        let cfg = LifConfig::default();
        let err = lif_forward(&col(&[0.1, f64::NAN]), &cfg, &Tensor::zeros(&[1])).unwrap_err();
        assert!(err.to_string().contains("time step 1"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(LifConfig::new(1.2, 0.5, ResetMode::Soft).is_err());
        assert!(LifConfig::new(0.5, 0.0, ResetMode::Soft).is_err());
        assert!(LifConfig::new(1.0, 1.0, ResetMode::Hard).is_ok());
    }

    #[test]
    fn surrogate_shape() {
        let v = Tensor::<f64>::new(vec![4], vec![0.5, 0.0, 1.0, 0.75]).unwrap();
        assert_eq!(surrogate_grad(&v, 0.5).data(), &[1.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn single_step_backward_is_direct_term() {
        let cfg = LifConfig::new(0.75, 0.5, ResetMode::Soft).unwrap();
        let tr = lif_forward(&col(&[0.6]), &cfg, &Tensor::zeros(&[1])).unwrap();
        let g = lif_backward(&col(&[2.0]), &tr, &cfg).unwrap();
        assert!((g.data()[0] - 2.0 * surrogate(0.6, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_tau_backward_has_no_cross_time_terms() {
        let charges = [0.3, 0.7, 0.45, 0.9];
        let gs = [1.0, -2.0, 0.5, 3.0];
        for reset in [ResetMode::Hard, ResetMode::Soft] {
            let cfg = LifConfig::new(0.0, 0.5, reset).unwrap();
            let tr = lif_forward(&col(&charges), &cfg, &Tensor::zeros(&[1])).unwrap();
            let g = lif_backward(&col(&gs), &tr, &cfg).unwrap();
            for t in 0..4 {
                let expect = gs[t] * surrogate(charges[t], 0.5);
                assert!((g.data()[t] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn relaxed_fire_is_antiderivative_of_surrogate() {
        let v_th = 0.7;
        let h = 1e-6;
        for i in -10..=30 {
            let v = i as f64 * 0.05 + 0.013;
            let fd = (relaxed_fire(v + h, v_th) - relaxed_fire(v - h, v_th)) / (2.0 * h);
            assert!((fd - surrogate(v, v_th)).abs() < 1e-6, "v={v}");
        }
        assert_eq!(relaxed_fire(10.0, v_th), v_th);
    }

    #[test]
    fn backward_rejects_mismatched_shapes() {
        let cfg = LifConfig::default();
        let tr = lif_forward(&col(&[0.1, 0.2]), &cfg, &Tensor::zeros(&[1])).unwrap();
        assert!(matches!(
            lif_backward(&col(&[1.0]), &tr, &cfg),
            Err(Error::Dimension(_))
        ));
    }
}
