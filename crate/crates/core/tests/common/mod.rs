//! Oracles and property checks shared by the integration tests.
#![allow(dead_code)]

use spikehar::lif::{lif_backward, lif_forward};
use spikehar::{LifConfig, ResetGrad, ResetMode, SeededRng, Tensor};

/// Triangle, written out independently of the crate.
pub fn triangle(v: f64, v_th: f64) -> f64 {
    let x = v / v_th;
    if x <= 0.0 || x >= 2.0 {
        0.0
    } else if x <= 1.0 {
        x
    } else {
        2.0 - x
    }
}

/// Gradient of `Σ_t g[t]·s[t]` with respect to every charge of a single
/// neuron, by forward-mode differentiation: one tangent sweep per input
/// time step, unrolling the recursion step by step.
pub fn oracle_grad_unit(charges: &[f64], v0: f64, g: &[f64], cfg: &LifConfig) -> Vec<f64> {
    let steps = charges.len();
    let (tau, v_th) = (cfg.tau, cfg.v_th);
    // primal pass
    let mut pre = vec![0.0; steps];
    let mut s = vec![0.0; steps];
    let mut v = v0;
    for t in 0..steps {
        pre[t] = tau * v + charges[t];
        s[t] = if pre[t] > v_th { 1.0 } else { 0.0 };
        v = match cfg.reset {
            ResetMode::Hard => pre[t] * (1.0 - s[t]),
            ResetMode::Soft => pre[t] - s[t] * v_th,
        };
    }
    let attached = cfg.reset_grad == ResetGrad::Attached;
    (0..steps)
        .map(|src| {
            let mut d_post = 0.0;
            let mut total = 0.0;
            for t in 0..steps {
                let d_pre = tau * d_post + if t == src { 1.0 } else { 0.0 };
                let d_s = triangle(pre[t], v_th) * d_pre;
                total += g[t] * d_s;
                let via_spike = if attached { d_s } else { 0.0 };
                d_post = match cfg.reset {
                    ResetMode::Hard => d_pre * (1.0 - s[t]) - pre[t] * via_spike,
                    ResetMode::Soft => d_pre - v_th * via_spike,
                };
            }
            total
        })
        .collect()
}

/// Random neuron problem: charges `[T × units]`, v0, upstream gradient.
pub struct LifCase {
    pub steps: usize,
    pub units: usize,
    pub charges: Vec<f64>,
    pub v0: Vec<f64>,
    pub grad: Vec<f64>,
    pub cfg: LifConfig,
}

impl LifCase {
    pub fn random(rng: &mut SeededRng, max_steps: usize, max_units: usize, taus: &[f64]) -> Self {
        let steps = 1 + rng.below(max_steps as u64) as usize;
        let units = 1 + rng.below(max_units as u64) as usize;
        let tau = taus[rng.below(taus.len() as u64) as usize];
        let v_th = rng.uniform(0.2, 1.5);
        let reset = if rng.below(2) == 0 {
            ResetMode::Hard
        } else {
            ResetMode::Soft
        };
        let rg = if rng.below(2) == 0 {
            ResetGrad::Attached
        } else {
            ResetGrad::Detached
        };
        let cfg = LifConfig::new(tau, v_th, reset).unwrap().with_reset_grad(rg);
        let charges = (0..steps * units).map(|_| rng.uniform(-0.5, 1.5) * v_th).collect();
        let v0 = (0..units).map(|_| rng.uniform(-0.5, 1.0) * v_th).collect();
        let grad = (0..steps * units).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self {
            steps,
            units,
            charges,
            v0,
            grad,
            cfg,
        }
    }

    pub fn charges_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.steps, self.units], self.charges.clone()).unwrap()
    }

    pub fn v0_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.units], self.v0.clone()).unwrap()
    }

    fn column(&self, x: &[f64], u: usize) -> Vec<f64> {
        (0..self.steps).map(|t| x[t * self.units + u]).collect()
    }

    /// Largest |crate - oracle| over all charges.
    pub fn oracle_gap(&self) -> f64 {
        let trace = lif_forward(&self.charges_tensor(), &self.cfg, &self.v0_tensor()).unwrap();
        let g = Tensor::new(vec![self.steps, self.units], self.grad.clone()).unwrap();
        let got = lif_backward(&g, &trace, &self.cfg).unwrap();
        let mut gap = 0.0f64;
        for u in 0..self.units {
            let want = oracle_grad_unit(
                &self.column(&self.charges, u),
                self.v0[u],
                &self.column(&self.grad, u),
                &self.cfg,
            );
            for (t, w) in want.iter().enumerate() {
                gap = gap.max((got.data()[t * self.units + u] - w).abs());
            }
        }
        gap
    }
}

fn spikes_of(charges: &[f64], v0: &[f64], steps: usize, units: usize, cfg: &LifConfig) -> Vec<f64> {
    let c = Tensor::new(vec![steps, units], charges.to_vec()).unwrap();
    let v = Tensor::new(vec![units], v0.to_vec()).unwrap();
    lif_forward(&c, cfg, &v).unwrap().spikes.into_data()
}

pub fn check_binarity(case: &LifCase) -> Result<(), String> {
    let s = spikes_of(&case.charges, &case.v0, case.steps, case.units, &case.cfg);
    match s.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(format!("spike value {v}")),
        None => Ok(()),
    }
}

/// With tau = 0, permuting time steps permutes the spike train identically.
pub fn check_memoryless(case: &LifCase, rng: &mut SeededRng) -> Result<(), String> {
    let cfg = LifConfig { tau: 0.0, ..case.cfg };
    let (steps, units) = (case.steps, case.units);
    let perm = rng.permutation(steps);
    let mut permuted = vec![0.0; steps * units];
    for (t, &src) in perm.iter().enumerate() {
        permuted[t * units..(t + 1) * units].copy_from_slice(&case.charges[src * units..(src + 1) * units]);
    }
    let base = spikes_of(&case.charges, &case.v0, steps, units, &cfg);
    let moved = spikes_of(&permuted, &case.v0, steps, units, &cfg);
    for (t, &src) in perm.iter().enumerate() {
        if moved[t * units..(t + 1) * units] != base[src * units..(src + 1) * units] {
            return Err(format!("step {t} (from {src}) changed under permutation"));
        }
    }
    Ok(())
}

/// Scaling charges, v0 and v_th by a power of two leaves spikes bitwise
/// unchanged (power-of-two scaling is exact in floating point).
pub fn check_scale_invariance(case: &LifCase, exponent: i32) -> Result<(), String> {
    let a = 2f64.powi(exponent);
    let scaled_cfg = LifConfig {
        v_th: case.cfg.v_th * a,
        ..case.cfg
    };
    let c: Vec<f64> = case.charges.iter().map(|x| x * a).collect();
    let v0: Vec<f64> = case.v0.iter().map(|x| x * a).collect();
    let base = spikes_of(&case.charges, &case.v0, case.steps, case.units, &case.cfg);
    let scaled = spikes_of(&c, &v0, case.steps, case.units, &scaled_cfg);
    if base != scaled {
        return Err(format!("spike train changed under scale 2^{exponent}"));
    }
    Ok(())
}

/// Charges held below threshold for the whole window: hard and soft
/// reset give identical traces.
pub fn check_subthreshold_reset(case: &LifCase) -> Result<(), String> {
    let v_th = case.cfg.v_th;
    let tau = case.cfg.tau.min(0.5);
    // |v| stays within 0.6 v_th: |v0| <= 0.5 v_th, charges in [-0.3, 0.3] v_th
    let charges: Vec<f64> = case.charges.iter().map(|c| (c / v_th - 0.5) * 0.3 * v_th).collect();
    let v0: Vec<f64> = case.v0.iter().map(|v| v.clamp(-0.5 * v_th, 0.5 * v_th)).collect();
    let c = Tensor::new(vec![case.steps, case.units], charges).unwrap();
    let v = Tensor::new(vec![case.units], v0).unwrap();
    let hard = lif_forward(
        &c,
        &LifConfig {
            tau,
            reset: ResetMode::Hard,
            ..case.cfg
        },
        &v,
    )
    .unwrap();
    let soft = lif_forward(
        &c,
        &LifConfig {
            tau,
            reset: ResetMode::Soft,
            ..case.cfg
        },
        &v,
    )
    .unwrap();
    if hard.spikes.sum() != 0.0 {
        return Err("constructed case spiked".into());
    }
    if hard != soft {
        return Err("hard and soft traces differ below threshold".into());
    }
    Ok(())
}

/// Upstream gradient at a single step `t0` never reaches later charges.
pub fn check_causality(case: &LifCase, t0: usize) -> Result<(), String> {
    let trace = lif_forward(&case.charges_tensor(), &case.cfg, &case.v0_tensor()).unwrap();
    let units = case.units;
    let g = Tensor::from_fn(
        &[case.steps, units],
        |i| if i / units == t0 { case.grad[i] } else { 0.0 },
    );
    let got = lif_backward(&g, &trace, &case.cfg).unwrap();
    for t in t0 + 1..case.steps {
        for u in 0..units {
            if got.data()[t * units + u] != 0.0 {
                return Err(format!("gradient at step {t} from upstream step {t0}"));
            }
        }
    }
    Ok(())
}

/// Every potential outside (0, 2 v_th): the backward output is all zeros.
pub fn check_surrogate_support(case: &LifCase) -> Result<(), String> {
    let v_th = case.cfg.v_th;
    // non-positive charges from a non-positive start keep v_pre <= 0
    let charges: Vec<f64> = case.charges.iter().map(|c| -c.abs()).collect();
    let v0: Vec<f64> = case.v0.iter().map(|v| -v.abs()).collect();
    let c = Tensor::new(vec![case.steps, case.units], charges).unwrap();
    let v = Tensor::new(vec![case.units], v0).unwrap();
    let trace = lif_forward(&c, &case.cfg, &v).unwrap();
    if trace.v_pre.data().iter().any(|&p| p > 0.0 && p < 2.0 * v_th) {
        return Err("constructed case inside support".into());
    }
    let g = Tensor::new(vec![case.steps, case.units], case.grad.clone()).unwrap();
    let got = lif_backward(&g, &trace, &case.cfg).unwrap();
    if got.data().iter().any(|&x| x != 0.0) {
        return Err("nonzero gradient outside the surrogate support".into());
    }
    Ok(())
}

use spikehar::optim::cross_entropy;
use spikehar::{FireMode, Model, ModelSpec, Neuron, TimeBatch};

/// Outcome of comparing backpropagated gradients against central finite
/// differences on a relaxed spiking network.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale: with a
/// 1e-6 step, round-off in the loss alone leaves ~1e-10 of noise.
pub const FD_FLOOR: f64 = 1e-5;

/// Switch every LIF layer of `spec` to the relaxed fire function.
pub fn relaxed(spec: &ModelSpec) -> ModelSpec {
    let mut s = spec.clone();
    if let Neuron::Lif(cfg) = &mut s.neuron {
        *cfg = cfg.with_fire(FireMode::Relaxed);
    }
    s
}

fn loss(model: &mut Model<f64>, x: &TimeBatch<f64>, labels: &[usize]) -> f64 {
    let logits = model.forward(x).unwrap();
    cross_entropy(&logits, labels).unwrap().0
}

/// Central differences for every parameter element accepted by `pick`.
pub fn finite_difference_check(
    spec: &ModelSpec,
    x: &TimeBatch<f64>,
    labels: &[usize],
    mut pick: impl FnMut(usize, usize) -> bool,
) -> FdReport {
    let mut model = Model::<f64>::build(spec).unwrap();
    // Zero biases put silent units exactly on the relaxation's breakpoint at
    // v = 0, where the loss is not twice differentiable; move off it.
    let mut rng = SeededRng::new(spec.seed ^ 0xB1A5);
    for p in model.params_mut() {
        if p.rank() == 1 {
            p.data_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.2, 0.2));
        }
    }
    let logits = model.forward(x).unwrap();
    let (_, g) = cross_entropy(&logits, labels).unwrap();
    model.backward(&g).unwrap();
    let analytic: Vec<Tensor<f64>> = model.grads().into_iter().cloned().collect();
    let mut report = FdReport {
        checked: 0,
        max_rel: 0.0,
        max_abs: 0.0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            if !pick(pi, j) {
                continue;
            }
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + FD_STEP;
            let up = loss(&mut model, x, labels);
            model.params_mut()[pi].data_mut()[j] = orig - FD_STEP;
            let down = loss(&mut model, x, labels);
            model.params_mut()[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            report.max_rel = report.max_rel.max(rel);
            report.max_abs = report.max_abs.max(abs);
        }
    }
    report
}

pub fn random_batch(n: usize, c: usize, t: usize, rng: &mut SeededRng, scale: f64) -> TimeBatch<f64> {
    TimeBatch::new(Tensor::from_fn(&[n, c, t], |_| rng.uniform(-scale, scale))).unwrap()
}
