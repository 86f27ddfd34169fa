//! DP-SGD building blocks for critic updates and a Rényi-DP accountant for
//! the Poisson-subsampled Gaussian mechanism.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    /// σ; when `None` it is solved from `epsilon_ceiling`.
    pub noise_multiplier: Option<f64>,
    pub delta: f64,
    pub epsilon_ceiling: Option<f64>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_multiplier: Some(1.0),
            delta: 1e-5,
            epsilon_ceiling: None,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("clip norm must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        match (self.noise_multiplier, self.epsilon_ceiling) {
            (Some(s), _) if !(s > 0.0 && s.is_finite()) => bad("noise multiplier must be positive"),
            (_, Some(e)) if !(e > 0.0) => bad("epsilon ceiling must be positive"),
            (None, None) => bad("either a noise multiplier or an epsilon ceiling is required"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClippedGradient {
    pub vector: Vec<f64>,
    pub original_norm: f64,
    pub scale: f64,
}

/// `g / max(1, ‖g‖₂ / C)`.
pub fn clip_per_example(g: Vec<f64>, clip_norm: f64) -> ClippedGradient {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0 / (norm / clip_norm).max(1.0);
    let mut vector = g;
    if scale != 1.0 {
        for v in &mut vector {
            *v *= scale;
        }
    }
    ClippedGradient {
        vector,
        original_norm: norm,
        scale,
    }
}

/// `(1/L)(Σᵢ ḡᵢ + N(0, σ²C²I))` with `L = clipped.len()`.
pub fn aggregate_noisy(clipped: &[ClippedGradient], clip_norm: f64, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let first = clipped
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate an empty gradient list".into()))?;
    let dim = first.vector.len();
    let mut sum = vec![0.0; dim];
    for g in clipped {
        if g.vector.len() != dim {
            return Err(Error::InvalidArgument("gradients differ in length".into()));
        }
        for (s, v) in sum.iter_mut().zip(&g.vector) {
            *s += v;
        }
    }
    let std = sigma * clip_norm;
    let l = clipped.len() as f64;
    let mut r = rng::rng(seed);
    for s in &mut sum {
        let noise: f64 = if std > 0.0 { StandardNormal.sample(&mut r) } else { 0.0 };
        *s = (*s + std * noise) / l;
    }
    Ok(sum)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

/// log E_{z∼N(0,σ²)}[(1 − q + q·e^{(2z−1)/(2σ²)})^α] for integer α, by the
/// binomial expansion Σₖ C(α,k)(1−q)^{α−k} qᵏ e^{(k²−k)/(2σ²)}.
fn log_a_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    let terms: Vec<f64> = (0..=alpha)
        .map(|k| {
            let kf = k as f64;
            ln_binomial(alpha, k) + (alpha - k) as f64 * (1.0 - q).ln() + kf * q.ln() + (kf * kf - kf) / (2.0 * sigma * sigma)
        })
        .collect();
    log_sum_exp(&terms)
}

/// Same quantity for fractional α, by trapezoidal quadrature in the log
/// domain over the region where the integrand has mass. The integrand is
/// smooth and Gaussian-tailed, for which the trapezoid rule converges
/// geometrically in the step size.
fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let log_integrand = |z: f64| {
        let log_mu0 = -z * z / (2.0 * s2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let e = (2.0 * z - 1.0) / (2.0 * s2);
        // log(1 − q + q·eᵉ) computed stably.
        let log_ratio = if e > 0.0 {
            e + q.ln() + ((1.0 - q) * (-e).exp() / q).ln_1p()
        } else {
            (1.0 - q).ln() + (q * e.exp() / (1.0 - q)).ln_1p()
        };
        log_mu0 + alpha * log_ratio
    };
    let lo = -16.0 * sigma;
    let hi = alpha + 16.0 * sigma;
    let n = ((hi - lo) / (sigma / 64.0)).ceil().clamp(2000.0, 4.0e6) as usize;
    let h = (hi - lo) / n as f64;
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5f64 } else { 1.0 };
            w.ln() + log_integrand(lo + i as f64 * h)
        })
        .collect();
    log_sum_exp(&terms) + h.ln()
}

/// RDP of one Poisson-subsampled Gaussian step at order α.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("RDP order {alpha} must exceed 1")));
    }
    if !(0.0..=1.0).contains(&q) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid q = {q} or sigma = {sigma}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_integer(q, sigma, alpha as u64)
    } else {
        log_a_fractional(q, sigma, alpha)
    };
    Ok((log_a / (alpha - 1.0)).max(0.0))
}

pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders.extend([128.0, 256.0]);
    orders
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub orders: Vec<f64>,
    pub rdp: Vec<f64>,
    pub steps: u64,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::with_orders(default_orders())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub order: f64,
    /// Set when no step was taken; ε is then 0.
    pub no_steps: bool,
}

impl AccountantState {
    pub fn with_orders(orders: Vec<f64>) -> Self {
        let n = orders.len();
        Self {
            orders,
            rdp: vec![0.0; n],
            steps: 0,
        }
    }

    /// Per-order RDP of one step.
    pub fn step_rdp(&self, q: f64, sigma: f64) -> Result<Vec<f64>> {
        self.orders.iter().map(|&a| rdp_subsampled_gaussian(q, sigma, a)).collect()
    }

    /// Adds `steps` identical steps.
    pub fn compose(&mut self, per_step: &[f64], steps: u64) {
        for (acc, r) in self.rdp.iter_mut().zip(per_step) {
            *acc += steps as f64 * r;
        }
        self.steps += steps;
    }

    pub fn step(&mut self, q: f64, sigma: f64) -> Result<()> {
        let per = self.step_rdp(q, sigma)?;
        self.compose(&per, 1);
        Ok(())
    }

    pub fn epsilon(&self, delta: f64) -> Result<EpsilonReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
        }
        if self.steps == 0 {
            return Ok(EpsilonReport {
                epsilon: 0.0,
                order: f64::NAN,
                no_steps: true,
            });
        }
        Ok(epsilon_from_rdp(&self.orders, &self.rdp, delta))
    }
}

fn epsilon_from_rdp(orders: &[f64], rdp: &[f64], delta: f64) -> EpsilonReport {
    let mut best = EpsilonReport {
        epsilon: f64::INFINITY,
        order: f64::NAN,
        no_steps: false,
    };
    for (&a, &r) in orders.iter().zip(rdp) {
        let e = r + (1.0 / delta).ln() / (a - 1.0);
        if e < best.epsilon {
            best.epsilon = e;
            best.order = a;
        }
    }
    best
}

/// Functional form of [`AccountantState::step`].
pub fn account_step(state: &AccountantState, q: f64, sigma: f64) -> Result<AccountantState> {
    let mut next = state.clone();
    next.step(q, sigma)?;
    Ok(next)
}

pub fn report_epsilon(state: &AccountantState, delta: f64) -> Result<EpsilonReport> {
    state.epsilon(delta)
}

/// ε after `steps` steps at `(q, σ)` over the default orders.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<EpsilonReport> {
    let mut s = AccountantState::default();
    let per = s.step_rdp(q, sigma)?;
    s.compose(&per, steps);
    s.epsilon(delta)
}

/// Smallest σ (to bisection precision) whose ε after `steps` steps stays
/// within `target`.
pub fn solve_sigma(q: f64, steps: u64, delta: f64, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidArgument("target epsilon must be positive".into()));
    }
    let eps = |s: f64| epsilon_for(q, s, steps, delta).map(|r| r.epsilon);
    let (mut lo, mut hi) = (1e-2, 1e3);
    if eps(hi)? > target {
        return Err(Error::InvalidArgument(format!(
            "epsilon {target} is unreachable with sigma <= {hi}"
        )));
    }
    if eps(lo)? <= target {
        return Ok(lo);
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if eps(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok(hi)
}
