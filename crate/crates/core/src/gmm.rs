//! One-dimensional Gaussian mixtures for mode-specific normalization.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_modes: usize,
    pub weight_threshold: f64,
    pub max_iter: usize,
    /// Tolerance on the mean per-sample log-likelihood.
    pub tolerance: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_modes: 10,
            weight_threshold: 0.005,
            max_iter: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl Mode {
    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        self.weight.ln() - 0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEncoding {
    pub column: String,
    pub modes: Vec<Mode>,
    /// Set when the column was constant and a single floor-width mode was used.
    pub degenerate: bool,
}

impl ContinuousEncoding {
    /// Posterior responsibilities of each mode for `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self.modes.iter().map(|m| m.log_density(x)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// `(α, mode)`: the mode is drawn from the posterior restricted to modes
    /// within 4σ of `x` (so that α is not clamped); when no mode is that
    /// close the most responsible one is used and α saturates.
    pub fn encode(&self, x: f64, rng: &mut Rng) -> (f64, usize) {
        let resp = self.responsibilities(x);
        let near: Vec<usize> = (0..self.modes.len())
            .filter(|&k| (x - self.modes[k].mean).abs() <= 4.0 * self.modes[k].std)
            .collect();
        let mode = if near.is_empty() {
            crate::encoder::argmax(&resp)
        } else {
            let total: f64 = near.iter().map(|&k| resp[k]).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = *near.last().expect("non-empty");
            for &k in &near {
                if u < resp[k] {
                    pick = k;
                    break;
                }
                u -= resp[k];
            }
            pick
        };
        (self.alpha(x, mode), mode)
    }

    /// `clamp((x − η)/(4φ), −1, 1)` for `mode`.
    pub fn alpha(&self, x: f64, mode: usize) -> f64 {
        let m = &self.modes[mode];
        ((x - m.mean) / (4.0 * m.std)).clamp(-1.0, 1.0)
    }

    pub fn decode(&self, alpha: f64, mode: usize) -> f64 {
        let m = &self.modes[mode];
        alpha * 4.0 * m.std + m.mean
    }
}

struct Fit {
    modes: Vec<Mode>,
    log_likelihood: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn kmeans_pp(values: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = values.len();
    let mut centers = vec![values[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = values[pick];
        centers.push(c);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - c).powi(2));
        }
    }
    centers
}

fn fit_em(values: &[f64], k: usize, floor: f64, opts: &GmmOptions, rng: &mut Rng) -> Fit {
    let n = values.len();
    let nf = n as f64;
    let centers = kmeans_pp(values, k, rng);
    let k = centers.len();
    let global_var = {
        let mean = values.iter().sum::<f64>() / nf;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf
    };

    // Hard assignment to the nearest center for the initial parameters.
    let mut counts = vec![0.0; k];
    let mut sums = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for &v in values {
        let j = (0..k)
            .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
            .expect("k >= 1");
        counts[j] += 1.0;
        sums[j] += v;
        sq[j] += v * v;
    }
    let mut modes: Vec<Mode> = (0..k)
        .map(|j| {
            let c = counts[j];
            let mean = if c > 0.0 { sums[j] / c } else { centers[j] };
            let var = if c > 1.0 { sq[j] / c - mean * mean } else { global_var };
            Mode {
                weight: (c / nf).max(1e-12),
                mean,
                std: var.max(0.0).sqrt().max(floor),
            }
        })
        .collect();

    let mut resp = vec![0.0; n * k];
    let mut logs = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = 0.0;
    for _ in 0..opts.max_iter {
        ll = 0.0;
        for (i, &v) in values.iter().enumerate() {
            for (j, m) in modes.iter().enumerate() {
                logs[j] = m.log_density(v);
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        for (j, m) in modes.iter_mut().enumerate() {
            let mut nk = 0.0;
            let mut s = 0.0;
            for (i, &v) in values.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                s += r * v;
            }
            if nk < 1e-10 {
                m.weight = 1e-300;
                continue;
            }
            let mean = s / nk;
            let mut var = 0.0;
            for (i, &v) in values.iter().enumerate() {
                var += resp[i * k + j] * (v - mean).powi(2);
            }
            m.weight = nk / nf;
            m.mean = mean;
            m.std = (var / nk).sqrt().max(floor);
        }
        if (ll - prev).abs() / nf < opts.tolerance {
            break;
        }
        prev = ll;
    }
    Fit {
        modes,
        log_likelihood: ll,
    }
}

/// Fits a mixture to `values`. The number of components is chosen by BIC
/// among `1..=max_modes`; components lighter than `weight_threshold` are
/// then dropped and the weights renormalized.
pub fn fit_continuous_gmm(column: &str, values: &[f64], opts: &GmmOptions, seed: u64) -> Result<ContinuousEncoding> {
    if opts.max_modes == 0 {
        return Err(Error::InvalidArgument("max_modes must be at least 1".into()));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("column {column} has no finite values")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Ok(ContinuousEncoding {
            column: column.to_string(),
            modes: vec![Mode {
                weight: 1.0,
                mean: sorted[0],
                std: 1e-6,
            }],
            degenerate: true,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let floor = (1e-3 * std).max(1e-6);

    let mut best: Option<(f64, Fit)> = None;
    let mut worse_in_a_row = 0;
    for k in 1..=opts.max_modes.min(sorted.len()) {
        let mut r = rng::rng(rng::indexed(seed, k as u64));
        let fit = fit_em(values, k, floor, opts, &mut r);
        let params = (3 * fit.modes.len() - 1) as f64;
        let bic = -2.0 * fit.log_likelihood + params * n.ln();
        match &best {
            Some((b, _)) if bic >= *b => {
                worse_in_a_row += 1;
                if worse_in_a_row >= 2 {
                    break;
                }
            }
            _ => {
                best = Some((bic, fit));
                worse_in_a_row = 0;
            }
        }
    }
    let fit = best.expect("at least one fit").1;
    let mut modes: Vec<Mode> = fit
        .modes
        .iter()
        .copied()
        .filter(|m| m.weight >= opts.weight_threshold)
        .collect();
    if modes.is_empty() {
        let heaviest = fit
            .modes
            .iter()
            .copied()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("non-empty");
        modes.push(heaviest);
    }
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    for m in &mut modes {
        m.weight /= total;
    }
    modes.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(ContinuousEncoding {
        column: column.to_string(),
        modes,
        degenerate: false,
    })
}
