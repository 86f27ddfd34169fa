//! Binary logistic regression by damped Newton iterations.

use nalgebra::{DMatrix, DVector};

use super::features::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Coefficients; the first is the intercept.
    pub beta: Vec<f64>,
    /// Standard errors from the inverse observed information, if invertible.
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn design(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows, x.cols + 1, |r, c| if c == 0 { 1.0 } else { x.get(r, c - 1) })
}

fn objective(xd: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let z = xd * beta;
    let ll: f64 = z.iter().zip(y).map(|(&z, &y)| y * z - softplus(z)).sum();
    ll - 0.5 * l2 * beta.rows(1, beta.len() - 1).norm_squared()
}

/// Maximizes the (optionally ridge-penalized, intercept excluded) log
/// likelihood of `y ∈ {0,1}` given `x`; an intercept column is added.
pub fn fit_logistic(x: &Matrix, y: &[f64], l2: f64, max_iter: usize) -> LogisticFit {
    let xd = design(x);
    let p = xd.ncols();
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let mut current = objective(&xd, y, &beta, l2);
    let mut converged = false;
    let mut iterations = 0;
    let mut penalty = DMatrix::identity(p, p) * l2;
    penalty[(0, 0)] = 0.0;
    while iterations < max_iter {
        iterations += 1;
        let z = &xd * &beta;
        let probs = z.map(sigmoid);
        let mut grad = xd.transpose() * (&yv - &probs);
        for j in 1..p {
            grad[j] -= l2 * beta[j];
        }
        let w = probs.map(|q| q * (1.0 - q));
        let hess = xd.transpose() * DMatrix::from_diagonal(&w) * &xd + &penalty;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let jitter = hess + DMatrix::identity(p, p) * 1e-8;
                match jitter.lu().solve(&grad) {
                    Some(s) => s,
                    None => break,
                }
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + &step * t;
            let value = objective(&xd, y, &candidate, l2);
            if value >= current - 1e-12 * current.abs().max(1.0) {
                let change = (&candidate - &beta).amax();
                let gain = value - current;
                beta = candidate;
                current = value;
                accepted = true;
                if change < 1e-9 || gain.abs() < 1e-13 * current.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = grad.amax() < 1e-6;
            break;
        }
        if converged {
            break;
        }
    }
    let z = &xd * &beta;
    let w = z.map(|z| {
        let q = sigmoid(z);
        q * (1.0 - q)
    });
    let info = xd.transpose() * DMatrix::from_diagonal(&w) * &xd + &penalty;
    let std_errors = info.try_inverse().and_then(|inv| {
        let se: Vec<f64> = (0..p).map(|j| inv[(j, j)].sqrt()).collect();
        se.iter().all(|s| s.is_finite() && *s > 0.0).then_some(se)
    });
    LogisticFit {
        beta: beta.iter().copied().collect(),
        std_errors,
        converged,
        iterations,
        log_likelihood: current,
    }
}

impl LogisticFit {
    pub fn probability(&self, row: &[f64]) -> f64 {
        let z = self.beta[0] + self.beta[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>();
        sigmoid(z)
    }
}
