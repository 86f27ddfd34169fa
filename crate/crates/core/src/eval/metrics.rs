//! Fidelity and utility metrics comparing an original table with a
//! synthetic one.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use super::features::{align, continuous_columns, discrete_columns, labels, FeatureColumn, FeatureEncoder, Matrix};
use super::logistic::fit_logistic;
use super::predictors::{train_predictor, PredictorSpec};
use super::tree::{Tree, TreeOptions};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::DataTable;

/// Number of permuted-label refits behind the pMSE null.
pub const PMSE_NULL_DRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmseResult {
    pub pmse: f64,
    pub pmse_ratio: f64,
    pub null_mean: f64,
    /// Synthetic share of the stacked table.
    pub c: f64,
}

fn propensity_mse(x: &Matrix, y: &[usize], c: f64, opts: &TreeOptions, seed: u64) -> f64 {
    let tree = Tree::fit(x, y, 2, opts, seed);
    (0..x.rows).map(|i| (tree.proba(x.row(i))[1] - c).powi(2)).sum::<f64>() / x.rows as f64
}

/// Propensity mean squared error of a CART classifier separating synthetic
/// (label 1) from original rows, and its ratio to a permutation null.
pub fn pmse_score(original: &DataTable, synthetic: &DataTable, cart_depth: usize, seed: u64) -> Result<PmseResult> {
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (o, s) = align(original, synthetic)?;
    let stacked = o.concat(&s)?;
    let x = FeatureEncoder::fit(&stacked, &[]).encode(&stacked);
    let mut y: Vec<usize> = (0..stacked.row_count()).map(|i| usize::from(i >= o.row_count())).collect();
    let c = s.row_count() as f64 / stacked.row_count() as f64;
    let opts = TreeOptions {
        max_depth: cart_depth.max(1),
        min_leaf: 5,
        max_features: None,
    };
    let pmse = propensity_mse(&x, &y, c, &opts, seed);
    let mut r = rng::rng(rng::substream(seed, "pmse.null"));
    let mut null = 0.0;
    for k in 0..PMSE_NULL_DRAWS {
        y.shuffle(&mut r);
        null += propensity_mse(&x, &y, c, &opts, rng::indexed(seed, k as u64));
    }
    let null_mean = null / PMSE_NULL_DRAWS as f64;
    let pmse_ratio = if null_mean > 0.0 {
        pmse / null_mean
    } else if pmse == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(PmseResult {
        pmse,
        pmse_ratio,
        null_mean,
        c,
    })
}

/// Upper tail of the χ² distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 0 {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTest {
    pub column: String,
    pub statistic: f64,
    pub p_value: f64,
    pub df: Option<usize>,
}

/// χ² goodness of fit of the synthetic category counts against the
/// original proportions, for one aligned discrete column.
pub fn chi2_column(original: &DataTable, synthetic: &DataTable, column: usize) -> Result<ColumnTest> {
    let k = synthetic.schema().columns[column].categories().len();
    let mut expected = vec![0.0; k];
    let mut observed = vec![0.0; k];
    for c in labels(original, column)? {
        expected[c] += 1.0;
    }
    for c in labels(synthetic, column)? {
        observed[c] += 1.0;
    }
    let scale = synthetic.row_count() as f64 / original.row_count() as f64;
    expected.iter_mut().for_each(|e| *e *= scale);
    // Categories the original never shows are pooled into the smallest
    // expected bucket.
    let positive: Vec<usize> = (0..k).filter(|&j| expected[j] > 0.0).collect();
    if let Some(&sink) = positive.iter().min_by(|&&a, &&b| expected[a].total_cmp(&expected[b])) {
        for j in 0..k {
            if expected[j] == 0.0 {
                observed[sink] += observed[j];
                observed[j] = 0.0;
            }
        }
    }
    let statistic: f64 = positive.iter().map(|&j| (observed[j] - expected[j]).powi(2) / expected[j]).sum();
    let df = positive.len().saturating_sub(1);
    let p_value = if df == 0 { 1.0 } else { chi2_sf(statistic, df) };
    Ok(ColumnTest {
        column: synthetic.schema().columns[column].name.clone(),
        statistic,
        p_value,
        df: Some(df),
    })
}

/// Mean χ² p-value over discrete columns, with per-column detail.
pub fn chi2_avg_p(original: &DataTable, synthetic: &DataTable) -> Result<(f64, Vec<ColumnTest>)> {
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (o, s) = align(original, synthetic)?;
    let cols = discrete_columns(o.schema());
    if cols.is_empty() {
        return Err(Error::InvalidArgument("no categorical columns".into()));
    }
    let tests = cols.iter().map(|&c| chi2_column(&o, &s, c)).collect::<Result<Vec<_>>>()?;
    let mean = tests.iter().map(|t| t.p_value).sum::<f64>() / tests.len() as f64;
    Ok((mean, tests))
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form, fast for small λ.
        let s = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=50)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * s).exp())
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let p: f64 = (1..=100)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp()
        })
        .sum::<f64>()
        * 2.0;
    p.clamp(0.0, 1.0)
}

/// Two-sample KS statistic of finite samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Mean KS p-value over continuous columns, with per-column detail.
pub fn ks_avg_p(original: &DataTable, synthetic: &DataTable) -> Result<(f64, Vec<ColumnTest>)> {
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (o, s) = align(original, synthetic)?;
    let cols = continuous_columns(o.schema());
    if cols.is_empty() {
        return Err(Error::InvalidArgument("no continuous columns".into()));
    }
    let (n, m) = (o.row_count() as f64, s.row_count() as f64);
    let ne = n * m / (n + m);
    let tests: Vec<ColumnTest> = cols
        .iter()
        .map(|&c| {
            let va: Vec<f64> = o.rows().iter().filter_map(|r| r[c].num()).collect();
            let vb: Vec<f64> = s.rows().iter().filter_map(|r| r[c].num()).collect();
            let d = ks_statistic(&va, &vb);
            ColumnTest {
                column: o.schema().columns[c].name.clone(),
                statistic: d,
                p_value: kolmogorov_sf(ne.sqrt() * d),
                df: None,
            }
        })
        .collect();
    let mean = tests.iter().map(|t| t.p_value).sum::<f64>() / tests.len() as f64;
    Ok((mean, tests))
}

/// Woo et al. interval overlap of two intervals, unclipped.
pub fn interval_overlap(orig: (f64, f64), syn: (f64, f64)) -> f64 {
    let inner = orig.1.min(syn.1) - orig.0.max(syn.0);
    0.5 * (inner / (orig.1 - orig.0) + inner / (syn.1 - syn.0))
}

/// `|β_o − β_s| / SE_o`.
pub fn standardized_difference(beta_orig: f64, beta_syn: f64, se_orig: f64) -> f64 {
    (beta_orig - beta_syn).abs() / se_orig
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub name: String,
    pub beta_original: Option<f64>,
    pub se_original: Option<f64>,
    pub beta_synthetic: Option<f64>,
    pub se_synthetic: Option<f64>,
    pub ci_overlap: Option<f64>,
    pub std_diff: Option<f64>,
    /// Why the coefficient is excluded from the means, if it is.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionComparison {
    pub ci_overlap_mean: Option<f64>,
    pub std_diff_mean: Option<f64>,
    pub coefficients: Vec<CoefficientComparison>,
}

/// Coefficients larger than this on standardized or indicator features
/// indicate (quasi-)separation.
const SEPARATION_BOUND: f64 = 15.0;
const Z_95: f64 = 1.959_963_984_540_054;

fn feature_names(enc: &FeatureEncoder, table: &DataTable) -> Vec<String> {
    let schema = table.schema();
    let mut names = vec!["(intercept)".to_string()];
    for col in &enc.columns {
        match *col {
            FeatureColumn::Continuous { column, .. } => names.push(schema.columns[column].name.clone()),
            FeatureColumn::OneHot {
                column,
                categories,
                drop_first,
            } => {
                let spec = &schema.columns[column];
                for k in usize::from(drop_first)..categories {
                    names.push(format!("{}={}", spec.name, spec.categories()[k]));
                }
            }
        }
    }
    names
}

fn keep_columns(x: &Matrix, keep: &[usize]) -> Matrix {
    let data = (0..x.rows).flat_map(|r| keep.iter().map(move |&c| x.get(r, c))).collect();
    Matrix {
        rows: x.rows,
        cols: keep.len(),
        data,
    }
}

/// Logistic regressions of a binary target on both tables; confidence
/// interval overlap and standardized coefficient differences.
pub fn regression_metrics(original: &DataTable, synthetic: &DataTable, target: &str) -> Result<RegressionComparison> {
    let (o, s) = align(original, synthetic)?;
    let t = o
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::InvalidArgument(format!("target column {target} not found")))?;
    let spec = &o.schema().columns[t];
    if !spec.is_discrete() || spec.categories().len() != 2 {
        return Err(Error::InvalidArgument(format!("target {target} is not binary")));
    }
    let enc = FeatureEncoder::fit_reference_coded(&o, &[t]);
    let names = feature_names(&enc, &o);
    let (xo, xs) = (enc.encode(&o), enc.encode(&s));
    // Features constant in either table cannot be estimated there.
    let varies = |x: &Matrix, c: usize| (1..x.rows).any(|r| x.get(r, c) != x.get(0, c));
    let keep: Vec<usize> = (0..xo.cols).filter(|&c| varies(&xo, c) && varies(&xs, c)).collect();
    let yo: Vec<f64> = labels(&o, t)?.into_iter().map(|v| v as f64).collect();
    let ys: Vec<f64> = labels(&s, t)?.into_iter().map(|v| v as f64).collect();
    let fo = fit_logistic(&keep_columns(&xo, &keep), &yo, 0.0, 100);
    let fs = fit_logistic(&keep_columns(&xs, &keep), &ys, 0.0, 100);

    let mut coefficients = Vec::with_capacity(names.len());
    let mut slot = vec![None; xo.cols + 1];
    slot[0] = Some(0);
    for (i, &c) in keep.iter().enumerate() {
        slot[c + 1] = Some(i + 1);
    }
    for (j, name) in names.into_iter().enumerate() {
        let Some(i) = slot[j] else {
            coefficients.push(CoefficientComparison {
                name,
                beta_original: None,
                se_original: None,
                beta_synthetic: None,
                se_synthetic: None,
                ci_overlap: None,
                std_diff: None,
                flag: Some("constant feature".into()),
            });
            continue;
        };
        let (bo, bs) = (fo.beta[i], fs.beta[i]);
        let seo = fo.std_errors.as_ref().map(|v| v[i]);
        let ses = fs.std_errors.as_ref().map(|v| v[i]);
        let flag = if !fo.converged || !fs.converged {
            Some("fit did not converge".to_string())
        } else if bo.abs() > SEPARATION_BOUND || bs.abs() > SEPARATION_BOUND {
            Some("separation".to_string())
        } else if seo.is_none() || ses.is_none() {
            Some("singular information matrix".to_string())
        } else {
            None
        };
        let (ci_overlap, std_diff) = match (seo, ses, &flag) {
            (Some(a), Some(b), None) => (
                Some(interval_overlap((bo - Z_95 * a, bo + Z_95 * a), (bs - Z_95 * b, bs + Z_95 * b))),
                Some(standardized_difference(bo, bs, a)),
            ),
            _ => (None, None),
        };
        coefficients.push(CoefficientComparison {
            name,
            beta_original: Some(bo),
            se_original: seo,
            beta_synthetic: Some(bs),
            se_synthetic: ses,
            ci_overlap,
            std_diff,
            flag,
        });
    }
    let mean = |f: fn(&CoefficientComparison) -> Option<f64>| {
        let v: Vec<f64> = coefficients.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(RegressionComparison {
        ci_overlap_mean: mean(|c| c.ci_overlap),
        std_diff_mean: mean(|c| c.std_diff),
        coefficients,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    pub classifier: String,
    pub accuracy_real: Option<f64>,
    pub accuracy_synthetic: Option<f64>,
    pub gap: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub classifiers: Vec<ClassifierResult>,
    pub mean_gap: Option<f64>,
    pub std_gap: Option<f64>,
}

/// Trains each spec on the original and on the synthetic training table and
/// scores both on the same holdout. `gap = accuracy_real − accuracy_synthetic`.
pub fn classifier_utility(
    original_train: &DataTable,
    synthetic_train: &DataTable,
    holdout: &DataTable,
    specs: &[PredictorSpec],
    target: &str,
) -> Result<UtilityReport> {
    let (o, s) = align(original_train, synthetic_train)?;
    let h = holdout.conform_to(o.schema())?;
    let t = o
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::InvalidArgument(format!("target column {target} not found")))?;
    let mut classifiers = Vec::with_capacity(specs.len());
    for spec in specs {
        let fit = |train: &DataTable| train_predictor(spec, train, t).and_then(|p| p.accuracy(&h));
        let (real, synth) = (fit(&o), fit(&s));
        let flag = match (&real, &synth) {
            (Err(e), _) => Some(format!("original: {e}")),
            (_, Err(e)) => Some(format!("synthetic: {e}")),
            _ => None,
        };
        let (real, synth) = (real.ok(), synth.ok());
        classifiers.push(ClassifierResult {
            classifier: spec.name().to_string(),
            accuracy_real: real,
            accuracy_synthetic: synth,
            gap: real.zip(synth).map(|(a, b)| a - b),
            flag,
        });
    }
    let gaps: Vec<f64> = classifiers.iter().filter_map(|c| c.gap).collect();
    let (mean_gap, std_gap) = if gaps.is_empty() {
        (None, None)
    } else {
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64;
        (Some(m), Some(v.sqrt()))
    };
    Ok(UtilityReport {
        classifiers,
        mean_gap,
        std_gap,
    })
}
