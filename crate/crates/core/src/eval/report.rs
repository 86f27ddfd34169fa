//! The evaluation report and the entry point that fills it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::attacks::{AiaReport, MiaReport};
use super::metrics::{
    chi2_avg_p, classifier_utility, ks_avg_p, pmse_score, regression_metrics, ColumnTest, RegressionComparison,
    UtilityReport,
};
use super::predictors::PredictorSpec;
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{split_train_holdout, DataTable};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub pmse: bool,
    pub cart_depth: usize,
    pub chi2: bool,
    pub ks: bool,
    /// Logistic-regression comparison; needs `target`.
    pub regression: bool,
    /// Classifier gaps; needs `target` and a holdout.
    pub utility: bool,
    pub classifiers: Vec<PredictorSpec>,
    /// Attribute inference with a CART; needs `sensitive`.
    pub aia: bool,
    pub target: Option<String>,
    pub sensitive: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            pmse: true,
            cart_depth: 6,
            chi2: true,
            ks: true,
            regression: false,
            utility: false,
            classifiers: Vec::new(),
            aia: false,
            target: None,
            sensitive: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub original_sha256: String,
    pub synthetic_sha256: String,
    pub holdout_sha256: Option<String>,
    pub original_rows: usize,
    pub synthetic_rows: usize,
    pub seed: u64,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub pmse: Option<f64>,
    pub pmse_ratio: Option<f64>,
    pub chi2_avg_p: Option<f64>,
    pub ks_avg_p: Option<f64>,
    pub ci_overlap_mean: Option<f64>,
    pub std_diff_mean: Option<f64>,
    pub chi2_columns: Vec<ColumnTest>,
    pub ks_columns: Vec<ColumnTest>,
    pub regression: Option<RegressionComparison>,
    pub utility: Option<UtilityReport>,
    pub mia_accuracy: Option<f64>,
    pub aia_accuracy: Option<f64>,
    pub mia: Option<MiaReport>,
    pub aia: Option<AiaReport>,
    pub metadata: ReportMetadata,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn table_sha256(table: &DataTable) -> Result<String> {
    Ok(hex::encode(Sha256::digest(table.to_csv_string()?.as_bytes())))
}

/// Runs the selected metrics. Without an explicit holdout, utility splits
/// 30% of `original` off as the holdout.
pub fn evaluate(
    original: &DataTable,
    synthetic: &DataTable,
    holdout: Option<&DataTable>,
    options: &EvalOptions,
    seed: u64,
) -> Result<EvalReport> {
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyTable);
    }
    let need = |flag: &str, value: &Option<String>| {
        value
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for the selected metrics")))
    };
    let mut report = EvalReport {
        version: REPORT_VERSION,
        pmse: None,
        pmse_ratio: None,
        chi2_avg_p: None,
        ks_avg_p: None,
        ci_overlap_mean: None,
        std_diff_mean: None,
        chi2_columns: Vec::new(),
        ks_columns: Vec::new(),
        regression: None,
        utility: None,
        mia_accuracy: None,
        aia_accuracy: None,
        mia: None,
        aia: None,
        metadata: ReportMetadata {
            original_sha256: table_sha256(original)?,
            synthetic_sha256: table_sha256(synthetic)?,
            holdout_sha256: holdout.map(table_sha256).transpose()?,
            original_rows: original.row_count(),
            synthetic_rows: synthetic.row_count(),
            seed,
            options: options.clone(),
        },
    };
    let schema = original.schema();
    if options.pmse {
        let p = pmse_score(original, synthetic, options.cart_depth, rng::substream(seed, "eval.pmse"))?;
        report.pmse = Some(p.pmse);
        report.pmse_ratio = finite(p.pmse_ratio);
    }
    if options.chi2 && schema.columns.iter().any(|c| c.is_discrete()) {
        let (m, cols) = chi2_avg_p(original, synthetic)?;
        report.chi2_avg_p = Some(m);
        report.chi2_columns = cols;
    }
    if options.ks && schema.columns.iter().any(|c| !c.is_discrete()) {
        let (m, cols) = ks_avg_p(original, synthetic)?;
        report.ks_avg_p = Some(m);
        report.ks_columns = cols;
    }
    if options.regression {
        let target = need("target", &options.target)?;
        let r = regression_metrics(original, synthetic, &target)?;
        report.ci_overlap_mean = r.ci_overlap_mean;
        report.std_diff_mean = r.std_diff_mean;
        report.regression = Some(r);
    }
    if options.utility {
        let target = need("target", &options.target)?;
        let specs = if options.classifiers.is_empty() {
            PredictorSpec::battery(rng::substream(seed, "eval.classifiers"))
        } else {
            options.classifiers.clone()
        };
        let u = match holdout {
            Some(h) => classifier_utility(original, synthetic, h, &specs, &target)?,
            None => {
                let (train, h) = split_train_holdout(original, 0.3, rng::substream(seed, "eval.holdout"))?;
                classifier_utility(&train, synthetic, &h, &specs, &target)?
            }
        };
        report.utility = Some(u);
    }
    if options.aia {
        let sensitive = need("sensitive", &options.sensitive)?;
        let spec = PredictorSpec::cart(rng::substream(seed, "eval.aia"));
        let a = super::attacks::attribute_inference(synthetic, original, &sensitive, &spec)?;
        report.aia_accuracy = Some(a.accuracy);
        report.aia = Some(a);
    }
    Ok(report)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if report.version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "report version {} is not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{k:<18}{v:.4}\n"));
            }
        };
        line("pmse", self.pmse);
        line("pmse_ratio", self.pmse_ratio);
        line("chi2_avg_p", self.chi2_avg_p);
        line("ks_avg_p", self.ks_avg_p);
        line("ci_overlap_mean", self.ci_overlap_mean);
        line("std_diff_mean", self.std_diff_mean);
        line("mia_accuracy", self.mia_accuracy);
        line("aia_accuracy", self.aia_accuracy);
        if let Some(u) = &self.utility {
            for c in &u.classifiers {
                match (c.accuracy_real, c.accuracy_synthetic, c.gap) {
                    (Some(a), Some(b), Some(g)) => {
                        out.push_str(&format!("{:<18}real {a:.4}  synthetic {b:.4}  gap {g:+.4}\n", c.classifier))
                    }
                    _ => out.push_str(&format!(
                        "{:<18}{}\n",
                        c.classifier,
                        c.flag.as_deref().unwrap_or("unavailable")
                    )),
                }
            }
        }
        out
    }
}
