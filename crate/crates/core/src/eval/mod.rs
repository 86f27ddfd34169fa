//! Fidelity, utility and privacy evaluation of synthetic tables.

pub mod attacks;
pub mod features;
pub mod logistic;
pub mod metrics;
pub mod predictors;
pub mod report;
pub mod tree;

pub use attacks::{
    attribute_inference, membership_inference, AiaReport, AttackConfig, AttackMode, CopySynthesizer, FittedGan, GanSynthesizer,
    IndependentSynthesizer, MiaReport, Synthesizer,
};
pub use metrics::{
    chi2_avg_p, chi2_sf, classifier_utility, ks_avg_p, pmse_score, regression_metrics, ClassifierResult, PmseResult,
    RegressionComparison, UtilityReport,
};
pub use predictors::{train_predictor, FittedPredictor, PredictorKind, PredictorSpec};
pub use report::{evaluate, EvalOptions, EvalReport};
