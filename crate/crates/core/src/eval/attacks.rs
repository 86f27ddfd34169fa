//! Membership and attribute inference against a synthesizer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{align, labels, FeatureEncoder, Matrix};
use super::logistic::fit_logistic;
use super::predictors::{train_predictor, PredictorSpec};
use crate::encoder::{Encoder, GmmOptions};
use crate::error::{Error, Result};
use crate::gan::{sample_synthetic, train, TrainState, TrainingConfig};
use crate::knowledge::{KnowledgeBase, RuleSet};
use crate::rng;
use crate::schema::DataTable;

/// Anything that turns a training table into synthetic rows.
pub trait Synthesizer {
    fn name(&self) -> String;
    fn synthesize(&self, train: &DataTable, n: usize, seed: u64) -> Result<DataTable>;
}

/// Releases its training rows verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct CopySynthesizer;

impl Synthesizer for CopySynthesizer {
    fn name(&self) -> String {
        "copy".into()
    }

    fn synthesize(&self, train: &DataTable, _n: usize, _seed: u64) -> Result<DataTable> {
        Ok(train.clone())
    }
}

/// Ignores the training rows and draws from a fixed generator.
pub struct IndependentSynthesizer<F>(pub F);

impl<F> Synthesizer for IndependentSynthesizer<F>
where
    F: Fn(usize, u64) -> Result<DataTable>,
{
    fn name(&self) -> String {
        "independent".into()
    }

    fn synthesize(&self, _train: &DataTable, n: usize, seed: u64) -> Result<DataTable> {
        (self.0)(n, seed)
    }
}

/// The rule-infused GAN: masks, encoder fit, training and sampling.
#[derive(Debug, Clone)]
pub struct GanSynthesizer {
    pub rules: RuleSet,
    pub config: TrainingConfig,
    pub gmm: GmmOptions,
}

/// Everything needed to sample from a fitted GAN.
#[derive(Debug, Clone)]
pub struct FittedGan {
    pub kb: KnowledgeBase,
    pub encoder: Encoder,
    pub config: TrainingConfig,
    pub state: TrainState,
}

impl FittedGan {
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataTable> {
        sample_synthetic(&self.state, n, &self.encoder, &self.kb, rng::substream(seed, "sample"))
    }
}

impl GanSynthesizer {
    /// Masks, fits the encoder and trains, all seeded from `seed`.
    pub fn fit(&self, train_rows: &DataTable, seed: u64) -> Result<FittedGan> {
        let kb = KnowledgeBase::new(self.rules.clone(), train_rows.schema())?;
        let masked = kb.apply_property_masks(train_rows)?;
        let encoder = Encoder::fit(&masked, &kb, &self.gmm, rng::substream(seed, "fit.encoder"))?;
        let config = TrainingConfig {
            seed: rng::substream(seed, "fit.train"),
            ..self.config.clone()
        };
        let state = train(&masked, &kb, &encoder, &config)?;
        Ok(FittedGan {
            kb,
            encoder,
            config,
            state,
        })
    }
}

impl Synthesizer for GanSynthesizer {
    fn name(&self) -> String {
        "gan".into()
    }

    fn synthesize(&self, train_rows: &DataTable, n: usize, seed: u64) -> Result<DataTable> {
        self.fit(train_rows, seed)?.sample(n, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Mia,
    Aia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Column whose value the attribute attack infers.
    pub sensitive_column: Option<String>,
    /// Column the membership attack's confidence feature predicts; defaults
    /// to the schema target, then to the last discrete column.
    pub target_column: Option<String>,
    /// Members (and, equally many, non-members) per target or shadow set.
    pub members: usize,
    pub shadows: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn mia(members: usize, seed: u64) -> Self {
        Self {
            mode: AttackMode::Mia,
            sensitive_column: None,
            target_column: None,
            members,
            shadows: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shadows == 0 {
            return Err(Error::InvalidArgument("at least one shadow model is required".into()));
        }
        if self.mode == AttackMode::Mia && self.members == 0 {
            return Err(Error::InvalidArgument("member set size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Balanced accuracy on the target's members and non-members.
    pub accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub members: usize,
    pub shadows: usize,
    pub synthesizer: String,
    /// Coefficients of the calibrated attack (intercept, log distance,
    /// confidence).
    pub attack_coefficients: Vec<f64>,
}

fn confidence_column(config: &AttackConfig, table: &DataTable) -> Result<usize> {
    let schema = table.schema();
    let name = config.target_column.clone().or_else(|| schema.target.clone());
    match name {
        Some(n) => {
            let c = table.column_index(&n)?;
            if !schema.columns[c].is_discrete() {
                return Err(Error::InvalidArgument(format!("column {n} is not discrete")));
            }
            Ok(c)
        }
        None => (0..schema.len())
            .rev()
            .find(|&c| schema.columns[c].is_discrete())
            .ok_or_else(|| Error::InvalidArgument("no discrete column for the confidence feature".into())),
    }
}

/// Euclidean distance from each row of `x` to its nearest row of `refs`.
pub fn distance_to_closest(x: &Matrix, refs: &Matrix) -> Vec<f64> {
    (0..x.rows)
        .map(|i| {
            let a = x.row(i);
            (0..refs.rows)
                .map(|j| a.iter().zip(refs.row(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Attack features of candidate rows against one synthetic release.
fn attack_features(
    candidates: &DataTable,
    synthetic: &DataTable,
    space: &FeatureEncoder,
    conf_col: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let (cand, syn) = align(candidates, synthetic)?;
    let dcr = distance_to_closest(&space.encode(&cand), &space.encode(&syn));
    let truth = labels(&cand, conf_col)?;
    let conf: Vec<f64> = match train_predictor(&PredictorSpec::cart(seed), &syn, conf_col) {
        Ok(p) => p.predict_proba(&cand)?.iter().zip(&truth).map(|(pr, &t)| pr.get(t).copied().unwrap_or(0.0)).collect(),
        // A single-class release predicts that class with certainty.
        Err(_) => {
            let only = labels(&syn, conf_col)?.first().copied();
            truth.iter().map(|&t| f64::from(u8::from(Some(t) == only))).collect()
        }
    };
    Ok(dcr.into_iter().zip(conf).map(|(d, c)| [(d + 1e-6).ln(), c]).collect())
}

/// Shadow-calibrated membership inference. The population is split into
/// disjoint member and non-member sets for the target and every shadow.
pub fn membership_inference(config: &AttackConfig, synth: &dyn Synthesizer, population: &DataTable) -> Result<MiaReport> {
    config.validate()?;
    let m = config.members;
    let need = 2 * m * (1 + config.shadows);
    if population.row_count() < need {
        return Err(Error::InvalidArgument(format!(
            "population of {} rows cannot supply {need} disjoint member and non-member rows",
            population.row_count()
        )));
    }
    let conf_col = confidence_column(config, population)?;
    let mut order: Vec<usize> = (0..population.row_count()).collect();
    order.shuffle(&mut rng::rng(rng::substream(config.seed, "mia.split")));
    let space = FeatureEncoder::fit(population, &[]);
    let split = |k: usize| {
        let base = 2 * m * k;
        (
            population.select(&order[base..base + m]),
            population.select(&order[base + m..base + 2 * m]),
        )
    };
    let release = |k: usize, members: &DataTable| {
        synth.synthesize(members, m, rng::indexed(rng::substream(config.seed, "mia.synth"), k as u64))
    };

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in 1..=config.shadows {
        let (members, others) = split(s);
        let syn = release(s, &members)?;
        let fseed = rng::indexed(config.seed, s as u64);
        for (set, label) in [(&members, 1.0), (&others, 0.0)] {
            for f in attack_features(set, &syn, &space, conf_col, fseed)? {
                rows.push(f.to_vec());
                y.push(label);
            }
        }
    }
    let attack = fit_logistic(&Matrix::from_rows(&rows)?, &y, 1e-4, 100);

    let (members, others) = split(0);
    let syn = release(0, &members)?;
    let fseed = rng::indexed(config.seed, 0);
    let rate = |set: &DataTable, member: bool| -> Result<f64> {
        let feats = attack_features(set, &syn, &space, conf_col, fseed)?;
        let hits = feats.iter().filter(|f| (attack.probability(&f[..]) >= 0.5) == member).count();
        Ok(hits as f64 / feats.len() as f64)
    };
    let tpr = rate(&members, true)?;
    let tnr = rate(&others, false)?;
    Ok(MiaReport {
        accuracy: 0.5 * (tpr + tnr),
        true_positive_rate: tpr,
        true_negative_rate: tnr,
        members: m,
        shadows: config.shadows,
        synthesizer: synth.name(),
        attack_coefficients: attack.beta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiaReport {
    pub sensitive: String,
    pub accuracy: f64,
    /// Accuracy of always guessing the original's most common value.
    pub majority_rate: f64,
}

/// Trains `spec` on the synthetic table to predict `sensitive` from every
/// other column and measures its accuracy on the original rows.
pub fn attribute_inference(
    synthetic: &DataTable,
    original: &DataTable,
    sensitive: &str,
    spec: &PredictorSpec,
) -> Result<AiaReport> {
    let (o, s) = align(original, synthetic)?;
    let col = o.column_index(sensitive)?;
    if !o.schema().columns[col].is_discrete() {
        return Err(Error::InvalidArgument(format!(
            "sensitive column {sensitive} is continuous; only discrete attributes are supported"
        )));
    }
    let predictor = train_predictor(spec, &s, col)?;
    let accuracy = predictor.accuracy(&o)?;
    let truth = labels(&o, col)?;
    let mut counts = vec![0usize; o.schema().columns[col].categories().len()];
    truth.iter().for_each(|&c| counts[c] += 1);
    let majority_rate = counts.iter().copied().max().unwrap_or(0) as f64 / truth.len().max(1) as f64;
    Ok(AiaReport {
        sensitive: sensitive.to_string(),
        accuracy,
        majority_rate,
    })
}
