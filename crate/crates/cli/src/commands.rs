use std::io::Write;
use std::path::Path;

use kgsynth_core::adult::{adult_rules, load_adult};
use kgsynth_core::dp::{AccountantState, DpConfig, EpsilonReport};
use kgsynth_core::encoder::GmmOptions;
use kgsynth_core::eval::{
    attribute_inference, evaluate, membership_inference, AiaReport, AttackConfig, AttackMode, CopySynthesizer,
    EvalOptions, EvalReport, GanSynthesizer, MiaReport, PredictorSpec, Synthesizer,
};
use kgsynth_core::fixture::mini_network;
use kgsynth_core::gan::{sample_synthetic, TrainStatus, TrainingConfig};
use kgsynth_core::knowledge::{RuleSet, ViolationPolicy};
use kgsynth_core::rng;
use kgsynth_core::schema::{load_csv, subsample, DataTable, MissingPolicy, TableSchema};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::artifact::{ModelArtifact, ModelBody};
use crate::error::{CliError, CliResult};

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Sample(a) => cmd_sample(&a, out),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
        Command::Attack(a) => cmd_attack(&a, out).map(|_| ()),
        Command::Accountant(a) => cmd_accountant(&a, out).map(|_| ()),
        Command::Fixture(a) => cmd_fixture(&a, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> CliResult<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Config(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn missing_policy(m: Missing) -> MissingPolicy {
    match m {
        Missing::DropRow => MissingPolicy::DropRow,
        Missing::Error => MissingPolicy::Error,
    }
}

fn load_table(input: &DataArgs) -> CliResult<DataTable> {
    let schema = TableSchema::load(&input.schema)?;
    Ok(load_csv(&input.data, &schema, missing_policy(input.missing))?)
}

/// Training configuration from a profile plus explicit overrides.
pub fn training_config(t: &TrainArgs) -> TrainingConfig {
    let mut c = match t.profile {
        Profile::Default => TrainingConfig::default(),
        Profile::Desk => TrainingConfig::desk(),
    };
    if let Some(v) = t.epochs {
        c.epochs = v;
    }
    if let Some(v) = t.batch {
        c.batch_size = v;
    }
    if let Some(v) = t.rule_weight {
        c.rule_weight = v;
    }
    if let Some(v) = t.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = t.n_critic {
        c.n_critic = v;
    }
    if let Some(h) = &t.hidden {
        c.network.generator_hidden = h.clone();
        c.network.critic_hidden = h.clone();
    }
    if t.keep_violations {
        c.violation_policy = ViolationPolicy::WarnAndKeep;
    }
    if t.dp {
        c.dp = Some(DpConfig {
            clip_norm: t.clip,
            noise_multiplier: match (t.sigma, t.epsilon_ceiling) {
                (None, Some(_)) => None,
                (s, _) => Some(s.unwrap_or(1.0)),
            },
            delta: t.delta,
            epsilon_ceiling: t.epsilon_ceiling,
        });
    }
    c
}

fn write_history(path: &Path, body: &ModelBody) -> CliResult<()> {
    let mut text = String::from("epoch,step,critic_loss,wasserstein,gradient_penalty,generator_loss,rule_penalty,epsilon\n");
    for h in &body.state.history {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            h.epoch,
            h.step,
            h.critic_loss,
            h.wasserstein,
            h.gradient_penalty,
            h.generator_loss,
            h.rule_penalty,
            h.epsilon.map(|e| e.to_string()).unwrap_or_default()
        ));
    }
    write_file(path, &text)
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> CliResult<()> {
    let rules = RuleSet::load(&a.rules)?;
    let table = load_table(&a.input)?;
    let config = training_config(&a.train);
    config.validate()?;
    let synth = GanSynthesizer {
        rules: rules.clone(),
        config,
        gmm: GmmOptions::default(),
    };
    let fitted = synth.fit(&table, a.seed)?;
    let body = ModelBody {
        schema: table.schema().clone(),
        rules_hash: rules.canonical_hash(),
        rules,
        gmm: synth.gmm.clone(),
        training: fitted.config,
        encoder: fitted.encoder,
        state: fitted.state,
    };
    let artifact = ModelArtifact::new(body)?;
    artifact.save(&a.model)?;
    if let Some(path) = &a.history {
        write_history(path, &artifact.body)?;
    }

    let state = &artifact.body.state;
    say(
        out,
        format_args!(
            "trained {} epochs, {} generator steps, {} critic updates on {} rows",
            state.epochs_done,
            state.generator_steps,
            state.critic_updates,
            table.row_count()
        ),
    )?;
    if let Some(h) = state.history.last() {
        say(
            out,
            format_args!(
                "final losses: critic {:.4} (wasserstein {:.4}, penalty {:.4}), generator {:.4} (rule {:.4})",
                h.critic_loss, h.wasserstein, h.gradient_penalty, h.generator_loss, h.rule_penalty
            ),
        )?;
    }
    if let Some(dp) = &state.dp {
        say(
            out,
            format_args!(
                "dp: sigma {:.4}, q {:.4}, epsilon {:.4} at delta {}",
                dp.sigma, dp.sampling_rate, dp.epsilon, dp.config.delta
            ),
        )?;
    }
    say(out, format_args!("model {} (fingerprint {})", a.model.display(), artifact.fingerprint))?;
    if state.status == TrainStatus::BudgetExhausted {
        return Err(CliError::BudgetExhausted(format!(
            "epsilon ceiling reached after {} critic updates; partial model saved and flagged",
            state.critic_updates
        )));
    }
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs, out: &mut dyn Write) -> CliResult<()> {
    let artifact = ModelArtifact::load(&a.model)?;
    if artifact.budget_exhausted() {
        say(out, format_args!("note: model was flagged budget_exhausted during training"))?;
    }
    let kb = artifact.knowledge_base()?;
    let body = &artifact.body;
    let table = sample_synthetic(&body.state, a.rows, &body.encoder, &kb, rng::substream(a.seed, "sample"))?;
    table.save_csv(&a.out)?;
    say(out, format_args!("wrote {} rows to {}", table.row_count(), a.out.display()))
}

pub fn eval_options(a: &EvalArgs, schema: &TableSchema) -> EvalOptions {
    let has = |m: Metric| a.metrics.contains(&m) || a.metrics.contains(&Metric::All);
    EvalOptions {
        pmse: has(Metric::Pmse),
        cart_depth: a.cart_depth,
        chi2: has(Metric::Chi2),
        ks: has(Metric::Ks),
        regression: has(Metric::Regression),
        utility: has(Metric::Utility),
        classifiers: Vec::new(),
        aia: has(Metric::Aia),
        target: a.target.clone().or_else(|| schema.target.clone()),
        sensitive: a.sensitive.clone().or_else(|| schema.sensitive.first().cloned()),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<EvalReport> {
    let original = load_table(&a.input)?;
    let policy = missing_policy(a.input.missing);
    // Open columns infer their categories per file; the metrics align the
    // vocabularies before comparing.
    let schema = TableSchema::load(&a.input.schema)?;
    let synthetic = load_csv(&a.synthetic, &schema, policy)?;
    let holdout = a.holdout.as_ref().map(|p| load_csv(p, &schema, policy)).transpose()?;
    let options = eval_options(a, original.schema());
    let report = evaluate(&original, &synthetic, holdout.as_ref(), &options, a.seed)?;
    if let Some(path) = &a.report {
        write_file(path, &report.to_json()?)?;
    }
    out.write_all(report.summary().as_bytes())
        .map_err(|e| CliError::Config(format!("cannot write output: {e}")))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub mode: String,
    pub seed: u64,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mia: Option<MiaReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aia: Option<AiaReport>,
}

pub fn cmd_attack(a: &AttackArgs, out: &mut dyn Write) -> CliResult<AttackReport> {
    let table = load_table(&a.input)?;
    let report = match a.mode {
        Mode::Mia => {
            let members = a
                .members
                .unwrap_or(table.row_count() / (2 * (1 + a.shadows.max(1))));
            let config = AttackConfig {
                mode: AttackMode::Mia,
                sensitive_column: None,
                target_column: a.target.clone(),
                members,
                shadows: a.shadows,
                seed: a.seed,
            };
            let synth: Box<dyn Synthesizer> = match a.synthesizer {
                SynthesizerKind::Copy => Box::new(CopySynthesizer),
                SynthesizerKind::Gan => {
                    let path = a
                        .rules
                        .as_ref()
                        .ok_or_else(|| CliError::Config("--rules is required for the gan synthesizer".into()))?;
                    let config = training_config(&a.train);
                    config.validate()?;
                    Box::new(GanSynthesizer {
                        rules: RuleSet::load(path)?,
                        config,
                        gmm: GmmOptions::default(),
                    })
                }
            };
            let r = membership_inference(&config, synth.as_ref(), &table)?;
            say(
                out,
                format_args!(
                    "membership inference on {}: balanced accuracy {:.4} (tpr {:.4}, tnr {:.4}; {} members, {} shadows)",
                    r.synthesizer, r.accuracy, r.true_positive_rate, r.true_negative_rate, r.members, r.shadows
                ),
            )?;
            AttackReport {
                mode: "mia".into(),
                seed: a.seed,
                rows: table.row_count(),
                mia: Some(r),
                aia: None,
            }
        }
        Mode::Aia => {
            let path = a
                .synthetic
                .as_ref()
                .ok_or_else(|| CliError::Config("--synthetic is required for attribute inference".into()))?;
            let schema = TableSchema::load(&a.input.schema)?;
            let synthetic = load_csv(path, &schema, missing_policy(a.input.missing))?;
            let sensitive = a
                .sensitive
                .clone()
                .or_else(|| table.schema().sensitive.first().cloned())
                .ok_or_else(|| CliError::Config("--sensitive is required for attribute inference".into()))?;
            let spec = PredictorSpec::cart(rng::substream(a.seed, "attack.aia"));
            let r = attribute_inference(&synthetic, &table, &sensitive, &spec)?;
            say(
                out,
                format_args!(
                    "attribute inference of {}: accuracy {:.4} (majority rate {:.4})",
                    r.sensitive, r.accuracy, r.majority_rate
                ),
            )?;
            AttackReport {
                mode: "aia".into(),
                seed: a.seed,
                rows: table.row_count(),
                mia: None,
                aia: Some(r),
            }
        }
    };
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
        write_file(path, &text)?;
    }
    Ok(report)
}

pub fn cmd_accountant(a: &AccountantArgs, out: &mut dyn Write) -> CliResult<EpsilonReport> {
    if !(0.0..=1.0).contains(&a.q) {
        return Err(CliError::Config(format!("sampling rate {} outside [0, 1]", a.q)));
    }
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(CliError::Config(format!("sigma {} must be positive", a.sigma)));
    }
    let mut state = match &a.orders {
        Some(orders) => {
            if orders.is_empty() || orders.iter().any(|&o| !(o > 1.0)) {
                return Err(CliError::Config("every order must exceed 1".into()));
            }
            AccountantState::with_orders(orders.clone())
        }
        None => AccountantState::default(),
    };
    let per = state.step_rdp(a.q, a.sigma)?;
    state.compose(&per, a.steps);
    let r = state.epsilon(a.delta)?;
    if r.no_steps {
        say(out, format_args!("epsilon 0 (no steps)"))?;
    } else {
        say(out, format_args!("epsilon {} at order {}", r.epsilon, r.order))?;
    }
    Ok(r)
}

pub fn cmd_fixture(a: &FixtureArgs, out: &mut dyn Write) -> CliResult<()> {
    let (table, rules) = match a.name {
        FixtureName::MiniNetwork => mini_network(a.rows.unwrap_or(2000), a.seed)?,
        FixtureName::Adult => {
            let path = a
                .data
                .as_ref()
                .ok_or_else(|| CliError::Config("--data (raw adult.data file) is required for the adult fixture".into()))?;
            let full = load_adult(path, MissingPolicy::DropRow)?;
            let n = a.rows.unwrap_or(full.row_count());
            (subsample(&full, n, rng::substream(a.seed, "fixture.adult")), adult_rules())
        }
    };
    table.save_csv(&a.out)?;
    if let Some(p) = &a.schema {
        // A masked column's domain is defined by its property map, so its
        // vocabulary stays open for synthetic values the sample lacks.
        let mut schema = table.schema().clone();
        for col in schema.columns.iter_mut().filter(|c| c.masked_by.is_some()) {
            col.categories = None;
        }
        write_file(p, &schema.to_toml()?)?;
    }
    if let Some(p) = &a.rules {
        write_file(p, &rules.to_toml()?)?;
    }
    say(out, format_args!("wrote {} rows to {}", table.row_count(), a.out.display()))
}
