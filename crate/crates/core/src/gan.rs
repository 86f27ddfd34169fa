//! Conditional WGAN-GP with a rule-enforcement penalty on the generator and
//! optional DP-SGD critic updates.

use kgsynth_tensor::{Activation, Adam, Graph, Mlp, ParamSet, ParamVars, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dp::{aggregate_noisy, clip_per_example, solve_sigma, AccountantState, DpConfig};
use crate::encoder::{selectable_categories, CondLaw, CondSampler, CondVector, Encoder, RowEncodingLayout, Segment, SegmentKind};
use crate::error::{Error, Result};
use crate::knowledge::{EnforcedAssignment, KnowledgeBase, ViolationPolicy};
use crate::rng::{self, Rng};
use crate::schema::DataTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            noise_dim: 128,
            generator_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Generator steps per epoch; defaults to `rows / batch_size` (at least 1).
    pub steps_per_epoch: Option<usize>,
    pub n_critic: usize,
    pub gp_weight: f64,
    pub rule_weight: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub network: NetworkConfig,
    pub dp: Option<DpConfig>,
    pub violation_policy: ViolationPolicy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 500,
            steps_per_epoch: None,
            n_critic: 5,
            gp_weight: 10.0,
            rule_weight: 10.0,
            tau: 0.2,
            learning_rate: 2e-4,
            seed: 0,
            network: NetworkConfig::default(),
            dp: None,
            violation_policy: ViolationPolicy::Error,
        }
    }
}

impl TrainingConfig {
    /// Smaller networks and a faster schedule for laptop-scale tables of a
    /// few thousand rows.
    pub fn desk() -> Self {
        Self {
            epochs: 40,
            batch_size: 100,
            learning_rate: 1e-3,
            network: NetworkConfig {
                generator_hidden: vec![128, 128],
                critic_hidden: vec![128, 128],
                ..NetworkConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1");
        }
        if !(self.gp_weight >= 0.0) || !(self.rule_weight >= 0.0) {
            return bad("penalty weights must be nonnegative");
        }
        if !(self.tau > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.network.noise_dim == 0 {
            return bad("noise dimension must be positive");
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

fn hidden_layers(widths: &[usize], input: usize, output: usize) -> Vec<usize> {
    std::iter::once(input).chain(widths.iter().copied()).chain(std::iter::once(output)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub mlp: Mlp,
    pub params: ParamSet,
    pub noise_dim: usize,
    pub cond_width: usize,
    pub segments: Vec<Segment>,
}

/// Generator outputs inside a graph.
#[derive(Debug, Clone)]
pub struct GenOutput {
    /// Soft encoded batch: tanh for α slots, Gumbel-softmax samples elsewhere.
    pub sample: Var,
    /// Per layout segment, log-probabilities of categorical heads.
    pub log_probs: Vec<Option<Var>>,
}

impl GeneratorNet {
    pub fn new(layout: &RowEncodingLayout, net: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let widths = hidden_layers(&net.generator_hidden, net.noise_dim + layout.cond_width(), layout.total_width());
        let layers = Mlp::from_widths(&widths, Activation::LeakyRelu(net.leaky_slope), Activation::Identity)?;
        let mut params = ParamSet::new();
        let mlp = Mlp::init("generator", layers, &mut params, rng)?;
        Ok(Self {
            mlp,
            params,
            noise_dim: net.noise_dim,
            cond_width: layout.cond_width(),
            segments: layout.segments().to_vec(),
        })
    }

    pub fn output_width(&self) -> usize {
        self.mlp.output_width()
    }

    /// Builds `G(z | cond)`. Gumbel noise is drawn from `rng`.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        noise: Var,
        cond: Var,
        tau: f64,
        rng: &mut Rng,
    ) -> Result<GenOutput> {
        let input = g.concat_cols(&[noise, cond])?;
        let logits = self.mlp.forward(g, vars, input)?.output;
        let rows = g.value(logits).rows();
        let mut parts = Vec::with_capacity(self.segments.len());
        let mut log_probs = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let l = g.slice_cols(logits, s.offset, s.offset + s.width)?;
            if s.kind == SegmentKind::Alpha {
                parts.push(g.tanh(l));
                log_probs.push(None);
                continue;
            }
            log_probs.push(Some(g.log_softmax(l)));
            let gumbel: Vec<f64> = (0..rows * s.width)
                .map(|_| {
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    -(-u.ln()).ln()
                })
                .collect();
            let noise = g.input("gumbel", Tensor::new(rows, s.width, gumbel)?);
            let perturbed = g.add(l, noise)?;
            let scaled = g.scale(perturbed, 1.0 / tau);
            parts.push(g.softmax(scaled));
        }
        Ok(GenOutput {
            sample: g.concat_cols(&parts)?,
            log_probs,
        })
    }

    /// Values of a soft generated batch, outside of any training graph.
    pub fn generate(&self, noise: Tensor, cond: Tensor, tau: f64, rng: &mut Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = g.params(&self.params);
        let z = g.input("noise", noise);
        let c = g.input("cond", cond);
        let out = self.forward(&mut g, &vars, z, c, tau, rng)?;
        Ok(g.value(out.sample).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub mlp: Mlp,
    pub params: ParamSet,
    pub data_width: usize,
    pub cond_width: usize,
}

impl CriticNet {
    pub fn new(layout: &RowEncodingLayout, net: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let widths = hidden_layers(&net.critic_hidden, layout.total_width() + layout.cond_width(), 1);
        let layers = Mlp::from_widths(&widths, Activation::LeakyRelu(net.leaky_slope), Activation::Identity)?;
        let mut params = ParamSet::new();
        let mlp = Mlp::init("critic", layers, &mut params, rng)?;
        Ok(Self {
            mlp,
            params,
            data_width: layout.total_width(),
            cond_width: layout.cond_width(),
        })
    }

    /// Critic with explicit layers, e.g. a single linear layer in tests.
    pub fn from_mlp(mlp: Mlp, params: ParamSet, data_width: usize, cond_width: usize) -> Result<Self> {
        if mlp.input_width() != data_width + cond_width || mlp.output_width() != 1 {
            return Err(Error::InvalidArgument("critic shape does not match the layout".into()));
        }
        Ok(Self {
            mlp,
            params,
            data_width,
            cond_width,
        })
    }

    /// `D(x ⊕ cond)`, one score per row.
    pub fn score(&self, g: &mut Graph, vars: &ParamVars, x: Var, cond: Var) -> Result<Var> {
        let input = g.concat_cols(&[x, cond])?;
        Ok(self.mlp.forward(g, vars, input)?.output)
    }

    /// `mean((‖∇ₓ D(x ⊕ cond)‖₂ − 1)²)` at `x`, differentiable in the weights.
    pub fn gradient_penalty(&self, g: &mut Graph, vars: &ParamVars, x: Var, cond: Var) -> Result<Var> {
        let input = g.concat_cols(&[x, cond])?;
        let fwd = self.mlp.forward(g, vars, input)?;
        let grad = self.mlp.input_gradient(g, vars, &fwd)?;
        let gx = g.slice_cols(grad, 0, self.data_width)?;
        let sq = g.square(gx);
        let norm2 = g.sum_rows(sq);
        let norm2 = g.add_scalar(norm2, 1e-12);
        let norm = g.sqrt(norm2)?;
        let dev = g.add_scalar(norm, -1.0);
        let dev2 = g.square(dev);
        Ok(g.mean(dev2))
    }

    /// Scores of a batch, outside of any training graph.
    pub fn scores(&self, x: &Tensor, cond: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = g.params(&self.params);
        let xv = g.input("x", x.clone());
        let c = g.input("cond", cond.clone());
        let s = self.score(&mut g, &vars, xv, c)?;
        Ok(g.value(s).data().to_vec())
    }
}

/// `x̂ = u·x + (1 − u)·x̃` row by row.
pub fn interpolate(real: &Tensor, fake: &Tensor, u: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() || u.len() != real.rows() {
        return Err(Error::InvalidArgument("interpolation shapes differ".into()));
    }
    let mut out = real.clone();
    for r in 0..real.rows() {
        let w = u[r];
        for (o, f) in out.row_mut(r).iter_mut().zip(fake.row(r)) {
            *o = w * *o + (1.0 - w) * f;
        }
    }
    Ok(out)
}

pub fn interpolation_weights(rows: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..rows).map(|_| r.random::<f64>()).collect()
}

/// Scalar pieces of a critic loss expression.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: Var,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// `mean D(x̃) − mean D(x) + λ·mean (‖∇D(x̂)‖ − 1)²` where `interp` is x̂.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    g: &mut Graph,
    critic: &CriticNet,
    vars: &ParamVars,
    real: &Tensor,
    fake: &Tensor,
    interp: &Tensor,
    cond: &Tensor,
    lambda: f64,
) -> Result<CriticLoss> {
    let c = g.input("cond", cond.clone());
    let x = g.input("real", real.clone());
    let xf = g.input("fake", fake.clone());
    let d_real = critic.score(g, vars, x, c)?;
    let d_fake = critic.score(g, vars, xf, c)?;
    let m_real = g.mean(d_real);
    let m_fake = g.mean(d_fake);
    let w = g.sub(m_fake, m_real)?;
    let wasserstein = g.value(w).data()[0];
    if lambda == 0.0 {
        return Ok(CriticLoss {
            loss: w,
            wasserstein,
            penalty: 0.0,
        });
    }
    let xh = g.input("interpolate", interp.clone());
    let gp = critic.gradient_penalty(g, vars, xh, c)?;
    let penalty = g.value(gp).data()[0];
    let scaled = g.scale(gp, lambda);
    Ok(CriticLoss {
        loss: g.add(w, scaled)?,
        wasserstein,
        penalty,
    })
}

/// Scalar pieces of a generator loss expression.
#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub loss: Var,
    pub adversarial: f64,
    pub rule_penalty: f64,
}

/// `−mean D(x̃ ⊕ cond) + w·H̄`, where H̄ averages over rows the summed
/// `−log p` of every enforced target of that row's condition.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    g: &mut Graph,
    critic: &CriticNet,
    critic_vars: &ParamVars,
    out: &GenOutput,
    cond: Var,
    targets: &[&EnforcedAssignment],
    segments: &[Segment],
    rule_weight: f64,
) -> Result<GeneratorLoss> {
    let rows = g.value(out.sample).rows();
    let scores = critic.score(g, critic_vars, out.sample, cond)?;
    let m = g.mean(scores);
    let adv = g.scale(m, -1.0);
    let adversarial = g.value(adv).data()[0];

    let mut masks: Vec<Option<Tensor>> = vec![None; segments.len()];
    for (r, t) in targets.iter().enumerate() {
        for &(s, c) in &t.targets {
            let mask = masks[s].get_or_insert_with(|| Tensor::zeros(rows, segments[s].width));
            mask.set(r, c, 1.0);
        }
    }
    let mut total: Option<Var> = None;
    for (s, mask) in masks.into_iter().enumerate() {
        let (Some(mask), Some(lp)) = (mask, out.log_probs[s]) else {
            continue;
        };
        let mv = g.input("kg_targets", mask);
        let picked = g.mul(mv, lp)?;
        let sum = g.sum(picked);
        total = Some(match total {
            Some(t) => g.add(t, sum)?,
            None => sum,
        });
    }
    let Some(total) = total else {
        return Ok(GeneratorLoss {
            loss: adv,
            adversarial,
            rule_penalty: 0.0,
        });
    };
    let h = g.scale(total, -1.0 / rows as f64);
    let rule_penalty = g.value(h).data()[0];
    let loss = if rule_weight > 0.0 {
        let wh = g.scale(h, rule_weight);
        g.add(adv, wh)?
    } else {
        adv
    };
    Ok(GeneratorLoss {
        loss,
        adversarial,
        rule_penalty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub gradient_penalty: f64,
    pub generator_loss: f64,
    pub rule_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpState {
    pub config: DpConfig,
    pub sigma: f64,
    pub sampling_rate: f64,
    pub accountant: AccountantState,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub generator: GeneratorNet,
    pub critic: CriticNet,
    pub generator_opt: Adam,
    pub critic_opt: Adam,
    pub cond_law: CondLaw,
    pub epochs_done: usize,
    pub generator_steps: usize,
    pub critic_updates: usize,
    pub dp: Option<DpState>,
    pub history: Vec<LossRecord>,
    pub status: TrainStatus,
    pub tau: f64,
}

/// Value and flattened parameter gradient of a scalar expression.
pub fn value_and_grad<F>(params: &ParamSet, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Graph, &ParamVars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.params(params);
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).scalar()?, grads.flatten(&vars)))
}

/// One independent graph per example.
pub fn per_example_grads<F>(params: &ParamSet, examples: usize, mut build: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Graph, &ParamVars, usize) -> Result<Var>,
{
    (0..examples)
        .map(|i| {
            let mut g = Graph::new();
            let vars = g.params(params);
            let loss = build(&mut g, &vars, i)?;
            Ok(g.backward(loss)?.flatten(&vars))
        })
        .collect()
}

fn normal_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

fn cond_tensor(conds: &[CondVector], layout: &RowEncodingLayout) -> Result<Tensor> {
    let w = layout.cond_width();
    let mut t = Tensor::zeros(conds.len(), w);
    for (r, c) in conds.iter().enumerate() {
        let idx = layout
            .cond_index(c.segment, c.category)
            .ok_or_else(|| Error::MalformedCondition(format!("{c:?}")))?;
        t.set(r, idx, 1.0);
    }
    Ok(t)
}

/// Per-condition enforcement targets, indexed by dense cond position.
fn target_table(kb: &KnowledgeBase, layout: &RowEncodingLayout) -> Result<Vec<EnforcedAssignment>> {
    let mut out = vec![EnforcedAssignment { targets: Vec::new() }; layout.cond_width()];
    for &s in layout.cond_segments() {
        for c in 0..layout.segments()[s].width {
            let idx = layout.cond_index(s, c).expect("selectable");
            out[idx] = kb.kg_query(&CondVector { segment: s, category: c }, layout)?;
        }
    }
    Ok(out)
}

/// Everything the trainer reads, prepared once.
struct Prepared<'a> {
    layout: &'a RowEncodingLayout,
    encoded: Tensor,
    categories: Vec<Vec<u32>>,
    sampler: CondSampler,
    targets: Vec<EnforcedAssignment>,
}

/// Trains on a masked table. The table is encoded once with a seed derived
/// from `config.seed`.
pub fn train(masked: &DataTable, kb: &KnowledgeBase, encoder: &Encoder, config: &TrainingConfig) -> Result<TrainState> {
    config.validate()?;
    if masked.is_empty() {
        return Err(Error::EmptyTable);
    }
    let layout = encoder.layout();
    let annotated = kb.annotate(masked, config.violation_policy)?;
    drop(annotated);
    let encoded = encoder.encode_table(masked, kb, rng::substream(config.seed, "train.encode"))?;
    let categories = selectable_categories(masked, kb, layout);
    let all: Vec<usize> = (0..masked.row_count()).collect();
    let sampler = CondSampler::new(layout, &categories, &all)?;
    let prep = Prepared {
        layout,
        encoded,
        categories,
        targets: target_table(kb, layout)?,
        sampler,
    };

    let mut init = rng::rng(rng::substream(config.seed, "train.init"));
    let generator = GeneratorNet::new(layout, &config.network, &mut init)?;
    let critic = CriticNet::new(layout, &config.network, &mut init)?;
    let new_adam = |n| Adam::new(n, config.learning_rate, 0.5, 0.9);
    let n = masked.row_count();
    let steps_per_epoch = config.steps_per_epoch.unwrap_or((n / config.batch_size).max(1));

    let dp = match &config.dp {
        None => None,
        Some(dp) => {
            let q = (config.batch_size as f64 / n as f64).min(1.0);
            let total = (config.epochs * steps_per_epoch * config.n_critic) as u64;
            let sigma = match (dp.noise_multiplier, dp.epsilon_ceiling) {
                (Some(s), _) => s,
                (None, Some(eps)) => solve_sigma(q, total.max(1), dp.delta, eps)?,
                (None, None) => unreachable!("validated"),
            };
            Some(DpState {
                config: dp.clone(),
                sigma,
                sampling_rate: q,
                accountant: AccountantState::default(),
                epsilon: 0.0,
            })
        }
    };

    let mut state = TrainState {
        generator_opt: new_adam(generator.params.num_scalars()),
        critic_opt: new_adam(critic.params.num_scalars()),
        generator,
        critic,
        cond_law: prep.sampler.law(),
        epochs_done: 0,
        generator_steps: 0,
        critic_updates: 0,
        dp,
        history: Vec::new(),
        status: TrainStatus::Completed,
        tau: config.tau,
    };
    let per_step_rdp = match &state.dp {
        Some(d) => Some(d.accountant.step_rdp(d.sampling_rate, d.sigma)?),
        None => None,
    };

    let train_seed = rng::substream(config.seed, "train.loop");
    'epochs: for epoch in 0..config.epochs {
        for step in 0..steps_per_epoch {
            let global = epoch * steps_per_epoch + step;
            let mut r = rng::rng(rng::indexed(train_seed, global as u64));
            let mut critic_stats = (0.0, 0.0, 0.0);
            for _ in 0..config.n_critic {
                if let (Some(d), Some(per)) = (&mut state.dp, &per_step_rdp) {
                    if let Some(ceiling) = d.config.epsilon_ceiling {
                        let mut next = d.accountant.clone();
                        next.compose(per, 1);
                        if next.epsilon(d.config.delta)?.epsilon > ceiling {
                            state.status = TrainStatus::BudgetExhausted;
                            break 'epochs;
                        }
                    }
                }
                critic_stats = match state.dp {
                    None => critic_step(&mut state, &prep, config, &mut r)?,
                    Some(_) => dp_critic_step(&mut state, &prep, config, n, &mut r)?,
                };
                if let (Some(d), Some(per)) = (&mut state.dp, &per_step_rdp) {
                    d.accountant.compose(per, 1);
                    d.epsilon = d.accountant.epsilon(d.config.delta)?.epsilon;
                }
                state.critic_updates += 1;
            }
            let (gen_loss, rule_penalty) = generator_step(&mut state, &prep, config, &mut r)?;
            state.generator_steps += 1;
            state.history.push(LossRecord {
                epoch,
                step,
                critic_loss: critic_stats.0,
                wasserstein: critic_stats.1,
                gradient_penalty: critic_stats.2,
                generator_loss: gen_loss,
                rule_penalty,
                epsilon: state.dp.as_ref().map(|d| d.epsilon),
            });
        }
        state.epochs_done = epoch + 1;
    }
    Ok(state)
}

fn critic_step(state: &mut TrainState, prep: &Prepared, config: &TrainingConfig, r: &mut Rng) -> Result<(f64, f64, f64)> {
    let b = config.batch_size;
    let mut conds = Vec::with_capacity(b);
    let mut rows = Vec::with_capacity(b);
    for _ in 0..b {
        match prep.sampler.sample(r) {
            Some((c, row)) => {
                conds.push(c);
                rows.push(row);
            }
            // Layouts without selectable segments fall back to uniform rows.
            None => rows.push(r.random_range(0..prep.encoded.rows())),
        }
    }
    let cond = if conds.is_empty() {
        Tensor::zeros(b, 0)
    } else {
        cond_tensor(&conds, prep.layout)?
    };
    let real = prep.encoded.select_rows(&rows);
    let noise = normal_tensor(b, state.generator.noise_dim, r);
    let fake = state.generator.generate(noise, cond.clone(), config.tau, r)?;
    let u: Vec<f64> = (0..b).map(|_| r.random::<f64>()).collect();
    let interp = interpolate(&real, &fake, &u)?;
    let critic = &state.critic;
    let mut stats = (0.0, 0.0);
    let (loss, grad) = value_and_grad(&critic.params, |g, vars| {
        let l = critic_loss(g, critic, vars, &real, &fake, &interp, &cond, config.gp_weight)?;
        stats = (l.wasserstein, l.penalty);
        Ok(l.loss)
    })?;
    state.critic_opt.step(&mut state.critic.params, &grad)?;
    Ok((loss, stats.0, stats.1))
}

fn dp_critic_step(
    state: &mut TrainState,
    prep: &Prepared,
    config: &TrainingConfig,
    n: usize,
    r: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let d = state.dp.as_ref().expect("dp state");
    let (q, sigma, clip) = (d.sampling_rate, d.sigma, d.config.clip_norm);
    let batch: Vec<usize> = (0..n).filter(|_| r.random::<f64>() < q).collect();
    if batch.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    // Conditions come from each example's own row.
    let segs = prep.layout.cond_segments();
    let conds: Vec<CondVector> = if segs.is_empty() {
        Vec::new()
    } else {
        batch
            .iter()
            .map(|&row| {
                let pos = r.random_range(0..segs.len());
                CondVector {
                    segment: segs[pos],
                    category: prep.categories[pos][row] as usize,
                }
            })
            .collect()
    };
    let l = batch.len();
    let cond = if conds.is_empty() {
        Tensor::zeros(l, 0)
    } else {
        cond_tensor(&conds, prep.layout)?
    };
    let real = prep.encoded.select_rows(&batch);
    let noise = normal_tensor(l, state.generator.noise_dim, r);
    let fake = state.generator.generate(noise, cond.clone(), config.tau, r)?;
    let u: Vec<f64> = (0..l).map(|_| r.random::<f64>()).collect();
    let interp = interpolate(&real, &fake, &u)?;
    let critic = &state.critic;
    let mut totals = (0.0, 0.0, 0.0);
    let grads = per_example_grads(&critic.params, l, |g, vars, i| {
        let one = [i];
        let loss = critic_loss(
            g,
            critic,
            vars,
            &real.select_rows(&one),
            &fake.select_rows(&one),
            &interp.select_rows(&one),
            &cond.select_rows(&one),
            config.gp_weight,
        )?;
        totals.0 += g.value(loss.loss).data()[0];
        totals.1 += loss.wasserstein;
        totals.2 += loss.penalty;
        Ok(loss.loss)
    })?;
    let clipped: Vec<_> = grads.into_iter().map(|g| clip_per_example(g, clip)).collect();
    for c in &clipped {
        let norm = c.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= clip * (1.0 + 1e-12), "clipped norm {norm} exceeds {clip}");
    }
    let noisy = aggregate_noisy(&clipped, clip, sigma, r.random())?;
    state.critic_opt.step(&mut state.critic.params, &noisy)?;
    let lf = l as f64;
    Ok((totals.0 / lf, totals.1 / lf, totals.2 / lf))
}

fn generator_step(state: &mut TrainState, prep: &Prepared, config: &TrainingConfig, r: &mut Rng) -> Result<(f64, f64)> {
    let (g, gvars, loss) = generator_graph(state, prep.layout, &prep.targets, config, r)?;
    let flat = g.backward(loss.loss)?.flatten(&gvars);
    state.generator_opt.step(&mut state.generator.params, &flat)?;
    Ok((g.value(loss.loss).data()[0], loss.rule_penalty))
}

/// The generator objective for one step. It reads noise, conditions drawn
/// from the stored law and the critic; never real rows.
fn generator_graph(
    state: &TrainState,
    layout: &RowEncodingLayout,
    targets: &[EnforcedAssignment],
    config: &TrainingConfig,
    r: &mut Rng,
) -> Result<(Graph, ParamVars, GeneratorLoss)> {
    let b = config.batch_size;
    let conds: Vec<CondVector> = (0..b).filter_map(|_| state.cond_law.sample(r)).collect();
    let cond = if conds.is_empty() {
        Tensor::zeros(b, 0)
    } else {
        cond_tensor(&conds, layout)?
    };
    let row_targets: Vec<&EnforcedAssignment> = conds
        .iter()
        .map(|c| &targets[layout.cond_index(c.segment, c.category).expect("selectable")])
        .collect();
    let noise = normal_tensor(b, state.generator.noise_dim, r);
    let mut g = Graph::new();
    let gvars = g.params(&state.generator.params);
    let cvars = g.params(&state.critic.params);
    let z = g.input("noise", noise);
    let c = g.input("cond", cond);
    let out = state.generator.forward(&mut g, &gvars, z, c, config.tau, r)?;
    let loss = generator_loss(
        &mut g,
        &state.critic,
        &cvars,
        &out,
        c,
        &row_targets,
        layout.segments(),
        config.rule_weight,
    )?;
    Ok((g, gvars, loss))
}

/// Input labels of the graph a generator update is built from.
pub fn generator_graph_inputs(
    state: &TrainState,
    layout: &RowEncodingLayout,
    kb: &KnowledgeBase,
    config: &TrainingConfig,
    seed: u64,
) -> Result<Vec<&'static str>> {
    let targets = target_table(kb, layout)?;
    let (g, _, _) = generator_graph(state, layout, &targets, config, &mut rng::rng(seed))?;
    Ok(g.input_labels())
}

/// Hard encoded rows from the generator: conditions drawn from the training
/// law, each categorical segment one-hot at its argmax.
pub fn generate_encoded(state: &TrainState, layout: &RowEncodingLayout, n: usize, seed: u64) -> Result<Tensor> {
    let mut r = rng::rng(seed);
    let width = layout.total_width();
    let mut data = Vec::with_capacity(n * width);
    let chunk = 1000;
    let mut done = 0;
    while done < n {
        let m = chunk.min(n - done);
        let conds: Vec<CondVector> = (0..m).filter_map(|_| state.cond_law.sample(&mut r)).collect();
        let cond = if conds.is_empty() {
            Tensor::zeros(m, 0)
        } else {
            cond_tensor(&conds, layout)?
        };
        let noise = normal_tensor(m, state.generator.noise_dim, &mut r);
        let mut soft = state.generator.generate(noise, cond, state.tau, &mut r)?;
        for row in 0..m {
            let v = soft.row_mut(row);
            for s in layout.segments() {
                if s.kind.is_categorical() {
                    let k = crate::encoder::argmax(&v[s.range()]);
                    v[s.range()].fill(0.0);
                    v[s.offset + k] = 1.0;
                }
            }
        }
        data.extend_from_slice(soft.data());
        done += m;
    }
    Ok(Tensor::new(n, width, data)?)
}

/// `n` synthetic rows in the raw (unmasked) vocabulary.
pub fn sample_synthetic(
    state: &TrainState,
    n: usize,
    encoder: &Encoder,
    kb: &KnowledgeBase,
    seed: u64,
) -> Result<DataTable> {
    if n == 0 {
        return Ok(DataTable::empty(kb.raw_schema().clone()));
    }
    let encoded = generate_encoded(state, encoder.layout(), n, rng::substream(seed, "sample.generate"))?;
    encoder.decode_table(&encoded, kb, rng::substream(seed, "sample.decode"))
}

/// Synthetic rows in the masked vocabulary (rule flags dropped).
pub fn sample_masked(state: &TrainState, n: usize, encoder: &Encoder, kb: &KnowledgeBase, seed: u64) -> Result<DataTable> {
    let encoded = generate_encoded(state, encoder.layout(), n, rng::substream(seed, "sample.generate"))?;
    encoder.decode_masked(&encoded, kb)
}
