use kgsynth_core::dp::DpConfig;
use kgsynth_core::encoder::*;
use kgsynth_core::fixture::mini_network;
use kgsynth_core::gan::*;
use kgsynth_core::knowledge::{EnforcedAssignment, KnowledgeBase};
use kgsynth_core::rng;
use kgsynth_core::schema::DataTable;
use kgsynth_tensor::{Activation, Graph, Mlp, ParamSet, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn fitted(n: usize, seed: u64) -> (KnowledgeBase, DataTable, Encoder) {
    let (t, rules) = mini_network(n, seed).unwrap();
    let kb = KnowledgeBase::new(rules, t.schema()).unwrap();
    let masked = kb.apply_property_masks(&t).unwrap();
    let enc = Encoder::fit(&masked, &kb, &GmmOptions::default(), seed).unwrap();
    (kb, masked, enc)
}

fn small_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs: 2,
        batch_size: 40,
        n_critic: 2,
        seed,
        network: NetworkConfig {
            noise_dim: 8,
            generator_hidden: vec![16],
            critic_hidden: vec![16],
            leaky_slope: 0.2,
        },
        ..TrainingConfig::default()
    }
}

fn random_tensor(rows: usize, cols: usize, r: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn one_hot_rows(rows: usize, cols: usize, r: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for i in 0..rows {
        t.set(i, r.random_range(0..cols), 1.0);
    }
    t
}

/// Linear critic whose x-part weight vector has the given entries.
fn linear_critic(x_weights: &[f64], cond_width: usize) -> CriticNet {
    let d = x_weights.len();
    let layers = Mlp::from_widths(&[d + cond_width, 1], Activation::Identity, Activation::Identity).unwrap();
    let mut w = x_weights.to_vec();
    w.extend((0..cond_width).map(|i| 0.3 + i as f64));
    let mut params = ParamSet::new();
    params.push("critic.0.weight".into(), Tensor::new(d + cond_width, 1, w).unwrap()).unwrap();
    params.push("critic.0.bias".into(), Tensor::new(1, 1, vec![0.7]).unwrap()).unwrap();
    CriticNet::from_mlp(Mlp { layers, first_param: 0 }, params, d, cond_width).unwrap()
}

fn small_critic(data_width: usize, cond_width: usize, seed: u64) -> CriticNet {
    let layers = Mlp::from_widths(
        &[data_width + cond_width, 6, 5, 1],
        Activation::LeakyRelu(0.2),
        Activation::Identity,
    )
    .unwrap();
    let mut params = ParamSet::new();
    let mlp = Mlp::init("critic", layers, &mut params, &mut rng::rng(seed)).unwrap();
    CriticNet::from_mlp(mlp, params, data_width, cond_width).unwrap()
}

fn penalty_value(critic: &CriticNet, x: &Tensor, cond: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars = g.params(&critic.params);
    let xv = g.input("x", x.clone());
    let c = g.input("cond", cond.clone());
    let gp = critic.gradient_penalty(&mut g, &vars, xv, c).unwrap();
    g.value(gp).data()[0]
}

#[test]
fn linear_critic_penalty_closed_form() {
    let mut r = rng::rng(1);
    let x = random_tensor(7, 3, &mut r);
    let cond = one_hot_rows(7, 2, &mut r);
    let unit = linear_critic(&[0.6, 0.0, 0.8], 2);
    assert!(penalty_value(&unit, &x, &cond).abs() < 1e-10);

    let three = linear_critic(&[1.8, 0.0, 2.4], 2);
    let fake = random_tensor(7, 3, &mut r);
    let interp = interpolate(&x, &fake, &interpolation_weights(7, 3)).unwrap();
    let total = |lambda: f64| {
        let mut g = Graph::new();
        let vars = g.params(&three.params);
        let l = critic_loss(&mut g, &three, &vars, &x, &fake, &interp, &cond, lambda).unwrap();
        (g.value(l.loss).data()[0], l.wasserstein, l.penalty)
    };
    let (with_gp, w, p) = total(10.0);
    assert!((p - 4.0).abs() < 1e-10);
    assert!((with_gp - w - 40.0).abs() < 1e-10);
    // Linearity in λ and the λ = 0 reduction.
    let (without, w0, _) = total(0.0);
    assert!((without - w0).abs() < 1e-12);
    let (doubled, _, _) = total(20.0);
    assert!((doubled - with_gp - 10.0 * p).abs() < 1e-9);
}

#[test]
fn equal_batches_with_unit_gradient_give_zero_loss() {
    let mut r = rng::rng(2);
    let x = random_tensor(5, 4, &mut r);
    let cond = one_hot_rows(5, 3, &mut r);
    let critic = linear_critic(&[0.5, 0.5, 0.5, 0.5], 3);
    let mut g = Graph::new();
    let vars = g.params(&critic.params);
    let l = critic_loss(&mut g, &critic, &vars, &x, &x, &x, &cond, 10.0).unwrap();
    assert!(g.value(l.loss).data()[0].abs() < 1e-10);
}

#[test]
fn penalty_matches_finite_difference_gradient_norm() {
    let mut r = rng::rng(3);
    let (rows, d, c) = (6, 5, 3);
    let x = random_tensor(rows, d, &mut r);
    let cond = one_hot_rows(rows, c, &mut r);
    let critic = small_critic(d, c, 4);
    let h = 1e-6;
    let mut oracle = 0.0;
    for i in 0..rows {
        let mut norm2 = 0.0;
        for j in 0..d {
            let mut plus = x.select_rows(&[i]);
            let mut minus = plus.clone();
            plus.set(0, j, plus.get(0, j) + h);
            minus.set(0, j, minus.get(0, j) - h);
            let ci = cond.select_rows(&[i]);
            let dp = critic.scores(&plus, &ci).unwrap()[0];
            let dm = critic.scores(&minus, &ci).unwrap()[0];
            norm2 += ((dp - dm) / (2.0 * h)).powi(2);
        }
        oracle += (norm2.sqrt() - 1.0).powi(2);
    }
    oracle /= rows as f64;
    let got = penalty_value(&critic, &x, &cond);
    assert!((got - oracle).abs() <= 1e-4 * oracle.abs().max(1e-12), "{got} vs {oracle}");
}

#[test]
fn critic_loss_parameter_gradient_matches_finite_differences() {
    let mut r = rng::rng(5);
    let (rows, d, c) = (4, 4, 2);
    let real = random_tensor(rows, d, &mut r);
    let fake = random_tensor(rows, d, &mut r);
    let cond = one_hot_rows(rows, c, &mut r);
    let interp = interpolate(&real, &fake, &interpolation_weights(rows, 9)).unwrap();
    let critic = small_critic(d, c, 6);
    let eval = |params: &ParamSet| {
        let mut cr = critic.clone();
        cr.params = params.clone();
        let mut g = Graph::new();
        let vars = g.params(&cr.params);
        let l = critic_loss(&mut g, &cr, &vars, &real, &fake, &interp, &cond, 10.0).unwrap();
        g.value(l.loss).data()[0]
    };
    let (_, grad) = value_and_grad(&critic.params, |g, vars| {
        Ok(critic_loss(g, &critic, vars, &real, &fake, &interp, &cond, 10.0)?.loss)
    })
    .unwrap();
    let flat = critic.params.flatten();
    let h = 1e-6;
    for k in 0..flat.len() {
        let mut p = critic.params.clone();
        let mut v = flat.clone();
        v[k] += h;
        p.unflatten(&v).unwrap();
        let up = eval(&p);
        v[k] -= 2.0 * h;
        p.unflatten(&v).unwrap();
        let down = eval(&p);
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(grad[k].abs()).max(1e-3);
        assert!((fd - grad[k]).abs() / scale <= 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
    }
}

#[test]
fn per_example_losses_decompose_the_batch() {
    let mut r = rng::rng(7);
    let (rows, d, c) = (9, 5, 3);
    let real = random_tensor(rows, d, &mut r);
    let fake = random_tensor(rows, d, &mut r);
    let cond = one_hot_rows(rows, c, &mut r);
    let interp = interpolate(&real, &fake, &interpolation_weights(rows, 1)).unwrap();
    let critic = small_critic(d, c, 8);
    let (batch, batch_grad) = value_and_grad(&critic.params, |g, vars| {
        Ok(critic_loss(g, &critic, vars, &real, &fake, &interp, &cond, 10.0)?.loss)
    })
    .unwrap();
    let mut sum = 0.0;
    let grads = per_example_grads(&critic.params, rows, |g, vars, i| {
        let one = [i];
        let l = critic_loss(
            g,
            &critic,
            vars,
            &real.select_rows(&one),
            &fake.select_rows(&one),
            &interp.select_rows(&one),
            &cond.select_rows(&one),
            10.0,
        )?;
        sum += g.value(l.loss).data()[0];
        Ok(l.loss)
    })
    .unwrap();
    assert!((sum / rows as f64 - batch).abs() < 1e-10);
    for k in 0..batch_grad.len() {
        let mean: f64 = grads.iter().map(|g| g[k]).sum::<f64>() / rows as f64;
        assert!((mean - batch_grad[k]).abs() < 1e-10);
    }
}

fn generator_for(enc: &Encoder, seed: u64) -> GeneratorNet {
    let net = NetworkConfig {
        noise_dim: 6,
        generator_hidden: vec![12],
        critic_hidden: vec![12],
        leaky_slope: 0.2,
    };
    GeneratorNet::new(enc.layout(), &net, &mut rng::rng(seed)).unwrap()
}

fn cond_batch(layout: &RowEncodingLayout, rows: usize, r: &mut impl Rng) -> Tensor {
    one_hot_rows(rows, layout.cond_width(), r)
}

#[test]
fn generator_output_is_deterministic_and_tau_zero_is_one_hot() {
    let (_, _, enc) = fitted(300, 1);
    let layout = enc.layout();
    let gen = generator_for(&enc, 2);
    let mut r = rng::rng(3);
    let z = random_tensor(20, 6, &mut r);
    let c = cond_batch(layout, 20, &mut r);
    let a = gen.generate(z.clone(), c.clone(), 0.2, &mut rng::rng(9)).unwrap();
    let b = gen.generate(z.clone(), c.clone(), 0.2, &mut rng::rng(9)).unwrap();
    assert_eq!(a, b);
    // Same Gumbel draws at a vanishing temperature.
    let cold = gen.generate(z, c, 1e-9, &mut rng::rng(9)).unwrap();
    for row in 0..20 {
        for s in layout.segments().iter().filter(|s| s.kind.is_categorical()) {
            let v = &cold.row(row)[s.range()];
            let ones = v.iter().filter(|&&p| (p - 1.0).abs() < 1e-9).count();
            let zeros = v.iter().filter(|&&p| p.abs() < 1e-9).count();
            assert_eq!((ones, zeros), (1, s.width - 1), "{v:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn generator_segments_are_simplices(seed in 0u64..1000, tau in 0.01f64..5.0) {
        let (_, _, enc) = fitted(200, 1);
        let layout = enc.layout();
        let gen = generator_for(&enc, seed);
        let mut r = rng::rng(seed);
        let z = random_tensor(8, 6, &mut r);
        let c = cond_batch(layout, 8, &mut r);
        let out = gen.generate(z, c, tau, &mut r).unwrap();
        for row in 0..8 {
            for s in layout.segments() {
                let v = &out.row(row)[s.range()];
                if s.kind.is_categorical() {
                    prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
                } else if s.kind == SegmentKind::Alpha {
                    prop_assert!(v.iter().all(|&a| a > -1.0 && a < 1.0));
                }
            }
        }
    }

    #[test]
    fn critic_mean_score_is_permutation_invariant(seed in 0u64..1000) {
        let mut r = rng::rng(seed);
        let critic = small_critic(4, 2, seed);
        let x = random_tensor(10, 4, &mut r);
        let c = one_hot_rows(10, 2, &mut r);
        let mut perm: Vec<usize> = (0..10).collect();
        for i in (1..10).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let s = critic.scores(&x, &c).unwrap();
        let sp = critic.scores(&x.select_rows(&perm), &c.select_rows(&perm)).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            prop_assert!((sp[k] - s[p]).abs() < 1e-12);
        }
        let m: f64 = s.iter().sum::<f64>() / 10.0;
        let mp: f64 = sp.iter().sum::<f64>() / 10.0;
        prop_assert!((m - mp).abs() < 1e-12);
    }
}

/// Generator loss over a hand-built output whose categorical log-probabilities
/// are given per row.
fn loss_with_log_probs(log_prob: f64, rule_weight: f64) -> (f64, f64, f64) {
    let (_, _, enc) = fitted(200, 1);
    let layout = enc.layout();
    let rows = 3;
    let seg = layout
        .segments()
        .iter()
        .position(|s| s.kind == SegmentKind::DiscreteOnehot)
        .unwrap();
    let width = layout.segments()[seg].width;
    let critic = small_critic(layout.total_width(), layout.cond_width(), 2);
    let mut r = rng::rng(4);
    let sample = random_tensor(rows, layout.total_width(), &mut r);
    let cond = cond_batch(layout, rows, &mut r);
    // Target category 0 of `seg` has the given log-probability in every row.
    let mut lp = Tensor::filled(rows, width, -5.0);
    for i in 0..rows {
        lp.set(i, 0, log_prob);
    }
    let targets = EnforcedAssignment::new(vec![(seg, 0)]).unwrap();
    let none = EnforcedAssignment::new(vec![]).unwrap();
    // The last row has no targets and must contribute nothing.
    let row_targets = [&targets, &targets, &none];

    let mut g = Graph::new();
    let cvars = g.params(&critic.params);
    let sv = g.input("sample", sample.clone());
    let mut log_probs = vec![None; layout.segments().len()];
    log_probs[seg] = Some(g.input("log_probs", lp));
    let out = GenOutput { sample: sv, log_probs };
    let c = g.input("cond", cond.clone());
    let l = generator_loss(&mut g, &critic, &cvars, &out, c, &row_targets, layout.segments(), rule_weight).unwrap();
    let mean_d = critic.scores(&sample, &cond).unwrap().iter().sum::<f64>() / rows as f64;
    (g.value(l.loss).data()[0], l.rule_penalty, mean_d)
}

#[test]
fn rule_penalty_examples() {
    let (loss, h, mean_d) = loss_with_log_probs(0.0, 10.0);
    assert!(h.abs() < 1e-12);
    assert!((loss + mean_d).abs() < 1e-12);

    // Two of three rows contribute −log e⁻¹ = 1 each.
    let (loss, h, mean_d) = loss_with_log_probs(-1.0, 10.0);
    assert!((h - 2.0 / 3.0).abs() < 1e-12);
    assert!((loss - (-mean_d + 10.0 * h)).abs() < 1e-12);

    let (loss, _, mean_d) = loss_with_log_probs(-1.0, 0.0);
    assert!((loss + mean_d).abs() < 1e-12);
}

#[test]
fn generator_update_never_reads_real_rows() {
    let (kb, masked, enc) = fitted(200, 1);
    let config = small_config(1);
    let state = train(&masked, &kb, &enc, &TrainingConfig { epochs: 0, ..config.clone() }).unwrap();
    let labels = generator_graph_inputs(&state, enc.layout(), &kb, &config, 3).unwrap();
    assert!(labels.contains(&"noise") && labels.contains(&"cond"));
    assert!(!labels.contains(&"real"));
    assert!(!labels.contains(&"interpolate"));
}

#[test]
fn zero_epochs_keep_initial_parameters() {
    let (kb, masked, enc) = fitted(200, 1);
    let config = TrainingConfig { epochs: 0, ..small_config(11) };
    let state = train(&masked, &kb, &enc, &config).unwrap();
    let mut init = rng::rng(rng::substream(11, "train.init"));
    let generator = GeneratorNet::new(enc.layout(), &config.network, &mut init).unwrap();
    let critic = CriticNet::new(enc.layout(), &config.network, &mut init).unwrap();
    assert_eq!(state.generator, generator);
    assert_eq!(state.critic, critic);
    assert_eq!(state.generator_steps, 0);
    assert!(state.history.is_empty());
}

#[test]
fn training_is_deterministic_and_samples_reproducible() {
    let (kb, masked, enc) = fitted(200, 1);
    let config = small_config(5);
    let a = train(&masked, &kb, &enc, &config).unwrap();
    let b = train(&masked, &kb, &enc, &config).unwrap();
    assert_eq!(a.generator.params, b.generator.params);
    assert_eq!(a.critic.params, b.critic.params);
    assert_eq!(a.generator_steps, 2 * 5);
    assert_eq!(a.critic_updates, 2 * 5 * 2);
    assert!(a.dp.is_none());

    let s1 = sample_synthetic(&a, 150, &enc, &kb, 3).unwrap();
    let s2 = sample_synthetic(&a, 150, &enc, &kb, 3).unwrap();
    assert_eq!(s1.row_count(), 150);
    assert_eq!(s1.to_csv_string().unwrap(), s2.to_csv_string().unwrap());
    assert_eq!(s1.schema().names(), kb.raw_schema().names());
    for row in s1.rows() {
        for (cell, spec) in row.iter().zip(&s1.schema().columns) {
            if let Some(cats) = &spec.categories {
                assert!((cell.cat().unwrap() as usize) < cats.len());
            } else {
                assert!(cell.num().unwrap().is_finite());
            }
        }
    }
    assert_eq!(sample_synthetic(&a, 0, &enc, &kb, 3).unwrap().row_count(), 0);

    let encoded = generate_encoded(&a, enc.layout(), 50, 8).unwrap();
    for row in 0..50 {
        for s in enc.layout().segments().iter().filter(|s| s.kind.is_categorical()) {
            let v = &encoded.row(row)[s.range()];
            assert_eq!(v.iter().filter(|&&p| p == 1.0).count(), 1);
            assert_eq!(v.iter().filter(|&&p| p == 0.0).count(), s.width - 1);
        }
    }
}

#[test]
fn dp_training_steps_the_accountant_per_critic_update() {
    let (kb, masked, enc) = fitted(200, 2);
    let config = TrainingConfig {
        dp: Some(DpConfig {
            noise_multiplier: Some(1.1),
            ..DpConfig::default()
        }),
        ..small_config(3)
    };
    let state = train(&masked, &kb, &enc, &config).unwrap();
    let dp = state.dp.as_ref().unwrap();
    assert_eq!(state.status, TrainStatus::Completed);
    assert_eq!(dp.accountant.steps, state.critic_updates as u64);
    assert!((dp.sampling_rate - 0.2).abs() < 1e-12);
    assert!(dp.epsilon > 0.0 && dp.epsilon.is_finite());
    let again = train(&masked, &kb, &enc, &config).unwrap();
    assert_eq!(again.critic.params, state.critic.params);
}

#[test]
fn epsilon_ceiling_halts_training() {
    let (kb, masked, enc) = fitted(200, 2);
    let config = TrainingConfig {
        epochs: 50,
        dp: Some(DpConfig {
            noise_multiplier: Some(0.8),
            epsilon_ceiling: Some(2.0),
            ..DpConfig::default()
        }),
        ..small_config(4)
    };
    let state = train(&masked, &kb, &enc, &config).unwrap();
    let dp = state.dp.as_ref().unwrap();
    assert_eq!(state.status, TrainStatus::BudgetExhausted);
    assert!(dp.epsilon <= 2.0);
    assert_eq!(dp.accountant.steps, state.critic_updates as u64);
    assert!(state.epochs_done < 50);
}
