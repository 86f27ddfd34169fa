use kgsynth_core::eval::features::align;
use kgsynth_core::eval::metrics::{chi2_column, ks_statistic};
use kgsynth_core::eval::*;
use kgsynth_core::fixture::mini_network;
use kgsynth_core::rng;
use kgsynth_core::schema::{Cell, ColumnSpec, DataTable, TableSchema};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Binary outcome from a known logistic model over one continuous and one
/// three-level feature.
fn logistic_table(n: usize, seed: u64) -> DataTable {
    let schema = TableSchema::new(vec![
        ColumnSpec::continuous("x"),
        ColumnSpec::discrete("g", Some(&["a", "b", "c"])),
        ColumnSpec::discrete("y", Some(&["no", "yes"])),
    ])
    .unwrap();
    let mut r = rng::rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let effect = [0.0, 0.8, -0.6];
    let rows = (0..n)
        .map(|_| {
            let x: f64 = normal.sample(&mut r);
            let g = r.random_range(0..3);
            let p = 1.0 / (1.0 + (-(0.3 + 1.2 * x + effect[g])).exp());
            let y = u32::from(r.random::<f64>() < p);
            vec![Cell::Num((x * 1000.0).round() / 1000.0), Cell::Cat(g as u32), Cell::Cat(y)]
        })
        .collect();
    DataTable::new(schema, rows).unwrap()
}

fn fixture(n: usize, seed: u64) -> DataTable {
    mini_network(n, seed).unwrap().0
}

#[test]
fn pmse_of_an_exact_copy_is_zero() {
    let t = fixture(600, 1);
    let p = pmse_score(&t, &t, 6, 3).unwrap();
    assert!(p.pmse <= 0.01);
    assert_eq!(p.pmse, 0.0);
    assert!((p.c - 0.5).abs() < 1e-12);
}

#[test]
fn pmse_of_disjoint_supports_is_the_maximum() {
    let schema = TableSchema::new(vec![ColumnSpec::continuous("v")]).unwrap();
    let make = |offset: f64| {
        DataTable::new(schema.clone(), (0..200).map(|i| vec![Cell::Num(offset + i as f64 / 200.0)]).collect()).unwrap()
    };
    let p = pmse_score(&make(0.0), &make(10.0), 6, 1).unwrap();
    // (1 − c)·c² + c·(1 − c)² at c = 0.5.
    assert!((p.pmse - 0.25).abs() < 1e-12);
    assert!(p.pmse_ratio > 1.0);
}

#[test]
fn pmse_stays_within_its_bound() {
    let a = fixture(400, 2);
    let b = fixture(250, 3);
    let p = pmse_score(&a, &b, 6, 1).unwrap();
    let c = p.c;
    assert!(p.pmse >= 0.0 && p.pmse <= c * c + (1.0 - c) * (1.0 - c));
    assert!(p.pmse <= c.max(1.0 - c).powi(2));
}

#[test]
fn chi2_identities() {
    let t = fixture(1000, 4);
    let (p, cols) = chi2_avg_p(&t, &t).unwrap();
    assert_eq!(p, 1.0);
    assert!(cols.iter().all(|c| c.statistic == 0.0));

    // Synthetic table without any NTP rows.
    let keep: Vec<usize> = (0..t.row_count()).filter(|&i| t.row(i)[0].cat() != Some(1)).collect();
    let (o, s) = align(&t, &t.select(&keep)).unwrap();
    let test = chi2_column(&o, &s, 0).unwrap();
    assert!(test.p_value < 1e-10, "{test:?}");
}

#[test]
fn zero_expected_categories_are_pooled() {
    let schema = TableSchema::new(vec![ColumnSpec::discrete("c", Some(&["a", "b", "z"]))]).unwrap();
    let table = |counts: [usize; 3]| {
        let rows = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat_n(vec![Cell::Cat(k as u32)], n))
            .collect();
        DataTable::new(schema.clone(), rows).unwrap()
    };
    let t = chi2_column(&table([50, 50, 0]), &table([40, 50, 10]), 0).unwrap();
    // "z" joins "a" (tied smallest bucket, first wins): O = (50, 50), E = (50, 50).
    assert_eq!(t.df, Some(1));
    assert!(t.statistic.abs() < 1e-12);
}

/// Γ(df/2) for integer df, by the factorial and half-integer closed forms.
fn gamma_half(df: usize) -> f64 {
    if df % 2 == 0 {
        (1..df / 2).map(|k| k as f64).product()
    } else {
        let n = (df - 1) / 2;
        let mut g = std::f64::consts::PI.sqrt();
        for k in 0..n {
            g *= k as f64 + 0.5;
        }
        g
    }
}

/// Upper tail Q(df/2, x/2) by Simpson quadrature of the lower incomplete
/// gamma after the substitution t = u².
fn chi2_sf_oracle(x: f64, df: usize) -> f64 {
    let a = df as f64 / 2.0;
    let upper = (x / 2.0).sqrt();
    let f = |u: f64| if u == 0.0 && a == 0.5 { 2.0 } else { 2.0 * u.powf(2.0 * a - 1.0) * (-u * u).exp() };
    let n = 20_000;
    let h = upper / n as f64;
    let mut s = f(0.0) + f(upper);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - s * h / 3.0 / gamma_half(df)
}

#[test]
fn chi2_p_values_match_the_incomplete_gamma_oracle() {
    let xs = [0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0];
    for df in 1..=20 {
        for &x in &xs {
            let got = chi2_sf(x, df);
            let want = chi2_sf_oracle(x, df);
            assert!((got - want).abs() <= 1e-8, "df {df} x {x}: {got} vs {want}");
        }
    }
}

#[test]
fn ks_identities() {
    let t = fixture(500, 5);
    let (p, cols) = ks_avg_p(&t, &t).unwrap();
    assert_eq!(p, 1.0);
    assert_eq!(cols[0].statistic, 0.0);

    let schema = TableSchema::new(vec![ColumnSpec::continuous("v")]).unwrap();
    let mut r = rng::rng(6);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sample = |shift: f64, r: &mut rand_chacha::ChaCha8Rng| {
        let rows = (0..1000).map(|_| vec![Cell::Num(shift + normal.sample(r))]).collect();
        DataTable::new(schema.clone(), rows).unwrap()
    };
    let a = sample(0.0, &mut r);
    let b = sample(10.0, &mut r);
    let (p, cols) = ks_avg_p(&a, &b).unwrap();
    // Direct oracle: the supports do not overlap in practice, so D = 1.
    let va: Vec<f64> = a.rows().iter().map(|r| r[0].num().unwrap()).collect();
    let vb: Vec<f64> = b.rows().iter().map(|r| r[0].num().unwrap()).collect();
    let max_a = va.iter().cloned().fold(f64::MIN, f64::max);
    let min_b = vb.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max_a < min_b);
    assert_eq!(cols[0].statistic, 1.0);
    assert_eq!(ks_statistic(&va, &vb), 1.0);
    assert!(p < 1e-6);
}

#[test]
fn regression_identity_and_values() {
    let t = logistic_table(3000, 7);
    let r = regression_metrics(&t, &t, "y").unwrap();
    assert_eq!(r.coefficients.len(), 4);
    assert!(r.coefficients.iter().all(|c| c.flag.is_none()));
    assert!((r.ci_overlap_mean.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.std_diff_mean.unwrap(), 0.0);
    let slope = &r.coefficients[1];
    assert_eq!(slope.name, "x");
    // The x feature is standardized, so its coefficient is 1.2·sd(x) ≈ 1.2.
    assert!((slope.beta_original.unwrap() - 1.2).abs() < 0.2);

    let other = logistic_table(3000, 8);
    let r2 = regression_metrics(&t, &other, "y").unwrap();
    assert!(r2.ci_overlap_mean.unwrap() < 1.0);
    assert!(r2.std_diff_mean.unwrap() > 0.0);
    assert!(regression_metrics(&t, &t, "x").is_err());
    assert!(regression_metrics(&t, &t, "missing").is_err());
}

#[test]
fn separation_is_flagged_and_excluded() {
    let mut t = logistic_table(400, 9);
    // Level "c" always has outcome "yes" in this copy.
    let rows: Vec<_> = t
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r[1] == Cell::Cat(2) {
                r[2] = Cell::Cat(1);
            }
            r
        })
        .collect();
    t = DataTable::new(t.schema().clone(), rows).unwrap();
    let r = regression_metrics(&t, &t, "y").unwrap();
    let c = r.coefficients.iter().find(|c| c.name == "g=c").unwrap();
    assert!(c.flag.is_some(), "{c:?}");
    assert!(c.ci_overlap.is_none());
}

#[test]
fn identical_training_tables_give_zero_gaps() {
    let t = fixture(600, 10);
    let h = fixture(300, 11);
    let u = classifier_utility(&t, &t, &h, &PredictorSpec::battery(1), "protocol").unwrap();
    assert_eq!(u.classifiers.len(), 6);
    for c in &u.classifiers {
        assert_eq!(c.gap, Some(0.0), "{c:?}");
        assert!(c.accuracy_real.unwrap() > 0.9, "{c:?}");
    }
    assert_eq!(u.mean_gap, Some(0.0));
    assert_eq!(u.std_gap, Some(0.0));
}

#[test]
fn shuffled_labels_cost_accuracy() {
    let t = fixture(800, 12);
    let h = fixture(400, 13);
    let mut labels: Vec<Cell> = t.rows().iter().map(|r| r[0]).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng::rng(3));
    let rows = t
        .rows()
        .iter()
        .zip(labels)
        .map(|(r, l)| {
            let mut r = r.clone();
            r[0] = l;
            r
        })
        .collect();
    let shuffled = DataTable::new(t.schema().clone(), rows).unwrap();
    let u = classifier_utility(&t, &shuffled, &h, &[PredictorSpec::cart(1)], "protocol").unwrap();
    assert!(u.classifiers[0].gap.unwrap() > 0.2, "{u:?}");
}

#[test]
fn single_class_synthetic_training_is_flagged() {
    let t = fixture(300, 14);
    let dns: Vec<usize> = (0..300).filter(|&i| t.row(i)[0].cat() == Some(0)).collect();
    let u = classifier_utility(&t, &t.select(&dns), &t, &[PredictorSpec::cart(1)], "protocol").unwrap();
    assert!(u.classifiers[0].flag.is_some());
    assert_eq!(u.classifiers[0].gap, None);
}

fn flip_categories(t: &DataTable, rate: f64, seed: u64) -> DataTable {
    let mut r = rng::rng(seed);
    let rows = t
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &cell)| match cell {
                    Cell::Cat(k) if r.random::<f64>() < rate => {
                        let n = t.schema().columns[c].categories().len() as u32;
                        Cell::Cat((k + r.random_range(1..n)) % n)
                    }
                    other => other,
                })
                .collect()
        })
        .collect();
    DataTable::new(t.schema().clone(), rows).unwrap()
}

#[test]
fn metrics_degrade_monotonically_with_noise() {
    let t = fixture(800, 15);
    let rates = [0.0, 0.1, 0.3, 0.5];
    let mut chi2_ok = [0; 3];
    let mut pmse_ok = [0; 3];
    for seed in 0..3 {
        let mut chi = Vec::new();
        let mut pm = Vec::new();
        for &rate in &rates {
            let noisy = flip_categories(&t, rate, seed);
            chi.push(chi2_avg_p(&t, &noisy).unwrap().0);
            pm.push(pmse_score(&t, &noisy, 6, seed).unwrap().pmse);
        }
        for k in 0..3 {
            chi2_ok[k] += usize::from(chi[k + 1] <= chi[k]);
            pmse_ok[k] += usize::from(pm[k + 1] >= pm[k]);
        }
    }
    assert!(chi2_ok.iter().all(|&c| c >= 2), "{chi2_ok:?}");
    assert!(pmse_ok.iter().all(|&c| c >= 2), "{pmse_ok:?}");
}

#[test]
fn bootstrap_self_comparison() {
    let t = fixture(1000, 16);
    let mut chi = 0.0;
    let mut ks = 0.0;
    for seed in 0..20 {
        let mut r = rng::rng(seed);
        let idx: Vec<usize> = (0..1000).map(|_| r.random_range(0..1000)).collect();
        let boot = t.select(&idx);
        chi += chi2_avg_p(&t, &boot).unwrap().0;
        ks += ks_avg_p(&t, &boot).unwrap().0;
        if seed < 3 {
            let p = pmse_score(&t, &boot, 6, seed).unwrap();
            // Resampled rows duplicate original ones, which makes them harder
            // to separate than a random relabelling: the ratio falls below 1.
            assert!(p.pmse_ratio <= 2.0, "{p:?}");
        }
    }
    // A bootstrap is a draw from the original's empirical law, so each
    // p-value is close to uniform under the null: its mean sits near 0.5.
    let (chi, ks) = (chi / 20.0, ks / 20.0);
    assert!((0.3..=0.75).contains(&chi), "{chi}");
    assert!((0.3..=0.9).contains(&ks), "{ks}");
}

#[test]
fn membership_inference_sanity() {
    let population = fixture(8000, 17);
    let independent = IndependentSynthesizer(|n: usize, seed: u64| Ok(mini_network(n, seed ^ 0x5eed)?.0));
    let r = membership_inference(&AttackConfig::mia(1000, 1), &independent, &population).unwrap();
    assert!((r.accuracy - 0.5).abs() <= 0.05, "{r:?}");

    let copy = membership_inference(&AttackConfig::mia(1000, 2), &CopySynthesizer, &population).unwrap();
    assert!(copy.accuracy >= 0.9, "{copy:?}");
    assert!(membership_inference(&AttackConfig::mia(5000, 1), &CopySynthesizer, &population).is_err());
}

#[test]
fn attribute_inference_sanity() {
    // protocol → port is deterministic for DNS and NTP; "bucket" is noise.
    let t = fixture(2000, 18);
    let mut r = rng::rng(5);
    let mut schema = t.schema().clone();
    schema.columns.push(ColumnSpec::discrete("bucket", Some(&["u", "v", "w"])));
    let weights = [0.5, 0.3, 0.2];
    let rows = t
        .rows()
        .iter()
        .map(|row| {
            let mut row = row.clone();
            let u: f64 = r.random();
            let k = if u < weights[0] { 0 } else if u < weights[0] + weights[1] { 1 } else { 2 };
            row.push(Cell::Cat(k));
            row
        })
        .collect();
    let t = DataTable::new(schema, rows).unwrap();
    let half: Vec<usize> = (0..1000).collect();
    let rest: Vec<usize> = (1000..2000).collect();
    let (syn, orig) = (t.select(&half), t.select(&rest));
    let spec = PredictorSpec::cart(1);
    let noise = attribute_inference(&syn, &orig, "bucket", &spec).unwrap();
    assert!((noise.accuracy - noise.majority_rate).abs() <= 0.05, "{noise:?}");

    let proto = attribute_inference(&syn, &orig, "protocol", &spec).unwrap();
    assert!(proto.accuracy >= 0.99, "{proto:?}");
    assert!(attribute_inference(&syn, &orig, "bytes", &spec).is_err());
}

#[test]
fn report_round_trips_and_is_deterministic() {
    let t = logistic_table(600, 19);
    let s = logistic_table(600, 20);
    let options = EvalOptions {
        regression: true,
        utility: true,
        aia: true,
        classifiers: vec![PredictorSpec::cart(1), PredictorSpec::logistic_regression(1)],
        target: Some("y".into()),
        sensitive: Some("g".into()),
        ..EvalOptions::default()
    };
    let a = evaluate(&t, &s, None, &options, 4).unwrap();
    let b = evaluate(&t, &s, None, &options, 4).unwrap();
    assert_eq!(a, b);
    let back = EvalReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
    assert!(a.summary().contains("pmse"));
    for p in [a.pmse, a.chi2_avg_p, a.ks_avg_p, a.aia_accuracy].into_iter().flatten() {
        assert!((0.0..=1.0).contains(&p));
    }

    let missing = EvalOptions {
        regression: true,
        ..EvalOptions::default()
    };
    let err = evaluate(&t, &s, None, &missing, 4).unwrap_err().to_string();
    assert!(err.contains("--target"), "{err}");
}
