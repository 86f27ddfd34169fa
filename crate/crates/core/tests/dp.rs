use kgsynth_core::dp::*;
use proptest::prelude::*;

/// Empirical per-coordinate variance of the noise around the clipped mean.
fn noise_variance(clipped: &[ClippedGradient], c: f64, sigma: f64, draws: u64) -> Vec<f64> {
    let l = clipped.len() as f64;
    let dim = clipped[0].vector.len();
    let mean: Vec<f64> = (0..dim).map(|j| clipped.iter().map(|g| g.vector[j]).sum::<f64>() / l).collect();
    let mut s1 = vec![0.0; dim];
    let mut s2 = vec![0.0; dim];
    for seed in 0..draws {
        let out = aggregate_noisy(clipped, c, sigma, seed).unwrap();
        for j in 0..dim {
            let e = out[j] - mean[j];
            s1[j] += e;
            s2[j] += e * e;
        }
    }
    let n = draws as f64;
    (0..dim).map(|j| (s2[j] - s1[j] * s1[j] / n) / (n - 1.0)).collect()
}

#[test]
fn noise_variance_matches_sigma_c_over_l() {
    let grads = [vec![3.0, -4.0, 0.5], vec![0.1, 0.2, 0.3], vec![10.0, 0.0, -10.0], vec![0.0, 0.0, 0.0]];
    for (c, sigma) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.7)] {
        let clipped: Vec<_> = grads.iter().map(|g| clip_per_example(g.clone(), c)).collect();
        let expected = (sigma * c / clipped.len() as f64).powi(2);
        for v in noise_variance(&clipped, c, sigma, 10_000) {
            assert!((v / expected - 1.0).abs() <= 0.05, "C {c} σ {sigma}: {v} vs {expected}");
        }
    }
}

#[test]
fn larger_delta_never_raises_epsilon() {
    let mut s = AccountantState::default();
    let per = s.step_rdp(0.01, 1.0).unwrap();
    s.compose(&per, 500);
    let mut last = f64::INFINITY;
    for delta in [1e-9, 1e-7, 1e-5, 1e-3, 0.1] {
        let e = report_epsilon(&s, delta).unwrap().epsilon;
        assert!(e <= last);
        last = e;
    }
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_bound(
        g in prop::collection::vec(-1e6f64..1e6, 1..50),
        c in 1e-3f64..100.0,
    ) {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let out = clip_per_example(g.clone(), c);
        let clipped = out.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(clipped <= c * (1.0 + 1e-12));
        prop_assert!((out.original_norm - norm).abs() <= 1e-9 * norm.max(1.0));
        if norm <= c {
            prop_assert_eq!(out.vector, g);
        } else {
            // Direction is kept.
            for (a, b) in out.vector.iter().zip(&g) {
                prop_assert!((a - b * c / norm).abs() <= 1e-9 * c);
            }
        }
    }

    #[test]
    fn accumulated_rdp_is_nondecreasing(q in 0.0f64..1.0, sigma in 0.3f64..5.0, steps in 1u64..5) {
        let mut s = AccountantState::default();
        let mut prev = s.rdp.clone();
        for _ in 0..steps {
            s.step(q, sigma).unwrap();
            for (a, b) in s.rdp.iter().zip(&prev) {
                prop_assert!(*a >= *b && *a >= 0.0);
            }
            prev = s.rdp.clone();
        }
    }
}
