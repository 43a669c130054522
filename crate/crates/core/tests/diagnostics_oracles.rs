use proptest::prelude::*;
use s2o_core::diagnostics::*;
use s2o_core::diffcore::Rng;

#[test]
fn geometric_sum_and_last_step() {
    let q = mc_action_values(&[1.0, 1.0, 1.0], 0.5);
    assert_eq!(q[0], 1.75);
    assert_eq!(q[2], 1.0);
    let q = mc_action_values(&[0.3, -2.0, 4.5], 0.9);
    assert_eq!(q[2], 4.5);
    assert!(mc_action_values(&[], 0.9).is_empty());
}

#[test]
fn recursion_matches_direct_double_sum() {
    let mut rng = Rng::from_seed(11);
    let rewards: Vec<f64> = (0..250).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let gamma = 0.99;
    let q = mc_action_values(&rewards, gamma);
    for t in 0..rewards.len() {
        let direct: f64 = (t..rewards.len()).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
        assert!((q[t] - direct).abs() < 1e-9, "t={t}");
    }
    // backward recursion with a zero value past the end holds exactly
    for t in 0..rewards.len() {
        let next = if t + 1 < rewards.len() { q[t + 1] } else { 0.0 };
        assert_eq!(q[t], rewards[t] + gamma * next);
    }
}

#[test]
fn truncation_bias_shrinks_toward_the_start() {
    let far = truncation_bias_bound(0, 250, 0.99, 1.0);
    let near = truncation_bias_bound(249, 250, 0.99, 1.0);
    assert!(far < near);
    assert!((near - 0.99 / 0.01).abs() < 1e-9);
}

#[test]
fn perfect_and_offset_critics() {
    let rewards = [0.5, -1.0, 2.0, 0.25];
    let mc = mc_action_values(&rewards, 0.9);
    assert!(q_errors(&mc, &rewards, 0.9).unwrap().iter().all(|&e| e == 0.0));
    let shifted: Vec<f64> = mc.iter().map(|v| v + 1.0).collect();
    for e in q_errors(&shifted, &rewards, 0.9).unwrap() {
        assert!((e - 1.0).abs() < 1e-12);
    }
    assert!(matches!(q_errors(&mc[..3], &rewards, 0.9), Err(DiagError::Length { .. })));
}

#[test]
fn errors_recomputed_from_logged_arrays() {
    let mut rng = Rng::from_seed(5);
    let rewards: Vec<f64> = (0..100).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let q: Vec<f64> = (0..100).map(|_| rng.uniform(-20.0, 20.0)).collect();
    let eps = q_errors(&q, &rewards, 0.99).unwrap();
    for t in 0..100 {
        let mut mc = 0.0;
        let mut g = 1.0;
        for r in &rewards[t..] {
            mc += g * r;
            g *= 0.99;
        }
        assert!((eps[t] - (q[t] - mc)).abs() <= 1e-6 * (1.0 + mc.abs()));
    }
}

#[test]
fn mean_error_is_difference_of_means() {
    // dyadic data keeps every sum exact
    let rewards = [1.0, 0.5, -0.25, 2.0];
    let q = [3.0, 1.5, 0.75, -1.0];
    let mc = mc_action_values(&rewards, 0.5);
    let eps = q_errors(&q, &rewards, 0.5).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert_eq!(mean(&eps), mean(&q) - mean(&mc));
}

#[test]
fn histogram_basics() {
    let h = histogram_series(&[1, 2], &[vec![0.1, 0.25, 0.3], vec![]], 10, (-1.0, 1.0)).unwrap();
    // width 0.2: 0.1 in [0, 0.2), 0.25 and 0.3 in [0.2, 0.4)
    assert_eq!((h.counts[0][5], h.counts[0][6]), (1, 2));
    assert_eq!(h.counts[0].iter().sum::<u64>(), 3);
    assert!(h.counts[1].iter().all(|&c| c == 0));
    assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(h.edges.len(), 11);
    let clamped = histogram_series(&[0], &[vec![-100.0, 100.0, 1.0]], 4, (-1.0, 1.0)).unwrap();
    assert_eq!(clamped.counts[0], vec![1, 0, 0, 2]);
    assert!(histogram_series(&[0], &[vec![]], 0, (-1.0, 1.0)).is_err());
    assert!(histogram_series(&[0], &[vec![]], 3, (1.0, -1.0)).is_err());
    assert_eq!(h.log_counts()[0][6], 2f64.ln_1p());
}

#[test]
fn uniform_draws_fill_bins_evenly() {
    let mut rng = Rng::from_seed(2);
    let draws: Vec<f64> = (0..1000).map(|_| rng.uniform(-50.0, 50.0)).collect();
    let h = histogram_series(&[0], &[draws], 10, (-50.0, 50.0)).unwrap();
    let sigma = (1000.0 * 0.1 * 0.9f64).sqrt();
    for &c in &h.counts[0] {
        assert!((c as f64 - 100.0).abs() <= 4.0 * sigma, "{c}");
    }
}

proptest! {
    #[test]
    fn histogram_counts_all_and_ignores_order(mut v in prop::collection::vec(-80.0f64..80.0, 0..200), seed in 0u64..1000) {
        let a = histogram_series(&[0], &[v.clone()], DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        Rng::from_seed(seed).shuffle(&mut v);
        let b = histogram_series(&[0], &[v.clone()], DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.counts[0].iter().sum::<u64>() as usize, v.len());
    }

    #[test]
    fn mc_recursion_holds(rewards in prop::collection::vec(-5.0f64..5.0, 1..60), gamma in 0.0f64..1.0) {
        let q = mc_action_values(&rewards, gamma);
        let n = rewards.len();
        prop_assert_eq!(q[n - 1], rewards[n - 1]);
        for t in 0..n - 1 {
            prop_assert_eq!(q[t], rewards[t] + gamma * q[t + 1]);
        }
    }
}

#[test]
fn normalized_performance_cases() {
    let single = normalized_performance(&[("a".into(), vec![vec![1.0, 4.0]])]).unwrap();
    assert_eq!(single.arms[0].normalized, 1.0);
    let two = normalized_performance(&[("a".into(), vec![vec![10.0]]), ("b".into(), vec![vec![0.0, 5.0]])]).unwrap();
    assert_eq!(two.arms[0].normalized, 1.0);
    assert_eq!(two.arms[1].normalized, 0.5);
    let seeds = normalized_performance(&[("a".into(), vec![vec![8.0], vec![10.0], vec![12.0]])]).unwrap();
    assert_eq!(seeds.arms[0].mean, 10.0);
    assert!((seeds.arms[0].std_error - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!((seeds.arms[0].normalized_std_error - 0.2 / 3f64.sqrt()).abs() < 1e-12);
    assert!(matches!(normalized_performance(&[]), Err(DiagError::Empty(_))));
    assert!(normalized_performance(&[("a".into(), vec![])]).is_err());
    assert!(normalized_performance(&[("a".into(), vec![vec![]])]).is_err());
}

fn artifacts() -> Artifacts {
    let h = histogram_series(&[1, 2], &[vec![-3.0, 0.0, 0.4], vec![60.0]], DEFAULT_BINS, DEFAULT_RANGE).unwrap();
    let perf = normalized_performance(&[("stable".into(), vec![vec![8.0], vec![12.0]]), ("unstable".into(), vec![vec![2.0]])]).unwrap();
    let curves = vec![
        CurveRow {
            arm: "stable".into(),
            seed: 0,
            episode: 0,
            mean_return: 1.5,
        },
        CurveRow {
            arm: "stable".into(),
            seed: 0,
            episode: 1,
            mean_return: 2.25,
        },
    ];
    Artifacts {
        histogram: Some(h),
        perf: Some(perf),
        curves,
    }
}

#[test]
fn export_is_stable_and_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let a = artifacts();
    export(&a, dir.path()).unwrap();
    let first: Vec<Vec<u8>> = ["qerr_hist.csv", "perf.csv", "curves.csv"]
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect();
    export(&a, dir.path()).unwrap();
    for (f, bytes) in ["qerr_hist.csv", "perf.csv", "curves.csv"].iter().zip(&first) {
        assert_eq!(&std::fs::read(dir.path().join(f)).unwrap(), bytes, "{f}");
    }
    let header = |f: &str| String::from_utf8(std::fs::read(dir.path().join(f)).unwrap()).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("qerr_hist.csv"), "episode,bin_lo,bin_hi,count,log_count");
    assert_eq!(header("perf.csv"), PERF_HEADER);
    assert_eq!(header("curves.csv"), "arm,seed,episode,mean_return");

    let mut rd = csv::Reader::from_path(dir.path().join("qerr_hist.csv")).unwrap();
    let rows: Vec<HistRow> = rd.deserialize().map(|r| r.unwrap()).collect();
    let h = a.histogram.unwrap();
    assert_eq!(rows.len(), 2 * DEFAULT_BINS);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.count, h.counts[i / DEFAULT_BINS][i % DEFAULT_BINS]);
        assert_eq!(r.episode, h.episodes[i / DEFAULT_BINS]);
    }
    assert_eq!(rows[DEFAULT_BINS + DEFAULT_BINS - 1].count, 1, "clamped into the last bin");
    let mut rd = csv::Reader::from_path(dir.path().join("perf.csv")).unwrap();
    let perf: Vec<ArmPerf> = rd.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(perf, a.perf.unwrap().arms);
}

#[test]
fn export_to_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    assert!(export(&artifacts(), &file.join("sub")).is_err());
}

#[test]
fn median_of_magnitudes() {
    assert_eq!(median_abs(&[-3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median_abs(&[-4.0, 1.0]), Some(2.5));
    assert_eq!(median_abs(&[]), None);
}
