use detcal::binned::{fit_temperature, TemperatureSearch};
use detcal::synth::{
    convergence_experiment, generate, ground_truth_ce, ground_truth_ce_monte_carlo, logistic, logit,
    temperature_scale, Estimator, ExperimentConfig, SynthConfig, GROUND_TRUTH_ROW,
};

const NS: [usize; 7] = [100, 500, 1000, 3000, 5000, 8000, 10000];

#[test]
fn temperature_scale_closed_forms() {
    assert!((temperature_scale(0.8, 0.5).unwrap() - 0.64 / 0.68).abs() < 1e-15);
    assert_eq!(temperature_scale(0.5, 0.37).unwrap(), 0.5);
    assert!((temperature_scale(0.3, 1.0).unwrap() - 0.3).abs() < 1e-15);
    assert!(temperature_scale(0.0, 1.0).is_err());
    assert!(temperature_scale(1.0, 1.0).is_err());
    assert!(temperature_scale(0.4, 0.0).is_err());
    assert!((logistic(logit(0.123)) - 0.123).abs() < 1e-15);
}

#[test]
fn ground_truth_value_and_monte_carlo_agree() {
    let gt = ground_truth_ce(0.6, 0.6).unwrap();
    assert!((gt - 0.0607).abs() <= 0.002, "{gt}");
    assert_eq!(ground_truth_ce(0.6, 1.0).unwrap(), 0.0);
    for (t1, t2) in [(0.6, 0.6), (1.0, 2.0), (0.4, 0.5)] {
        let exact = ground_truth_ce(t1, t2).unwrap();
        let mc = ground_truth_ce_monte_carlo(t1, t2, 10_000_000, 7).unwrap();
        assert!((exact - mc.mean).abs() <= 3.0 * mc.std_error, "({t1}, {t2}): {exact} vs {mc:?}");
    }
    for t2 in [0.5, 0.6, 2.0] {
        assert!(ground_truth_ce(0.6, t2).unwrap() > 1e-4);
    }
}

#[test]
fn generation_is_deterministic_and_consistent() {
    let cfg = SynthConfig::new(2000, 0.6, 0.6, 42);
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate(&SynthConfig::new(2000, 0.6, 0.6, 43)).unwrap());
    for s in &a {
        assert!(s.label == 0.0 || s.label == 1.0);
        // E[Z | s2] = logistic(t2 · logit(s2)).
        assert!((logistic(0.6 * logit(s.score)) - s.true_probability).abs() < 1e-9);
    }
    let rate = a.iter().map(|s| s.label).sum::<f64>() / a.len() as f64;
    assert!((rate - 0.5).abs() < 0.05);
}

#[test]
fn temperature_fit_recovers_the_miscalibration() {
    let data = generate(&SynthConfig::new(20_000, 0.6, 0.6, 1)).unwrap();
    let samples: Vec<_> = data.iter().map(|d| d.threshold_sample()).collect();
    let t = fit_temperature(&samples, &TemperatureSearch::default()).unwrap();
    // Undoing s2 = σ(logit(s1)/0.6) needs σ(logit(s2)/T) with T = 1/0.6.
    assert!((t - 1.0 / 0.6).abs() < 0.1, "{t}");
}

#[test]
fn dece_decreases_with_n_and_detects_miscalibration() {
    let seeds: Vec<u64> = (0..20).collect();
    let run = |t2| {
        let mut cfg = ExperimentConfig::new(NS.to_vec(), seeds.clone(), vec![Estimator::DEce], 0.6, t2);
        cfg.execution = detcal::kde::Execution::Parallel;
        convergence_experiment(&cfg).unwrap()
    };
    let miscal = run(0.6);
    let null = run(1.0);
    let gt = miscal.ground_truth;
    let means: Vec<f64> = NS.iter().map(|&n| miscal.row(n, "dece").unwrap().mean).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    let err = |n| {
        let r = miscal.row(n, "dece").unwrap();
        r.values.iter().map(|v| (v - gt).abs()).sum::<f64>() / r.values.len() as f64
    };
    assert!(err(10000) < err(100));
    for &n in &NS {
        assert!(null.row(n, "dece").unwrap().mean < miscal.row(n, "dece").unwrap().mean);
    }
}

#[test]
fn table_shapes() {
    let empty = convergence_experiment(&ExperimentConfig::new(vec![100, 200], vec![0, 1], vec![], 0.6, 0.6)).unwrap();
    assert_eq!(empty.rows.len(), 2);
    assert!(empty.rows.iter().all(|r| r.estimator == GROUND_TRUTH_ROW));

    let single = convergence_experiment(&ExperimentConfig::new(vec![300], vec![5], Estimator::ALL.to_vec(), 0.6, 0.6)).unwrap();
    assert_eq!(single.rows.len(), 5);
    assert!(single.rows.iter().all(|r| r.ci95 == 0.0));
    assert!(single.to_csv().unwrap().starts_with("n,estimator,mean,ci95\n"));
    let json: serde_json::Value = serde_json::from_str(&single.to_json().unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);

    assert!(convergence_experiment(&ExperimentConfig::new(vec![], vec![0], vec![], 0.6, 0.6)).is_err());
}
