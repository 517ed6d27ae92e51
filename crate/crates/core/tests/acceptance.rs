//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion is
//! reported even when an earlier one fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use detcal::binned::{d_det, d_ece, la_ece, BinningConfig};
use detcal::cli;
use detcal::kde::{
    conditional_expectation, estimate_ce, estimate_ce_gradient, select_bandwidth, CalibrationSample, Execution,
    KdeConfig,
};
use detcal::report::CalibrationReport;
use detcal::synth::{
    convergence_experiment, generate, ground_truth_ce, Estimator, ExperimentConfig, SynthConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

// Tolerances.
const GROUND_TRUTH: f64 = 0.0607;
const GROUND_TRUTH_TOL: f64 = 0.002;
const KDE_TOL: f64 = 0.008;
const DECE_TARGET: f64 = 0.0636;
const DECE_TOL: f64 = 0.008;
const BENCHMARK_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;
const NULL_CEILING: f64 = 0.02;
const GOLDEN_TOL: f64 = 1e-10;
const PERF_SAMPLES: usize = 50_000;
const PERF_BUDGET: Duration = Duration::from_secs(10);
const PERF_THREADS: usize = 8;
const PERF_SPEEDUP: f64 = 3.0;
const PARALLEL_TOL: f64 = 1e-10;

const CONSISTENCY_NS: [usize; 7] = [100, 500, 1000, 3000, 5000, 8000, 10000];
const CONSISTENCY_SEEDS: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: u32, title: &str, started: Instant, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id}: {verdict} - {title} ({:.1}s): {}",
        started.elapsed().as_secs_f64(),
        o.detail
    );
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("detcal").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn csv_value(csv: &str, estimator: &str) -> Option<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f.get(1) == Some(&estimator))
        .and_then(|f| f.get(2)?.parse().ok())
}

/// Synthetic benchmark at n = 10000 through the CLI.
fn benchmark() -> Outcome {
    let start = Instant::now();
    let (code, out, err) = run_cli(&[
        "synth",
        "--n",
        "10000",
        "--t1",
        "0.6",
        "--t2",
        "0.6",
        "--seeds",
        "5",
        "--estimators",
        "kde_threshold,dece",
    ]);
    let elapsed = start.elapsed();
    if code != 0 {
        return outcome(false, format!("synth exited with {code}: {err}"));
    }
    let (Some(gt), Some(kde), Some(dece)) = (
        csv_value(&out, "ground_truth"),
        csv_value(&out, "kde_threshold"),
        csv_value(&out, "dece"),
    ) else {
        return outcome(false, format!("unexpected table:\n{out}"));
    };
    let pass = (gt - GROUND_TRUTH).abs() <= GROUND_TRUTH_TOL
        && (kde - gt).abs() <= KDE_TOL
        && (dece - DECE_TARGET).abs() <= DECE_TOL
        && elapsed <= BENCHMARK_BUDGET;
    outcome(
        pass,
        format!(
            "ground truth {gt:.5} (target {GROUND_TRUTH}±{GROUND_TRUTH_TOL}), KDE mean {kde:.5} \
             (|Δ| {:.5} ≤ {KDE_TOL}), D-ECE mean {dece:.5} (target {DECE_TARGET}±{DECE_TOL}), \
             runtime {:.1}s ≤ {}s",
            (kde - gt).abs(),
            elapsed.as_secs_f64(),
            BENCHMARK_BUDGET.as_secs()
        ),
    )
}

fn consistency_table(t2: f64, ns: &[usize]) -> detcal::synth::ConvergenceTable {
    let mut cfg = ExperimentConfig::new(
        ns.to_vec(),
        (0..CONSISTENCY_SEEDS).collect(),
        vec![Estimator::KdeThreshold, Estimator::DEce],
        0.6,
        t2,
    );
    cfg.execution = Execution::Parallel;
    convergence_experiment(&cfg).expect("experiment runs")
}

fn mean_abs_error(table: &detcal::synth::ConvergenceTable, n: usize, estimator: &str) -> f64 {
    let row = table.row(n, estimator).expect("row present");
    row.values.iter().map(|v| (v - table.ground_truth).abs()).sum::<f64>() / row.values.len() as f64
}

fn consistency(table: &detcal::synth::ConvergenceTable) -> Outcome {
    let err_small = mean_abs_error(table, 100, "kde_threshold");
    let err_large = mean_abs_error(table, 10000, "kde_threshold");
    let cis: Vec<f64> = CONSISTENCY_NS
        .iter()
        .map(|&n| table.row(n, "kde_threshold").unwrap().ci95)
        .collect();
    let shrinking = cis.windows(2).all(|w| w[1] <= w[0]);
    let dece_small = mean_abs_error(table, 100, "dece");
    let dece_large = mean_abs_error(table, 10000, "dece");
    let ci_text: Vec<String> = cis.iter().map(|c| format!("{c:.5}")).collect();
    outcome(
        err_large < err_small && shrinking,
        format!(
            "KDE mean |err| {err_small:.4} at n=100 → {err_large:.4} at n=10000; CI half-widths [{}] \
             {}; D-ECE mean |err| {dece_small:.4} → {dece_large:.4}",
            ci_text.join(", "),
            if shrinking { "non-increasing" } else { "NOT monotone" }
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut worst = [0.0f64; 4];
    for set in common::random_sets(200, 2024, 20) {
        let cfg = KdeConfig::new(set.bandwidth);
        let ce = estimate_ce(&set.samples, &cfg).unwrap().value;
        worst[0] = worst[0].max((ce - common::estimate_ce(&set.samples, set.bandwidth)).abs());
        for q in [0.0, 0.1, 0.35, 0.5, 0.9, 1.0] {
            let got = conditional_expectation(&set.samples, q, &cfg).unwrap();
            let want = common::conditional_expectation(&set.samples, q, set.bandwidth);
            worst[1] = worst[1].max((got - want).abs());
        }
        let binary: Vec<CalibrationSample> = set
            .samples
            .iter()
            .map(|s| CalibrationSample::new(s.score, f64::from(s.correctness >= 0.5)))
            .collect();
        let got = d_ece(&binary, &BinningConfig::dece()).unwrap();
        worst[2] = worst[2].max((got - common::d_ece(&binary, 20)).abs());
        let got = la_ece(&set.matched, &[], &BinningConfig::laece()).unwrap();
        worst[3] = worst[3].max((got - common::la_ece(&set.matched, 25)).abs());
    }
    outcome(
        worst.iter().all(|&e| e <= ORACLE_TOL),
        format!(
            "200 sets, max |Δ|: estimate_ce {:.1e}, conditional_expectation {:.1e}, d_ece {:.1e}, la_ece {:.1e} \
             (≤ {ORACLE_TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// A w = 64 set whose every leave-one-out gap is at least `KINK_MARGIN` from zero.
fn gradient_set(rng: &mut ChaCha8Rng, identity: bool) -> (Vec<f64>, Vec<f64>, f64) {
    loop {
        let b = 10f64.powf(rng.random_range(-1.5..-0.3));
        let scores: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..0.99)).collect();
        let z: Vec<f64> = (0..64)
            .map(|_| {
                let hit = rng.random_bool(0.6);
                match (identity, hit) {
                    (true, true) => rng.random_range(0.5..1.0),
                    (_, false) => 0.0,
                    (false, true) => 1.0,
                }
            })
            .collect();
        let samples: Vec<_> = scores.iter().zip(&z).map(|(&s, &z)| CalibrationSample::new(s, z)).collect();
        let clear = (0..64).all(|v| {
            let others: Vec<_> = (0..64).filter(|&u| u != v).map(|u| samples[u]).collect();
            (common::conditional_expectation(&others, scores[v], b) - scores[v]).abs() >= KINK_MARGIN
        });
        if clear {
            return (scores, z, b);
        }
    }
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = [0.0f64; 2];
    for (k, identity) in [true, false].into_iter().enumerate() {
        for _ in 0..100 {
            let (scores, z, b) = gradient_set(&mut rng, identity);
            let ce = |s: &[f64]| {
                let samples: Vec<_> = s.iter().zip(&z).map(|(&s, &z)| CalibrationSample::new(s, z)).collect();
                estimate_ce(&samples, &KdeConfig::new(b)).unwrap().value
            };
            let samples: Vec<_> = scores.iter().zip(&z).map(|(&s, &z)| CalibrationSample::new(s, z)).collect();
            let grad = estimate_ce_gradient(&samples, &KdeConfig::new(b)).unwrap().gradient;
            for (i, &a) in grad.iter().enumerate() {
                let fd = common::central_difference(&scores, i, FD_STEP, ce);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst[k] = worst[k].max(rel);
            }
        }
    }
    outcome(
        worst.iter().all(|&e| e <= FD_REL_TOL),
        format!(
            "max relative error: identity {:.1e}, threshold {:.1e} (≤ {FD_REL_TOL:.0e}, h = {FD_STEP:.0e})",
            worst[0], worst[1]
        ),
    )
}

/// The KDE estimate with continuous correctness stays below the mean absolute
/// score–correctness gap.
fn upper_bound_probe() -> Outcome {
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..20 {
        let data = generate(&SynthConfig::new(5000, 0.6, 0.6, seed).with_iou_concentration(20.0)).unwrap();
        let samples: Vec<_> = data.iter().map(|d| d.identity_sample()).collect();
        let matched: Vec<_> = data.iter().map(|d| d.matched_sample()).collect();
        let b = select_bandwidth(&samples, &KdeConfig::new(1.0)).unwrap();
        let ce = estimate_ce(&samples, &KdeConfig::new(b)).unwrap().value;
        let det = d_det(&matched).unwrap();
        let gaps: Vec<f64> = matched.iter().map(|m| (m.similarity - m.score).abs()).collect();
        let n = gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - det).powi(2)).sum::<f64>() / (n - 1.0);
        let bound = det + 2.0 * (var / n).sqrt();
        if ce > bound {
            violations += 1;
        }
        worst_margin = worst_margin.min(bound - ce);
    }
    outcome(
        violations == 0,
        format!("20 runs, {violations} violations of CE ≤ d_det + 2·SE; smallest margin {worst_margin:.4}"),
    )
}

fn null_calibration(miscalibrated: &detcal::synth::ConvergenceTable) -> Outcome {
    let null = consistency_table(1.0, &[10000]);
    let null_mean = null.row(10000, "kde_threshold").unwrap().mean;
    let miscal_mean = miscalibrated.row(10000, "kde_threshold").unwrap().mean;
    outcome(
        null_mean <= NULL_CEILING && null_mean < miscal_mean,
        format!("t2 = 1 mean {null_mean:.5} (≤ {NULL_CEILING}); t2 = 0.6 mean {miscal_mean:.5}"),
    )
}

fn golden() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("golden.json")).unwrap()).unwrap();
    let snapshot = std::fs::read_to_string(dir.join("report_sequential.json")).unwrap();
    let det = dir.join("detections.json");
    let gt = dir.join("ground_truth.json");
    let bandwidth = expected["settings"]["bandwidth"].as_f64().unwrap().to_string();
    let args = [
        "evaluate",
        "--detections",
        det.to_str().unwrap(),
        "--ground-truth",
        gt.to_str().unwrap(),
        "--link",
        "threshold:0.5",
        "--bandwidth",
        &bandwidth,
        "--sequential",
        "--no-timestamp",
    ];
    let (code, first, err) = run_cli(&args);
    let (_, second, _) = run_cli(&args);
    if code != 0 {
        return outcome(false, format!("evaluate exited with {code}: {err}"));
    }
    let report = CalibrationReport::from_json(&first).unwrap();
    let mut problems = Vec::new();
    for name in ["CE_50", "D-ECE_50", "LaECE"] {
        let want = expected[name].as_f64().unwrap();
        match report.value(name) {
            Some(got) if (got - want).abs() <= GOLDEN_TOL => {}
            got => problems.push(format!("{name} = {got:?}, expected {want}")),
        }
    }
    if report.samples as u64 != expected["samples"].as_u64().unwrap() {
        problems.push(format!("{} samples, expected {}", report.samples, expected["samples"]));
    }
    if first != second {
        problems.push("two sequential runs differ".into());
    }
    if first != snapshot {
        problems.push("output differs from the committed report".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "CE_50 {}, D-ECE_50 {}, LaECE {}, {} samples; byte-identical to the committed report",
            report.value("CE_50").unwrap(),
            report.value("D-ECE_50").unwrap(),
            report.value("LaECE").unwrap(),
            report.samples
        )
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn performance() -> Outcome {
    let data = generate(&SynthConfig::new(PERF_SAMPLES, 0.6, 0.6, 0)).unwrap();
    let samples: Vec<_> = data.iter().map(|d| d.threshold_sample()).collect();
    // The widest bandwidth on the default grid: no kernel term is truncated.
    let b = 0.5;

    let start = Instant::now();
    let sequential = estimate_ce(&samples, &KdeConfig::new(b)).unwrap().value;
    let t_seq = start.elapsed();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(PERF_THREADS).build().unwrap();
    let start = Instant::now();
    let parallel = pool.install(|| {
        estimate_ce(&samples, &KdeConfig::new(b).with_execution(Execution::Parallel))
            .unwrap()
            .value
    });
    let t_par = start.elapsed();

    let speedup = t_seq.as_secs_f64() / t_par.as_secs_f64();
    let diff = (sequential - parallel).abs();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    outcome(
        t_seq <= PERF_BUDGET && speedup >= PERF_SPEEDUP && diff <= PARALLEL_TOL,
        format!(
            "w = {PERF_SAMPLES}, b = {b}: single-threaded {:.2}s (≤ {}s); {PERF_THREADS} threads {:.2}s, \
             speedup {speedup:.2}× (≥ {PERF_SPEEDUP}×, {cores} hardware thread(s) available); \
             |parallel − sequential| {diff:.1e} (≤ {PARALLEL_TOL:.0e})",
            t_seq.as_secs_f64(),
            PERF_BUDGET.as_secs(),
            t_par.as_secs_f64()
        ),
    )
}

fn main() {
    let truth = ground_truth_ce(0.6, 0.6).unwrap();
    println!("acceptance suite (ground truth CE for t1 = t2 = 0.6: {truth:.6})");
    let mut all_pass = true;
    let mut record = |id: u32, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        report(id, title, start, &o);
        all_pass &= o.pass;
    };

    record(1, "synthetic benchmark at n = 10000", &mut benchmark);
    let mut table = None;
    record(2, "consistency over n", &mut || {
        let t = table.insert(consistency_table(0.6, &CONSISTENCY_NS));
        consistency(t)
    });
    let table = table.expect("criterion 2 ran");
    record(3, "equivalence with reference implementations", &mut oracle_equivalence);
    record(4, "gradient against finite differences", &mut gradient_check);
    record(5, "continuous-correctness estimate bounded by d_det", &mut upper_bound_probe);
    record(6, "perfectly calibrated null", &mut || null_calibration(&table));
    record(7, "fixture golden report", &mut golden);
    record(8, "performance and parallel agreement", &mut performance);

    if !all_pass {
        std::process::exit(1);
    }
}
