//! Synthetic miscalibration benchmark with a known calibration error.
//!
//! Uniform draws `u` are sharpened by temperature `t1` into true
//! probabilities `s1`, labels are drawn as `Bernoulli(s1)` (perfectly
//! calibrated), and the reported score `s2` applies a second temperature
//! `t2`. Then `E[Z | s2] = s1` and the true calibration error is
//! `∫₀¹ |s1(u) − s2(u)| du`.
//!
//! Randomness comes from ChaCha8 seeded with the config seed; uniforms use
//! stream 0, Bernoulli draws stream 1 and the optional IoU noise stream 2, so
//! one draw sequence never shifts another.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binned::{d_ece, la_ece, BinningConfig};
use crate::error::{Error, Result};
use crate::kde::{estimate_ce, select_bandwidth, CalibrationSample, Execution, KdeConfig};
use crate::matching::{ImageId, MatchedSample, SizeClass};

const STREAM_UNIFORM: u64 = 0;
const STREAM_LABEL: u64 = 1;
const STREAM_IOU: u64 = 2;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `logistic(logit(s) / t)`.
pub fn temperature_scale(s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfRange(format!(
            "temperature scaling needs a score in (0, 1), got {s}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config(format!("temperature {t} must be positive")));
    }
    Ok(logistic(logit(s) / t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
    pub seed: u64,
    /// When set, the identity-link correctness is drawn from
    /// `Beta(κ s1, κ (1 − s1))` instead of being `s1` itself.
    pub iou_concentration: Option<f64>,
}

impl SynthConfig {
    pub fn new(n: usize, t1: f64, t2: f64, seed: u64) -> Self {
        Self {
            n,
            t1,
            t2,
            seed,
            iou_concentration: None,
        }
    }

    pub fn with_iou_concentration(mut self, kappa: f64) -> Self {
        self.iou_concentration = Some(kappa);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("n = {} must be at least 2", self.n)));
        }
        for (name, t) in [("t1", self.t1), ("t2", self.t2)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("{name} = {t} must be positive")));
            }
        }
        if let Some(k) = self.iou_concentration {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config(format!("IoU concentration {k} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    /// Reported (miscalibrated) score `s2`.
    pub score: f64,
    /// Binary correctness, the stand-in for `1[IoU >= β]`.
    pub label: f64,
    /// `s1 = E[label | score]`.
    pub true_probability: f64,
    /// Continuous correctness with conditional mean `s1`.
    pub iou: f64,
}

impl SyntheticSample {
    pub fn threshold_sample(&self) -> CalibrationSample {
        CalibrationSample::new(self.score, self.label)
    }

    pub fn identity_sample(&self) -> CalibrationSample {
        CalibrationSample::new(self.score, self.iou)
    }

    /// A single-class matched detection whose similarity is the identity-link
    /// correctness, for LaECE and `d_det`.
    pub fn matched_sample(&self) -> MatchedSample {
        MatchedSample {
            image_id: ImageId::Int(0),
            category_id: 1,
            score: self.score,
            similarity: self.iou,
            correctness: self.iou,
            matched: true,
            size_class: SizeClass::Large,
            gt_index: None,
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let mut uniforms = stream(cfg.seed, STREAM_UNIFORM);
    let mut labels = stream(cfg.seed, STREAM_LABEL);
    let mut noise = stream(cfg.seed, STREAM_IOU);
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let u: f64 = Open01.sample(&mut uniforms);
        let s1 = temperature_scale(u, cfg.t1)?;
        let label = if labels.random::<f64>() < s1 { 1.0 } else { 0.0 };
        let s2 = temperature_scale(s1, cfg.t2)?;
        let iou = match cfg.iou_concentration {
            None => s1,
            Some(k) => {
                let beta = Beta::new(k * s1, k * (1.0 - s1))
                    .map_err(|e| Error::config(format!("IoU noise: {e}")))?;
                beta.sample(&mut noise)
            }
        };
        out.push(SyntheticSample {
            score: s2,
            label,
            true_probability: s1,
            iou,
        });
    }
    Ok(out)
}

/// `|s1(u) − s2(u)|` for the two-temperature process.
fn gap(u: f64, t1: f64, t2: f64) -> f64 {
    let z1 = logit(u) / t1;
    (logistic(z1) - logistic(z1 / t2)).abs()
}

/// True calibration error `∫₀¹ |s1(u) − s2(u)| du`, by adaptive
/// Gauss–Kronrod quadrature split at the kink `u = 1/2`.
pub fn ground_truth_ce(t1: f64, t2: f64) -> Result<f64> {
    for (name, t) in [("t1", t1), ("t2", t2)] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config(format!("{name} = {t} must be positive")));
        }
    }
    let f = |u: f64| gap(u, t1, t2);
    let tol = 1e-10;
    Ok(adaptive_gauss_kronrod(&f, 0.0, 0.5, tol)? + adaptive_gauss_kronrod(&f, 0.5, 1.0, tol)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo counterpart of [`ground_truth_ce`].
pub fn ground_truth_ce_monte_carlo(
    t1: f64,
    t2: f64,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if draws < 2 {
        return Err(Error::config("Monte Carlo needs at least two draws"));
    }
    let mut rng = stream(seed, STREAM_UNIFORM);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let u: f64 = Open01.sample(&mut rng);
        let g = gap(u, t1, t2);
        sum += g;
        sum_sq += g * g;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
/// Gauss weights of the embedded 7-point rule, on the odd Kronrod nodes.
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let pair = f(center - dx) + f(center + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

fn adaptive_gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut pending = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut evaluations = 0usize;
    while let Some((lo, hi, eps)) = pending.pop() {
        let (value, err) = gauss_kronrod_15(f, lo, hi);
        evaluations += 1;
        if err <= eps || hi - lo < 1e-12 {
            total += value;
        } else if evaluations > 100_000 {
            return Err(Error::config("adaptive quadrature did not converge"));
        } else {
            let mid = 0.5 * (lo + hi);
            pending.push((mid, hi, 0.5 * eps));
            pending.push((lo, mid, 0.5 * eps));
        }
    }
    Ok(total)
}

/// Estimators compared in [`convergence_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// KDE estimator on binary labels.
    #[serde(rename = "kde_threshold")]
    KdeThreshold,
    /// KDE estimator on the continuous identity-link correctness.
    #[serde(rename = "kde_identity")]
    KdeIdentity,
    /// D-ECE, 20 bins.
    #[serde(rename = "dece")]
    DEce,
    /// LaECE, 25 bins, single class.
    #[serde(rename = "laece")]
    LaEce,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::KdeThreshold,
        Estimator::KdeIdentity,
        Estimator::DEce,
        Estimator::LaEce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::KdeThreshold => "kde_threshold",
            Estimator::KdeIdentity => "kde_identity",
            Estimator::DEce => "dece",
            Estimator::LaEce => "laece",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown estimator '{s}' (expected kde_threshold, kde_identity, dece or laece)"
                ))
            })
    }
}

/// How the KDE bandwidth is chosen in synthetic runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthChoice {
    /// Leave-one-out maximum likelihood on the default grid.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub estimators: Vec<Estimator>,
    pub t1: f64,
    pub t2: f64,
    pub bandwidth: BandwidthChoice,
    pub iou_concentration: Option<f64>,
    /// Parallel runs seeds concurrently; results are identical either way.
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(ns: Vec<usize>, seeds: Vec<u64>, estimators: Vec<Estimator>, t1: f64, t2: f64) -> Self {
        Self {
            ns,
            seeds,
            estimators,
            t1,
            t2,
            bandwidth: BandwidthChoice::Auto,
            iou_concentration: None,
            execution: Execution::Sequential,
        }
    }
}

pub const GROUND_TRUTH_ROW: &str = "ground_truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub estimator: String,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval over seeds.
    pub ci95: f64,
    /// Per-seed values in seed order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub t1: f64,
    pub t2: f64,
    pub ground_truth: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn row(&self, n: usize, estimator: &str) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.n == n && r.estimator == estimator)
    }

    /// CSV with columns `n,estimator,mean,ci95`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse {
            path: "<csv>".into(),
            message: e.to_string(),
        };
        w.write_record(["n", "estimator", "mean", "ci95"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.estimator.clone(),
                r.mean.to_string(),
                r.ci95.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse {
            path: "<csv>".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::config(e.to_string()))?;
        serde_json::to_string_pretty(&value).map_err(|e| Error::config(e.to_string()))
    }
}

/// Mean and 95% normal-approximation half-width; zero width for one value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, 1.96 * (var / k).sqrt())
}

fn evaluate_seed(
    n: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<f64>> {
    let mut synth = SynthConfig::new(n, cfg.t1, cfg.t2, seed);
    synth.iou_concentration = cfg.iou_concentration;
    let data = generate(&synth)?;
    let threshold: Vec<CalibrationSample> = data.iter().map(|d| d.threshold_sample()).collect();
    let needs_kde = cfg
        .estimators
        .iter()
        .any(|e| matches!(e, Estimator::KdeThreshold | Estimator::KdeIdentity));
    let bandwidth = match (needs_kde, cfg.bandwidth) {
        (false, _) => 1.0,
        (true, BandwidthChoice::Fixed(b)) => b,
        (true, BandwidthChoice::Auto) => select_bandwidth(&threshold, &KdeConfig::new(1.0))?,
    };
    let kde = KdeConfig::new(bandwidth);
    cfg.estimators
        .iter()
        .map(|e| match e {
            Estimator::KdeThreshold => Ok(estimate_ce(&threshold, &kde)?.value),
            Estimator::KdeIdentity => {
                let identity: Vec<_> = data.iter().map(|d| d.identity_sample()).collect();
                Ok(estimate_ce(&identity, &kde)?.value)
            }
            Estimator::DEce => d_ece(&threshold, &BinningConfig::dece()),
            Estimator::LaEce => {
                let matched: Vec<_> = data.iter().map(|d| d.matched_sample()).collect();
                la_ece(&matched, &[], &BinningConfig::laece())
            }
        })
        .collect()
}

/// Runs every estimator on fresh synthetic data for each `(n, seed)` and
/// summarizes over seeds. Each `n` gets a ground-truth row (constant in `n`).
pub fn convergence_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceTable> {
    if cfg.ns.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::config("convergence experiment needs at least one n and one seed"));
    }
    let truth = ground_truth_ce(cfg.t1, cfg.t2)?;
    let jobs: Vec<(usize, u64)> = cfg
        .ns
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<Vec<f64>> = if cfg.estimators.is_empty() {
        vec![Vec::new(); jobs.len()]
    } else {
        match cfg.execution {
            Execution::Sequential => jobs
                .iter()
                .map(|&(n, s)| evaluate_seed(n, s, cfg))
                .collect::<Result<_>>()?,
            Execution::Parallel => jobs
                .par_iter()
                .map(|&(n, s)| evaluate_seed(n, s, cfg))
                .collect::<Result<_>>()?,
        }
    };

    let mut rows = Vec::new();
    let k = cfg.seeds.len();
    for (ni, &n) in cfg.ns.iter().enumerate() {
        let per_seed = &results[ni * k..(ni + 1) * k];
        for (ei, e) in cfg.estimators.iter().enumerate() {
            let values: Vec<f64> = per_seed.iter().map(|r| r[ei]).collect();
            let (mean, ci95) = mean_ci95(&values);
            rows.push(ConvergenceRow {
                n,
                estimator: e.name().to_owned(),
                mean,
                ci95,
                values,
            });
        }
        rows.push(ConvergenceRow {
            n,
            estimator: GROUND_TRUTH_ROW.to_owned(),
            mean: truth,
            ci95: 0.0,
            values: vec![truth; k],
        });
    }
    Ok(ConvergenceTable {
        t1: cfg.t1,
        t2: cfg.t2,
        ground_truth: truth,
        rows,
    })
}
