//! Evaluation reports: calibration error over IoU thresholds and object
//! sizes, D-ECE, LaECE, and score-threshold sweeps.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::binned::{d_ece, la_ece, BinningConfig, DECE_BINS, LAECE_BINS};
use crate::error::{Error, Result};
use crate::geometry::Similarity;
use crate::kde::{estimate_ce, loo_mle_bandwidth, default_bandwidth_grid, CalibrationSample, Execution, KdeConfig, DEFAULT_CLAMP};
use crate::links::LinkSpec;
use crate::matching::{
    match_detections, partition_by_size, CategoryId, Detection, GroundTruthBox, MatchConfig,
    MatchedSample, SizeClass,
};

/// COCO matching thresholds `.50:.05:.95`.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Where KDE bandwidths come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPolicy {
    /// Leave-one-out maximum likelihood, separately for every class (and
    /// size partition).
    PerClass,
    /// One leave-one-out bandwidth from all surviving scores.
    Shared,
    Fixed(f64),
}

impl std::fmt::Display for BandwidthPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthPolicy::PerClass => f.write_str("auto"),
            BandwidthPolicy::Shared => f.write_str("auto-shared"),
            BandwidthPolicy::Fixed(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub link: LinkSpec,
    pub score_threshold: f64,
    pub bandwidth: BandwidthPolicy,
    pub dece_bins: usize,
    pub laece_bins: usize,
    /// Matching threshold deciding true positives for LaECE.
    pub laece_match_threshold: f64,
    pub similarity: Similarity,
    pub categories: Option<BTreeSet<CategoryId>>,
    pub clamp: f64,
    pub max_samples: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            link: LinkSpec::threshold(0.5).expect("valid"),
            score_threshold: 0.5,
            bandwidth: BandwidthPolicy::PerClass,
            dece_bins: DECE_BINS,
            laece_bins: LAECE_BINS,
            laece_match_threshold: 0.5,
            similarity: Similarity::Iou,
            categories: None,
            clamp: DEFAULT_CLAMP,
            max_samples: None,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

/// Configuration behind one reported number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub link: String,
    pub gamma: f64,
    /// Matching thresholds the value averages over.
    pub tau: Vec<f64>,
    pub bins: Option<usize>,
    pub bandwidth: Option<String>,
    pub similarity: Similarity,
    pub size: Option<SizeClass>,
    /// Evaluated samples (at the first threshold in `tau`).
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: Option<f64>,
    /// Why `value` is absent.
    pub reason: Option<String>,
    pub fingerprint: Fingerprint,
}

/// A class left out of a per-class average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClass {
    pub metric: String,
    pub category_id: CategoryId,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub metrics: Vec<MetricEntry>,
    pub categories: Vec<CategoryId>,
    /// Detections surviving the score threshold (after crowd removal at τ = 0.5).
    pub samples: usize,
    pub skipped: Vec<SkippedClass>,
    /// Seconds since the Unix epoch.
    pub timestamp: Option<u64>,
}

impl CalibrationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricEntry> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).and_then(|m| m.value)
    }

    /// JSON with keys sorted at every level.
    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<report>".into(),
            message: e.to_string(),
        })
    }

    /// One metric per row with flattened fingerprint columns.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = std::iter::once(
            [
                "name", "value", "reason", "link", "gamma", "tau", "bins", "bandwidth",
                "similarity", "size", "samples",
            ]
            .map(String::from),
        )
        .chain(self.metrics.iter().map(|m| {
            let f = &m.fingerprint;
            [
                m.name.clone(),
                m.value.map(|v| v.to_string()).unwrap_or_default(),
                m.reason.clone().unwrap_or_default(),
                f.link.clone(),
                f.gamma.to_string(),
                f.tau.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";"),
                f.bins.map(|b| b.to_string()).unwrap_or_default(),
                f.bandwidth.clone().unwrap_or_default(),
                match f.similarity {
                    Similarity::Iou => "iou".to_owned(),
                    Similarity::Dice => "dice".to_owned(),
                },
                f.size.map(|s| s.suffix().to_owned()).unwrap_or_default(),
                f.samples.to_string(),
            ]
        }));
        for row in rows {
            w.write_record(&row).map_err(csv_error)?;
        }
        finish_csv(w)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Parse {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        path: "<csv>".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Map is ordered by key, so a round trip through Value sorts.
    let v = serde_json::to_value(value).map_err(|e| Error::config(e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| Error::config(e.to_string()))
}

/// Outcome of a per-class average.
enum ClassAverage {
    Value(f64),
    Absent(String),
}

struct Evaluator<'a> {
    detections: &'a [Detection],
    ground_truth: &'a [GroundTruthBox],
    cfg: &'a ReportConfig,
    bandwidth_cache: RefCell<HashMap<Vec<u64>, f64>>,
    shared_bandwidth: Option<f64>,
    skipped: RefCell<Vec<SkippedClass>>,
}

impl<'a> Evaluator<'a> {
    fn match_cfg(&self, tau: f64, link: LinkSpec) -> Result<MatchConfig> {
        let mut m = MatchConfig::new(tau, self.cfg.score_threshold, link)?
            .with_similarity(self.cfg.similarity);
        m.categories = self.cfg.categories.clone();
        Ok(m)
    }

    fn samples(&self, tau: f64, link: LinkSpec) -> Result<Vec<MatchedSample>> {
        match_detections(self.detections, self.ground_truth, &self.match_cfg(tau, link)?)
    }

    fn kde_cfg(&self, bandwidth: f64) -> KdeConfig {
        KdeConfig {
            bandwidth,
            clamp: self.cfg.clamp,
            max_samples: self.cfg.max_samples,
            seed: self.cfg.seed,
            execution: self.cfg.execution,
        }
    }

    /// Leave-one-out bandwidth for these samples' clamped scores, memoized on
    /// the sorted score bits.
    fn loo_bandwidth(&self, samples: &[CalibrationSample]) -> Result<f64> {
        let probe = self.kde_cfg(1.0);
        let mut scores: Vec<f64> = samples.iter().map(|s| probe.clamp_score(s.score)).collect();
        scores.sort_by(f64::total_cmp);
        if let Some(cap) = self.cfg.max_samples.filter(|&m| m < scores.len()) {
            // Same subsample the estimator will use.
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.cfg.seed);
            let mut idx = rand::seq::index::sample(&mut rng, scores.len(), cap).into_vec();
            idx.sort_unstable();
            scores = idx.into_iter().map(|i| scores[i]).collect();
        }
        let key: Vec<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if let Some(&b) = self.bandwidth_cache.borrow().get(&key) {
            return Ok(b);
        }
        let b = loo_mle_bandwidth(&scores, &default_bandwidth_grid(), self.cfg.execution)?;
        self.bandwidth_cache.borrow_mut().insert(key, b);
        Ok(b)
    }

    fn bandwidth_for(&self, samples: &[CalibrationSample]) -> Result<f64> {
        match self.cfg.bandwidth {
            BandwidthPolicy::Fixed(b) => Ok(b),
            BandwidthPolicy::Shared => Ok(self.shared_bandwidth.expect("computed up front")),
            BandwidthPolicy::PerClass => self.loo_bandwidth(samples),
        }
    }

    /// Unweighted mean over classes with at least two samples.
    fn per_class<F>(&self, metric: &str, samples: &[MatchedSample], mut f: F) -> Result<ClassAverage>
    where
        F: FnMut(&[CalibrationSample]) -> Result<f64>,
    {
        let mut by_class: BTreeMap<CategoryId, Vec<CalibrationSample>> = BTreeMap::new();
        for s in samples {
            by_class.entry(s.category_id).or_default().push(s.calibration_sample());
        }
        let mut values = Vec::new();
        for (&cat, class) in &by_class {
            if class.len() < 2 {
                self.skipped.borrow_mut().push(SkippedClass {
                    metric: metric.to_owned(),
                    category_id: cat,
                    samples: class.len(),
                });
                continue;
            }
            values.push(f(class)?);
        }
        if values.is_empty() {
            return Ok(ClassAverage::Absent(if samples.is_empty() {
                "no samples".to_owned()
            } else {
                "no class has at least 2 samples".to_owned()
            }));
        }
        Ok(ClassAverage::Value(values.iter().sum::<f64>() / values.len() as f64))
    }

    fn ce(&self, metric: &str, samples: &[MatchedSample]) -> Result<ClassAverage> {
        self.per_class(metric, samples, |class| {
            let b = self.bandwidth_for(class)?;
            Ok(estimate_ce(class, &self.kde_cfg(b))?.value)
        })
    }

    fn dece(&self, metric: &str, samples: &[MatchedSample]) -> Result<ClassAverage> {
        let bins = BinningConfig::new(self.cfg.dece_bins)?;
        self.per_class(metric, samples, |class| d_ece(class, &bins))
    }

    fn fingerprint(&self, link: String, tau: Vec<f64>, bins: Option<usize>, kde: bool, size: Option<SizeClass>, samples: usize) -> Fingerprint {
        Fingerprint {
            link,
            gamma: self.cfg.score_threshold,
            tau,
            bins,
            bandwidth: kde.then(|| match (self.cfg.bandwidth, self.shared_bandwidth) {
                (BandwidthPolicy::Shared, Some(b)) => format!("auto-shared:{b}"),
                (policy, _) => policy.to_string(),
            }),
            similarity: self.cfg.similarity,
            size,
            samples,
        }
    }
}

fn entry(name: String, outcome: ClassAverage, fingerprint: Fingerprint) -> MetricEntry {
    match outcome {
        ClassAverage::Value(v) => MetricEntry {
            name,
            value: Some(v),
            reason: None,
            fingerprint,
        },
        ClassAverage::Absent(reason) => MetricEntry {
            name,
            value: None,
            reason: Some(reason),
            fingerprint,
        },
    }
}

/// Averages per-threshold outcomes; absent when none is available.
fn mean_over(outcomes: Vec<ClassAverage>, require_all: bool) -> ClassAverage {
    let total = outcomes.len();
    let mut reason = None;
    let values: Vec<f64> = outcomes
        .into_iter()
        .filter_map(|o| match o {
            ClassAverage::Value(v) => Some(v),
            ClassAverage::Absent(r) => {
                reason.get_or_insert(r);
                None
            }
        })
        .collect();
    if values.is_empty() || (require_all && values.len() < total) {
        return ClassAverage::Absent(reason.unwrap_or_else(|| "no samples".to_owned()));
    }
    ClassAverage::Value(values.iter().sum::<f64>() / values.len() as f64)
}

fn tau_name(prefix: &str, tau: f64) -> String {
    format!("{prefix}@{tau:.2}")
}

/// Computes every calibration metric for one set of detections.
///
/// With a threshold link, CE is estimated with a threshold link at each COCO
/// matching threshold and averaged; CE_50 / CE_75 and the size breakdown
/// follow the same scheme. Continuous links (identity, ramp, hinge) match with
/// any positive overlap and report a single CE plus the size breakdown.
/// D-ECE always uses binary correctness; LaECE uses matches at
/// `laece_match_threshold`. KDE metrics and D-ECE are averaged over classes
/// with at least two samples.
pub fn evaluate_report(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    cfg: &ReportConfig,
) -> Result<CalibrationReport> {
    if let BandwidthPolicy::Fixed(b) = cfg.bandwidth {
        KdeConfig::new(b).validate()?;
    }
    let mut ev = Evaluator {
        detections,
        ground_truth,
        cfg,
        bandwidth_cache: RefCell::new(HashMap::new()),
        shared_bandwidth: None,
        skipped: RefCell::new(Vec::new()),
    };
    let taus = iou_thresholds();
    let binary = cfg.link.is_binary();
    let base = ev.samples(0.5, LinkSpec::threshold(0.5)?)?;
    if cfg.bandwidth == BandwidthPolicy::Shared && base.len() >= 2 {
        let pooled: Vec<CalibrationSample> = base.iter().map(|s| s.calibration_sample()).collect();
        ev.shared_bandwidth = Some(ev.loo_bandwidth(&pooled)?);
    }
    let mut metrics = Vec::new();

    if binary {
        let per_tau: Vec<Vec<MatchedSample>> = taus
            .iter()
            .map(|&t| ev.samples(t, LinkSpec::threshold(t)?))
            .collect::<Result<_>>()?;
        let mut ce_tau = Vec::new();
        let mut tau_entries = Vec::new();
        for (&t, samples) in taus.iter().zip(&per_tau) {
            let name = tau_name("CE", t);
            let fp = ev.fingerprint(LinkSpec::threshold(t)?.to_string(), vec![t], None, true, None, samples.len());
            let outcome = ev.ce(&name, samples)?;
            let copy = match &outcome {
                ClassAverage::Value(v) => ClassAverage::Value(*v),
                ClassAverage::Absent(r) => ClassAverage::Absent(r.clone()),
            };
            ce_tau.push(copy);
            tau_entries.push(entry(name, outcome, fp));
        }
        let headline_fp = ev.fingerprint("threshold:tau".to_owned(), taus.clone(), None, true, None, per_tau[0].len());
        let ce50 = tau_entries[0].clone();
        let ce75 = tau_entries[5].clone();
        metrics.push(entry("CE".to_owned(), mean_over(ce_tau, true), headline_fp));
        metrics.push(MetricEntry { name: "CE_50".to_owned(), ..ce50 });
        metrics.push(MetricEntry { name: "CE_75".to_owned(), ..ce75 });
        for size in SizeClass::ALL {
            let name = format!("CE_{}", size.suffix());
            let mut outcomes = Vec::new();
            let mut first_count = None;
            for samples in &per_tau {
                let part = partition_by_size(samples).remove(&size).unwrap_or_default();
                first_count.get_or_insert(part.len());
                outcomes.push(ev.ce(&name, &part)?);
            }
            let fp = ev.fingerprint("threshold:tau".to_owned(), taus.clone(), None, true, Some(size), first_count.unwrap_or(0));
            metrics.push(entry(name, mean_over(outcomes, false), fp));
        }
        metrics.extend(tau_entries);
    } else {
        let samples = ev.samples(crate::matching::CONTINUOUS_MATCH_FLOOR, cfg.link)?;
        let link = cfg.link.to_string();
        let floor = vec![crate::matching::CONTINUOUS_MATCH_FLOOR];
        let fp = ev.fingerprint(link.clone(), floor.clone(), None, true, None, samples.len());
        metrics.push(entry("CE".to_owned(), ev.ce("CE", &samples)?, fp));
        for name in ["CE_50", "CE_75"] {
            let fp = ev.fingerprint(link.clone(), floor.clone(), None, true, None, samples.len());
            metrics.push(entry(
                name.to_owned(),
                ClassAverage::Absent("matching-threshold breakdown needs a threshold link".to_owned()),
                fp,
            ));
        }
        for (size, part) in partition_by_size(&samples) {
            let name = format!("CE_{}", size.suffix());
            let fp = ev.fingerprint(link.clone(), floor.clone(), None, true, Some(size), part.len());
            metrics.push(entry(name.clone(), ev.ce(&name, &part)?, fp));
        }
    }

    // D-ECE with binary correctness at every matching threshold.
    let mut dece_tau = Vec::new();
    let mut dece50 = None;
    for &t in &taus {
        let samples = ev.samples(t, LinkSpec::threshold(t)?)?;
        let outcome = ev.dece(&tau_name("D-ECE", t), &samples)?;
        if dece50.is_none() {
            let fp = ev.fingerprint(LinkSpec::threshold(t)?.to_string(), vec![t], Some(cfg.dece_bins), false, None, samples.len());
            let copy = match &outcome {
                ClassAverage::Value(v) => ClassAverage::Value(*v),
                ClassAverage::Absent(r) => ClassAverage::Absent(r.clone()),
            };
            dece50 = Some(entry("D-ECE_50".to_owned(), copy, fp));
        }
        dece_tau.push(outcome);
    }
    let fp = ev.fingerprint("threshold:tau".to_owned(), taus.clone(), Some(cfg.dece_bins), false, None, base.len());
    metrics.push(entry("D-ECE".to_owned(), mean_over(dece_tau, true), fp));
    metrics.extend(dece50);

    // LaECE with identity-link similarities and true positives at the LaECE threshold.
    let la_samples = ev.samples(cfg.laece_match_threshold, LinkSpec::identity())?;
    let fp = ev.fingerprint("identity".to_owned(), vec![cfg.laece_match_threshold], Some(cfg.laece_bins), false, None, la_samples.len());
    let la = if la_samples.len() < 2 {
        ClassAverage::Absent(format!("{} samples, need at least 2", la_samples.len()))
    } else {
        ClassAverage::Value(la_ece(&la_samples, &[], &BinningConfig::new(cfg.laece_bins)?)?)
    };
    metrics.push(entry("LaECE".to_owned(), la, fp));

    let categories: BTreeSet<CategoryId> = match &cfg.categories {
        Some(c) => c.clone(),
        None => detections
            .iter()
            .map(|d| d.category_id)
            .chain(ground_truth.iter().map(|g| g.category_id))
            .collect(),
    };
    // Size partitions are re-evaluated at every threshold; report each skip once.
    let mut skipped = ev.skipped.into_inner();
    skipped.sort_by(|a, b| (&a.metric, a.category_id, a.samples).cmp(&(&b.metric, b.category_id, b.samples)));
    skipped.dedup();
    Ok(CalibrationReport {
        metrics,
        categories: categories.into_iter().collect(),
        samples: base.len(),
        skipped,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    /// Detections surviving the threshold.
    pub samples: usize,
    pub ce: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Echoed training regularization weight, when the caller records one.
    pub lambda: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["gamma", "samples", "ce", "reason"];
        if self.lambda.is_some() {
            header.push("lambda");
        }
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![
                r.gamma.to_string(),
                r.samples.to_string(),
                r.ce.map(|v| v.to_string()).unwrap_or_default(),
                r.reason.clone().unwrap_or_default(),
            ];
            if let Some(l) = self.lambda {
                rec.push(l.to_string());
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }
}

/// Headline CE and surviving sample count for each score threshold.
pub fn sweep_gamma(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    gammas: &[f64],
    cfg: &ReportConfig,
) -> Result<SweepTable> {
    if gammas.is_empty() {
        return Err(Error::config("gamma sweep needs at least one value"));
    }
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let cfg = ReportConfig {
                score_threshold: gamma,
                ..cfg.clone()
            };
            let report = evaluate_report(detections, ground_truth, &cfg)?;
            let ce = report.metric("CE").expect("CE is always reported");
            Ok(SweepRow {
                gamma,
                samples: report.samples,
                ce: ce.value,
                reason: ce.reason.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { lambda: None, rows })
}
