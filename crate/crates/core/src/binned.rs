//! Binned calibration estimators (D-ECE, LaECE), the train-time auxiliary terms
//! `d_cls` / `d_det`, and NLL temperature fitting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{CalibrationSample, DEFAULT_CLAMP};
use crate::matching::{CategoryId, MatchedSample};
use crate::synth::temperature_scale;

pub const DECE_BINS: usize = 20;
pub const LAECE_BINS: usize = 25;

/// `M` equal-width bins on `[0, 1]`: `[m/M, (m+1)/M)`, the last one closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl BinningConfig {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::config("number of bins must be at least 1"));
        }
        Ok(Self { num_bins })
    }

    pub fn dece() -> Self {
        Self {
            num_bins: DECE_BINS,
        }
    }

    pub fn laece() -> Self {
        Self {
            num_bins: LAECE_BINS,
        }
    }

    /// Bin holding `score`, consistent with the edges `m as f64 / M as f64`
    /// even where `score · M` rounds across an integer.
    pub fn bin_of(&self, score: f64) -> usize {
        let m = self.num_bins;
        let edge = |k: usize| k as f64 / m as f64;
        let mut b = ((score * m as f64) as usize).min(m - 1);
        if b > 0 && score < edge(b) {
            b -= 1;
        } else if b + 1 < m && score >= edge(b + 1) {
            b += 1;
        }
        b
    }
}

fn check_binary(samples: &[CalibrationSample]) -> Result<()> {
    match samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.correctness != 0.0 && s.correctness != 1.0)
    {
        Some((index, s)) => Err(Error::NonBinaryCorrectness {
            index,
            value: s.correctness,
        }),
        None => Ok(()),
    }
}

fn check_scores<'a>(scores: impl Iterator<Item = &'a f64>) -> Result<()> {
    for (i, &s) in scores.enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange(format!("score {i} = {s} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Detection ECE: bin-mass weighted `|precision − confidence|` for binary
/// correctness. Empty bins contribute nothing.
pub fn d_ece(samples: &[CalibrationSample], cfg: &BinningConfig) -> Result<f64> {
    BinningConfig::new(cfg.num_bins)?;
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    check_binary(samples)?;
    check_scores(samples.iter().map(|s| &s.score))?;
    let m = cfg.num_bins;
    let mut count = vec![0usize; m];
    let mut conf = vec![0.0; m];
    let mut hits = vec![0.0; m];
    for s in samples {
        let b = cfg.bin_of(s.score);
        count[b] += 1;
        conf[b] += s.score;
        hits[b] += s.correctness;
    }
    let total = samples.len() as f64;
    Ok((0..m)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            (n / total) * (hits[b] / n - conf[b] / n).abs()
        })
        .sum())
}

/// Localization-aware ECE for one class.
fn la_ece_class(samples: &[&MatchedSample], cfg: &BinningConfig) -> f64 {
    let m = cfg.num_bins;
    let mut count = vec![0usize; m];
    let mut tp = vec![0usize; m];
    let mut conf = vec![0.0; m];
    let mut tp_sim = vec![0.0; m];
    for s in samples {
        let b = cfg.bin_of(s.score);
        count[b] += 1;
        conf[b] += s.score;
        if s.matched {
            tp[b] += 1;
            tp_sim[b] += s.similarity;
        }
    }
    let total = samples.len() as f64;
    (0..m)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            let precision = tp[b] as f64 / n;
            let mean_sim = if tp[b] > 0 { tp_sim[b] / tp[b] as f64 } else { 0.0 };
            (n / total) * (precision * mean_sim - conf[b] / n).abs()
        })
        .sum()
}

/// LaECE: per-class `Σ_m |D_m|/|D| · |prec(m) · IoU(m) − conf(m)|` with
/// precision the matched fraction and IoU the mean similarity of matched
/// samples, averaged over the listed classes that have samples. An empty
/// `categories` slice means every class present in `samples`.
pub fn la_ece(
    samples: &[MatchedSample],
    categories: &[CategoryId],
    cfg: &BinningConfig,
) -> Result<f64> {
    BinningConfig::new(cfg.num_bins)?;
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    check_scores(samples.iter().map(|s| &s.score))?;
    let mut by_class: BTreeMap<CategoryId, Vec<&MatchedSample>> = BTreeMap::new();
    for s in samples {
        if categories.is_empty() || categories.contains(&s.category_id) {
            by_class.entry(s.category_id).or_default().push(s);
        }
    }
    if by_class.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let per_class: Vec<f64> = by_class.values().map(|c| la_ece_class(c, cfg)).collect();
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// `E|s − y|` for binary labels.
pub fn d_cls(samples: &[CalibrationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    check_binary(samples)?;
    Ok(samples.iter().map(|s| (s.score - s.correctness).abs()).sum::<f64>() / samples.len() as f64)
}

/// `E|L − s|`; unmatched samples carry `L = 0`.
pub fn d_det(samples: &[MatchedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(samples.iter().map(|s| (s.similarity - s.score).abs()).sum::<f64>() / samples.len() as f64)
}

/// Bounded golden-section search settings for [`fit_temperature`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSearch {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    pub clamp: f64,
}

impl Default for TemperatureSearch {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 20.0,
            tolerance: 1e-4,
            clamp: DEFAULT_CLAMP,
        }
    }
}

/// Mean binary cross-entropy of labels under scores rescaled by temperature `t`.
pub fn temperature_nll(samples: &[CalibrationSample], t: f64, clamp: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let p = temperature_scale(s.score.clamp(clamp, 1.0 - clamp), t)?;
        total -= if s.correctness >= 0.5 {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
    }
    Ok(total / samples.len() as f64)
}

/// Temperature minimizing the NLL of binary labels, by golden-section search.
pub fn fit_temperature(samples: &[CalibrationSample], search: &TemperatureSearch) -> Result<f64> {
    if !(search.lower > 0.0 && search.lower < search.upper && search.tolerance > 0.0) {
        return Err(Error::config("temperature search needs 0 < lower < upper and tolerance > 0"));
    }
    check_binary(samples)?;
    check_scores(samples.iter().map(|s| &s.score))?;
    let positives = samples.iter().filter(|s| s.correctness == 1.0).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::config(
            "temperature fitting needs both positive and negative labels",
        ));
    }
    let nll = |t: f64| temperature_nll(samples, t, search.clamp);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (search.lower, search.upper);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (nll(c)?, nll(d)?);
    while b - a > search.tolerance {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
