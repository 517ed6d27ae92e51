//! Reference implementations written directly from the definitions, sharing
//! no code with the library: plain double loops, `statrs` Beta densities and
//! explicit bin-membership tests.
#![allow(dead_code)]

use detcal::kde::CalibrationSample;
use detcal::matching::{CategoryId, MatchedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous};

pub const CLAMP: f64 = 1e-4;

pub fn clamp(s: f64) -> f64 {
    s.clamp(CLAMP, 1.0 - CLAMP)
}

/// Beta-kernel density centered at `center`, evaluated at `at`.
pub fn kernel(at: f64, center: f64, b: f64) -> f64 {
    Beta::new(center / b + 1.0, (1.0 - center) / b + 1.0)
        .unwrap()
        .pdf(at)
}

pub fn conditional_expectation(samples: &[CalibrationSample], query: f64, b: f64) -> f64 {
    let q = clamp(query);
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let k = kernel(q, clamp(s.score), b);
        num += k * s.correctness;
        den += k;
    }
    num / den
}

pub fn estimate_ce(samples: &[CalibrationSample], b: f64) -> f64 {
    let w = samples.len();
    let mut total = 0.0;
    for (v, at) in samples.iter().enumerate() {
        let sv = clamp(at.score);
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, center) in samples.iter().enumerate() {
            if u == v {
                continue;
            }
            let k = kernel(sv, clamp(center.score), b);
            num += k * center.correctness;
            den += k;
        }
        total += (num / den - sv).abs();
    }
    total / w as f64
}

fn in_bin(score: f64, m: usize, bins: usize) -> bool {
    let lo = m as f64 / bins as f64;
    let hi = (m + 1) as f64 / bins as f64;
    if m + 1 == bins {
        score >= lo && score <= 1.0
    } else {
        score >= lo && score < hi
    }
}

pub fn d_ece(samples: &[CalibrationSample], bins: usize) -> f64 {
    let n = samples.len() as f64;
    let mut total = 0.0;
    for m in 0..bins {
        let members: Vec<_> = samples.iter().filter(|s| in_bin(s.score, m, bins)).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let precision = members.iter().map(|s| s.correctness).sum::<f64>() / k;
        let confidence = members.iter().map(|s| s.score).sum::<f64>() / k;
        total += k / n * (precision - confidence).abs();
    }
    total
}

pub fn la_ece(samples: &[MatchedSample], bins: usize) -> f64 {
    let mut classes: Vec<CategoryId> = samples.iter().map(|s| s.category_id).collect();
    classes.sort();
    classes.dedup();
    let mut sum = 0.0;
    for &c in &classes {
        let class: Vec<_> = samples.iter().filter(|s| s.category_id == c).collect();
        let n = class.len() as f64;
        let mut per_class = 0.0;
        for m in 0..bins {
            let members: Vec<_> = class.iter().filter(|s| in_bin(s.score, m, bins)).collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            let tps: Vec<_> = members.iter().filter(|s| s.matched).collect();
            let precision = tps.len() as f64 / k;
            let iou = if tps.is_empty() {
                0.0
            } else {
                tps.iter().map(|s| s.similarity).sum::<f64>() / tps.len() as f64
            };
            let confidence = members.iter().map(|s| s.score).sum::<f64>() / k;
            per_class += k / n * (precision * iou - confidence).abs();
        }
        sum += per_class;
    }
    sum / classes.len() as f64
}

/// A score drawn to exercise the awkward cases: bin edges, the clamp region
/// and exact duplicates of earlier scores.
pub fn awkward_score(rng: &mut ChaCha8Rng, earlier: &[f64], bins: usize) -> f64 {
    match rng.random_range(0..10) {
        0 if !earlier.is_empty() => earlier[rng.random_range(0..earlier.len())],
        1 => rng.random_range(0..=bins) as f64 / bins as f64,
        2 => rng.random_range(0.0..2e-4),
        3 => 1.0 - rng.random_range(0.0..2e-4),
        _ => rng.random_range(0.0..=1.0),
    }
}

pub struct RandomSet {
    pub samples: Vec<CalibrationSample>,
    pub matched: Vec<MatchedSample>,
    pub bandwidth: f64,
    pub binary: bool,
}

/// `count` small random sample sets (2 ≤ w ≤ 10), reproducible from `seed`.
pub fn random_sets(count: usize, seed: u64, bins: usize) -> Vec<RandomSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let w = rng.random_range(2..=10);
            let binary = i % 2 == 0;
            let bandwidth = 10f64.powf(rng.random_range(-1.5..0.0));
            let mut scores = Vec::with_capacity(w);
            for _ in 0..w {
                let s = awkward_score(&mut rng, &scores, bins);
                scores.push(s);
            }
            let samples: Vec<_> = scores
                .iter()
                .map(|&score| {
                    let z = if binary {
                        f64::from(rng.random_bool(0.5))
                    } else {
                        rng.random_range(0.0..=1.0)
                    };
                    CalibrationSample::new(score, z)
                })
                .collect();
            let matched = scores
                .iter()
                .map(|&score| {
                    let matched = rng.random_bool(0.6);
                    let similarity = if matched { rng.random_range(0.5..=1.0) } else { 0.0 };
                    MatchedSample {
                        image_id: detcal::matching::ImageId::Int(0),
                        category_id: rng.random_range(1..=3),
                        score,
                        similarity,
                        correctness: similarity,
                        matched,
                        size_class: detcal::SizeClass::Large,
                        gt_index: None,
                    }
                })
                .collect();
            RandomSet {
                samples,
                matched,
                bandwidth,
                binary,
            }
        })
        .collect()
}

/// Central finite difference of `f` in coordinate `i`.
pub fn central_difference<F>(scores: &[f64], i: usize, h: f64, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut plus = scores.to_vec();
    let mut minus = scores.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}
