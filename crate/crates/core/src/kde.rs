//! Beta-kernel estimate of `E[Z | S]` and the leave-one-out calibration error.
//!
//! For samples `(s_u, z_u)` the estimator is
//!
//! ```text
//! CE = 1/w Σ_v | Σ_{u≠v} k(s_v; s_u) z_u / Σ_{u≠v} k(s_v; s_u) − s_v |
//! ```
//!
//! where `k(x; c)` is the density at `x` of `Beta(c/b + 1, (1−c)/b + 1)`.
//! The kernel takes its shape from the center `s_u` and is evaluated at
//! `s_v`. Scores are clamped to `[ε, 1−ε]` first.
//!
//! Every sum over `u` is evaluated relative to its largest term. The log
//! kernel is concave in the center score, so with samples sorted by score the
//! terms within [`TRUNCATION`] nats of the maximum form one contiguous window,
//! located by binary search; the rest are below double precision relative to
//! the sum and are skipped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

pub const DEFAULT_CLAMP: f64 = 1e-4;
pub const DEFAULT_GRID_MIN: f64 = 1e-3;
pub const DEFAULT_GRID_MAX: f64 = 0.5;
pub const DEFAULT_GRID_LEN: usize = 32;

/// Log-kernel terms further than this below the largest one are dropped.
/// `w · e^-40` stays under 1e-12 relative for `w` up to 10^5.
pub const TRUNCATION: f64 = 40.0;

/// `|E[Z|S] − s|` gaps at or below this count as the kink of `|·|`.
pub const KINK_TOLERANCE: f64 = 1e-12;

const BLOCK: usize = 256;

/// A confidence score with its correctness target `z = ψ(L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub score: f64,
    pub correctness: f64,
}

impl CalibrationSample {
    pub fn new(score: f64, correctness: f64) -> Self {
        Self { score, correctness }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Single-threaded, bit-reproducible.
    #[default]
    Sequential,
    /// Outer loop spread over the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth: f64,
    /// Scores are clamped to `[clamp, 1 − clamp]` before any kernel use.
    pub clamp: f64,
    /// Estimate on a seeded subsample when there are more samples than this.
    pub max_samples: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

impl KdeConfig {
    pub fn new(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            clamp: DEFAULT_CLAMP,
            max_samples: None,
            seed: 0,
            execution: Execution::Sequential,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_max_samples(mut self, max_samples: usize, seed: u64) -> Self {
        self.max_samples = Some(max_samples);
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.bandwidth)?;
        if !(self.clamp > 0.0 && self.clamp < 0.1) {
            return Err(Error::config(format!(
                "clamp {} must lie in (0, 0.1)",
                self.clamp
            )));
        }
        if self.max_samples.is_some_and(|m| m < 2) {
            return Err(Error::config("max_samples must be at least 2"));
        }
        Ok(())
    }

    pub fn clamp_score(&self, s: f64) -> f64 {
        s.clamp(self.clamp, 1.0 - self.clamp)
    }
}

fn check_bandwidth(b: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::config(format!("bandwidth {b} must be positive")));
    }
    Ok(())
}

/// Log-density at `s_eval` of the Beta kernel centered at `s_center`.
pub fn log_beta_kernel(s_eval: f64, s_center: f64, bandwidth: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    for (name, v) in [("evaluation point", s_eval), ("center", s_center)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("kernel {name} {v} not in [0, 1]")));
        }
    }
    let a = s_center / bandwidth + 1.0;
    let b = (1.0 - s_center) / bandwidth + 1.0;
    let log_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let x_term = if a == 1.0 { 0.0 } else { (a - 1.0) * s_eval.ln() };
    let y_term = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - s_eval).ln() };
    Ok(x_term + y_term + log_norm)
}

/// Density at `s_eval` of `Beta(s_center/b + 1, (1 − s_center)/b + 1)`.
pub fn beta_kernel(s_eval: f64, s_center: f64, bandwidth: f64) -> Result<f64> {
    log_beta_kernel(s_eval, s_center, bandwidth).map(f64::exp)
}

/// `exp` for arguments in `[-708, 0]` written so that it vectorizes: range
/// reduction by the 1.5·2^52 rounding trick and a degree-13 Taylor polynomial.
#[inline(always)]
pub(crate) fn fast_exp(x: f64) -> f64 {
    const SHIFTER: f64 = 6755399441055744.0;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

const LANES: usize = 8;

#[derive(Default)]
struct Lanes {
    num: [f64; LANES],
    den: [f64; LANES],
}

impl Lanes {
    fn total(&self) -> (f64, f64) {
        let fold = |x: &[f64; LANES]| ((x[0] + x[1]) + (x[2] + x[3])) + ((x[4] + x[5]) + (x[6] + x[7]));
        (fold(&self.num), fold(&self.den))
    }
}

/// One contiguous run of kernel terms `exp(p·logit s + norm + offset)`,
/// using `q = 1/b − p` so that `offset = ln(1−s)/b − shift`.
struct Terms<'a> {
    p: &'a [f64],
    norm: &'a [f64],
    z: &'a [f64],
    logit: f64,
    offset: f64,
}

impl Terms<'_> {
    /// Adds the run into `acc`. The wide-vector path performs exactly the same
    /// operations in the same order (Rust never contracts into FMA), so the
    /// result does not depend on which path runs.
    fn accumulate(&self, acc: &mut Lanes) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f")
                && std::arch::is_x86_feature_detected!("avx512dq")
                && std::arch::is_x86_feature_detected!("avx512vl")
            {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.accumulate_avx512(acc) };
                return;
            }
        }
        self.accumulate_portable(acc);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx2")]
    unsafe fn accumulate_avx512(&self, acc: &mut Lanes) {
        self.accumulate_portable(acc);
    }

    #[inline(always)]
    fn accumulate_portable(&self, acc: &mut Lanes) {
        let n = self.p.len();
        let (p, norm, z) = (&self.p[..n], &self.norm[..n], &self.z[..n]);
        let mut i = 0;
        while i + LANES <= n {
            let mut e = [0.0f64; LANES];
            for l in 0..LANES {
                e[l] = p[i + l] * self.logit + norm[i + l] + self.offset;
            }
            for x in &mut e {
                *x = fast_exp(*x);
            }
            for l in 0..LANES {
                acc.num[l] += e[l] * z[i + l];
                acc.den[l] += e[l];
            }
            i += LANES;
        }
        for u in i..n {
            let e = fast_exp(p[u] * self.logit + norm[u] + self.offset);
            acc.num[u % LANES] += e * z[u];
            acc.den[u % LANES] += e;
        }
    }
}

/// Samples sorted by `(score, correctness)` with per-center kernel constants.
struct Prepared {
    s: Vec<f64>,
    z: Vec<f64>,
    ln_s: Vec<f64>,
    ln_1ms: Vec<f64>,
    /// `s_u / b`
    p: Vec<f64>,
    /// `(1 − s_u) / b`
    q: Vec<f64>,
    /// `−ln B(a_u, b_u)`
    norm: Vec<f64>,
    /// `ψ(b_u) − ψ(a_u)`; decreasing in `s_u`.
    dg: Vec<f64>,
    inv_bandwidth: f64,
}

/// Where a kernel sum is evaluated.
#[derive(Clone, Copy)]
struct EvalPoint {
    ln_s: f64,
    ln_1ms: f64,
}

impl EvalPoint {
    fn new(s: f64) -> Self {
        Self {
            ln_s: s.ln(),
            ln_1ms: (1.0 - s).ln(),
        }
    }

    fn logit(&self) -> f64 {
        self.ln_s - self.ln_1ms
    }
}

/// Kernel weights relative to the largest term, over `lo..hi`, skipping `exclude`.
struct Window {
    lo: usize,
    hi: usize,
    exclude: Option<usize>,
    max_log: f64,
}

impl Prepared {
    /// `sorted` must already be clamped and ordered.
    fn new(sorted: &[(f64, f64)], bandwidth: f64) -> Self {
        let n = sorted.len();
        let inv_b = 1.0 / bandwidth;
        let mut out = Prepared {
            s: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            ln_s: Vec::with_capacity(n),
            ln_1ms: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            norm: Vec::with_capacity(n),
            dg: Vec::with_capacity(n),
            inv_bandwidth: inv_b,
        };
        let ab = inv_b + 2.0;
        let ln_gamma_ab = ln_gamma(ab);
        for &(s, z) in sorted {
            let a = s * inv_b + 1.0;
            let b = (1.0 - s) * inv_b + 1.0;
            out.s.push(s);
            out.z.push(z);
            out.ln_s.push(s.ln());
            out.ln_1ms.push((1.0 - s).ln());
            out.p.push(a - 1.0);
            out.q.push(b - 1.0);
            out.norm.push(ln_gamma_ab - ln_gamma(a) - ln_gamma(b));
            out.dg.push(digamma(b) - digamma(a));
        }
        out
    }

    fn len(&self) -> usize {
        self.s.len()
    }

    fn eval_at(&self, v: usize) -> EvalPoint {
        EvalPoint {
            ln_s: self.ln_s[v],
            ln_1ms: self.ln_1ms[v],
        }
    }

    #[inline(always)]
    fn log_kernel(&self, at: EvalPoint, u: usize) -> f64 {
        self.p[u] * at.ln_s + self.q[u] * at.ln_1ms + self.norm[u]
    }

    fn window(&self, at: EvalPoint, exclude: Option<usize>) -> Window {
        let n = self.len();
        let lt = at.logit();
        // First center past the maximum of the (concave) log kernel.
        let k = self.dg.partition_point(|&d| lt + d > 0.0);
        let mut peak = usize::MAX;
        let mut max_log = f64::NEG_INFINITY;
        for u in k.saturating_sub(2)..(k + 2).min(n) {
            if Some(u) == exclude {
                continue;
            }
            let f = self.log_kernel(at, u);
            if f > max_log {
                max_log = f;
                peak = u;
            }
        }
        debug_assert!(peak != usize::MAX, "window needs a center other than the excluded one");
        let floor = max_log - TRUNCATION;
        let keep = |u: usize| Some(u) == exclude || self.log_kernel(at, u) >= floor;
        // Left of the peak the log kernel is non-decreasing in u, right of it non-increasing.
        let (mut a, mut b) = (0, peak);
        while a < b {
            let mid = a + (b - a) / 2;
            if keep(mid) {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        let lo = a;
        let (mut a, mut b) = (peak + 1, n);
        while a < b {
            let mid = a + (b - a) / 2;
            if keep(mid) {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        Window {
            lo,
            hi: a,
            exclude,
            max_log,
        }
    }

    /// `(Σ e^(f−max) z, Σ e^(f−max))` over the window.
    fn sums(&self, at: EvalPoint, win: &Window) -> (f64, f64) {
        let (first, second) = match win.exclude {
            Some(x) if (win.lo..win.hi).contains(&x) => (win.lo..x, x + 1..win.hi),
            _ => (win.lo..win.hi, win.hi..win.hi),
        };
        let mut acc = Lanes::default();
        let logit = at.logit();
        let offset = at.ln_1ms * self.inv_bandwidth - win.max_log;
        for range in [first, second] {
            let terms = Terms {
                p: &self.p[range.clone()],
                norm: &self.norm[range.clone()],
                z: &self.z[range],
                logit,
                offset,
            };
            terms.accumulate(&mut acc);
        }
        acc.total()
    }

    /// Leave-one-out estimate of `E[Z | S = s_v]`.
    fn loo_ratio(&self, v: usize) -> f64 {
        let at = self.eval_at(v);
        let win = self.window(at, Some(v));
        let (num, den) = self.sums(at, &win);
        num / den
    }

    /// `ln Σ_{u≠v} k(s_v; s_u)`.
    fn loo_log_density_sum(&self, v: usize) -> f64 {
        let at = self.eval_at(v);
        let win = self.window(at, Some(v));
        let (_, den) = self.sums(at, &win);
        win.max_log + den.ln()
    }
}

fn validate_samples(samples: &[CalibrationSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::OutOfRange(format!(
                "sample {i} has score {} outside [0, 1]",
                s.score
            )));
        }
        if !(0.0..=1.0).contains(&s.correctness) {
            return Err(Error::OutOfRange(format!(
                "sample {i} has correctness {} outside [0, 1]",
                s.correctness
            )));
        }
    }
    Ok(())
}

/// Clamps, sorts into canonical order and applies the `max_samples` cap.
/// Returns the sorted pairs and, for each, its index in `samples`.
fn canonicalize(samples: &[CalibrationSample], cfg: &KdeConfig) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let key = |i: usize| (cfg.clamp_score(samples[i].score), samples[i].correctness);
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    if let Some(cap) = cfg.max_samples.filter(|&m| m < samples.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = rand::seq::index::sample(&mut rng, samples.len(), cap).into_vec();
        picked.sort_unstable();
        order = picked.into_iter().map(|i| order[i]).collect();
    }
    let sorted = order.iter().map(|&i| key(i)).collect();
    (sorted, order)
}

fn map_indices<F>(n: usize, execution: Execution, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync,
{
    match execution {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => {
            let mut out = vec![0.0; n];
            out.par_chunks_mut(BLOCK).enumerate().for_each(|(block, chunk)| {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = f(block * BLOCK + i);
                }
            });
            out
        }
    }
}

/// Kernel regression estimate of `E[Z | S = s_query]` using all samples.
pub fn conditional_expectation(
    samples: &[CalibrationSample],
    s_query: f64,
    cfg: &KdeConfig,
) -> Result<f64> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    validate_samples(samples)?;
    if !(0.0..=1.0).contains(&s_query) {
        return Err(Error::OutOfRange(format!("query score {s_query} not in [0, 1]")));
    }
    let (sorted, _) = canonicalize(samples, cfg);
    let prep = Prepared::new(&sorted, cfg.bandwidth);
    let at = EvalPoint::new(cfg.clamp_score(s_query));
    let win = prep.window(at, None);
    let (num, den) = prep.sums(at, &win);
    if den.is_nan() || den <= 0.0 {
        return Err(Error::ZeroDenominator { score: s_query });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeEstimate {
    pub value: f64,
    pub samples_used: usize,
    /// True when `max_samples` forced a subsample.
    pub subsampled: bool,
}

/// Leave-one-out Beta-kernel calibration error. Needs at least two samples.
pub fn estimate_ce(samples: &[CalibrationSample], cfg: &KdeConfig) -> Result<CeEstimate> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    validate_samples(samples)?;
    let (sorted, _) = canonicalize(samples, cfg);
    let prep = Prepared::new(&sorted, cfg.bandwidth);
    let w = prep.len();
    let gaps = map_indices(w, cfg.execution, |v| (prep.loo_ratio(v) - prep.s[v]).abs());
    let value = gaps.iter().sum::<f64>() / w as f64;
    Ok(CeEstimate {
        value,
        samples_used: w,
        subsampled: w < samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeGradient {
    pub value: f64,
    /// `∂CE/∂s` in input order. Zero for clamped scores and for samples left
    /// out by subsampling.
    pub gradient: Vec<f64>,
    pub samples_used: usize,
    pub subsampled: bool,
}

/// [`estimate_ce`] together with its gradient with respect to every score.
///
/// Correctness values and the bandwidth are held fixed. At a kink of `|·|`
/// (gap within [`KINK_TOLERANCE`]) the subgradient `sign(0) = 0` is used.
pub fn estimate_ce_gradient(samples: &[CalibrationSample], cfg: &KdeConfig) -> Result<CeGradient> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    validate_samples(samples)?;
    let (sorted, order) = canonicalize(samples, cfg);
    let prep = Prepared::new(&sorted, cfg.bandwidth);
    let w = prep.len();
    let inv_w = 1.0 / w as f64;
    let inv_b = prep.inv_bandwidth;

    let mut value = 0.0;
    let mut grad = vec![0.0; w];
    let mut weights = Vec::new();
    for v in 0..w {
        let at = prep.eval_at(v);
        let win = prep.window(at, Some(v));
        let (num, den) = prep.sums(at, &win);
        let ratio = num / den;
        let gap = ratio - prep.s[v];
        value += gap.abs();
        if gap.abs() <= KINK_TOLERANCE {
            continue;
        }
        let g = gap.signum() * inv_w;
        grad[v] -= g;

        weights.clear();
        weights.extend((win.lo..win.hi).map(|u| {
            if Some(u) == win.exclude {
                0.0
            } else {
                (prep.log_kernel(at, u) - win.max_log).exp() / den
            }
        }));
        let (s_v, lt_v) = (prep.s[v], at.logit());
        let mut eval_path = 0.0;
        for (u, &wu) in (win.lo..win.hi).zip(&weights) {
            if wu == 0.0 {
                continue;
            }
            let dr = wu * (prep.z[u] - ratio);
            // d ln k / d s_v (evaluation point) and d ln k / d s_u (center).
            eval_path += dr * (prep.p[u] / s_v - prep.q[u] / (1.0 - s_v));
            grad[u] += g * dr * (lt_v + prep.dg[u]) * inv_b;
        }
        grad[v] += g * eval_path;
    }

    let mut gradient = vec![0.0; samples.len()];
    for (k, &orig) in order.iter().enumerate() {
        let raw = samples[orig].score;
        if raw > cfg.clamp && raw < 1.0 - cfg.clamp {
            gradient[orig] = grad[k];
        }
    }
    Ok(CeGradient {
        value: value / w as f64,
        gradient,
        samples_used: w,
        subsampled: w < samples.len(),
    })
}

/// `n` log-spaced bandwidths covering `[lo, hi]`, ascending.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    check_bandwidth(lo)?;
    check_bandwidth(hi)?;
    if n == 0 || hi < lo {
        return Err(Error::config("bandwidth grid needs n >= 1 and lo <= hi"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

/// The default 32-point grid on `[1e-3, 0.5]`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_spaced_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_LEN)
        .expect("default grid is valid")
}

/// Leave-one-out log-likelihood `Σ_v ln[ 1/(w−1) Σ_{u≠v} k(s_v; s_u) ]` of
/// clamped scores under bandwidth `b`.
pub fn loo_log_likelihood(scores: &[f64], bandwidth: f64, execution: Execution) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    if scores.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: scores.len(),
        });
    }
    let mut sorted: Vec<(f64, f64)> = scores.iter().map(|&s| (s, 0.0)).collect();
    for (i, &(s, _)) in sorted.iter().enumerate() {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::OutOfRange(format!(
                "score {i} = {s} must be clamped into (0, 1)"
            )));
        }
    }
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let prep = Prepared::new(&sorted, bandwidth);
    let w = prep.len();
    let terms = map_indices(w, execution, |v| prep.loo_log_density_sum(v));
    Ok(terms.iter().sum::<f64>() - w as f64 * ((w - 1) as f64).ln())
}

/// Grid bandwidth maximizing the leave-one-out likelihood of `scores`
/// (already clamped). Ties go to the smaller bandwidth.
pub fn loo_mle_bandwidth(scores: &[f64], grid: &[f64], execution: Execution) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: scores.len(),
        });
    }
    if grid.is_empty() {
        return Err(Error::config("bandwidth grid is empty"));
    }
    for &b in grid {
        check_bandwidth(b)?;
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &b in &candidates {
        let ll = loo_log_likelihood(scores, b, execution)?;
        if ll > best.0 {
            best = (ll, b);
        }
    }
    Ok(best.1)
}

/// Clamps the samples' scores as `cfg` would, applies the subsample cap and
/// selects a bandwidth on the default grid.
pub fn select_bandwidth(samples: &[CalibrationSample], cfg: &KdeConfig) -> Result<f64> {
    let mut probe = cfg.clone();
    probe.bandwidth = 1.0;
    probe.validate()?;
    validate_samples(samples)?;
    let (sorted, _) = canonicalize(samples, &probe);
    let scores: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    loo_mle_bandwidth(&scores, &default_bandwidth_grid(), cfg.execution)
}
