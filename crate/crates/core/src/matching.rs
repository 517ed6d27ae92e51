//! Greedy detection-to-annotation matching producing calibration samples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Similarity};
use crate::kde::CalibrationSample;
use crate::links::LinkSpec;

pub type CategoryId = i64;

/// Matching floor used for continuous links: any positive overlap can match.
pub const CONTINUOUS_MATCH_FLOOR: f64 = 1e-6;

/// Upper area bound (exclusive) of a small object, in pixels².
pub const SMALL_AREA: f64 = 32.0 * 32.0;
/// Upper area bound (exclusive) of a medium object, in pixels².
pub const MEDIUM_AREA: f64 = 96.0 * 96.0;

/// Image key, either a COCO integer id or an opaque string. Compared exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Int(i64),
    Str(String),
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Int(i) => write!(f, "{i}"),
            ImageId::Str(s) => f.write_str(s),
        }
    }
}

impl From<i64> for ImageId {
    fn from(v: i64) -> Self {
        ImageId::Int(v)
    }
}

impl From<&str> for ImageId {
    fn from(v: &str) -> Self {
        ImageId::Str(v.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BoundingBox,
    /// Crowd regions: detections matched here are dropped from evaluation.
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// COCO size buckets: `a < 32²`, `32² <= a < 96²`, `a >= 96²`.
    pub fn from_area(area: f64) -> Self {
        if area < SMALL_AREA {
            SizeClass::Small
        } else if area < MEDIUM_AREA {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            SizeClass::Small => "S",
            SizeClass::Medium => "M",
            SizeClass::Large => "L",
        }
    }
}

/// One evaluated detection: its score, the similarity to the ground-truth box
/// it matched (0 when unmatched) and the linked correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub score: f64,
    pub similarity: f64,
    pub correctness: f64,
    pub matched: bool,
    pub size_class: SizeClass,
    /// Index of the matched box in the ground-truth input slice.
    pub gt_index: Option<usize>,
}

impl MatchedSample {
    pub fn calibration_sample(&self) -> CalibrationSample {
        CalibrationSample {
            score: self.score,
            correctness: self.correctness,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Minimum similarity for a detection to match a ground-truth box.
    pub match_threshold: f64,
    /// Detections scoring below this are discarded before matching.
    pub score_threshold: f64,
    pub link: LinkSpec,
    pub similarity: Similarity,
    /// When set, detections with categories outside this set are rejected.
    pub categories: Option<BTreeSet<CategoryId>>,
}

impl MatchConfig {
    pub fn new(match_threshold: f64, score_threshold: f64, link: LinkSpec) -> Result<Self> {
        let cfg = Self {
            match_threshold,
            score_threshold,
            link,
            similarity: Similarity::Iou,
            categories: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Threshold link at `tau` with matching at the same `tau`.
    pub fn threshold(tau: f64, score_threshold: f64) -> Result<Self> {
        Self::new(tau, score_threshold, LinkSpec::threshold(tau)?)
    }

    /// Continuous link with the matching floor [`CONTINUOUS_MATCH_FLOOR`].
    pub fn continuous(link: LinkSpec, score_threshold: f64) -> Result<Self> {
        Self::new(CONTINUOUS_MATCH_FLOOR, score_threshold, link)
    }

    pub fn with_categories(mut self, categories: BTreeSet<CategoryId>) -> Self {
        self.categories = Some(categories);
        self
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.match_threshold > 0.0 && self.match_threshold <= 1.0) {
            return Err(Error::config(format!(
                "match threshold {} must lie in (0, 1]",
                self.match_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::config(format!(
                "score threshold {} must lie in [0, 1)",
                self.score_threshold
            )));
        }
        Ok(())
    }
}

/// Greedily matches detections to ground truth within each (image, category).
///
/// Detections are visited by descending score (input order breaks ties) and
/// take the free ground-truth box of highest similarity, if that similarity
/// reaches the match threshold. Detections landing on ignore-flagged boxes are
/// removed. Output is sorted by image, category and descending score.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    cfg: &MatchConfig,
) -> Result<Vec<MatchedSample>> {
    cfg.validate()?;
    if let Some(categories) = &cfg.categories {
        if let Some((index, det)) = detections
            .iter()
            .enumerate()
            .find(|(_, d)| !categories.contains(&d.category_id))
        {
            return Err(Error::UnknownCategory {
                index,
                category: det.category_id,
            });
        }
    }
    for (i, d) in detections.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::OutOfRange(format!(
                "detection {i} has score {} outside [0, 1]",
                d.score
            )));
        }
    }

    type Group<'a> = (Vec<usize>, Vec<usize>);
    let mut groups: BTreeMap<(&ImageId, CategoryId), Group> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        if d.score >= cfg.score_threshold {
            groups
                .entry((&d.image_id, d.category_id))
                .or_default()
                .0
                .push(i);
        }
    }
    for (j, g) in ground_truth.iter().enumerate() {
        if let Some(group) = groups.get_mut(&(&g.image_id, g.category_id)) {
            group.1.push(j);
        }
    }

    let mut samples: Vec<(usize, MatchedSample)> = groups
        .into_par_iter()
        .flat_map_iter(|(_, (dets, gts))| match_group(detections, ground_truth, dets, &gts, cfg))
        .collect();
    samples.sort_by(|(ia, a), (ib, b)| {
        a.image_id
            .cmp(&b.image_id)
            .then(a.category_id.cmp(&b.category_id))
            .then(b.score.total_cmp(&a.score))
            .then(ia.cmp(ib))
    });
    Ok(samples.into_iter().map(|(_, s)| s).collect())
}

fn match_group(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    mut dets: Vec<usize>,
    gts: &[usize],
    cfg: &MatchConfig,
) -> Vec<(usize, MatchedSample)> {
    dets.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for di in dets {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (slot, &gj) in gts.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let sim = cfg.similarity.measure(&det.bbox, &ground_truth[gj].bbox);
            if sim >= cfg.match_threshold && best.is_none_or(|(_, b)| sim > b) {
                best = Some((slot, sim));
            }
        }
        let sample = match best {
            Some((slot, sim)) => {
                taken[slot] = true;
                let gt = &ground_truth[gts[slot]];
                if gt.ignore {
                    continue;
                }
                MatchedSample {
                    image_id: det.image_id.clone(),
                    category_id: det.category_id,
                    score: det.score,
                    similarity: sim,
                    correctness: cfg.link.apply(sim),
                    matched: true,
                    size_class: SizeClass::from_area(gt.bbox.area()),
                    gt_index: Some(gts[slot]),
                }
            }
            None => MatchedSample {
                image_id: det.image_id.clone(),
                category_id: det.category_id,
                score: det.score,
                similarity: 0.0,
                correctness: cfg.link.apply(0.0),
                matched: false,
                size_class: SizeClass::from_area(det.bbox.area()),
                gt_index: None,
            },
        };
        out.push((di, sample));
    }
    out
}

/// Splits samples into the three size buckets; every bucket is present.
pub fn partition_by_size(samples: &[MatchedSample]) -> BTreeMap<SizeClass, Vec<MatchedSample>> {
    let mut parts: BTreeMap<SizeClass, Vec<MatchedSample>> =
        SizeClass::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for s in samples {
        parts.entry(s.size_class).or_default().push(s.clone());
    }
    parts
}
