//! COCO-style JSON ingestion.
//!
//! Detections follow the COCO results format: an array of
//! `{image_id, category_id, bbox: [x, y, w, h], score}`. Ground truth is the
//! subset `{images: [{id}], annotations: [{image_id, category_id, bbox,
//! iscrowd}], categories: [{id, name}]}` of a COCO annotation file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::matching::{CategoryId, Detection, GroundTruthBox, ImageId};

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDetections {
    pub detections: Vec<Detection>,
    /// Scores that fell outside `[0, 1]` and were clamped.
    pub clamped_scores: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub ground_truth: Vec<GroundTruthBox>,
    pub categories: BTreeMap<CategoryId, String>,
    pub images: BTreeSet<ImageId>,
}

/// Detections and annotations that reference a common category vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthBox>,
    pub categories: BTreeMap<CategoryId, String>,
    pub clamped_scores: usize,
}

impl DatasetBundle {
    pub fn load(detections: &Path, ground_truth: &Path) -> Result<Self> {
        let dets = load_detections(detections)?;
        let gts = load_ground_truth(ground_truth)?;
        for (index, d) in dets.detections.iter().enumerate() {
            if !gts.categories.contains_key(&d.category_id) {
                return Err(Error::Record {
                    path: detections.display().to_string(),
                    index,
                    message: format!("unknown category_id {}", d.category_id),
                });
            }
        }
        Ok(Self {
            detections: dets.detections,
            ground_truth: gts.ground_truth,
            categories: gts.categories,
            clamped_scores: dets.clamped_scores,
        })
    }

    pub fn category_ids(&self) -> BTreeSet<CategoryId> {
        self.categories.keys().copied().collect()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_detections(path: &Path) -> Result<LoadedDetections> {
    parse_detections(&read(path)?, &path.display().to_string())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthSet> {
    parse_ground_truth(&read(path)?, &path.display().to_string())
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct RawImage {
    id: ImageId,
}

#[derive(Deserialize)]
struct RawCategory {
    id: CategoryId,
    #[serde(default)]
    name: String,
}

fn parse_json(text: &str, path: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn records<T: for<'de> Deserialize<'de>>(items: Vec<Value>, path: &str, what: &str) -> Result<Vec<T>> {
    items
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            serde_json::from_value(v).map_err(|e| Error::Record {
                path: path.to_owned(),
                index,
                message: format!("{what}: {e}"),
            })
        })
        .collect()
}

fn to_box(bbox: [f64; 4], path: &str, index: usize) -> Result<BoundingBox> {
    let [x, y, w, h] = bbox;
    BoundingBox::from_xywh(x, y, w, h).map_err(|e| Error::Record {
        path: path.to_owned(),
        index,
        message: e.to_string(),
    })
}

pub fn parse_detections(text: &str, path: &str) -> Result<LoadedDetections> {
    let items = match parse_json(text, path)? {
        Value::Array(items) => items,
        _ => {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: "expected a JSON array of detections".to_owned(),
            })
        }
    };
    let raw: Vec<RawDetection> = records(items, path, "detection")?;
    let mut clamped_scores = 0;
    let detections = raw
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            if !r.score.is_finite() {
                return Err(Error::Record {
                    path: path.to_owned(),
                    index,
                    message: format!("score {} is not finite", r.score),
                });
            }
            let score = r.score.clamp(0.0, 1.0);
            if score != r.score {
                clamped_scores += 1;
            }
            Ok(Detection {
                image_id: r.image_id,
                category_id: r.category_id,
                bbox: to_box(r.bbox, path, index)?,
                score,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LoadedDetections {
        detections,
        clamped_scores,
    })
}

pub fn parse_ground_truth(text: &str, path: &str) -> Result<GroundTruthSet> {
    let mut root = match parse_json(text, path)? {
        Value::Object(map) => map,
        _ => {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: "expected a COCO annotation object".to_owned(),
            })
        }
    };
    let mut section = |key: &str| -> Result<Vec<Value>> {
        match root.remove(key) {
            Some(Value::Array(items)) => Ok(items),
            Some(_) => Err(Error::Parse {
                path: path.to_owned(),
                message: format!("'{key}' must be an array"),
            }),
            None => Err(Error::Parse {
                path: path.to_owned(),
                message: format!("missing '{key}'"),
            }),
        }
    };
    let images: Vec<RawImage> = records(section("images")?, path, "image")?;
    let annotations: Vec<RawAnnotation> = records(section("annotations")?, path, "annotation")?;
    let categories: Vec<RawCategory> = records(section("categories")?, path, "category")?;

    let images: BTreeSet<ImageId> = images.into_iter().map(|i| i.id).collect();
    let categories: BTreeMap<CategoryId, String> =
        categories.into_iter().map(|c| (c.id, c.name)).collect();
    let ground_truth = annotations
        .into_iter()
        .enumerate()
        .map(|(index, a)| {
            let fail = |message: String| Error::Record {
                path: path.to_owned(),
                index,
                message,
            };
            if !images.contains(&a.image_id) {
                return Err(fail(format!("annotation references unknown image_id {}", a.image_id)));
            }
            if !categories.contains_key(&a.category_id) {
                return Err(fail(format!(
                    "annotation references unknown category_id {}",
                    a.category_id
                )));
            }
            Ok(GroundTruthBox {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: to_box(a.bbox, path, index)?,
                ignore: a.iscrowd != 0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GroundTruthSet {
        ground_truth,
        categories,
        images,
    })
}
