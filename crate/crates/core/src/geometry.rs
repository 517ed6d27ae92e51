//! Axis-aligned boxes and overlap similarities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous pixel coordinates, corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    /// Builds a box from its corners. Degenerate (zero width or height)
    /// boxes are accepted; inverted or non-finite ones are not.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|c| c.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x_max < x_min || y_max < y_min {
            return Err(invalid("max corner lies before min corner"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Converts COCO `[x, y, width, height]` into corner form.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        if width < 0.0 || height < 0.0 {
            return Err(Error::InvalidBox {
                x_min: x,
                y_min: y,
                x_max: x + width,
                y_max: y + height,
                reason: "negative width or height",
            });
        }
        Self::new(x, y, x + width, y + height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. Zero when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)`. Zero when both areas are zero.
pub fn dice(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let total = a.area() + b.area();
    if total <= 0.0 {
        return 0.0;
    }
    (2.0 * a.intersection_area(b) / total).clamp(0.0, 1.0)
}

/// Overlap measure used to score a detection against a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Iou,
    Dice,
}

impl Similarity {
    pub fn measure(self, a: &BoundingBox, b: &BoundingBox) -> f64 {
        match self {
            Similarity::Iou => iou(a, b),
            Similarity::Dice => dice(a, b),
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(Similarity::Iou),
            "dice" => Ok(Similarity::Dice),
            other => Err(Error::config(format!(
                "unknown similarity '{other}' (expected iou or dice)"
            ))),
        }
    }
}
