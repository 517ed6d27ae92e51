//! Link functions mapping a similarity `L` to a correctness value `z`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The family a [`LinkSpec`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkKind {
    Identity,
    /// Step at `beta`: `z = 1` iff `L >= beta`.
    Threshold { beta: f64 },
    /// Linear ramp from 0 at `alpha` to 1 at `beta`.
    Ramp { alpha: f64, beta: f64 },
    /// `Ramp { alpha: 0.5, beta: 1.0 }`.
    Hinge,
}

/// A validated link function. Construction enforces `alpha < beta` for ramps
/// and `0 < beta <= 1` for thresholds, so [`LinkSpec::apply`] cannot fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    kind: LinkKind,
}

impl LinkSpec {
    pub fn identity() -> Self {
        Self {
            kind: LinkKind::Identity,
        }
    }

    pub fn hinge() -> Self {
        Self {
            kind: LinkKind::Hinge,
        }
    }

    pub fn threshold(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidLink(format!(
                "threshold {beta} must lie in (0, 1]"
            )));
        }
        Ok(Self {
            kind: LinkKind::Threshold { beta },
        })
    }

    /// A ramp with `alpha == beta` is the threshold link and is returned as one.
    pub fn ramp(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidLink(format!(
                "ramp parameters ({alpha}, {beta}) must lie in [0, 1]"
            )));
        }
        if alpha > beta {
            return Err(Error::InvalidLink(format!(
                "ramp requires alpha <= beta, got ({alpha}, {beta})"
            )));
        }
        if alpha == beta {
            return Self::threshold(beta);
        }
        Ok(Self {
            kind: LinkKind::Ramp { alpha, beta },
        })
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    /// True when the link only produces 0 or 1.
    pub fn is_binary(&self) -> bool {
        matches!(self.kind, LinkKind::Threshold { .. })
    }

    pub fn apply(&self, similarity: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => similarity.clamp(0.0, 1.0),
            LinkKind::Threshold { beta } => {
                if similarity >= beta {
                    1.0
                } else {
                    0.0
                }
            }
            LinkKind::Ramp { alpha, beta } => ramp(similarity, alpha, beta),
            LinkKind::Hinge => ramp(similarity, 0.5, 1.0),
        }
    }
}

fn ramp(l: f64, alpha: f64, beta: f64) -> f64 {
    if l <= alpha {
        0.0
    } else if l >= beta {
        1.0
    } else {
        (l - alpha) / (beta - alpha)
    }
}

impl fmt::Display for LinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LinkKind::Identity => write!(f, "identity"),
            LinkKind::Threshold { beta } => write!(f, "threshold:{beta}"),
            LinkKind::Ramp { alpha, beta } => write!(f, "ramp:{alpha}:{beta}"),
            LinkKind::Hinge => write!(f, "hinge"),
        }
    }
}

impl FromStr for LinkSpec {
    type Err = Error;

    /// Parses `identity`, `hinge`, `threshold:<beta>` or `ramp:<alpha>:<beta>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidLink(format!("'{p}' is not a number in link '{s}'")))
        };
        match parts.as_slice() {
            ["identity"] => Ok(Self::identity()),
            ["hinge"] => Ok(Self::hinge()),
            ["threshold", beta] => Self::threshold(num(beta)?),
            ["ramp", alpha, beta] => Self::ramp(num(alpha)?, num(beta)?),
            _ => Err(Error::InvalidLink(format!(
                "cannot parse '{s}' (expected identity, hinge, threshold:<b> or ramp:<a>:<b>)"
            ))),
        }
    }
}

impl Serialize for LinkSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LinkSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
