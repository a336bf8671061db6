//! What a model looks at and what it predicts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{ExamPair, RingDiameter};
use crate::raster::RasterImage;
use crate::vf::{VfExam, ACTIVE_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "ring3.5")]
    Ring3_5,
    #[serde(rename = "ring4.1")]
    Ring4_1,
    #[serde(rename = "ring4.7")]
    Ring4_7,
    #[serde(rename = "slo")]
    Slo,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Ring3_5, Modality::Ring4_1, Modality::Ring4_7, Modality::Slo];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ring3_5 => "ring3.5",
            Modality::Ring4_1 => "ring4.1",
            Modality::Ring4_7 => "ring4.7",
            Modality::Slo => "slo",
        }
    }

    pub fn ring(self) -> Option<RingDiameter> {
        match self {
            Modality::Ring3_5 => Some(RingDiameter::Mm3_5),
            Modality::Ring4_1 => Some(RingDiameter::Mm4_1),
            Modality::Ring4_7 => Some(RingDiameter::Mm4_7),
            Modality::Slo => None,
        }
    }

    pub fn image(self, exam: &ExamPair) -> &RasterImage {
        match self.ring() {
            Some(d) => exam.ring(d),
            None => &exam.slo,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?} (expected ring3.5, ring4.1, ring4.7 or slo)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Md,
    Thresholds,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Md => "md",
            Target::Thresholds => "thresholds",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Target::Md => 1,
            Target::Thresholds => ACTIVE_POINTS,
        }
    }

    pub fn values(self, vf: &VfExam) -> Vec<f64> {
        match self {
            Target::Md => vec![vf.md as f64],
            Target::Thresholds => vf.thresholds().iter().map(|&v| v as f64).collect(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" => Ok(Target::Md),
            "thresholds" => Ok(Target::Thresholds),
            other => Err(format!("unknown target {other:?} (expected md or thresholds)")),
        }
    }
}
