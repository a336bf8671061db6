//! Patient-level train/validation/test partitioning and the reliability
//! policy applied after the split.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::ExamPair;
use crate::error::IngestError;
use crate::rng::{rng_for, TAG_SPLIT};
use crate::vf::{passes_reliability, ReliabilityLimits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionName {
    Train,
    Val,
    Test,
}

impl PartitionName {
    pub const ALL: [PartitionName; 3] = [PartitionName::Train, PartitionName::Val, PartitionName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            PartitionName::Train => "train",
            PartitionName::Val => "val",
            PartitionName::Test => "test",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.ids", self.as_str())
    }
}

impl fmt::Display for PartitionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PartitionName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(PartitionName::Train),
            "val" | "validation" => Ok(PartitionName::Val),
            "test" => Ok(PartitionName::Test),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// Exam references are positions in the source container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub name: PartitionName,
    pub exam_refs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Partition,
    pub val: Partition,
    pub test: Partition,
}

impl Split {
    pub fn get(&self, name: PartitionName) -> &Partition {
        match name {
            PartitionName::Train => &self.train,
            PartitionName::Val => &self.val,
            PartitionName::Test => &self.test,
        }
    }

    pub fn partitions(&self) -> [&Partition; 3] {
        [&self.train, &self.val, &self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), String> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("split ratios must be finite and non-negative".into());
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("split ratios sum to {}, not 1", r.iter().sum::<f64>()));
        }
        Ok(())
    }
}

/// Patient counts per partition by cumulative floor allocation.
pub fn partition_sizes(patients: usize, ratios: &SplitRatios) -> [usize; 3] {
    // The small slack keeps e.g. 0.29 * 100 from flooring to 28.
    let floor = |x: f64| ((x + 1e-9).floor() as usize).min(patients);
    let n_train = floor(ratios.train * patients as f64);
    let n_train_val = floor((ratios.train + ratios.val) * patients as f64).max(n_train);
    [n_train, n_train_val - n_train, patients - n_train_val]
}

/// Splits exams by patient: distinct patient ids are sorted, shuffled with a
/// generator seeded from `seed`, then cut by cumulative ratio. `patient_ids[i]`
/// is the patient of exam `i`.
pub fn split_by_patient(patient_ids: &[u32], ratios: &SplitRatios, seed: u64) -> Result<Split, IngestError> {
    ratios.validate().map_err(IngestError::Split)?;
    let mut patients: Vec<u32> = patient_ids.to_vec();
    patients.sort_unstable();
    patients.dedup();
    let nonzero = [ratios.train, ratios.val, ratios.test].iter().filter(|&&r| r > 0.0).count();
    if patients.len() < nonzero {
        return Err(IngestError::Split(format!(
            "{} patients cannot fill {nonzero} non-empty partitions",
            patients.len()
        )));
    }
    let mut rng = rng_for(&[TAG_SPLIT, seed]);
    patients.shuffle(&mut rng);

    let [n_train, n_val, _] = partition_sizes(patients.len(), ratios);
    let mut owner: BTreeMap<u32, PartitionName> = BTreeMap::new();
    for (i, &p) in patients.iter().enumerate() {
        let name = if i < n_train {
            PartitionName::Train
        } else if i < n_train + n_val {
            PartitionName::Val
        } else {
            PartitionName::Test
        };
        owner.insert(p, name);
    }
    let refs = |name: PartitionName| Partition {
        name,
        exam_refs: (0..patient_ids.len()).filter(|&i| owner[&patient_ids[i]] == name).collect(),
    };
    Ok(Split {
        train: refs(PartitionName::Train),
        val: refs(PartitionName::Val),
        test: refs(PartitionName::Test),
    })
}

pub fn split_exams(exams: &[ExamPair], ratios: &SplitRatios, seed: u64) -> Result<Split, IngestError> {
    let ids: Vec<u32> = exams.iter().map(|e| e.patient_id()).collect();
    split_by_patient(&ids, ratios, seed)
}

/// Drops unreliable exams from validation and test. Training data is kept
/// whole; unreliable fields act as label noise there.
pub fn apply_reliability_policy(split: &Split, exams: &[ExamPair], limits: &ReliabilityLimits) -> Split {
    let keep = |p: &Partition| Partition {
        name: p.name,
        exam_refs: p
            .exam_refs
            .iter()
            .copied()
            .filter(|&i| passes_reliability(&exams[i].vf, limits))
            .collect(),
    };
    Split { train: split.train.clone(), val: keep(&split.val), test: keep(&split.test) }
}

pub fn write_manifest(path: &Path, refs: &[usize]) -> Result<(), IngestError> {
    let text: String = refs.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

pub fn read_manifest(path: &Path) -> Result<Vec<usize>, IngestError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| IngestError::Row {
                path: path.to_path_buf(),
                row: i + 1,
                message: format!("bad exam reference {l:?}"),
            })
        })
        .collect()
}
