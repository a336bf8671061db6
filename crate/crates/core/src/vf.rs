//! The 24-2 visual-field grid, exam records, reliability screening,
//! laterality mirroring and the Garway-Heath sector partition.
//!
//! Coordinates are degrees in field view. A right-eye (OD) grid has its
//! blind spot at x = +15 and the two nasal-step points at x = -27; the
//! left-eye (OS) layout is the horizontal mirror image. Both layouts use the
//! same canonical ordering: rows from top (y = +21) to bottom (y = -21),
//! and left to right (ascending x) within a row.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::VfError;

/// Total number of test locations in a 24-2 exam.
pub const GRID_POINTS: usize = 54;
/// Locations left once the two blind-spot points are dropped.
pub const ACTIVE_POINTS: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "OD")]
    Od,
    #[serde(rename = "OS")]
    Os,
}

impl Eye {
    pub fn other(self) -> Eye {
        match self {
            Eye::Od => Eye::Os,
            Eye::Os => Eye::Od,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Eye::Od => 0,
            Eye::Os => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Eye> {
        match code {
            0 => Some(Eye::Od),
            1 => Some(Eye::Os),
            _ => None,
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Eye::Od => "OD",
            Eye::Os => "OS",
        })
    }
}

impl FromStr for Eye {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OD" | "R" | "RIGHT" | "0" => Ok(Eye::Od),
            "OS" | "L" | "LEFT" | "1" => Ok(Eye::Os),
            other => Err(format!("unknown eye {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VfPoint {
    pub x_deg: i32,
    pub y_deg: i32,
    pub blind_spot: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfGrid {
    points: Vec<VfPoint>,
}

/// The canonical right-eye 24-2 layout.
///
/// Index order: rows y = 21, 15, 9, 3, -3, -9, -15, -21; ascending x within
/// each row. Row widths are 4, 6, 8, 9, 9, 8, 6, 4. Slots 25 and 34 hold the
/// blind spot at (15, 3) and (15, -3).
pub fn grid_24_2() -> VfGrid {
    let mut points = Vec::with_capacity(GRID_POINTS);
    for y in [21i32, 15, 9, 3, -3, -9, -15, -21] {
        let xs: &[i32] = match y.abs() {
            21 => &[-9, -3, 3, 9],
            15 => &[-15, -9, -3, 3, 9, 15],
            9 => &[-21, -15, -9, -3, 3, 9, 15, 21],
            _ => &[-27, -21, -15, -9, -3, 3, 9, 15, 21],
        };
        for &x in xs {
            points.push(VfPoint {
                x_deg: x,
                y_deg: y,
                blind_spot: x == 15 && y.abs() == 3,
            });
        }
    }
    VfGrid { points }
}

impl VfGrid {
    /// Builds a grid from explicit points, checking coordinate uniqueness.
    pub fn new(points: Vec<VfPoint>) -> Result<VfGrid, VfError> {
        for (i, p) in points.iter().enumerate() {
            if points[..i].iter().any(|q| q.x_deg == p.x_deg && q.y_deg == p.y_deg) {
                return Err(VfError::SectorTable {
                    row: i,
                    message: format!("duplicate grid point ({}, {})", p.x_deg, p.y_deg),
                });
            }
        }
        Ok(VfGrid { points })
    }

    pub fn points(&self) -> &[VfPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Slot indices of non-blind-spot points, in grid order.
    pub fn active_slots(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| !self.points[i].blind_spot).collect()
    }

    pub fn active_points(&self) -> Vec<VfPoint> {
        self.points.iter().copied().filter(|p| !p.blind_spot).collect()
    }

    pub fn active_count(&self) -> usize {
        self.points.iter().filter(|p| !p.blind_spot).count()
    }

    /// Active index of the point at `(x, y)`, if any.
    pub fn active_index_of(&self, x: i32, y: i32) -> Option<usize> {
        self.active_points()
            .iter()
            .position(|p| p.x_deg == x && p.y_deg == y)
    }

    /// The horizontal mirror image, re-sorted into canonical order. The
    /// blind spot moves with its point.
    pub fn mirrored(&self) -> VfGrid {
        let mut points: Vec<VfPoint> = self
            .points
            .iter()
            .map(|p| VfPoint { x_deg: -p.x_deg, ..*p })
            .collect();
        points.sort_by(|a, b| b.y_deg.cmp(&a.y_deg).then(a.x_deg.cmp(&b.x_deg)));
        VfGrid { points }
    }

    /// Layout used by exams of `eye`, taking `self` as the right-eye layout.
    pub fn for_eye(&self, eye: Eye) -> VfGrid {
        match eye {
            Eye::Od => self.clone(),
            Eye::Os => self.mirrored(),
        }
    }

    /// Spreads active values over all slots, filling blind-spot slots with NaN.
    pub fn expand(&self, active: &[f32]) -> Vec<f32> {
        let mut it = active.iter();
        self.points
            .iter()
            .map(|p| if p.blind_spot { f32::NAN } else { *it.next().unwrap_or(&f32::NAN) })
            .collect()
    }

    /// Drops blind-spot slots.
    pub fn compress(&self, slots: &[f32]) -> Vec<f32> {
        self.points
            .iter()
            .zip(slots)
            .filter(|(p, _)| !p.blind_spot)
            .map(|(_, &v)| v)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityLimits {
    pub fp_max: f32,
    pub fn_max: f32,
    pub fl_max: f32,
}

impl Default for ReliabilityLimits {
    fn default() -> Self {
        ReliabilityLimits { fp_max: 0.15, fn_max: 0.33, fl_max: 0.20 }
    }
}

/// One 24-2 exam. Thresholds are aligned to the active points of the layout
/// for `eye` (see [`VfGrid::for_eye`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfExam {
    thresholds: Vec<f32>,
    pub md: f32,
    pub false_pos: f32,
    pub false_neg: f32,
    pub fixation_loss: f32,
    pub eye: Eye,
    pub patient_id: u32,
    /// Unix seconds.
    pub exam_time: i64,
}

impl VfExam {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        thresholds: Vec<f32>,
        md: f32,
        false_pos: f32,
        false_neg: f32,
        fixation_loss: f32,
        eye: Eye,
        patient_id: u32,
        exam_time: i64,
    ) -> Result<VfExam, VfError> {
        if thresholds.len() != ACTIVE_POINTS {
            return Err(VfError::ThresholdCount { expected: ACTIVE_POINTS, got: thresholds.len() });
        }
        for (index, &value) in thresholds.iter().enumerate() {
            if !(-1.0..=50.0).contains(&value) {
                return Err(VfError::ThresholdRange { index, value });
            }
        }
        if !md.is_finite() {
            return Err(VfError::NonFiniteMd);
        }
        for (name, value) in [("fp", false_pos), ("fn", false_neg), ("fl", fixation_loss)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(VfError::ReliabilityRange { name, value });
            }
        }
        Ok(VfExam { thresholds, md, false_pos, false_neg, fixation_loss, eye, patient_id, exam_time })
    }

    pub fn thresholds(&self) -> &[f32] {
        &self.thresholds
    }

    /// Replaces the thresholds, keeping every other field.
    pub fn with_thresholds(&self, thresholds: Vec<f32>) -> Result<VfExam, VfError> {
        VfExam::new(
            thresholds,
            self.md,
            self.false_pos,
            self.false_neg,
            self.fixation_loss,
            self.eye,
            self.patient_id,
            self.exam_time,
        )
    }
}

/// True iff no reliability index exceeds its limit (limits are inclusive).
pub fn passes_reliability(exam: &VfExam, limits: &ReliabilityLimits) -> bool {
    exam.false_pos <= limits.fp_max
        && exam.false_neg <= limits.fn_max
        && exam.fixation_loss <= limits.fl_max
}

/// Re-expresses an exam as seen from the other eye: the value measured at
/// `(x, y)` moves to `(-x, y)` in the opposite layout. `grid` is the
/// right-eye layout.
pub fn mirror_exam(exam: &VfExam, grid: &VfGrid) -> Result<VfExam, VfError> {
    let source = grid.for_eye(exam.eye);
    let target = grid.for_eye(exam.eye.other());
    if source.active_count() != exam.thresholds.len() {
        return Err(VfError::ThresholdCount {
            expected: source.active_count(),
            got: exam.thresholds.len(),
        });
    }
    let source_active = source.active_points();
    let mut out = Vec::with_capacity(exam.thresholds.len());
    for p in target.active_points() {
        let idx = source_active
            .iter()
            .position(|q| q.x_deg == -p.x_deg && q.y_deg == p.y_deg)
            .ok_or(VfError::NotMirrorSymmetric { x: p.x_deg, y: p.y_deg, mx: -p.x_deg })?;
        out.push(exam.thresholds[idx]);
    }
    let mut mirrored = exam.with_thresholds(out)?;
    mirrored.eye = exam.eye.other();
    Ok(mirrored)
}

/// Brings an exam into right-eye orientation (no-op for OD exams).
pub fn to_right_eye(exam: &VfExam, grid: &VfGrid) -> Result<VfExam, VfError> {
    match exam.eye {
        Eye::Od => Ok(exam.clone()),
        Eye::Os => mirror_exam(exam, grid),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Central,
    Temporal,
    Inferior,
    InferiorNasal,
    Superior,
    SuperiorNasal,
}

impl Sector {
    /// Table order used in every sector report.
    pub const ALL: [Sector; 6] = [
        Sector::Central,
        Sector::Temporal,
        Sector::Inferior,
        Sector::InferiorNasal,
        Sector::Superior,
        Sector::SuperiorNasal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Sector::Central => "Central",
            Sector::Temporal => "Temporal",
            Sector::Inferior => "Inferior",
            Sector::InferiorNasal => "Inferior Nasal",
            Sector::Superior => "Superior",
            Sector::SuperiorNasal => "Superior Nasal",
        }
    }

    pub fn parse(label: &str) -> Option<Sector> {
        let key: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Sector::ALL
            .into_iter()
            .find(|s| s.label().replace(' ', "").to_ascii_lowercase() == key)
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Assignment of every active point (right-eye layout) to one sector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorMap {
    assignment: Vec<Sector>,
}

const DEFAULT_SECTORS_CSV: &str = include_str!("../data/sectors.csv");
const DEFAULT_RETEST_CSV: &str = include_str!("../data/retest_ci.csv");

impl SectorMap {
    pub fn new(assignment: Vec<Sector>) -> Result<SectorMap, VfError> {
        if assignment.len() != ACTIVE_POINTS {
            return Err(VfError::UnassignedPoint { index: assignment.len().min(ACTIVE_POINTS) });
        }
        for s in Sector::ALL {
            if !assignment.contains(&s) {
                return Err(VfError::EmptySector(s.label()));
            }
        }
        Ok(SectorMap { assignment })
    }

    /// Bundled right-eye map. Built from the Garway-Heath structure-function
    /// map by eccentricity/quadrant rules; replace it with a site-specific
    /// `sectors.csv` when one is available.
    pub fn bundled() -> SectorMap {
        load_sector_map(DEFAULT_SECTORS_CSV.as_bytes()).expect("bundled sector map is valid")
    }

    pub fn sector_of(&self, active_index: usize) -> Sector {
        self.assignment[active_index]
    }

    pub fn assignment(&self) -> &[Sector] {
        &self.assignment
    }

    /// Active indices belonging to `sector`, ascending.
    pub fn indices(&self, sector: Sector) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == sector).collect()
    }
}

/// Parses a `point_index,sector` CSV into a validated map.
pub fn load_sector_map<R: Read>(reader: R) -> Result<SectorMap, VfError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut slots: Vec<Option<Sector>> = vec![None; ACTIVE_POINTS];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| VfError::SectorTable { row, message: e.to_string() })?;
        if rec.len() < 2 {
            return Err(VfError::SectorTable { row, message: "expected point_index,sector".into() });
        }
        let index: usize = rec[0]
            .parse()
            .map_err(|_| VfError::SectorTable { row, message: format!("bad point index {:?}", &rec[0]) })?;
        if index >= ACTIVE_POINTS {
            return Err(VfError::SectorTable { row, message: format!("point index {index} out of range") });
        }
        let sector = Sector::parse(&rec[1])
            .ok_or_else(|| VfError::SectorTable { row, message: format!("unknown sector {:?}", &rec[1]) })?;
        if slots[index].replace(sector).is_some() {
            return Err(VfError::SectorTable { row, message: format!("point index {index} assigned twice") });
        }
    }
    let mut assignment = Vec::with_capacity(ACTIVE_POINTS);
    for (index, s) in slots.into_iter().enumerate() {
        assignment.push(s.ok_or(VfError::UnassignedPoint { index })?);
    }
    SectorMap::new(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetestRow {
    pub measured_db: f64,
    pub lower_db: f64,
    pub upper_db: f64,
}

/// 90% test-retest limits per measured sensitivity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetestCiTable {
    rows: Vec<RetestRow>,
}

impl RetestCiTable {
    pub fn new(rows: Vec<RetestRow>) -> Result<RetestCiTable, VfError> {
        for (i, r) in rows.iter().enumerate() {
            let row = i + 1;
            if !(r.measured_db.is_finite() && r.lower_db.is_finite() && r.upper_db.is_finite()) {
                return Err(VfError::RetestTable { row, message: "non-finite value".into() });
            }
            if r.lower_db > r.upper_db {
                return Err(VfError::RetestTable { row, message: "lower limit exceeds upper limit".into() });
            }
            if i > 0 && rows[i - 1].measured_db >= r.measured_db {
                return Err(VfError::RetestTable {
                    row,
                    message: "measured levels must be unique and ascending".into(),
                });
            }
        }
        Ok(RetestCiTable { rows })
    }

    /// Illustrative default with the usual shape (narrow limits at high
    /// sensitivity, wide at low). Not a published table; supply measured
    /// limits through `retest_ci.csv` for real comparisons.
    pub fn bundled() -> RetestCiTable {
        load_retest_table(DEFAULT_RETEST_CSV.as_bytes()).expect("bundled retest table is valid")
    }

    pub fn rows(&self) -> &[RetestRow] {
        &self.rows
    }

    /// Row with the measured level closest to `level_db` (lower level wins ties).
    pub fn nearest(&self, level_db: f64) -> Option<&RetestRow> {
        self.rows.iter().min_by(|a, b| {
            (a.measured_db - level_db)
                .abs()
                .total_cmp(&(b.measured_db - level_db).abs())
        })
    }
}

/// Parses a `measured_db,lower_db,upper_db` CSV.
pub fn load_retest_table<R: Read>(reader: R) -> Result<RetestCiTable, VfError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| VfError::RetestTable { row, message: e.to_string() })?;
        let field = |k: usize| -> Result<f64, VfError> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| VfError::RetestTable { row, message: format!("column {k} is not a number") })
        };
        rows.push(RetestRow { measured_db: field(0)?, lower_db: field(1)?, upper_db: field(2)? });
    }
    RetestCiTable::new(rows)
}
