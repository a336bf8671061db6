//! Synthetic OCT-VF exams with a known structure-function law.
//!
//! Each ring image is a dark background with one bright horizontal band
//! whose per-column thickness follows the damage of the VF sector mapped to
//! that column's circumpapillary angle. Thresholds come from a logistic law
//! in normalized thickness, so the rendering can be inverted exactly.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{write_container, ExamPair, OctRing, RingDiameter};
use crate::error::{ContainerError, VfError};
use crate::raster::RasterImage;
use crate::rng::{rng_for, TAG_SYNTH};
use crate::vf::{grid_24_2, mirror_exam, Eye, Sector, SectorMap, VfExam, ACTIVE_POINTS};

const BACKGROUND: f64 = 0.1;
const BAND: f64 = 0.8;
const BAND_TOP: f64 = 0.15;
/// Upper bound of the angular thickness profile.
const PROFILE_MAX: f64 = 1.4301;
/// Lower bound of the angular thickness profile.
const PROFILE_MIN: f64 = 0.57;
const EXAM_INTERVAL_S: i64 = 180 * 86_400;
const FIRST_EXAM_TIME: i64 = 1_500_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub exams_per_patient: usize,
    pub ring_width: usize,
    pub ring_height: usize,
    pub slo_size: usize,
    /// Undamaged band thickness of the 3.5, 4.1 and 4.7 mm rings as a
    /// fraction of image height.
    pub base_thickness: [f64; 3],
    /// Normalized thickness left in a fully damaged sector.
    pub min_thickness: f64,
    /// Maximum damage per sector, in `Sector::ALL` order.
    pub sector_thinning: [f64; 6],
    pub ceiling_db: f64,
    pub floor_db: f64,
    pub slope: f64,
    pub midpoint: f64,
    pub noise_db: f64,
    pub noise_pixel: f64,
    pub unreliable_fraction: f64,
    /// Multiplier on `noise_db` for exams that fail the reliability filter.
    pub unreliable_noise_factor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 300,
            exams_per_patient: 2,
            ring_width: 192,
            ring_height: 128,
            slo_size: 128,
            base_thickness: [0.22, 0.19, 0.16],
            min_thickness: 0.3,
            sector_thinning: [1.0; 6],
            ceiling_db: 32.0,
            floor_db: 0.0,
            slope: 8.0,
            midpoint: 0.55,
            noise_db: 1.0,
            noise_pixel: 0.03,
            unreliable_fraction: 0.1,
            unreliable_noise_factor: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Image sizes used by the clinical device.
    pub fn full_size() -> SynthConfig {
        SynthConfig { ring_width: 768, ring_height: 496, slo_size: 768, ..Default::default() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_patients == 0 || self.exams_per_patient == 0 {
            v.push("synth: n_patients and exams_per_patient must be >= 1".into());
        }
        if self.ring_width < 6 || self.ring_height < 8 || self.slo_size < 8 {
            v.push(format!(
                "synth: images {}x{} / {} too small (min 6x8 rings, 8 SLO)",
                self.ring_width, self.ring_height, self.slo_size
            ));
        }
        for (i, &b) in self.base_thickness.iter().enumerate() {
            if !(b > 0.0) || BAND_TOP + b * PROFILE_MAX > 1.0 {
                v.push(format!("synth: base_thickness[{i}]={b} must be > 0 and keep the band inside the image"));
            }
        }
        if !(self.min_thickness > 0.0 && self.min_thickness < 1.0) {
            v.push(format!("synth: min_thickness {} not in (0, 1)", self.min_thickness));
        }
        let thinnest = self.base_thickness.iter().copied().fold(f64::INFINITY, f64::min)
            * self.min_thickness
            * PROFILE_MIN
            * self.ring_height as f64;
        if thinnest < 1.0 {
            v.push(format!("synth: thinnest band is {thinnest:.2} px, must stay >= 1 px"));
        }
        if self.sector_thinning.iter().any(|a| !(0.0..=1.0).contains(a)) {
            v.push("synth: sector_thinning values must lie in [0, 1]".into());
        }
        if !(self.ceiling_db <= 40.0) {
            v.push(format!("synth: ceiling_db {} must be <= 40", self.ceiling_db));
        }
        if !(self.floor_db >= -1.0 && self.floor_db < self.ceiling_db) {
            v.push(format!("synth: floor_db {} must be >= -1 and below the ceiling", self.floor_db));
        }
        if !(self.slope > 0.0) {
            v.push(format!("synth: slope {} must be > 0", self.slope));
        }
        if !(self.noise_db >= 0.0 && self.noise_pixel >= 0.0 && self.unreliable_noise_factor >= 0.0) {
            v.push("synth: noise parameters must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.unreliable_fraction) {
            v.push(format!("synth: unreliable_fraction {} not in [0, 1]", self.unreliable_fraction));
        }
        v
    }

    fn logistic(&self, t: f64) -> f64 {
        1.0 / (1.0 + (-self.slope * (t - self.midpoint)).exp())
    }

    /// Fraction of the dynamic range at normalized thickness `t`
    /// (0 at `min_thickness`, 1 at full thickness).
    pub fn sensitivity_fraction(&self, t: f64) -> f64 {
        let lo = self.logistic(self.min_thickness);
        let hi = self.logistic(1.0);
        ((self.logistic(t.clamp(self.min_thickness, 1.0)) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Noise-free threshold in dB.
    pub fn threshold_db(&self, t: f64) -> f64 {
        self.floor_db + (self.ceiling_db - self.floor_db) * self.sensitivity_fraction(t)
    }

    pub fn normalized_thickness(&self, damage: f64) -> f64 {
        self.min_thickness + (1.0 - damage.clamp(0.0, 1.0)) * (1.0 - self.min_thickness)
    }

    fn exam_count(&self) -> usize {
        self.n_patients * self.exams_per_patient
    }
}

/// Circumpapillary angle (degrees) of column `c` in an image `width` wide.
pub fn column_angle(c: usize, width: usize) -> f64 {
    360.0 * (c as f64 + 0.5) / width as f64
}

/// VF sector whose damage thins the nerve fibres at `angle` degrees
/// (right eye).
pub fn sector_at_angle(angle: f64) -> Sector {
    let a = angle.rem_euclid(360.0);
    if !(40.0..310.0).contains(&a) {
        Sector::Central
    } else if a < 80.0 {
        Sector::Inferior
    } else if a < 120.0 {
        Sector::InferiorNasal
    } else if a < 230.0 {
        Sector::Temporal
    } else if a < 270.0 {
        Sector::SuperiorNasal
    } else {
        Sector::Superior
    }
}

/// Angular modulation of the healthy band (thicker superior/inferior).
pub fn band_profile(angle: f64) -> f64 {
    let r = angle.to_radians();
    1.0 + 0.35 * (2.0 * (r - std::f64::consts::FRAC_PI_2)).cos() - 0.08 * r.sin()
}

fn sector_slot(s: Sector) -> usize {
    Sector::ALL.iter().position(|&x| x == s).expect("sector listed in ALL")
}

/// Generating parameters of one exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamTruth {
    pub exam_index: usize,
    pub patient_id: u32,
    pub eye: Eye,
    pub severity: f64,
    pub progression_rate: f64,
    pub reliable: bool,
    /// Per-sector damage in `Sector::ALL` order.
    pub damage: [f64; 6],
    pub md: f64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub exams: Vec<ExamPair>,
    pub truth: Vec<ExamTruth>,
}

impl SynthDataset {
    pub fn container_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        write_container(&self.exams)
    }

    pub fn truth_csv(&self) -> String {
        let mut s = String::from("exam_index,patient_id,eye,severity,progression_rate,reliable");
        for sec in Sector::ALL {
            let _ = write!(s, ",damage_{}", sec.label().replace(' ', "_").to_ascii_lowercase());
        }
        s.push_str(",md\n");
        for t in &self.truth {
            let eye = if t.eye == Eye::Od { "OD" } else { "OS" };
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                t.exam_index, t.patient_id, eye, t.severity, t.progression_rate, t.reliable as u8
            );
            for d in t.damage {
                let _ = write!(s, ",{d}");
            }
            let _ = writeln!(s, ",{}", t.md);
        }
        s
    }
}

struct Patient {
    eye: Eye,
    severity: f64,
    rate: f64,
    weights: [f64; 6],
}

fn draw_patient(config: &SynthConfig, patient: usize) -> Patient {
    let mut rng = rng_for(&[TAG_SYNTH, config.seed, patient as u64]);
    let eye = if rng.random::<bool>() { Eye::Od } else { Eye::Os };
    let severity = rng.random::<f64>().powf(1.5);
    let rate = rng.random_range(0.0..0.15);
    // one hemifield tends to be hit harder
    let superior_bias = rng.random_range(0.6..1.4);
    let mut weights = [0.0; 6];
    for (k, s) in Sector::ALL.iter().enumerate() {
        let hemi = match s {
            Sector::Superior | Sector::SuperiorNasal => superior_bias,
            Sector::Inferior | Sector::InferiorNasal => 2.0 - superior_bias,
            _ => 1.0,
        };
        weights[k] = rng.random_range(0.5..1.2) * hemi;
    }
    Patient { eye, severity, rate, weights }
}

fn render_ring(config: &SynthConfig, ring: usize, damage: &[f64; 6], noise: &mut impl FnMut() -> f64) -> RasterImage {
    let (w, h) = (config.ring_width, config.ring_height);
    let hf = h as f64;
    let top = BAND_TOP * hf;
    let mut px = vec![0.0f32; w * h];
    for c in 0..w {
        let a = column_angle(c, w);
        let t = config.normalized_thickness(damage[sector_slot(sector_at_angle(a))]);
        let bottom = top + config.base_thickness[ring] * hf * band_profile(a) * t;
        for y in 0..h {
            let (y0, y1) = (y as f64, y as f64 + 1.0);
            let cover = (y1.min(bottom) - y0.max(top)).max(0.0);
            let v = BACKGROUND + (BAND - BACKGROUND) * cover + noise();
            px[y * w + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    RasterImage::from_trusted(w, h, px)
}

fn render_slo(config: &SynthConfig, mean_damage: f64, noise: &mut impl FnMut() -> f64) -> RasterImage {
    let n = config.slo_size;
    let c = n as f64 / 2.0;
    let disc = 0.18 * n as f64;
    let cup = disc * (0.3 + 0.5 * mean_damage);
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let r = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
            let base = if r < cup {
                0.95
            } else if r < disc {
                0.6
            } else {
                0.2 + 0.1 * (-(r - disc) / disc).exp()
            };
            px.push((base + noise()).clamp(0.0, 1.0) as f32);
        }
    }
    RasterImage::from_trusted(n, n, px)
}

fn generate_exam(config: &SynthConfig, patient: usize, visit: usize, p: &Patient) -> Result<(ExamPair, ExamTruth), VfError> {
    let mut rng = rng_for(&[TAG_SYNTH, config.seed, patient as u64, visit as u64 + 1]);
    let g = (p.severity + p.rate * visit as f64).min(1.0);
    let mut damage = [0.0; 6];
    for k in 0..6 {
        damage[k] = (g * p.weights[k]).clamp(0.0, 1.0) * config.sector_thinning[k];
    }
    let reliable = rng.random::<f64>() >= config.unreliable_fraction;
    let noise_db = if reliable { config.noise_db } else { config.noise_db * config.unreliable_noise_factor };
    let px_normal = Normal::new(0.0, config.noise_pixel).expect("noise_pixel >= 0");
    let db_normal = Normal::new(0.0, noise_db).expect("noise_db >= 0");

    let mut pix_noise = || if config.noise_pixel > 0.0 { px_normal.sample(&mut rng) } else { 0.0 };
    let rings: Vec<OctRing> = RingDiameter::ALL
        .iter()
        .enumerate()
        .map(|(i, &d)| OctRing { diameter: d, image: render_ring(config, i, &damage, &mut pix_noise) })
        .collect();
    let mean_damage = damage.iter().sum::<f64>() / 6.0;
    let slo = render_slo(config, mean_damage, &mut pix_noise);

    let sectors = SectorMap::bundled();
    let thresholds: Vec<f32> = (0..ACTIVE_POINTS)
        .map(|i| {
            let t = config.normalized_thickness(damage[sector_slot(sectors.sector_of(i))]);
            let n = if noise_db > 0.0 { db_normal.sample(&mut rng) } else { 0.0 };
            (config.threshold_db(t) + n).clamp(-1.0, 50.0) as f32
        })
        .collect();
    let md = thresholds.iter().map(|&v| v as f64 - config.ceiling_db).sum::<f64>() / ACTIVE_POINTS as f64;
    let (fp, fnr, fl) = if reliable {
        (rng.random_range(0.0..0.12), rng.random_range(0.0..0.25), rng.random_range(0.0..0.15))
    } else {
        (rng.random_range(0.16..0.4), rng.random_range(0.0..0.25), rng.random_range(0.0..0.15))
    };
    let exam_index = patient * config.exams_per_patient + visit;
    let vf = VfExam::new(
        thresholds,
        md as f32,
        fp as f32,
        fnr as f32,
        fl as f32,
        Eye::Od,
        patient as u32 + 1,
        FIRST_EXAM_TIME + visit as i64 * EXAM_INTERVAL_S,
    )?;
    let od = ExamPair::new(rings, slo, vf).expect("three distinct rings");
    let exam = match p.eye {
        Eye::Od => od,
        Eye::Os => left_eye(&od)?,
    };
    let truth = ExamTruth {
        exam_index,
        patient_id: patient as u32 + 1,
        eye: p.eye,
        severity: p.severity,
        progression_rate: p.rate,
        reliable,
        damage,
        md,
    };
    Ok((exam, truth))
}

fn left_eye(od: &ExamPair) -> Result<ExamPair, VfError> {
    let vf = mirror_exam(&od.vf, &grid_24_2())?;
    let rings = od
        .rings()
        .iter()
        .map(|r| OctRing { diameter: r.diameter, image: r.image.flipped_horizontal() })
        .collect();
    Ok(ExamPair::new(rings, od.slo.flipped_horizontal(), vf).expect("rings unchanged"))
}

/// Generates every exam. Patients are independent streams, so the result
/// does not depend on the thread count.
pub fn generate_dataset(config: &SynthConfig) -> Result<SynthDataset, String> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(v.join("; "));
    }
    let pairs: Vec<(ExamPair, ExamTruth)> = (0..config.n_patients)
        .into_par_iter()
        .map(|pi| {
            let p = draw_patient(config, pi);
            (0..config.exams_per_patient).map(|j| generate_exam(config, pi, j, &p)).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, VfError>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .flatten()
        .collect();
    debug_assert_eq!(pairs.len(), config.exam_count());
    let (exams, truth) = pairs.into_iter().unzip();
    Ok(SynthDataset { exams, truth })
}

/// Container bytes plus `truth.csv` text.
pub fn generate_container(config: &SynthConfig) -> Result<(Vec<u8>, String), String> {
    let ds = generate_dataset(config)?;
    let bytes = ds.container_bytes().map_err(|e| e.to_string())?;
    Ok((bytes, ds.truth_csv()))
}

/// Band thickness of every column in units of the healthy thickness.
fn measured_thickness(config: &SynthConfig, ring: usize, image: &RasterImage) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    (0..w)
        .map(|c| {
            let sum: f64 = (0..h).map(|y| image.get(c, y) as f64).sum();
            let px = (sum - BACKGROUND * h as f64) / (BAND - BACKGROUND);
            px / (config.base_thickness[ring] * h as f64 * band_profile(column_angle(c, w)))
        })
        .collect()
}

/// Reference predictor: measures the band on all three rings, averages
/// per sector and applies the generating law. Output follows the exam's
/// own eye layout.
pub fn oracle_predictor(config: &SynthConfig, exam: &ExamPair) -> Vec<f64> {
    let grid = grid_24_2();
    let right = exam.to_right_eye(&grid).expect("valid exam mirrors");
    let mut sum = [0.0; 6];
    let mut count = [0usize; 6];
    for (i, d) in RingDiameter::ALL.iter().enumerate() {
        let img = right.ring(*d);
        for (c, t) in measured_thickness(config, i, img).into_iter().enumerate() {
            let k = sector_slot(sector_at_angle(column_angle(c, img.width())));
            sum[k] += t;
            count[k] += 1;
        }
    }
    let sectors = SectorMap::bundled();
    let od: Vec<f32> = (0..ACTIVE_POINTS)
        .map(|i| {
            let k = sector_slot(sectors.sector_of(i));
            let t = if count[k] > 0 { sum[k] / count[k] as f64 } else { 1.0 };
            config.threshold_db(t) as f32
        })
        .collect();
    let out = match exam.vf.eye {
        Eye::Od => od,
        Eye::Os => {
            let e = right.vf.with_thresholds(od.iter().map(|v| v.clamp(-1.0, 50.0)).collect()).expect("in range");
            mirror_exam(&e, &grid).expect("mirror").thresholds().to_vec()
        }
    };
    out.into_iter().map(f64::from).collect()
}
