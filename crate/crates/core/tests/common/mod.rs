#![allow(dead_code)]

use octvf_core::{Eye, ExamPair, OctRing, RasterImage, RingDiameter, VfExam};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> RasterImage {
    RasterImage::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn random_vf<R: Rng>(rng: &mut R, patient_id: u32) -> VfExam {
    let t = (0..52).map(|_| rng.random_range(-1.0f32..=50.0)).collect();
    let eye = if rng.random::<bool>() { Eye::Od } else { Eye::Os };
    VfExam::new(
        t,
        rng.random_range(-30.0f32..5.0),
        rng.random(),
        rng.random(),
        rng.random(),
        eye,
        patient_id,
        rng.random_range(0..2_000_000_000),
    )
    .unwrap()
}

pub fn random_exam<R: Rng>(rng: &mut R, patient_id: u32) -> ExamPair {
    let mut d = RingDiameter::ALL.to_vec();
    d.shuffle(rng);
    let rings = d
        .into_iter()
        .map(|diameter| {
            let (w, h) = (rng.random_range(1..10), rng.random_range(1..7));
            OctRing { diameter, image: random_image(rng, w, h) }
        })
        .collect();
    let s = rng.random_range(1..8);
    ExamPair::new(rings, random_image(rng, s, s), random_vf(rng, patient_id)).unwrap()
}

/// Direct textbook formulas, kept independent of the library code.
pub mod oracle {
    pub fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn r2(y: &[f64], p: &[f64]) -> f64 {
        let m = mean(y);
        let ss_res: f64 = (0..y.len()).map(|i| (y[i] - p[i]).powi(2)).sum();
        let ss_tot: f64 = (0..y.len()).map(|i| (y[i] - m).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    pub fn mae(y: &[f64], p: &[f64]) -> f64 {
        y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
    }
}
