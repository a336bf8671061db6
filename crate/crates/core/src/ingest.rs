//! Tabular ingestion: `vf.csv` exports plus per-exam image files.
//!
//! `vf.csv` columns: `patient_id,eye,exam_time,md,fp,fn,fl,t01..t54`.
//! Thresholds follow the canonical order of the eye's layout; the two
//! blind-spot columns are left empty. `exam_time` is unix seconds. Printout
//! entries of `<0` (or the sentinel `-1`) are stored as 0 dB.
//!
//! Images for a row live in `<images>/<patient_id>_<eye>_<exam_time>/` as
//! `ring3.5`, `ring4.1`, `ring4.7` and `slo`, each `.png` or `.pgm`
//! (8- or 16-bit grayscale; rescaled to [0, 1] by the type's full range).

use std::path::{Path, PathBuf};

use crate::augment::normalize_intensity;
use crate::container::{ExamPair, OctRing, RingDiameter};
use crate::error::IngestError;
use crate::raster::RasterImage;
use crate::vf::{grid_24_2, Eye, VfExam, GRID_POINTS};

fn header() -> Vec<String> {
    let mut h: Vec<String> =
        ["patient_id", "eye", "exam_time", "md", "fp", "fn", "fl"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=GRID_POINTS).map(|i| format!("t{i:02}")));
    h
}

fn parse_threshold(s: &str) -> Option<f32> {
    let s = s.trim();
    if s.starts_with('<') {
        return Some(0.0);
    }
    let v: f32 = s.parse().ok()?;
    Some(if v == -1.0 { 0.0 } else { v })
}

/// Reads VF exams from CSV text.
pub fn read_vf_csv(path: &Path) -> Result<Vec<VfExam>, IngestError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    parse_vf_csv(&text, path)
}

pub fn parse_vf_csv(text: &str, path: &Path) -> Result<Vec<VfExam>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let grid = grid_24_2();
    let mut exams = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let bad = |message: String| IngestError::Row { path: path.to_path_buf(), row, message };
        let rec = rec.map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
        if rec.len() != 7 + GRID_POINTS {
            return Err(bad(format!("expected {} columns, got {}", 7 + GRID_POINTS, rec.len())));
        }
        let num = |k: usize| -> Result<f32, IngestError> {
            rec[k].parse::<f32>().map_err(|_| bad(format!("column {} is not a number: {:?}", k + 1, &rec[k])))
        };
        let patient_id: u32 = rec[0].parse().map_err(|_| bad(format!("bad patient_id {:?}", &rec[0])))?;
        let eye: Eye = rec[1].parse().map_err(bad)?;
        let exam_time: i64 = rec[2].parse().map_err(|_| bad(format!("bad exam_time {:?}", &rec[2])))?;
        let (md, fp, fneg, fl) = (num(3)?, num(4)?, num(5)?, num(6)?);
        let layout = grid.for_eye(eye);
        let mut thresholds = Vec::with_capacity(52);
        for (slot, p) in layout.points().iter().enumerate() {
            let cell = &rec[7 + slot];
            if p.blind_spot {
                continue;
            }
            let v = parse_threshold(cell).ok_or_else(|| bad(format!("t{:02} is not a threshold: {cell:?}", slot + 1)))?;
            thresholds.push(v);
        }
        let exam = VfExam::new(thresholds, md, fp, fneg, fl, eye, patient_id, exam_time)
            .map_err(|e| bad(e.to_string()))?;
        exams.push(exam);
    }
    Ok(exams)
}

/// Writes exams in the `vf.csv` layout.
pub fn write_vf_csv(exams: &[VfExam]) -> String {
    let grid = grid_24_2();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header()).expect("in-memory write");
    for e in exams {
        let mut rec = vec![
            e.patient_id.to_string(),
            e.eye.to_string(),
            e.exam_time.to_string(),
            e.md.to_string(),
            e.false_pos.to_string(),
            e.false_neg.to_string(),
            e.fixation_loss.to_string(),
        ];
        rec.extend(
            grid.for_eye(e.eye)
                .expand(e.thresholds())
                .into_iter()
                .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
        );
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Loads an 8/16-bit grayscale image and rescales it to [0, 1].
pub fn load_gray(path: &Path) -> Result<RasterImage, IngestError> {
    let err = |message: String| IngestError::Image { path: path.to_path_buf(), message };
    let img = image::ImageReader::open(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?
        .with_guessed_format()
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    let (raw, max, w, h): (Vec<f64>, f64, usize, usize) = match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            (buf.into_raw().into_iter().map(f64::from).collect(), 65535.0, w as usize, h as usize)
        }
        other => {
            let buf = other.into_luma8();
            let (w, h) = buf.dimensions();
            (buf.into_raw().into_iter().map(f64::from).collect(), 255.0, w as usize, h as usize)
        }
    };
    normalize_intensity(&raw, w, h, 0.0, max).map_err(|e| err(e.to_string()))
}

fn find_image(dir: &Path, stem: &str) -> Result<PathBuf, IngestError> {
    for ext in ["png", "pgm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(IngestError::Image { path: dir.join(stem), message: "no .png or .pgm file found".into() })
}

/// Directory holding the images of one exam.
pub fn exam_image_dir(root: &Path, exam: &VfExam) -> PathBuf {
    root.join(format!("{}_{}_{}", exam.patient_id, exam.eye, exam.exam_time))
}

/// Pairs every CSV row with its images.
pub fn ingest(vf_csv: &Path, images_root: &Path) -> Result<Vec<ExamPair>, IngestError> {
    let exams = read_vf_csv(vf_csv)?;
    exams
        .into_iter()
        .enumerate()
        .map(|(i, vf)| {
            let dir = exam_image_dir(images_root, &vf);
            let mut rings = Vec::with_capacity(3);
            for d in RingDiameter::ALL {
                rings.push(OctRing { diameter: d, image: load_gray(&find_image(&dir, &format!("ring{}", d.mm()))?)? });
            }
            let slo = load_gray(&find_image(&dir, "slo")?)?;
            ExamPair::new(rings, slo, vf).map_err(|message| IngestError::Row {
                path: vf_csv.to_path_buf(),
                row: i + 1,
                message,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exam(eye: Eye) -> VfExam {
        let t = (0..52).map(|i| (i % 33) as f32 + 0.5).collect();
        VfExam::new(t, -2.75, 0.05, 0.1, 0.0, eye, 42, 1_577_836_800).unwrap()
    }

    #[test]
    fn csv_roundtrip_both_eyes() {
        let exams = vec![exam(Eye::Od), exam(Eye::Os)];
        let text = write_vf_csv(&exams);
        assert!(text.starts_with("patient_id,eye,exam_time,md,fp,fn,fl,t01,"));
        let back = parse_vf_csv(&text, Path::new("vf.csv")).unwrap();
        assert_eq!(back, exams);
    }

    #[test]
    fn below_zero_entries_become_zero() {
        let text = write_vf_csv(&[exam(Eye::Od)]);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
        cells[7] = "<0".into();
        cells[8] = "-1".into();
        lines[1] = cells.join(",");
        let back = parse_vf_csv(&lines.join("\n"), Path::new("vf.csv")).unwrap();
        assert_eq!(back[0].thresholds()[0], 0.0);
        assert_eq!(back[0].thresholds()[1], 0.0);
    }

    #[test]
    fn bad_rows_name_the_row() {
        let text = write_vf_csv(&[exam(Eye::Od)]).replace(",OD,", ",XX,");
        let err = parse_vf_csv(&text, Path::new("vf.csv")).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn ingest_reads_png_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let vf = exam(Eye::Od);
        std::fs::write(dir.path().join("vf.csv"), write_vf_csv(std::slice::from_ref(&vf))).unwrap();
        let img_dir = exam_image_dir(dir.path(), &vf);
        std::fs::create_dir_all(&img_dir).unwrap();
        for stem in ["ring3.5", "ring4.1", "ring4.7"] {
            let buf = image::GrayImage::from_fn(6, 4, |x, _| image::Luma([(x * 51) as u8]));
            buf.save(img_dir.join(format!("{stem}.png"))).unwrap();
        }
        let mut pgm = b"P5\n3 3\n255\n".to_vec();
        pgm.extend([0u8, 255, 0, 255, 0, 255, 0, 255, 0]);
        std::fs::write(img_dir.join("slo.pgm"), pgm).unwrap();

        let pairs = ingest(&dir.path().join("vf.csv"), dir.path()).unwrap();
        assert_eq!(pairs.len(), 1);
        let ring = pairs[0].ring(RingDiameter::Mm4_1);
        assert_eq!((ring.width(), ring.height()), (6, 4));
        assert_eq!(ring.get(5, 0), 1.0);
        assert_eq!(ring.get(0, 0), 0.0);
        assert_eq!(pairs[0].slo.get(1, 0), 1.0);
    }

    #[test]
    fn ingest_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let vf = exam(Eye::Os);
        std::fs::write(dir.path().join("vf.csv"), write_vf_csv(&[vf])).unwrap();
        assert!(matches!(ingest(&dir.path().join("vf.csv"), dir.path()), Err(IngestError::Image { .. })));
    }
}
