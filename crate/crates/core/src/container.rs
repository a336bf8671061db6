//! Binary exam container.
//!
//! All integers and floats are little-endian.
//!
//! | field | bytes |
//! |---|---|
//! | magic `"OCTVF01\n"` | 8 |
//! | version (u16, = 1) | 2 |
//! | exam count (u32) | 4 |
//! | per exam: patient id (u32), eye (u8, 0 = OD, 1 = OS), exam time (i64 unix seconds) | 13 |
//! | VF block: 54 f32 thresholds (blind-spot slots NaN), md, fp, fn, fl (f32) | 232 |
//! | 3 ring blocks: diameter mm (f32), width (u32), height (u32), w·h f32 pixels | 12 + 4wh each |
//! | SLO block: width (u32), height (u32), w·h f32 pixels | 8 + 4wh |
//!
//! Thresholds follow the canonical order of the layout for the exam's eye.
//! Blind-spot slots must hold the canonical quiet NaN (`0x7FC00000`) so that
//! parsing and re-writing reproduce the input byte for byte.

use serde::{Deserialize, Serialize};

use crate::error::{ContainerError, VfError};
use crate::raster::RasterImage;
use crate::vf::{grid_24_2, Eye, VfExam, VfGrid, GRID_POINTS};

pub const MAGIC: &[u8; 8] = b"OCTVF01\n";
pub const VERSION: u16 = 1;

const HEADER_BYTES: usize = 8 + 2 + 4;
const EXAM_META_BYTES: usize = 4 + 1 + 8;
const VF_BLOCK_BYTES: usize = (GRID_POINTS + 4) * 4;
const RING_HEADER_BYTES: usize = 12;
const SLO_HEADER_BYTES: usize = 8;
const CANONICAL_NAN: u32 = 0x7FC0_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RingDiameter {
    #[serde(rename = "3.5")]
    Mm3_5,
    #[serde(rename = "4.1")]
    Mm4_1,
    #[serde(rename = "4.7")]
    Mm4_7,
}

impl RingDiameter {
    pub const ALL: [RingDiameter; 3] = [RingDiameter::Mm3_5, RingDiameter::Mm4_1, RingDiameter::Mm4_7];

    pub fn mm(self) -> f32 {
        match self {
            RingDiameter::Mm3_5 => 3.5,
            RingDiameter::Mm4_1 => 4.1,
            RingDiameter::Mm4_7 => 4.7,
        }
    }

    pub fn from_mm(mm: f32) -> Option<RingDiameter> {
        RingDiameter::ALL.into_iter().find(|d| d.mm().to_bits() == mm.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OctRing {
    pub diameter: RingDiameter,
    pub image: RasterImage,
}

/// One matched OCT-VF sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamPair {
    rings: Vec<OctRing>,
    pub slo: RasterImage,
    pub vf: VfExam,
}

impl ExamPair {
    /// `rings` must contain each diameter exactly once; their order is kept.
    pub fn new(rings: Vec<OctRing>, slo: RasterImage, vf: VfExam) -> Result<ExamPair, String> {
        if rings.len() != 3 {
            return Err(format!("expected 3 rings, got {}", rings.len()));
        }
        for d in RingDiameter::ALL {
            if rings.iter().filter(|r| r.diameter == d).count() != 1 {
                return Err(format!("ring {} mm must appear exactly once", d.mm()));
            }
        }
        Ok(ExamPair { rings, slo, vf })
    }

    pub fn patient_id(&self) -> u32 {
        self.vf.patient_id
    }

    pub fn eye(&self) -> Eye {
        self.vf.eye
    }

    pub fn exam_time(&self) -> i64 {
        self.vf.exam_time
    }

    pub fn rings(&self) -> &[OctRing] {
        &self.rings
    }

    pub fn ring(&self, diameter: RingDiameter) -> &RasterImage {
        &self
            .rings
            .iter()
            .find(|r| r.diameter == diameter)
            .expect("ExamPair holds every ring diameter")
            .image
    }

    /// Right-eye orientation: OS exams get mirrored thresholds and
    /// horizontally flipped images.
    pub fn to_right_eye(&self, grid: &VfGrid) -> Result<ExamPair, VfError> {
        if self.vf.eye == Eye::Od {
            return Ok(self.clone());
        }
        let vf = crate::vf::mirror_exam(&self.vf, grid)?;
        let rings = self
            .rings
            .iter()
            .map(|r| OctRing { diameter: r.diameter, image: r.image.flipped_horizontal() })
            .collect();
        Ok(ExamPair { rings, slo: self.slo.flipped_horizontal(), vf })
    }
}

/// Byte size of a container holding exams with the given image dimensions.
pub fn container_size(exams: &[((usize, usize), (usize, usize))]) -> usize {
    HEADER_BYTES
        + exams
            .iter()
            .map(|&((rw, rh), (sw, sh))| {
                EXAM_META_BYTES
                    + VF_BLOCK_BYTES
                    + 3 * (RING_HEADER_BYTES + 4 * rw * rh)
                    + SLO_HEADER_BYTES
                    + 4 * sw * sh
            })
            .sum::<usize>()
}

pub fn write_container(exams: &[ExamPair]) -> Result<Vec<u8>, ContainerError> {
    let count = u32::try_from(exams.len()).map_err(|_| ContainerError::TooManyExams)?;
    let grid = grid_24_2();
    let dims: Vec<_> = exams
        .iter()
        .map(|e| {
            let r = &e.rings[0].image;
            ((r.width(), r.height()), (e.slo.width(), e.slo.height()))
        })
        .collect();
    let mut out = Vec::with_capacity(container_size(&dims));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for exam in exams {
        let vf = &exam.vf;
        out.extend_from_slice(&vf.patient_id.to_le_bytes());
        out.push(vf.eye.code());
        out.extend_from_slice(&vf.exam_time.to_le_bytes());
        for v in grid.for_eye(vf.eye).expand(vf.thresholds()) {
            let bits = if v.is_nan() { CANONICAL_NAN } else { v.to_bits() };
            out.extend_from_slice(&bits.to_le_bytes());
        }
        for v in [vf.md, vf.false_pos, vf.false_neg, vf.fixation_loss] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ring in &exam.rings {
            out.extend_from_slice(&ring.diameter.mm().to_le_bytes());
            write_image(&mut out, &ring.image);
        }
        write_image(&mut out, &exam.slo);
    }
    Ok(out)
}

fn write_image(out: &mut Vec<u8>, img: &RasterImage) {
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    for &p in img.pixels() {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(ContainerError::Truncated { offset: self.offset, needed: n, available });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, ContainerError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn image(&mut self) -> Result<RasterImage, ContainerError> {
        let offset = self.offset;
        let width = self.u32()?;
        let height = self.u32()?;
        let count = (width as usize).checked_mul(height as usize);
        let byte_len = count.and_then(|c| c.checked_mul(4));
        let (Some(count), Some(byte_len)) = (count, byte_len) else {
            return Err(ContainerError::InvalidDimensions { offset, width, height });
        };
        if count == 0 {
            return Err(ContainerError::InvalidDimensions { offset, width, height });
        }
        let start = self.offset;
        let raw = self.take(byte_len)?;
        let mut pixels = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            let at = start + 4 * i;
            if !v.is_finite() {
                return Err(ContainerError::NanPixel { offset: at });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(ContainerError::PixelRange { offset: at, value: v });
            }
            pixels.push(v);
        }
        Ok(RasterImage::from_trusted(width as usize, height as usize, pixels))
    }
}

pub fn parse_container(bytes: &[u8]) -> Result<Vec<ExamPair>, ContainerError> {
    let mut cur = Cursor { bytes, offset: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    cur.offset = MAGIC.len();
    let version_at = cur.offset;
    let version = cur.u16()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion { offset: version_at, version });
    }
    let count = cur.u32()? as usize;
    let grid = grid_24_2();
    let mut exams = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let exam_at = cur.offset;
        let patient_id = cur.u32()?;
        let eye_at = cur.offset;
        let code = cur.u8()?;
        let eye = Eye::from_code(code).ok_or(ContainerError::InvalidEye { offset: eye_at, code })?;
        let exam_time = cur.i64()?;

        let layout = grid.for_eye(eye);
        let mut slots = Vec::with_capacity(GRID_POINTS);
        for (slot, p) in layout.points().iter().enumerate() {
            let at = cur.offset;
            let v = cur.f32()?;
            if p.blind_spot && v.to_bits() != CANONICAL_NAN {
                return Err(ContainerError::BlindSpotSlot { offset: at, slot });
            }
            slots.push(v);
        }
        let md = cur.f32()?;
        let fp = cur.f32()?;
        let fneg = cur.f32()?;
        let fl = cur.f32()?;
        let vf = VfExam::new(layout.compress(&slots), md, fp, fneg, fl, eye, patient_id, exam_time)
            .map_err(|source| ContainerError::InvalidExam { offset: exam_at, source })?;

        let mut rings: Vec<OctRing> = Vec::with_capacity(3);
        for _ in 0..3 {
            let at = cur.offset;
            let mm = cur.f32()?;
            let diameter =
                RingDiameter::from_mm(mm).ok_or(ContainerError::UnknownDiameter { offset: at, diameter_mm: mm })?;
            if rings.iter().any(|r| r.diameter == diameter) {
                return Err(ContainerError::DuplicateRing { offset: at, diameter_mm: mm });
            }
            rings.push(OctRing { diameter, image: cur.image()? });
        }
        let slo = cur.image()?;
        exams.push(ExamPair { rings, slo, vf });
    }
    if cur.offset != bytes.len() {
        return Err(ContainerError::TrailingBytes { offset: cur.offset, count: bytes.len() - cur.offset });
    }
    Ok(exams)
}
