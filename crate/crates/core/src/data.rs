//! MNIST IDX ingestion and synthetic temporal-sequence generation.

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::SplitRng;

pub const IDX3_MAGIC: u32 = 0x0000_0803;
pub const IDX1_MAGIC: u32 = 0x0000_0801;

/// A set of square grayscale images with pixels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub side: usize,
    pub images: Vec<Mat>,
}

impl ImageSet {
    pub fn count(&self) -> usize {
        self.images.len()
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::Format {
            offset,
            msg: format!("expected 4 header bytes, only {} available", bytes.len() - offset.min(bytes.len())),
        });
    }
    Ok(BigEndian::read_u32(&bytes[offset..offset + 4]))
}

/// Parse an IDX3 image file: big-endian magic 0x00000803, count, rows, cols,
/// then unsigned pixel bytes scaled to [0,1].
pub fn load_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX3_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad IDX3 magic 0x{magic:08x}, expected 0x{IDX3_MAGIC:08x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    if rows != cols {
        return Err(Error::Format {
            offset: 8,
            msg: format!("only square images are supported, got {rows}x{cols}"),
        });
    }
    if rows == 0 {
        return Err(Error::Format { offset: 8, msg: "zero image side".into() });
    }
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated payload: need {needed} bytes, have {}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(count);
    for n in 0..count {
        let base = 16 + n * rows * cols;
        let data: Vec<f64> = bytes[base..base + rows * cols]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        images.push(Mat::new(rows, cols, data)?);
    }
    Ok(ImageSet { side: rows, images })
}

/// Serialize an ImageSet back to IDX3 bytes; exact round-trip for pixel values
/// that came from bytes.
pub fn save_idx_images(set: &ImageSet) -> Vec<u8> {
    let side = set.side;
    let mut out = Vec::with_capacity(16 + set.count() * side * side);
    let mut header = [0u8; 16];
    BigEndian::write_u32(&mut header[0..4], IDX3_MAGIC);
    BigEndian::write_u32(&mut header[4..8], set.count() as u32);
    BigEndian::write_u32(&mut header[8..12], side as u32);
    BigEndian::write_u32(&mut header[12..16], side as u32);
    out.extend_from_slice(&header);
    for img in &set.images {
        out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// Parse an IDX1 label file.
pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX1_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad IDX1 magic 0x{magic:08x}, expected 0x{IDX1_MAGIC:08x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated labels: need {} bytes, have {}", 8 + count, bytes.len()),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Rotate about the geometric image center with bilinear interpolation and
/// zero fill. Exact multiples of 90 degrees take a lattice-permutation path
/// so they stay exact.
pub fn rotate(map: &Mat, degrees: f64) -> Result<Mat> {
    let side = map.side()?;
    let quarter_turns = degrees / 90.0;
    if (quarter_turns - quarter_turns.round()).abs() < 1e-12 {
        return Ok(rotate_quarter(map, quarter_turns.round() as i64));
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let out = Mat::from_fn(side, side, |r, c| {
        // inverse mapping: rotate the output coordinate by -theta
        let y = r as f64 - center;
        let x = c as f64 - center;
        let src_x = cos * x + sin * y + center;
        let src_y = -sin * x + cos * y + center;
        bilinear(map, src_y, src_x)
    });
    Ok(out)
}

fn rotate_quarter(map: &Mat, quarter_turns: i64) -> Mat {
    let side = map.rows();
    let q = quarter_turns.rem_euclid(4);
    // matches the quarter-turn limit of the bilinear inverse mapping below
    Mat::from_fn(side, side, |r, c| match q {
        0 => map.get(r, c),
        1 => map.get(side - 1 - c, r),
        2 => map.get(side - 1 - r, side - 1 - c),
        _ => map.get(c, side - 1 - r),
    })
}

fn bilinear(map: &Mat, y: f64, x: f64) -> f64 {
    let side = map.rows() as f64;
    if y <= -1.0 || x <= -1.0 || y >= side || x >= side {
        return 0.0;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= side || xx >= side {
            0.0
        } else {
            map.get(yy as usize, xx as usize)
        }
    };
    sample(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + sample(y0, x0 + 1.0) * (1.0 - fy) * fx
        + sample(y0 + 1.0, x0) * fy * (1.0 - fx)
        + sample(y0 + 1.0, x0 + 1.0) * fy * fx
}

/// Integer-pixel translation with zero fill. dx moves content right, dy down.
pub fn shift(map: &Mat, dx: i64, dy: i64) -> Result<Mat> {
    let side = map.side()? as i64;
    if dx.abs() >= side || dy.abs() >= side {
        return Err(Error::Domain(format!(
            "shift ({dx},{dy}) moves everything off a side-{side} map"
        )));
    }
    Ok(Mat::from_fn(side as usize, side as usize, |r, c| {
        let sr = r as i64 - dy;
        let sc = c as i64 - dx;
        if sr < 0 || sc < 0 || sr >= side || sc >= side {
            0.0
        } else {
            map.get(sr as usize, sc as usize)
        }
    }))
}

/// Generation parameters for one synthetic temporal sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    /// Maps per sequence, >= 2.
    pub length: usize,
    pub max_rotation_deg: f64,
    pub max_shift_px: i64,
    /// When set, bounds must satisfy rotation <= 20 degrees and shift <= 2;
    /// when clear, transitions use the unbounded ranges (+-180 deg, side/4).
    pub constrained: bool,
    pub seed: u64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config(format!("sequence length {} < 2", self.length)));
        }
        if self.constrained {
            if self.max_rotation_deg > 20.0 {
                return Err(Error::Config(format!(
                    "constrained rotation bound {} exceeds 20 degrees",
                    self.max_rotation_deg
                )));
            }
            if self.max_shift_px > 2 {
                return Err(Error::Config(format!(
                    "constrained shift bound {} exceeds 2 px",
                    self.max_shift_px
                )));
            }
        }
        if self.max_rotation_deg < 0.0 || self.max_shift_px < 0 {
            return Err(Error::Config("transformation bounds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Build a sequence: map 0 is the seed image, each later map is a rotated then
/// shifted copy of its predecessor with angles and offsets drawn uniformly
/// within the spec bounds. Deterministic at a fixed rng.
pub fn build_sequence(seed_img: &Mat, spec: &SequenceSpec, rng: &mut SplitRng) -> Result<Vec<Mat>> {
    spec.validate()?;
    let side = seed_img.side()?;
    let (rot_bound, shift_bound) = if spec.constrained {
        (spec.max_rotation_deg, spec.max_shift_px)
    } else {
        (180.0, (side / 4) as i64)
    };
    let mut out = Vec::with_capacity(spec.length);
    out.push(seed_img.clone());
    for _ in 1..spec.length {
        let theta = rng.uniform(-rot_bound, rot_bound);
        let dx = if shift_bound > 0 { rng.uniform_int(-shift_bound, shift_bound) } else { 0 };
        let dy = if shift_bound > 0 { rng.uniform_int(-shift_bound, shift_bound) } else { 0 };
        let prev = out.last().unwrap();
        out.push(shift(&rotate(prev, theta)?, dx, dy)?);
    }
    Ok(out)
}

pub const TSEQ_MAGIC: &[u8; 5] = b"TSEQ1";
pub const TSEQ_VERSION: u8 = 1;

/// Serialize generated sequences: magic "TSEQ1", version byte, then count,
/// length, side as little-endian u32, then f64 LE values row-major, map-major.
pub fn write_tseq(sequences: &[Vec<Mat>]) -> Result<Vec<u8>> {
    if sequences.is_empty() {
        return Err(Error::Domain("no sequences to write".into()));
    }
    let length = sequences[0].len();
    let side = sequences[0][0].side()?;
    for seq in sequences {
        if seq.len() != length {
            return Err(Error::Shape("sequences have unequal lengths".into()));
        }
        for m in seq {
            if m.side()? != side {
                return Err(Error::Shape("maps have unequal sides".into()));
            }
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(TSEQ_MAGIC);
    out.push(TSEQ_VERSION);
    let mut word = [0u8; 4];
    for v in [sequences.len() as u32, length as u32, side as u32] {
        LittleEndian::write_u32(&mut word, v);
        out.extend_from_slice(&word);
    }
    let mut buf = [0u8; 8];
    for seq in sequences {
        for m in seq {
            for &v in m.data() {
                LittleEndian::write_f64(&mut buf, v);
                out.extend_from_slice(&buf);
            }
        }
    }
    Ok(out)
}

pub fn read_tseq(bytes: &[u8]) -> Result<Vec<Vec<Mat>>> {
    if bytes.len() < 6 || &bytes[0..5] != TSEQ_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad TSEQ1 magic".into() });
    }
    if bytes[5] != TSEQ_VERSION {
        return Err(Error::Format {
            offset: 5,
            msg: format!("unsupported TSEQ version {}", bytes[5]),
        });
    }
    if bytes.len() < 18 {
        return Err(Error::Truncated(bytes.len()));
    }
    let count = LittleEndian::read_u32(&bytes[6..10]) as usize;
    let length = LittleEndian::read_u32(&bytes[10..14]) as usize;
    let side = LittleEndian::read_u32(&bytes[14..18]) as usize;
    let map_bytes = side * side * 8;
    let needed = 18 + count * length * map_bytes;
    if bytes.len() < needed {
        return Err(Error::Truncated(bytes.len()));
    }
    let mut sequences = Vec::with_capacity(count);
    let mut offset = 18;
    for _ in 0..count {
        let mut seq = Vec::with_capacity(length);
        for _ in 0..length {
            let data: Vec<f64> = bytes[offset..offset + map_bytes]
                .chunks_exact(8)
                .map(LittleEndian::read_f64)
                .collect();
            seq.push(Mat::new(side, side, data)?);
            offset += map_bytes;
        }
        sequences.push(seq);
    }
    Ok(sequences)
}
