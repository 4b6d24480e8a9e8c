//! Binary checkpoint container: magic "TCRB", format version, a little-endian
//! section table, and 64-bit little-endian reals throughout. Round-trips are
//! bit-exact for parameters, Q entries, rng state, and config digest.

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::crbm::ModelParams;
use crate::error::{Error, Result};
use crate::harness::{digest_hex, Checkpoint, RunState, UnitModel};
use crate::mat::Mat;
use crate::policy::{Action, QTable};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCRB";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_CONF: &[u8; 4] = b"CONF";
const TAG_CDIG: &[u8; 4] = b"CDIG";
const TAG_EPOC: &[u8; 4] = b"EPOC";
const TAG_MODL: &[u8; 4] = b"MODL";
const TAG_QTAB: &[u8; 4] = b"QTAB";
const TAG_RNGS: &[u8; 4] = b"RNGS";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    fn u64(&mut self, v: u64) {
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn i64(&mut self, v: i64) {
        self.u64(v as u64);
    }

    fn mat(&mut self, m: &Mat) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.data() {
            self.f64(v);
        }
    }

    fn params(&mut self, p: &ModelParams) {
        self.u64(p.order as u64);
        self.u64(p.kernels.len() as u64);
        for k in &p.kernels {
            self.mat(k);
        }
        for &c in &p.hidden_biases {
            self.f64(c);
        }
        self.mat(&p.unit_bias);
        for o in &p.map_offsets {
            self.mat(o);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(self.bytes.len()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(self.u64()? as i64)
    }

    fn mat(&mut self) -> Result<Mat> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("implausible matrix shape {rows}x{cols}"),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Mat::new(rows, cols, data)
    }

    fn params(&mut self) -> Result<ModelParams> {
        let order = self.u64()? as usize;
        let k = self.u64()? as usize;
        let kernels = (0..k).map(|_| self.mat()).collect::<Result<Vec<_>>>()?;
        let hidden_biases = (0..k).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let unit_bias = self.mat()?;
        let map_offsets = (0..order).map(|_| self.mat()).collect::<Result<Vec<_>>>()?;
        ModelParams::new(order, kernels, hidden_biases, unit_bias, map_offsets)
    }
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();

    sections.push((*TAG_CONF, ck.config_text.as_bytes().to_vec()));
    sections.push((*TAG_CDIG, digest_hex(ck.config_text.as_bytes()).into_bytes()));

    let mut epoc = Writer::new();
    epoc.u64(ck.next_epoch as u64);
    match &ck.state {
        RunState::Fixed { .. } => {
            epoc.u64(0);
            epoc.u64(0);
        }
        RunState::Adaptive { state, .. } => {
            epoc.u64(1);
            epoc.u64(*state as u64);
        }
    }
    sections.push((*TAG_EPOC, epoc.buf));

    let mut modl = Writer::new();
    match &ck.state {
        RunState::Fixed { models } => {
            modl.u64(models.len() as u64);
            for seq_models in models {
                modl.u64(seq_models.len() as u64);
                for u in seq_models {
                    modl.u64(u.start as u64);
                    modl.u64(u.order as u64);
                    modl.params(&u.params);
                }
            }
        }
        RunState::Adaptive { models, .. } => {
            modl.u64(models.len() as u64);
            for (&(seq, start, order), p) in models {
                modl.u64(seq as u64);
                modl.u64(start as u64);
                modl.u64(order as u64);
                modl.params(p);
            }
        }
    }
    sections.push((*TAG_MODL, modl.buf));

    if let RunState::Adaptive { qtable, .. } = &ck.state {
        let mut qt = Writer::new();
        qt.u64(qtable.order_min as u64);
        qt.u64(qtable.order_max as u64);
        let entries: Vec<_> = qtable.entries().collect();
        qt.u64(entries.len() as u64);
        for (s, a, q, r) in entries {
            qt.u64(s as u64);
            qt.i64(a.delta());
            qt.f64(q);
            qt.f64(r);
        }
        sections.push((*TAG_QTAB, qt.buf));
    }

    let mut rngs = Writer::new();
    let (seed, stream, word_pos) = ck.rng_state;
    rngs.u64(seed);
    rngs.u64(stream);
    rngs.u64((word_pos & u128::from(u64::MAX)) as u64);
    rngs.u64((word_pos >> 64) as u64);
    sections.push((*TAG_RNGS, rngs.buf));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let mut w = Writer::new();
    w.u32(CHECKPOINT_VERSION);
    w.u32(sections.len() as u32);
    for (tag, payload) in &sections {
        w.buf.extend_from_slice(tag);
        w.u64(payload.len() as u64);
    }
    for (_, payload) in &sections {
        w.buf.extend_from_slice(payload);
    }
    out.extend_from_slice(&w.buf);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad checkpoint magic".into() });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let n_sections = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len = r.u64()? as usize;
        table.push((tag, len));
    }
    let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
    for (tag, len) in table {
        sections.insert(tag, r.take(len)?);
    }
    let section = |tag: &[u8; 4]| -> Result<&[u8]> {
        sections
            .get(tag)
            .copied()
            .ok_or_else(|| Error::Format {
                offset: 0,
                msg: format!("missing section {}", String::from_utf8_lossy(tag)),
            })
    };

    let config_text = String::from_utf8(section(TAG_CONF)?.to_vec())
        .map_err(|_| Error::Format { offset: 0, msg: "config text is not UTF-8".into() })?;
    let stored_digest = String::from_utf8_lossy(section(TAG_CDIG)?).to_string();
    if stored_digest != digest_hex(config_text.as_bytes()) {
        return Err(Error::DigestMismatch);
    }

    let epoc_bytes = section(TAG_EPOC)?;
    let mut er = Reader { bytes: epoc_bytes, pos: 0 };
    let next_epoch = er.u64()? as usize;
    let is_adaptive = er.u64()? == 1;
    let adaptive_state = er.u64()? as usize;

    let modl_bytes = section(TAG_MODL)?;
    let mut mr = Reader { bytes: modl_bytes, pos: 0 };
    let state = if is_adaptive {
        let count = mr.u64()? as usize;
        let mut models = BTreeMap::new();
        for _ in 0..count {
            let seq = mr.u64()? as usize;
            let start = mr.u64()? as usize;
            let order = mr.u64()? as usize;
            models.insert((seq, start, order), mr.params()?);
        }
        let qt_bytes = section(TAG_QTAB)?;
        let mut qr = Reader { bytes: qt_bytes, pos: 0 };
        let order_min = qr.u64()? as usize;
        let order_max = qr.u64()? as usize;
        let mut qtable = QTable::new(order_min, order_max)?;
        let n = qr.u64()? as usize;
        for _ in 0..n {
            let s = qr.u64()? as usize;
            let a = Action::from_delta(qr.i64()?)?;
            let q = qr.f64()?;
            let rw = qr.f64()?;
            qtable.restore_entry(s, a, q, rw)?;
        }
        RunState::Adaptive { models, qtable, state: adaptive_state }
    } else {
        let n_seqs = mr.u64()? as usize;
        let mut models = Vec::with_capacity(n_seqs);
        for _ in 0..n_seqs {
            let n_units = mr.u64()? as usize;
            let mut list = Vec::with_capacity(n_units);
            for _ in 0..n_units {
                let start = mr.u64()? as usize;
                let order = mr.u64()? as usize;
                list.push(UnitModel { start, order, params: mr.params()? });
            }
            models.push(list);
        }
        RunState::Fixed { models }
    };

    let rng_bytes = section(TAG_RNGS)?;
    let mut rr = Reader { bytes: rng_bytes, pos: 0 };
    let seed = rr.u64()?;
    let stream = rr.u64()?;
    let lo = rr.u64()? as u128;
    let hi = rr.u64()? as u128;

    Ok(Checkpoint { config_text, next_epoch, state, rng_state: (seed, stream, (hi << 64) | lo) })
}

/// Write a checkpoint atomically (temp file + rename in the target directory).
pub fn checkpoint_save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_bytes(ck);
    crate::write_atomic(path, &bytes)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_training, Mode, RunConfig};
    use crate::rng::SplitRng;

    fn sample_checkpoint(mode: Mode) -> Checkpoint {
        let mut rng = SplitRng::new(3);
        let img = Mat::random_uniform(6, 6, &mut rng);
        let seqs = vec![vec![img; 6]];
        let cfg = RunConfig { mode, k: 2, n_w: 3, epochs: 2, seed: 5, ..RunConfig::default() };
        run_training(&cfg, &seqs, None).unwrap().checkpoint
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for mode in [Mode::Bi, Mode::Adaptive] {
            let ck = sample_checkpoint(mode);
            let bytes = checkpoint_to_bytes(&ck);
            let loaded = checkpoint_from_bytes(&bytes).unwrap();
            assert_eq!(loaded, ck);
            assert_eq!(checkpoint_to_bytes(&loaded), bytes);
        }
    }

    #[test]
    fn flipped_magic_is_format_error() {
        let ck = sample_checkpoint(Mode::Bi);
        let mut bytes = checkpoint_to_bytes(&ck);
        bytes[0] ^= 0xff;
        assert!(matches!(
            checkpoint_from_bytes(&bytes).unwrap_err(),
            Error::Format { offset: 0, .. }
        ));
    }

    #[test]
    fn version_digest_and_truncation_are_distinct() {
        let ck = sample_checkpoint(Mode::Adaptive);
        let bytes = checkpoint_to_bytes(&ck);

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 99;
        assert!(matches!(
            checkpoint_from_bytes(&wrong_version).unwrap_err(),
            Error::VersionMismatch { found: 99, .. }
        ));

        // corrupt a config byte so the stored digest no longer matches
        let mut bad_digest = bytes.clone();
        // the CONF payload is the first section payload; find "mode = " text
        let idx = bad_digest
            .windows(7)
            .position(|w| w == b"mode = ")
            .unwrap();
        bad_digest[idx] = b'M';
        assert!(matches!(checkpoint_from_bytes(&bad_digest).unwrap_err(), Error::DigestMismatch));

        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err(),
            Error::Truncated(_)
        ));
    }
}
