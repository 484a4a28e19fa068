//! Pluggable encode/decode stage and the reference codecs.

mod bitstream;
mod builtin;
mod model;
mod range_coder;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bitstream::{Bitstream, MAGIC, VERSION};
pub use builtin::{requant_bits, Entropy0, LossyRequant, Passthrough, Predictive};
pub use model::{AdaptiveModel, MAX_ALPHABET};
pub use range_coder::{RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};
use crate::packing::PackingRecord;
use crate::quant::{MonotoneTransform, QuantizedPlane};

/// The rate-control grid shared by every codec.
pub const LAMBDA_GRID: [f64; 5] = [0.001, 0.004, 0.007, 0.01, 0.02];

/// A rate-control setting. Values off [`LAMBDA_GRID`] need
/// [`QualityLevel::custom`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityLevel(f64);

impl QualityLevel {
    pub fn new(lambda: f64) -> Result<Self> {
        if LAMBDA_GRID.contains(&lambda) {
            Ok(QualityLevel(lambda))
        } else {
            Err(Error::Config(format!(
                "lambda {lambda} is not on the grid {LAMBDA_GRID:?}"
            )))
        }
    }

    pub fn custom(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(QualityLevel(lambda))
        } else {
            Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )))
        }
    }

    /// Recovers a level from its on-wire `f32`, snapping to the grid value
    /// it was written from when there is one.
    pub fn from_wire(lambda: f32) -> Self {
        LAMBDA_GRID
            .iter()
            .copied()
            .find(|&g| g as f32 == lambda)
            .map(QualityLevel)
            .unwrap_or(QualityLevel(f64::from(lambda)))
    }

    pub fn grid() -> impl Iterator<Item = QualityLevel> {
        LAMBDA_GRID.iter().map(|&l| QualityLevel(l))
    }

    pub fn lambda(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        QualityLevel::custom(v)
    }
}

impl From<QualityLevel> for f64 {
    fn from(q: QualityLevel) -> f64 {
        q.0
    }
}

impl Default for QualityLevel {
    fn default() -> Self {
        QualityLevel(LAMBDA_GRID[0])
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecDescriptor {
    /// Registry key, e.g. `entropy0`.
    pub name: String,
    /// Byte written into the bitstream header.
    pub wire_id: u8,
    pub lossless: bool,
    pub min_bit_depth: u8,
    pub max_bit_depth: u8,
}

impl CodecDescriptor {
    pub fn supports(&self, bit_depth: u8) -> bool {
        (self.min_bit_depth..=self.max_bit_depth).contains(&bit_depth)
    }
}

/// A codec turns plane codes into payload bytes and back.
///
/// Implementations never see the header; plane geometry and bit depth are
/// passed in from it on decode.
pub trait Codec: Send + Sync {
    fn encode_payload(&self, q: &QuantizedPlane, quality: QualityLevel) -> Result<Vec<u8>>;

    fn decode_payload(
        &self,
        payload: &[u8],
        geometry: PlaneGeometry,
        quality: QualityLevel,
    ) -> Result<Vec<u16>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneGeometry {
    pub rows: usize,
    pub cols: usize,
    pub bit_depth: u8,
}

impl PlaneGeometry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Entry {
    desc: CodecDescriptor,
    codec: Arc<dyn Codec>,
}

/// Codecs resolvable by name (for callers) and wire id (for decoding).
pub struct CodecRegistry {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
    by_wire: HashMap<u8, usize>,
}

impl Default for CodecRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl CodecRegistry {
    pub fn empty() -> Self {
        CodecRegistry {
            entries: Vec::new(),
            by_name: HashMap::new(),
            by_wire: HashMap::new(),
        }
    }

    /// Registry holding `passthrough`, `entropy0`, `predictive` and
    /// `lossy_requant`.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register(Passthrough::descriptor(), Arc::new(Passthrough))
            .and_then(|_| r.register(Entropy0::descriptor(), Arc::new(Entropy0)))
            .and_then(|_| r.register(Predictive::descriptor(), Arc::new(Predictive)))
            .and_then(|_| r.register(LossyRequant::descriptor(), Arc::new(LossyRequant)))
            .expect("builtin codecs have distinct ids");
        r
    }

    pub fn register(&mut self, desc: CodecDescriptor, codec: Arc<dyn Codec>) -> Result<()> {
        if self.by_name.contains_key(&desc.name) || self.by_wire.contains_key(&desc.wire_id) {
            return Err(Error::DuplicateCodec(desc.name));
        }
        let idx = self.entries.len();
        self.by_name.insert(desc.name.clone(), idx);
        self.by_wire.insert(desc.wire_id, idx);
        self.entries.push(Entry { desc, codec });
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Result<&CodecDescriptor> {
        self.lookup(name).map(|e| &e.desc)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &CodecDescriptor> {
        self.entries.iter().map(|e| &e.desc)
    }

    fn lookup(&self, name: &str) -> Result<&Entry> {
        self.by_name
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownCodec(name.to_owned()))
    }

    pub fn encode(
        &self,
        q: &QuantizedPlane,
        codec: &str,
        quality: QualityLevel,
        record: &PackingRecord,
    ) -> Result<Bitstream> {
        let entry = self.lookup(codec)?;
        if !entry.desc.supports(q.bit_depth()) {
            return Err(Error::UnsupportedBitDepth {
                codec: codec.to_owned(),
                bit_depth: q.bit_depth(),
            });
        }
        let (rows, cols) = record.plane_dims()?;
        if rows != q.rows() || cols != q.cols() {
            return Err(Error::PackingMismatch {
                record: record.original_shape.clone(),
                rows: q.rows(),
                cols: q.cols(),
            });
        }
        let payload = entry.codec.encode_payload(q, quality)?;
        Ok(Bitstream {
            version: VERSION,
            codec_id: entry.desc.wire_id,
            lambda: quality.lambda() as f32,
            bit_depth: q.bit_depth(),
            record: record.clone(),
            knots: q.transform().knots().to_vec(),
            payload,
        })
    }

    /// Decodes with whichever registered codec the header names.
    pub fn decode(&self, bs: &Bitstream) -> Result<(QuantizedPlane, PackingRecord)> {
        let idx = *self
            .by_wire
            .get(&bs.codec_id)
            .ok_or_else(|| Error::UnknownCodec(format!("wire id {}", bs.codec_id)))?;
        self.decode_entry(&self.entries[idx], bs)
    }

    /// Decodes, insisting the stream was produced by `codec`.
    pub fn decode_as(
        &self,
        bs: &Bitstream,
        codec: &str,
    ) -> Result<(QuantizedPlane, PackingRecord)> {
        let entry = self.lookup(codec)?;
        if entry.desc.wire_id != bs.codec_id {
            return Err(Error::CodecMismatch {
                found: bs.codec_id,
                expected: entry.desc.wire_id,
            });
        }
        self.decode_entry(entry, bs)
    }

    fn decode_entry(
        &self,
        entry: &Entry,
        bs: &Bitstream,
    ) -> Result<(QuantizedPlane, PackingRecord)> {
        if bs.version != VERSION {
            return Err(Error::BitstreamVersion {
                found: bs.version,
                expected: VERSION,
            });
        }
        if !entry.desc.supports(bs.bit_depth) {
            return Err(Error::UnsupportedBitDepth {
                codec: entry.desc.name.clone(),
                bit_depth: bs.bit_depth,
            });
        }
        let (rows, cols) = bs.record.plane_dims()?;
        let transform = Arc::new(MonotoneTransform::from_knots(bs.knots.clone())?);
        let geometry = PlaneGeometry {
            rows,
            cols,
            bit_depth: bs.bit_depth,
        };
        let codes = entry.codec.decode_payload(
            &bs.payload,
            geometry,
            QualityLevel::from_wire(bs.lambda),
        )?;
        let q = QuantizedPlane::new(rows, cols, codes, bs.bit_depth, transform)?;
        Ok((q, bs.record.clone()))
    }
}
