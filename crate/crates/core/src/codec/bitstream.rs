//! Bitstream container for one encoded tensor.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! "LMFC" | u8 version | u8 codec_id | f32 lambda | u8 bit_depth
//!        | u8 rank | u32[rank] dims | u8 layout_rule
//!        | u16 knot_count | f32[knot_count] knots
//!        | u32 payload_len | payload
//! ```

use crate::error::{Error, Result};
use crate::packing::{LayoutRule, PackingRecord};

pub const MAGIC: [u8; 4] = *b"LMFC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub version: u8,
    pub codec_id: u8,
    pub lambda: f32,
    pub bit_depth: u8,
    /// `tensor_id` is not carried on the wire and is empty after parsing.
    pub record: PackingRecord,
    pub knots: Vec<f32>,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn payload_bits(&self) -> u64 {
        8 * self.payload.len() as u64
    }

    pub fn header_bytes(&self) -> usize {
        4 + 1
            + 1
            + 4
            + 1
            + 1
            + 4 * self.record.original_shape.len()
            + 1
            + 2
            + 4 * self.knots.len()
            + 4
    }

    pub fn header_bits(&self) -> u64 {
        8 * self.header_bytes() as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rank = u8::try_from(self.record.original_shape.len())
            .map_err(|_| Error::MalformedBitstream("rank exceeds 255".into()))?;
        let knots = u16::try_from(self.knots.len())
            .map_err(|_| Error::MalformedBitstream("too many knots".into()))?;
        let payload_len = u32::try_from(self.payload.len())
            .map_err(|_| Error::MalformedBitstream("payload exceeds 4 GiB".into()))?;

        let mut out = Vec::with_capacity(self.header_bytes() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.codec_id);
        out.extend_from_slice(&self.lambda.to_le_bytes());
        out.push(self.bit_depth);
        out.push(rank);
        for &d in &self.record.original_shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::MalformedBitstream(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(self.record.layout_rule.wire_id());
        out.extend_from_slice(&knots.to_le_bytes());
        for k in &self.knots {
            out.extend_from_slice(&k.to_le_bytes());
        }
        out.extend_from_slice(&payload_len.to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(Error::BitstreamVersion {
                found: version,
                expected: VERSION,
            });
        }
        let codec_id = r.u8("codec id")?;
        let lambda = f32::from_le_bytes(r.take(4, "lambda")?.try_into().unwrap());
        let bit_depth = r.u8("bit depth")?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let layout_rule = LayoutRule::from_wire_id(r.u8("layout rule")?)
            .ok_or_else(|| Error::MalformedBitstream("unknown layout rule".into()))?;
        let knot_count = r.u16("knot count")? as usize;
        let knots = r
            .take(4 * knot_count, "knots")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let payload_len = r.u32("payload length")? as usize;
        let payload = r.take(payload_len, "payload")?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::MalformedBitstream(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Bitstream {
            version,
            codec_id,
            lambda,
            bit_depth,
            record: PackingRecord {
                tensor_id: String::new(),
                original_shape: shape,
                layout_rule,
            },
            knots,
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::TruncatedPayload(format!(
                    "{what} needs {n} bytes at offset {}, stream has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            version: VERSION,
            codec_id: 2,
            lambda: 0.007,
            bit_depth: 8,
            record: PackingRecord {
                tensor_id: String::new(),
                original_shape: vec![5, 4, 7, 128],
                layout_rule: LayoutRule::LastAxisAsColumns,
            },
            knots: vec![-1.0, 0.0, 2.5],
            payload: vec![9, 8, 7, 6, 5],
        }
    }

    #[test]
    fn exact_layout() {
        let bytes = sample().to_bytes().unwrap();
        let mut expected = b"LMFC".to_vec();
        expected.extend([1, 2]);
        expected.extend(0.007f32.to_le_bytes());
        expected.extend([8, 4]);
        for d in [5u32, 4, 7, 128] {
            expected.extend(d.to_le_bytes());
        }
        expected.push(0);
        expected.extend(3u16.to_le_bytes());
        for k in [-1.0f32, 0.0, 2.5] {
            expected.extend(k.to_le_bytes());
        }
        expected.extend(5u32.to_le_bytes());
        expected.extend([9, 8, 7, 6, 5]);
        assert_eq!(bytes, expected);
        assert_eq!(sample().header_bytes(), bytes.len() - 5);
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), sample());
    }

    #[test]
    fn distinct_parse_errors() {
        let good = sample().to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            Bitstream::from_bytes(&bad),
            Err(Error::BadMagic(_))
        ));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            Bitstream::from_bytes(&bad),
            Err(Error::BitstreamVersion { found: 9, .. })
        ));

        assert!(matches!(
            Bitstream::from_bytes(&good[..good.len() - 1]),
            Err(Error::TruncatedPayload(_))
        ));
        assert!(matches!(
            Bitstream::from_bytes(&good[..10]),
            Err(Error::TruncatedPayload(_))
        ));
    }
}
