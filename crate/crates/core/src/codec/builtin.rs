use super::model::{AdaptiveModel, MAX_ALPHABET};
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::{Codec, CodecDescriptor, PlaneGeometry, QualityLevel};
use crate::error::{Error, Result};
use crate::quant::{max_code, QuantizedPlane, MAX_BIT_DEPTH, MIN_BIT_DEPTH};

const MODE_STORED: u8 = 0;
const MODE_CODED: u8 = 1;

/// Largest bit depth an adaptive frequency table can model.
const ENTROPY_MAX_BIT_DEPTH: u8 = MAX_ALPHABET.trailing_zeros() as u8;

fn packed_len(n: usize, b: u8) -> usize {
    (n * b as usize).div_ceil(8)
}

/// Packs `b`-bit codes contiguously, most significant bit first.
fn pack_bits(codes: impl Iterator<Item = u16>, n: usize, b: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(packed_len(n, b));
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    for c in codes {
        acc = (acc << b) | u32::from(c);
        filled += u32::from(b);
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize, b: u8) -> Result<Vec<u16>> {
    let need = packed_len(n, b);
    if bytes.len() != need {
        return Err(Error::TruncatedPayload(format!(
            "bit-packed payload has {} bytes, expected {need}",
            bytes.len()
        )));
    }
    let mask = (1u32 << b) - 1;
    let mut out = Vec::with_capacity(n);
    let mut acc: u32 = 0;
    let mut filled = 0u32;
    let mut iter = bytes.iter();
    while out.len() < n {
        while filled < u32::from(b) {
            acc = (acc << 8) | u32::from(*iter.next().expect("length checked"));
            filled += 8;
        }
        filled -= u32::from(b);
        out.push(((acc >> filled) & mask) as u16);
        acc &= (1 << filled) - 1;
    }
    Ok(out)
}

/// Frames a coded payload, falling back to stored bits whenever entropy
/// coding would not beat them.
fn frame(coded: Vec<u8>, stored: impl FnOnce() -> Vec<u8>) -> Vec<u8> {
    let stored = stored();
    let (mode, body) = if coded.len() < stored.len() {
        (MODE_CODED, coded)
    } else {
        (MODE_STORED, stored)
    };
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(mode);
    out.extend_from_slice(&body);
    out
}

fn split_mode(payload: &[u8]) -> Result<(u8, &[u8])> {
    match payload.split_first() {
        Some((&m, rest)) if m == MODE_STORED || m == MODE_CODED => Ok((m, rest)),
        Some((&m, _)) => Err(Error::MalformedBitstream(format!(
            "unknown payload mode {m}"
        ))),
        None => Err(Error::TruncatedPayload("empty payload".into())),
    }
}

fn order0_encode(codes: &[u16], b: u8) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    let mut model = AdaptiveModel::new(1 << b);
    for &c in codes {
        model.encode(&mut enc, usize::from(c));
    }
    enc.finish()
}

fn order0_decode(data: &[u8], n: usize, b: u8) -> Result<Vec<u16>> {
    let mut dec = RangeDecoder::new(data)?;
    let mut model = AdaptiveModel::new(1 << b);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(model.decode(&mut dec)? as u16);
    }
    finish_decode(&dec, data.len())?;
    Ok(out)
}

fn finish_decode(dec: &RangeDecoder<'_>, len: usize) -> Result<()> {
    if dec.bytes_consumed() != len {
        return Err(Error::MalformedBitstream(format!(
            "{} unread bytes after range-coded data",
            len - dec.bytes_consumed()
        )));
    }
    Ok(())
}

fn order0_payload(codes: &[u16], b: u8) -> Vec<u8> {
    frame(order0_encode(codes, b), || {
        pack_bits(codes.iter().copied(), codes.len(), b)
    })
}

fn order0_unpayload(payload: &[u8], n: usize, b: u8) -> Result<Vec<u16>> {
    match split_mode(payload)? {
        (MODE_STORED, body) => unpack_bits(body, n, b),
        (_, body) => order0_decode(body, n, b),
    }
}

/// Raw `b`-bit codes, bit-packed.
pub struct Passthrough;

impl Passthrough {
    pub fn descriptor() -> CodecDescriptor {
        CodecDescriptor {
            name: "passthrough".into(),
            wire_id: 0,
            lossless: true,
            min_bit_depth: MIN_BIT_DEPTH,
            max_bit_depth: MAX_BIT_DEPTH,
        }
    }
}

impl Codec for Passthrough {
    fn encode_payload(&self, q: &QuantizedPlane, _: QualityLevel) -> Result<Vec<u8>> {
        Ok(pack_bits(q.codes().iter().copied(), q.len(), q.bit_depth()))
    }

    fn decode_payload(
        &self,
        payload: &[u8],
        g: PlaneGeometry,
        _: QualityLevel,
    ) -> Result<Vec<u16>> {
        unpack_bits(payload, g.len(), g.bit_depth)
    }
}

/// Adaptive order-0 range coding of the codes.
pub struct Entropy0;

impl Entropy0 {
    pub fn descriptor() -> CodecDescriptor {
        CodecDescriptor {
            name: "entropy0".into(),
            wire_id: 1,
            lossless: true,
            min_bit_depth: MIN_BIT_DEPTH,
            max_bit_depth: ENTROPY_MAX_BIT_DEPTH,
        }
    }
}

impl Codec for Entropy0 {
    fn encode_payload(&self, q: &QuantizedPlane, _: QualityLevel) -> Result<Vec<u8>> {
        Ok(order0_payload(q.codes(), q.bit_depth()))
    }

    fn decode_payload(
        &self,
        payload: &[u8],
        g: PlaneGeometry,
        _: QualityLevel,
    ) -> Result<Vec<u16>> {
        order0_unpayload(payload, g.len(), g.bit_depth)
    }
}

const CONTEXTS: usize = 5;
const ACTIVITY_THRESHOLDS: [u32; CONTEXTS - 1] = [2, 6, 16, 40];

/// Median-edge-detector prediction with sign-magnitude residual coding.
///
/// Residual magnitudes and signs are coded under one of five contexts chosen
/// from local gradient activity, measured on an 8-bit scale.
pub struct Predictive;

impl Predictive {
    pub fn descriptor() -> CodecDescriptor {
        CodecDescriptor {
            name: "predictive".into(),
            wire_id: 2,
            lossless: true,
            min_bit_depth: MIN_BIT_DEPTH,
            max_bit_depth: ENTROPY_MAX_BIT_DEPTH,
        }
    }
}

#[inline]
fn med(left: i32, up: i32, up_left: i32) -> i32 {
    if up_left >= left.max(up) {
        left.min(up)
    } else if up_left <= left.min(up) {
        left.max(up)
    } else {
        left + up - up_left
    }
}

/// Prediction and activity context for position `(i, j)` from already-coded
/// codes.
#[inline]
fn predict(codes: &[u16], i: usize, j: usize, cols: usize, b: u8) -> (i32, usize) {
    let at = |r: usize, c: usize| i32::from(codes[r * cols + c]);
    let (pred, activity) = match (i, j) {
        (0, 0) => (1 << (b - 1), 0),
        (0, _) => {
            let left = at(0, j - 1);
            let act = if j >= 2 {
                (left - at(0, j - 2)).abs()
            } else {
                0
            };
            (left, act)
        }
        (_, 0) => {
            let up = at(i - 1, 0);
            let act = if i >= 2 { (up - at(i - 2, 0)).abs() } else { 0 };
            (up, act)
        }
        _ => {
            let (left, up, up_left) = (at(i, j - 1), at(i - 1, j), at(i - 1, j - 1));
            (
                med(left, up, up_left),
                (left - up_left).abs() + (up - up_left).abs(),
            )
        }
    };
    let activity = activity as u32;
    let scaled = if b >= 8 {
        activity >> (b - 8)
    } else {
        activity << (8 - b)
    };
    let ctx = ACTIVITY_THRESHOLDS
        .iter()
        .position(|&t| scaled <= t)
        .unwrap_or(CONTEXTS - 1);
    (pred, ctx)
}

impl Codec for Predictive {
    fn encode_payload(&self, q: &QuantizedPlane, _: QualityLevel) -> Result<Vec<u8>> {
        let (cols, b) = (q.cols(), q.bit_depth());
        let codes = q.codes();
        let mut enc = RangeEncoder::new();
        let mut magnitude: Vec<AdaptiveModel> =
            (0..CONTEXTS).map(|_| AdaptiveModel::new(1 << b)).collect();
        let mut sign: Vec<AdaptiveModel> = (0..CONTEXTS).map(|_| AdaptiveModel::new(2)).collect();
        for i in 0..q.rows() {
            for j in 0..cols {
                let (pred, ctx) = predict(codes, i, j, cols, b);
                let residual = i32::from(codes[i * cols + j]) - pred;
                let m = residual.unsigned_abs() as usize;
                magnitude[ctx].encode(&mut enc, m);
                if m != 0 {
                    sign[ctx].encode(&mut enc, usize::from(residual < 0));
                }
            }
        }
        Ok(frame(enc.finish(), || {
            pack_bits(codes.iter().copied(), codes.len(), b)
        }))
    }

    fn decode_payload(
        &self,
        payload: &[u8],
        g: PlaneGeometry,
        _: QualityLevel,
    ) -> Result<Vec<u16>> {
        let (mode, body) = split_mode(payload)?;
        if mode == MODE_STORED {
            return unpack_bits(body, g.len(), g.bit_depth);
        }
        let (cols, b) = (g.cols, g.bit_depth);
        let max = max_code(b) as i32;
        let mut dec = RangeDecoder::new(body)?;
        let mut magnitude: Vec<AdaptiveModel> =
            (0..CONTEXTS).map(|_| AdaptiveModel::new(1 << b)).collect();
        let mut sign: Vec<AdaptiveModel> = (0..CONTEXTS).map(|_| AdaptiveModel::new(2)).collect();
        let mut codes = vec![0u16; g.len()];
        for i in 0..g.rows {
            for j in 0..cols {
                let (pred, ctx) = predict(&codes, i, j, cols, b);
                let m = magnitude[ctx].decode(&mut dec)? as i32;
                let negative = m != 0 && sign[ctx].decode(&mut dec)? == 1;
                let value = if negative { pred - m } else { pred + m };
                if !(0..=max).contains(&value) {
                    return Err(Error::MalformedBitstream(format!(
                        "reconstructed code {value} out of range"
                    )));
                }
                codes[i * cols + j] = value as u16;
            }
        }
        finish_decode(&dec, body.len())?;
        Ok(codes)
    }
}

/// Bit depth `lossy_requant` keeps at a quality level.
///
/// Grid values map to 2..=6 bits; off-grid values take the setting of the
/// largest grid value not above them (2 bits below the grid).
pub fn requant_bits(quality: QualityLevel) -> u8 {
    const BITS: [u8; 5] = [2, 3, 4, 5, 6];
    super::LAMBDA_GRID
        .iter()
        .rposition(|&g| quality.lambda() >= g)
        .map_or(BITS[0], |i| BITS[i])
}

/// Re-quantizes codes to fewer bits, then entropy codes them.
pub struct LossyRequant;

impl LossyRequant {
    pub fn descriptor() -> CodecDescriptor {
        CodecDescriptor {
            name: "lossy_requant".into(),
            wire_id: 3,
            lossless: false,
            min_bit_depth: MIN_BIT_DEPTH,
            max_bit_depth: MAX_BIT_DEPTH,
        }
    }
}

impl Codec for LossyRequant {
    fn encode_payload(&self, q: &QuantizedPlane, quality: QualityLevel) -> Result<Vec<u8>> {
        let b = q.bit_depth();
        let kept = requant_bits(quality).min(b);
        let shift = b - kept;
        let top = max_code(kept) as u16;
        let reduced: Vec<u16> = if shift == 0 {
            q.codes().to_vec()
        } else {
            let half = 1u32 << (shift - 1);
            q.codes()
                .iter()
                .map(|&c| (((u32::from(c) + half) >> shift) as u16).min(top))
                .collect()
        };
        let mut out = vec![kept];
        out.extend(order0_payload(&reduced, kept));
        Ok(out)
    }

    fn decode_payload(
        &self,
        payload: &[u8],
        g: PlaneGeometry,
        _: QualityLevel,
    ) -> Result<Vec<u16>> {
        let (&kept, rest) = payload
            .split_first()
            .ok_or_else(|| Error::TruncatedPayload("empty payload".into()))?;
        if kept < MIN_BIT_DEPTH || kept > g.bit_depth || kept > ENTROPY_MAX_BIT_DEPTH {
            return Err(Error::MalformedBitstream(format!(
                "requantized depth {kept} invalid for {}-bit plane",
                g.bit_depth
            )));
        }
        let shift = g.bit_depth - kept;
        let reduced = order0_unpayload(rest, g.len(), kept)?;
        Ok(reduced.into_iter().map(|c| c << shift).collect())
    }
}
