//! Byte-wise renormalizing range coder with carry propagation.
//!
//! The coder keeps a 32-bit range and a 33-bit low; interval splits use exact
//! 64-bit products so no range is wasted on rounding. `flush` emits the
//! four trailing bytes the decoder needs, and the decoder consumes exactly
//! as many bytes as the encoder produced.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to `[cum, cum + freq)` out of `total`.
    #[inline]
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total <= 1 << 16);
        let r = u64::from(self.range);
        let t = u64::from(total);
        let lo = r * u64::from(cum) / t;
        let hi = r * u64::from(cum + freq) / t;
        self.low += lo;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::TruncatedPayload("range-coded data ended early".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Cumulative count the next symbol falls into, in `[0, total)`.
    #[inline]
    pub fn target(&self, total: u32) -> u32 {
        let t = ((u64::from(self.code) + 1) * u64::from(total) - 1) / u64::from(self.range);
        t.min(u64::from(total - 1)) as u32
    }

    /// Consumes the symbol occupying `[cum, cum + freq)`.
    #[inline]
    pub fn consume(&mut self, cum: u32, freq: u32, total: u32) -> Result<()> {
        let r = u64::from(self.range);
        let t = u64::from(total);
        let lo = r * u64::from(cum) / t;
        let hi = r * u64::from(cum + freq) / t;
        if u64::from(self.code) < lo || u64::from(self.code) >= hi {
            return Err(Error::MalformedBitstream(
                "range decoder desynchronized".into(),
            ));
        }
        self.code -= lo as u32;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_model_round_trip() {
        // static 3-symbol model: freqs 1, 6, 9 of 16
        let cums = [0u32, 1, 7, 16];
        let symbols: Vec<usize> = (0..5000).map(|i| (i * 7 + i / 3) % 3).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(cums[s], cums[s + 1] - cums[s], 16);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            let t = dec.target(16);
            let got = cums.iter().rposition(|&c| c <= t).unwrap();
            assert_eq!(got, s);
            dec.consume(cums[got], cums[got + 1] - cums[got], 16)
                .unwrap();
        }
        assert_eq!(dec.bytes_consumed(), bytes.len());
    }

    #[test]
    fn carry_heavy_stream() {
        // long runs of the top symbol push low toward 0xFF.. and exercise carries
        let mut enc = RangeEncoder::new();
        let mut symbols = Vec::new();
        for i in 0..20_000u32 {
            let s = if i % 97 == 0 { 0 } else { 1 };
            symbols.push(s);
            if s == 0 {
                enc.encode(0, 1, 65536);
            } else {
                enc.encode(1, 65535, 65536);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            let got = u32::from(dec.target(65536) >= 1);
            assert_eq!(got, s);
            if got == 0 {
                dec.consume(0, 1, 65536).unwrap();
            } else {
                dec.consume(1, 65535, 65536).unwrap();
            }
        }
    }

    #[test]
    fn truncated_input_errors() {
        let mut enc = RangeEncoder::new();
        for i in 0..100u32 {
            enc.encode(i % 4, 1, 4);
        }
        let bytes = enc.finish();
        let short = &bytes[..bytes.len() - 3];
        let mut dec = RangeDecoder::new(short).unwrap();
        let mut failed = false;
        for _ in 0..100 {
            let t = dec.target(4);
            if dec.consume(t, 1, 4).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
        assert!(RangeDecoder::new(&[0, 1]).is_err());
    }
}
