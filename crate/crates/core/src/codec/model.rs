//! Adaptive frequency model backed by a Fenwick tree.

use super::range_coder::{RangeDecoder, RangeEncoder};
use crate::error::Result;

pub const INCREMENT: u32 = 32;
pub const RESCALE_LIMIT: u32 = 1 << 16;
/// Largest alphabet whose all-ones initial table fits under the rescale limit
/// with room to adapt.
pub const MAX_ALPHABET: usize = 1 << 12;

pub struct AdaptiveModel {
    freq: Vec<u32>,
    tree: Vec<u32>,
    total: u32,
    top_bit: usize,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(
            (2..=MAX_ALPHABET).contains(&alphabet),
            "alphabet size {alphabet} out of range"
        );
        let mut m = AdaptiveModel {
            freq: vec![1; alphabet],
            tree: vec![0; alphabet + 1],
            total: alphabet as u32,
            top_bit: 1 << (usize::BITS - 1 - alphabet.leading_zeros()),
        };
        m.rebuild();
        m
    }

    fn rebuild(&mut self) {
        let n = self.freq.len();
        self.tree[1..].copy_from_slice(&self.freq);
        self.tree[0] = 0;
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
        self.total = self.freq.iter().sum();
    }

    /// Sum of frequencies of symbols below `sym`.
    #[inline]
    fn cum(&self, sym: usize) -> u32 {
        let mut i = sym;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Largest symbol whose cumulative count is `<= target`.
    #[inline]
    fn find(&self, mut target: u32) -> usize {
        let n = self.freq.len();
        let mut pos = 0;
        let mut step = self.top_bit;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }

    #[inline]
    fn update(&mut self, sym: usize) {
        if self.total + INCREMENT > RESCALE_LIMIT {
            for f in &mut self.freq {
                *f = (*f).div_ceil(2);
            }
            self.rebuild();
        }
        self.freq[sym] += INCREMENT;
        self.total += INCREMENT;
        let n = self.freq.len();
        let mut i = sym + 1;
        while i <= n {
            self.tree[i] += INCREMENT;
            i += i & i.wrapping_neg();
        }
    }

    #[inline]
    pub fn encode(&mut self, enc: &mut RangeEncoder, sym: usize) {
        let cum = self.cum(sym);
        enc.encode(cum, self.freq[sym], self.total);
        self.update(sym);
    }

    #[inline]
    pub fn decode(&mut self, dec: &mut RangeDecoder<'_>) -> Result<usize> {
        let target = dec.target(self.total);
        let sym = self.find(target);
        let cum = self.cum(sym);
        dec.consume(cum, self.freq[sym], self.total)?;
        self.update(sym);
        Ok(sym)
    }

    pub fn alphabet(&self) -> usize {
        self.freq.len()
    }

    #[cfg(test)]
    fn total(&self) -> u32 {
        self.total
    }
}
