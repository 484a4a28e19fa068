//! Calibration-derived monotone transform and fixed bit-depth quantization.
//!
//! The transform is the piecewise-linear empirical CDF of a pooled
//! calibration set, sampled at 257 evenly spaced probability levels. Values
//! are clamped to the calibration range, mapped to `[0, 1]` and rounded to
//! `b`-bit integer codes.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::FeatureTensor;
use crate::error::{Error, Result};
use crate::packing::Packed2D;

pub const KNOT_COUNT: usize = 257;
pub const DEFAULT_BIT_DEPTH: u8 = 8;
pub const MIN_BIT_DEPTH: u8 = 2;
pub const MAX_BIT_DEPTH: u8 = 16;

pub fn check_bit_depth(b: u8) -> Result<()> {
    if (MIN_BIT_DEPTH..=MAX_BIT_DEPTH).contains(&b) {
        Ok(())
    } else {
        Err(Error::InvalidBitDepth(b))
    }
}

#[inline]
pub fn max_code(b: u8) -> u32 {
    (1u32 << b) - 1
}

/// Pooled empirical quantiles of a calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub role_class: String,
    pub sample_count: usize,
    pub quantiles: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl CalibrationStats {
    pub fn from_tensors(tensors: &[FeatureTensor], role_class: &str) -> Result<Self> {
        let mut pooled: Vec<f64> = tensors
            .iter()
            .flat_map(|t| t.values().iter().map(|&v| f64::from(v)))
            .collect();
        if tensors.is_empty() || pooled.len() < KNOT_COUNT {
            return Err(Error::TooFewSamples {
                needed: KNOT_COUNT,
                got: pooled.len(),
            });
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform(
                "non-finite calibration value".into(),
            ));
        }
        pooled.sort_unstable_by(f64::total_cmp);
        let quantiles = (0..KNOT_COUNT)
            .map(|k| empirical_quantile(&pooled, k as f64 / (KNOT_COUNT - 1) as f64))
            .collect();
        Ok(CalibrationStats {
            role_class: role_class.to_owned(),
            sample_count: tensors.len(),
            quantiles,
            min: pooled[0],
            max: pooled[pooled.len() - 1],
        })
    }
}

/// Linear-interpolation quantile of sorted data at probability `p`.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Strictly increasing knots mapped onto a uniform output grid on `[0, 1]`.
///
/// The output at knot `i` is `i / (K - 1)`, so the knots alone describe the
/// transform. Duplicate quantiles are merged before the grid is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTransform {
    knots: Vec<f32>,
}

impl MonotoneTransform {
    pub fn from_knots(knots: Vec<f32>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidTransform(format!(
                "need at least two knots, got {}",
                knots.len()
            )));
        }
        if knots.len() > u16::MAX as usize {
            return Err(Error::InvalidTransform("too many knots".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidTransform("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTransform(
                "knots must strictly increase".into(),
            ));
        }
        Ok(MonotoneTransform { knots })
    }

    /// Evenly spaced knots over `[lo, hi]`: a linear map onto `[0, 1]`.
    pub fn linear(lo: f32, hi: f32) -> Result<Self> {
        let (lo64, hi64) = (f64::from(lo), f64::from(hi));
        let last = (KNOT_COUNT - 1) as f64;
        let knots = (0..KNOT_COUNT)
            .map(|k| (lo64 + (hi64 - lo64) * k as f64 / last) as f32)
            .collect();
        Self::from_knots(knots)
    }

    pub fn from_stats(stats: &CalibrationStats) -> Result<Self> {
        if stats.sample_count == 0 {
            return Err(Error::TooFewSamples {
                needed: KNOT_COUNT,
                got: 0,
            });
        }
        let mut knots: Vec<f32> = stats.quantiles.iter().map(|&q| q as f32).collect();
        knots.dedup();
        if knots.len() < 2 {
            return Err(Error::DegenerateCalibration);
        }
        Self::from_knots(knots)
    }

    pub fn knots(&self) -> &[f32] {
        &self.knots
    }

    pub fn outputs(&self) -> Vec<f64> {
        let last = (self.knots.len() - 1) as f64;
        (0..self.knots.len()).map(|i| i as f64 / last).collect()
    }

    pub fn lo(&self) -> f64 {
        f64::from(self.knots[0])
    }

    pub fn hi(&self) -> f64 {
        f64::from(self.knots[self.knots.len() - 1])
    }

    /// Maps `v` (clamped to the knot range) to `[0, 1]`.
    pub fn apply(&self, v: f64) -> f64 {
        let k = &self.knots;
        let segments = k.len() - 1;
        if v <= self.lo() {
            return 0.0;
        }
        if v >= self.hi() {
            return 1.0;
        }
        // first knot strictly greater than v, minus one
        let i = k.partition_point(|&x| f64::from(x) <= v) - 1;
        let (a, b) = (f64::from(k[i]), f64::from(k[i + 1]));
        (i as f64 + (v - a) / (b - a)) / segments as f64
    }

    /// Inverse of [`apply`](Self::apply) for `t` in `[0, 1]`.
    pub fn invert(&self, t: f64) -> f64 {
        let k = &self.knots;
        let segments = k.len() - 1;
        let pos = t.clamp(0.0, 1.0) * segments as f64;
        let i = (pos.floor() as usize).min(segments - 1);
        let frac = pos - i as f64;
        let (a, b) = (f64::from(k[i]), f64::from(k[i + 1]));
        if frac == 0.0 {
            a
        } else {
            (a + frac * (b - a)).min(self.hi())
        }
    }

    pub fn save_json(&self, role_class: &str, path: &Path) -> Result<()> {
        let file = TransformFile {
            role_class: role_class.to_owned(),
            knots: self.knots.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<(String, Self)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TransformFile = serde_json::from_str(&text)?;
        Ok((file.role_class, Self::from_knots(file.knots)?))
    }
}

/// `.transform.json` contents.
#[derive(Debug, Serialize, Deserialize)]
struct TransformFile {
    role_class: String,
    knots: Vec<f32>,
}

/// Fits the frozen transform for one role class from calibration tensors.
pub fn calibrate(calib: &[FeatureTensor], role_class: &str) -> Result<MonotoneTransform> {
    MonotoneTransform::from_stats(&CalibrationStats::from_tensors(calib, role_class)?)
}

/// Integer codes of a packed plane plus the transform that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPlane {
    rows: usize,
    cols: usize,
    codes: Vec<u16>,
    bit_depth: u8,
    transform: Arc<MonotoneTransform>,
}

impl QuantizedPlane {
    pub fn new(
        rows: usize,
        cols: usize,
        codes: Vec<u16>,
        bit_depth: u8,
        transform: Arc<MonotoneTransform>,
    ) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(codes.len()) {
            return Err(Error::ElementCount {
                shape: vec![rows, cols],
                expected: rows.saturating_mul(cols),
                actual: codes.len(),
            });
        }
        let max = max_code(bit_depth);
        if let Some(index) = codes.iter().position(|&c| u32::from(c) > max) {
            return Err(Error::CodeOutOfRange {
                code: codes[index],
                index,
                bit_depth,
            });
        }
        Ok(QuantizedPlane {
            rows,
            cols,
            codes,
            bit_depth,
            transform,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn transform(&self) -> &Arc<MonotoneTransform> {
        &self.transform
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Quantizes a single value to a `b`-bit code.
#[inline]
pub fn quantize_value(transform: &MonotoneTransform, v: f64, b: u8) -> u16 {
    let scale = f64::from(max_code(b));
    // f64::round is half-away-from-zero
    (transform.apply(v) * scale).round() as u16
}

#[inline]
pub fn dequantize_code(transform: &MonotoneTransform, code: u16, b: u8) -> f64 {
    transform.invert(f64::from(code) / f64::from(max_code(b)))
}

pub fn forward(
    plane: &Packed2D,
    transform: &Arc<MonotoneTransform>,
    bit_depth: u8,
) -> Result<QuantizedPlane> {
    check_bit_depth(bit_depth)?;
    let codes = plane
        .values()
        .iter()
        .map(|&v| quantize_value(transform, v, bit_depth))
        .collect();
    QuantizedPlane::new(
        plane.rows(),
        plane.cols(),
        codes,
        bit_depth,
        Arc::clone(transform),
    )
}

pub fn inverse(q: &QuantizedPlane) -> Result<Packed2D> {
    let max = max_code(q.bit_depth);
    let values = q
        .codes
        .iter()
        .enumerate()
        .map(|(index, &code)| {
            if u32::from(code) > max {
                Err(Error::CodeOutOfRange {
                    code,
                    index,
                    bit_depth: q.bit_depth,
                })
            } else {
                Ok(dequantize_code(&q.transform, code, q.bit_depth))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Packed2D::new(q.rows, q.cols, values)
}
