//! Bitrate, distortion and rate-performance reporting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::container::FeatureTensor;
use crate::error::{Error, Result};
use crate::practicality::BmaxReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    /// Payload bits only.
    pub payload_bits: u64,
    pub element_count: u64,
    /// Source precision in bits per element.
    pub raw_bits: u32,
    pub header_bits: u64,
}

impl RateRecord {
    /// The record of an uncompressed tensor: `raw_bits` per element.
    pub fn uncompressed(element_count: u64, raw_bits: u32) -> Self {
        RateRecord {
            payload_bits: element_count * u64::from(raw_bits),
            element_count,
            raw_bits,
            header_bits: 0,
        }
    }
}

/// Bits per feature point.
pub fn bpfp(r: &RateRecord) -> Result<f64> {
    if r.element_count == 0 {
        return Err(Error::ZeroElements);
    }
    Ok(r.payload_bits as f64 / r.element_count as f64)
}

/// BPFP rescaled to a 32-bit source.
pub fn ebpfp(r: &RateRecord) -> Result<f64> {
    match r.raw_bits {
        32 => bpfp(r),
        16 => Ok(2.0 * bpfp(r)?),
        other => Err(Error::UnsupportedPrecision(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionRecord {
    pub mse: f64,
}

pub fn mse(original: &FeatureTensor, reconstructed: &FeatureTensor) -> Result<DistortionRecord> {
    if original.shape() != reconstructed.shape() {
        return Err(Error::ShapeMismatch(
            original.shape().to_vec(),
            reconstructed.shape().to_vec(),
        ));
    }
    let sum: f64 = original
        .values()
        .iter()
        .zip(reconstructed.values())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(DistortionRecord {
        mse: sum / original.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub metric_name: String,
    pub value: f64,
    pub direction: Direction,
}

/// Pearson correlation. `rho` is `None` when undefined (fewer than two
/// points or a zero-variance series).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: Option<f64>,
    pub n_points: usize,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    Ok(CorrelationReport {
        rho: pearson_slices(xs, ys),
        n_points: xs.len(),
    })
}

/// Two-pass Pearson correlation of equal-length slices.
pub(crate) fn pearson_slices(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePerformancePoint {
    pub lambda: f64,
    pub ebpfp: f64,
    pub bpfp: f64,
    pub mse: f64,
    pub performance: Option<PerformanceRecord>,
    pub bmax: Option<BmaxReport>,
    pub header_bits: u64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub lambda: f64,
    pub rate: RateRecord,
    pub distortion: DistortionRecord,
    pub performance: Option<PerformanceRecord>,
    pub bmax: Option<BmaxReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpTable {
    pub points: Vec<RatePerformancePoint>,
    /// Correlation between the MSE and performance columns.
    pub correlation: CorrelationReport,
}

/// Assembles one table row per lambda, sorted ascending, and correlates
/// MSE with task performance across the rows that carry a performance
/// value.
pub fn build_rp_table(runs: &[RunRecord]) -> Result<RpTable> {
    if runs.is_empty() {
        return Err(Error::NoRuns);
    }
    let mut sorted: Vec<&RunRecord> = runs.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    if let Some(w) = sorted.windows(2).find(|w| w[0].lambda == w[1].lambda) {
        return Err(Error::DuplicateLambda(w[0].lambda));
    }
    let points = sorted
        .iter()
        .map(|r| {
            Ok(RatePerformancePoint {
                lambda: r.lambda,
                ebpfp: ebpfp(&r.rate)?,
                bpfp: bpfp(&r.rate)?,
                mse: r.distortion.mse,
                performance: r.performance.clone(),
                bmax: r.bmax.clone(),
                header_bits: r.rate.header_bits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mses, perfs): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.performance.as_ref().map(|perf| (p.mse, perf.value)))
        .unzip();
    let correlation = pearson(&mses, &perfs)?;
    Ok(RpTable {
        points,
        correlation,
    })
}

pub const RP_CSV_HEADER: [&str; 8] = [
    "lambda",
    "ebpfp",
    "bpfp",
    "mse",
    "perf_name",
    "perf_value",
    "bmax_mbps",
    "header_bits",
];

impl RpTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RP_CSV_HEADER)?;
        for p in &self.points {
            let (name, value) = match &p.performance {
                Some(perf) => (perf.metric_name.clone(), perf.value.to_string()),
                None => (String::new(), String::new()),
            };
            let bmax = p
                .bmax
                .as_ref()
                .map(|b| b.bmax_mbps().to_string())
                .unwrap_or_default();
            w.write_record([
                p.lambda.to_string(),
                p.ebpfp.to_string(),
                p.bpfp.to_string(),
                p.mse.to_string(),
                name,
                value,
                bmax,
                p.header_bits.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}
