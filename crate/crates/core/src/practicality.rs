//! Codec timing, size and memory instrumentation, and the maximum
//! advantageous bandwidth.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{CodecRegistry, QualityLevel};
use crate::container::FeatureTensor;
use crate::error::{Error, Result};
use crate::packing::{pack, unpack, PackingRecord};
use crate::quant::{forward, inverse, MonotoneTransform, QuantizedPlane};

pub const DEFAULT_REPS: usize = 10;
pub const DEFAULT_WARMUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub t_enc_s: f64,
    pub t_dec_s: f64,
    pub repetitions: usize,
    pub warmups: usize,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRecord {
    pub s_raw_bits: u64,
    pub s_enc_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaxReport {
    /// Bits per second.
    pub bmax_bps: f64,
    pub timing: TimingRecord,
    pub size: SizeRecord,
}

impl BmaxReport {
    /// Decimal megabits per second.
    pub fn bmax_mbps(&self) -> f64 {
        self.bmax_bps / 1e6
    }
}

/// Bandwidth below which encode + transmit + decode beats sending raw
/// features; zero when coding saves no bits.
pub fn b_max(t: &TimingRecord, s: &SizeRecord) -> Result<BmaxReport> {
    let total = t.t_enc_s + t.t_dec_s;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTime);
    }
    let saved = s.s_raw_bits.saturating_sub(s.s_enc_bits) as f64;
    Ok(BmaxReport {
        bmax_bps: saved / total,
        timing: t.clone(),
        size: *s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMethod {
    AllocatorHook,
    OsSample,
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub peak_bytes: u64,
    pub method: MemoryMethod,
}

impl MemoryReport {
    pub const UNAVAILABLE: MemoryReport = MemoryReport {
        peak_bytes: 0,
        method: MemoryMethod::Unavailable,
    };
}

/// Source of peak-memory readings around a measurement window.
pub trait MemoryProbe: Send + Sync {
    /// Starts a fresh window.
    fn reset(&self);
    /// Peak bytes above the level at the last `reset`.
    fn peak_since_reset(&self) -> MemoryReport;
}

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

/// Global allocator wrapper that tracks live and peak heap bytes.
///
/// Install it in a binary with
/// `#[global_allocator] static A: TrackingAllocator = TrackingAllocator;`
/// and hand [`AllocatorProbe`] to the bench harness.
pub struct TrackingAllocator;

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size > layout.size() {
                let grow = new_size - layout.size();
                let now = CURRENT.fetch_add(grow, Ordering::Relaxed) + grow;
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Reads [`TrackingAllocator`] counters. Reports nothing useful unless the
/// allocator is installed.
#[derive(Debug, Default)]
pub struct AllocatorProbe {
    baseline: AtomicUsize,
}

impl MemoryProbe for AllocatorProbe {
    fn reset(&self) {
        let now = CURRENT.load(Ordering::Relaxed);
        self.baseline.store(now, Ordering::Relaxed);
        PEAK.store(now, Ordering::Relaxed);
    }

    fn peak_since_reset(&self) -> MemoryReport {
        let peak = PEAK.load(Ordering::Relaxed);
        let base = self.baseline.load(Ordering::Relaxed);
        MemoryReport {
            peak_bytes: peak.saturating_sub(base) as u64,
            method: MemoryMethod::AllocatorHook,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureScope {
    /// Codec encode/decode on quantized planes only.
    CodecOnly,
    /// Adds pack + quantize before encoding and dequantize + unpack after.
    EndToEnd,
}

#[derive(Clone)]
pub struct BenchOptions {
    pub reps: usize,
    pub warmups: usize,
    /// Source precision for `S_raw`.
    pub raw_bits: u32,
    pub probe: Option<Arc<dyn MemoryProbe>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: DEFAULT_REPS,
            warmups: DEFAULT_WARMUPS,
            raw_bits: 32,
            probe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub timing: TimingRecord,
    pub size: SizeRecord,
    pub memory: MemoryReport,
    pub header_bits: u64,
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs `enc` then `dec` `warmups + reps` times and keeps per-phase medians
/// of the timed repetitions.
fn time_phases<E, D, T>(
    reps: usize,
    warmups: usize,
    probe: Option<&dyn MemoryProbe>,
    mut enc: E,
    mut dec: D,
) -> Result<(TimingRecord, MemoryReport, T)>
where
    E: FnMut() -> Result<T>,
    D: FnMut(&T) -> Result<()>,
{
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    for _ in 0..warmups {
        let out = enc()?;
        dec(&out)?;
    }
    if let Some(p) = probe {
        p.reset();
    }
    let mut t_enc = Vec::with_capacity(reps);
    let mut t_dec = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let out = enc()?;
        t_enc.push(start.elapsed().as_secs_f64());
        let start = Instant::now();
        dec(&out)?;
        t_dec.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    let memory = probe.map_or(MemoryReport::UNAVAILABLE, |p| p.peak_since_reset());
    Ok((
        TimingRecord {
            t_enc_s: median(&t_enc),
            t_dec_s: median(&t_dec),
            repetitions: reps,
            warmups,
            aggregation: Aggregation::Median,
        },
        memory,
        last.expect("reps >= 1"),
    ))
}

/// Times codec-only encode and decode of a quantized plane.
pub fn measure_codec(
    registry: &CodecRegistry,
    codec: &str,
    q: &QuantizedPlane,
    record: &PackingRecord,
    quality: QualityLevel,
    opts: &BenchOptions,
) -> Result<Measurement> {
    let (timing, memory, bs) = time_phases(
        opts.reps,
        opts.warmups,
        opts.probe.as_deref(),
        || registry.encode(q, codec, quality, record),
        |bs| registry.decode(bs).map(drop),
    )?;
    Ok(Measurement {
        timing,
        size: SizeRecord {
            s_raw_bits: q.len() as u64 * u64::from(opts.raw_bits),
            s_enc_bits: bs.payload_bits(),
        },
        memory,
        header_bits: bs.header_bits(),
    })
}

/// Times the whole pipeline: pack, quantize and encode; decode,
/// dequantize and unpack.
pub fn measure_end_to_end(
    registry: &CodecRegistry,
    codec: &str,
    tensor: &FeatureTensor,
    transform: &Arc<MonotoneTransform>,
    bit_depth: u8,
    quality: QualityLevel,
    opts: &BenchOptions,
) -> Result<Measurement> {
    let (timing, memory, bs) = time_phases(
        opts.reps,
        opts.warmups,
        opts.probe.as_deref(),
        || {
            let (plane, record) = pack(tensor)?;
            let q = forward(&plane, transform, bit_depth)?;
            registry.encode(&q, codec, quality, &record)
        },
        |bs| {
            let (q, record) = registry.decode(bs)?;
            unpack(inverse(&q)?, &record).map(drop)
        },
    )?;
    Ok(Measurement {
        timing,
        size: SizeRecord {
            s_raw_bits: tensor.len() as u64 * u64::from(tensor.precision().bit_width()),
            s_enc_bits: bs.payload_bits(),
        },
        memory,
        header_bits: bs.header_bits(),
    })
}

/// One line of bench JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub codec: String,
    pub lambda: f64,
    pub t_enc_s: f64,
    pub t_dec_s: f64,
    pub s_raw_bits: u64,
    pub s_enc_bits: u64,
    pub bmax_bps: f64,
    pub bmax_mbps: f64,
    pub mem_peak_bytes: u64,
    pub mem_method: MemoryMethod,
}

impl BenchReport {
    pub fn new(codec: &str, quality: QualityLevel, m: &Measurement) -> Result<Self> {
        let b = b_max(&m.timing, &m.size)?;
        Ok(BenchReport {
            codec: codec.to_owned(),
            lambda: quality.lambda(),
            t_enc_s: m.timing.t_enc_s,
            t_dec_s: m.timing.t_dec_s,
            s_raw_bits: m.size.s_raw_bits,
            s_enc_bits: m.size.s_enc_bits,
            bmax_bps: b.bmax_bps,
            bmax_mbps: b.bmax_mbps(),
            mem_peak_bytes: m.memory.peak_bytes,
            mem_method: m.memory.method,
        })
    }
}
