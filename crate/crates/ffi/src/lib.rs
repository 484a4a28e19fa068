//! C ABI over `featcode`.
//!
//! Objects cross the boundary as opaque handles created by `fc_*_new`-style
//! functions and released with the matching `fc_*_free`. Every fallible
//! call returns an [`FcStatus`]; on failure `fc_last_error()` describes the
//! most recent error on the calling thread. Output pointers are written only
//! on success.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use featcode::codec::{Bitstream, CodecRegistry, QualityLevel};
use featcode::container::{FeatureTensor, ScalarPrecision};
use featcode::metrics::{bpfp, ebpfp, mse, RateRecord};
use featcode::packing::{pack, unpack};
use featcode::practicality::{b_max, Aggregation, SizeRecord, TimingRecord};
use featcode::quant::{calibrate, forward, inverse, MonotoneTransform};
use featcode::redundancy::analyze;
use featcode::synthgen::{generate, ArchetypeId, GeneratorSpec};
use featcode::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidShape = 3,
    Calibration = 4,
    UnknownCodec = 5,
    UnsupportedBitDepth = 6,
    MalformedBitstream = 7,
    Io = 8,
    BufferTooSmall = 9,
    Internal = 255,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcPrecision {
    Fp32 = 0,
    Fp16 = 1,
    Bf16 = 2,
}

impl From<FcPrecision> for ScalarPrecision {
    fn from(p: FcPrecision) -> Self {
        match p {
            FcPrecision::Fp32 => ScalarPrecision::Fp32,
            FcPrecision::Fp16 => ScalarPrecision::Fp16,
            FcPrecision::Bf16 => ScalarPrecision::Bf16,
        }
    }
}

/// Redundancy statistics of one tensor. Undefined values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcAnalysis {
    pub rho_h: f64,
    pub rho_v: f64,
    pub valid_rows: usize,
    pub valid_cols: usize,
    pub g_dct: f64,
    pub c_dct: f64,
}

/// Opaque tensor handle.
pub struct FcTensor {
    inner: FeatureTensor,
}

/// Opaque frozen quantization transform.
pub struct FcTransform {
    inner: Arc<MonotoneTransform>,
}

/// Opaque encoded bitstream with its serialized bytes.
pub struct FcBitstream {
    parsed: Bitstream,
    bytes: Vec<u8>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::InvalidShape(_)
        | Error::ElementCount { .. }
        | Error::ShapeMismatch(..)
        | Error::PackingMismatch { .. }
        | Error::DegenerateDimensions { .. } => FcStatus::InvalidShape,
        Error::TooFewSamples { .. } | Error::DegenerateCalibration | Error::InvalidTransform(_) => {
            FcStatus::Calibration
        }
        Error::UnknownCodec(_) | Error::DuplicateCodec(_) | Error::CodecMismatch { .. } => {
            FcStatus::UnknownCodec
        }
        Error::UnsupportedBitDepth { .. } | Error::InvalidBitDepth(_) => {
            FcStatus::UnsupportedBitDepth
        }
        Error::BadMagic(_)
        | Error::BitstreamVersion { .. }
        | Error::TruncatedPayload(_)
        | Error::MalformedBitstream(_)
        | Error::CodeOutOfRange { .. } => FcStatus::MalformedBitstream,
        Error::Io { .. } => FcStatus::Io,
        _ => FcStatus::InvalidArgument,
    }
}

/// Runs `f`, mapping errors and panics onto status codes.
fn guard(f: impl FnOnce() -> Result<(), (FcStatus, String)>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FcStatus::Internal
        }
    }
}

fn lib(e: Error) -> (FcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (FcStatus, String) {
    (FcStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn cstr<'a>(p: *const c_char, name: &str) -> Result<&'a str, (FcStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FcStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, (FcStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn array<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (FcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), (FcStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), (FcStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = value;
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `len` values into a new tensor, rounding them to `precision`.
#[no_mangle]
pub unsafe extern "C" fn fc_tensor_new(
    id: *const c_char,
    shape: *const usize,
    rank: usize,
    values: *const f32,
    len: usize,
    precision: FcPrecision,
    out: *mut *mut FcTensor,
) -> FcStatus {
    guard(|| {
        let id = cstr(id, "id")?;
        let shape = array(shape, rank, "shape")?.to_vec();
        let values = array(values, len, "values")?.to_vec();
        let t = FeatureTensor::new(id, precision.into(), shape, values).map_err(lib)?;
        emit(out, FcTensor { inner: t }, "out")
    })
}

/// Synthetic tensor from a named archetype (e.g. "latent_spatial").
#[no_mangle]
pub unsafe extern "C" fn fc_tensor_generate(
    archetype: *const c_char,
    shape: *const usize,
    rank: usize,
    seed: u64,
    out: *mut *mut FcTensor,
) -> FcStatus {
    guard(|| {
        let a: ArchetypeId = cstr(archetype, "archetype")?.parse().map_err(lib)?;
        let shape = array(shape, rank, "shape")?.to_vec();
        let t = generate(&GeneratorSpec::new(a, shape, seed)).map_err(lib)?;
        emit(out, FcTensor { inner: t }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_tensor_len(tensor: *const FcTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn fc_tensor_rank(tensor: *const FcTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.shape().len())
}

/// Copies the shape into `dims`, which must hold `fc_tensor_rank` entries.
#[no_mangle]
pub unsafe extern "C" fn fc_tensor_shape(
    tensor: *const FcTensor,
    dims: *mut usize,
    capacity: usize,
) -> FcStatus {
    guard(|| {
        let t = borrow(tensor, "tensor")?;
        let shape = t.inner.shape();
        if capacity < shape.len() {
            return Err((
                FcStatus::BufferTooSmall,
                format!("need {} dims, have {capacity}", shape.len()),
            ));
        }
        if dims.is_null() {
            return Err(null("dims"));
        }
        ptr::copy_nonoverlapping(shape.as_ptr(), dims, shape.len());
        Ok(())
    })
}

/// Borrowed pointer to `fc_tensor_len` FP32 values; lives as long as the handle.
#[no_mangle]
pub unsafe extern "C" fn fc_tensor_values(tensor: *const FcTensor) -> *const f32 {
    tensor
        .as_ref()
        .map_or(ptr::null(), |t| t.inner.values().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn fc_tensor_free(tensor: *mut FcTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Fits a transform on `count` calibration tensors.
#[no_mangle]
pub unsafe extern "C" fn fc_transform_calibrate(
    tensors: *const *const FcTensor,
    count: usize,
    role: *const c_char,
    out: *mut *mut FcTransform,
) -> FcStatus {
    guard(|| {
        let role = cstr(role, "role")?;
        let pool = array(tensors, count, "tensors")?
            .iter()
            .map(|&p| borrow(p, "tensors[i]").map(|t| t.inner.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let t = calibrate(&pool, role).map_err(lib)?;
        emit(out, FcTransform { inner: Arc::new(t) }, "out")
    })
}

/// Identity-style transform mapping `[lo, hi]` linearly onto `[0, 1]`.
#[no_mangle]
pub unsafe extern "C" fn fc_transform_linear(
    lo: f32,
    hi: f32,
    out: *mut *mut FcTransform,
) -> FcStatus {
    guard(|| {
        let t = MonotoneTransform::linear(lo, hi).map_err(lib)?;
        emit(out, FcTransform { inner: Arc::new(t) }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_transform_free(transform: *mut FcTransform) {
    if !transform.is_null() {
        drop(Box::from_raw(transform));
    }
}

/// Pack, quantize and encode with the named codec.
#[no_mangle]
pub unsafe extern "C" fn fc_encode(
    tensor: *const FcTensor,
    transform: *const FcTransform,
    codec: *const c_char,
    lambda: f64,
    bit_depth: u8,
    out: *mut *mut FcBitstream,
) -> FcStatus {
    guard(|| {
        let t = &borrow(tensor, "tensor")?.inner;
        let tf = &borrow(transform, "transform")?.inner;
        let codec = cstr(codec, "codec")?;
        let quality = QualityLevel::custom(lambda).map_err(lib)?;
        let (plane, record) = pack(t).map_err(lib)?;
        let q = forward(&plane, tf, bit_depth).map_err(lib)?;
        let bs = CodecRegistry::with_builtin()
            .encode(&q, codec, quality, &record)
            .map_err(lib)?;
        let bytes = bs.to_bytes().map_err(lib)?;
        emit(out, FcBitstream { parsed: bs, bytes }, "out")
    })
}

/// Parses serialized bytes into a bitstream handle.
#[no_mangle]
pub unsafe extern "C" fn fc_bitstream_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut FcBitstream,
) -> FcStatus {
    guard(|| {
        let bytes = array(data, len, "data")?.to_vec();
        let parsed = Bitstream::from_bytes(&bytes).map_err(lib)?;
        emit(out, FcBitstream { parsed, bytes }, "out")
    })
}

/// Borrowed view of the serialized bytes; lives as long as the handle.
#[no_mangle]
pub unsafe extern "C" fn fc_bitstream_bytes(
    bitstream: *const FcBitstream,
    data: *mut *const u8,
    len: *mut usize,
) -> FcStatus {
    guard(|| {
        let bs = borrow(bitstream, "bitstream")?;
        write(data, bs.bytes.as_ptr(), "data")?;
        write(len, bs.bytes.len(), "len")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_bitstream_payload_bits(bitstream: *const FcBitstream) -> u64 {
    bitstream.as_ref().map_or(0, |b| b.parsed.payload_bits())
}

#[no_mangle]
pub unsafe extern "C" fn fc_bitstream_header_bits(bitstream: *const FcBitstream) -> u64 {
    bitstream.as_ref().map_or(0, |b| b.parsed.header_bits())
}

#[no_mangle]
pub unsafe extern "C" fn fc_bitstream_free(bitstream: *mut FcBitstream) {
    if !bitstream.is_null() {
        drop(Box::from_raw(bitstream));
    }
}

/// Decode, dequantize and unpack into an FP32 tensor. `id` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fc_decode(
    bitstream: *const FcBitstream,
    id: *const c_char,
    out: *mut *mut FcTensor,
) -> FcStatus {
    guard(|| {
        let bs = &borrow(bitstream, "bitstream")?.parsed;
        let (q, mut record) = CodecRegistry::with_builtin().decode(bs).map_err(lib)?;
        if !id.is_null() {
            record.tensor_id = cstr(id, "id")?.to_owned();
        }
        let plane = inverse(&q).map_err(lib)?;
        let t = unpack(plane, &record).map_err(lib)?;
        emit(out, FcTensor { inner: t }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_bpfp(payload_bits: u64, element_count: u64, out: *mut f64) -> FcStatus {
    guard(|| {
        let r = RateRecord {
            payload_bits,
            element_count,
            raw_bits: 32,
            header_bits: 0,
        };
        write(out, bpfp(&r).map_err(lib)?, "out")
    })
}

/// `raw_bits` is the source precision: 32 or 16.
#[no_mangle]
pub unsafe extern "C" fn fc_ebpfp(
    payload_bits: u64,
    element_count: u64,
    raw_bits: u32,
    out: *mut f64,
) -> FcStatus {
    guard(|| {
        let r = RateRecord {
            payload_bits,
            element_count,
            raw_bits,
            header_bits: 0,
        };
        write(out, ebpfp(&r).map_err(lib)?, "out")
    })
}

/// Maximum operating bandwidth in bits per second.
#[no_mangle]
pub unsafe extern "C" fn fc_b_max(
    s_raw_bits: u64,
    s_enc_bits: u64,
    t_enc_s: f64,
    t_dec_s: f64,
    out_bps: *mut f64,
) -> FcStatus {
    guard(|| {
        let t = TimingRecord {
            t_enc_s,
            t_dec_s,
            repetitions: 1,
            warmups: 0,
            aggregation: Aggregation::Median,
        };
        let s = SizeRecord {
            s_raw_bits,
            s_enc_bits,
        };
        write(out_bps, b_max(&t, &s).map_err(lib)?.bmax_bps, "out_bps")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_mse(
    original: *const FcTensor,
    reconstructed: *const FcTensor,
    out: *mut f64,
) -> FcStatus {
    guard(|| {
        let a = &borrow(original, "original")?.inner;
        let b = &borrow(reconstructed, "reconstructed")?.inner;
        write(out, mse(a, b).map_err(lib)?.mse, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_analyze(tensor: *const FcTensor, out: *mut FcAnalysis) -> FcStatus {
    guard(|| {
        let t = &borrow(tensor, "tensor")?.inner;
        let r = analyze(t, 1).map_err(lib)?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        write(
            out,
            FcAnalysis {
                rho_h: nan(r.rho_h),
                rho_v: nan(r.rho_v),
                valid_rows: r.valid_rows,
                valid_cols: r.valid_cols,
                g_dct: nan(r.g_dct),
                c_dct: nan(r.c_dct),
            },
            "out",
        )
    })
}
