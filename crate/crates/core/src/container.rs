//! On-disk feature containers.
//!
//! A container is two files side by side: `<name>.manifest.json`, a
//! human-readable index, and `<name>.blob`, the concatenated row-major
//! little-endian element bytes of every tensor at its declared precision.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Storage precision of a feature tensor. Its bit width is the `P_raw`
/// used for equivalent-bitrate normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarPrecision {
    Fp32,
    Fp16,
    Bf16,
}

impl ScalarPrecision {
    pub const fn bit_width(self) -> u32 {
        match self {
            ScalarPrecision::Fp32 => 32,
            ScalarPrecision::Fp16 | ScalarPrecision::Bf16 => 16,
        }
    }

    pub const fn byte_width(self) -> usize {
        self.bit_width() as usize / 8
    }

    /// Rounds `v` to the nearest value representable at this precision.
    pub fn round(self, v: f32) -> f32 {
        match self {
            ScalarPrecision::Fp32 => v,
            ScalarPrecision::Fp16 => f16::from_f32(v).to_f32(),
            ScalarPrecision::Bf16 => bf16::from_f32(v).to_f32(),
        }
    }

    fn encode(self, v: f32, out: &mut Vec<u8>) {
        match self {
            ScalarPrecision::Fp32 => out.extend_from_slice(&v.to_le_bytes()),
            ScalarPrecision::Fp16 => out.extend_from_slice(&f16::from_f32(v).to_le_bytes()),
            ScalarPrecision::Bf16 => out.extend_from_slice(&bf16::from_f32(v).to_le_bytes()),
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f32> {
        match self {
            ScalarPrecision::Fp32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            ScalarPrecision::Fp16 => bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            ScalarPrecision::Bf16 => bytes
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        }
    }
}

impl fmt::Display for ScalarPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarPrecision::Fp32 => "fp32",
            ScalarPrecision::Fp16 => "fp16",
            ScalarPrecision::Bf16 => "bf16",
        })
    }
}

/// A named multi-dimensional feature tensor with row-major values.
///
/// Values are held as `f32` but always rounded to the declared precision,
/// so writing and re-reading a tensor is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub id: String,
    pub role: String,
    pub source: String,
    precision: ScalarPrecision,
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(
        id: impl Into<String>,
        precision: ScalarPrecision,
        shape: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let expected = checked_element_count(&shape)?;
        if expected != values.len() {
            return Err(Error::ElementCount {
                shape,
                expected,
                actual: values.len(),
            });
        }
        let values = if precision == ScalarPrecision::Fp32 {
            values
        } else {
            values.into_iter().map(|v| precision.round(v)).collect()
        };
        Ok(FeatureTensor {
            id: id.into(),
            role: String::new(),
            source: String::new(),
            precision,
            shape,
            values,
        })
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = role.into();
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Re-declares the precision, rounding every value to it.
    pub fn with_precision(mut self, precision: ScalarPrecision) -> Self {
        if precision != ScalarPrecision::Fp32 {
            for v in &mut self.values {
                *v = precision.round(*v);
            }
        }
        self.precision = precision;
        self
    }

    pub fn precision(&self) -> ScalarPrecision {
        self.precision
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn byte_length(&self) -> u64 {
        self.values.len() as u64 * self.precision.byte_width() as u64
    }
}

pub(crate) fn checked_element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(shape.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub precision: ScalarPrecision,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub format_version: u32,
    pub set_name: String,
    pub tensors: Vec<ManifestEntry>,
}

/// The two files backing a container rooted at `base` (`base` carries no
/// extension; `dir/set` maps to `dir/set.manifest.json` and `dir/set.blob`).
pub fn container_paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = name
        .strip_suffix(".manifest.json")
        .or_else(|| name.strip_suffix(".blob"))
        .unwrap_or(&name)
        .to_owned();
    (
        base.with_file_name(format!("{name}.manifest.json")),
        base.with_file_name(format!("{name}.blob")),
    )
}

fn set_name_of(base: &Path) -> String {
    let (manifest, _) = container_paths(base);
    manifest
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".manifest.json"))
        .unwrap_or("features")
        .to_owned()
}

/// Serializes `tensors` into the container at `base` and returns the
/// manifest that was written.
pub fn write_container(tensors: &[FeatureTensor], base: &Path) -> Result<FeatureManifest> {
    let mut seen = HashSet::new();
    for t in tensors {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::DuplicateId(t.id.clone()));
        }
        if let Some(index) = t.first_non_finite() {
            return Err(Error::NonFinite {
                id: t.id.clone(),
                index,
            });
        }
    }

    let total: u64 = tensors.iter().map(FeatureTensor::byte_length).sum();
    let mut blob = Vec::with_capacity(total as usize);
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let offset = blob.len() as u64;
        for &v in t.values() {
            t.precision.encode(v, &mut blob);
        }
        entries.push(ManifestEntry {
            id: t.id.clone(),
            precision: t.precision,
            shape: t.shape.clone(),
            offset,
            length: blob.len() as u64 - offset,
            role: t.role.clone(),
            source: t.source.clone(),
        });
    }

    let manifest = FeatureManifest {
        format_version: FORMAT_VERSION,
        set_name: set_name_of(base),
        tensors: entries,
    };
    let (manifest_path, blob_path) = container_paths(base);
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(base: &Path) -> Result<FeatureManifest> {
    let (manifest_path, _) = container_paths(base);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads every tensor of the container at `base`, in manifest order.
pub fn read_container(base: &Path) -> Result<Vec<FeatureTensor>> {
    let manifest = read_manifest(base)?;
    let (_, blob_path) = container_paths(base);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    decode_container(&manifest, &blob)
}

/// Decodes tensors from an in-memory manifest and blob.
pub fn decode_container(manifest: &FeatureManifest, blob: &[u8]) -> Result<Vec<FeatureTensor>> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let blob_length = blob.len() as u64;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let count = checked_element_count(&entry.shape)?;
        let expected_len = count as u64 * entry.precision.byte_width() as u64;
        if entry.length != expected_len {
            return Err(Error::InvalidManifest(format!(
                "entry `{}` declares {} bytes but its shape needs {expected_len}",
                entry.id, entry.length
            )));
        }
        let end = entry.offset.checked_add(entry.length).ok_or_else(|| {
            Error::InvalidManifest(format!("entry `{}` extent overflows", entry.id))
        })?;
        if entry.offset > blob_length {
            return Err(Error::OffsetOutOfBounds {
                id: entry.id.clone(),
                offset: entry.offset,
                length: entry.length,
                blob_length,
            });
        }
        if end > blob_length {
            return Err(Error::TruncatedBlob {
                id: entry.id.clone(),
                needed: end,
                available: blob_length,
            });
        }
        let values = entry
            .precision
            .decode(&blob[entry.offset as usize..end as usize]);
        let tensor = FeatureTensor::new(
            entry.id.clone(),
            entry.precision,
            entry.shape.clone(),
            values,
        )?
        .with_role(entry.role.clone())
        .with_source(entry.source.clone());
        out.push(tensor);
    }
    Ok(out)
}

/// A single violated manifest invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestFinding {
    VersionMismatch {
        found: u32,
    },
    DuplicateId {
        id: String,
    },
    InvalidShape {
        id: String,
    },
    LengthMismatch {
        id: String,
        declared: u64,
        expected: u64,
    },
    Overlap {
        first: String,
        second: String,
    },
    OutOfOrder {
        id: String,
    },
    OutOfBounds {
        id: String,
        end: u64,
        blob_length: u64,
    },
}

impl fmt::Display for ManifestFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestFinding::VersionMismatch { found } => {
                write!(f, "format_version {found} != {FORMAT_VERSION}")
            }
            ManifestFinding::DuplicateId { id } => write!(f, "duplicate id `{id}`"),
            ManifestFinding::InvalidShape { id } => write!(f, "`{id}` has an invalid shape"),
            ManifestFinding::LengthMismatch {
                id,
                declared,
                expected,
            } => write!(
                f,
                "`{id}` declares {declared} bytes, shape needs {expected}"
            ),
            ManifestFinding::Overlap { first, second } => {
                write!(f, "`{first}` and `{second}` overlap")
            }
            ManifestFinding::OutOfOrder { id } => write!(f, "`{id}` is not ordered by offset"),
            ManifestFinding::OutOfBounds {
                id,
                end,
                blob_length,
            } => write!(f, "`{id}` ends at {end}, past blob length {blob_length}"),
        }
    }
}

/// Lists every violated invariant of `manifest` against a blob of
/// `blob_length` bytes. An empty list means the manifest is valid.
pub fn validate_manifest(manifest: &FeatureManifest, blob_length: u64) -> Vec<ManifestFinding> {
    let mut findings = Vec::new();
    if manifest.format_version != FORMAT_VERSION {
        findings.push(ManifestFinding::VersionMismatch {
            found: manifest.format_version,
        });
    }
    let mut seen = HashSet::new();
    for entry in &manifest.tensors {
        if !seen.insert(entry.id.as_str()) {
            findings.push(ManifestFinding::DuplicateId {
                id: entry.id.clone(),
            });
        }
        match checked_element_count(&entry.shape) {
            Ok(count) => {
                let expected = count as u64 * entry.precision.byte_width() as u64;
                if expected != entry.length {
                    findings.push(ManifestFinding::LengthMismatch {
                        id: entry.id.clone(),
                        declared: entry.length,
                        expected,
                    });
                }
            }
            Err(_) => findings.push(ManifestFinding::InvalidShape {
                id: entry.id.clone(),
            }),
        }
        let end = entry.offset.saturating_add(entry.length);
        if end > blob_length {
            findings.push(ManifestFinding::OutOfBounds {
                id: entry.id.clone(),
                end,
                blob_length,
            });
        }
    }
    for pair in manifest.tensors.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.offset < a.offset {
            findings.push(ManifestFinding::OutOfOrder { id: b.id.clone() });
        }
    }
    // pairwise overlap check, independent of ordering
    for (i, a) in manifest.tensors.iter().enumerate() {
        for b in &manifest.tensors[i + 1..] {
            let a_end = a.offset.saturating_add(a.length);
            let b_end = b.offset.saturating_add(b.length);
            if a.length > 0 && b.length > 0 && a.offset < b_end && b.offset < a_end {
                findings.push(ManifestFinding::Overlap {
                    first: a.id.clone(),
                    second: b.id.clone(),
                });
            }
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(id: &str, precision: ScalarPrecision, shape: Vec<usize>) -> FeatureTensor {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|i| (i as f32 * 0.37).sin() * 3.0).collect();
        FeatureTensor::new(id, precision, shape, values).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("set");
        let ts = vec![
            tensor("a", ScalarPrecision::Fp32, vec![3, 5]).with_role("hidden_state"),
            tensor("b", ScalarPrecision::Fp16, vec![2, 2, 7]).with_source("layer5"),
            tensor("c", ScalarPrecision::Bf16, vec![11]),
        ];
        let manifest = write_container(&ts, &base).unwrap();
        assert_eq!(manifest.set_name, "set");
        let back = read_container(&base).unwrap();
        assert_eq!(back, ts);
        for (a, b) in ts.iter().zip(&back) {
            let ab: Vec<u32> = a.values().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn fp16_entry_consumes_two_bytes_per_element() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("half");
        let m = write_container(&[tensor("h", ScalarPrecision::Fp16, vec![1000])], &base).unwrap();
        assert_eq!(m.tensors[0].length, 2000);
        let (_, blob) = container_paths(&base);
        assert_eq!(fs::metadata(blob).unwrap().len(), 2000);
    }

    #[test]
    fn large_fp32_blob_length() {
        let t = FeatureTensor::new(
            "dino",
            ScalarPrecision::Fp32,
            vec![1029, 4096],
            vec![0.5; 1029 * 4096],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_container(&[t], &dir.path().join("dino")).unwrap();
        assert_eq!(m.tensors[0].length, 1029 * 4096 * 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ts = vec![
            tensor("x", ScalarPrecision::Fp32, vec![2]),
            tensor("x", ScalarPrecision::Fp32, vec![3]),
        ];
        let err = write_container(&ts, &dir.path().join("dup")).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = FeatureTensor::new(
            "n",
            ScalarPrecision::Fp32,
            vec![3],
            vec![1.0, f32::NAN, 0.0],
        )
        .unwrap();
        let err = write_container(&[t], &dir.path().join("nan")).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn truncated_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("trunc");
        write_container(&[tensor("t", ScalarPrecision::Fp32, vec![10])], &base).unwrap();
        let (_, blob) = container_paths(&base);
        fs::write(&blob, vec![0u8; 20]).unwrap();
        assert!(matches!(
            read_container(&base).unwrap_err(),
            Error::TruncatedBlob {
                needed: 40,
                available: 20,
                ..
            }
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let mut m = FeatureManifest {
            format_version: 2,
            set_name: "s".into(),
            tensors: vec![],
        };
        assert!(matches!(
            decode_container(&m, &[]).unwrap_err(),
            Error::VersionMismatch { found: 2, .. }
        ));
        m.format_version = FORMAT_VERSION;
        assert!(decode_container(&m, &[]).unwrap().is_empty());
    }

    fn entry(id: &str, offset: u64, length: u64) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            precision: ScalarPrecision::Fp32,
            shape: vec![length as usize / 4],
            offset,
            length,
            role: String::new(),
            source: String::new(),
        }
    }

    #[test]
    fn validation_findings() {
        let good = FeatureManifest {
            format_version: 1,
            set_name: "s".into(),
            tensors: vec![entry("a", 0, 16), entry("b", 16, 8)],
        };
        assert!(validate_manifest(&good, 24).is_empty());

        let overlap = FeatureManifest {
            tensors: vec![entry("a", 0, 16), entry("b", 8, 8)],
            ..good.clone()
        };
        assert_eq!(
            validate_manifest(&overlap, 24),
            vec![ManifestFinding::Overlap {
                first: "a".into(),
                second: "b".into()
            }]
        );

        let findings = validate_manifest(&good, 20);
        assert_eq!(
            findings,
            vec![ManifestFinding::OutOfBounds {
                id: "b".into(),
                end: 24,
                blob_length: 20
            }]
        );
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(FeatureTensor::new("e", ScalarPrecision::Fp32, vec![], vec![]).is_err());
        assert!(FeatureTensor::new("z", ScalarPrecision::Fp32, vec![0, 3], vec![]).is_err());
        assert!(matches!(
            FeatureTensor::new("c", ScalarPrecision::Fp32, vec![2, 2], vec![0.0; 3]).unwrap_err(),
            Error::ElementCount {
                expected: 4,
                actual: 3,
                ..
            }
        ));
    }
}
