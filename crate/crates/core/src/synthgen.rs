//! Synthetic feature tensors reproducing the distribution archetypes seen in
//! large-model intermediate features.
//!
//! Every archetype draws from a seeded ChaCha8 stream, so a spec always
//! yields the same tensor within a release. Sequence-like archetypes get
//! token-to-token smoothness from a Gaussian AR(1) driver running down each
//! channel; the driver is pushed through the archetype's marginal so the
//! value distribution keeps its shape.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::container::{checked_element_count, FeatureTensor, ScalarPrecision};
use crate::error::{Error, Result};
use crate::packing::pack;
use crate::redundancy::{histogram, rho_axes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeId {
    ShallowVit,
    DeepVit,
    KvKey,
    KvValue,
    KimiKeyComb,
    SsmCache,
    ConvCache,
    TokenEmbed,
    SentenceEmbed,
    LatentSpatial,
}

impl ArchetypeId {
    pub const ALL: [ArchetypeId; 10] = [
        ArchetypeId::ShallowVit,
        ArchetypeId::DeepVit,
        ArchetypeId::KvKey,
        ArchetypeId::KvValue,
        ArchetypeId::KimiKeyComb,
        ArchetypeId::SsmCache,
        ArchetypeId::ConvCache,
        ArchetypeId::TokenEmbed,
        ArchetypeId::SentenceEmbed,
        ArchetypeId::LatentSpatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchetypeId::ShallowVit => "shallow_vit",
            ArchetypeId::DeepVit => "deep_vit",
            ArchetypeId::KvKey => "kv_key",
            ArchetypeId::KvValue => "kv_value",
            ArchetypeId::KimiKeyComb => "kimi_key_comb",
            ArchetypeId::SsmCache => "ssm_cache",
            ArchetypeId::ConvCache => "conv_cache",
            ArchetypeId::TokenEmbed => "token_embed",
            ArchetypeId::SentenceEmbed => "sentence_embed",
            ArchetypeId::LatentSpatial => "latent_spatial",
        }
    }

    /// Role tag the archetype stands in for.
    pub fn role(self) -> &'static str {
        match self {
            ArchetypeId::ShallowVit | ArchetypeId::DeepVit => "hidden_state",
            ArchetypeId::KvKey | ArchetypeId::KimiKeyComb => "key_cache",
            ArchetypeId::KvValue => "value_cache",
            ArchetypeId::SsmCache => "ssm_cache",
            ArchetypeId::ConvCache => "conv_cache",
            ArchetypeId::TokenEmbed => "token_embed",
            ArchetypeId::SentenceEmbed => "sentence_embed",
            ArchetypeId::LatentSpatial => "latent",
        }
    }

    /// A representative tensor shape with sequence length `n`.
    pub fn default_shape(self, n: usize) -> Vec<usize> {
        match self {
            ArchetypeId::ShallowVit | ArchetypeId::DeepVit => vec![n, 4096],
            ArchetypeId::KvKey | ArchetypeId::KvValue | ArchetypeId::KimiKeyComb => {
                vec![5, 4, n, 128]
            }
            ArchetypeId::SsmCache => vec![5, 8192, 16],
            ArchetypeId::ConvCache => vec![5, 8192, 4],
            ArchetypeId::TokenEmbed => vec![77, 768],
            ArchetypeId::SentenceEmbed => vec![4096],
            ArchetypeId::LatentSpatial => vec![16, 128, 128],
        }
    }
}

impl fmt::Display for ArchetypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchetypeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchetypeId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown archetype `{s}`")))
    }
}

/// Optional overrides; anything left unset takes the archetype default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchetypeParams {
    /// Target lag-1 correlation on both axes (`latent_spatial`).
    pub rho: Option<f64>,
    /// Token-to-token correlation of the sequence driver.
    pub rho_v: Option<f64>,
    /// Correlation along the last axis (`conv_cache`).
    pub rho_h: Option<f64>,
    /// Mixture component count (`deep_vit`, `kv_key`).
    pub components: Option<usize>,
    /// Half-width of the range the mixture or comb centers span.
    pub spread: Option<f64>,
    /// Discrete cluster count (`kimi_key_comb`).
    pub clusters: Option<usize>,
    /// Standard deviation around each comb center.
    pub jitter: Option<f64>,
    /// Student-t degrees of freedom (`token_embed`); lower is heavier.
    pub dof: Option<f64>,
    /// Skew-normal shape in (0, 1); the sign is always negative.
    pub skew: Option<f64>,
    pub scale: Option<f64>,
    /// Hard clamp half-width (`ssm_cache`).
    pub clamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub archetype: ArchetypeId,
    pub shape: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub params: ArchetypeParams,
    #[serde(default = "default_precision")]
    pub precision: ScalarPrecision,
}

fn default_precision() -> ScalarPrecision {
    ScalarPrecision::Fp32
}

impl GeneratorSpec {
    pub fn new(archetype: ArchetypeId, shape: Vec<usize>, seed: u64) -> Self {
        GeneratorSpec {
            id: None,
            archetype,
            shape,
            seed,
            params: ArchetypeParams::default(),
            precision: ScalarPrecision::Fp32,
        }
    }

    pub fn with_params(mut self, params: ArchetypeParams) -> Self {
        self.params = params;
        self
    }

    pub fn tensor_id(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| format!("{}_s{}", self.archetype, self.seed))
    }

    pub fn resolved(&self) -> Result<Resolved> {
        Resolved::new(self.archetype, &self.params)
    }
}

/// Fully specified archetype parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub rho: f64,
    pub rho_v: f64,
    pub rho_h: f64,
    pub components: usize,
    pub spread: f64,
    pub clusters: usize,
    pub jitter: f64,
    pub dof: f64,
    pub skew: f64,
    pub scale: f64,
    pub clamp: f64,
}

impl Resolved {
    fn new(a: ArchetypeId, p: &ArchetypeParams) -> Result<Self> {
        use ArchetypeId::*;
        let rho_v_default = match a {
            DeepVit => 0.7,
            ShallowVit | KvValue | KimiKeyComb => 0.6,
            KvKey | TokenEmbed => 0.5,
            _ => 0.0,
        };
        let r = Resolved {
            rho: p.rho.unwrap_or(0.92),
            rho_v: p.rho_v.unwrap_or(rho_v_default),
            rho_h: p.rho_h.unwrap_or(if a == ConvCache { 0.5 } else { 0.0 }),
            components: p.components.unwrap_or(if a == KvKey { 3 } else { 4 }),
            spread: p.spread.unwrap_or(match a {
                KimiKeyComb => 8.0,
                KvKey => 4.0,
                _ => 6.0,
            }),
            clusters: p.clusters.unwrap_or(8),
            jitter: p.jitter.unwrap_or(0.08),
            dof: p.dof.unwrap_or(3.0),
            skew: p.skew.unwrap_or(0.95),
            scale: p.scale.unwrap_or(match a {
                SsmCache => 0.05,
                KvValue => 0.5,
                ConvCache => 2.0,
                TokenEmbed => 0.02,
                _ => 1.0,
            }),
            clamp: p.clamp.unwrap_or(0.3),
        };
        let open_unit = |name: &str, v: f64| {
            if v > -1.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!(
                    "{name} must lie in (-1, 1), got {v}"
                )))
            }
        };
        open_unit("rho", r.rho)?;
        open_unit("rho_v", r.rho_v)?;
        open_unit("rho_h", r.rho_h)?;
        if !(r.skew > 0.0 && r.skew < 1.0) {
            return Err(Error::InvalidParams(format!(
                "skew must lie in (0, 1), got {}",
                r.skew
            )));
        }
        if r.components < 1 || r.clusters < 2 {
            return Err(Error::InvalidParams(
                "need at least one component and two clusters".into(),
            ));
        }
        for (name, v) in [
            ("spread", r.spread),
            ("jitter", r.jitter),
            ("dof", r.dof),
            ("scale", r.scale),
            ("clamp", r.clamp),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(r)
    }
}

/// `(slices, rows, cols)` of the trailing 2D view of a shape.
fn grid_of(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [w] => (1, 1, *w),
        [.., h, w] => (shape[..shape.len() - 2].iter().product(), *h, *w),
        [] => (0, 0, 0),
    }
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Unit-variance AR(1) along each column of a `rows x cols` block.
fn column_driver(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rho: f64, out: &mut Vec<f64>) {
    let innov = (1.0 - rho * rho).sqrt();
    let start = out.len();
    for i in 0..rows {
        for j in 0..cols {
            let z = normal(rng);
            let v = if i == 0 {
                z
            } else {
                rho * out[start + (i - 1) * cols + j] + innov * z
            };
            out.push(v);
        }
    }
}

/// Unit-variance AR(1) along each row.
fn row_driver(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rho: f64, out: &mut Vec<f64>) {
    let innov = (1.0 - rho * rho).sqrt();
    for _ in 0..rows {
        let mut prev = normal(rng);
        out.push(prev);
        for _ in 1..cols {
            prev = rho * prev + innov * normal(rng);
            out.push(prev);
        }
    }
}

/// Separable unit-variance Gaussian field with lag-1 coefficients
/// `(rho_v, rho_h)` down columns and along rows.
fn separable_field(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    rho_v: f64,
    rho_h: f64,
    out: &mut Vec<f64>,
) {
    let start = out.len();
    let ih = (1.0 - rho_h * rho_h).sqrt();
    let iv = (1.0 - rho_v * rho_v).sqrt();
    for i in 0..rows {
        for j in 0..cols {
            let z = normal(rng);
            let at = |r: usize, c: usize, o: &Vec<f64>| o[start + r * cols + c];
            let v = match (i, j) {
                (0, 0) => z,
                (0, _) => rho_h * at(0, j - 1, out) + ih * z,
                (_, 0) => rho_v * at(i - 1, 0, out) + iv * z,
                _ => {
                    rho_h * at(i, j - 1, out) + rho_v * at(i - 1, j, out)
                        - rho_h * rho_v * at(i - 1, j - 1, out)
                        + ih * iv * z
                }
            };
            out.push(v);
        }
    }
}

/// Generator coefficient whose sample lag-1 Pearson estimate over `pairs`
/// adjacent pairs is centred on `target`.
fn debiased(target: f64, pairs: usize) -> f64 {
    if pairs < 2 {
        return target;
    }
    (target + (1.0 + 3.0 * target) / pairs as f64).clamp(-0.999, 0.999)
}

pub fn generate(spec: &GeneratorSpec) -> Result<FeatureTensor> {
    use ArchetypeId::*;
    let count = checked_element_count(&spec.shape)?;
    let p = spec.resolved()?;
    let (slices, rows, cols) = grid_of(&spec.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut drive = Vec::with_capacity(count);

    let values: Vec<f64> = match spec.archetype {
        LatentSpatial => {
            let rv = debiased(p.rho, rows.saturating_sub(1));
            let rh = debiased(p.rho, cols.saturating_sub(1));
            for _ in 0..slices {
                separable_field(&mut rng, rows, cols, rv, rh, &mut drive);
            }
            drive.into_iter().map(|g| p.scale * g).collect()
        }
        ConvCache => {
            let rh = debiased(p.rho_h, cols.saturating_sub(1));
            for _ in 0..slices {
                row_driver(&mut rng, rows, cols, rh, &mut drive);
            }
            drive.into_iter().map(|g| p.scale * g).collect()
        }
        SsmCache => (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                let laplace =
                    -p.scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                laplace.clamp(-p.clamp, p.clamp)
            })
            .collect(),
        SentenceEmbed => {
            let scales: Vec<f64> = (0..cols).map(|_| 0.5 + rng.random::<f64>()).collect();
            (0..count)
                .map(|k| p.scale * scales[k % cols] * normal(&mut rng))
                .collect()
        }
        KvValue | ShallowVit | DeepVit | KvKey | KimiKeyComb | TokenEmbed => {
            for _ in 0..slices {
                column_driver(&mut rng, rows, cols, p.rho_v, &mut drive);
            }
            shape_marginal(spec.archetype, &p, drive, &mut rng)?
        }
    };

    let values = values.into_iter().map(|v| v as f32).collect();
    Ok(
        FeatureTensor::new(spec.tensor_id(), spec.precision, spec.shape.clone(), values)?
            .with_role(spec.archetype.role())
            .with_source(format!("synthgen:{}:seed={}", spec.archetype, spec.seed)),
    )
}

/// Pushes a unit-normal driver through the archetype's marginal.
fn shape_marginal(
    a: ArchetypeId,
    p: &Resolved,
    drive: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    use ArchetypeId::*;
    Ok(match a {
        KvValue => drive.into_iter().map(|g| p.scale * g).collect(),
        ShallowVit => {
            let d = p.skew;
            let mean = d * (2.0 / std::f64::consts::PI).sqrt();
            let side = (1.0 - d * d).sqrt();
            drive
                .into_iter()
                .map(|g| {
                    let z0 = normal(rng).abs();
                    -p.scale * (d * z0 + side * g - mean)
                })
                .collect()
        }
        DeepVit | KvKey | KimiKeyComb => {
            let (k, width) = if a == KimiKeyComb {
                (p.clusters, p.jitter)
            } else {
                // components sit 2 * spread / (k - 1) apart; keep them resolvable
                let gap = if p.components > 1 {
                    2.0 * p.spread / (p.components - 1) as f64
                } else {
                    p.spread
                };
                (p.components, 0.15 * gap)
            };
            let centre = |c: usize| {
                if k == 1 {
                    0.0
                } else {
                    -p.spread + 2.0 * p.spread * c as f64 / (k - 1) as f64
                }
            };
            drive
                .into_iter()
                .map(|g| {
                    let c = ((std_normal_cdf(g) * k as f64) as usize).min(k - 1);
                    p.scale * (centre(c) + width * normal(rng))
                })
                .collect()
        }
        TokenEmbed => {
            let chi = ChiSquared::new(p.dof).map_err(|e| Error::InvalidParams(e.to_string()))?;
            drive
                .into_iter()
                .map(|g| {
                    let w: f64 = chi.sample(rng);
                    p.scale * g / (w / p.dof).sqrt()
                })
                .collect()
        }
        other => unreachable!("{other} has no sequence marginal"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub archetype: ArchetypeId,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const RHO_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(values: &[f32]) -> Moments {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = f64::from(v) - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Moments {
        mean,
        variance: m2,
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
        excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
    }
}

/// Number of well-separated peaks in the value histogram.
///
/// Counts are lightly smoothed; peaks under 5% of the tallest are ignored,
/// and neighbouring peaks merge unless the valley between them drops below
/// half the lower one.
pub fn count_modes(values: &[f32]) -> usize {
    if values.is_empty() {
        return 0;
    }
    let bins = ((values.len() as f64).sqrt() / 2.0).clamp(16.0, 128.0) as usize;
    let data: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    let h = histogram(&data, bins).expect("non-empty, bins > 0");
    let c: Vec<f64> = h.counts.iter().map(|&x| x as f64).collect();
    let n = c.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let tallest = smooth.iter().cloned().fold(0.0, f64::max);
    let floor = 0.05 * tallest;

    let mut candidates = Vec::new();
    let mut i = 0;
    while i < n {
        let rising = i == 0 || smooth[i] > smooth[i - 1];
        let mut j = i;
        while j + 1 < n && smooth[j + 1] == smooth[i] {
            j += 1;
        }
        let falling = j + 1 == n || smooth[j + 1] < smooth[j];
        if rising && falling && smooth[i] >= floor && smooth[i] > 0.0 {
            candidates.push(i);
        }
        i = j + 1;
    }

    let mut peaks: Vec<usize> = Vec::new();
    for c in candidates {
        match peaks.last().copied() {
            None => peaks.push(c),
            Some(last) => {
                let valley = smooth[last..=c]
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if valley < 0.5 * smooth[last].min(smooth[c]) {
                    peaks.push(c);
                } else if smooth[c] > smooth[last] {
                    *peaks.last_mut().unwrap() = c;
                }
            }
        }
    }
    peaks.len()
}

fn check(name: &str, measured: f64, passed: bool, expected: impl Into<String>) -> Check {
    Check {
        name: name.to_owned(),
        passed,
        measured,
        expected: expected.into(),
    }
}

/// Checks `tensor` against the archetype targets of `spec`.
pub fn validate(tensor: &FeatureTensor, spec: &GeneratorSpec) -> Result<ValidationReport> {
    use ArchetypeId::*;
    let p = spec.resolved()?;
    let mut checks = vec![check(
        "shape",
        tensor.len() as f64,
        tensor.shape() == spec.shape.as_slice(),
        format!("{:?}", spec.shape),
    )];
    let (plane, _) = pack(tensor)?;
    let rho = rho_axes(&plane)?;
    let rho_h = rho.rho_h.unwrap_or(0.0);
    let rho_v = rho.rho_v.unwrap_or(0.0);
    let m = moments(tensor.values());
    let modes = count_modes(tensor.values()) as f64;

    match spec.archetype {
        LatentSpatial => {
            let ok = |r: Option<f64>| r.is_some_and(|r| (r - p.rho).abs() <= RHO_TOLERANCE);
            let want = format!("{:.3} +/- {RHO_TOLERANCE}", p.rho);
            checks.push(check("rho_h", rho_h, ok(rho.rho_h), want.clone()));
            checks.push(check("rho_v", rho_v, ok(rho.rho_v), want));
        }
        TokenEmbed => {
            checks.push(check(
                "excess_kurtosis",
                m.excess_kurtosis,
                m.excess_kurtosis > 3.0,
                "> 3",
            ));
            checks.push(check("rho_h", rho_h, rho_h.abs() < 0.1, "|rho_h| < 0.1"));
            if p.rho_v > 0.2 {
                checks.push(check(
                    "rho_v",
                    rho_v,
                    rho_v > rho_h + 0.1,
                    "rho_v > rho_h + 0.1",
                ));
            }
        }
        KimiKeyComb => {
            checks.push(check(
                "modes",
                modes,
                modes >= p.clusters as f64,
                format!(">= {}", p.clusters),
            ));
        }
        DeepVit | KvKey => {
            checks.push(check(
                "modes",
                modes,
                modes >= p.components as f64,
                format!(">= {}", p.components),
            ));
            checks.push(check("rho_h", rho_h, rho_h.abs() < 0.1, "|rho_h| < 0.1"));
        }
        KvValue => {
            checks.push(check("modes", modes, modes == 1.0, "1"));
            checks.push(check("rho_h", rho_h, rho_h.abs() < 0.1, "|rho_h| < 0.1"));
        }
        ShallowVit => {
            checks.push(check("modes", modes, modes == 1.0, "1"));
            checks.push(check("skewness", m.skewness, m.skewness < 0.0, "< 0"));
        }
        SsmCache => {
            let worst = tensor
                .values()
                .iter()
                .map(|v| f64::from(v.abs()))
                .fold(0.0, f64::max);
            checks.push(check(
                "clamp",
                worst,
                worst <= p.clamp + 1e-6,
                format!("<= {}", p.clamp),
            ));
            checks.push(check("rho_h", rho_h, rho_h.abs() < 0.1, "|rho_h| < 0.1"));
            checks.push(check("rho_v", rho_v, rho_v.abs() < 0.1, "|rho_v| < 0.1"));
        }
        ConvCache => {
            checks.push(check("rho_h", rho_h, rho_h > rho_v, "rho_h > rho_v"));
        }
        SentenceEmbed => {
            checks.push(check("rho_h", rho_h, rho_h.abs() < 0.05, "|rho_h| < 0.05"));
        }
    }
    Ok(ValidationReport {
        archetype: spec.archetype,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: ArchetypeId, shape: Vec<usize>, seed: u64) -> GeneratorSpec {
        GeneratorSpec::new(a, shape, seed)
    }

    /// Small shapes keep the unit suite quick; the integration suite uses
    /// full-size ones.
    fn small_shape(a: ArchetypeId) -> Vec<usize> {
        match a {
            ArchetypeId::ShallowVit | ArchetypeId::DeepVit => vec![64, 512],
            ArchetypeId::SsmCache => vec![5, 1024, 16],
            ArchetypeId::ConvCache => vec![5, 1024, 4],
            ArchetypeId::LatentSpatial => vec![2, 128, 128],
            other => other.default_shape(64),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for a in ArchetypeId::ALL {
            let s = spec(a, small_shape(a), 42);
            let x = generate(&s).unwrap();
            let y = generate(&s).unwrap();
            assert_eq!(x, y, "{a}");
            assert_eq!(x.shape(), s.shape.as_slice());
            let z = generate(&GeneratorSpec { seed: 43, ..s }).unwrap();
            assert_ne!(x.values(), z.values(), "{a}");
        }
    }

    #[test]
    fn every_archetype_passes_its_own_validation() {
        for a in ArchetypeId::ALL {
            let s = spec(a, small_shape(a), 7);
            let r = validate(&generate(&s).unwrap(), &s).unwrap();
            assert!(r.passed(), "{a}: {:#?}", r.checks);
        }
    }

    #[test]
    fn single_peak_fails_comb_check() {
        let value = generate(&spec(ArchetypeId::KvValue, vec![5, 4, 64, 128], 1)).unwrap();
        let comb = spec(ArchetypeId::KimiKeyComb, vec![5, 4, 64, 128], 1);
        let r = validate(&value, &comb).unwrap();
        let modes = r.check("modes").unwrap();
        assert!(!modes.passed);
        assert_eq!(modes.measured, 1.0);
    }

    #[test]
    fn ssm_values_respect_clamp() {
        let s = spec(ArchetypeId::SsmCache, vec![5, 512, 16], 3).with_params(ArchetypeParams {
            clamp: Some(0.1),
            ..Default::default()
        });
        let t = generate(&s).unwrap();
        assert!(t.values().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn uncorrelated_latent() {
        let s = spec(ArchetypeId::LatentSpatial, vec![128, 128], 9).with_params(ArchetypeParams {
            rho: Some(0.0),
            ..Default::default()
        });
        let (plane, _) = pack(&generate(&s).unwrap()).unwrap();
        let r = rho_axes(&plane).unwrap();
        assert!(
            r.rho_h.unwrap().abs() < 0.05 && r.rho_v.unwrap().abs() < 0.05,
            "{r:?}"
        );
    }

    #[test]
    fn mode_counter() {
        let bimodal: Vec<f32> = (0..20_000)
            .map(|i| if i % 2 == 0 { -3.0 } else { 3.0 } + ((i * 7919) % 101) as f32 / 200.0)
            .collect();
        assert_eq!(count_modes(&bimodal), 2);
        let flat: Vec<f32> = (0..20_000).map(|i| (i % 1000) as f32).collect();
        assert!(count_modes(&flat) >= 1);
        assert_eq!(count_modes(&[1.0; 100]), 1);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = |params: ArchetypeParams| {
            spec(ArchetypeId::LatentSpatial, vec![8, 8], 0)
                .with_params(params)
                .resolved()
                .is_err()
        };
        assert!(bad(ArchetypeParams {
            rho: Some(1.0),
            ..Default::default()
        }));
        assert!(bad(ArchetypeParams {
            dof: Some(-2.0),
            ..Default::default()
        }));
        assert!(bad(ArchetypeParams {
            clusters: Some(1),
            ..Default::default()
        }));
        assert!(generate(&spec(ArchetypeId::KvKey, vec![], 0)).is_err());
        assert!("nope".parse::<ArchetypeId>().is_err());
        assert_eq!(
            "kimi_key_comb".parse::<ArchetypeId>().unwrap(),
            ArchetypeId::KimiKeyComb
        );
    }

    #[test]
    fn spec_json_uses_archetype_names() {
        let s: GeneratorSpec = serde_json::from_str(
            r#"{"archetype": "token_embed", "shape": [77, 768], "seed": 5, "params": {"dof": 4.0}}"#,
        )
        .unwrap();
        assert_eq!(s.archetype, ArchetypeId::TokenEmbed);
        assert_eq!(s.params.dof, Some(4.0));
        assert_eq!(s.precision, ScalarPrecision::Fp32);
    }
}
