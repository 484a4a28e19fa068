//! Redundancy statistics of packed feature planes: lag-1 axis correlations,
//! DCT energy compaction and value histograms.

use std::io::Write;

use rustdct::DctPlanner;
use serde::Serialize;

use crate::container::FeatureTensor;
use crate::error::{Error, Result};
use crate::metrics::pearson_slices;
use crate::packing::{pack, Packed2D};

/// Averaged lag-1 correlations along rows (`rho_h`) and columns (`rho_v`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RedundancyReport {
    pub rho_h: Option<f64>,
    pub rho_v: Option<f64>,
    pub valid_rows: usize,
    pub valid_cols: usize,
}

/// Per-row (per-column) Pearson correlation between each slice and its
/// one-step shift, averaged over slices where both sides vary.
///
/// An axis shorter than two elements yields an undefined statistic for that
/// axis; a 1x1 plane is an error.
pub fn rho_axes(plane: &Packed2D) -> Result<RedundancyReport> {
    let (h, w) = (plane.rows(), plane.cols());
    if h < 2 && w < 2 {
        return Err(Error::DegenerateDimensions { rows: h, cols: w });
    }
    let (rho_h, valid_rows) = if w >= 2 {
        average((0..h).filter_map(|i| {
            let row = plane.row(i);
            pearson_slices(&row[..w - 1], &row[1..])
        }))
    } else {
        (None, 0)
    };
    let (rho_v, valid_cols) = if h >= 2 {
        average(column_correlations(plane).into_iter().flatten())
    } else {
        (None, 0)
    };
    Ok(RedundancyReport {
        rho_h,
        rho_v,
        valid_rows,
        valid_cols,
    })
}

fn average(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (None, 0)
    } else {
        (Some((sum / n as f64).clamp(-1.0, 1.0)), n)
    }
}

/// Column-wise lag-1 Pearson correlations, computed row-major in two passes.
fn column_correlations(plane: &Packed2D) -> Vec<Option<f64>> {
    let (h, w) = (plane.rows(), plane.cols());
    let pairs = (h - 1) as f64;
    let mut mean_x = vec![0.0; w];
    let mut mean_y = vec![0.0; w];
    for i in 0..h - 1 {
        for (j, &v) in plane.row(i).iter().enumerate() {
            mean_x[j] += v;
        }
        for (j, &v) in plane.row(i + 1).iter().enumerate() {
            mean_y[j] += v;
        }
    }
    mean_x.iter_mut().for_each(|m| *m /= pairs);
    mean_y.iter_mut().for_each(|m| *m /= pairs);

    let mut sxy = vec![0.0; w];
    let mut sxx = vec![0.0; w];
    let mut syy = vec![0.0; w];
    for i in 0..h - 1 {
        let (x, y) = (plane.row(i), plane.row(i + 1));
        for j in 0..w {
            let dx = x[j] - mean_x[j];
            let dy = y[j] - mean_y[j];
            sxy[j] += dx * dy;
            sxx[j] += dx * dx;
            syy[j] += dy * dy;
        }
    }
    (0..w)
        .map(|j| {
            if h < 3 || sxx[j] <= 0.0 || syy[j] <= 0.0 {
                None
            } else {
                Some((sxy[j] / (sxx[j].sqrt() * syy[j].sqrt())).clamp(-1.0, 1.0))
            }
        })
        .collect()
}

/// Coefficients of a 2D transform, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPlane {
    pub rows: usize,
    pub cols: usize,
    pub coeffs: Vec<f64>,
}

impl CoefficientPlane {
    pub fn energies(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c * c).collect()
    }
}

fn orthonormal_pass(data: &mut [f64], len: usize, planner: &mut DctPlanner<f64>, inverse: bool) {
    if len == 1 {
        return;
    }
    let dc = (1.0 / len as f64).sqrt();
    let ac = (2.0 / len as f64).sqrt();
    if inverse {
        // DCT-III computes x0/2 + sum_k X_k cos(..); pre-scale to the
        // orthonormal inverse
        let dct = planner.plan_dct3(len);
        for chunk in data.chunks_exact_mut(len) {
            chunk[0] *= 2.0 * dc;
            chunk[1..].iter_mut().for_each(|v| *v *= ac);
            dct.process_dct3(chunk);
        }
    } else {
        let dct = planner.plan_dct2(len);
        for chunk in data.chunks_exact_mut(len) {
            dct.process_dct2(chunk);
            chunk[0] *= dc;
            chunk[1..].iter_mut().for_each(|v| *v *= ac);
        }
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

fn separable(values: Vec<f64>, rows: usize, cols: usize, inverse: bool) -> Vec<f64> {
    let mut planner = DctPlanner::new();
    let mut data = values;
    orthonormal_pass(&mut data, cols, &mut planner, inverse);
    let mut t = transpose(&data, rows, cols);
    orthonormal_pass(&mut t, rows, &mut planner, inverse);
    transpose(&t, cols, rows)
}

/// Orthonormal separable 2D DCT-II.
pub fn dct2(plane: &Packed2D) -> CoefficientPlane {
    let (rows, cols) = (plane.rows(), plane.cols());
    CoefficientPlane {
        rows,
        cols,
        coeffs: separable(plane.values().to_vec(), rows, cols, false),
    }
}

/// Adjoint (and inverse) of [`dct2`].
pub fn idct2(coeffs: &CoefficientPlane) -> Packed2D {
    let values = separable(coeffs.coeffs.clone(), coeffs.rows, coeffs.cols, true);
    Packed2D::new(coeffs.rows, coeffs.cols, values).expect("dimensions preserved")
}

/// Gini coefficient of a set of non-negative energies; `None` when they sum
/// to zero.
pub fn gini(energies: &[f64]) -> Result<Option<f64>> {
    if let Some(&neg) = energies.iter().find(|&&e| e < 0.0 || e.is_nan()) {
        return Err(Error::NegativeEnergy(neg));
    }
    let mut sorted = energies.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if total == 0.0 || sorted.is_empty() {
        return Ok(None);
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &e)| (2.0 * (k + 1) as f64 - n - 1.0) * e)
        .sum();
    Ok(Some(weighted / (n * total)))
}

/// Energy-weighted mean of the normalized radial frequency index.
pub fn centroid(coeffs: &CoefficientPlane) -> Option<f64> {
    let (h, w) = (coeffs.rows, coeffs.cols);
    let total: f64 = coeffs.coeffs.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return None;
    }
    if h == 1 && w == 1 {
        return Some(0.0);
    }
    let norm = (((h - 1) * (h - 1) + (w - 1) * (w - 1)) as f64).sqrt();
    let mut weighted = 0.0;
    for u in 0..h {
        for v in 0..w {
            let c = coeffs.coeffs[u * w + v];
            if c != 0.0 {
                let f = ((u * u + v * v) as f64).sqrt() / norm;
                weighted += f * c * c;
            }
        }
    }
    Some((weighted / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralReport {
    pub g_dct: Option<f64>,
    pub c_dct: Option<f64>,
    pub total_energy: f64,
}

pub fn spectral_report(plane: &Packed2D) -> SpectralReport {
    let coeffs = dct2(plane);
    let energies = coeffs.energies();
    let total_energy = energies.iter().sum();
    SpectralReport {
        g_dct: gini(&energies).expect("squared coefficients are non-negative"),
        c_dct: centroid(&coeffs),
        total_energy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub cdf: Vec<f64>,
}

/// Equal-width histogram over `[min, max]` with the maximum in the last
/// bin. A constant input puts everything in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<HistogramReport> {
    if bins == 0 {
        return Err(Error::ZeroBins);
    }
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    let mut running = 0u64;
    let cdf = counts
        .iter()
        .map(|&c| {
            running += c;
            running as f64 / n
        })
        .collect();
    Ok(HistogramReport { edges, counts, cdf })
}

pub fn histogram_cdf(tensor: &FeatureTensor, bins: usize) -> Result<HistogramReport> {
    if let Some(index) = tensor.first_non_finite() {
        return Err(Error::NonFinite {
            id: tensor.id.clone(),
            index,
        });
    }
    let values: Vec<f64> = tensor.values().iter().map(|&v| f64::from(v)).collect();
    histogram(&values, bins)
}

/// Everything the analysis suite reports for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub tensor_id: String,
    pub rho_h: Option<f64>,
    pub rho_v: Option<f64>,
    pub valid_rows: usize,
    pub valid_cols: usize,
    pub g_dct: Option<f64>,
    pub c_dct: Option<f64>,
    pub histogram: HistogramReport,
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 256;

pub fn analyze(tensor: &FeatureTensor, bins: usize) -> Result<AnalysisReport> {
    let (plane, _) = pack(tensor)?;
    let rho = if plane.len() > 1 {
        rho_axes(&plane)?
    } else {
        RedundancyReport {
            rho_h: None,
            rho_v: None,
            valid_rows: 0,
            valid_cols: 0,
        }
    };
    let spectral = spectral_report(&plane);
    Ok(AnalysisReport {
        tensor_id: tensor.id.clone(),
        rho_h: rho.rho_h,
        rho_v: rho.rho_v,
        valid_rows: rho.valid_rows,
        valid_cols: rho.valid_cols,
        g_dct: spectral.g_dct,
        c_dct: spectral.c_dct,
        histogram: histogram_cdf(tensor, bins)?,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:+.3}"))
        .unwrap_or_else(|| "---".into())
}

/// One summary row per tensor, in the column order of the redundancy tables.
pub fn write_summary_csv<W: Write>(reports: &[AnalysisReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Layer", "rho_h", "rho_v", "G_DCT", "C_DCT"])?;
    for r in reports {
        let unsigned =
            |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "---".into());
        w.write_record([
            r.tensor_id.clone(),
            cell(r.rho_h),
            cell(r.rho_v),
            unsigned(r.g_dct),
            unsigned(r.c_dct),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Packed2D {
        let values = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Packed2D::new(rows, cols, values).unwrap()
    }

    fn naive_dct2(p: &Packed2D) -> Vec<f64> {
        use std::f64::consts::PI;
        let (h, w) = (p.rows(), p.cols());
        let s = |k: usize, n: usize| {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        acc += p.get(i, j)
                            * (PI * u as f64 * (2 * i + 1) as f64 / (2 * h) as f64).cos()
                            * (PI * v as f64 * (2 * j + 1) as f64 / (2 * w) as f64).cos();
                    }
                }
                out[u * w + v] = s(u, h) * s(v, w) * acc;
            }
        }
        out
    }

    #[test]
    fn ramp_and_alternating_rows() {
        let ramp = plane(3, 4, |_, j| j as f64 + 1.0);
        let r = rho_axes(&ramp).unwrap();
        assert!((r.rho_h.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.valid_rows, 3);
        // every column is constant
        assert_eq!(r.rho_v, None);
        assert_eq!(r.valid_cols, 0);

        let alt = plane(3, 4, |_, j| if j % 2 == 0 { 1.0 } else { -1.0 });
        assert!((rho_axes(&alt).unwrap().rho_h.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_plane_is_undefined() {
        let r = rho_axes(&plane(5, 6, |_, _| 2.5)).unwrap();
        assert_eq!(
            (r.rho_h, r.rho_v, r.valid_rows, r.valid_cols),
            (None, None, 0, 0)
        );
    }

    #[test]
    fn row_vectors_have_no_vertical_statistic() {
        let r = rho_axes(&plane(1, 50, |_, j| (j as f64).sin())).unwrap();
        assert!(r.rho_h.is_some());
        assert_eq!((r.rho_v, r.valid_cols), (None, 0));
        assert!(matches!(
            rho_axes(&plane(1, 1, |_, _| 1.0)),
            Err(Error::DegenerateDimensions { .. })
        ));
    }

    #[test]
    fn dct_against_definition() {
        let p = plane(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.3 * j as f64);
        let fast = dct2(&p);
        for (a, b) in fast.coeffs.iter().zip(naive_dct2(&p)) {
            assert!((a - b).abs() < 1e-9);
        }
        let back = idct2(&fast);
        for (a, b) in back.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let p = plane(3, 5, |_, _| 2.0);
        let c = dct2(&p);
        assert!((c.coeffs[0] - 2.0 * 15f64.sqrt()).abs() < 1e-12);
        assert!(c.coeffs[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(centroid(&c).unwrap() < 1e-20);
    }

    #[test]
    fn gini_cases() {
        assert_eq!(gini(&[0.0, 0.0, 0.0, 5.0]).unwrap(), Some(0.75));
        assert_eq!(gini(&[2.0; 8]).unwrap(), Some(0.0));
        assert!((gini(&[1.0, 2.0, 1.0]).unwrap().unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(gini(&[0.0; 3]).unwrap(), None);
        assert!(matches!(gini(&[1.0, -0.5]), Err(Error::NegativeEnergy(_))));
    }

    #[test]
    fn centroid_cases() {
        let corner = |h: usize, w: usize, at: &[usize]| {
            let mut coeffs = vec![0.0; h * w];
            for &k in at {
                coeffs[k] = 1.0;
            }
            CoefficientPlane {
                rows: h,
                cols: w,
                coeffs,
            }
        };
        assert_eq!(centroid(&corner(4, 6, &[0])), Some(0.0));
        assert_eq!(centroid(&corner(4, 6, &[23])), Some(1.0));
        assert_eq!(centroid(&corner(2, 2, &[0, 3])), Some(0.5));
        assert_eq!(centroid(&corner(1, 1, &[0])), Some(0.0));
        assert_eq!(centroid(&corner(3, 3, &[])), None);
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[0.0, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.cdf, vec![0.5, 1.0]);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);

        let c = histogram(&[3.0; 10], 4).unwrap();
        assert_eq!(c.counts, vec![10, 0, 0, 0]);
        assert_eq!(c.cdf.last(), Some(&1.0));

        assert!(matches!(histogram(&[1.0], 0), Err(Error::ZeroBins)));
        assert!(matches!(histogram(&[], 3), Err(Error::EmptyTensor)));
    }

    #[test]
    fn summary_csv_marks_undefined() {
        let r = AnalysisReport {
            tensor_id: "sentence".into(),
            rho_h: Some(-0.015),
            rho_v: None,
            valid_rows: 1,
            valid_cols: 0,
            g_dct: Some(0.635),
            c_dct: Some(0.501),
            histogram: histogram(&[0.0, 1.0], 2).unwrap(),
        };
        let mut buf = Vec::new();
        write_summary_csv(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "Layer,rho_h,rho_v,G_DCT,C_DCT\nsentence,-0.015,---,0.635,0.501\n"
        );
    }

    proptest! {
        #[test]
        fn rho_is_affine_invariant(
            vals in prop::collection::vec(-5.0f64..5.0, 24),
            a in 0.01f64..100.0,
            b in -100.0f64..100.0,
        ) {
            let p = Packed2D::new(4, 6, vals.clone()).unwrap();
            let q = Packed2D::new(4, 6, vals.iter().map(|v| a * v + b).collect()).unwrap();
            let (rp, rq) = (rho_axes(&p).unwrap(), rho_axes(&q).unwrap());
            prop_assert_eq!(rp.valid_rows, rq.valid_rows);
            if let (Some(x), Some(y)) = (rp.rho_h, rq.rho_h) {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
            if let (Some(x), Some(y)) = (rp.rho_v, rq.rho_v) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn gini_and_centroid_bounded_and_scale_invariant(
            e in prop::collection::vec(0.0f64..10.0, 1..60),
            a in 0.01f64..1000.0,
        ) {
            if let Some(g) = gini(&e).unwrap() {
                prop_assert!((-1e-12..=1.0).contains(&g));
                let scaled: Vec<f64> = e.iter().map(|x| x * a).collect();
                prop_assert!((gini(&scaled).unwrap().unwrap() - g).abs() < 1e-9);
            }
            let n = e.len();
            let c = CoefficientPlane { rows: 1, cols: n, coeffs: e.iter().map(|x| x.sqrt()).collect() };
            if let Some(cd) = centroid(&c) {
                prop_assert!((0.0..=1.0).contains(&cd));
                let c2 = CoefficientPlane { coeffs: c.coeffs.iter().map(|x| x * a.sqrt()).collect(), ..c.clone() };
                prop_assert!((centroid(&c2).unwrap() - cd).abs() < 1e-9);
            }
        }

        #[test]
        fn dct_parseval_and_inverse(rows in 1usize..12, cols in 1usize..12, seed in any::<u32>()) {
            let p = plane(rows, cols, |i, j| {
                let k = (i * 31 + j * 17) as u32 ^ seed;
                (k.wrapping_mul(2654435761) % 10_000) as f64 / 1000.0 - 5.0
            });
            let c = dct2(&p);
            let e_in: f64 = p.values().iter().map(|v| v * v).sum();
            let e_out: f64 = c.coeffs.iter().map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-9 * e_in.max(1e-300));
            let back = idct2(&c);
            for (a, b) in back.values().iter().zip(p.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
