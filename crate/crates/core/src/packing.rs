//! Per-tensor packing into the 2D plane a codec consumes.
//!
//! Every leading axis folds into rows and the last axis becomes columns;
//! rank-1 tensors become a single row. Packing is a pure reshape: element
//! order never changes.

use serde::{Deserialize, Serialize};

use crate::container::{checked_element_count, FeatureTensor, ScalarPrecision};
use crate::error::{Error, Result};

/// A row-major `rows x cols` plane of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Packed2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(vec![rows, cols]));
        }
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::ElementCount {
                shape: vec![rows, cols],
                expected: rows.saturating_mul(cols),
                actual: values.len(),
            });
        }
        Ok(Packed2D { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutRule {
    LastAxisAsColumns,
    RowVector,
}

impl LayoutRule {
    pub const fn wire_id(self) -> u8 {
        match self {
            LayoutRule::LastAxisAsColumns => 0,
            LayoutRule::RowVector => 1,
        }
    }

    pub fn from_wire_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(LayoutRule::LastAxisAsColumns),
            1 => Some(LayoutRule::RowVector),
            _ => None,
        }
    }
}

/// Metadata needed to invert [`pack`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingRecord {
    pub tensor_id: String,
    pub original_shape: Vec<usize>,
    pub layout_rule: LayoutRule,
}

impl PackingRecord {
    pub fn for_shape(tensor_id: impl Into<String>, shape: &[usize]) -> Result<Self> {
        checked_element_count(shape)?;
        let layout_rule = if shape.len() == 1 {
            LayoutRule::RowVector
        } else {
            LayoutRule::LastAxisAsColumns
        };
        Ok(PackingRecord {
            tensor_id: tensor_id.into(),
            original_shape: shape.to_vec(),
            layout_rule,
        })
    }

    /// Plane dimensions `(rows, cols)` this record packs to.
    pub fn plane_dims(&self) -> Result<(usize, usize)> {
        let count = checked_element_count(&self.original_shape)?;
        let cols = match self.layout_rule {
            LayoutRule::RowVector => count,
            LayoutRule::LastAxisAsColumns => *self.original_shape.last().unwrap_or(&1),
        };
        Ok((count / cols, cols))
    }
}

pub fn pack(tensor: &FeatureTensor) -> Result<(Packed2D, PackingRecord)> {
    let record = PackingRecord::for_shape(tensor.id.clone(), tensor.shape())?;
    let (rows, cols) = record.plane_dims()?;
    let values = tensor.values().iter().map(|&v| f64::from(v)).collect();
    Ok((Packed2D::new(rows, cols, values)?, record))
}

/// Inverts [`pack`]. The tensor comes back at FP32 with the record's id;
/// callers restore the original precision and tags.
pub fn unpack(plane: Packed2D, record: &PackingRecord) -> Result<FeatureTensor> {
    let count = checked_element_count(&record.original_shape)?;
    let (rows, cols) = record.plane_dims()?;
    if count != plane.len() || rows != plane.rows || cols != plane.cols {
        return Err(Error::PackingMismatch {
            record: record.original_shape.clone(),
            rows: plane.rows,
            cols: plane.cols,
        });
    }
    let values = plane.values.into_iter().map(|v| v as f32).collect();
    FeatureTensor::new(
        record.tensor_id.clone(),
        ScalarPrecision::Fp32,
        record.original_shape.clone(),
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: Vec<usize>) -> FeatureTensor {
        let n: usize = shape.iter().product();
        FeatureTensor::new(
            "t",
            ScalarPrecision::Fp32,
            shape,
            (0..n).map(|i| i as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn leading_axes_fold_into_rows() {
        let (plane, record) = pack(&ramp(vec![5, 4, 7, 128])).unwrap();
        assert_eq!((plane.rows(), plane.cols()), (140, 128));
        assert_eq!(record.layout_rule, LayoutRule::LastAxisAsColumns);

        let (plane, _) = pack(&ramp(vec![1029, 4096])).unwrap();
        assert_eq!((plane.rows(), plane.cols()), (1029, 4096));
    }

    #[test]
    fn rank_one_is_a_row_vector() {
        let (plane, record) = pack(&ramp(vec![4096])).unwrap();
        assert_eq!((plane.rows(), plane.cols()), (1, 4096));
        assert_eq!(record.layout_rule, LayoutRule::RowVector);
    }

    #[test]
    fn model_shapes_round_trip() {
        let n = 7;
        for shape in [
            vec![n, 4096],
            vec![4, 2, n, 64],
            vec![n, 3584],
            vec![5, 4, n, 128],
            vec![5, 64, 16],
            vec![5, 64, 4],
            vec![768],
            vec![n, 768],
            vec![1280],
            vec![32, 8, 8],
        ] {
            let t = ramp(shape);
            let (plane, record) = pack(&t).unwrap();
            assert_eq!(unpack(plane, &record).unwrap(), t);
        }
    }

    #[test]
    fn inconsistent_record_rejected() {
        let plane = Packed2D::new(2, 4, vec![0.0; 8]).unwrap();
        let record = PackingRecord::for_shape("x", &[3, 3]).unwrap();
        assert!(matches!(
            unpack(plane, &record).unwrap_err(),
            Error::PackingMismatch {
                rows: 2,
                cols: 4,
                ..
            }
        ));
        // same element count, different geometry
        let plane = Packed2D::new(2, 4, vec![0.0; 8]).unwrap();
        let record = PackingRecord::for_shape("x", &[4, 2]).unwrap();
        assert!(unpack(plane, &record).is_err());
    }

    #[test]
    fn unpack_keeps_given_order() {
        let t = ramp(vec![2, 3]);
        let (plane, record) = pack(&t).unwrap();
        let mut vals = plane.into_values();
        vals.reverse();
        let out = unpack(Packed2D::new(2, 3, vals).unwrap(), &record).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.values(), &[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn pack_unpack_identity(
            shape in prop::collection::vec(1usize..6, 1..5),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = (0..n)
                .map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6 - 2000.0)
                .collect();
            let t = FeatureTensor::new("p", ScalarPrecision::Fp32, shape.clone(), values).unwrap();
            let (plane, record) = pack(&t).unwrap();
            prop_assert_eq!(plane.len(), n);
            if shape.len() == 1 {
                prop_assert_eq!(plane.rows(), 1);
            }
            let back = unpack(plane, &record).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
