//! Batch containers shared by every stage of the pipeline.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Integer symbols, shape `[batch, positions]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteBatch {
    values: Array2<u32>,
}

impl DiscreteBatch {
    pub fn new(values: Array2<u32>) -> Self {
        Self { values }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let positions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != positions) {
            return Err(Error::shape("ragged rows in discrete batch"));
        }
        let flat: Vec<u32> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), positions), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self { values })
    }

    /// One symbol per row.
    pub fn from_column(values: &[u32]) -> Self {
        let values = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column shape is always valid");
        Self { values }
    }

    pub fn batch(&self) -> usize {
        self.values.nrows()
    }

    pub fn positions(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<u32> {
        &self.values
    }

    pub fn row(&self, i: usize) -> Vec<u32> {
        self.values.row(i).to_vec()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.values.iter().find(|&&v| v as usize >= vocab_size) {
            Some(v) => Err(Error::Range(format!(
                "symbol {v} not in [0, {vocab_size})"
            ))),
            None => Ok(()),
        }
    }

    pub fn concat(parts: &[DiscreteBatch]) -> Result<Self> {
        if parts.is_empty() {
            return Ok(Self::new(Array2::zeros((0, 0))));
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self { values })
    }
}

/// Real-valued analog bits, shape `[batch, positions * n_bits]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogTensor {
    data: Array2<f64>,
}

impl AnalogTensor {
    pub fn new(data: Array2<f64>) -> Self {
        Self {
            data: standard(data),
        }
    }

    pub fn zeros(batch: usize, features: usize) -> Self {
        Self {
            data: Array2::zeros((batch, features)),
        }
    }

    pub fn from_vec(batch: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((batch, features), data)
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn zeros_like(other: &AnalogTensor) -> Self {
        Self::zeros(other.batch(), other.features())
    }

    pub fn batch(&self) -> usize {
        self.data.nrows()
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.batch(), self.features())
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("analog tensors are always standard layout")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &AnalogTensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn clipped(&self, bound: f64) -> AnalogTensor {
        AnalogTensor::new(self.data.mapv(|v| v.clamp(-bound, bound)))
    }

    pub fn concat(parts: &[AnalogTensor]) -> Result<Self> {
        if parts.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self::new(data))
    }
}

/// Row-major copy unless already row-major.
pub(crate) fn standard<A: Clone, D: ndarray::Dimension>(a: ndarray::Array<A, D>) -> ndarray::Array<A, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
