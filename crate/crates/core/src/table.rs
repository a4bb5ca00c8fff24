//! Contingency tables stored as a single vector of cell counts.
//!
//! Cells are addressed the same way everywhere in the crate: a multi-index
//! `(a, b, c, …)` of 1-based axis positions maps to a 1-based single index in
//! lexicographic (row-major) order, so for a two-way `I × J` table
//! `i = (a − 1)J + b` and for a three-way `I × J × K` table
//! `i = (a − 1)JK + (b − 1)K + c`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tables with more axes than this are rejected.
pub const MAX_AXES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Vec<u64>,
    shape: Vec<usize>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<u64>, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let k: usize = shape.iter().product();
        if counts.len() != k {
            return Err(Error::dim("ContingencyTable::new", k, counts.len()));
        }
        Ok(Self { counts, shape })
    }

    /// One-way table of `k` cells.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let k = counts.len();
        Self::new(counts, vec![k])
    }

    /// Two-way table from equal-length rows.
    pub fn from_rows<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut counts = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(Error::domain(format!(
                    "row {} has {} cells, expected {ncols}",
                    i + 1,
                    row.len()
                )));
            }
            counts.extend_from_slice(row);
        }
        Self::new(counts, vec![nrows, ncols])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let k = shape.iter().product();
        Ok(Self {
            counts: vec![0; k],
            shape,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of cells.
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Total count `N`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Real-valued copy of the counts.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.counts.iter().map(|&c| c as f64))
    }

    /// Count at a 1-based multi-index.
    pub fn get(&self, multi_index: &[usize]) -> Result<u64> {
        Ok(self.counts[index_of(multi_index, &self.shape)? - 1])
    }

    /// Side length `I` when the table is square `I × I`.
    pub fn square_side(&self) -> Option<usize> {
        match self.shape.as_slice() {
            [i, j] if i == j => Some(*i),
            _ => None,
        }
    }

    /// Row and column sums of a square table.
    pub fn margins(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let side = self.square_side().ok_or_else(|| {
            Error::domain(format!("margins need a square table, got shape {:?}", self.shape))
        })?;
        let mut rows = vec![0.0; side];
        let mut cols = vec![0.0; side];
        for a in 0..side {
            for b in 0..side {
                let v = self.counts[a * side + b] as f64;
                rows[a] += v;
                cols[b] += v;
            }
        }
        Ok((rows, cols))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_AXES {
        return Err(Error::domain(format!(
            "tables need between 1 and {MAX_AXES} axes, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::domain("axis lengths must be positive"));
    }
    Ok(())
}

/// Lexicographic 1-based single index of a 1-based multi-index.
pub fn index_of(multi_index: &[usize], shape: &[usize]) -> Result<usize> {
    check_shape(shape)?;
    if multi_index.len() != shape.len() {
        return Err(Error::dim("index_of", shape.len(), multi_index.len()));
    }
    let mut idx = 0;
    for (axis, (&a, &len)) in multi_index.iter().zip(shape).enumerate() {
        if a == 0 || a > len {
            return Err(Error::domain(format!(
                "axis {} index {a} outside 1..={len}",
                axis + 1
            )));
        }
        idx = idx * len + (a - 1);
    }
    Ok(idx + 1)
}

/// Inverse of [`index_of`].
pub fn multi_index_of(index: usize, shape: &[usize]) -> Result<Vec<usize>> {
    check_shape(shape)?;
    let k: usize = shape.iter().product();
    if index == 0 || index > k {
        return Err(Error::domain(format!("cell index {index} outside 1..={k}")));
    }
    let mut rest = index - 1;
    let mut out = vec![0; shape.len()];
    for (slot, &len) in out.iter_mut().zip(shape).rev() {
        *slot = rest % len + 1;
        rest /= len;
    }
    Ok(out)
}
