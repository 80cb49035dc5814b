//! Column-major design matrices.
//!
//! A [`DataMatrix`] holds `n` column vectors in `R^d`. Raw bag-of-words inputs
//! are stored sparse (compressed columns); hidden representations are dense.
//! The constant bias feature is never stored: every consumer that needs it
//! treats it as an implicit `(d+1)`-th coordinate equal to one.

use faer::linalg::matmul::matmul;
use faer::{Accum, ColMut, ColRef, MatRef, Par};

use crate::error::{Error, Result};

/// Whether the columns hold raw inputs or learned hidden representations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Raw,
    Hidden,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Sparse {
        col_ptr: Vec<usize>,
        rows: Vec<usize>,
        values: Vec<f64>,
    },
    /// Column-major, `dim * n` values.
    Dense(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    dim: usize,
    n: usize,
    kind: ColumnKind,
    storage: Storage,
}

/// Borrowed view of one column.
#[derive(Clone, Copy, Debug)]
pub enum Column<'a> {
    Sparse {
        rows: &'a [usize],
        values: &'a [f64],
    },
    Dense(&'a [f64]),
}

impl<'a> Column<'a> {
    /// Iterates `(row, value)` pairs; sparse columns yield stored entries only,
    /// dense columns yield every row.
    pub fn entries(self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match self {
            Column::Sparse { rows, values } => {
                Box::new(rows.iter().copied().zip(values.iter().copied()))
            }
            Column::Dense(values) => Box::new(values.iter().copied().enumerate()),
        }
    }

    pub fn dot(self, w: &[f64]) -> f64 {
        match self {
            Column::Sparse { rows, values } => {
                rows.iter().zip(values).map(|(&r, &v)| w[r] * v).sum()
            }
            Column::Dense(values) => values.iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn to_dense(self, dim: usize) -> Vec<f64> {
        match self {
            Column::Sparse { rows, values } => {
                let mut out = vec![0.0; dim];
                for (&r, &v) in rows.iter().zip(values) {
                    out[r] = v;
                }
                out
            }
            Column::Dense(values) => values.to_vec(),
        }
    }

    pub fn sum(self) -> f64 {
        match self {
            Column::Sparse { values, .. } => values.iter().sum(),
            Column::Dense(values) => values.iter().sum(),
        }
    }
}

impl DataMatrix {
    /// Builds a sparse matrix from per-column `(row, value)` lists. Entries are
    /// sorted, duplicate rows summed and exact zeros dropped.
    pub fn from_sparse_columns<I>(dim: usize, columns: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<(usize, f64)>>,
    {
        let mut col_ptr = vec![0];
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (j, mut col) in columns.into_iter().enumerate() {
            col.sort_by_key(|&(r, _)| r);
            let start = rows.len();
            for (r, v) in col {
                if r >= dim {
                    return Err(Error::Shape {
                        expected: dim,
                        found: r + 1,
                    });
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        feature: r,
                        column: j,
                        value: v,
                    });
                }
                if rows.len() > start && rows[rows.len() - 1] == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    rows.push(r);
                    values.push(v);
                }
            }
            // drop entries that cancelled or were zero to begin with
            let mut keep = start;
            for k in start..rows.len() {
                if values[k] != 0.0 {
                    rows[keep] = rows[k];
                    values[keep] = values[k];
                    keep += 1;
                }
            }
            rows.truncate(keep);
            values.truncate(keep);
            col_ptr.push(rows.len());
        }
        Ok(DataMatrix {
            dim,
            n: col_ptr.len() - 1,
            kind: ColumnKind::Raw,
            storage: Storage::Sparse {
                col_ptr,
                rows,
                values,
            },
        })
    }

    /// Wraps column-major dense data of shape `dim x n`.
    pub fn from_dense(dim: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * n {
            return Err(Error::Shape {
                expected: dim * n,
                found: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            let (feature, column) = if dim == 0 { (0, 0) } else { (k % dim, k / dim) };
            return Err(Error::NonFinite {
                feature,
                column,
                value: data[k],
            });
        }
        Ok(DataMatrix {
            dim,
            n,
            kind: ColumnKind::Hidden,
            storage: Storage::Dense(data),
        })
    }

    /// Dense matrix from a list of equally long columns.
    pub fn from_dense_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * columns.len());
        for col in columns {
            if col.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    found: col.len(),
                });
            }
            data.extend_from_slice(col);
        }
        Self::from_dense(dim, columns.len(), data)
    }

    pub(crate) fn from_dense_unchecked(dim: usize, n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * n);
        DataMatrix {
            dim,
            n,
            kind: ColumnKind::Hidden,
            storage: Storage::Dense(data),
        }
    }

    pub fn with_kind(mut self, kind: ColumnKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    /// Number of stored entries (all `dim * n` entries for dense storage).
    pub fn stored_len(&self) -> usize {
        match &self.storage {
            Storage::Sparse { values, .. } => values.len(),
            Storage::Dense(data) => data.len(),
        }
    }

    pub fn column(&self, j: usize) -> Column<'_> {
        assert!(j < self.n, "column {j} out of range for {} columns", self.n);
        match &self.storage {
            Storage::Sparse {
                col_ptr,
                rows,
                values,
            } => {
                let range = col_ptr[j]..col_ptr[j + 1];
                Column::Sparse {
                    rows: &rows[range.clone()],
                    values: &values[range],
                }
            }
            Storage::Dense(data) => Column::Dense(&data[j * self.dim..(j + 1) * self.dim]),
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = Column<'_>> + '_ {
        (0..self.n).map(move |j| self.column(j))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.dim);
        match self.column(col) {
            Column::Sparse { rows, values } => {
                rows.binary_search(&row).map(|k| values[k]).unwrap_or(0.0)
            }
            Column::Dense(values) => values[row],
        }
    }

    /// Dense column-major values, if stored densely.
    pub fn dense_values(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(data) => Some(data),
            Storage::Sparse { .. } => None,
        }
    }

    /// Borrowed faer view of dense storage.
    pub fn as_mat_ref(&self) -> Option<MatRef<'_, f64>> {
        self.dense_values()
            .map(|data| MatRef::from_column_major_slice(data, self.dim, self.n))
    }

    /// Dense copy of the matrix (no-op clone when already dense).
    pub fn to_dense(&self) -> DataMatrix {
        match &self.storage {
            Storage::Dense(_) => self.clone(),
            Storage::Sparse { .. } => {
                let mut data = vec![0.0; self.dim * self.n];
                for (j, col) in self.columns().enumerate() {
                    for (r, v) in col.entries() {
                        data[j * self.dim + r] = v;
                    }
                }
                DataMatrix {
                    dim: self.dim,
                    n: self.n,
                    kind: self.kind,
                    storage: Storage::Dense(data),
                }
            }
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        match &self.storage {
            Storage::Sparse { .. } => {
                let mut col_ptr = vec![0];
                let mut rows = Vec::new();
                let mut values = Vec::new();
                for &j in cols {
                    if let Column::Sparse { rows: r, values: v } = self.column(j) {
                        rows.extend_from_slice(r);
                        values.extend_from_slice(v);
                    }
                    col_ptr.push(rows.len());
                }
                DataMatrix {
                    dim: self.dim,
                    n: cols.len(),
                    kind: self.kind,
                    storage: Storage::Sparse {
                        col_ptr,
                        rows,
                        values,
                    },
                }
            }
            Storage::Dense(data) => {
                let mut out = Vec::with_capacity(self.dim * cols.len());
                for &j in cols {
                    out.extend_from_slice(&data[j * self.dim..(j + 1) * self.dim]);
                }
                DataMatrix {
                    dim: self.dim,
                    n: cols.len(),
                    kind: self.kind,
                    storage: Storage::Dense(out),
                }
            }
        }
    }

    /// Keeps the listed features, in the listed order.
    pub fn select_rows(&self, feature_rows: &[usize]) -> DataMatrix {
        match &self.storage {
            Storage::Sparse { .. } => {
                let mut position = vec![usize::MAX; self.dim];
                for (new, &old) in feature_rows.iter().enumerate() {
                    position[old] = new;
                }
                let columns = self.columns().map(|col| {
                    col.entries()
                        .filter_map(|(r, v)| {
                            let p = position[r];
                            (p != usize::MAX).then_some((p, v))
                        })
                        .collect::<Vec<_>>()
                });
                DataMatrix::from_sparse_columns(feature_rows.len(), columns)
                    .expect("selected entries are valid")
                    .with_kind(self.kind)
            }
            Storage::Dense(data) => {
                let k = feature_rows.len();
                let mut out = Vec::with_capacity(k * self.n);
                for j in 0..self.n {
                    let col = &data[j * self.dim..(j + 1) * self.dim];
                    out.extend(feature_rows.iter().map(|&r| col[r]));
                }
                DataMatrix {
                    dim: k,
                    n: self.n,
                    kind: self.kind,
                    storage: Storage::Dense(out),
                }
            }
        }
    }

    /// Concatenates column sets that share a dimension. The result is sparse
    /// only when every part is sparse.
    pub fn hstack(parts: &[&DataMatrix]) -> Result<DataMatrix> {
        let dim = parts.first().map_or(0, |m| m.dim);
        for m in parts {
            if m.dim != dim {
                return Err(Error::Shape {
                    expected: dim,
                    found: m.dim,
                });
            }
        }
        let kind = parts.first().map_or(ColumnKind::Raw, |m| m.kind);
        if parts.iter().all(|m| m.is_sparse()) {
            let columns = parts
                .iter()
                .flat_map(|m| m.columns().map(|c| c.entries().collect::<Vec<_>>()));
            Ok(DataMatrix::from_sparse_columns(dim, columns)?.with_kind(kind))
        } else {
            let n: usize = parts.iter().map(|m| m.n).sum();
            let mut data = Vec::with_capacity(dim * n);
            for m in parts {
                for col in m.columns() {
                    data.extend(col.to_dense(dim));
                }
            }
            Ok(DataMatrix::from_dense_unchecked(dim, n, data).with_kind(kind))
        }
    }

    /// Stacks feature blocks over the same columns: `[a; b; ...]`, dense.
    pub fn vstack(parts: &[&DataMatrix]) -> Result<DataMatrix> {
        let n = parts.first().map_or(0, |m| m.n);
        for m in parts {
            if m.n != n {
                return Err(Error::Shape {
                    expected: n,
                    found: m.n,
                });
            }
        }
        let dim: usize = parts.iter().map(|m| m.dim).sum();
        let mut data = vec![0.0; dim * n];
        for j in 0..n {
            let mut offset = j * dim;
            for m in parts {
                let out = &mut data[offset..offset + m.dim];
                match m.column(j) {
                    Column::Dense(values) => out.copy_from_slice(values),
                    col @ Column::Sparse { .. } => {
                        for (r, v) in col.entries() {
                            out[r] = v;
                        }
                    }
                }
                offset += m.dim;
            }
        }
        Ok(DataMatrix::from_dense_unchecked(dim, n, data))
    }

    /// `w^T x_j` for every column.
    pub fn column_dots(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.dim);
        if let Some(x) = self.as_mat_ref() {
            let mut out = vec![0.0; self.n];
            matmul(
                ColMut::from_slice_mut(&mut out).as_mat_mut(),
                Accum::Replace,
                x.transpose(),
                ColRef::from_slice(w).as_mat(),
                1.0,
                Par::Seq,
            );
            return out;
        }
        self.columns().map(|c| c.dot(w)).collect()
    }

    /// `out += sum_j coeffs[j] * x_j`.
    pub fn add_weighted_columns(&self, coeffs: &[f64], out: &mut [f64]) {
        assert_eq!(coeffs.len(), self.n);
        assert_eq!(out.len(), self.dim);
        if let Some(x) = self.as_mat_ref() {
            matmul(
                ColMut::from_slice_mut(out).as_mat_mut(),
                Accum::Add,
                x,
                ColRef::from_slice(coeffs).as_mat(),
                1.0,
                Par::Seq,
            );
            return;
        }
        for (col, &c) in self.columns().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            match col {
                Column::Sparse { rows, values } => {
                    for (&r, &v) in rows.iter().zip(values) {
                        out[r] += c * v;
                    }
                }
                Column::Dense(values) => {
                    for (o, &v) in out.iter_mut().zip(values) {
                        *o += c * v;
                    }
                }
            }
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.columns().map(Column::sum).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_weighted_columns(&vec![1.0; self.n], &mut out);
        out
    }

    pub fn max_abs(&self) -> f64 {
        let values = match &self.storage {
            Storage::Sparse { values, .. } => values.as_slice(),
            Storage::Dense(data) => data.as_slice(),
        };
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
