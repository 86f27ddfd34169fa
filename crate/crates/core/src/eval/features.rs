//! Numeric design matrices for predictors, metrics and attack distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Cell, ColumnKind, DataTable, TableSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureColumn {
    /// Standardized with statistics of the fitting table.
    Continuous { column: usize, mean: f64, std: f64 },
    /// One indicator per category. With `drop_first` the first category is
    /// the reference level and gets no indicator.
    OneHot { column: usize, categories: usize, drop_first: bool },
}

impl FeatureColumn {
    pub fn width(&self) -> usize {
        match self {
            FeatureColumn::Continuous { .. } => 1,
            FeatureColumn::OneHot {
                categories, drop_first, ..
            } => categories - usize::from(*drop_first),
        }
    }
}

/// Maps rows to dense feature vectors. Categories unknown at fit time get
/// an all-zero block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureEncoder {
    /// Encodes every column of `table` except `exclude`.
    pub fn fit(table: &DataTable, exclude: &[usize]) -> Self {
        Self::build(table, exclude, false)
    }

    /// Like [`FeatureEncoder::fit`] with reference-level coding, for models
    /// with an intercept.
    pub fn fit_reference_coded(table: &DataTable, exclude: &[usize]) -> Self {
        Self::build(table, exclude, true)
    }

    fn build(table: &DataTable, exclude: &[usize], drop_first: bool) -> Self {
        let schema = table.schema();
        let mut columns = Vec::new();
        for (c, spec) in schema.columns.iter().enumerate() {
            if exclude.contains(&c) {
                continue;
            }
            match spec.kind {
                ColumnKind::Continuous => {
                    let n = table.row_count().max(1) as f64;
                    let vals = table.rows().iter().map(|r| r[c].num().unwrap_or(0.0));
                    let mean = vals.clone().sum::<f64>() / n;
                    let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                    columns.push(FeatureColumn::Continuous { column: c, mean, std });
                }
                ColumnKind::Discrete => columns.push(FeatureColumn::OneHot {
                    column: c,
                    categories: spec.categories().len(),
                    drop_first,
                }),
            }
        }
        Self { columns }
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(FeatureColumn::width).sum()
    }

    pub fn encode_row(&self, row: &[Cell], out: &mut Vec<f64>) {
        for col in &self.columns {
            match *col {
                FeatureColumn::Continuous { column, mean, std } => {
                    out.push((row[column].num().unwrap_or(mean) - mean) / std);
                }
                FeatureColumn::OneHot {
                    column,
                    categories,
                    drop_first,
                } => {
                    let start = out.len();
                    let skip = usize::from(drop_first);
                    out.resize(start + categories - skip, 0.0);
                    if let Some(k) = row[column].cat() {
                        if k >= skip && k < categories {
                            out[start + k - skip] = 1.0;
                        }
                    }
                }
            }
        }
    }

    pub fn encode(&self, table: &DataTable) -> Matrix {
        let mut data = Vec::with_capacity(table.row_count() * self.width());
        for row in table.rows() {
            self.encode_row(row, &mut data);
        }
        Matrix {
            rows: table.row_count(),
            cols: self.width(),
            data,
        }
    }
}

/// Row-major dense matrix of features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn select(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Class indices of a discrete column.
pub fn labels(table: &DataTable, column: usize) -> Result<Vec<usize>> {
    table
        .rows()
        .iter()
        .map(|r| {
            r[column].cat().ok_or_else(|| {
                Error::InvalidArgument(format!("column {} is not discrete", table.schema().columns[column].name))
            })
        })
        .collect()
}

/// Re-expresses both tables over one schema so category indices agree. The
/// first table's categories keep their indices.
pub fn align(original: &DataTable, synthetic: &DataTable) -> Result<(DataTable, DataTable)> {
    if original.schema().names() != synthetic.schema().names() {
        return Err(Error::InvalidSchema("tables have different columns".into()));
    }
    for (a, b) in original.schema().columns.iter().zip(&synthetic.schema().columns) {
        if a.kind != b.kind {
            return Err(Error::InvalidSchema(format!("column {} differs in kind", a.name)));
        }
    }
    let s = synthetic.conform_to(original.schema())?;
    let o = original.conform_to(s.schema())?;
    Ok((o, s))
}

/// Indices of discrete columns.
pub fn discrete_columns(schema: &TableSchema) -> Vec<usize> {
    (0..schema.len()).filter(|&c| schema.columns[c].is_discrete()).collect()
}

/// Indices of continuous columns.
pub fn continuous_columns(schema: &TableSchema) -> Vec<usize> {
    (0..schema.len()).filter(|&c| !schema.columns[c].is_discrete()).collect()
}
