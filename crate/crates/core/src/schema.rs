//! Typed table schema, row storage, CSV I/O and train/holdout splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Ordered category labels. `None` means "infer at load"; once a table is
    /// loaded the inferred list is written back and frozen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// Name of the property map that replaces this column during training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_by: Option<String>,
}

impl ColumnSpec {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            categories: None,
            masked_by: None,
        }
    }

    pub fn discrete(name: &str, categories: Option<&[&str]>) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Discrete,
            categories: categories.map(|c| c.iter().map(|s| s.to_string()).collect()),
            masked_by: None,
        }
    }

    pub fn with_mask(mut self, map: &str) -> Self {
        self.masked_by = Some(map.to_string());
        self
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == ColumnKind::Discrete
    }

    pub fn categories(&self) -> &[String] {
        self.categories.as_deref().unwrap_or(&[])
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories().iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensitive: Vec<String>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self {
            columns,
            target: None,
            sensitive: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column {}", c.name)));
            }
            match c.kind {
                ColumnKind::Continuous => {
                    if c.categories.is_some() || c.masked_by.is_some() {
                        return Err(Error::InvalidSchema(format!(
                            "continuous column {} cannot carry categories or a mask",
                            c.name
                        )));
                    }
                }
                ColumnKind::Discrete => {
                    if let Some(cats) = &c.categories {
                        if cats.is_empty() {
                            return Err(Error::InvalidSchema(format!("column {} declares no categories", c.name)));
                        }
                        let unique: BTreeSet<_> = cats.iter().collect();
                        if unique.len() != cats.len() {
                            return Err(Error::InvalidSchema(format!("column {} repeats a category", c.name)));
                        }
                    }
                }
            }
        }
        for name in self.target.iter().chain(&self.sensitive) {
            if !names.contains(name.as_str()) {
                return Err(Error::InvalidSchema(format!("unknown column {name} referenced")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// One cell: a category index into the column's label list, or a finite real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Cat(u32),
    Num(f64),
}

impl Cell {
    pub fn cat(self) -> Option<usize> {
        match self {
            Cell::Cat(i) => Some(i as usize),
            Cell::Num(_) => None,
        }
    }

    pub fn num(self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(v),
            Cell::Cat(_) => None,
        }
    }
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: TableSchema,
    rows: Vec<Row>,
}

impl DataTable {
    /// Builds a table from cells, checking arity, category bounds and finiteness.
    pub fn new(schema: TableSchema, rows: Vec<Row>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has {} cells, schema has {} columns",
                    row.len(),
                    schema.len()
                )));
            }
            for (cell, col) in row.iter().zip(&schema.columns) {
                match (cell, col.kind) {
                    (Cell::Num(v), ColumnKind::Continuous) if v.is_finite() => {}
                    (Cell::Cat(i), ColumnKind::Discrete) if (*i as usize) < col.categories().len() => {}
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "row {r}: invalid cell {cell:?} for column {}",
                            col.name
                        )))
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    /// Empty table over `schema`.
    pub fn empty(schema: TableSchema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Row {
        &self.rows[i]
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_parts(self) -> (TableSchema, Vec<Row>) {
        (self.schema, self.rows)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column {name}")))
    }

    /// Text form of a cell, as written to CSV.
    pub fn label(&self, col: usize, cell: Cell) -> String {
        match cell {
            Cell::Cat(i) => self.schema.columns[col].categories()[i as usize].clone(),
            Cell::Num(v) => format_real(v),
        }
    }

    /// Appends a row given as text labels. Unknown discrete labels are
    /// appended to the column's category list when `extend` is set.
    pub fn push_labels(&mut self, labels: &[String], extend: bool) -> Result<()> {
        let row = parse_row(&mut self.schema, labels, extend, self.rows.len())?;
        self.rows.push(row);
        Ok(())
    }

    /// Appends a row of cells after checking it against the schema.
    pub fn push_row(&mut self, row: Row) -> Result<()> {
        let checked = DataTable::new(self.schema.clone(), vec![row])?;
        self.rows.extend(checked.rows);
        Ok(())
    }

    /// Index of `label` in discrete column `col`, appending it if new.
    pub fn intern(&mut self, col: usize, label: &str) -> u32 {
        let spec = &mut self.schema.columns[col];
        let cats = spec.categories.get_or_insert_with(Vec::new);
        match cats.iter().position(|c| c == label) {
            Some(i) => i as u32,
            None => {
                cats.push(label.to_string());
                (cats.len() - 1) as u32
            }
        }
    }

    /// Sub-table with the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Rows of `other` appended; schemas must have the same columns. Category
    /// lists are merged by label.
    pub fn concat(&self, other: &DataTable) -> Result<DataTable> {
        let mut out = self.clone();
        if self.schema.names() != other.schema.names() {
            return Err(Error::InvalidArgument("tables have different columns".into()));
        }
        for row in &other.rows {
            let labels: Vec<String> = row.iter().enumerate().map(|(c, &cell)| other.label(c, cell)).collect();
            out.push_labels(&labels, true)?;
        }
        Ok(out)
    }

    /// Re-expresses this table under `schema` (same column names), remapping
    /// category indices by label. Labels missing from `schema` are appended.
    pub fn conform_to(&self, schema: &TableSchema) -> Result<DataTable> {
        let mut out = DataTable::empty(schema.clone());
        let mut labels = Vec::with_capacity(schema.len());
        let order: Vec<usize> = schema
            .columns
            .iter()
            .map(|c| self.column_index(&c.name))
            .collect::<Result<_>>()?;
        for row in &self.rows {
            labels.clear();
            labels.extend(order.iter().map(|&c| self.label(c, row[c])));
            out.push_labels(&labels, true)?;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().enumerate().map(|(c, &cell)| self.label(c, cell)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Shortest text that parses back to exactly `v`.
pub fn format_real(v: f64) -> String {
    format!("{v}")
}

fn parse_row(schema: &mut TableSchema, labels: &[String], extend: bool, row_idx: usize) -> Result<Row> {
    if labels.len() != schema.len() {
        return Err(Error::InvalidArgument(format!(
            "row {row_idx} has {} values, schema has {} columns",
            labels.len(),
            schema.len()
        )));
    }
    let mut row = Vec::with_capacity(labels.len());
    for (label, col) in labels.iter().zip(schema.columns.iter_mut()) {
        let cell = match col.kind {
            ColumnKind::Continuous => {
                let v: f64 = label.trim().parse().map_err(|_| Error::Unparsable {
                    row: row_idx,
                    column: col.name.clone(),
                    value: label.clone(),
                })?;
                if !v.is_finite() {
                    return Err(Error::Unparsable {
                        row: row_idx,
                        column: col.name.clone(),
                        value: label.clone(),
                    });
                }
                Cell::Num(v)
            }
            ColumnKind::Discrete => match col.category_index(label) {
                Some(i) => Cell::Cat(i as u32),
                None if extend => {
                    let cats = col.categories.get_or_insert_with(Vec::new);
                    cats.push(label.clone());
                    Cell::Cat((cats.len() - 1) as u32)
                }
                None => {
                    return Err(Error::UnknownCategory {
                        column: col.name.clone(),
                        value: label.clone(),
                    })
                }
            },
        };
        row.push(cell);
    }
    Ok(row)
}

/// Loads a CSV file under `schema`; see [`read_csv`].
pub fn load_csv(path: &Path, schema: &TableSchema, missing: MissingPolicy) -> Result<DataTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, missing)
}

/// Reads a headed CSV. Columns are reordered to schema order; discrete
/// columns without declared categories get a sorted category list inferred
/// from the data, which is frozen into the returned table's schema.
pub fn read_csv<R: Read>(reader: R, schema: &TableSchema, missing: MissingPolicy) -> Result<DataTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: BTreeSet<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let found: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    if expected != found || header.len() != schema.len() {
        return Err(Error::HeaderMismatch {
            expected: schema.names(),
            found: header,
        });
    }
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let order: Vec<usize> = schema.columns.iter().map(|c| position[c.name.as_str()]).collect();

    let mut raw: Vec<Vec<String>> = Vec::new();
    'records: for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(order.len());
        for (&src, col) in order.iter().zip(&schema.columns) {
            let v = record.get(src).unwrap_or("");
            if v.is_empty() {
                match missing {
                    MissingPolicy::DropRow => continue 'records,
                    MissingPolicy::Error => {
                        return Err(Error::MissingValue {
                            row: line,
                            column: col.name.clone(),
                        })
                    }
                }
            }
            values.push(v.to_string());
        }
        raw.push(values);
    }
    if raw.is_empty() {
        return Err(Error::EmptyTable);
    }

    let mut frozen = schema.clone();
    for (c, col) in frozen.columns.iter_mut().enumerate() {
        if col.is_discrete() && col.categories.is_none() {
            let cats: BTreeSet<&str> = raw.iter().map(|r| r[c].as_str()).collect();
            col.categories = Some(cats.into_iter().map(str::to_string).collect());
        }
    }
    let mut rows = Vec::with_capacity(raw.len());
    for (i, values) in raw.iter().enumerate() {
        rows.push(parse_row(&mut frozen, values, false, i)?);
    }
    Ok(DataTable { schema: frozen, rows })
}

/// Seeded disjoint split into `(train, holdout)` with
/// `|holdout| = round(fraction · n)`. Rows keep their original order.
pub fn split_train_holdout(table: &DataTable, holdout_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    let n = table.row_count();
    let k = (holdout_fraction * n as f64).round() as usize;
    if n < 2 || k == 0 || k == n {
        return Err(Error::InvalidArgument(format!("table of {n} rows is too small to split")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let mut holdout = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    Ok((table.select(&train), table.select(&holdout)))
}

/// Seeded sample of `n` distinct rows, kept in their original order. Asking
/// for at least as many rows as the table has returns it unchanged.
pub fn subsample(table: &DataTable, n: usize, seed: u64) -> DataTable {
    if n >= table.row_count() {
        return table.clone();
    }
    let mut idx = rand::seq::index::sample(&mut rng::rng(seed), table.row_count(), n).into_vec();
    idx.sort_unstable();
    table.select(&idx)
}
