//! Raw mixed-type tables and CSV IO.

use std::io::{Read, Write};
use std::path::Path;

use crate::domain::{ColumnKind, DataAccess, Domain};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::privacy::Charge;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Categorical(Vec<String>),
    Numerical(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(v) => v.len(),
            Column::Numerical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_string(&self, row: usize) -> String {
        match self {
            Column::Categorical(v) => v[row].clone(),
            Column::Numerical(v) => format_number(v[row]),
        }
    }
}

/// Shortest decimal text that round-trips to the same float.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

/// A column-oriented table of categorical and numerical values.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTable {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl MixedTable {
    pub fn new(names: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::validation(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        if let Some(i) = columns.iter().position(|c| c.len() != n_rows) {
            return Err(Error::validation(format!("column `{}` has {} rows, expected {n_rows}", names[i], columns[i].len())));
        }
        for (name, col) in names.iter().zip(&columns) {
            if let Column::Numerical(v) = col {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::CorruptData(format!("column `{name}` holds non-finite value {bad}")));
                }
            }
        }
        Ok(Self { names, columns, n_rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Checks that names and column kinds line up with `domain`.
    pub fn check_schema(&self, domain: &Domain) -> Result<()> {
        if self.names.len() != domain.len() {
            return Err(Error::validation(format!(
                "table has {} columns, domain declares {}",
                self.names.len(),
                domain.len()
            )));
        }
        for ((name, col), spec) in self.names.iter().zip(&self.columns).zip(&domain.columns) {
            if *name != spec.name {
                return Err(Error::validation(format!("column `{name}` where domain expects `{}`", spec.name)));
            }
            let ok = matches!(
                (col, &spec.kind),
                (Column::Categorical(_), ColumnKind::Categorical { .. }) | (Column::Numerical(_), ColumnKind::Numerical { .. })
            );
            if !ok {
                return Err(Error::validation(format!("column `{name}` has the wrong kind for its domain")));
            }
        }
        Ok(())
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice(&self, start: usize, end: usize) -> MixedTable {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Categorical(v) => Column::Categorical(v[start..end].to_vec()),
                Column::Numerical(v) => Column::Numerical(v[start..end].to_vec()),
            })
            .collect();
        MixedTable { names: self.names.clone(), columns, n_rows: end - start }
    }

    /// Selects rows by index, in the given order.
    pub fn take(&self, rows: &[usize]) -> MixedTable {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect()),
                Column::Numerical(v) => Column::Numerical(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        MixedTable { names: self.names.clone(), columns, n_rows: rows.len() }
    }

    /// Reads CSV with a header, typing columns according to `domain`.
    pub fn read_csv<R: Read>(reader: R, domain: &Domain) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let expected = domain.names();
        if header != expected {
            return Err(Error::validation(format!("CSV header {header:?} does not match domain columns {expected:?}")));
        }
        let mut columns: Vec<Column> = domain
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Categorical { .. } => Column::Categorical(Vec::new()),
                ColumnKind::Numerical { .. } => Column::Numerical(Vec::new()),
            })
            .collect();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (i, field) in record.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::CorruptData(format!("missing value in row {row}, column `{}`", header[i])));
                }
                match &mut columns[i] {
                    Column::Categorical(v) => v.push(field.to_string()),
                    Column::Numerical(v) => {
                        let x: f64 = field.trim().parse().map_err(|_| {
                            Error::CorruptData(format!("row {row}, column `{}`: `{field}` is not a number", header[i]))
                        })?;
                        v.push(x);
                    }
                }
            }
        }
        MixedTable::new(header, columns)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, domain: &Domain) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, domain)
    }

    /// Reads CSV without a domain. Columns whose every cell parses as a
    /// number become numerical, the rest categorical.
    pub fn read_csv_untyped<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (i, field) in record.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::CorruptData(format!("missing value in row {row}, column `{}`", header[i])));
                }
                raw[i].push(field.to_string());
            }
        }
        let columns = raw
            .into_iter()
            .map(|cells| {
                let parsed: Option<Vec<f64>> =
                    cells.iter().map(|c| c.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect();
                match parsed {
                    Some(v) if !v.is_empty() => Column::Numerical(v),
                    _ => Column::Categorical(cells),
                }
            })
            .collect();
        MixedTable::new(header, columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for r in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.cell_string(r)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::CorruptData(e.to_string()))
    }
}

/// Access to a private raw table. Reading numeric values requires a ledger
/// charge; encoding produces a [`DataAccess`] whose reads are charged too.
pub trait TableSource: Sync {
    fn names(&self) -> &[String];

    /// Schema check against the domain; reads no cell values.
    fn check_schema(&self, domain: &Domain) -> Result<()>;

    fn numeric_column(&self, col: usize, charge: &Charge) -> Result<Vec<f64>>;

    fn encode(&self, prep: &Preprocessor) -> Result<Box<dyn DataAccess + '_>>;
}

impl TableSource for MixedTable {
    fn names(&self) -> &[String] {
        &self.names
    }

    fn check_schema(&self, domain: &Domain) -> Result<()> {
        MixedTable::check_schema(self, domain)
    }

    fn numeric_column(&self, col: usize, _charge: &Charge) -> Result<Vec<f64>> {
        match self.columns.get(col) {
            Some(Column::Numerical(v)) => Ok(v.clone()),
            Some(Column::Categorical(_)) => Err(Error::invalid(format!("column `{}` is not numerical", self.names[col]))),
            None => Err(Error::invalid(format!("no column {col}"))),
        }
    }

    fn encode(&self, prep: &Preprocessor) -> Result<Box<dyn DataAccess + '_>> {
        Ok(Box::new(prep.encode(self)?))
    }
}
