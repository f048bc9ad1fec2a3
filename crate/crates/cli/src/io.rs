//! CSV / JSON ingestion and artifact writing.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sparseproj::design::GroupSpec;

use crate::error::CliError;

/// Numeric table read from a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let shown = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::input(format!("{shown}: {e}")))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("{shown}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(CliError::input(format!("{shown}: missing header row")));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::input(format!("{shown}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::input(format!(
                    "{shown}: line {line}, column {} ('{}'): cannot parse '{field}' as a number",
                    c + 1,
                    names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{shown}: line {line}, column {} ('{}'): non-finite value",
                    c + 1,
                    names[c]
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::input(format!("{shown}: no data rows")));
    }
    Ok(Table { values: DMatrix::from_row_slice(rows, names.len(), &data), names })
}

/// Reads a single-column CSV as a vector.
pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let t = read_table(path)?;
    if t.values.ncols() != 1 {
        return Err(CliError::input(format!(
            "{}: expected one column, found {}",
            path.display(),
            t.values.ncols()
        )));
    }
    Ok(t.values.column(0).into_owned())
}

/// One entry of the group file; columns `start..=end`, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

pub fn read_groups(path: &Path, p: usize) -> Result<GroupSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let entries: Vec<GroupEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let bounds: Vec<_> = entries.iter().map(|e| (e.start, e.end)).collect();
    let names = entries.into_iter().map(|e| e.name).collect();
    GroupSpec::from_named_one_based(&bounds, names, p).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes artifacts into one directory, stamping every CSV with the seed
/// and config hash.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub seed: u64,
    pub hash: String,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, seed: u64, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::output(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), seed, hash, written: Vec::new() })
    }

    pub fn header(&self) -> String {
        format!("# seed={} config_hash={}\n", self.seed, self.hash)
    }

    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CliError> {
        let mut buf = self.header().into_bytes();
        body(&mut buf).map_err(|e| CliError::output(format!("{name}: {e}")))?;
        self.write(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut buf = serde_json::to_vec_pretty(value).map_err(|e| CliError::output(format!("{name}: {e}")))?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::output(format!("{}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::output(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}
