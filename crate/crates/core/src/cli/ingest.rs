//! CSV ingestion.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::{Dataset, Task};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data(format!("{} has no header row", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::Data(format!("missing value at row {row}, column '{column}'")));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Data(format!("non-numeric value '{cell}' at row {row}, column '{column}'")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("non-finite value '{cell}' at row {row}, column '{column}'")));
    }
    Ok(v)
}

fn numeric_matrix(table: &Table, columns: &[usize]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((table.rows.len(), columns.len()));
    for (i, row) in table.rows.iter().enumerate() {
        for (k, &j) in columns.iter().enumerate() {
            x[[i, k]] = parse_cell(&row[j], i + 1, &table.header[j])?;
        }
    }
    Ok(x)
}

/// Load a dataset whose inputs are every column except `response`, in header order.
///
/// Rows are numbered from 1 after the header in error messages. For classification
/// the response holds labels, one-hot encoded in order of first appearance.
pub fn load_csv(path: &Path, response: &str, task: Task) -> Result<Dataset> {
    let table = read_table(path)?;
    let target = table
        .header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::Data(format!("response column '{response}' not found in {}", path.display())))?;
    let features: Vec<usize> = (0..table.header.len()).filter(|&j| j != target).collect();
    if features.is_empty() {
        return Err(Error::Data("no input columns besides the response".into()));
    }
    let x = numeric_matrix(&table, &features)?;
    let names = features.iter().map(|&j| table.header[j].clone()).collect();

    match task {
        Task::Regression => {
            let y = numeric_matrix(&table, &[target])?;
            Dataset::with_names(x, y, task, names, None)
        }
        Task::Classification => {
            let mut labels: Vec<String> = Vec::new();
            let mut codes = Vec::with_capacity(table.rows.len());
            for (i, row) in table.rows.iter().enumerate() {
                let label = &row[target];
                if label.is_empty() {
                    return Err(Error::Data(format!("missing label at row {}, column '{response}'", i + 1)));
                }
                let code = labels.iter().position(|l| l == label).unwrap_or_else(|| {
                    labels.push(label.clone());
                    labels.len() - 1
                });
                codes.push(code);
            }
            if labels.len() < 2 {
                return Err(Error::Data("classification needs at least two distinct labels".into()));
            }
            let mut y = Array2::zeros((codes.len(), labels.len()));
            for (i, &c) in codes.iter().enumerate() {
                y[[i, c]] = 1.0;
            }
            Dataset::with_names(x, y, task, names, Some(labels))
        }
    }
}

/// Load the named input columns, in the given order; other columns are ignored.
pub fn load_features(path: &Path, names: &[String]) -> Result<Array2<f64>> {
    let table = read_table(path)?;
    let columns = names
        .iter()
        .map(|name| {
            table
                .header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("input column '{name}' not found in {}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    numeric_matrix(&table, &columns)
}
