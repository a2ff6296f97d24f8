//! Generic delimited numeric tables.
//!
//! A table is a CSV file with a header row. An optional `label` column holds
//! zero-based class indices (empty for unlabelled rows). Every other column
//! is a numeric feature; empty cells read as 0. The missing block is declared
//! in a sidecar file next to the table (`<table>.mask`) listing one missing
//! column name per line.

use std::path::{Path, PathBuf};

use super::{BlockDescriptor, Dataset, Domain, FixedMask, InputLayout};
use crate::error::{config, Error, Result};

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct TabularFiles {
    pub table: PathBuf,
    pub mask: PathBuf,
}

impl TabularFiles {
    pub fn new(table: impl Into<PathBuf>) -> Self {
        let table = table.into();
        let mut mask = table.clone().into_os_string();
        mask.push(".mask");
        Self {
            table,
            mask: PathBuf::from(mask),
        }
    }
}

fn read_mask_columns(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Reads a table and its declared missing block.
///
/// Returns the unmasked dataset, its feature column names, and the mask
/// (all-observed when there is no sidecar).
pub fn load_tabular(
    files: &TabularFiles,
    num_classes: usize,
    domain: Domain,
) -> Result<(Dataset, Vec<String>, FixedMask)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&files.table)
        .map_err(|e| Error::Fetch {
            name: files.table.display().to_string(),
            reason: e.to_string(),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let features: Vec<String> = header
        .iter()
        .filter(|h| h.as_str() != LABEL_COLUMN)
        .cloned()
        .collect();
    if features.is_empty() {
        return config("table has no feature columns");
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut x = Vec::with_capacity(features.len());
        let mut label = None;
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_col {
                if !cell.is_empty() {
                    let y: usize = cell
                        .parse()
                        .map_err(|_| Error::Config(format!("row {}: bad label `{cell}`", line + 1)))?;
                    label = Some(y);
                }
            } else if cell.is_empty() {
                x.push(0.0);
            } else {
                x.push(cell.parse::<f32>().map_err(|_| {
                    Error::Config(format!("row {}: non-numeric cell `{cell}`", line + 1))
                })?);
            }
        }
        rows.push((x, label));
    }
    let dataset = Dataset::from_full(
        files.table.display().to_string(),
        InputLayout::Flat { dim: features.len() },
        num_classes,
        domain,
        rows,
    )?;
    let mask = if files.mask.is_file() {
        let missing = read_mask_columns(&files.mask)?;
        let unknown: Vec<&String> = missing.iter().filter(|m| !features.contains(m)).collect();
        if !unknown.is_empty() {
            return config(format!("mask names unknown columns {unknown:?}"));
        }
        let bits = features.iter().map(|f| missing.contains(f)).collect();
        FixedMask::from_bits(bits, Some(BlockDescriptor::Columns { names: missing }))?
    } else {
        FixedMask::none(features.len())
    };
    Ok((dataset, features, mask))
}

/// Writes the full vectors of `dataset` as a table plus its mask sidecar.
pub fn write_tabular(files: &TabularFiles, dataset: &Dataset, columns: &[String], missing: &[String]) -> Result<()> {
    if columns.len() != dataset.layout.len() {
        return config(format!(
            "{} column names for {} features",
            columns.len(),
            dataset.layout.len()
        ));
    }
    let mut w = csv::Writer::from_path(&files.table)?;
    let mut header: Vec<&str> = columns.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.full_vector(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.samples[i].label.map(|y| y.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(&files.mask, missing.join("\n") + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_table_and_sidecar() {
        let tmp = tempfile::tempdir().unwrap();
        let files = TabularFiles::new(tmp.path().join("t.csv"));
        std::fs::write(&files.table, "a,b,label,c\n1,2,0,3\n4,,1,6\n").unwrap();
        std::fs::write(&files.mask, "c\n").unwrap();
        let (ds, cols, mask) = load_tabular(&files, 2, Domain::Source).unwrap();
        assert_eq!(cols, vec!["a", "b", "c"]);
        assert_eq!(ds.samples[1].x1, vec![4.0, 0.0, 6.0]);
        assert_eq!(ds.labels(), vec![Some(0), Some(1)]);
        assert_eq!(mask.bits(), &[false, false, true]);
    }

    #[test]
    fn roundtrip_through_writer() {
        let tmp = tempfile::tempdir().unwrap();
        let files = TabularFiles::new(tmp.path().join("t.csv"));
        let ds = Dataset::from_full(
            "x",
            InputLayout::Flat { dim: 2 },
            2,
            Domain::Target,
            vec![(vec![0.5, -1.0], None), (vec![2.0, 3.25], Some(1))],
        )
        .unwrap();
        let cols = vec!["u".to_string(), "v".to_string()];
        write_tabular(&files, &ds, &cols, &["v".to_string()]).unwrap();
        let (back, _, mask) = load_tabular(&files, 2, Domain::Target).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(mask.missing_indices(), vec![1]);
    }

    #[test]
    fn unknown_mask_column_and_bad_cells_are_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let files = TabularFiles::new(tmp.path().join("t.csv"));
        std::fs::write(&files.table, "a,b\n1,2\n").unwrap();
        std::fs::write(&files.mask, "z\n").unwrap();
        assert!(matches!(load_tabular(&files, 2, Domain::Source), Err(Error::Config(_))));
        std::fs::write(&files.table, "a,b\n1,x\n").unwrap();
        std::fs::remove_file(&files.mask).unwrap();
        assert!(matches!(load_tabular(&files, 2, Domain::Source), Err(Error::Config(_))));
    }

    #[test]
    fn missing_table_is_fetch_error() {
        let files = TabularFiles::new("/nonexistent/t.csv");
        assert!(matches!(load_tabular(&files, 2, Domain::Source), Err(Error::Fetch { .. })));
    }
}
