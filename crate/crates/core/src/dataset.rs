//! Labeled-sample CSV persistence.
//!
//! One row per oracle evaluation: ten hole widths in nm, the wavelength,
//! the complex transmission split into real and imaginary parts, and a
//! solver-seconds column. Files round-trip bit-exactly because floats are
//! written with the shortest representation that re-parses to the same bits.
//!
//! The timing columns here and in [`HistoryRow`] are written as 0.0 by every
//! pipeline: rerunning with the same config and seed must reproduce each file
//! byte for byte, and wall-clock readings never repeat. Measured totals live
//! in each run directory's timing.json instead.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrequencyId, ParamVector, NETWORK_WIDTHS};

/// Column names of [`SampleRow`] files in serialization order, for writers
/// that stream rows (or none) instead of going through [`write_rows`].
pub const CSV_HEADER: &str =
    "w1,w2,w3,w4,w5,w6,w7,w8,w9,w10,wavelength_nm,re_t,im_t,solver_seconds";

/// One labeled unit-cell evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
    pub w9: f64,
    pub w10: f64,
    pub wavelength_nm: f64,
    pub re_t: f64,
    pub im_t: f64,
    pub solver_seconds: f64,
}

impl SampleRow {
    pub fn new(
        p: &ParamVector,
        f: FrequencyId,
        t: Complex64,
        solver_seconds: f64,
    ) -> Result<Self> {
        let w = &p.widths_nm;
        if w.len() != NETWORK_WIDTHS {
            return Err(Error::Validation(format!(
                "dataset rows hold {NETWORK_WIDTHS} widths, got {}",
                w.len()
            )));
        }
        Ok(Self {
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            w5: w[4],
            w6: w[5],
            w7: w[6],
            w8: w[7],
            w9: w[8],
            w10: w[9],
            wavelength_nm: f.wavelength_nm(),
            re_t: t.re,
            im_t: t.im,
            solver_seconds,
        })
    }

    pub fn widths(&self) -> ParamVector {
        ParamVector::new(vec![
            self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7, self.w8, self.w9,
            self.w10,
        ])
    }

    pub fn frequency(&self) -> Result<FrequencyId> {
        FrequencyId::from_wavelength_nm(self.wavelength_nm)
    }

    pub fn transmission(&self) -> Complex64 {
        Complex64::new(self.re_t, self.im_t)
    }
}

/// Write rows to `path`, creating parent directories as needed.
pub fn write_rows(path: &Path, rows: &[SampleRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = BufWriter::new(File::create(path)?);
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_rows`]; header is required.
pub fn read_rows(path: &Path) -> Result<Vec<SampleRow>> {
    let file = BufReader::new(File::open(path)?);
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<SampleRow>().enumerate() {
        let row: SampleRow =
            rec.map_err(|e| Error::Validation(format!("row {}: {e}", i + 1)))?;
        for (field, v) in [
            ("wavelength_nm", row.wavelength_nm),
            ("re_t", row.re_t),
            ("im_t", row.im_t),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "row {}: non-finite {field}",
                    i + 1
                )));
            }
        }
        row.frequency()
            .map_err(|e| Error::Validation(format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// One per-iteration record of an active-learning or baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub n_train: usize,
    pub fe_complex: f64,
    pub fe_re: f64,
    pub fe_im: f64,
    pub oracle_calls: usize,
    pub oracle_seconds: f64,
    pub surrogate_eval_seconds: f64,
}

/// Write a training history to CSV.
pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = BufWriter::new(File::create(path)?);
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a history CSV written by [`write_history`].
pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let file = BufReader::new(File::open(path)?);
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in r.deserialize::<HistoryRow>() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Write arbitrary named columns of equal length, e.g. focal-line scans.
pub fn write_columns(path: &Path, headers: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(Error::Validation(format!(
            "{} headers for {} columns",
            headers.len(),
            columns.len()
        )));
    }
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Validation("column lengths differ".into()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", headers.join(","))?;
    for i in 0..n {
        let line: Vec<String> = columns.iter().map(|c| format!("{}", c[i])).collect();
        writeln!(file, "{}", line.join(","))?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitCellSpec;

    fn sample(seed: f64) -> SampleRow {
        let spec = UnitCellSpec::normal();
        let p = ParamVector::uniform(&spec, 60.0 + seed);
        SampleRow::new(&p, FrequencyId::Green, Complex64::new(0.3 + seed, -0.4), 1.25).unwrap()
    }

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = std::env::temp_dir().join("metasurf-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.csv");
        let rows = vec![sample(0.0), sample(0.125), sample(std::f64::consts::PI)];
        write_rows(&path, &rows).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(rows, back);
        // Writing the identical rows again must produce identical bytes.
        let first = std::fs::read(&path).unwrap();
        write_rows(&path, &back).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn header_is_stable() {
        let dir = std::env::temp_dir().join("metasurf-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("header.csv");
        write_rows(&path, &[sample(1.0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, CSV_HEADER);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn read_rejects_unknown_wavelength() {
        let dir = std::env::temp_dir().join("metasurf-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        let mut row = sample(0.0);
        row.wavelength_nm = 500.0;
        write_rows(&path, &[row]).unwrap();
        assert!(matches!(read_rows(&path), Err(Error::Validation(_))));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn history_roundtrip() {
        let dir = std::env::temp_dir().join("metasurf-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("history.csv");
        let rows = vec![
            HistoryRow {
                iter: 0,
                n_train: 200,
                fe_complex: 0.31,
                fe_re: 0.3,
                fe_im: 0.33,
                oracle_calls: 200,
                oracle_seconds: 12.5,
                surrogate_eval_seconds: 0.25,
            },
            HistoryRow {
                iter: 1,
                n_train: 300,
                fe_complex: 0.22,
                fe_re: 0.21,
                fe_im: 0.24,
                oracle_calls: 300,
                oracle_seconds: 19.0,
                surrogate_eval_seconds: 0.5,
            },
        ];
        write_history(&path, &rows).unwrap();
        let back = read_history(&path).unwrap();
        assert_eq!(rows, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "iter,n_train,fe_complex,fe_re,fe_im,oracle_calls,oracle_seconds,surrogate_eval_seconds"
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
