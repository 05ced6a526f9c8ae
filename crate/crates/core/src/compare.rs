//! Column-wise comparison of two trajectory CSV files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Parsed CSV with a header row; `#` lines are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: std::io::Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    source_name: source_name.to_string(),
                    message: format!("data row {}: {e}", i + 1),
                })?;
            rows.push(row);
        }
        Ok(CsvTable { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareSpec {
    /// Columns to compare; every non-time column when empty.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub max_abs: Option<f64>,
    #[serde(default)]
    pub rel_rms: Option<f64>,
    /// Inclusive time window.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: String,
    pub max_abs: f64,
    /// `rms(a − b) / rms(b)`.
    pub rel_rms: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: usize,
    pub max_abs_threshold: Option<f64>,
    pub rel_rms_threshold: Option<f64>,
    pub columns: Vec<ColumnReport>,
    pub pass: bool,
}

/// `(max |a − b|, rms(a − b) / rms(b))`. A zero reference gives a
/// relative value of zero for identical data and infinity otherwise.
pub fn column_metrics(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len().max(1) as f64;
    let mut max_abs: f64 = 0.0;
    let mut se = 0.0;
    let mut sb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        max_abs = max_abs.max(d.abs());
        se += d * d;
        sb += y * y;
    }
    let rms_d = (se / n).sqrt();
    let rms_b = (sb / n).sqrt();
    let rel = if rms_b > 0.0 {
        rms_d / rms_b
    } else if rms_d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (max_abs, rel)
}

pub fn compare_tables(a: &CsvTable, b: &CsvTable, spec: &CompareSpec, exec: Execution) -> Result<CompareReport> {
    if a.headers != b.headers {
        let only_a: Vec<_> = a.headers.iter().filter(|h| !b.headers.contains(h)).cloned().collect();
        let only_b: Vec<_> = b.headers.iter().filter(|h| !a.headers.contains(h)).cloned().collect();
        let msg = if only_a.is_empty() && only_b.is_empty() {
            "column order differs".to_string()
        } else {
            format!("columns only in first: {only_a:?}; columns only in second: {only_b:?}")
        };
        return Err(Error::Schema(msg));
    }
    if a.rows.len() != b.rows.len() {
        return Err(Error::Schema(format!(
            "row counts differ ({} vs {})",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let tcol = a.headers.iter().position(|h| h == "time_s");
    let mut keep = Vec::with_capacity(a.rows.len());
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        if let Some(t) = tcol {
            let (ta, tb) = (ra[t], rb[t]);
            if (ta - tb).abs() > 1e-9 * ta.abs().max(1.0) {
                return Err(Error::Schema(format!("time grids differ at row {} ({ta} vs {tb})", i + 1)));
            }
            if let Some((t0, t1)) = spec.window {
                if ta < t0 || ta > t1 {
                    continue;
                }
            }
        }
        keep.push(i);
    }
    let columns: Vec<String> = if spec.columns.is_empty() {
        a.headers.iter().filter(|h| *h != "time_s").cloned().collect()
    } else {
        for c in &spec.columns {
            if !a.headers.contains(c) {
                return Err(Error::Schema(format!("column `{c}` not present")));
            }
        }
        spec.columns.clone()
    };
    let reports = par::map(exec, &columns, |c| {
        let k = a.headers.iter().position(|h| h == c).expect("checked");
        let xa: Vec<f64> = keep.iter().map(|&i| a.rows[i][k]).collect();
        let xb: Vec<f64> = keep.iter().map(|&i| b.rows[i][k]).collect();
        let (max_abs, rel_rms) = column_metrics(&xa, &xb);
        let pass = spec.max_abs.is_none_or(|t| max_abs <= t) && spec.rel_rms.is_none_or(|t| rel_rms <= t);
        ColumnReport {
            column: c.clone(),
            max_abs,
            rel_rms,
            pass,
        }
    });
    let pass = reports.iter().all(|r| r.pass);
    Ok(CompareReport {
        rows: keep.len(),
        max_abs_threshold: spec.max_abs,
        rel_rms_threshold: spec.rel_rms,
        columns: reports,
        pass,
    })
}

pub fn compare_files(a: &Path, b: &Path, spec: &CompareSpec, exec: Execution) -> Result<CompareReport> {
    compare_tables(&CsvTable::read(a)?, &CsvTable::read(b)?, spec, exec)
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let width = self.columns.iter().map(|c| c.column.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}  result", "column", "max_abs", "rel_rms");
        for c in &self.columns {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12.4e}  {:>12.4e}  {}",
                c.column,
                c.max_abs,
                c.rel_rms,
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "{} rows compared: {}", self.rows, if self.pass { "pass" } else { "FAIL" });
        s
    }

    pub fn failed_columns(&self) -> Vec<&str> {
        self.columns.iter().filter(|c| !c.pass).map(|c| c.column.as_str()).collect()
    }
}
