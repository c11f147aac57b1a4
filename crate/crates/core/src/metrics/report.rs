use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Quality-gain row: sequence, q, ΔPSNR (dB), ΔSSIM.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaRow {
    pub sequence: String,
    pub q: u32,
    pub delta_psnr: Option<f64>,
    pub delta_ssim: f64,
}

/// Rate-saving row: sequence, BD-rate (%).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BdRow {
    pub sequence: String,
    pub bd_rate: f64,
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Metric(format!("CSV {}: {other:?}", path.display())),
    }
}

/// Aligned whitespace table with a `#`-prefixed header, readable by gnuplot.
pub fn gnuplot_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let ncol = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    width[0] += 2;
    for r in rows {
        for (c, cell) in r.iter().enumerate().take(ncol) {
            width[c] = width[c].max(cell.len());
        }
    }
    let mut out = String::new();
    let head: Vec<String> = headers.iter().enumerate().map(|(c, h)| {
        let h = if c == 0 { format!("# {h}") } else { h.to_string() };
        format!("{h:>w$}", w = width[c])
    }).collect();
    let _ = writeln!(out, "{}", head.join("  "));
    for r in rows {
        let cells: Vec<String> = r.iter().enumerate().take(ncol).map(|(c, v)| format!("{v:>w$}", w = width[c])).collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    out
}
