//! CSV and aligned-text table emission.

use selsieve::error::{Error, Result};
use std::path::Path;

/// Full-precision float for CSV round-tripping.
pub fn f17(v: f64) -> String {
    format!("{v:.17e}")
}

/// Display precision for aligned text tables.
pub fn f4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
    w.write_record(header)
        .and_then(|_| rows.iter().try_for_each(|r| w.write_record(r)))
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })
}

pub fn aligned_text(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (j, cell) in r.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    let line = |cells: &[String], widths: &[usize]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j > 0 {
                s.push_str("  ");
            }
            s.push_str(&format!("{c:>w$}", w = widths[j]));
        }
        s.push('\n');
        s
    };
    let hdr: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    out.push_str(&line(&hdr, &widths));
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r, &widths));
    }
    out
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}
