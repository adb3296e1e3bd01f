//! On-disk artifacts: learning-curve CSV and JSON summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CURVE_HEADER: [&str; 4] = ["epoch", "train_loss", "val_score", "invalid_frac"];

/// One row of a learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
    pub invalid_frac: f64,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_curve_csv(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            format_f64(r.train_loss),
            format_f64(r.val_score),
            format_f64(r.invalid_frac),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CURVE_HEADER) {
        return Err(Error::Data(format!("unexpected curve header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Data(format!("bad number `{}` in {}", &rec[i], path.display())))
        };
        out.push(EpochRecord {
            epoch: rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad epoch `{}`", &rec[0])))?,
            train_loss: num(1)?,
            val_score: num(2)?,
            invalid_frac: num(3)?,
        });
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Simple two-column series, e.g. `m,score`.
pub fn write_series_csv(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([x_name, y_name])?;
    for &(x, y) in points {
        w.write_record([format_f64(x), format_f64(y)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
