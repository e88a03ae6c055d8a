use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::{Format, GlobalArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Diverging,
    Undetermined,
    CertificateFailed,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::Diverging => 2,
            Outcome::Undetermined => 3,
            Outcome::CertificateFailed => 4,
        }
    }
}

/// A command's output in both formats. For tabular experiments the CSV holds
/// the rows and `summary` the aggregate, written next to the CSV.
pub struct Rendered {
    pub json: String,
    pub csv: String,
    pub summary: Option<String>,
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `+inf`, `-inf` and `nan` as strings, finite values as numbers.
pub fn finite_or_tag(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else if v.is_nan() {
        serde_json::json!("nan")
    } else if v > 0.0 {
        serde_json::json!("+inf")
    } else {
        serde_json::json!("-inf")
    }
}

fn summary_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    out.with_file_name(name)
}

pub fn emit(global: &GlobalArgs, r: &Rendered) -> Result<()> {
    let body = match global.format {
        Format::Json => &r.json,
        Format::Csv => &r.csv,
    };
    match &global.out {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
            if let (Format::Csv, Some(summary)) = (global.format, &r.summary) {
                let sp = summary_path(path);
                std::fs::write(&sp, summary)
                    .with_context(|| format!("writing {}", sp.display()))?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            if let (Format::Csv, Some(summary)) = (global.format, &r.summary) {
                eprint!("{summary}");
            }
        }
    }
    Ok(())
}
