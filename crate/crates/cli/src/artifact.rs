//! Artifact emission: a header block followed by CSV rows or a JSON report.
//!
//! The header of a CSV artifact is a run of `# `-prefixed lines which, with
//! the prefix removed, form a valid run config. JSON artifacts carry the same
//! text under `header.config`.

use std::fs;
use std::path::{Path, PathBuf};

use orbilab::config::{GAUSSIAN_NORMALIZATION, SDE_NORMALIZATION, TOOL_VERSION};
use serde_json::json;

use crate::error::CliError;

pub enum Output {
    Csv { columns: Vec<&'static str>, rows: Vec<Vec<String>> },
    Json(serde_json::Value),
}

pub struct Header<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub params: &'a toml::Table,
    pub uses_sde: bool,
    pub partial: bool,
}

impl Header<'_> {
    /// The header as a TOML document that is itself a valid run config.
    pub fn to_toml(&self) -> String {
        let mut doc = toml::Table::new();
        doc.insert("experiment".into(), self.experiment.into());
        doc.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        doc.insert("params".into(), toml::Value::Table(self.params.clone()));
        let mut meta = toml::Table::new();
        meta.insert("tool".into(), TOOL_VERSION.into());
        meta.insert("partial".into(), self.partial.into());
        meta.insert("gaussian_normalization".into(), GAUSSIAN_NORMALIZATION.into());
        if self.uses_sde {
            meta.insert("sde_normalization".into(), SDE_NORMALIZATION.into());
        }
        doc.insert("artifact".into(), toml::Value::Table(meta));
        toml::to_string(&doc).expect("header serializes")
    }
}

pub fn file_name(experiment: &str, output: &Output) -> String {
    match output {
        Output::Csv { .. } => format!("{experiment}.csv"),
        Output::Json(_) => format!("{experiment}.json"),
    }
}

pub fn write(dir: &Path, header: &Header, output: &Output) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(file_name(header.experiment, output));
    let text = header.to_toml();
    let body = match output {
        Output::Csv { columns, rows } => {
            let mut out = String::new();
            for line in text.lines() {
                out.push_str(if line.is_empty() { "#" } else { "# " });
                out.push_str(line);
                out.push('\n');
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(columns).map_err(|e| CliError::Io(e.to_string()))?;
            for r in rows {
                w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
            out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
            out
        }
        Output::Json(result) => {
            let doc = json!({
                "header": {
                    "tool": TOOL_VERSION,
                    "experiment": header.experiment,
                    "seed": header.seed,
                    "partial": header.partial,
                    "params": header.params,
                    "config": text,
                },
                "result": result,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
    };
    fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Config text recovered from an artifact's header block, or the file
/// itself when it is a plain TOML config.
pub fn config_text(path: &Path) -> Result<String, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(raw
            .lines()
            .map_while(|l| l.strip_prefix("# ").or_else(|| (l == "#").then_some("")))
            .map(|l| format!("{l}\n"))
            .collect()),
        Some("json") => {
            let v: serde_json::Value =
                serde_json::from_str(&raw).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            v["header"]["config"]
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| CliError::Io(format!("{}: no header.config entry", path.display())))
        }
        _ => Ok(raw),
    }
}

/// Shortest round-trip formatting; non-finite values as `inf`, `-inf`, `nan`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}
