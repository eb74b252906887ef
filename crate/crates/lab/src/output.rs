//! CSV / JSONL writers and the metadata sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::LabResult;
use crate::run::{RunOutput, RunStatus};
use crate::sweep::SweepResult;

pub const RESCALING_NOTE: &str =
    "student layers rescaled by w -> (tau/alpha) w, a -> (tau alpha) a with tau^2 (alpha^2 - alpha^-2) = delta";

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn format_f64(v: f64) -> String {
    // shortest round-trip form
    format!("{v:?}")
}

pub fn write_trajectory<W: Write>(out: &RunOutput, format: OutputFormat, mut w: W) -> LabResult<()> {
    match format {
        OutputFormat::Csv => {
            let mut writer = csv::Writer::from_writer(w);
            writer.write_record(&out.columns)?;
            for row in &out.rows {
                writer.write_record(row.iter().map(|v| format_f64(*v)))?;
            }
            writer.flush()?;
        }
        OutputFormat::Jsonl => {
            for row in &out.rows {
                let record: Map<String, Value> = out.columns.iter().cloned().zip(row.iter().map(|v| number(*v))).collect();
                serde_json::to_writer(&mut w, &record)?;
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

pub fn write_sweep<W: Write>(sweep: &SweepResult, format: OutputFormat, mut w: W) -> LabResult<()> {
    match format {
        OutputFormat::Csv => {
            let mut writer = csv::Writer::from_writer(w);
            let mut header = vec!["tau".to_string(), "delta".into(), "count".into(), "failures".into(), "drift_flagged".into()];
            header.extend(sweep.metrics.iter().cloned());
            writer.write_record(&header)?;
            for cell in &sweep.cells {
                let mut row = vec![
                    format_f64(cell.tau),
                    format_f64(cell.delta),
                    cell.count.to_string(),
                    cell.failures.len().to_string(),
                    cell.drift_flagged.to_string(),
                ];
                row.extend(cell.means.iter().map(|v| format_f64(*v)));
                writer.write_record(&row)?;
            }
            writer.flush()?;
        }
        OutputFormat::Jsonl => {
            for cell in &sweep.cells {
                let mut record = Map::new();
                record.insert("tau".into(), number(cell.tau));
                record.insert("delta".into(), number(cell.delta));
                record.insert("count".into(), json!(cell.count));
                record.insert("failures".into(), json!(cell.failures));
                record.insert("drift_flagged".into(), json!(cell.drift_flagged));
                for (name, v) in sweep.metrics.iter().zip(&cell.means) {
                    record.insert(name.clone(), number(*v));
                }
                serde_json::to_writer(&mut w, &record)?;
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// Path of the metadata file that accompanies `data_path`.
pub fn meta_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    data_path.with_file_name(name)
}

/// Config, hash, version and run status; no timestamps, so reruns are byte-identical.
pub fn metadata(cfg: &ExperimentConfig, status: Option<&RunStatus>, extra: Value) -> Value {
    json!({
        "config": cfg,
        "config_hash": cfg.hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "seeds": cfg.seed_list(),
        "rescaling": RESCALING_NOTE,
        "status": status,
        "extra": extra,
    })
}

pub fn write_meta(data_path: &Path, meta: &Value) -> LabResult<PathBuf> {
    let path = meta_path(data_path);
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}
