use std::fs;
use std::io::{self, Write};
use std::time::Duration;

use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::Settings;
use crate::CliError;

/// Result of a subcommand before serialization.
pub enum Report {
    Json(Value),
    Csv { header: Vec<String>, rows: Vec<Vec<String>> },
}

pub fn complex(z: Complex64) -> Value {
    json!([z.re, z.im])
}

pub fn complexes(zs: &[Complex64]) -> Value {
    Value::Array(zs.iter().map(|&z| complex(z)).collect())
}

fn manifest(settings: &Settings, command: &str) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_hash": settings.hash(command),
        "seed": settings.config.seed,
        "threads": settings.threads,
    })
}

fn render(report: Report, settings: &Settings, command: &str) -> String {
    match report {
        Report::Json(mut value) => {
            if let Value::Object(map) = &mut value {
                map.insert("manifest".into(), manifest(settings, command));
            }
            let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
            text.push('\n');
            text
        }
        Report::Csv { header, rows } => {
            let mut text = header.join(",");
            text.push('\n');
            for row in rows {
                text.push_str(&row.join(","));
                text.push('\n');
            }
            text
        }
    }
}

/// Writes the report to `--out` (or stdout). Wall time goes to stderr and,
/// with `--out`, to the `<out>.manifest.json` sidecar only.
pub fn emit(report: Report, settings: &Settings, command: &str, wall: Duration) -> Result<(), CliError> {
    let text = render(report, settings, command);
    let io_err = |e: io::Error| CliError::Io(e.to_string());
    match &settings.out {
        Some(path) => {
            fs::write(path, text).map_err(io_err)?;
            let mut side = manifest(settings, command);
            side["wall_time_s"] = json!(wall.as_secs_f64());
            let mut body = serde_json::to_string_pretty(&side).expect("manifest serializes");
            body.push('\n');
            fs::write(format!("{path}.manifest.json"), body).map_err(io_err)?;
        }
        None => {
            io::stdout().write_all(text.as_bytes()).map_err(io_err)?;
        }
    }
    eprintln!("qfield {command}: {:.3} s", wall.as_secs_f64());
    Ok(())
}
