use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use lora_capacity::scenario::ScenarioConfig;

use crate::config::{OptimizeEcho, SimulationEcho};
use crate::CliError;

pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Serialize)]
struct Sections<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<&'a SimulationEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimize: Option<&'a OptimizeEcho>,
}

/// `#` comment block opening every table: command, free notes, then the
/// resolved config in file grammar.
pub fn header(
    out: &mut dyn Write,
    command: &str,
    notes: &[String],
    scenario: &ScenarioConfig,
    simulation: Option<&SimulationEcho>,
    optimize: Option<&OptimizeEcho>,
) -> Result<(), CliError> {
    writeln!(out, "# lora-capacity {} {command}", env!("CARGO_PKG_VERSION")).map_err(io_err)?;
    for n in notes {
        writeln!(out, "# {n}").map_err(io_err)?;
    }
    writeln!(out, "# resolved configuration:").map_err(io_err)?;
    let mut doc = scenario.to_toml_string();
    let extra = toml::to_string(&Sections {
        simulation,
        optimize,
    })
    .map_err(io_err)?;
    if !extra.trim().is_empty() {
        doc.push('\n');
        doc.push_str(&extra);
    }
    for line in doc.lines().filter(|l| !l.is_empty()) {
        writeln!(out, "#   {line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn csv_rows(out: &mut dyn Write, columns: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn json(out: &mut dyn Write, doc: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, doc).map_err(io_err)?;
    writeln!(out).map_err(io_err)
}
