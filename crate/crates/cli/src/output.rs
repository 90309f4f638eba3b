use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// `ds.json` becomes `ds.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Writes `<primary>.manifest.json` with the resolved configuration, so a
/// run can be replayed from the manifest alone.
pub fn manifest<C: Serialize>(command: &str, config: &C, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let primary = outputs.first().expect("at least one output");
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write(&sibling(primary, "manifest.json"), &to_json(&m)?)
}

/// A CSV table with a header row.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[String]) -> Self {
        Self { text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn cell(v: f64) -> String {
    v.to_string()
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}
