//! JSON report, CSV table and metadata sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A plot-ready table with a header row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// What a subcommand hands back for reporting.
#[derive(Debug, Default)]
pub struct Output {
    pub results: Value,
    pub warnings: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub table: Table,
}

#[derive(Serialize)]
struct Version {
    schema: u32,
    tool: &'static str,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    warnings: &'a [String],
}

#[derive(Serialize)]
struct Report<'a> {
    version: Version,
    config: &'a RunConfig,
    results: &'a Value,
    diagnostics: Diagnostics<'a>,
    seeds: &'a BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct Meta {
    created_unix_seconds: u64,
    argv: Vec<String>,
    threads: usize,
    report: PathBuf,
    csv: Option<PathBuf>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("cannot write {}: {e}", path.display()))
}

/// Everything that varies between identical runs goes to `<out>.meta.json`.
fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn render(cfg: &RunConfig, out: &Output) -> String {
    let report = Report {
        version: Version { schema: SCHEMA_VERSION, tool: env!("CARGO_PKG_VERSION") },
        config: cfg,
        results: &out.results,
        diagnostics: Diagnostics { warnings: &out.warnings },
        seeds: &out.seeds,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}

pub fn write(cfg: &RunConfig, out: Output) -> Result<(), CliError> {
    let text = render(cfg, &out);
    if let Some(path) = &cfg.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
        w.write_record(&out.table.header).map_err(|e| io_error(path, e))?;
        for row in &out.table.rows {
            w.write_record(row).map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| io_error(path, e))?;
            let meta = Meta {
                created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                argv: std::env::args().collect(),
                threads: rayon::current_num_threads(),
                report: path.clone(),
                csv: cfg.csv.clone(),
            };
            let mp = meta_path(path);
            let mut m = serde_json::to_string_pretty(&meta).expect("metadata serializes");
            m.push('\n');
            std::fs::write(&mp, m).map_err(|e| io_error(&mp, e))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
