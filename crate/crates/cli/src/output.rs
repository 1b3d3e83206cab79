//! Output directory resolution, CSV writers and run manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use gridrl_core::train::EvalReport;
use gridrl_core::{MetricsRecord, Scenario};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Environment variable that overrides the scenario output directory.
pub const OUT_DIR_ENV: &str = "GRIDRL_OUT_DIR";

pub const EPISODES_HEADER: [&str; 8] = [
    "controller",
    "episode",
    "halting",
    "queue_time",
    "queue_length",
    "speed",
    "reward",
    "vehicles",
];

pub const VERIFY_HEADER: [&str; 5] = ["check", "value", "tolerance", "bound", "passed"];

pub const COMM_HEADER: [&str; 7] = [
    "link",
    "mean_ms",
    "mad_ms",
    "p95_ms",
    "p99_ms",
    "max_ms",
    "within_step",
];

pub fn out_dir(scenario: Option<&Scenario>) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => scenario.map_or_else(|| PathBuf::from("runs"), |s| s.output_dir.clone()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub gridrl: &'static str,
    pub checkpoint_format: u16,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub scenario_path: Option<String>,
    /// SHA-256 of the resolved configuration as compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: serde_json::Value,
    /// Uncalibrated settings left at their defaults.
    pub defaulted: Vec<&'static str>,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    pub started_unix: u64,
    pub wall_seconds: f64,
}

/// Collects what a run produced and writes its manifest.
pub struct Run {
    pub tag: String,
    pub dir: PathBuf,
    scenario_path: Option<String>,
    config: serde_json::Value,
    seed: u64,
    defaulted: Vec<&'static str>,
    outputs: Vec<String>,
    started_unix: u64,
    started: Instant,
}

impl Run {
    pub fn start(
        tag: &str,
        dir: PathBuf,
        scenario_path: Option<&Path>,
        config: serde_json::Value,
        seed: u64,
        defaulted: Vec<&'static str>,
    ) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir)?;
        Ok(Run {
            tag: tag.to_string(),
            dir,
            scenario_path: scenario_path.map(|p| p.display().to_string()),
            config,
            seed,
            defaulted,
            outputs: Vec::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            started: Instant::now(),
        })
    }

    /// Path of an output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let file = format!("{}_{name}", self.tag);
        self.outputs.push(file.clone());
        self.dir.join(file)
    }

    pub fn finish(self, summary: serde_json::Value) -> Result<PathBuf, Failure> {
        let config_text = serde_json::to_string(&self.config)?;
        let manifest = Manifest {
            command: &self.tag,
            scenario_path: self.scenario_path.clone(),
            config_hash: sha256_hex(config_text.as_bytes()),
            seed: self.seed,
            versions: Versions {
                gridrl: env!("CARGO_PKG_VERSION"),
                checkpoint_format: gridrl_core::approx::checkpoint::VERSION,
            },
            config: self.config.clone(),
            defaulted: self.defaulted.clone(),
            outputs: self.outputs.clone(),
            summary,
            started_unix: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(format!("{}_manifest.json", self.tag));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

pub fn write_episodes(path: &Path, report: &EvalReport) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPISODES_HEADER)?;
    for (i, e) in report.episodes.iter().enumerate() {
        let values = [
            e.halting,
            e.queue_time,
            e.queue_length,
            e.speed,
            e.reward,
            e.vehicles,
        ];
        let mut row = vec![report.controller.clone(), i.to_string()];
        row.extend(values.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step metrics writer with a leading episode column.
pub struct MetricsWriter {
    w: csv::Writer<std::fs::File>,
    error: Option<csv::Error>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["episode"];
        header.extend(MetricsRecord::CSV_HEADER);
        w.write_record(&header)?;
        Ok(MetricsWriter { w, error: None })
    }

    pub fn push(&mut self, episode: u64, m: &MetricsRecord) {
        if self.error.is_some() {
            return;
        }
        let mut row = vec![episode.to_string()];
        row.extend(m.csv_row());
        if let Err(e) = self.w.write_record(&row) {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        if let Some(e) = self.error {
            return Err(e.into());
        }
        self.w.flush()?;
        Ok(())
    }
}
