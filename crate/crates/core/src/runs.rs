//! Run configuration, run-directory layout and the cross-run report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendKind, LiveConfig};
use crate::env::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::metrics::{metrics_csv, MetricsRow};
use crate::multistage::{write_trajectories, Trajectory};
use crate::playout::PlayOptions;
use crate::psro::PsroResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub play: PlayOptions,
    pub psro: crate::psro::PsroConfig,
    pub backend: BackendKind,
    pub live: LiveConfig,
    /// Episodes per multistage run.
    pub episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvSpec::new(EnvId::Rel),
            play: PlayOptions::default(),
            psro: crate::psro::PsroConfig::default(),
            backend: BackendKind::Mock,
            live: LiveConfig::default(),
            episodes: 10,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::domain(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.env.lae {
            p.validate()?;
        }
        if self.play.samples == 0 {
            return Err(Error::domain("samples must be at least 1"));
        }
        if self.play.horizon == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        if !(self.play.penalty_coef >= 0.0) {
            return Err(Error::domain("penalty coefficient must be non-negative"));
        }
        if self.play.setting == crate::playout::Setting::S3 && self.play.horizon < 2 {
            return Err(Error::domain("the repeated setting needs a horizon of at least 2"));
        }
        self.psro.budget.validate()?;
        if self.psro.prune_k == Some(0) {
            return Err(Error::domain("prune size must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(Error::domain("episodes must be at least 1"));
        }
        Ok(())
    }
}

/// What a run directory's `config.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub backend: String,
    pub config: RunConfig,
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&dir.join("config.json"), manifest)
}

pub fn exploitability_csv(result: &PsroResult) -> String {
    let mut out = String::from("iteration,value\n");
    for r in &result.iterations {
        out.push_str(&format!("{},{}\n", r.iteration, r.exploitability));
    }
    out
}

/// Writes (or refreshes) the outputs of a PSRO run.
pub fn write_psro_outputs(dir: &Path, result: &PsroResult) -> Result<()> {
    write_json(
        &dir.join("tensor.json"),
        &serde_json::json!({
            "sender": result.tensor.sender,
            "receiver": result.tensor.receiver,
            "penalty": result.tensor.penalty,
            "meta": result.meta,
            "cells": result.tensor.cells,
        }),
    )?;
    write_json(
        &dir.join("pools.json"),
        &serde_json::json!({
            "sender": result.sender_pool,
            "receiver": result.receiver_pool,
            "termination": result.termination,
            "iterations": result.iterations,
        }),
    )?;
    write_atomic(&dir.join("exploitability.csv"), exploitability_csv(result).as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&result.metrics()).as_bytes())?;
    if !result.search_trace.is_empty() {
        let mut lines = String::new();
        for t in &result.search_trace {
            lines.push_str(&serde_json::to_string(t)?);
            lines.push('\n');
        }
        write_atomic(&dir.join("search_trace.jsonl"), lines.as_bytes())?;
    }
    Ok(())
}

pub fn write_multistage_outputs(dir: &Path, trajectories: &[Trajectory], metrics: &[MetricsRow]) -> Result<Vec<PathBuf>> {
    let paths = write_trajectories(&dir.join("trajectories"), trajectories)?;
    write_atomic(&dir.join("metrics.csv"), metrics_csv(metrics).as_bytes())?;
    Ok(paths)
}

pub const REPORT_HEADER: &str =
    "run,command,env,setting,iterations,final_exploitability,sender_reward,receiver_reward,lie_prob,honest_prob";

fn last_data_line(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).last().map(str::to_owned)
}

/// One line per run directory under `root` (sorted by name), summarizing its last metrics row.
pub fn report(root: &Path) -> Result<String> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.json").is_file())
        .collect();
    if root.join("config.json").is_file() {
        dirs.push(root.to_path_buf());
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::domain(format!("no runs found under {}", root.display())));
    }
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for dir in dirs {
        let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or(".").to_owned();
        let expl_lines = fs::read_to_string(dir.join("exploitability.csv")).unwrap_or_default();
        let iterations = expl_lines.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
        let expl = last_data_line(&dir.join("exploitability.csv"))
            .and_then(|l| l.split(',').nth(1).map(str::to_owned))
            .unwrap_or_default();
        let metrics = last_data_line(&dir.join("metrics.csv"))
            .map(|l| l.splitn(2, ',').nth(1).unwrap_or("").to_owned())
            .unwrap_or_else(|| ",,,".into());
        out.push_str(&format!(
            "{name},{},{},{},{iterations},{expl},{metrics}\n",
            manifest.command,
            manifest.config.env.id,
            serde_json::to_value(manifest.config.play.setting)?.as_str().unwrap_or("")
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"play": {"samples": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"env": {"id": "lae", "lae": {"miles": 0, "officers": 1, "speed_value": 1.0, "fine": 1.0}}}"#).is_err());
        assert!(RunConfig::from_json("[").is_err());
    }

    #[test]
    fn empty_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(Error::Domain(_))));
    }
}
