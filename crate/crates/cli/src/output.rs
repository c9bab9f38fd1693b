//! Output files shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use extremal::config::ExperimentConfig;
use extremal::harness::{digest_hex, write_json};

use crate::CliError;

/// Where and under which provenance a subcommand writes its CSV and JSON.
pub struct Ctx {
    pub command: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub dir: PathBuf,
    pub prefix: String,
    /// SHA-256 of the config, or of the resolved arguments when there is no config.
    pub digest: String,
}

impl Ctx {
    pub fn from_config(
        command: &'static str,
        cfg: &ExperimentConfig,
        seed: Option<u64>,
        workers: usize,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        let ctx = Ctx {
            command,
            seed: seed.unwrap_or(cfg.seed),
            workers,
            dir,
            prefix: cfg.output.prefix.clone().unwrap_or_default(),
            digest: cfg.digest(),
        };
        ctx.ensure_dir()?;
        Ok(ctx)
    }

    pub fn from_args<A: Serialize>(
        command: &'static str,
        args: &A,
        seed: Option<u64>,
        workers: usize,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let bytes = serde_json::to_vec(&json!({ "command": command, "args": args })).expect("arguments serialize");
        let ctx = Ctx {
            command,
            seed: seed.unwrap_or(0),
            workers,
            dir: out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out")),
            prefix: String::new(),
            digest: digest_hex(&bytes),
        };
        ctx.ensure_dir()?;
        Ok(ctx)
    }

    fn ensure_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Run(format!("cannot create {}: {e}", self.dir.display())))
    }

    pub fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}{}.{ext}", self.prefix, self.command))
    }

    /// Writes `<command>.json` with the digest and seed around `report`.
    pub fn write_report<T: Serialize>(&self, report: &T) -> Result<PathBuf, CliError> {
        let path = self.path("json");
        let doc = json!({
            "command": self.command,
            "config_digest": self.digest,
            "seed": self.seed,
            "report": report,
        });
        write_json(&path, &doc).map_err(|e| CliError::Run(e.to_string()))?;
        Ok(path)
    }

    /// Writes `<command>.csv` from a header and string rows.
    pub fn write_csv(&self, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.path("csv");
        let err = |e: csv::Error| CliError::Run(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Shortest round-trip formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
