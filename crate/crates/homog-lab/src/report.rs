//! Report plumbing: artifact directories, JSON/CSV/binary writers, gated
//! check bookkeeping, and the run manifest.
//!
//! Every JSON report is wrapped as { "config": <resolved config>, "report":
//! ... } so each artifact is self-describing. The manifest ties the run
//! together: experiment id (config content hash), wall time, the artifact
//! list, and the verdict of every gated check.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{io as field_io, Field};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Verdict of one named check. Exploratory checks are reported identically
/// but never affect the exit status.
#[derive(Clone, Debug, Serialize)]
pub struct GateCheck {
    pub name: String,
    pub pass: bool,
    pub gated: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub experiment_id: String,
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub checks: Vec<GateCheck>,
    pub all_gated_pass: bool,
}

/// Collects artifacts and checks for one run, then writes the manifest.
pub struct ReportWriter {
    dir: PathBuf,
    config: ExperimentConfig,
    config_json: serde_json::Value,
    artifacts: Vec<String>,
    checks: Vec<GateCheck>,
    started: Instant,
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    config: &'a serde_json::Value,
    report: &'a T,
}

impl ReportWriter {
    pub fn new(dir: &Path, config: &ExperimentConfig) -> Result<ReportWriter> {
        std::fs::create_dir_all(dir)?;
        let config_json = serde_json::to_value(config)
            .map_err(|e| Error::Config(format!("config echo failed: {e}")))?;
        Ok(ReportWriter {
            dir: dir.to_path_buf(),
            config: config.clone(),
            config_json,
            artifacts: Vec::new(),
            checks: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Record a check. `name` listed under gates.exploratory downgrades it
    /// to exploratory regardless of the caller's intent.
    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        let exploratory = self.config.gates.exploratory.iter().any(|e| e == name);
        self.checks.push(GateCheck {
            name: name.to_string(),
            pass,
            gated: !exploratory,
            detail: detail.into(),
        });
    }

    pub fn all_gated_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.gated)
    }

    fn track(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    /// Write a JSON report (with the resolved config echoed) if the config
    /// asks for JSON output.
    pub fn write_json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<()> {
        if !self.config.wants("json") {
            return Ok(());
        }
        let wrapped = Wrapped { config: &self.config_json, report };
        let text = serde_json::to_string_pretty(&wrapped)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        self.track(name);
        Ok(())
    }

    /// Write a CSV artifact through a caller-supplied serializer.
    pub fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        if !self.config.wants("csv") {
            return Ok(());
        }
        let mut buf = Vec::new();
        f(&mut buf)?;
        std::fs::write(self.dir.join(name), buf)?;
        self.track(name);
        Ok(())
    }

    /// CSV from uniform string records (header + rows).
    pub fn write_csv_records(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<()> {
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        self.write_csv(name, |buf| {
            let mut wr = csv::Writer::from_writer(buf);
            wr.write_record(&header).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            for row in rows {
                wr.write_record(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            wr.flush()?;
            Ok(())
        })
    }

    /// Dump a field in the documented binary layout when binary output is
    /// requested.
    pub fn write_field(&mut self, name: &str, f: &Field) -> Result<()> {
        if !self.config.wants("binary") {
            return Ok(());
        }
        field_io::write_field_binary(&self.dir.join(name), f)?;
        self.track(name);
        Ok(())
    }

    /// Write the manifest and hand back the verdict.
    pub fn finish(mut self) -> Result<Manifest> {
        let manifest = Manifest {
            experiment_id: self.config.experiment_id(),
            command: self.config.command.name().to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: std::mem::take(&mut self.artifacts),
            checks: std::mem::take(&mut self.checks),
            all_gated_pass: true,
        };
        let manifest = Manifest {
            all_gated_pass: manifest.checks.iter().all(|c| c.pass || !c.gated),
            ..manifest
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(manifest)
    }
}

/// 17-significant-digit float formatting shared by all CSV writers, enough
/// to round-trip f64 so reruns are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn sample_config() -> ExperimentConfig {
        parse_config(
            r#"
            command = "cell"
            [gates]
            exploratory = ["soft-check"]
            [operator]
            family = "p-laplace"
            [operator.params]
            p = 3.0
            mu = 0.0
            [operator.coefficient]
            kind = "constant"
            value = 1.0
        "#,
        )
        .unwrap()
    }

    #[test]
    fn manifest_records_checks_and_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = sample_config();
        let mut w = ReportWriter::new(tmp.path(), &cfg).unwrap();
        w.write_json("report.json", &serde_json::json!({"x": 1})).unwrap();
        w.write_csv_records("rows.csv", &["a", "b"], &[vec!["1".into(), "2".into()]]).unwrap();
        w.check("hard-check", true, "ok");
        w.check("soft-check", false, "exploratory failure must not gate");
        assert!(w.all_gated_pass());
        let m = w.finish().unwrap();
        assert!(m.all_gated_pass);
        assert_eq!(m.artifacts, vec!["report.json", "rows.csv"]);
        assert!(tmp.path().join("manifest.json").exists());
        // the JSON report carries the config echo
        let text = std::fs::read_to_string(tmp.path().join("report.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["config"]["command"], "cell");
        assert_eq!(v["report"]["x"], 1);
    }

    #[test]
    fn gated_failure_flips_verdict() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = sample_config();
        let mut w = ReportWriter::new(tmp.path(), &cfg).unwrap();
        w.check("hard-check", false, "boom");
        assert!(!w.all_gated_pass());
        let m = w.finish().unwrap();
        assert!(!m.all_gated_pass);
    }

    #[test]
    fn binary_format_is_opt_in() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = sample_config();
        let mesh = std::sync::Arc::new(
            crate::grid::DirichletMesh::new(
                crate::grid::DomainShape::Square { center: [0.5, 0.5], half_width: 0.5 },
                4,
            )
            .unwrap()
            .mesh,
        );
        let f = Field::nodal_scalar(&mesh, |p| p[0]);
        let mut w = ReportWriter::new(tmp.path(), &cfg).unwrap();
        w.write_field("u.hlf", &f).unwrap();
        let m = w.finish().unwrap();
        assert!(m.artifacts.is_empty());
        assert!(!tmp.path().join("u.hlf").exists());
    }
}
