//! File outputs for one experiment run.
//!
//! A run directory holds three artifacts: `rounds.csv` with one row per
//! participant per round it was active, `report.json` with the full-precision
//! report, and `config_echo.toml` with every default made explicit. The CSV
//! prints floats as `{:.5e}` (six significant digits) with LF line endings,
//! so identical runs produce byte-identical files on every platform.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{parse_config, ConfigError, Resolved};
use crate::metrics::ExperimentReport;
use crate::orchestrator::{run_experiment, RunError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: io::Error,
    },
    #[error("unknown suite '{name}' (known: {known})")]
    UnknownSuite { name: String, known: String },
}

impl RunnerError {
    /// CLI exit code: 1 for configuration mistakes, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunnerError::Config(_) | RunnerError::UnknownSuite { .. } => 1,
            RunnerError::Run(_) | RunnerError::Write { .. } => 2,
        }
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.5e}")
}

/// The per-round trace. Row count equals the sum of active participants
/// over rounds: a pruned participant's last row is its removal round, with
/// `removed` set and a zero reputation.
pub fn rounds_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("round,participant_id,reputation,accuracy,divergence,removed\n");
    for rec in &report.rounds {
        for (&id, &acc) in &rec.accuracy {
            let rep = rec.reputations.get(&id).copied().unwrap_or(0.0);
            let div = rec.divergence.get(&id).copied().unwrap_or(0.0);
            let removed = u8::from(rec.removed.contains(&id));
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.round,
                id,
                fmt_float(rep),
                fmt_float(acc),
                fmt_float(div),
                removed
            ));
        }
    }
    s
}

pub fn write_outputs(report: &ExperimentReport, out_dir: &Path) -> Result<(), RunnerError> {
    let write = |name: &str, content: String| -> Result<(), RunnerError> {
        let path = out_dir.join(name);
        fs::write(&path, content).map_err(|source| RunnerError::Write { path, source })
    };
    fs::create_dir_all(out_dir).map_err(|source| RunnerError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write("rounds.csv", rounds_csv(report))?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write("report.json", json)?;
    let echo = toml::to_string_pretty(&report.config).expect("config serializes");
    write("config_echo.toml", echo)?;
    Ok(())
}

/// Parses, optionally overrides the seed, runs, writes. Returns the report
/// and the directory the artifacts landed in.
pub fn execute_run(
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<(ExperimentReport, PathBuf), RunnerError> {
    let mut resolved = parse_config(config_path)?;
    if let Some(seed) = seed_override {
        resolved.config.seed = seed;
    }
    let out_dir = pick_out_dir(config_path, &resolved, out_override);
    let report = run_experiment(&resolved)?;
    write_outputs(&report, &out_dir)?;
    Ok((report, out_dir))
}

fn pick_out_dir(config_path: &Path, resolved: &Resolved, out_override: Option<&Path>) -> PathBuf {
    if let Some(dir) = out_override {
        return dir.to_path_buf();
    }
    if let Some(dir) = &resolved.config.out_dir {
        return dir.clone();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    PathBuf::from("out").join(stem)
}

/// One human-readable line summarizing a finished run.
pub fn summary_line(name: &str, report: &ExperimentReport) -> String {
    let fairness = report
        .fairness
        .map(|f| format!("{f:.2}"))
        .unwrap_or_else(|| "undefined".to_string());
    let attack = report
        .attack_success_rate
        .map(|a| format!(" attack_success={a:.4}"))
        .unwrap_or_default();
    format!(
        "{name}: rounds={} max_accuracy={:.4} fairness={fairness}{attack} removed={:?}",
        report.rounds.len(),
        report.max_accuracy,
        report.removed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn tiny_report() -> ExperimentReport {
        let resolved = parse_config_str(
            r#"
            seed = 3
            rounds = 2
            eval_subset = 0

            [dataset]
            kind = "synth"
            classes = 3
            dim = 6
            n = 400

            [split]
            scheme = "uniform"
            participants = 3
            total_examples = 120

            [model]
            hidden_dim = 0

            [aggregator]
            kind = "rffl"
            "#,
        )
        .unwrap();
        run_experiment(&resolved).unwrap()
    }

    #[test]
    fn csv_has_one_row_per_active_participant_per_round() {
        let report = tiny_report();
        let csv = rounds_csv(&report);
        let expected_rows: usize = report.rounds.iter().map(|r| r.accuracy.len()).sum();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "round,participant_id,reputation,accuracy,divergence,removed"
        );
        assert_eq!(lines.len(), expected_rows + 1);
        assert!(!csv.contains('\r'), "LF endings only");
        // 2 rounds x 3 participants, nobody removed.
        assert_eq!(expected_rows, 6);
        for line in &lines[1..] {
            assert!(line.ends_with(",0"), "nobody was removed: {line}");
        }
    }

    #[test]
    fn csv_floats_use_six_significant_digits() {
        assert_eq!(fmt_float(0.25), "2.50000e-1");
        assert_eq!(fmt_float(0.0), "0.00000e0");
        assert_eq!(fmt_float(-1.0 / 3.0), "-3.33333e-1");
        assert_eq!(fmt_float(12345.678), "1.23457e4");
    }

    #[test]
    fn outputs_land_in_the_run_directory() {
        let report = tiny_report();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&report, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert!(csv.starts_with("round,participant_id"));
        let json = fs::read_to_string(dir.path().join("report.json")).unwrap();
        let parsed: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.schema_version, report.schema_version);
        assert_eq!(parsed.rounds.len(), report.rounds.len());
        assert_eq!(parsed.fairness, report.fairness);
        let echo = fs::read_to_string(dir.path().join("config_echo.toml")).unwrap();
        // The echo must parse back as a valid config with defaults explicit.
        let back = parse_config_str(&echo).unwrap();
        assert_eq!(back.config.seed, 3);
        assert!(echo.contains("learning_rate"));
    }

    #[test]
    fn summary_line_reports_undefined_fairness() {
        let mut report = tiny_report();
        report.fairness = None;
        let line = summary_line("demo", &report);
        assert!(line.contains("fairness=undefined"), "{line}");
    }
}
