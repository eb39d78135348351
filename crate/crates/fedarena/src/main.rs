//! Command-line front end: run one experiment, run a preset suite, validate
//! a config, or sanity-check the gradients.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedarena::config::parse_config;
use fedarena::data::synth_classification;
use fedarena::model::{init_model, numeric_gradient_check, ModelSpec};
use fedarena::runner::{execute_run, summary_line, RunnerError};
use fedarena::suite::run_suite;

#[derive(Parser)]
#[command(
    name = "fedarena",
    version,
    about = "Deterministic federated-learning simulator with reputation-weighted aggregation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment; writes rounds.csv, report.json, config_echo.toml.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Output directory (default: the config's out_dir, else out/<stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named batch of embedded presets.
    Suite {
        /// One of: quick, splits, freerider, targeted, untargeted,
        /// byzantine-majority.
        name: String,
        /// Root directory for the per-preset output directories.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a config, printing the resolved form.
    Validate {
        config: PathBuf,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out, seed } => run_cmd(&config, out.as_deref(), seed),
        Cmd::Suite { name, out } => suite_cmd(&name, &out),
        Cmd::Validate { config } => validate_cmd(&config),
        Cmd::Gradcheck => return gradcheck_cmd(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run_cmd(
    config: &std::path::Path,
    out: Option<&std::path::Path>,
    seed: Option<u64>,
) -> Result<(), RunnerError> {
    let name = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let (report, out_dir) = execute_run(config, out, seed)?;
    println!("{}", summary_line(&name, &report));
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn suite_cmd(name: &str, out: &std::path::Path) -> Result<(), RunnerError> {
    let results = run_suite(name, &out.join(name))?;
    println!("suite {name}: {} runs complete", results.len());
    Ok(())
}

fn validate_cmd(config: &std::path::Path) -> Result<(), RunnerError> {
    let resolved = parse_config(config)?;
    print!(
        "{}",
        toml::to_string_pretty(&resolved.config).expect("resolved config serializes")
    );
    eprintln!(
        "ok: {} participants, {} rounds",
        resolved.total_participants, resolved.config.rounds
    );
    Ok(())
}

/// Exit 0 when both architectures agree with finite differences, 2 otherwise.
fn gradcheck_cmd() -> ExitCode {
    const TOLERANCE: f64 = 1e-5;
    let cases = [
        ("logreg 100->10", ModelSpec::new(100, 0, 10)),
        ("mlp 64-32-10", ModelSpec::new(64, 32, 10)),
    ];
    let mut ok = true;
    for (name, spec) in cases {
        let (train, _) = synth_classification(spec.num_classes, spec.input_dim, 40, 7);
        let shard = train.select(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let m = init_model(spec, 11);
        let err = numeric_gradient_check(&m, &shard, 1e-5);
        let verdict = if err < TOLERANCE { "ok" } else { "FAIL" };
        println!("{name}: max relative error {err:.3e} [{verdict}]");
        ok &= err < TOLERANCE;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
