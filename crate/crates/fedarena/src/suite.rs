//! Named experiment batches built from the presets embedded in the binary.
//!
//! Each preset is a complete config file; a suite is a list of preset names
//! run back to back into sibling output directories, printing one summary
//! line per run. `quick` is a synthetic smoke batch; the rest train on MNIST
//! and take minutes per run.

use std::path::{Path, PathBuf};

use crate::config::parse_config_str;
use crate::metrics::ExperimentReport;
use crate::runner::{summary_line, write_outputs, RunnerError};

macro_rules! preset {
    ($name:literal) => {
        ($name, include_str!(concat!("../presets/", $name, ".toml")))
    };
}

pub const PRESETS: &[(&str, &str)] = &[
    preset!("quick-rffl-freerider"),
    preset!("quick-fedavg"),
    preset!("splits-uniform-rffl"),
    preset!("splits-uniform-fedavg"),
    preset!("splits-uniform-qffl"),
    preset!("splits-uniform-standalone"),
    preset!("splits-powerlaw-rffl"),
    preset!("splits-powerlaw-fedavg"),
    preset!("splits-powerlaw-qffl"),
    preset!("splits-powerlaw-standalone"),
    preset!("splits-classimbalance-rffl"),
    preset!("splits-classimbalance-fedavg"),
    preset!("splits-classimbalance-qffl"),
    preset!("splits-classimbalance-standalone"),
    preset!("freerider-p10-uniform-rffl"),
    preset!("freerider-p10-uniform-fedavg"),
    preset!("freerider-p10-uniform-qffl"),
    preset!("freerider-p10-uniform-multikrum"),
    preset!("freerider-p10-uniform-foolsgold"),
    preset!("freerider-p10-uniform-signsgd"),
    preset!("freerider-p10-uniform-median"),
    preset!("targeted-p10-uniform-rffl"),
    preset!("targeted-p10-uniform-fedavg"),
    preset!("targeted-p10-uniform-multikrum"),
    preset!("targeted-p10-uniform-foolsgold"),
    preset!("targeted-p10-uniform-signsgd"),
    preset!("targeted-p10-uniform-median"),
    preset!("untargeted-rescale-rffl"),
    preset!("untargeted-rescale-fedavg"),
    preset!("untargeted-rescale-qffl"),
    preset!("untargeted-rescale-multikrum"),
    preset!("untargeted-rescale-foolsgold"),
    preset!("untargeted-rescale-signsgd"),
    preset!("untargeted-rescale-median"),
    preset!("untargeted-sign-rffl"),
    preset!("untargeted-sign-fedavg"),
    preset!("untargeted-sign-qffl"),
    preset!("untargeted-sign-multikrum"),
    preset!("untargeted-sign-foolsgold"),
    preset!("untargeted-sign-signsgd"),
    preset!("untargeted-sign-median"),
    preset!("untargeted-invert-rffl"),
    preset!("untargeted-invert-fedavg"),
    preset!("untargeted-invert-qffl"),
    preset!("untargeted-invert-multikrum"),
    preset!("untargeted-invert-foolsgold"),
    preset!("untargeted-invert-signsgd"),
    preset!("untargeted-invert-median"),
    preset!("byzantine-flip110-rffl"),
    preset!("byzantine-flip110-fedavg"),
    preset!("byzantine-flip110-multikrum"),
    preset!("byzantine-flip110-foolsgold"),
    preset!("byzantine-flip110-signsgd"),
    preset!("byzantine-flip110-median"),
];

pub const SUITES: &[(&str, &[&str])] = &[
    (
        "quick",
        &["quick-rffl-freerider", "quick-fedavg"],
    ),
    (
        "splits",
        &[
            "splits-uniform-rffl",
            "splits-uniform-fedavg",
            "splits-uniform-qffl",
            "splits-uniform-standalone",
            "splits-powerlaw-rffl",
            "splits-powerlaw-fedavg",
            "splits-powerlaw-qffl",
            "splits-powerlaw-standalone",
            "splits-classimbalance-rffl",
            "splits-classimbalance-fedavg",
            "splits-classimbalance-qffl",
            "splits-classimbalance-standalone",
        ],
    ),
    (
        "freerider",
        &[
            "freerider-p10-uniform-rffl",
            "freerider-p10-uniform-fedavg",
            "freerider-p10-uniform-qffl",
            "freerider-p10-uniform-multikrum",
            "freerider-p10-uniform-foolsgold",
            "freerider-p10-uniform-signsgd",
            "freerider-p10-uniform-median",
        ],
    ),
    (
        "targeted",
        &[
            "targeted-p10-uniform-rffl",
            "targeted-p10-uniform-fedavg",
            "targeted-p10-uniform-multikrum",
            "targeted-p10-uniform-foolsgold",
            "targeted-p10-uniform-signsgd",
            "targeted-p10-uniform-median",
        ],
    ),
    (
        "untargeted",
        &[
            "untargeted-rescale-rffl",
            "untargeted-rescale-fedavg",
            "untargeted-rescale-qffl",
            "untargeted-rescale-multikrum",
            "untargeted-rescale-foolsgold",
            "untargeted-rescale-signsgd",
            "untargeted-rescale-median",
            "untargeted-sign-rffl",
            "untargeted-sign-fedavg",
            "untargeted-sign-qffl",
            "untargeted-sign-multikrum",
            "untargeted-sign-foolsgold",
            "untargeted-sign-signsgd",
            "untargeted-sign-median",
            "untargeted-invert-rffl",
            "untargeted-invert-fedavg",
            "untargeted-invert-qffl",
            "untargeted-invert-multikrum",
            "untargeted-invert-foolsgold",
            "untargeted-invert-signsgd",
            "untargeted-invert-median",
        ],
    ),
    (
        "byzantine-majority",
        &[
            "byzantine-flip110-rffl",
            "byzantine-flip110-fedavg",
            "byzantine-flip110-multikrum",
            "byzantine-flip110-foolsgold",
            "byzantine-flip110-signsgd",
            "byzantine-flip110-median",
        ],
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(n, _)| *n).collect()
}

/// Runs every preset in the suite, writing artifacts under
/// `<out_root>/<preset>/` and returning (name, report) pairs in order.
pub fn run_suite(
    name: &str,
    out_root: &Path,
) -> Result<Vec<(String, ExperimentReport)>, RunnerError> {
    let presets = SUITES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| *p)
        .ok_or_else(|| RunnerError::UnknownSuite {
            name: name.to_string(),
            known: suite_names().join(", "),
        })?;
    let mut out = Vec::with_capacity(presets.len());
    for &preset_name in presets {
        let text = preset(preset_name).expect("suites only reference embedded presets");
        let resolved = parse_config_str(text)?;
        let dir: PathBuf = out_root.join(preset_name);
        let report = crate::orchestrator::run_experiment(&resolved)?;
        write_outputs(&report, &dir)?;
        println!("{}", summary_line(preset_name, &report));
        out.push((preset_name.to_string(), report));
    }
    Ok(out)
}
