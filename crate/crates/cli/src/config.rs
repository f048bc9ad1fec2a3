use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparseproj::additive::{DEFAULT_BASIS_COUNT, DEFAULT_DEGREE};
use sparseproj::pipeline::{LambdaChoice, PipelineConfig};
use sparseproj::posterior::SigmaMode;
use sparseproj::projection::{PenaltyKind, DEFAULT_FOLDS, DEFAULT_SCAD_TAU};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Simulate,
    Additive,
    Debias,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate => "simulate",
            Command::Additive => "additive",
            Command::Debias => "debias",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Everything needed to reproduce a run. A report embeds its config, so
/// feeding a report back through `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub study: Option<PathBuf>,
    pub penalty: PenaltyKind,
    pub lambda: LambdaChoice,
    pub tau: f64,
    pub a_n: Option<f64>,
    pub sigma: SigmaMode,
    pub draws: usize,
    pub seed: u64,
    pub folds: usize,
    pub alpha: f64,
    pub standardize: bool,
    pub basis_count: usize,
    pub degree: usize,
    /// 1-based groups for `diagnose`; the MPM set of a fit when absent.
    pub support: Option<Vec<usize>>,
    pub save_draws: bool,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn new(command: Command, seed: u64, out: PathBuf) -> Self {
        Self {
            command,
            x: None,
            y: None,
            groups: None,
            study: None,
            penalty: PenaltyKind::GroupLasso,
            lambda: LambdaChoice::Cv,
            tau: DEFAULT_SCAD_TAU,
            a_n: None,
            sigma: SigmaMode::Auto,
            draws: 200,
            seed,
            folds: DEFAULT_FOLDS,
            alpha: 0.05,
            standardize: true,
            basis_count: DEFAULT_BASIS_COUNT,
            degree: DEFAULT_DEGREE,
            support: None,
            save_draws: false,
            out,
            jobs: None,
        }
    }

    /// Reads a config, or the config embedded in a report.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let needs: &[(&str, &Option<PathBuf>)] = match self.command {
            Command::Fit | Command::Debias => &[("--x", &self.x), ("--y", &self.y), ("--groups", &self.groups)],
            Command::Additive => &[("--x", &self.x), ("--y", &self.y)],
            Command::Diagnose if self.support.is_some() => &[("--x", &self.x), ("--groups", &self.groups)],
            Command::Diagnose => &[("--x", &self.x), ("--y", &self.y), ("--groups", &self.groups)],
            Command::Simulate => &[("--study", &self.study)],
        };
        for (flag, path) in needs {
            match path {
                None => return Err(CliError::usage(format!("missing required flag {flag}"))),
                Some(p) if !p.is_file() => {
                    return Err(CliError::input(format!("{flag}: cannot read '{}'", p.display())))
                }
                Some(_) => {}
            }
        }
        if self.draws == 0 {
            return Err(CliError::usage("--draws must be at least 1"));
        }
        if self.folds < 2 {
            return Err(CliError::usage("--folds must be at least 2"));
        }
        if !(self.tau > 2.0) {
            return Err(CliError::usage("--tau must exceed 2"));
        }
        if let Some(a) = self.a_n {
            if !(a > 0.0 && a.is_finite()) {
                return Err(CliError::usage("--an must be positive"));
            }
        }
        if let SigmaMode::Fixed(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::usage("--sigma must be 'auto' or a positive number"));
            }
        }
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CliError::usage("--lambda must be 'cv' or a non-negative number"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::usage("--alpha must lie in (0, 1)"));
        }
        if self.basis_count < self.degree + 1 {
            return Err(CliError::usage(format!(
                "--basis-count {} is below degree + 1 = {}",
                self.basis_count,
                self.degree + 1
            )));
        }
        if self.command == Command::Debias && self.penalty != PenaltyKind::GroupLasso {
            return Err(CliError::usage("debias requires --penalty gl"));
        }
        if let Some(s) = &self.support {
            if s.is_empty() || s.contains(&0) {
                return Err(CliError::usage("--support takes 1-based group indices"));
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            penalty: self.penalty,
            lambda: self.lambda,
            tau: self.tau,
            a_n: self.a_n,
            sigma: self.sigma,
            draws: self.draws,
            seed: self.seed,
            folds: self.folds,
            standardize: self.standardize,
            debias: self.command == Command::Debias,
            alpha: self.alpha,
            ..PipelineConfig::default()
        }
    }

    /// Hash of the settings that determine the results; output location and
    /// worker count are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.jobs = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
