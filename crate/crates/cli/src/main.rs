use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparseproj::pipeline::LambdaChoice;
use sparseproj::posterior::SigmaMode;
use sparseproj::projection::PenaltyKind;
use sparseproj_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "sparseproj", version, about = "Sparse projection posteriors for grouped regression")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Posterior, projection and credible intervals for a grouped design.
    Fit(RunArgs),
    /// Replicated simulation study from a study config JSON.
    Simulate(RunArgs),
    /// B-spline additive model on raw covariates.
    Additive(RunArgs),
    /// Like `fit`, plus debiased group LASSO intervals.
    Debias(RunArgs),
    /// Restricted eigenvalue and irrepresentability statistics.
    Diagnose(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Gl,
    Gscad,
    Agl,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Gl => PenaltyKind::GroupLasso,
            PenaltyArg::Gscad => PenaltyKind::GroupScad,
            PenaltyArg::Agl => PenaltyKind::AdaptiveGroupLasso,
        }
    }
}

fn parse_lambda(s: &str) -> Result<LambdaChoice, String> {
    match s {
        "cv" => Ok(LambdaChoice::Cv),
        _ => s.parse().map(LambdaChoice::Fixed).map_err(|_| format!("expected 'cv' or a number, got '{s}'")),
    }
}

fn parse_sigma(s: &str) -> Result<SigmaMode, String> {
    match s {
        "auto" => Ok(SigmaMode::Auto),
        _ => s.parse().map(SigmaMode::Fixed).map_err(|_| format!("expected 'auto' or a number, got '{s}'")),
    }
}

#[derive(Args)]
struct RunArgs {
    /// Re-run from a config or report JSON; other flags except --out and
    /// --jobs are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Design (or raw covariate) CSV with a header row.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Response CSV with a header row and one column.
    #[arg(long)]
    y: Option<PathBuf>,
    /// Group spec: JSON list of {name, start, end}, 1-based inclusive.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Study config JSON (simulate).
    #[arg(long)]
    study: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gl")]
    penalty: PenaltyArg,
    /// 'cv' or a fixed value.
    #[arg(long, default_value = "cv", value_parser = parse_lambda)]
    lambda: LambdaChoice,
    /// SCAD concavity parameter.
    #[arg(long, default_value_t = sparseproj::projection::DEFAULT_SCAD_TAU)]
    tau: f64,
    /// Prior precision; defaults to 1/n.
    #[arg(long = "an")]
    a_n: Option<f64>,
    /// 'auto' or a fixed noise level.
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: SigmaMode,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    /// Master seed; required unless --config is given.
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    #[arg(long, default_value_t = sparseproj::projection::DEFAULT_FOLDS)]
    folds: usize,
    /// Credible level is 1 − alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fit on the raw column scale.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = sparseproj::additive::DEFAULT_BASIS_COUNT)]
    basis_count: usize,
    #[arg(long, default_value_t = sparseproj::additive::DEFAULT_DEGREE)]
    degree: usize,
    /// Comma-separated 1-based groups for diagnose.
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<usize>>,
    /// Also write posterior and projected draws.
    #[arg(long)]
    save_draws: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the concurrent stages.
    #[arg(long)]
    jobs: Option<usize>,
}

impl RunArgs {
    fn into_config(self, command: Command) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.config {
            let mut c = RunConfig::load(path)?;
            if c.command != command {
                return Err(CliError::usage(format!(
                    "{} holds a '{}' run, not '{}'",
                    path.display(),
                    c.command.name(),
                    command.name()
                )));
            }
            c.out = self.out;
            c.jobs = self.jobs;
            return Ok(c);
        }
        let mut c = RunConfig::new(command, self.seed.expect("clap enforces --seed"), self.out);
        c.x = self.x;
        c.y = self.y;
        c.groups = self.groups;
        c.study = self.study;
        c.penalty = self.penalty.into();
        c.lambda = self.lambda;
        c.tau = self.tau;
        c.a_n = self.a_n;
        c.sigma = self.sigma;
        c.draws = self.draws;
        c.folds = self.folds;
        c.alpha = self.alpha;
        c.standardize = !self.no_standardize;
        c.basis_count = self.basis_count;
        c.degree = self.degree;
        c.support = self.support;
        c.save_draws = self.save_draws;
        c.jobs = self.jobs;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSEPROJ_LOG", "warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Fit(a) => (Command::Fit, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Additive(a) => (Command::Additive, a),
        Sub::Debias(a) => (Command::Debias, a),
        Sub::Diagnose(a) => (Command::Diagnose, a),
    };
    let result = args.into_config(command).and_then(|config| {
        if let Some(jobs) = config.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build_global()
                .map_err(|e| CliError::usage(format!("--jobs: {e}")))?;
        }
        run(&config)
    });
    match result {
        Ok(outcome) => {
            let r = &outcome.report;
            let selected: Vec<&str> = r.selected_groups.iter().map(|g| g.name.as_str()).collect();
            println!("{}: wrote {} files to {}", command.name(), r.artifacts.len(), r.config.out.display());
            if !selected.is_empty() {
                println!("selected groups: {}", selected.join(", "));
            }
            if let Some(f) = &outcome.failure {
                eprintln!("error: {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
