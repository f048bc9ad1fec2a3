//! End-to-end fit: standardize, sample the ridge posterior, tune λ, project
//! every draw, select by median probability model and optionally debias.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias::{build_theta_hat, credible_intervals, CredibleBand, DebiasedEnsemble, NodewiseLambda, ThetaHat};
use crate::design::{orthonormalize_groups, GroupOrthonormalization, GroupedDesign};
use crate::error::{Error, Result, Stage};
use crate::posterior::{fit_ridge_posterior, sample_posterior, PosteriorDraws, RidgePosterior, SigmaMode};
use crate::projection::{
    adaptive_weights, cross_validate_lambda, fit_group_lasso, project_draws, CvResult, PenaltyConfig, PenaltyKind,
    ProjectionResult, SolverOptions, DEFAULT_FOLDS, DEFAULT_SCAD_TAU,
};
use crate::selection::{mpm_select, stack_rows, MpmSelection};

/// SplitMix64 finalizer; derives independent seeds from a master seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_DRAWS: u64 = 1;
const TAG_CV: u64 = 2;
const TAG_CV_INITIAL: u64 = 3;
const TAG_NODEWISE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaChoice {
    Cv,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub penalty: PenaltyKind,
    pub lambda: LambdaChoice,
    pub tau: f64,
    pub scad_group_scale: bool,
    /// Prior precision `a_n`; `None` means `1/n`.
    pub a_n: Option<f64>,
    pub sigma: SigmaMode,
    pub draws: usize,
    pub seed: u64,
    pub folds: usize,
    pub standardize: bool,
    /// Replace every group by an orthonormal basis of its column span before
    /// fitting; the penalty then acts on `‖X_kβ_k‖/√n`.
    pub orthonormal_groups: bool,
    /// Debias the projected draws (group LASSO only).
    pub debias: bool,
    pub nodewise: NodewiseLambda,
    pub alpha: f64,
    pub mpm_threshold: f64,
    pub solver: SolverOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyKind::GroupLasso,
            lambda: LambdaChoice::Cv,
            tau: DEFAULT_SCAD_TAU,
            scad_group_scale: true,
            a_n: None,
            sigma: SigmaMode::Auto,
            draws: 200,
            seed: 0,
            folds: DEFAULT_FOLDS,
            standardize: true,
            orthonormal_groups: false,
            debias: false,
            nodewise: NodewiseLambda::default(),
            alpha: 0.05,
            mpm_threshold: 0.5,
            solver: SolverOptions::default(),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub posterior: f64,
    pub tuning: f64,
    pub projection: f64,
    pub debias: f64,
}

#[derive(Debug, Clone)]
pub struct DebiasStage {
    pub theta: ThetaHat,
    pub ensemble: DebiasedEnsemble,
    /// Band on the original column scale.
    pub band: CredibleBand,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Design the posterior and projections live on (standardized and/or
    /// group-orthonormalized when requested).
    pub design: GroupedDesign,
    /// Column scales of the standardized design, before any group
    /// reparametrization.
    pub scales: DVector<f64>,
    pub reparametrization: Option<GroupOrthonormalization>,
    /// Centered response.
    pub y: DVector<f64>,
    pub y_mean: f64,
    pub posterior: RidgePosterior,
    pub draws: PosteriorDraws,
    pub penalty: PenaltyConfig,
    pub cv: Option<CvResult>,
    pub projected: Vec<ProjectionResult>,
    pub mpm: MpmSelection,
    /// MPM point estimate on the original column scale.
    pub estimate: DVector<f64>,
    /// Band of the projected draws on the original column scale.
    pub band: CredibleBand,
    pub debiased: Option<DebiasStage>,
    pub timings: StageTimings,
}

impl PipelineOutput {
    pub fn converged(&self) -> bool {
        self.projected.iter().all(|r| r.converged)
    }

    pub fn num_converged(&self) -> usize {
        self.projected.iter().filter(|r| r.converged).count()
    }

    /// Maps a coefficient vector of the working design to the original
    /// columns.
    pub fn to_original(&self, theta: &DVector<f64>) -> DVector<f64> {
        let beta = match &self.reparametrization {
            Some(r) => r.to_original(theta),
            None => theta.clone(),
        };
        beta.component_div(&self.scales)
    }

    /// Row-wise [`to_original`](Self::to_original) for a `D × q` matrix.
    pub fn rows_to_original(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut beta = match &self.reparametrization {
            Some(r) => r.rows_to_original(theta),
            None => theta.clone(),
        };
        for (j, mut col) in beta.column_iter_mut().enumerate() {
            col /= self.scales[j];
        }
        beta
    }

    /// `D × p` projected draws on the original columns.
    pub fn projected_original(&self) -> DMatrix<f64> {
        self.rows_to_original(&stack_rows(self.projected.iter().map(|r| &r.beta_star), self.design.p()))
    }
}

/// Tunes the penalty on `(X, y)`: cross-validation or a fixed λ; for the
/// adaptive map the group LASSO weights come first.
pub fn tune_penalty(
    design: &GroupedDesign,
    y: &DVector<f64>,
    config: &PipelineConfig,
) -> Result<(PenaltyConfig, Option<CvResult>)> {
    let base = PenaltyConfig {
        tau: config.tau,
        scad_group_scale: config.scad_group_scale,
        ..PenaltyConfig::group_lasso(1.0)
    };
    let template = match config.penalty {
        PenaltyKind::GroupLasso => base,
        PenaltyKind::GroupScad => PenaltyConfig { kind: PenaltyKind::GroupScad, ..base },
        PenaltyKind::AdaptiveGroupLasso => {
            let gl_lambda = match config.lambda {
                LambdaChoice::Fixed(l) => l,
                LambdaChoice::Cv => {
                    cross_validate_lambda(
                        design,
                        y,
                        &base,
                        config.folds,
                        None,
                        derive_seed(config.seed, TAG_CV_INITIAL),
                        &config.solver,
                    )?
                    .lambda
                }
            };
            let gl = fit_group_lasso(design, y, gl_lambda, &config.solver)?;
            let weights = adaptive_weights(&gl.beta_star, design.groups());
            if weights.iter().all(|w| w.is_infinite()) {
                return Err(Error::InvalidArgument("initial group LASSO fit selected no group".into()));
            }
            PenaltyConfig { kind: PenaltyKind::AdaptiveGroupLasso, weights: Some(weights), ..base }
        }
    };
    match config.lambda {
        LambdaChoice::Fixed(l) => Ok((template.with_lambda(l), None)),
        LambdaChoice::Cv => {
            let cv = cross_validate_lambda(
                design,
                y,
                &template,
                config.folds,
                None,
                derive_seed(config.seed, TAG_CV),
                &config.solver,
            )?;
            Ok((template.with_lambda(cv.lambda), Some(cv)))
        }
    }
}

pub fn run_pipeline(design: &GroupedDesign, y: &DVector<f64>, config: &PipelineConfig) -> Result<PipelineOutput> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch(format!("y has length {} but n = {}", y.len(), design.n())));
    }
    if config.debias && config.penalty != PenaltyKind::GroupLasso {
        return Err(Error::InvalidArgument("debiasing is defined for the group LASSO map only".into()));
    }
    let standardized = if config.standardize { design.standardize()? } else { design.clone() };
    let scales = standardized.column_scales().clone();
    let (design, reparametrization) = if config.orthonormal_groups {
        let r = orthonormalize_groups(&standardized)?;
        (r.design.clone(), Some(r))
    } else {
        (standardized, None)
    };
    let y_mean = y.mean();
    let y = y.add_scalar(-y_mean);
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let a_n = config.a_n.unwrap_or(1.0 / design.n() as f64);
    let posterior = fit_ridge_posterior(&design, &y, a_n, config.sigma).map_err(|e| e.at(Stage::Posterior))?;
    let draws = sample_posterior(&posterior, config.draws, derive_seed(config.seed, TAG_DRAWS))
        .map_err(|e| e.at(Stage::Posterior))?;
    timings.posterior = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (penalty, cv) = tune_penalty(&design, &y, config).map_err(|e| e.at(Stage::Tuning))?;
    timings.tuning = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let projected = project_draws(&design, &draws, &penalty, &config.solver).map_err(|e| e.at(Stage::Projection))?;
    timings.projection = clock.elapsed().as_secs_f64();

    let mpm = mpm_select(&projected, design.groups(), config.mpm_threshold)?;

    let theta = if config.debias {
        let clock = Instant::now();
        let nodewise = match &config.nodewise {
            NodewiseLambda::Cv { folds, grid_len, grid_ratio, seed, per_column } => NodewiseLambda::Cv {
                folds: *folds,
                grid_len: *grid_len,
                grid_ratio: *grid_ratio,
                seed: derive_seed(config.seed ^ seed, TAG_NODEWISE),
                per_column: *per_column,
            },
            other => other.clone(),
        };
        let theta = build_theta_hat(&design, &nodewise, &config.solver).map_err(|e| e.at(Stage::Debias))?;
        let ensemble =
            DebiasedEnsemble::new(&theta, &design, &draws, &projected, None).map_err(|e| e.at(Stage::Debias))?;
        timings.debias = clock.elapsed().as_secs_f64();
        Some((theta, ensemble))
    } else {
        None
    };

    let mut output = PipelineOutput {
        design,
        scales,
        reparametrization,
        y,
        y_mean,
        posterior,
        draws,
        penalty,
        cv,
        projected,
        mpm,
        estimate: DVector::zeros(0),
        band: CredibleBand { level: 0.0, lower: vec![], upper: vec![], lower_position: 0.0, upper_position: 0.0 },
        debiased: None,
        timings,
    };
    output.estimate = output.to_original(&output.mpm.estimate);
    output.band = credible_intervals(&output.projected_original(), config.alpha)?;
    if let Some((theta, ensemble)) = theta {
        let band = credible_intervals(&output.rows_to_original(&ensemble.beta_dd), config.alpha)?;
        output.debiased = Some(DebiasStage { theta, ensemble, band });
    }
    Ok(output)
}

