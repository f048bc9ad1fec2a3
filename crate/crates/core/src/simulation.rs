//! Synthetic grouped-linear and additive scenarios, and the replicated
//! study harness.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{additive_recovery_error, fit_additive};
use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Error, Result};
use crate::pipeline::{derive_seed, run_pipeline, PipelineConfig, PipelineOutput};
use crate::posterior::SigmaMode;
use crate::projection::PenaltyKind;
use crate::selection::{compute_metrics, f1_score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearScenario {
    pub k: usize,
    pub n: usize,
    pub s0: usize,
    pub group_size: usize,
    /// Draw group sizes in `group_size ± 2` (summing to `k·group_size`)
    /// instead of using equal sizes.
    pub jitter_sizes: bool,
    pub signal_min: f64,
    pub signal_max: f64,
    pub sigma: f64,
    /// AR(1) correlation between neighbouring columns; 0 gives independence.
    pub ar1_rho: f64,
    pub seed: u64,
}

impl Default for LinearScenario {
    fn default() -> Self {
        Self {
            k: 50,
            n: 500,
            s0: 10,
            group_size: 10,
            jitter_sizes: false,
            signal_min: 0.5,
            signal_max: 2.0,
            sigma: 1.0,
            ar1_rho: 0.0,
            seed: 0,
        }
    }
}

impl LinearScenario {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.group_size == 0 {
            return Err(Error::InvalidArgument("scenario needs K ≥ 1 and a positive group size".into()));
        }
        if self.s0 > self.k {
            return Err(Error::InvalidArgument(format!("s0 = {} exceeds K = {}", self.s0, self.k)));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument("scenario needs n ≥ 2".into()));
        }
        if self.jitter_sizes && self.group_size < 3 {
            return Err(Error::InvalidArgument("jittered sizes need a mean group size of at least 3".into()));
        }
        if !(0.0 <= self.signal_min && self.signal_min <= self.signal_max) {
            return Err(Error::InvalidArgument("signal range must satisfy 0 ≤ min ≤ max".into()));
        }
        if !(self.sigma >= 0.0) || !(self.ar1_rho.abs() < 1.0) {
            return Err(Error::InvalidArgument("need σ ≥ 0 and |ρ| < 1".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.k * self.group_size
    }
}

#[derive(Debug, Clone)]
pub struct LinearData {
    /// Raw (unstandardized) design.
    pub design: GroupedDesign,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
    /// True support, 0-based groups.
    pub support: Vec<usize>,
}

fn group_sizes(scenario: &LinearScenario, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = scenario.group_size;
    if !scenario.jitter_sizes {
        return vec![m; scenario.k];
    }
    let (lo, hi) = (m - 2, m + 2);
    let mut sizes: Vec<usize> = (0..scenario.k).map(|_| rng.random_range(lo..=hi)).collect();
    let target = m * scenario.k;
    let mut total: usize = sizes.iter().sum();
    while total != target {
        let i = rng.random_range(0..scenario.k);
        if total > target && sizes[i] > lo {
            sizes[i] -= 1;
            total -= 1;
        } else if total < target && sizes[i] < hi {
            sizes[i] += 1;
            total += 1;
        }
    }
    sizes
}

/// Standard normal columns (optionally AR(1) across columns), support on
/// the first `s0` groups with coefficients uniform on `±[min, max]`, and
/// `y = Xβ⁰ + σε`.
pub fn generate_linear(scenario: &LinearScenario) -> Result<LinearData> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let sizes = group_sizes(scenario, &mut rng);
    let groups = GroupSpec::from_sizes(&sizes)?;
    let (n, p) = (scenario.n, groups.num_columns());

    let rho = scenario.ar1_rho;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = if j == 0 { z } else { rho * prev + innovation * z };
            x[(i, j)] = v;
            prev = v;
        }
    }

    let support: Vec<usize> = (0..scenario.s0).collect();
    let mut beta0 = DVector::zeros(p);
    for &k in &support {
        for j in groups.range(k) {
            let mag = rng.random_range(scenario.signal_min..=scenario.signal_max);
            beta0[j] = if rng.random::<bool>() { mag } else { -mag };
        }
    }
    let noise = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scenario.sigma * z
    });
    let y = &x * &beta0 + noise;
    Ok(LinearData { design: GroupedDesign::new(x, groups)?, y, beta0, support })
}

/// Number of active truth functions in the additive scenario.
pub const ADDITIVE_TRUTH_COMPONENTS: usize = 5;

/// Truth function `f⁰_k` for component `k` (0-based); zero beyond the fifth.
pub fn additive_truth(k: usize, x: f64) -> f64 {
    match k {
        0 => 3.0 * x.sin(),
        1 => 2.0 * x * x,
        2 => -1.5 * x,
        3 => x.exp(),
        4 => (x.abs() + 1.0).ln(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdditiveScenario {
    pub n: usize,
    pub k: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for AdditiveScenario {
    fn default() -> Self {
        Self { n: 100, k: 50, sigma: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdditiveData {
    /// `n × K` covariates, uniform on `[−2, 2]`.
    pub x_raw: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `n × K` truth evaluations `f⁰_k(x_{ik})` (zero columns beyond the
    /// fifth).
    pub f0: DMatrix<f64>,
    /// True support, 0-based variables.
    pub support: Vec<usize>,
}

impl AdditiveData {
    /// `f⁰(x_i) = Σ_k f⁰_k(x_{ik})`.
    pub fn f0_total(&self) -> DVector<f64> {
        DVector::from_iterator(self.f0.nrows(), self.f0.row_iter().map(|r| r.sum()))
    }
}

pub fn generate_additive(scenario: &AdditiveScenario) -> Result<AdditiveData> {
    if scenario.k < ADDITIVE_TRUTH_COMPONENTS {
        return Err(Error::InvalidArgument(format!(
            "additive scenario needs K ≥ {ADDITIVE_TRUTH_COMPONENTS}, got {}",
            scenario.k
        )));
    }
    if scenario.n < 2 || !(scenario.sigma >= 0.0) {
        return Err(Error::InvalidArgument("additive scenario needs n ≥ 2 and σ ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let (n, k) = (scenario.n, scenario.k);
    let mut x_raw = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            x_raw[(i, j)] = rng.random_range(-2.0..=2.0);
        }
    }
    let f0 = DMatrix::from_fn(n, k, |i, j| additive_truth(j, x_raw[(i, j)]));
    let y = DVector::from_fn(n, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        f0.row(i).sum() + scenario.sigma * z
    });
    Ok(AdditiveData { x_raw, y, f0, support: (0..ADDITIVE_TRUTH_COMPONENTS).collect() })
}

/// Methods compared by the study harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gl-p")]
    GlP,
    #[serde(rename = "gs-p")]
    GsP,
    #[serde(rename = "agl-p")]
    AglP,
    /// Debiased group LASSO projection.
    #[serde(rename = "debiased-p")]
    DebiasedP,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GlP => "gl-p",
            Method::GsP => "gs-p",
            Method::AglP => "agl-p",
            Method::DebiasedP => "debiased-p",
        }
    }

    fn penalty(self) -> PenaltyKind {
        match self {
            Method::GlP | Method::DebiasedP => PenaltyKind::GroupLasso,
            Method::GsP => PenaltyKind::GroupScad,
            Method::AglP => PenaltyKind::AdaptiveGroupLasso,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gl-p" | "gl" => Ok(Method::GlP),
            "gs-p" | "gscad" => Ok(Method::GsP),
            "agl-p" | "agl" => Ok(Method::AglP),
            "debiased-p" | "debiased" => Ok(Method::DebiasedP),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    Linear(LinearScenario),
    Additive {
        #[serde(default)]
        scenario: AdditiveScenario,
        #[serde(default = "default_basis_count")]
        basis_count: usize,
        #[serde(default = "default_degree")]
        degree: usize,
    },
}

fn default_basis_count() -> usize {
    crate::additive::DEFAULT_BASIS_COUNT
}

fn default_degree() -> usize {
    crate::additive::DEFAULT_DEGREE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScenario {
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<NamedScenario>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Template for every fit; the penalty, debias flag and seed are set
    /// per method and replicate.
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Use the scenario's noise level as the known σ instead of
    /// `pipeline.sigma`.
    pub known_sigma: bool,
    /// Replicate seeds are normally distinct; forcing them equal is only
    /// useful for checking the aggregation.
    #[serde(default)]
    pub identical_seeds: bool,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.scenarios.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("need at least one scenario and one method".into()));
        }
        for s in &self.scenarios {
            match &s.kind {
                ScenarioKind::Linear(l) => l.validate()?,
                ScenarioKind::Additive { scenario, .. } if scenario.k < ADDITIVE_TRUTH_COMPONENTS => {
                    return Err(Error::InvalidArgument(format!(
                        "scenario '{}': K = {} is below s0 = {ADDITIVE_TRUTH_COMPONENTS}",
                        s.name, scenario.k
                    )))
                }
                ScenarioKind::Additive { .. } => {}
            }
        }
        Ok(())
    }

    /// Seed of replicate `r` of scenario `s`.
    pub fn replicate_seed(&self, s: usize, r: usize) -> u64 {
        let r = if self.identical_seeds { 0 } else { r };
        derive_seed(self.master_seed, ((s as u64) << 32) | r as u64)
    }
}

/// Metrics of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub method: Method,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    /// Standard error of the mean over the replicates with a finite value.
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<AggregateRow>,
}

impl StudyResult {
    pub fn mean(&self, scenario: &str, method: Method, metric: &str) -> Option<f64> {
        self.row(scenario, method, metric).map(|r| r.mean)
    }

    pub fn row(&self, scenario: &str, method: Method, metric: &str) -> Option<&AggregateRow> {
        self.summary.iter().find(|r| r.scenario == scenario && r.method == method && r.metric == metric)
    }

    /// Long-format CSV: `scenario,method,replicate,metric,value`.
    pub fn write_records_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "scenario,method,replicate,metric,value")?;
        for r in &self.records {
            for (m, v) in &r.metrics {
                writeln!(out, "{},{},{},{},{}", r.scenario, r.method.name(), r.replicate + 1, m, v)?;
            }
        }
        Ok(())
    }

    /// CSV `scenario,method,metric,mean,se,count`.
    pub fn write_summary_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "scenario,method,metric,mean,se,count")?;
        for r in &self.summary {
            writeln!(out, "{},{},{},{},{},{}", r.scenario, r.method.name(), r.metric, r.mean, r.se, r.count)?;
        }
        Ok(())
    }
}

fn linear_records(
    scenario: &LinearScenario,
    config: &StudyConfig,
    seed: u64,
) -> Result<Vec<(Method, Vec<(String, f64)>)>> {
    let data = generate_linear(&LinearScenario { seed, ..scenario.clone() })?;
    let mut base = config.pipeline.clone();
    base.seed = seed;
    if config.known_sigma {
        base.sigma = SigmaMode::Fixed(scenario.sigma);
    }
    let mut out = Vec::new();
    let wants_debias = config.methods.contains(&Method::DebiasedP);
    let mut gl_run: Option<PipelineOutput> = None;
    for &method in &config.methods {
        let output = match method {
            Method::GlP | Method::DebiasedP if gl_run.is_some() => None,
            _ => {
                let cfg = PipelineConfig {
                    penalty: method.penalty(),
                    debias: method.penalty() == PenaltyKind::GroupLasso && wants_debias,
                    ..base.clone()
                };
                Some(run_pipeline(&data.design, &data.y, &cfg)?)
            }
        };
        let output = match (method.penalty(), output) {
            (PenaltyKind::GroupLasso, Some(o)) => gl_run.insert(o),
            (PenaltyKind::GroupLasso, None) => gl_run.as_mut().unwrap(),
            (_, Some(o)) => {
                out.push((method, linear_metrics(&o, &data, method)?));
                continue;
            }
            (_, None) => unreachable!("non-GL methods always run"),
        };
        out.push((method, linear_metrics(output, &data, method)?));
    }
    Ok(out)
}

fn linear_metrics(output: &PipelineOutput, data: &LinearData, method: Method) -> Result<Vec<(String, f64)>> {
    let report = match (method, &output.debiased) {
        (Method::DebiasedP, Some(stage)) => {
            let estimate = output.to_original(&stage.ensemble.mean());
            compute_metrics(&output.mpm.groups, &estimate, &data.beta0, &data.support, Some(&stage.band))?
        }
        (Method::DebiasedP, None) => return Err(Error::InvalidArgument("debiased stage missing".into())),
        _ => compute_metrics(&output.mpm.groups, &output.estimate, &data.beta0, &data.support, Some(&output.band))?,
    };
    let mut values: Vec<(String, f64)> = report.values().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    values.push(("lambda".into(), output.penalty.lambda));
    values.push(("converged".into(), output.num_converged() as f64 / output.projected.len() as f64));
    Ok(values)
}

fn additive_records(
    scenario: &AdditiveScenario,
    basis_count: usize,
    degree: usize,
    config: &StudyConfig,
    seed: u64,
) -> Result<Vec<(Method, Vec<(String, f64)>)>> {
    let data = generate_additive(&AdditiveScenario { seed, ..scenario.clone() })?;
    let f0 = data.f0_total();
    let f0 = f0.add_scalar(-f0.mean());
    let mut out = Vec::new();
    for &method in &config.methods {
        if method == Method::DebiasedP {
            continue;
        }
        let mut cfg = PipelineConfig { penalty: method.penalty(), debias: false, seed, ..config.pipeline.clone() };
        if config.known_sigma {
            cfg.sigma = SigmaMode::Fixed(scenario.sigma);
        }
        let run = fit_additive(&data.x_raw, &data.y, basis_count, degree, &cfg, 2)?;
        let selected = &run.output.mpm.groups;
        let tp = selected.iter().filter(|k| data.support.contains(k)).count();
        let (precision, recall, f1) = f1_score(tp, selected.len(), data.support.len());
        let error = additive_recovery_error(&run.recovery.total(), &f0)?;
        out.push((
            method,
            vec![
                ("tp".into(), tp as f64),
                ("fp".into(), (selected.len() - tp) as f64),
                ("precision".into(), precision),
                ("recall".into(), recall),
                ("f1".into(), f1),
                ("exact".into(), (selected == &data.support) as u8 as f64),
                ("recovery_error".into(), error.mean),
                ("lambda".into(), run.output.penalty.lambda),
                ("p".into(), run.expansion.design.p() as f64),
            ],
        ));
    }
    Ok(out)
}

/// Runs every scenario × replicate (concurrently) and aggregates means and
/// standard errors per scenario, method and metric.
pub fn run_replicated(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..config.scenarios.len()).flat_map(|s| (0..config.replicates).map(move |r| (s, r))).collect();
    let per_job: Vec<Vec<ReplicateRecord>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let seed = config.replicate_seed(s, r);
            let scenario = &config.scenarios[s];
            let rows = match &scenario.kind {
                ScenarioKind::Linear(l) => linear_records(l, config, seed),
                ScenarioKind::Additive { scenario: a, basis_count, degree } => {
                    additive_records(a, *basis_count, *degree, config, seed)
                }
            }
            .map_err(|e| Error::Replicate { index: r + 1, source: Box::new(e) })?;
            Ok(rows
                .into_iter()
                .map(|(method, metrics)| ReplicateRecord {
                    scenario: scenario.name.clone(),
                    method,
                    replicate: r,
                    seed,
                    metrics,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let records: Vec<ReplicateRecord> = per_job.into_iter().flatten().collect();
    let summary = aggregate(&records);
    Ok(StudyResult { records, summary })
}

/// Mean and standard error over replicates, skipping non-finite values.
pub fn aggregate(records: &[ReplicateRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, Method, String)> = Vec::new();
    for r in records {
        for (m, _) in &r.metrics {
            let key = (r.scenario.clone(), r.method, m.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(scenario, method, metric)| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method)
                .flat_map(|r| r.metrics.iter().filter(|(m, _)| *m == metric).map(|(_, v)| *v))
                .filter(|v| v.is_finite())
                .collect();
            let count = values.len();
            let (mean, se) = if count == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = values.iter().sum::<f64>() / count as f64;
                let se = if count > 1 {
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                    (var / count as f64).sqrt()
                } else {
                    0.0
                };
                (mean, se)
            };
            AggregateRow { scenario, method, metric, mean, se, count }
        })
        .collect()
}
