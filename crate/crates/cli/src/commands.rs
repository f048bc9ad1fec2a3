use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use nalgebra::DVector;
use sparseproj::additive::{expand_additive_design, fit_additive, write_component_bands_csv};
use sparseproj::debias::{bvm_diagnostic, write_theta_csv, CredibleBand};
use sparseproj::design::{GroupSpec, GroupedDesign};
use sparseproj::pipeline::{run_pipeline, PipelineOutput};
use sparseproj::posterior::DrawsSidecar;
use sparseproj::projection::{write_ensemble_csv, EnsembleSummary};
use sparseproj::simulation::{run_replicated, StudyConfig};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, Failure};
use crate::io::{read_groups, read_table, read_vector, Artifacts};
use crate::report::{AdditiveSummary, Diagnostics, IntervalRow, RunReport, SelectedGroup};

/// A finished run. `failure` is set when every stage completed but some
/// projection did not converge; artifacts are still written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub failure: Option<CliError>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, CliError::code)
    }
}

pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    let mut artifacts = Artifacts::create(&config.out, config.seed, config.hash())?;
    let mut report = RunReport::new(config);
    match config.command {
        Command::Fit | Command::Debias => cmd_fit(config, &mut report, &mut artifacts)?,
        Command::Additive => cmd_additive(config, &mut report, &mut artifacts)?,
        Command::Simulate => cmd_simulate(config, &mut report, &mut artifacts)?,
        Command::Diagnose => cmd_diagnose(config, &mut report)?,
    }
    let failure = (!report.converged).then(|| {
        let detail = match config.command {
            Command::Simulate => "in at least one replicate".to_string(),
            _ => format!("({} of {} draws converged)", report.converged_draws, config.draws),
        };
        CliError::new(Failure::Projection, format!("projections did not converge {detail}"))
    });
    if let Some(f) = &failure {
        warn!("{f}");
    }
    report.artifacts = artifacts.written.iter().filter_map(|p| p.file_name()).map(|s| s.to_string_lossy().into()).collect();
    report.artifacts.push("report.json".into());
    artifacts.json("report.json", &report)?;
    Ok(Outcome { report, failure })
}

fn load_design(config: &RunConfig) -> Result<(Vec<String>, GroupedDesign), CliError> {
    let x = read_table(config.x.as_deref().expect("validated"))?;
    let groups = read_groups(config.groups.as_deref().expect("validated"), x.values.ncols())?;
    let design = GroupedDesign::new(x.values, groups).map_err(|e| CliError::input(e.to_string()))?;
    Ok((x.names, design))
}

fn load_response(path: &Path, n: usize) -> Result<DVector<f64>, CliError> {
    let y = read_vector(path)?;
    if y.len() != n {
        return Err(CliError::input(format!("{}: {} rows, but the design has {n}", path.display(), y.len())));
    }
    Ok(y)
}

fn interval_rows(names: &[String], groups: &GroupSpec, estimate: &DVector<f64>, band: &CredibleBand) -> Vec<IntervalRow> {
    (0..estimate.len())
        .map(|j| IntervalRow {
            coordinate: j + 1,
            name: names[j].clone(),
            group: groups.names()[groups.group_of(j).expect("column in a group")].clone(),
            estimate: estimate[j],
            lower: band.lower[j],
            upper: band.upper[j],
        })
        .collect()
}

fn write_intervals(artifacts: &mut Artifacts, name: &str, rows: &[IntervalRow]) -> Result<(), CliError> {
    artifacts.csv(name, |w| {
        writeln!(w, "coordinate,name,group,estimate,lower,upper")?;
        for r in rows {
            writeln!(w, "{},{},{},{},{},{}", r.coordinate, r.name, r.group, r.estimate, r.lower, r.upper)?;
        }
        Ok(())
    })
}

/// Fills the parts of the report shared by `fit`, `debias` and `additive`.
fn record_output(
    config: &RunConfig,
    names: &[String],
    groups: &GroupSpec,
    output: &PipelineOutput,
    report: &mut RunReport,
    artifacts: &mut Artifacts,
) -> Result<(), CliError> {
    report.n = output.design.n();
    report.p = names.len();
    report.num_groups = groups.num_groups();
    report.lambda = Some(output.penalty.lambda);
    report.sigma = Some(output.posterior.sigma());
    report.converged = output.converged();
    report.converged_draws = output.num_converged();
    report.selection_frequencies = output.mpm.frequencies.clone();
    report.selected_groups = output
        .mpm
        .groups
        .iter()
        .map(|&k| SelectedGroup { index: k + 1, name: groups.names()[k].clone(), frequency: output.mpm.frequencies[k] })
        .collect();
    report.intervals = interval_rows(names, groups, &output.estimate, &output.band);
    report.timings = output.timings.clone();
    write_intervals(artifacts, "intervals.csv", &report.intervals)?;

    let freq = &output.mpm.frequencies;
    artifacts.csv("frequencies.csv", |w| {
        writeln!(w, "group,name,frequency,selected")?;
        for (k, f) in freq.iter().enumerate() {
            writeln!(w, "{},{},{},{}", k + 1, groups.names()[k], f, output.mpm.groups.contains(&k) as u8)?;
        }
        Ok(())
    })?;
    if let Some(cv) = &output.cv {
        artifacts.csv("cv.csv", |w| {
            writeln!(w, "lambda,cv_error")?;
            for (l, e) in cv.grid.iter().zip(&cv.errors) {
                writeln!(w, "{l},{e}")?;
            }
            Ok(())
        })?;
    }
    if config.save_draws {
        // Draws live on the working (standardized) scale of the fit.
        artifacts.csv("draws.csv", |w| output.draws.write_csv(w))?;
        artifacts.json(
            "draws.json",
            &DrawsSidecar {
                seed: output.draws.seed(),
                d: output.draws.len(),
                a_n: output.posterior.a_n(),
                sigma: output.posterior.sigma(),
            },
        )?;
        artifacts.csv("projected.csv", |w| write_ensemble_csv(w, &output.projected))?;
        artifacts.json(
            "projected.json",
            &EnsembleSummary::new(&output.penalty, &output.projected, output.design.num_groups()),
        )?;
    }
    Ok(())
}

fn cmd_fit(config: &RunConfig, report: &mut RunReport, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let (names, design) = load_design(config)?;
    let y = load_response(config.y.as_deref().expect("validated"), design.n())?;
    info!("design: {} × {} in {} groups", design.n(), design.p(), design.num_groups());
    let output = run_pipeline(&design, &y, &config.pipeline()).map_err(CliError::model)?;
    info!("λ = {:.4e}, selected groups {:?}", output.penalty.lambda, output.mpm.groups);
    record_output(config, &names, design.groups(), &output, report, artifacts)?;

    if let Some(stage) = &output.debiased {
        let center = stage.ensemble.mean();
        report.debiased_intervals = interval_rows(&names, design.groups(), &output.to_original(&center), &stage.band);
        write_intervals(artifacts, "debiased_intervals.csv", &report.debiased_intervals)?;
        let bvm = bvm_diagnostic(&stage.ensemble, &stage.theta, &output.design, &output.posterior, output.posterior.mean());
        artifacts.json("bvm.json", &bvm)?;
        if config.save_draws {
            artifacts.csv("theta.csv", |w| write_theta_csv(w, &stage.theta))?;
        }
    }
    Ok(())
}

fn cmd_additive(config: &RunConfig, report: &mut RunReport, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let x = read_table(config.x.as_deref().expect("validated"))?;
    let y = load_response(config.y.as_deref().expect("validated"), x.values.nrows())?;
    // Validate the expansion up front so bad covariates are reported as input errors.
    let expansion = expand_additive_design(&x.values, config.basis_count, config.degree)
        .map_err(|e| CliError::input(e.to_string()))?;
    info!(
        "expanded design: {} × {} ({} variables × {} basis functions)",
        expansion.design.n(),
        expansion.design.p(),
        x.values.ncols(),
        config.basis_count
    );
    let run = fit_additive(&x.values, &y, config.basis_count, config.degree, &config.pipeline(), 100)
        .map_err(CliError::model)?;
    let groups = run.expansion.design.groups().clone();
    let names: Vec<String> = x
        .names
        .iter()
        .flat_map(|v| (1..=config.basis_count).map(move |b| format!("{v}_b{b}")))
        .collect();
    let groups = GroupSpec::from_named_one_based(&groups.one_based_bounds(), x.names.clone(), names.len())
        .map_err(CliError::model)?;
    record_output(config, &names, &groups, &run.output, report, artifacts)?;
    report.additive = Some(AdditiveSummary {
        variables: x.values.ncols(),
        basis_count: config.basis_count,
        degree: config.degree,
        expanded_p: run.expansion.design.p(),
        selected_components: run.output.mpm.groups.iter().map(|k| k + 1).collect(),
    });
    artifacts.csv("component_bands.csv", |w| write_component_bands_csv(w, &run.recovery.bands, None))?;
    Ok(())
}

fn cmd_simulate(config: &RunConfig, report: &mut RunReport, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let path = config.study.as_deref().expect("validated");
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut study: StudyConfig =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    study.master_seed = config.seed;
    study.validate().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let result = run_replicated(&study).map_err(CliError::model)?;
    artifacts.csv("metrics.csv", |w| result.write_records_csv(w))?;
    artifacts.csv("summary.csv", |w| result.write_summary_csv(w))?;
    for metric in ["mse", "f1", "signal_coverage", "noise_coverage"] {
        let rows: Vec<_> = result
            .records
            .iter()
            .filter_map(|r| r.metrics.iter().find(|(m, _)| m == metric).map(|(_, v)| (r, *v)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        artifacts.csv(&format!("panel_{metric}.csv"), |w| {
            writeln!(w, "scenario,method,replicate,value")?;
            for (r, v) in rows {
                writeln!(w, "{},{},{},{}", r.scenario, r.method.name(), r.replicate + 1, v)?;
            }
            Ok(())
        })?;
    }
    artifacts.json("aggregate.json", &result.summary)?;
    let converged: Vec<f64> = result
        .records
        .iter()
        .filter_map(|r| r.metrics.iter().find(|(m, _)| m == "converged").map(|(_, v)| *v))
        .collect();
    report.converged = converged.iter().all(|v| *v == 1.0);
    report.study = result.summary;
    Ok(())
}

fn cmd_diagnose(config: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let (names, design) = load_design(config)?;
    let design = design.standardize().map_err(|e| CliError::input(e.to_string()))?;
    let (support, source) = match &config.support {
        Some(s) => (s.iter().map(|k| k - 1).collect::<Vec<_>>(), "flag"),
        None => {
            let y = load_response(config.y.as_deref().expect("validated"), design.n())?;
            let output = run_pipeline(&design, &y, &config.pipeline()).map_err(CliError::model)?;
            report.lambda = Some(output.penalty.lambda);
            report.sigma = Some(output.posterior.sigma());
            (output.mpm.groups.clone(), "mpm")
        }
    };
    let mut notes = Vec::new();
    let mut stat = |r: sparseproj::Result<f64>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    };
    let restricted_eigenvalue = stat(design.restricted_eigenvalue(&support), "restricted eigenvalue");
    let irrepresentability = stat(design.irrepresentability_statistic(&support), "irrepresentability");
    report.n = design.n();
    report.p = names.len();
    report.num_groups = design.num_groups();
    report.diagnostics = Some(Diagnostics {
        n: design.n(),
        p: design.p(),
        num_groups: design.num_groups(),
        min_group_size: design.groups().min_size(),
        max_group_size: design.groups().max_size(),
        support: support.iter().map(|k| k + 1).collect(),
        support_source: source.into(),
        restricted_eigenvalue,
        irrepresentability,
        notes,
    });
    Ok(())
}
