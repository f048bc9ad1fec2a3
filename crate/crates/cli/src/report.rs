use serde::{Deserialize, Serialize};
use sparseproj::pipeline::StageTimings;
use sparseproj::simulation::AggregateRow;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedGroup {
    /// 1-based.
    pub index: usize,
    pub name: String,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    /// 1-based.
    pub coordinate: usize,
    pub name: String,
    pub group: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub p: usize,
    pub num_groups: usize,
    pub min_group_size: usize,
    pub max_group_size: usize,
    /// 1-based groups the statistics refer to.
    pub support: Vec<usize>,
    pub support_source: String,
    /// Smallest eigenvalue of `n⁻¹X_SᵀX_S`; must be bounded away from zero.
    pub restricted_eigenvalue: Option<f64>,
    /// Below one when the irrepresentable condition holds.
    pub irrepresentability: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSummary {
    pub variables: usize,
    pub basis_count: usize,
    pub degree: usize,
    pub expanded_p: usize,
    /// 1-based selected variables.
    pub selected_components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub version: String,
    pub config_hash: String,
    pub n: usize,
    pub p: usize,
    pub num_groups: usize,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub converged: bool,
    pub converged_draws: usize,
    pub selected_groups: Vec<SelectedGroup>,
    pub selection_frequencies: Vec<f64>,
    pub intervals: Vec<IntervalRow>,
    pub debiased_intervals: Vec<IntervalRow>,
    pub diagnostics: Option<Diagnostics>,
    pub additive: Option<AdditiveSummary>,
    pub study: Vec<AggregateRow>,
    pub artifacts: Vec<String>,
    pub timings: StageTimings,
}

impl RunReport {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            n: 0,
            p: 0,
            num_groups: 0,
            lambda: None,
            sigma: None,
            converged: true,
            converged_draws: 0,
            selected_groups: Vec::new(),
            selection_frequencies: Vec::new(),
            intervals: Vec::new(),
            debiased_intervals: Vec::new(),
            diagnostics: None,
            additive: None,
            study: Vec::new(),
            artifacts: Vec::new(),
            timings: StageTimings::default(),
        }
    }

    /// The report with wall-clock timings and output location cleared, for
    /// comparing runs.
    pub fn without_volatile(&self) -> Self {
        let mut r = self.clone();
        r.timings = StageTimings::default();
        r.config.out = Default::default();
        r.config.jobs = None;
        r.artifacts.clear();
        r
    }
}
