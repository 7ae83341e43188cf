//! Runs every (sweep point, seed, policy) combination of a scenario.
//!
//! Runs are independent and execute in parallel; results are assembled in
//! scenario order so output does not depend on scheduling.

use ctbf_core::{run, RunOptions, SimError, Summary};
use rayon::prelude::*;
use thiserror::Error;

use crate::scenario::{Scenario, SweepPoint};

#[derive(Debug, Error)]
#[error("{label} run at {axis} = {value}, seed {seed}: {source}")]
pub struct RunFailure {
    pub label: String,
    pub axis: &'static str,
    pub value: f64,
    pub seed: u64,
    #[source]
    pub source: SimError,
}

impl RunFailure {
    /// True for a violated runtime invariant, false for a rejected config.
    pub fn is_invariant(&self) -> bool {
        matches!(self.source, SimError::Invariant { .. })
    }
}

/// Metrics for one (point, seed) pair, one entry per policy in scenario order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub per_policy: Vec<PolicyResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyResult {
    pub label: String,
    pub per_subscriber: Vec<Summary>,
    pub aggregate: Summary,
    pub transitions: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point: SweepPoint,
    pub seeds: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub name: String,
    pub axis: &'static str,
    pub labels: Vec<String>,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    /// Mean over seeds of an aggregate metric; seeds without a value are
    /// skipped. `None` if no seed has one.
    pub fn seed_mean(
        &self,
        point: usize,
        label: &str,
        metric: impl Fn(&Summary) -> Option<f64>,
    ) -> Option<f64> {
        let values: Vec<f64> = self.points[point]
            .seeds
            .iter()
            .filter_map(|s| s.per_policy.iter().find(|p| p.label == label))
            .filter_map(|p| metric(&p.aggregate))
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn run_sweep(scenario: &Scenario) -> Result<SweepResult, RunFailure> {
    let points = scenario.points();
    let axis = scenario.axis_name();
    let jobs: Vec<(usize, u64, usize)> = (0..points.len())
        .flat_map(|p| {
            scenario
                .seeds
                .iter()
                .flat_map(move |&s| (0..scenario.policies.len()).map(move |k| (p, s, k)))
        })
        .collect();
    let outputs = jobs
        .par_iter()
        .map(|&(p, seed, k)| {
            let entry = &scenario.policies[k];
            let point = &points[p];
            let fail = |source: SimError| RunFailure {
                label: entry.label.clone(),
                axis,
                value: point.value,
                seed,
                source,
            };
            let config = scenario
                .simulation(point, entry.policy, seed)
                .map_err(|e| fail(e.into()))?;
            let out = run(config, RunOptions::default()).map_err(fail)?;
            Ok(PolicyResult {
                label: entry.label.clone(),
                per_subscriber: out.report.per_subscriber,
                aggregate: out.report.aggregate,
                transitions: out.stats.transitions,
            })
        })
        .collect::<Result<Vec<_>, RunFailure>>()?;

    let mut outputs = outputs.into_iter();
    let points = points
        .into_iter()
        .map(|point| PointResult {
            point,
            seeds: scenario
                .seeds
                .iter()
                .map(|&seed| SeedResult {
                    seed,
                    per_policy: outputs.by_ref().take(scenario.policies.len()).collect(),
                })
                .collect(),
        })
        .collect();
    Ok(SweepResult {
        name: scenario.name.clone(),
        axis,
        labels: scenario.policies.iter().map(|p| p.label.clone()).collect(),
        points,
    })
}
