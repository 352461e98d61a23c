//! Cross-validation over training configurations and sparsity accounting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{deviations, scenario_outputs, train, RuleSet, TrainConfig};
use crate::error::{Error, Result};
use crate::feeder::Sensitivities;
use crate::scenario::ScenarioSet;

/// Mean held-out cost of each grid point. Scenario `s` belongs to fold
/// `s mod folds`; held-out outputs are clamped to their limits. Grid points
/// whose training fails on some fold score `+∞`.
pub fn cv_scores(scen: &ScenarioSet, sens: &Sensitivities, grid: &[TrainConfig]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("cross-validation grid is empty".into()));
    }
    scen.validate()?;
    grid.iter()
        .map(|cfg| {
            cfg.validate()?;
            let folds = cfg.cv_folds;
            if scen.s() < folds {
                return Err(Error::InvalidParameter(format!(
                    "{} scenarios cannot fill {folds} folds",
                    scen.s()
                )));
            }
            let mut total = 0.0;
            for f in 0..folds {
                let (held, kept): (Vec<usize>, Vec<usize>) = (0..scen.s()).partition(|s| s % folds == f);
                let rules = match train(&scen.subset(&kept), sens, cfg) {
                    Ok(r) => r,
                    Err(Error::Solver { .. } | Error::Training(_)) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                };
                let test = scen.subset(&held);
                let q = scenario_outputs(&rules, &test, true);
                let cost: f64 = deviations(sens, &test, &q).iter().map(|d| cfg.objective.cost(d)).sum();
                total += cost / test.s() as f64;
            }
            Ok(total / folds as f64)
        })
        .collect()
}

/// The grid point with the lowest cross-validated cost; ties go to the
/// earliest entry.
pub fn cross_validate(scen: &ScenarioSet, sens: &Sensitivities, grid: &[TrainConfig]) -> Result<TrainConfig> {
    let scores = cv_scores(scen, sens, grid)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::Training("training failed for every grid point".into()));
    }
    Ok(grid[best].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub zero_tol: f64,
    pub frac_nonzero_overall: f64,
    /// Bus of each rule, aligned with `frac_nonzero_per_inverter`.
    pub buses: Vec<usize>,
    pub frac_nonzero_per_inverter: Vec<f64>,
    /// Buses whose coefficients all vanish.
    pub inactive_inverters: Vec<usize>,
    /// Scenarios with at least one significant coefficient.
    pub support_scenarios: Vec<usize>,
}

pub fn sparsity_report(rules: &RuleSet, zero_tol: f64) -> SparsityReport {
    let mut support = BTreeSet::new();
    let mut per = Vec::with_capacity(rules.rules.len());
    let mut inactive = Vec::new();
    let (mut nz, mut total) = (0usize, 0usize);
    for r in &rules.rules {
        let k = r
            .a
            .iter()
            .enumerate()
            .filter(|(_, a)| a.abs() > zero_tol)
            .inspect(|(s, _)| {
                support.insert(*s);
            })
            .count();
        nz += k;
        total += r.a.len();
        per.push(if r.a.is_empty() { 0.0 } else { k as f64 / r.a.len() as f64 });
        if k == 0 {
            inactive.push(r.bus);
        }
    }
    SparsityReport {
        zero_tol,
        frac_nonzero_overall: if total == 0 { 0.0 } else { nz as f64 / total as f64 },
        buses: rules.rules.iter().map(|r| r.bus).collect(),
        frac_nonzero_per_inverter: per,
        inactive_inverters: inactive,
        support_scenarios: support.into_iter().collect(),
    }
}
