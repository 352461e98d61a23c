//! Rolling-horizon experiments: rules are trained on each trailing window,
//! applied over the next control period, and judged by AC voltages.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{eval_rules, opf_dispatch, two_step_train, watt_var_dispatch, ControllerId, Dispatch, WattVarCurve};
use crate::error::{Error, Result};
use crate::feeder::{ac_power_flow, build_sensitivities, FeederModel, Sensitivities};
use crate::kernel::KernelSpec;
use crate::scenario::{build_scenarios, solar_buses, InputLayout, ProfileSet, ScenarioSet};
use crate::trainer::{cross_validate, sparsity_report, train, Objective, RuleSet, TrainConfig};

/// Slack on the per-minute dispatch box check.
const BOX_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Minutes of trailing data each rule set is trained on.
    pub train_window_min: usize,
    /// Minutes a rule set stays in use.
    pub apply_window_min: usize,
    pub controllers: Vec<ControllerId>,
    /// When set, solar (and its inverter) is kept only at the buses this
    /// penetration selects.
    pub penetration: Option<f64>,
    pub local_inputs: bool,
    /// Lines (by receiving bus) whose active flow is appended to every input.
    pub remote_inputs: Vec<usize>,
    pub normalize: bool,
    /// Delay of the C2 controller in minutes.
    pub lag: usize,
    pub tau: f64,
    pub eps: f64,
    /// Regularization weight; cross-validated over `mu_grid` when absent.
    pub mu: Option<f64>,
    pub mu_grid: Vec<f64>,
    /// Re-run cross-validation on every window instead of the first only.
    pub retune: bool,
    pub linear_kernel: KernelSpec,
    pub gaussian_kernel: KernelSpec,
    /// Objective of the OPF controllers; Δ_τ with `tau` when absent.
    pub opf_objective: Option<Objective>,
    pub watt_var: WattVarCurve,
    pub drop_intercept: bool,
    pub zero_tol: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
    /// Voltage band for violation counting (pu).
    pub band: f64,
    pub sweep: Option<SweepConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train_window_min: 30,
            apply_window_min: 30,
            controllers: vec![ControllerId::C1, ControllerId::C2, ControllerId::C3, ControllerId::C4, ControllerId::C5],
            penetration: None,
            local_inputs: true,
            remote_inputs: Vec::new(),
            normalize: true,
            lag: 2,
            tau: 5e-3,
            eps: 1e-3,
            mu: None,
            mu_grid: vec![1e-4, 1e-3, 1e-2],
            retune: false,
            linear_kernel: KernelSpec::linear(),
            gaussian_kernel: KernelSpec::gaussian(30.0),
            opf_objective: None,
            watt_var: WattVarCurve::default(),
            drop_intercept: false,
            zero_tol: t.zero_tol,
            cv_folds: t.cv_folds,
            tol: t.tol,
            solver_tol: t.solver_tol,
            max_iters: t.max_iters,
            band: 0.03,
            sweep: None,
        }
    }
}

/// Grids for [`sweep_tradeoff`]; empty grids are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tau: Vec<f64>,
    pub eps: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Eps,
    Mu,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Eps => "eps",
            SweepParam::Mu => "mu",
        }
    }
}

/// Training rows, then the minutes the resulting rules are applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub index: usize,
    pub train: Range<usize>,
    pub apply: Range<usize>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.apply_window_min == 0 {
            return Err(Error::Config("apply_window_min must be at least 1".into()));
        }
        if self.train_window_min < self.cv_folds {
            return Err(Error::Config(format!(
                "train_window_min {} is shorter than cv_folds {}",
                self.train_window_min, self.cv_folds
            )));
        }
        if self.controllers.is_empty() {
            return Err(Error::Config("no controllers selected".into()));
        }
        if let Some(p) = self.penetration {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("penetration {p} outside [0, 1]")));
            }
        }
        if self.band.is_nan() || self.band <= 0.0 {
            return Err(Error::Config("band must be positive".into()));
        }
        if self.mu.is_none() && self.mu_grid.is_empty() && self.controllers.iter().any(|c| c.is_learned()) {
            return Err(Error::Config("mu is absent and mu_grid is empty".into()));
        }
        self.opf_objective().validate()?;
        self.watt_var.validate()?;
        for c in self.controllers.iter().filter(|c| c.is_learned()) {
            self.train_config(*c, self.mu.unwrap_or(self.mu_grid.first().copied().unwrap_or(0.0)))
                .expect("learned controller")
                .validate()?;
        }
        Ok(())
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout {
            local: self.local_inputs,
            remote_lines: self.remote_inputs.clone(),
        }
    }

    pub fn opf_objective(&self) -> Objective {
        self.opf_objective.unwrap_or(Objective::DeltaTau { tau: self.tau })
    }

    /// Training setup of a learned controller with weight `mu`:
    /// C4/C5 linear/Gaussian with Δ_τ, C6/C7 linear/Gaussian with Δ_ε, and
    /// R2 with the C5 setup.
    pub fn train_config(&self, c: ControllerId, mu: f64) -> Option<TrainConfig> {
        let tau = Objective::DeltaTau { tau: self.tau };
        let eps = Objective::DeltaEps { eps: self.eps };
        let (objective, kernel) = match c {
            ControllerId::C4 => (tau, self.linear_kernel),
            ControllerId::C5 | ControllerId::R2 => (tau, self.gaussian_kernel),
            ControllerId::C6 => (eps, self.linear_kernel),
            ControllerId::C7 => (eps, self.gaussian_kernel),
            _ => return None,
        };
        Some(TrainConfig {
            objective,
            mu,
            kernel,
            drop_intercept: self.drop_intercept,
            cv_folds: self.cv_folds,
            tol: self.tol,
            solver_tol: self.solver_tol,
            max_iters: self.max_iters,
            zero_tol: self.zero_tol,
            ..TrainConfig::default()
        })
    }

    /// Window boundaries start once a full training window is available;
    /// the last control period may be shorter.
    pub fn windows(&self, horizon: usize) -> Vec<WindowSpan> {
        let mut out = Vec::new();
        let mut start = self.train_window_min;
        while start < horizon {
            let end = (start + self.apply_window_min).min(horizon);
            out.push(WindowSpan {
                index: out.len(),
                train: start - self.train_window_min..start,
                apply: start..end,
            });
            start = end;
        }
        out
    }

    fn controller_list(&self) -> Vec<ControllerId> {
        let mut c = self.controllers.clone();
        c.sort();
        c.dedup();
        c
    }
}

/// Training outcome of one learned controller on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub window: usize,
    pub mu: Option<f64>,
    pub objective: Option<f64>,
    pub frac_nonzero: Option<f64>,
    /// Values downloaded to the inverters: nonzero coefficients plus intercepts.
    pub comm_count: Option<usize>,
    /// Two-step rules only: whether the fitted rules met every training limit.
    pub feasible: Option<bool>,
    pub error: Option<String>,
}

impl WindowStat {
    fn empty(window: usize, mu: Option<f64>) -> Self {
        Self {
            window,
            mu,
            objective: None,
            frac_nonzero: None,
            comm_count: None,
            feasible: None,
            error: None,
        }
    }

    pub fn is_missing(&self) -> bool {
        self.error.is_some()
    }
}

/// Outcome of one controller at one minute.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteRecord {
    pub t: usize,
    /// AC voltage deviations `v - v0` per bus.
    pub dv: Vec<f64>,
    /// Optimization objective of the dispatch under the linearized model.
    pub ldf_objective: f64,
    /// Whether the dispatch left its box (never expected).
    pub box_violation: bool,
}

/// Raw log of one controller, the input of [`metrics`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerLog {
    pub controller: Option<ControllerId>,
    pub minutes: Vec<MinuteRecord>,
    /// Minutes with no dispatch (training, OPF or power flow failure).
    pub missing: usize,
    pub windows: Vec<WindowStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusStat {
    pub bus: usize,
    pub avg_dv: f64,
    pub max_dv: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteStat {
    pub t: usize,
    pub avg_dv: f64,
    pub max_dv: f64,
    pub ldf_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub controller: ControllerId,
    pub buses: Vec<BusStat>,
    /// Mean of `|Δv|` over buses and minutes.
    pub avg_dv: f64,
    pub max_dv: f64,
    /// Mean over minutes of the largest `|Δv|` across buses.
    pub time_avg_max_dv: f64,
    pub violations: usize,
    pub box_violations: usize,
    pub minutes_evaluated: usize,
    pub minutes_missing: usize,
    pub windows: Vec<WindowStat>,
    pub minutes: Vec<MinuteStat>,
}

impl ControllerReport {
    /// Mean nonzero fraction over the windows that trained.
    pub fn mean_frac_nonzero(&self) -> Option<f64> {
        mean(self.windows.iter().filter_map(|w| w.frac_nonzero))
    }

    pub fn mean_comm_count(&self) -> Option<f64> {
        mean(self.windows.iter().filter_map(|w| w.comm_count.map(|c| c as f64)))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub band: f64,
    pub windows: Vec<WindowSpan>,
    /// Regularization weight used by each learned controller (first window).
    pub mu: BTreeMap<ControllerId, f64>,
    pub controllers: Vec<ControllerReport>,
}

impl SimReport {
    pub fn controller(&self, id: ControllerId) -> Option<&ControllerReport> {
        self.controllers.iter().find(|c| c.controller == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `controller,bus,avg_dv,max_dv`
    pub fn write_bus_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["controller", "bus", "avg_dv", "max_dv"])
            .map_err(|e| Error::csv(path, e))?;
        for c in &self.controllers {
            for b in &c.buses {
                w.serialize((c.controller.as_str(), b.bus, b.avg_dv, b.max_dv))
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `controller,window,objective,frac_nonzero,comm_count`; missing values are empty.
    pub fn write_window_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["controller", "window", "objective", "frac_nonzero", "comm_count"])
            .map_err(|e| Error::csv(path, e))?;
        for c in &self.controllers {
            for s in &c.windows {
                w.serialize((c.controller.as_str(), s.window, s.objective, s.frac_nonzero, s.comm_count))
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Aggregates raw logs. Controllers without any evaluated minute are
/// left out; the rest are ordered by id.
pub fn metrics(logs: &[ControllerLog], band: f64) -> SimReport {
    let mut controllers: Vec<ControllerReport> = logs
        .iter()
        .filter(|l| !l.minutes.is_empty())
        .filter_map(|l| Some((l.controller?, l)))
        .map(|(id, l)| {
            let mut minutes: Vec<&MinuteRecord> = l.minutes.iter().collect();
            minutes.sort_by_key(|m| m.t);
            let n = minutes[0].dv.len();
            let count = minutes.len() as f64;
            let buses: Vec<BusStat> = (0..n)
                .map(|b| {
                    let vals = minutes.iter().map(|m| m.dv[b].abs());
                    BusStat {
                        bus: b + 1,
                        avg_dv: vals.clone().sum::<f64>() / count,
                        max_dv: vals.clone().fold(0.0, f64::max),
                        violations: vals.filter(|&v| v > band).count(),
                    }
                })
                .collect();
            let per_minute: Vec<MinuteStat> = minutes
                .iter()
                .map(|m| MinuteStat {
                    t: m.t,
                    avg_dv: m.dv.iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64,
                    max_dv: m.dv.iter().fold(0.0, |a, v| a.max(v.abs())),
                    ldf_objective: m.ldf_objective,
                })
                .collect();
            ControllerReport {
                controller: id,
                avg_dv: buses.iter().map(|b| b.avg_dv).sum::<f64>() / n.max(1) as f64,
                max_dv: buses.iter().fold(0.0, |a, b| a.max(b.max_dv)),
                time_avg_max_dv: per_minute.iter().map(|m| m.max_dv).sum::<f64>() / count,
                violations: buses.iter().map(|b| b.violations).sum(),
                box_violations: minutes.iter().filter(|m| m.box_violation).count(),
                minutes_evaluated: minutes.len(),
                minutes_missing: l.missing,
                windows: l.windows.clone(),
                minutes: per_minute,
                buses,
            }
        })
        .collect();
    controllers.sort_by_key(|c| c.controller);
    SimReport {
        band,
        windows: Vec::new(),
        mu: BTreeMap::new(),
        controllers,
    }
}

/// Copy of `profiles` with solar and ratings removed outside the buses
/// selected by `penetration`.
pub fn with_penetration(profiles: &ProfileSet, penetration: f64) -> ProfileSet {
    let keep = solar_buses(profiles.n(), penetration);
    let mut p = profiles.clone();
    for (b, &k) in keep.iter().enumerate() {
        if !k {
            p.s_bar[b] = 0.0;
            p.p_g.iter_mut().for_each(|row| row[b] = 0.0);
        }
    }
    p
}

/// Trained rules of one learned controller on one window.
struct Trained {
    rules: Option<RuleSet>,
    stat: WindowStat,
}

fn is_training_failure(e: &Error) -> bool {
    matches!(e, Error::Solver { .. } | Error::Training(_) | Error::Factorization(_))
}

fn choose_mu(cfg: &SimConfig, c: ControllerId, scen: &ScenarioSet, sens: &Sensitivities) -> Result<f64> {
    if let Some(mu) = cfg.mu {
        return Ok(mu);
    }
    let grid: Vec<TrainConfig> = cfg.mu_grid.iter().filter_map(|&m| cfg.train_config(c, m)).collect();
    Ok(cross_validate(scen, sens, &grid)?.mu)
}

fn train_one(
    cfg: &SimConfig,
    c: ControllerId,
    window: usize,
    mu: f64,
    scen: &ScenarioSet,
    sens: &Sensitivities,
) -> Result<Trained> {
    let mu = if cfg.retune && cfg.mu.is_none() {
        match choose_mu(cfg, c, scen, sens) {
            Ok(m) => m,
            Err(e) if is_training_failure(&e) => mu,
            Err(e) => return Err(e),
        }
    } else {
        mu
    };
    let tc = cfg.train_config(c, mu).expect("learned controller");
    let mut stat = WindowStat::empty(window, Some(mu));
    let result = if c == ControllerId::R2 {
        two_step_train(scen, sens, &tc).map(|f| {
            let feasible = f.all_feasible();
            (f.rules, Some(feasible))
        })
    } else {
        train(scen, sens, &tc).map(|r| (r, None))
    };
    match result {
        Ok((rules, feasible)) => {
            let rules = rules.pruned(cfg.zero_tol);
            stat.objective = Some(rules.meta.train_objective);
            stat.frac_nonzero = Some(sparsity_report(&rules, cfg.zero_tol).frac_nonzero_overall);
            stat.comm_count = Some(rules.comm_count());
            stat.feasible = feasible;
            Ok(Trained { rules: Some(rules), stat })
        }
        Err(e) if is_training_failure(&e) => {
            stat.error = Some(e.to_string());
            Ok(Trained { rules: None, stat })
        }
        Err(e) => Err(e),
    }
}

/// Linearized uncontrolled deviation `R p - X q_c` at minute `t`.
fn uncontrolled(sens: &Sensitivities, profiles: &ProfileSet, t: usize) -> Vec<f64> {
    let p = DVector::from_vec(profiles.net_p(t));
    let qc = DVector::from_column_slice(&profiles.q_c[t]);
    (&sens.r * p - &sens.x * qc).iter().copied().collect()
}

/// Runs the rolling protocol and returns the report together with every
/// dispatch, ordered by minute and controller.
pub fn run_rolling_logged(
    f: &FeederModel,
    profiles: &ProfileSet,
    cfg: &SimConfig,
) -> Result<(SimReport, Vec<(usize, Dispatch)>)> {
    cfg.validate()?;
    profiles.validate()?;
    if profiles.n() != f.n() {
        return Err(Error::Dimension(format!(
            "profiles cover {} buses, feeder has {}",
            profiles.n(),
            f.n()
        )));
    }
    let horizon = profiles.len();
    if horizon < cfg.train_window_min + cfg.apply_window_min {
        return Err(Error::Config(format!(
            "horizon of {horizon} minutes is shorter than train_window_min + apply_window_min = {}",
            cfg.train_window_min + cfg.apply_window_min
        )));
    }
    let profiles = match cfg.penetration {
        Some(p) => with_penetration(profiles, p),
        None => profiles.clone(),
    };
    let sens = build_sensitivities(f);
    let layout = cfg.layout();
    let windows = cfg.windows(horizon);
    let controllers = cfg.controller_list();
    let learned: Vec<ControllerId> = controllers.iter().copied().filter(|c| c.is_learned()).collect();

    let scenarios: Vec<ScenarioSet> = if learned.is_empty() {
        Vec::new()
    } else {
        windows
            .par_iter()
            .map(|w| {
                build_scenarios(f, &profiles, w.train.clone(), &sens, &layout, cfg.normalize)
                    .map_err(|e| Error::Config(format!("window {}: {e}", w.index)))
            })
            .collect::<Result<_>>()?
    };

    let mut mus = BTreeMap::new();
    for &c in &learned {
        let mu = match choose_mu(cfg, c, &scenarios[0], &sens) {
            Ok(m) => m,
            Err(e) => return Err(Error::Training(format!("cross-validation for {c}: {e}"))),
        };
        mus.insert(c, mu);
    }

    let jobs: Vec<(usize, ControllerId)> = (0..windows.len())
        .flat_map(|w| learned.iter().map(move |&c| (w, c)))
        .collect();
    let trained: Vec<Trained> = jobs
        .par_iter()
        .map(|&(w, c)| {
            train_one(cfg, c, w, mus[&c], &scenarios[w], &sens)
                .map_err(|e| Error::Training(format!("window {w}, {c}: {e}")))
        })
        .collect::<Result<_>>()?;
    let rules_of = |w: usize, c: ControllerId| -> &Trained {
        let k = learned.iter().position(|&l| l == c).expect("learned");
        &trained[w * learned.len() + k]
    };

    let objective = cfg.opf_objective();
    let minutes: Vec<(usize, usize)> = windows
        .iter()
        .flat_map(|w| w.apply.clone().map(move |t| (w.index, t)))
        .collect();
    type Step = Vec<(ControllerId, Option<(MinuteRecord, Dispatch)>)>;
    let steps: Vec<Step> = minutes
        .par_iter()
        .map(|&(w, t)| {
            let y = uncontrolled(&sens, &profiles, t);
            let q_bar = profiles.q_bar(t);
            let inputs = layout.raw_inputs(f, &profiles, t);
            controllers
                .iter()
                .map(|&c| {
                    let d = match c {
                        ControllerId::C0 => Some(Dispatch::zeros(f.n(), c)),
                        ControllerId::C1 => opf_dispatch(&y, &q_bar, &sens, &objective).ok(),
                        ControllerId::C2 => {
                            let s = t.saturating_sub(cfg.lag);
                            let (ys, qs) = (uncontrolled(&sens, &profiles, s), profiles.q_bar(s));
                            opf_dispatch(&ys, &qs, &sens, &objective)
                                .ok()
                                .map(|d| d.with_source(c).reclamp(&q_bar))
                        }
                        ControllerId::C3 => Some(watt_var_dispatch(&profiles.p_g[t], &profiles.s_bar, &cfg.watt_var)),
                        _ => rules_of(w, c)
                            .rules
                            .as_ref()
                            .and_then(|r| eval_rules(r, &inputs, &q_bar, c).ok()),
                    };
                    let rec = d.and_then(|d| evaluate(f, &sens, &profiles, t, &y, &q_bar, &objective, d));
                    (c, rec)
                })
                .collect()
        })
        .collect();

    let mut logs: Vec<ControllerLog> = controllers
        .iter()
        .map(|&c| ControllerLog {
            controller: Some(c),
            windows: if c.is_learned() {
                (0..windows.len()).map(|w| rules_of(w, c).stat.clone()).collect()
            } else {
                Vec::new()
            },
            ..ControllerLog::default()
        })
        .collect();
    let mut dispatches = Vec::with_capacity(minutes.len() * controllers.len());
    for (&(_, t), step) in minutes.iter().zip(steps) {
        for (k, (_, rec)) in step.into_iter().enumerate() {
            match rec {
                Some((m, d)) => {
                    logs[k].minutes.push(m);
                    dispatches.push((t, d));
                }
                None => logs[k].missing += 1,
            }
        }
    }
    let mut report = metrics(&logs, cfg.band);
    report.windows = windows;
    report.mu = mus;
    Ok((report, dispatches))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    f: &FeederModel,
    sens: &Sensitivities,
    profiles: &ProfileSet,
    t: usize,
    y: &[f64],
    q_bar: &[f64],
    objective: &Objective,
    d: Dispatch,
) -> Option<(MinuteRecord, Dispatch)> {
    let p = profiles.net_p(t);
    let q: Vec<f64> = d.q_g.iter().zip(&profiles.q_c[t]).map(|(g, c)| g - c).collect();
    let v = ac_power_flow(f, &p, &q).ok().filter(|v| v.converged)?;
    let xq = &sens.x * DVector::from_column_slice(&d.q_g);
    let ldf: Vec<f64> = xq.iter().zip(y).map(|(a, b)| a + b).collect();
    let rec = MinuteRecord {
        t,
        dv: v.deviations(f.v0),
        ldf_objective: objective.cost(&ldf),
        box_violation: d.q_g.iter().zip(q_bar).any(|(q, b)| q.abs() > b + BOX_SLACK),
    };
    Some((rec, d))
}

pub fn run_rolling(f: &FeederModel, profiles: &ProfileSet, cfg: &SimConfig) -> Result<SimReport> {
    Ok(run_rolling_logged(f, profiles, cfg)?.0)
}

/// One row of the deviation/sparsity trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub param: SweepParam,
    pub value: f64,
    pub controller: ControllerId,
    pub avg_dv: f64,
    pub max_dv: f64,
    pub frac_nonzero: Option<f64>,
    pub comm_count: Option<f64>,
}

/// One rolling run per grid value. A τ grid drives the learned Δ_τ
/// controllers in `cfg`, an ε grid the Δ_ε ones, a μ grid all learned ones.
pub fn sweep_tradeoff(
    f: &FeederModel,
    profiles: &ProfileSet,
    cfg: &SimConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<TradeoffRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{} grid is empty", param.as_str())));
    }
    let selected: Vec<ControllerId> = cfg
        .controller_list()
        .into_iter()
        .filter(|&c| match param {
            SweepParam::Tau => matches!(c, ControllerId::C4 | ControllerId::C5 | ControllerId::R2),
            SweepParam::Eps => matches!(c, ControllerId::C6 | ControllerId::C7),
            SweepParam::Mu => c.is_learned(),
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no selected controller is affected by a {} sweep",
            param.as_str()
        )));
    }
    let runs: Vec<SimReport> = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.controllers = selected.clone();
            c.sweep = None;
            match param {
                SweepParam::Tau => c.tau = v,
                SweepParam::Eps => c.eps = v,
                SweepParam::Mu => c.mu = Some(v),
            }
            run_rolling(f, profiles, &c).map_err(|e| Error::Training(format!("{} = {v}: {e}", param.as_str())))
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .zip(&runs)
        .flat_map(|(&value, r)| {
            r.controllers.iter().map(move |c| TradeoffRow {
                param,
                value,
                controller: c.controller,
                avg_dv: c.avg_dv,
                max_dv: c.max_dv,
                frac_nonzero: c.mean_frac_nonzero(),
                comm_count: c.mean_comm_count(),
            })
        })
        .collect())
}

/// `param,value,controller,avg_dv,max_dv,frac_nonzero,comm_count`
pub fn write_tradeoff_csv(path: impl AsRef<Path>, rows: &[TradeoffRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["param", "value", "controller", "avg_dv", "max_dv", "frac_nonzero", "comm_count"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize((
            r.param.as_str(),
            r.value,
            r.controller.as_str(),
            r.avg_dv,
            r.max_dv,
            r.frac_nonzero,
            r.comm_count,
        ))
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
