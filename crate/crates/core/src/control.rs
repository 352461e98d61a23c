//! Real-time dispatch: learned rules with box projection, per-minute OPF,
//! Watt-VAR curves and the two-step (fit-after-OPF) competitor.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ProgramBuilder, SolverSettings, TIE_BREAK};
use crate::error::{Error, Result};
use crate::feeder::Sensitivities;
use crate::kernel::{kernel_ridge_with, GRAM_FACTOR};
use crate::scenario::{augment_input, q_limit, ScenarioSet};
use crate::trainer::{training_cost, InverterRule, Objective, RuleMeta, RuleSet, TrainConfig, FEAS_TOL};

/// Limits at or below this leave no room for reactive power.
const ZERO_LIMIT: f64 = 1e-12;
const OPF_TOL: f64 = 1e-9;
/// Residual level at which a stalled OPF solve is still accepted.
const OPF_ACCEPT: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ControllerId {
    /// No reactive control at all.
    C0,
    /// Per-minute OPF with current data.
    C1,
    /// Per-minute OPF with delayed data.
    C2,
    /// Watt-VAR curve.
    C3,
    /// Linear kernel, norm-threshold objective.
    C4,
    /// Gaussian kernel, norm-threshold objective.
    C5,
    /// Linear kernel, per-bus deadband objective.
    C6,
    /// Gaussian kernel, per-bus deadband objective.
    C7,
    /// Two-step rules: OPF targets fitted by kernel ridge regression.
    R2,
}

impl ControllerId {
    pub const ALL: [ControllerId; 9] = [
        ControllerId::C0,
        ControllerId::C1,
        ControllerId::C2,
        ControllerId::C3,
        ControllerId::C4,
        ControllerId::C5,
        ControllerId::C6,
        ControllerId::C7,
        ControllerId::R2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerId::C0 => "C0",
            ControllerId::C1 => "C1",
            ControllerId::C2 => "C2",
            ControllerId::C3 => "C3",
            ControllerId::C4 => "C4",
            ControllerId::C5 => "C5",
            ControllerId::C6 => "C6",
            ControllerId::C7 => "C7",
            ControllerId::R2 => "R2",
        }
    }

    /// Controllers whose rules are trained on past windows.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            ControllerId::C4 | ControllerId::C5 | ControllerId::C6 | ControllerId::C7 | ControllerId::R2
        )
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown controller `{s}`")))
    }
}

/// Reactive set-points of one minute.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    /// Reactive injection per bus (pu), zero where there is no inverter.
    pub q_g: Vec<f64>,
    /// Whether the box projection changed the bus's raw output.
    pub clipped: Vec<bool>,
    pub source: ControllerId,
}

impl Dispatch {
    pub fn zeros(n: usize, source: ControllerId) -> Self {
        Self {
            q_g: vec![0.0; n],
            clipped: vec![false; n],
            source,
        }
    }

    /// Projects raw outputs onto `[-q̄, q̄]` bus by bus.
    pub fn clamped(raw: &[f64], q_bar: &[f64], source: ControllerId) -> Self {
        let (q_g, clipped) = raw
            .iter()
            .zip(q_bar)
            .map(|(&q, &qb)| {
                let qb = qb.max(0.0);
                (q.clamp(-qb, qb), q.abs() > qb)
            })
            .unzip();
        Self { q_g, clipped, source }
    }

    /// Re-projects onto new limits, keeping earlier clip flags.
    pub fn reclamp(&self, q_bar: &[f64]) -> Self {
        let mut out = Dispatch::clamped(&self.q_g, q_bar, self.source);
        for (c, &was) in out.clipped.iter_mut().zip(&self.clipped) {
            *c |= was;
        }
        out
    }

    pub fn with_source(mut self, source: ControllerId) -> Self {
        self.source = source;
        self
    }
}

/// Evaluates every rule at the raw inputs `z_now[bus - 1]` and clamps the
/// outputs to `q_bar_now`. Buses without a rule get zero.
pub fn eval_rules(rules: &RuleSet, z_now: &[Vec<f64>], q_bar_now: &[f64], source: ControllerId) -> Result<Dispatch> {
    let n = q_bar_now.len();
    if z_now.len() != n {
        return Err(Error::Dimension(format!("{} input vectors for {n} buses", z_now.len())));
    }
    let mut raw = vec![0.0; n];
    for r in &rules.rules {
        if r.bus == 0 || r.bus > n {
            return Err(Error::Dimension(format!("rule for bus {} on a {n}-bus feeder", r.bus)));
        }
        let z = &z_now[r.bus - 1];
        check_input_len(r, z)?;
        raw[r.bus - 1] = r.output(z)?;
    }
    Ok(Dispatch::clamped(&raw, q_bar_now, source))
}

fn check_input_len(r: &InverterRule, z: &[f64]) -> Result<()> {
    let stored = r.z_train.first().map_or(z.len(), |zs| zs.len() - r.b.is_none() as usize);
    if stored != z.len() {
        return Err(Error::Dimension(format!(
            "inverter at bus {} was trained on {stored} inputs, got {}",
            r.bus,
            z.len()
        )));
    }
    Ok(())
}

/// Minimizes `Δ(q; y) + 1e-9‖q‖²` over `|q| ≤ q̄` (controller C1).
pub fn opf_dispatch(y: &[f64], q_bar: &[f64], sens: &Sensitivities, objective: &Objective) -> Result<Dispatch> {
    objective.validate()?;
    let n = sens.n();
    if y.len() != n || q_bar.len() != n {
        return Err(Error::Dimension(format!(
            "operating point must cover {n} buses, got {} and {}",
            y.len(),
            q_bar.len()
        )));
    }
    let active: Vec<usize> = (0..n).filter(|&i| q_bar[i] > ZERO_LIMIT).collect();
    if active.is_empty() {
        return Ok(Dispatch::zeros(n, ControllerId::C1));
    }
    let mut pb = ProgramBuilder::new();
    let q: Vec<usize> = active.iter().map(|&i| pb.var(format!("q[{}]", i + 1), 0.0)).collect();
    let boxes: Vec<AffineExpr> = q
        .iter()
        .zip(&active)
        .flat_map(|(&j, &i)| {
            [
                AffineExpr::var(j).scaled(-1.0).plus(q_bar[i]),
                AffineExpr::var(j).plus(q_bar[i]),
            ]
        })
        .collect();
    pb.nonneg(&boxes);
    let dv: Vec<AffineExpr> = (0..n)
        .map(|i| {
            q.iter()
                .zip(&active)
                .fold(AffineExpr::constant(y[i]), |e, (&j, &b)| e.term(j, sens.x[(i, b)]))
        })
        .collect();
    match *objective {
        Objective::DeltaTau { tau } => {
            let d = pb.var("d", 1.0);
            pb.nonneg(&[AffineExpr::var(d)]);
            pb.soc(&AffineExpr::var(d).plus(tau), &dv);
        }
        Objective::DeltaEps { eps } => {
            let mut rows = Vec::with_capacity(3 * n);
            for (i, e) in dv.iter().enumerate() {
                let d = pb.var(format!("d[{}]", i + 1), 1.0);
                rows.push(AffineExpr::var(d));
                rows.push(e.clone().scaled(-1.0).term(d, 1.0).plus(eps));
                rows.push(e.clone().term(d, 1.0).plus(eps));
            }
            pb.nonneg(&rows);
        }
        Objective::DeltaS => {}
    }
    if matches!(objective, Objective::DeltaS) {
        // ‖dv‖² + w‖q‖² is the squared norm of the stacked vector, so its
        // minimizer is that of the plain norm, which the solver resolves to
        // full accuracy instead of the square root of its tolerance.
        let d = pb.var("d", 1.0);
        let w = TIE_BREAK.sqrt();
        let mut tail = dv;
        tail.extend(q.iter().map(|&j| AffineExpr::default().term(j, w)));
        pb.soc(&AffineExpr::var(d), &tail);
    } else {
        let t = pb.var("tie_break", TIE_BREAK);
        let tail: Vec<AffineExpr> = q.iter().map(|&j| AffineExpr::var(j)).collect();
        pb.rotated(&AffineExpr::var(t), &AffineExpr::constant(1.0), &tail);
    }

    let sol = conic::solve_with(&pb.build()?, &SolverSettings::with_accept(OPF_TOL, OPF_ACCEPT))?.into_result()?;
    let mut raw = vec![0.0; n];
    for (&j, &i) in q.iter().zip(&active) {
        raw[i] = sol.x[j];
    }
    // The interior-point iterate can sit a hair outside the box; the
    // projection is not a clip in the rule sense.
    let mut d = Dispatch::clamped(&raw, q_bar, ControllerId::C1);
    d.clipped.iter_mut().for_each(|c| *c = false);
    Ok(d)
}

/// Watt-VAR curve: full reactive support up to `p1·p̄`, none from `p2·p̄`,
/// linear in between, where `p̄ = s̄ / oversize` is the panel rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WattVarCurve {
    pub p1: f64,
    pub p2: f64,
    pub oversize: f64,
}

impl Default for WattVarCurve {
    fn default() -> Self {
        Self {
            p1: 0.5,
            p2: 1.0,
            oversize: 1.1,
        }
    }
}

impl WattVarCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 >= 0.0 && self.p2 > self.p1 && self.p2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Watt-VAR breakpoints need 0 <= p1 < p2, got {} and {}",
                self.p1, self.p2
            )));
        }
        if !(self.oversize >= 1.0 && self.oversize.is_finite()) {
            return Err(Error::InvalidParameter(format!("oversize must be >= 1, got {}", self.oversize)));
        }
        Ok(())
    }
}

/// Reactive output of the Watt-VAR curve at active output `p_g`.
pub fn watt_var(p_g: f64, s_bar: f64, curve: &WattVarCurve) -> f64 {
    let qb = q_limit(s_bar, p_g);
    let p_bar = s_bar / curve.oversize;
    let (lo, hi) = (curve.p1 * p_bar, curve.p2 * p_bar);
    let frac = if p_g <= lo {
        1.0
    } else if p_g >= hi {
        0.0
    } else {
        (hi - p_g) / (hi - lo)
    };
    (frac * qb).clamp(-qb, qb)
}

/// Watt-VAR dispatch of every bus (controller C3).
pub fn watt_var_dispatch(p_g: &[f64], s_bar: &[f64], curve: &WattVarCurve) -> Dispatch {
    let q_g = p_g
        .iter()
        .zip(s_bar)
        .map(|(&p, &s)| if s > 0.0 { watt_var(p.max(0.0), s, curve) } else { 0.0 })
        .collect::<Vec<_>>();
    Dispatch {
        clipped: vec![false; q_g.len()],
        q_g,
        source: ControllerId::C3,
    }
}

/// Output of [`two_step_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepFit {
    pub rules: RuleSet,
    /// OPF set-points per scenario, indexed `[s][bus - 1]`.
    pub targets: Vec<Vec<f64>>,
    /// Whether the fitted (unclamped) rules respect every limit of the scenario.
    pub feasible: Vec<bool>,
    /// Largest absolute gap between fitted outputs and OPF targets.
    pub max_residual: f64,
}

impl TwoStepFit {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

/// Solves the OPF of every scenario, then fits each inverter's targets by
/// kernel ridge regression with the configured kernel and `μ`.
pub fn two_step_train(scen: &ScenarioSet, sens: &Sensitivities, cfg: &TrainConfig) -> Result<TwoStepFit> {
    cfg.validate()?;
    scen.validate()?;
    if sens.n() != scen.n() {
        return Err(Error::Dimension(format!(
            "sensitivities cover {} buses, scenarios {}",
            sens.n(),
            scen.n()
        )));
    }
    let (s, n) = (scen.s(), scen.n());
    let targets = (0..s)
        .map(|si| Ok(opf_dispatch(&scen.y[si], &scen.q_bar[si], sens, &cfg.objective)?.q_g))
        .collect::<Result<Vec<_>>>()?;

    let settings = cfg.settings();
    let mut feasible = vec![true; s];
    let mut max_residual: f64 = 0.0;
    let (mut primal_res, mut dual_res, mut gap, mut iterations) = (0.0f64, 0.0f64, 0.0f64, 0);
    let mut rules = Vec::new();
    for bus in scen.inverters() {
        let spec = cfg.kernel_for(bus + 1);
        let z: Vec<Vec<f64>> = scen.z[bus]
            .iter()
            .map(|z| if cfg.drop_intercept { augment_input(z) } else { z.clone() })
            .collect();
        let y: Vec<f64> = targets.iter().map(|q| q[bus]).collect();
        let fit = kernel_ridge_with(&spec, &z, &y, cfg.mu, !cfg.drop_intercept, &settings)?;
        for (si, (&f, &t)) in fit.fitted.iter().zip(&y).enumerate() {
            max_residual = max_residual.max((f - t).abs());
            if f.abs() > scen.q_bar[si][bus] + FEAS_TOL {
                feasible[si] = false;
            }
        }
        primal_res = primal_res.max(fit.primal_res);
        dual_res = dual_res.max(fit.dual_res);
        gap = gap.max(fit.gap);
        iterations += fit.iterations;
        rules.push(InverterRule {
            bus: bus + 1,
            kernel: spec,
            a: fit.a,
            b: (!cfg.drop_intercept).then_some(fit.b),
            z_train: z,
            norm_stats: scen.norm_stats[bus].clone(),
        });
    }
    let mut rules = RuleSet {
        rules,
        meta: RuleMeta {
            objective: cfg.objective,
            mu: cfg.mu,
            n_buses: n,
            scenarios: s,
            window: scen.window.clone(),
            layout: scen.layout.clone(),
            train_objective: 0.0,
            primal_res,
            dual_res,
            gap,
            iterations,
            gram_factor: GRAM_FACTOR.to_string(),
        },
    };
    rules.meta.train_objective = training_cost(&rules, scen, sens, &cfg.objective);
    Ok(TwoStepFit {
        rules,
        targets,
        feasible,
        max_residual,
    })
}

/// Writes dispatches as `t,bus,q_g,clipped,source`, one row per bus and minute.
pub fn write_dispatch_csv(path: impl AsRef<Path>, log: &[(usize, Dispatch)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t", "bus", "q_g", "clipped", "source"])
        .map_err(|e| Error::csv(path, e))?;
    for (t, d) in log {
        for (i, (&q, &c)) in d.q_g.iter().zip(&d.clipped).enumerate() {
            w.serialize((t, i + 1, q, c, d.source.as_str()))
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
