//! Joint training of kernel rules for all inverters as one conic program.

mod cv;
mod rules;

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ConeProgram, ConeSolution, ProgramBuilder, SolverSettings, TIE_BREAK};
use crate::error::{Error, Result};
use crate::feeder::Sensitivities;
use crate::kernel::{GramSet, KernelSpec, ReducedBasis, GRAM_FACTOR};
use crate::scenario::{augment_input, ScenarioSet};

pub use cv::{cross_validate, cv_scores, sparsity_report, SparsityReport};
pub use rules::{InverterRule, RuleMeta, RuleSet};

/// Limits at or below this are treated as zero and pin the output to 0.
const ZERO_LIMIT: f64 = 1e-12;
/// Tolerance of the training-data feasibility check.
pub const FEAS_TOL: f64 = 1e-6;

/// Voltage-regulation cost of a deviation vector `Xq + y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `max(‖dv‖₂ - τ, 0)`.
    DeltaTau { tau: f64 },
    /// `Σ_n max(|dv_n| - ε, 0)`.
    DeltaEps { eps: f64 },
    /// `‖dv‖₂²`.
    DeltaS,
}

impl Objective {
    pub fn cost(&self, dv: &[f64]) -> f64 {
        match *self {
            Objective::DeltaTau { tau } => (dv.iter().map(|v| v * v).sum::<f64>().sqrt() - tau).max(0.0),
            Objective::DeltaEps { eps } => dv.iter().map(|v| (v.abs() - eps).max(0.0)).sum(),
            Objective::DeltaS => dv.iter().map(|v| v * v).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::DeltaTau { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")))
            }
            Objective::DeltaEps { eps } if !(eps > 0.0 && eps.is_finite()) => {
                Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }

    /// Same objective kind with its threshold replaced; `DeltaS` is unchanged.
    pub fn with_threshold(&self, v: f64) -> Objective {
        match self {
            Objective::DeltaTau { .. } => Objective::DeltaTau { tau: v },
            Objective::DeltaEps { .. } => Objective::DeltaEps { eps: v },
            Objective::DeltaS => Objective::DeltaS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub mu: f64,
    /// Kernel shared by all inverters unless overridden in `bus_kernels`.
    pub kernel: KernelSpec,
    pub bus_kernels: BTreeMap<usize, KernelSpec>,
    /// Fold the intercept into augmented inputs so whole rules can vanish.
    pub drop_intercept: bool,
    pub cv_folds: usize,
    /// Accuracy contract: a solve is accepted once all residuals are below it.
    pub tol: f64,
    /// Target the interior-point solve aims for. Coefficients of an
    /// ill-conditioned Gram system are only resolved to about
    /// `residual / lambda_min(K)`, so the solve runs much tighter than `tol`.
    pub solver_tol: f64,
    pub max_iters: usize,
    pub zero_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::DeltaTau { tau: 1e-3 },
            mu: 1e-3,
            kernel: KernelSpec::gaussian(1.0),
            bus_kernels: BTreeMap::new(),
            drop_intercept: false,
            cv_folds: 5,
            tol: 1e-7,
            solver_tol: 1e-11,
            max_iters: 200,
            zero_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn kernel_for(&self, bus: usize) -> KernelSpec {
        self.bus_kernels.get(&bus).copied().unwrap_or(self.kernel)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be >= 0, got {}", self.mu)));
        }
        self.kernel.validate()?;
        for k in self.bus_kernels.values() {
            k.validate()?;
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidParameter("cv_folds must be at least 2".into()));
        }
        if !(self.tol > 0.0 && self.solver_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter("solver tol and max_iters must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn settings(&self) -> SolverSettings {
        SolverSettings {
            max_iters: self.max_iters,
            ..SolverSettings::with_accept(self.solver_tol.min(self.tol), self.tol)
        }
    }
}

/// Variable positions of an assembled training program.
#[derive(Debug, Clone)]
pub struct TrainingVars {
    /// Bus index (0-based) of each inverter.
    pub inverters: Vec<usize>,
    /// Coefficient variables, or reduced coordinates when `coef_maps` is set.
    pub a: Vec<Range<usize>>,
    /// Maps from reduced coordinates to coefficients (`μ = 0` only).
    pub coef_maps: Option<Vec<DMatrix<f64>>>,
    pub b: Option<Vec<usize>>,
    /// Deviation slacks; `S` of them, or `S·N` for the per-bus objective.
    pub d: Vec<usize>,
    pub gamma: Option<Vec<usize>>,
    /// Row of the upper box constraint of each inverter and scenario (the
    /// lower one follows it); `None` where the output is pinned to zero.
    pub box_rows: Vec<Vec<Option<usize>>>,
    /// Rows holding the deviation constraints of each scenario.
    pub dev_rows: Vec<Range<usize>>,
}

impl TrainingVars {
    /// Kernel coefficients of inverter `k` at the solution `x`.
    pub fn coefficients(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let v = &x[self.a[k].clone()];
        match &self.coef_maps {
            Some(m) => (&m[k] * nalgebra::DVector::from_column_slice(v)).iter().copied().collect(),
            None => v.to_vec(),
        }
    }
}

/// Kernel inputs of each inverter (augmented when the intercept is dropped).
fn kernel_inputs(scen: &ScenarioSet, inverters: &[usize], drop_intercept: bool) -> Vec<Vec<Vec<f64>>> {
    inverters
        .iter()
        .map(|&b| {
            scen.z[b]
                .iter()
                .map(|z| if drop_intercept { augment_input(z) } else { z.clone() })
                .collect()
        })
        .collect()
}

/// Builds the Gram matrices used by [`assemble`] for `cfg`.
pub fn build_grams(scen: &ScenarioSet, cfg: &TrainConfig) -> Result<GramSet> {
    let inverters = scen.inverters();
    let inputs = kernel_inputs(scen, &inverters, cfg.drop_intercept);
    let specs: Vec<KernelSpec> = inverters.iter().map(|&b| cfg.kernel_for(b + 1)).collect();
    let refs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
    GramSet::build(&specs, &refs)
}

/// The training SOCP over coefficients `a_n`, intercepts `b`, deviation
/// slacks `d` and norm bounds `γ`, minimizing `(1/S)·Σd + μ·Σγ`.
pub fn assemble(scen: &ScenarioSet, grams: &GramSet, sens: &Sensitivities, cfg: &TrainConfig) -> Result<ConeProgram> {
    Ok(assemble_indexed(scen, grams, sens, cfg)?.0)
}

pub fn assemble_indexed(
    scen: &ScenarioSet,
    grams: &GramSet,
    sens: &Sensitivities,
    cfg: &TrainConfig,
) -> Result<(ConeProgram, TrainingVars)> {
    cfg.validate()?;
    scen.validate()?;
    let (s, n) = (scen.s(), scen.n());
    if sens.n() != n {
        return Err(Error::Dimension(format!("sensitivities cover {} buses, scenarios {n}", sens.n())));
    }
    let inverters = scen.inverters();
    if grams.k.len() != inverters.len() || grams.k.iter().chain(&grams.k_sqrt).any(|k| k.shape() != (s, s)) {
        return Err(Error::Dimension(format!(
            "expected {} Gram matrices of size {s}x{s}",
            inverters.len()
        )));
    }
    let ninv = inverters.len();
    // Without regularization only the outputs K a are determined, so the
    // program runs on eigen-coordinates of each Gram matrix instead.
    let reduced: Option<Vec<ReducedBasis>> = (cfg.mu == 0.0).then(|| grams.k.iter().map(ReducedBasis::new).collect());
    let mut pb = ProgramBuilder::new();
    let a: Vec<Range<usize>> = inverters
        .iter()
        .enumerate()
        .map(|(k, &bus)| {
            let start = pb.num_vars();
            match &reduced {
                Some(r) => (0..r[k].outputs.ncols()).for_each(|j| {
                    pb.var(format!("w[{}][{j}]", bus + 1), 0.0);
                }),
                None => (0..s).for_each(|j| {
                    pb.var(format!("a[{}][{j}]", bus + 1), 0.0);
                }),
            }
            start..pb.num_vars()
        })
        .collect();
    let b = (!cfg.drop_intercept).then(|| {
        inverters
            .iter()
            .map(|&bus| pb.var(format!("b[{}]", bus + 1), 0.0))
            .collect::<Vec<_>>()
    });
    let per_bus = matches!(cfg.objective, Objective::DeltaEps { .. });
    let weight = 1.0 / s as f64;
    let d: Vec<usize> = if per_bus {
        (0..s)
            .flat_map(|si| (0..n).map(move |i| (si, i)))
            .map(|(si, i)| pb.var(format!("d[{si}][{}]", i + 1), weight))
            .collect()
    } else {
        (0..s).map(|si| pb.var(format!("d[{si}]"), weight)).collect()
    };
    let gamma = (cfg.mu > 0.0).then(|| {
        inverters
            .iter()
            .map(|&bus| pb.var(format!("gamma[{}]", bus + 1), cfg.mu))
            .collect::<Vec<_>>()
    });

    // q[k][s] = (K_k a_k)_s + b_k
    let q: Vec<Vec<AffineExpr>> = (0..ninv)
        .map(|k| {
            (0..s)
                .map(|si| {
                    let map = reduced.as_ref().map_or(&grams.k[k], |r| &r[k].outputs);
                    let mut e = AffineExpr::default();
                    for (j, col) in a[k].clone().enumerate() {
                        e = e.term(col, map[(si, j)]);
                    }
                    if let Some(b) = &b {
                        e = e.term(b[k], 1.0);
                    }
                    e
                })
                .collect()
        })
        .collect();

    let mut boxes = Vec::new();
    let mut pinned = Vec::new();
    let mut box_rows = vec![vec![None; s]; ninv];
    for (k, &bus) in inverters.iter().enumerate() {
        for si in 0..s {
            let qb = scen.q_bar[si][bus];
            if qb <= ZERO_LIMIT {
                pinned.push(q[k][si].clone());
            } else {
                box_rows[k][si] = Some(boxes.len());
                boxes.push(q[k][si].clone().scaled(-1.0).plus(qb));
                boxes.push(q[k][si].clone().plus(qb));
            }
        }
    }
    pb.zero(&pinned);
    let box_start = pb.num_rows();
    pb.nonneg(&boxes);
    for r in box_rows.iter_mut().flatten().flatten() {
        *r += box_start;
    }
    let mut dev_rows = Vec::with_capacity(s);

    // dv[s][i] = y[s][i] + Σ_k X[i][bus_k] q[k][s]
    let dv = |si: usize, i: usize| -> AffineExpr {
        let mut e = AffineExpr::constant(scen.y[si][i]);
        for (k, &bus) in inverters.iter().enumerate() {
            let xik = sens.x[(i, bus)];
            if xik != 0.0 {
                e = e.add(&q[k][si].clone().scaled(xik));
            }
        }
        e
    };
    match cfg.objective {
        Objective::DeltaTau { tau } => {
            pb.nonneg(&d.iter().map(|&j| AffineExpr::var(j)).collect::<Vec<_>>());
            for si in 0..s {
                let tail: Vec<AffineExpr> = (0..n).map(|i| dv(si, i)).collect();
                let start = pb.num_rows();
                pb.soc(&AffineExpr::var(d[si]).plus(tau), &tail);
                dev_rows.push(start..pb.num_rows());
            }
        }
        Objective::DeltaEps { eps } => {
            let mut rows = Vec::with_capacity(3 * s * n);
            let start = pb.num_rows();
            for si in 0..s {
                dev_rows.push(start + 3 * n * si..start + 3 * n * (si + 1));
                for i in 0..n {
                    let dj = d[si * n + i];
                    let e = dv(si, i);
                    rows.push(AffineExpr::var(dj));
                    rows.push(e.clone().scaled(-1.0).term(dj, 1.0).plus(eps));
                    rows.push(e.term(dj, 1.0).plus(eps));
                }
            }
            pb.nonneg(&rows);
        }
        Objective::DeltaS => {
            for si in 0..s {
                let tail: Vec<AffineExpr> = (0..n).map(|i| dv(si, i)).collect();
                let start = pb.num_rows();
                pb.rotated(&AffineExpr::var(d[si]), &AffineExpr::constant(1.0), &tail);
                dev_rows.push(start..pb.num_rows());
            }
        }
    }

    if let Some(g) = &gamma {
        for k in 0..ninv {
            let l = &grams.k_sqrt[k];
            let tail: Vec<AffineExpr> = (0..s)
                .map(|i| {
                    a[k].clone()
                        .enumerate()
                        .fold(AffineExpr::default(), |e, (j, col)| e.term(col, l[(i, j)]))
                })
                .collect();
            pb.soc(&AffineExpr::var(g[k]), &tail);
        }
    } else {
        // Outputs can still be non-unique (flat objective, trade with the
        // intercept); pick the smallest RKHS norm among them.
        let t = pb.var("tie_break", TIE_BREAK);
        let tail: Vec<AffineExpr> = a.iter().flat_map(|r| r.clone()).map(AffineExpr::var).collect();
        pb.soc(&AffineExpr::var(t), &tail);
    }
    let vars = TrainingVars {
        inverters,
        a,
        coef_maps: reduced.map(|r| r.into_iter().map(|b| b.coefs).collect()),
        b,
        d,
        gamma,
        box_rows,
        dev_rows,
    };
    Ok((pb.build()?, vars))
}

/// `(1/S)·Σd + μ·Σγ` at `x`, leaving out any tie-break term.
fn training_objective(vars: &TrainingVars, cfg: &TrainConfig, x: &[f64], s: usize) -> f64 {
    let d: f64 = vars.d.iter().map(|&j| x[j]).sum::<f64>() / s as f64;
    let g: f64 = vars.gamma.iter().flatten().map(|&j| x[j]).sum();
    d + cfg.mu * g
}

/// Solves at `solver_tol`, accepting a stalled run whose residuals still meet `tol`.
pub(crate) fn solve_training(program: &ConeProgram, cfg: &TrainConfig) -> Result<ConeSolution> {
    conic::solve_with(program, &cfg.settings())?.into_result()
}

/// Trains rules on `scen` and checks that they respect the training limits.
pub fn train(scen: &ScenarioSet, sens: &Sensitivities, cfg: &TrainConfig) -> Result<RuleSet> {
    Ok(train_detailed(scen, sens, cfg)?.0)
}

/// Like [`train`], also returning the raw solver output and variable layout.
pub fn train_detailed(
    scen: &ScenarioSet,
    sens: &Sensitivities,
    cfg: &TrainConfig,
) -> Result<(RuleSet, ConeSolution, TrainingVars)> {
    cfg.validate()?;
    scen.validate()?;
    let grams = build_grams(scen, cfg)?;
    let (program, vars) = assemble_indexed(scen, &grams, sens, cfg)?;
    let sol = solve_training(&program, cfg)?;
    let inputs = kernel_inputs(scen, &vars.inverters, cfg.drop_intercept);
    let rules: Vec<InverterRule> = vars
        .inverters
        .iter()
        .enumerate()
        .map(|(k, &bus)| InverterRule {
            bus: bus + 1,
            kernel: cfg.kernel_for(bus + 1),
            a: vars.coefficients(k, &sol.x),
            b: vars.b.as_ref().map(|b| sol.x[b[k]]),
            z_train: inputs[k].clone(),
            norm_stats: scen.norm_stats[bus].clone(),
        })
        .collect();
    let rules = RuleSet {
        rules,
        meta: RuleMeta {
            objective: cfg.objective,
            mu: cfg.mu,
            n_buses: scen.n(),
            scenarios: scen.s(),
            window: scen.window.clone(),
            layout: scen.layout.clone(),
            train_objective: training_objective(&vars, cfg, &sol.x, scen.s()),
            primal_res: sol.primal_res,
            dual_res: sol.dual_res,
            gap: sol.gap,
            iterations: sol.iterations,
            gram_factor: GRAM_FACTOR.to_string(),
        },
    };
    check_training_feasibility(&rules, scen, &grams.k)?;
    Ok((rules, sol, vars))
}

/// Combined constraint multiplier `ω[k][s]` of each inverter output, the
/// derivative of `Σ_r z_r·row_r` with respect to `q_{k,s}`. At an optimum
/// with `μ > 0` the coefficients satisfy `K_k (ω_k + μ·a_k/γ_k) = 0`, so a
/// vanishing `ω` is what makes `a` vanish. Pinned outputs contribute nothing.
pub fn output_multipliers(
    sens: &Sensitivities,
    cfg: &TrainConfig,
    sol: &ConeSolution,
    vars: &TrainingVars,
) -> Vec<Vec<f64>> {
    let z = &sol.z;
    let n = sens.n();
    vars.inverters
        .iter()
        .enumerate()
        .map(|(k, &bus)| {
            vars.dev_rows
                .iter()
                .enumerate()
                .map(|(si, rows)| {
                    let mut w = vars.box_rows[k][si].map_or(0.0, |r| z[r + 1] - z[r]);
                    for i in 0..n {
                        let x = sens.x[(i, bus)];
                        w += x * match cfg.objective {
                            Objective::DeltaTau { .. } => z[rows.start + 1 + i],
                            Objective::DeltaEps { .. } => z[rows.start + 3 * i + 2] - z[rows.start + 3 * i + 1],
                            Objective::DeltaS => 2.0 * z[rows.start + 2 + i],
                        };
                    }
                    w
                })
                .collect()
        })
        .collect()
}

fn check_training_feasibility(rules: &RuleSet, scen: &ScenarioSet, k: &[DMatrix<f64>]) -> Result<()> {
    for (r, km) in rules.rules.iter().zip(k) {
        for si in 0..scen.s() {
            let q: f64 = (0..scen.s()).map(|j| km[(si, j)] * r.a[j]).sum::<f64>() + r.b.unwrap_or(0.0);
            let qb = scen.q_bar[si][r.bus - 1];
            if q.abs() > qb + FEAS_TOL {
                return Err(Error::Training(format!(
                    "bus {} scenario {si}: output {q:.3e} exceeds limit {qb:.3e}",
                    r.bus
                )));
            }
        }
    }
    Ok(())
}

/// Per-scenario outputs `q_s` (length N, zero at buses without a rule) of
/// `rules` evaluated at the scenario inputs, optionally clamped to the
/// scenario limits.
pub fn scenario_outputs(rules: &RuleSet, scen: &ScenarioSet, clamp: bool) -> Vec<Vec<f64>> {
    (0..scen.s())
        .map(|si| {
            let mut q = vec![0.0; scen.n()];
            for r in &rules.rules {
                let z = &scen.z[r.bus - 1][si];
                let z = if r.b.is_none() { augment_input(z) } else { z.clone() };
                let mut v = r.output_prepared(&z);
                if clamp {
                    let qb = scen.q_bar[si][r.bus - 1];
                    v = v.clamp(-qb, qb);
                }
                q[r.bus - 1] = v;
            }
            q
        })
        .collect()
}

/// Voltage deviations `X q_s + y_s` for per-scenario outputs `q`.
pub fn deviations(sens: &Sensitivities, scen: &ScenarioSet, q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    q.iter()
        .zip(&scen.y)
        .map(|(qs, ys)| {
            let xq = &sens.x * nalgebra::DVector::from_column_slice(qs);
            xq.iter().zip(ys).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// Average cost `(1/S)·Σ_s Δ(q_s; y_s)` of the rules on the training
/// scenarios, outputs unclamped.
pub fn training_cost(rules: &RuleSet, scen: &ScenarioSet, sens: &Sensitivities, objective: &Objective) -> f64 {
    let q = scenario_outputs(rules, scen, false);
    let dv = deviations(sens, scen, &q);
    dv.iter().map(|d| objective.cost(d)).sum::<f64>() / scen.s() as f64
}
