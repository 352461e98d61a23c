use nalgebra::DMatrix;
use proptest::prelude::*;
use voltkernel::feeder::{self, build_sensitivities, Sensitivities};
use voltkernel::kernel::{gram, KernelSpec};
use voltkernel::scenario::{build_scenarios, synthesize_profiles, GeneratorConfig, InputLayout, NormStats, ScenarioSet};
use voltkernel::trainer::*;
use voltkernel::Error;

fn fixture(start: usize, len: usize) -> (ScenarioSet, Sensitivities) {
    let f = feeder::bundled_13bus();
    let sens = build_sensitivities(&f);
    let p = synthesize_profiles(&f, &GeneratorConfig::default()).unwrap();
    let sc = build_scenarios(&f, &p, start..start + len, &sens, &InputLayout::default(), true).unwrap();
    (sc, sens)
}

/// One bus, one scenario, reactance `x`, uncontrolled deviation `d`.
fn single_bus(x: f64, d: f64, q_bar: f64) -> (ScenarioSet, Sensitivities) {
    let sc = ScenarioSet {
        y: vec![vec![d]],
        q_bar: vec![vec![q_bar]],
        z: vec![vec![vec![0.3, -0.2, 0.1]]],
        norm_stats: vec![NormStats::identity(3)],
        layout: InputLayout::default(),
        s_bar: vec![q_bar],
        window: 0..1,
        normalized: false,
    };
    let sens = Sensitivities {
        r: DMatrix::from_element(1, 1, x),
        x: DMatrix::from_element(1, 1, x),
        v0: 1.0,
    };
    (sc, sens)
}

/// Coarse-to-fine grid minimization of `f` over `[lo, hi]`.
fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (min, max) = (lo, hi);
    let (mut lo, mut hi) = (lo, hi);
    let mut best = lo;
    for _ in 0..8 {
        let step = (hi - lo) / 200.0;
        let mut best_v = f64::INFINITY;
        for i in 0..=200 {
            let q = lo + step * i as f64;
            let v = f(q);
            if v < best_v {
                best_v = v;
                best = q;
            }
        }
        lo = (best - step).max(min);
        hi = (best + step).min(max);
    }
    best
}

fn tau_cfg(tau: f64, mu: f64, kernel: KernelSpec) -> TrainConfig {
    TrainConfig {
        objective: Objective::DeltaTau { tau },
        mu,
        kernel,
        ..TrainConfig::default()
    }
}

#[test]
fn single_bus_output_cancels_the_deviation() {
    let (x, d, tau) = (0.05, 0.01, 1e-9);
    let (sc, sens) = single_bus(x, d, 1.0);
    let rules = train(&sc, &sens, &tau_cfg(tau, 0.0, KernelSpec::gaussian(1.0))).unwrap();
    let q = scenario_outputs(&rules, &sc, false)[0][0];
    let oracle = grid_argmin(|q| ((x * q + d).abs() - tau).max(0.0) + 1e-3 * (x * q + d).abs(), -1.0, 1.0);
    assert!((q - oracle).abs() < 1e-6, "{q} vs {oracle}");
    assert!((q + d / x).abs() < 1e-6);
}

#[test]
fn single_bus_output_saturates_at_its_limit() {
    let (x, d, tau) = (0.05, 0.01, 1e-9);
    let q_bar = 0.1;
    let (sc, sens) = single_bus(x, d, q_bar);
    let rules = train(&sc, &sens, &tau_cfg(tau, 0.0, KernelSpec::gaussian(1.0))).unwrap();
    let q = scenario_outputs(&rules, &sc, false)[0][0];
    let oracle = grid_argmin(|q| ((x * q + d).abs() - tau).max(0.0), -q_bar, q_bar);
    assert!((q - oracle).abs() < 1e-6, "{q} vs {oracle}");
    assert!((q + q_bar).abs() < 1e-6);
}

#[test]
fn wide_deadband_needs_no_coefficients() {
    let (sc, sens) = fixture(120, 20);
    let max_y = sc.y.iter().map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let (rules, sol, vars) = train_detailed(&sc, &sens, &tau_cfg(1.5 * max_y, 1e-2, KernelSpec::gaussian(1.0))).unwrap();
    assert!(rules.rules.iter().flat_map(|r| &r.a).all(|a| a.abs() <= 1e-6));
    assert!(vars.d.iter().all(|&j| sol.x[j].abs() <= 1e-6));
    assert!(rules.meta.train_objective.abs() < 1e-6);
}

#[test]
fn nothing_to_correct_gives_zero_cost() {
    let (mut sc, sens) = fixture(0, 20);
    sc.y.iter_mut().flatten().for_each(|v| *v = 0.0);
    for objective in [Objective::DeltaS, Objective::DeltaTau { tau: 1e-3 }, Objective::DeltaEps { eps: 1e-3 }] {
        let cfg = TrainConfig { objective, mu: 1e-3, ..TrainConfig::default() };
        let rules = train(&sc, &sens, &cfg).unwrap();
        assert!(rules.meta.train_objective.abs() < 1e-6, "{objective:?}");
        if objective == Objective::DeltaS {
            let q = scenario_outputs(&rules, &sc, false);
            assert!(q.iter().flatten().all(|v| v.abs() < 1e-4), "{q:?}");
        }
    }
}

#[test]
fn trained_rules_beat_doing_nothing() {
    let (sc, sens) = fixture(180, 30);
    let cfg = tau_cfg(1e-3, 1e-3, KernelSpec::gaussian(1.0));
    let rules = train(&sc, &sens, &cfg).unwrap();
    let zero: f64 = sc.y.iter().map(|y| cfg.objective.cost(y)).sum::<f64>() / sc.s() as f64;
    let trained = training_cost(&rules, &sc, &sens, &cfg.objective);
    assert!(zero > 1e-4, "window should need control");
    assert!(trained <= zero, "{trained} > {zero}");
}

#[test]
fn rules_respect_training_limits() {
    let (sc, sens) = fixture(240, 30);
    let rules = train(&sc, &sens, &tau_cfg(2e-3, 1e-3, KernelSpec::gaussian(1.0))).unwrap();
    let q = scenario_outputs(&rules, &sc, false);
    for (qs, qb) in q.iter().zip(&sc.q_bar) {
        for (v, b) in qs.iter().zip(qb) {
            assert!(v.abs() <= b + 1e-6);
        }
    }
    for r in &rules.rules {
        assert_eq!(r.z_train.len(), r.a.len());
    }
}

#[test]
fn larger_regularization_switches_off_inverters() {
    let (sc, sens) = fixture(300, 30);
    let inactive = |mu: f64| {
        let cfg = TrainConfig {
            drop_intercept: true,
            ..tau_cfg(2e-3, mu, KernelSpec::gaussian(1.0))
        };
        sparsity_report(&train(&sc, &sens, &cfg).unwrap(), 1e-6).inactive_inverters.len()
    };
    let (lo, hi) = (inactive(1e-4), inactive(1e-2));
    assert!(hi >= lo, "{lo} -> {hi}");
}

#[test]
fn solver_objective_matches_recomputed_cost() {
    let (sc, sens) = fixture(200, 25);
    for objective in [Objective::DeltaTau { tau: 2e-3 }, Objective::DeltaEps { eps: 2e-3 }, Objective::DeltaS] {
        let cfg = TrainConfig { objective, mu: 1e-3, ..TrainConfig::default() };
        let rules = train(&sc, &sens, &cfg).unwrap();
        let reg: f64 = rules
            .rules
            .iter()
            .map(|r| {
                let k = gram(&r.kernel, &r.z_train);
                let a = nalgebra::DVector::from_column_slice(&r.a);
                a.dot(&(&k * &a)).max(0.0).sqrt()
            })
            .sum();
        let recomputed = training_cost(&rules, &sc, &sens, &objective) + cfg.mu * reg;
        assert!(
            (recomputed - rules.meta.train_objective).abs() <= 1e-6,
            "{objective:?}: {recomputed} vs {}",
            rules.meta.train_objective
        );
    }
}

#[test]
fn deviations_grow_along_a_deadband_sweep() {
    let (sc, sens) = fixture(240, 30);
    let mut last = 0.0;
    for tau in [5e-4, 1e-3, 2e-3, 4e-3, 8e-3] {
        let rules = train(&sc, &sens, &tau_cfg(tau, 1e-3, KernelSpec::gaussian(1.0))).unwrap();
        let avg = training_cost(&rules, &sc, &sens, &Objective::DeltaS);
        assert!(avg >= last - 1e-9, "tau {tau}: {avg} < {last}");
        last = avg;
    }
}

fn hypotheses_margin(cfg: &TrainConfig) -> f64 {
    10.0 * cfg.tol
}

#[test]
fn quiet_scenarios_get_no_coefficients() {
    for start in [60, 300] {
        let (sc, sens) = fixture(start, 30);
        let cfg = tau_cfg(3e-3, 1e-3, KernelSpec::gaussian(3.0));
        let tau = 3e-3;
        let margin = hypotheses_margin(&cfg);
        let rules = train(&sc, &sens, &cfg).unwrap();
        let q = scenario_outputs(&rules, &sc, false);
        let dv = deviations(&sens, &sc, &q);
        for s in 0..sc.s() {
            if dv[s].iter().map(|v| v * v).sum::<f64>().sqrt() > tau - margin {
                continue;
            }
            for r in &rules.rules {
                if q[s][r.bus - 1].abs() <= sc.q_bar[s][r.bus - 1] - margin {
                    assert!(r.a[s].abs() <= cfg.zero_tol, "start {start} s {s} bus {}: {}", r.bus, r.a[s]);
                }
            }
        }
    }
}

#[test]
fn violating_scenarios_use_every_inverter() {
    let (sc, sens) = fixture(240, 30);
    let eps = 2e-3;
    let cfg = TrainConfig {
        objective: Objective::DeltaEps { eps },
        mu: 1e-3,
        kernel: KernelSpec::linear(),
        ..TrainConfig::default()
    };
    let (rules, sol, vars) = train_detailed(&sc, &sens, &cfg).unwrap();
    let w = output_multipliers(&sens, &cfg, &sol, &vars);
    let q = scenario_outputs(&rules, &sc, false);
    let dv = deviations(&sens, &sc, &q);
    let mut checked = 0;
    for s in 0..sc.s() {
        if dv[s].iter().fold(0.0f64, |m, v| m.max(v.abs())) < eps + hypotheses_margin(&cfg) {
            continue;
        }
        for (k, r) in rules.rules.iter().enumerate() {
            let gamma = sol.x[vars.gamma.as_ref().unwrap()[k]];
            if gamma / cfg.mu * w[k][s].abs() < 1e-9 {
                continue;
            }
            checked += 1;
            assert!(r.a[s].abs() > 1e-9, "s {s} bus {}: {}", r.bus, r.a[s]);
        }
    }
    assert!(checked > 0);
}

#[test]
fn coefficients_follow_the_constraint_multipliers() {
    let (sc, sens) = fixture(120, 20);
    let cfg = tau_cfg(2e-3, 1e-2, KernelSpec::gaussian(1.0));
    let (rules, sol, vars) = train_detailed(&sc, &sens, &cfg).unwrap();
    let w = output_multipliers(&sens, &cfg, &sol, &vars);
    for (k, r) in rules.rules.iter().enumerate() {
        let scale = sol.x[vars.gamma.as_ref().unwrap()[k]] / cfg.mu;
        for (a, wk) in r.a.iter().zip(&w[k]) {
            assert!((a - scale * wk).abs() < 1e-4, "{a} vs {}", scale * wk);
        }
    }
}

#[test]
fn invalid_thresholds_are_rejected() {
    let (sc, sens) = fixture(0, 10);
    for objective in [Objective::DeltaTau { tau: 0.0 }, Objective::DeltaEps { eps: -1.0 }] {
        let cfg = TrainConfig { objective, ..TrainConfig::default() };
        assert!(matches!(train(&sc, &sens, &cfg), Err(Error::InvalidParameter(_))));
    }
    let cfg = TrainConfig { mu: -1.0, ..TrainConfig::default() };
    assert!(matches!(train(&sc, &sens, &cfg), Err(Error::InvalidParameter(_))));
}

#[test]
fn mismatched_sensitivities_are_rejected() {
    let (sc, _) = fixture(0, 10);
    let (_, small) = single_bus(0.05, 0.01, 1.0);
    let cfg = TrainConfig::default();
    let grams = build_grams(&sc, &cfg).unwrap();
    assert!(matches!(assemble(&sc, &grams, &small, &cfg), Err(Error::Dimension(_))));
}

#[test]
fn singleton_grid_is_returned() {
    let (sc, sens) = fixture(100, 20);
    let grid = vec![tau_cfg(2e-3, 1e-3, KernelSpec::gaussian(1.0))];
    assert_eq!(cross_validate(&sc, &sens, &grid).unwrap(), grid[0]);
}

#[test]
fn duplicate_grid_points_tie_to_the_first() {
    let (sc, sens) = fixture(100, 20);
    let a = tau_cfg(2e-3, 1e-3, KernelSpec::gaussian(1.0));
    let b = TrainConfig { cv_folds: 5, ..a.clone() };
    let marked = TrainConfig { zero_tol: 2e-6, ..a.clone() };
    let scores = cv_scores(&sc, &sens, &[a.clone(), b]).unwrap();
    assert_eq!(scores[0], scores[1]);
    assert_eq!(cross_validate(&sc, &sens, &[marked.clone(), a]).unwrap(), marked);
}

#[test]
fn heavy_regularization_validates_worse() {
    let (sc, sens) = fixture(240, 20);
    let scores = cv_scores(
        &sc,
        &sens,
        &[
            tau_cfg(1e-3, 0.0, KernelSpec::linear().with_jitter(0.0)),
            tau_cfg(1e-3, 1e3, KernelSpec::linear().with_jitter(0.0)),
        ],
    )
    .unwrap();
    assert!(scores[1] >= scores[0], "{scores:?}");
}

#[test]
fn too_few_scenarios_for_the_folds() {
    let (sc, sens) = fixture(0, 4);
    let grid = vec![TrainConfig::default()];
    assert!(matches!(cv_scores(&sc, &sens, &grid), Err(Error::InvalidParameter(_))));
    assert!(matches!(cv_scores(&sc, &sens, &[]), Err(Error::InvalidParameter(_))));
}

fn small_rules() -> RuleSet {
    let (sc, sens) = fixture(100, 6);
    train(&sc, &sens, &tau_cfg(2e-3, 1e-3, KernelSpec::gaussian(1.0))).unwrap()
}

#[test]
fn sparsity_of_all_zero_rules() {
    let mut rules = small_rules();
    rules.rules.iter_mut().for_each(|r| r.a.iter_mut().for_each(|a| *a = 0.0));
    let rep = sparsity_report(&rules, 1e-6);
    assert_eq!(rep.frac_nonzero_overall, 0.0);
    assert!(rep.support_scenarios.is_empty());
    assert_eq!(rep.inactive_inverters.len(), rules.rules.len());
}

#[test]
fn sparsity_of_a_single_coefficient() {
    let mut rules = small_rules();
    rules.rules.iter_mut().for_each(|r| r.a.iter_mut().for_each(|a| *a = 0.0));
    rules.rules[0].a[3] = 0.5;
    let rep = sparsity_report(&rules, 1e-6);
    assert_eq!(rep.support_scenarios, vec![3]);
    let total: usize = rules.rules.iter().map(|r| r.a.len()).sum();
    assert_eq!(rep.frac_nonzero_overall, 1.0 / total as f64);
    assert_eq!(rep.frac_nonzero_per_inverter[0], 1.0 / 6.0);
    assert_eq!(rep.inactive_inverters.len(), rules.rules.len() - 1);
}

#[test]
fn json_round_trip_is_exact() {
    let rules = small_rules();
    let pruned = rules.pruned(1e-6);
    let back = RuleSet::from_json(&pruned.to_json()).unwrap();
    assert_eq!(back, pruned);
    let folded = {
        let (sc, sens) = fixture(100, 6);
        let cfg = TrainConfig {
            drop_intercept: true,
            ..tau_cfg(2e-3, 1e-3, KernelSpec::gaussian(1.0))
        };
        train(&sc, &sens, &cfg).unwrap()
    };
    let text = folded.to_json();
    assert!(!text.contains("\"b\""));
    assert_eq!(RuleSet::from_json(&text).unwrap(), folded);
    assert!(matches!(RuleSet::from_json("{}"), Err(Error::Parse(_))));
}

#[test]
fn training_inputs_reproduce_gram_rows() {
    let rules = small_rules();
    for r in &rules.rules {
        let k = gram(&r.kernel, &r.z_train);
        for (s, z) in r.z_train.iter().enumerate() {
            let expect: f64 = (0..r.a.len()).map(|j| k[(s, j)] * r.a[j]).sum::<f64>() + r.b.unwrap_or(0.0);
            assert!((r.output_prepared(z) - expect).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn trained_rules_are_feasible_on_their_scenarios(start in 0usize..440, mu in 1e-4f64..1e-2, tau in 5e-4f64..5e-3) {
        let (sc, sens) = fixture(start, 20);
        let rules = train(&sc, &sens, &tau_cfg(tau, mu, KernelSpec::gaussian(1.0))).unwrap();
        let q = scenario_outputs(&rules, &sc, false);
        for (qs, qb) in q.iter().zip(&sc.q_bar) {
            for (v, b) in qs.iter().zip(qb) {
                prop_assert!(v.abs() <= b + 1e-6);
            }
        }
        let rep = sparsity_report(&rules, 1e-6);
        prop_assert!((0.0..=1.0).contains(&rep.frac_nonzero_overall));
        prop_assert!(rep.frac_nonzero_per_inverter.iter().all(|f| (0.0..=1.0).contains(f)));
    }
}
