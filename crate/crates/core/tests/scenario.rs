use proptest::prelude::*;
use voltkernel::feeder::{self, build_sensitivities};
use voltkernel::scenario::{self, build_scenarios, synthesize_profiles, GeneratorConfig, InputLayout, ProfileSet};
use voltkernel::Error;

fn profiles(seed: u64) -> ProfileSet {
    let f = feeder::bundled_13bus();
    synthesize_profiles(&f, &GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap()
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(profiles(3), profiles(3));
    assert_ne!(profiles(3), profiles(4));
}

#[test]
fn generated_profiles_follow_the_scaling_recipe() {
    let f = feeder::bundled_13bus();
    let p = profiles(11);
    assert_eq!(p.len(), 480);
    assert_eq!(p.timestamps[0], 480);
    p.validate().unwrap();
    let solar = scenario::solar_buses(12, 0.75);
    for b in 0..12 {
        let peak = p.p_c.iter().map(|r| r[b]).fold(0.0, f64::max);
        assert!((peak - 1.5 * f.buses[b + 1].p_nom).abs() < 1e-12);
        // fixed power factor within the configured range
        let pf: Vec<f64> = p.p_c.iter().zip(&p.q_c).map(|(pc, qc)| pc[b] / pc[b].hypot(qc[b])).collect();
        assert!(pf.iter().all(|v| (0.9 - 1e-12..=0.95 + 1e-12).contains(v)));
        assert!(pf.iter().all(|v| (v - pf[0]).abs() < 1e-9));
        let gen_peak = p.p_g.iter().map(|r| r[b]).fold(0.0, f64::max);
        assert_eq!(p.s_bar[b], 1.1 * gen_peak);
        assert_eq!(gen_peak > 0.0, solar[b]);
    }
    assert_eq!(p.inverter_buses(), vec![1, 2, 3, 5, 6, 7, 9, 10, 11]);
}

#[test]
fn generator_rejects_bad_config() {
    let f = feeder::bundled_13bus();
    let bad = |cfg: GeneratorConfig| matches!(synthesize_profiles(&f, &cfg), Err(Error::InvalidParameter(_)));
    assert!(bad(GeneratorConfig { penetration: 1.5, ..Default::default() }));
    assert!(bad(GeneratorConfig { penetration: -0.1, ..Default::default() }));
    assert!(bad(GeneratorConfig { horizon_min: 1, ..Default::default() }));
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.csv");
    let p = profiles(5);
    p.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,bus,p_c,q_c,p_g\n"));
    assert_eq!(text.lines().count(), 1 + 480 * 12);
    assert_eq!(ProfileSet::read_csv(&path, 1.1).unwrap(), p);
}

#[test]
fn scenarios_from_dead_feeder_have_zero_y() {
    let f = feeder::bundled_13bus();
    let sens = build_sensitivities(&f);
    let p = profiles(1).scaled(0.0);
    let sc = build_scenarios(&f, &p, 0..30, &sens, &InputLayout::default(), false).unwrap();
    assert!(sc.y.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn raw_inputs_pass_through_without_normalization() {
    let f = feeder::bundled_13bus();
    let sens = build_sensitivities(&f);
    let p = profiles(2);
    let layout = InputLayout { local: true, remote_lines: vec![1, 6] };
    let sc = build_scenarios(&f, &p, 100..130, &sens, &layout, false).unwrap();
    assert_eq!(sc.s(), 30);
    for (k, t) in (100..130).enumerate() {
        for b in 0..12 {
            let z = &sc.z[b][k];
            assert_eq!(z[0], scenario_qbar(&p, t, b));
            assert_eq!(z[1], p.p_c[t][b] - p.p_g[t][b]);
            assert_eq!(z[2], p.q_c[t][b]);
        }
        // the line into bus 1 carries the whole feeder's net load
        let total: f64 = (0..12).map(|b| p.p_c[t][b] - p.p_g[t][b]).sum();
        assert!((sc.z[0][k][3] - total).abs() < 1e-12);
    }
}

fn scenario_qbar(p: &ProfileSet, t: usize, b: usize) -> f64 {
    (p.s_bar[b].powi(2) - p.p_g[t][b].powi(2)).max(0.0).sqrt()
}

#[test]
fn normalized_inputs_are_centered() {
    let f = feeder::bundled_13bus();
    let sens = build_sensitivities(&f);
    let p = profiles(2);
    let sc = build_scenarios(&f, &p, 200..230, &sens, &InputLayout::default(), true).unwrap();
    for zn in &sc.z {
        for e in 0..3 {
            let mean: f64 = zn.iter().map(|z| z[e]).sum::<f64>() / 30.0;
            assert!(mean.abs() < 1e-9, "{mean}");
        }
    }
}

#[test]
fn scenario_errors() {
    let f = feeder::bundled_13bus();
    let sens = build_sensitivities(&f);
    let p = profiles(2);
    let empty = build_scenarios(&f, &p, 5..5, &sens, &InputLayout::default(), true);
    assert!(matches!(empty, Err(Error::InvalidParameter(_))));
    let layout = InputLayout { local: true, remote_lines: vec![13] };
    let bad_line = build_scenarios(&f, &p, 0..30, &sens, &layout, true);
    assert!(matches!(bad_line, Err(Error::InvalidParameter(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn limits_stay_inside_the_rating_disk(seed in 0u64..500, start in 0usize..400) {
        let f = feeder::bundled_13bus();
        let sens = build_sensitivities(&f);
        let p = profiles(seed);
        let sc = build_scenarios(&f, &p, start..start + 30, &sens, &InputLayout::default(), true).unwrap();
        for (k, t) in (start..start + 30).enumerate() {
            for b in 0..12 {
                let qb = sc.q_bar[k][b];
                prop_assert!(qb >= 0.0 && qb <= p.s_bar[b]);
                prop_assert!(p.p_g[t][b].powi(2) + qb * qb <= p.s_bar[b].powi(2) + 1e-12);
            }
        }
    }

    #[test]
    fn y_is_linear_in_the_profiles(seed in 0u64..500, alpha in 0.1f64..3.0) {
        let f = feeder::bundled_13bus();
        let sens = build_sensitivities(&f);
        let p = profiles(seed);
        let a = build_scenarios(&f, &p, 0..10, &sens, &InputLayout::default(), false).unwrap();
        let b = build_scenarios(&f, &p.scaled(alpha), 0..10, &sens, &InputLayout::default(), false).unwrap();
        for (ya, yb) in a.y.iter().flatten().zip(b.y.iter().flatten()) {
            prop_assert!((alpha * ya - yb).abs() <= 1e-12 * (1.0 + yb.abs()));
        }
    }
}
