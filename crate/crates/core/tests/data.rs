mod common;

use prognostics_core::datagen::{
    generate_fleet, generate_scenario_fleets, make_scenario, FleetSpec, GeneratorConfig, SignatureModel, UnitTrajectory,
};
use prognostics_core::preprocess::csv::{read_fleet, write_fleet};
use prognostics_core::preprocess::{
    build_samples, cycle_steps, fit_scaler, make_windows, rul_targets, PreprocessConfig, ScalerStats, ScalingMode,
    DEFAULT_TAU, RUL_SCALE,
};
use proptest::prelude::*;

fn small(seed: u64, faults: &[&str]) -> GeneratorConfig {
    GeneratorConfig {
        n_units: 4,
        cycles_per_unit: [10, 16],
        seconds_per_cycle: [30, 50],
        faulty_components: faults.iter().map(|s| s.to_string()).collect(),
        seed,
        ..GeneratorConfig::default()
    }
}

fn check_unit_invariants(u: &UnitTrajectory, tau: f64) {
    u.validate().unwrap();
    let onset = u.onset_cycle().expect("every unit fails");
    for (q0, c) in u.cycles.iter().enumerate() {
        let q = q0 + 1;
        assert_eq!(c.hs, u8::from(q >= onset));
        if q < onset {
            assert!(c.theta().iter().all(|&t| t == 0.0));
        }
        if q0 > 0 {
            let prev = u.cycles[q0 - 1].theta();
            assert!(c.theta().iter().zip(&prev).all(|(a, b)| a <= b));
        }
    }
    let last = rul_targets(u).unwrap();
    assert_eq!(*last.last().unwrap(), 0.0);
    let concepts = u.concepts(tau);
    for w in concepts.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
    }
}

#[test]
fn generated_units_satisfy_invariants() {
    for seed in 0..5 {
        for faults in [&["HPT"][..], &["LPT"], &["HPT", "LPT"]] {
            let cfg = small(seed, faults);
            for u in generate_fleet(&cfg, "F").unwrap() {
                check_unit_invariants(&u, cfg.tau);
                let failed = u.faulty_components(cfg.tau);
                assert_eq!(failed.len(), faults.len(), "{}", u.id());
            }
        }
    }
}

#[test]
fn noise_free_measurements_are_reconstructible() {
    let cfg = GeneratorConfig { sensor_noise_std: 0.0, ..small(3, &["HPT", "LPT"]) };
    let sig = SignatureModel::draw(&cfg);
    for u in generate_fleet(&cfg, "F").unwrap() {
        for c in &u.cycles {
            for (w, x) in c.ops.iter().zip(&c.measurements) {
                assert_eq!(&sig.measurements(w, &c.theta()), x);
            }
        }
    }
}

#[test]
fn fleets_are_deterministic_and_split_by_unit() {
    let cfg = small(9, &["HPT"]);
    assert_eq!(generate_fleet(&cfg, "F").unwrap(), generate_fleet(&cfg, "F").unwrap());
    let base = GeneratorConfig { n_units: 10, ..small(1, &["HPT"]) };
    let specs: Vec<FleetSpec> = ["HPT", "LPT", "HPT", "LPT"]
        .iter()
        .enumerate()
        .map(|(i, f)| FleetSpec { name: format!("DS{i}"), faults: vec![f.to_string()] })
        .collect();
    let train: Vec<u32> = (1..=6).collect();
    let test: Vec<u32> = (7..=10).collect();
    let s = make_scenario(&base, &specs, &train, &test).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (24, 16));
    assert!(make_scenario(&base, &specs, &train, &[]).is_err());
    let combined = [FleetSpec { name: "C".into(), faults: vec!["HPT".into(), "LPT".into()] }];
    let fleets = generate_scenario_fleets(&base, &combined).unwrap();
    assert!(fleets[0].1.iter().all(|u| u.faulty_components(base.tau).len() == 2));
}

#[test]
fn windows_follow_subsampled_steps() {
    let cfg = small(4, &["LPT"]);
    let pre = PreprocessConfig::default();
    let units = generate_fleet(&cfg, "F").unwrap();
    let scaler = fit_scaler(&units, &pre).unwrap();
    let samples = build_samples::<f64>(&units, &pre, &scaler, &[0, 1]).unwrap();
    let mut expected = 0;
    for u in &units {
        let ruls = rul_targets(u).unwrap();
        for q in 0..u.n_cycles() {
            let steps = cycle_steps(u, q, pre.subsample).unwrap();
            assert_eq!(steps.len(), u.cycles[q].seconds().div_ceil(pre.subsample));
            assert_eq!(make_windows::<f64>(&steps, pre.window, pre.stride).unwrap().len(), steps.len());
            expected += steps.len();
            let first = samples.iter().find(|s| s.unit_id == u.id() && s.cycle == q + 1).unwrap();
            assert_eq!(first.rul_target, ruls[q] / RUL_SCALE);
            assert_eq!(first.concepts, u.concepts(DEFAULT_TAU)[q]);
        }
    }
    assert_eq!(samples.len(), expected);
    assert!(samples.iter().all(|s| s.window.is_finite() && s.rul_target >= 0.0));
}

#[test]
fn csv_round_trip_preserves_units() {
    let cfg = small(5, &["HPT"]);
    let units = generate_fleet(&cfg, "DS01").unwrap();
    let mut buf = Vec::new();
    write_fleet(&mut buf, &units).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("unit,cycle,t,w1,w2,w3,w4,x1,"));
    assert!(!text.contains('\r'));
    let back = read_fleet(buf.as_slice(), "DS01").unwrap();
    assert_eq!(back, units);
    let rows = text.lines().count() - 1;
    assert_eq!(rows, units.iter().map(UnitTrajectory::total_seconds).sum::<usize>());
}

proptest! {
    #[test]
    fn scaler_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30),
        minmax in any::<bool>(),
    ) {
        let mode = if minmax { ScalingMode::MinMax } else { ScalingMode::Standard };
        let Ok(s) = ScalerStats::fit(rows.iter().map(|r| &r[..]), mode) else {
            return Ok(());
        };
        for r in &rows {
            let back = s.invert(&s.apply(r).unwrap()).unwrap();
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn window_count_equals_step_count(n in 1usize..120, size in 1usize..60) {
        let steps = vec![[1.0; 18]; n];
        let ws = make_windows::<f64>(&steps, size, 1).unwrap();
        prop_assert_eq!(ws.len(), n);
        prop_assert!(ws.iter().all(|w| w.shape() == [18, size]));
    }

    #[test]
    fn generated_concepts_are_monotone(seed in 0u64..1000) {
        let cfg = GeneratorConfig { n_units: 2, cycles_per_unit: [5, 9], seconds_per_cycle: [2, 4], ..small(seed, &["HPT", "LPT"]) };
        for u in generate_fleet(&cfg, "F").unwrap() {
            check_unit_invariants(&u, cfg.tau);
        }
    }
}
