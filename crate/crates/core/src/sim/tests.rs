use proptest::prelude::*;

use super::*;
use crate::fixtures;

fn flat_series(value: f64, n: usize) -> ForecastSeries {
    ForecastSeries {
        p_load_kw: vec![value; n],
        p_pv_kw: vec![2.0 * value; n],
        dt_hours: 1.0 / 12.0,
    }
}

#[test]
fn zero_sigma_forecast_is_the_base() {
    let base = flat_series(3.0, 8);
    assert_eq!(generate_forecasts(&base, 0.0, 1), base);
}

#[test]
fn forecasts_repeat_under_a_seed() {
    let base = flat_series(3.0, 48);
    let a = generate_forecasts(&base, 0.1, 42);
    assert_eq!(a, generate_forecasts(&base, 0.1, 42));
    assert_ne!(a, generate_forecasts(&base, 0.1, 43));
    assert!(a.p_load_kw.iter().all(|&v| v >= 0.0));
}

#[test]
fn forecast_noise_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let mean = (0..n)
        .map(|_| perturb(&[5.0], 0.1, &mut rng)[0] / 5.0)
        .sum::<f64>()
        / n as f64;
    assert!((0.99..=1.01).contains(&mean), "{mean}");
}

#[test]
fn heavy_noise_clamps_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = perturb(&[1.0; 500], 3.0, &mut rng);
    assert!(out.iter().all(|&v| v >= 0.0));
    assert!(out.contains(&0.0));
}

#[test]
fn scenario_rows() {
    assert_eq!(ScenarioSpec::named(3).export_pct().unwrap(), [30.0, 0.0, 150.0]);
    let mut s = ScenarioSpec::named(1);
    s.pv_export_pct = Some([150.0, 0.0, 30.0]);
    assert!(s.export_pct().is_ok());
    s.pv_export_pct = Some([150.0, 0.0, 31.0]);
    assert!(s.export_pct().is_err());
    assert!(ScenarioSpec::named(5).export_pct().is_err());
    let custom = ScenarioSpec {
        pv_export_pct: Some([-1.0, 0.0, 0.0]),
        ..Default::default()
    };
    assert!(custom.export_pct().is_err());
}

#[test]
fn categories_default_to_round_robin() {
    let model = fixtures::ieee4_anoca();
    let s = ScenarioSpec::default();
    let cats: Vec<Category> = (0..3).map(|k| s.category(&model, k)).collect();
    assert_eq!(cats, Category::ALL);
    let named = fixtures::scenario("ieee4_anoca", 3);
    assert_eq!(named.category(&model, 1), Category::C);
}

#[test]
fn unknown_category_prosumer_rejected() {
    let model = fixtures::ieee4_anoca();
    let mut s = ScenarioSpec::named(1);
    s.categories.insert("ghost".into(), Category::B);
    assert!(s.check(&model).is_err());
}

#[test]
fn snapshot_setpoints_follow_the_table() {
    let model = fixtures::ieee4_anoca();
    let sp = scenario_setpoints(&model, &fixtures::scenario("ieee4_anoca", 3)).unwrap();
    let base: Vec<f64> = model.loads.iter().map(|l| l.p_kw).collect();
    assert!((sp[0].oes_kw - 0.3 * base[0]).abs() < 1e-12 && sp[0].ois_kw == 0.0);
    assert!((sp[1].oes_kw - 1.5 * base[1]).abs() < 1e-12);
    assert_eq!((sp[2].oes_kw, sp[2].ois_kw), (0.0, base[2]));
}

#[test]
fn window_must_divide_horizon() {
    let mut cfg = SimulationConfig::default();
    assert_eq!(cfg.window().unwrap(), 48);
    cfg.dt_minutes = 7.0;
    assert!(cfg.window().is_err());
    cfg.dt_minutes = 5.0;
    cfg.span = 0;
    assert!(cfg.window().is_err());
}

#[test]
fn profiles_wrap_and_interpolate() {
    let p = Profiles::from_csv("minute,load,pv\n0,1,0\n720,2,1\n").unwrap();
    assert!((p.load_at(360.0) - 1.5).abs() < 1e-12);
    assert!((p.load_at(1080.0) - 1.5).abs() < 1e-12);
    assert!((p.pv_at(1440.0 + 720.0) - 1.0).abs() < 1e-12);
    assert!(Profiles::from_csv("minute,load,pv\n10,1,0\n5,1,0\n").is_err());
    let s = Profiles::synthetic();
    assert_eq!(s.pv_at(3.0 * 60.0), 0.0);
    assert!((s.pv_at(12.0 * 60.0) - 1.0).abs() < 1e-12);
}

fn battery() -> BatteryParams {
    BatteryParams {
        e_max_kwh: 13.5,
        p_max_kw: 5.0,
        eta_c: 0.95,
        eta_d: 0.9,
        e_set_kwh: 6.75,
    }
}

fn plan(charge: f64, discharge: f64, import: f64, export: f64) -> HemsInterval {
    HemsInterval {
        tau: 0,
        p_charge: charge,
        p_discharge: discharge,
        p_import: import,
        p_export: export,
        p_spill: 0.0,
        soc_kwh: 0.0,
        z: u8::from(charge > 0.0),
    }
}

#[test]
fn curtailed_export_charges_before_spilling() {
    let b = battery();
    // 6 kW PV, 1 kW load, planned 5 kW export cut to 2 kW.
    let ex = execute_interval(&b, 1.0 / 12.0, 6.0, &plan(0.0, 0.0, 0.0, 5.0), 1.0, 6.0, 2.0);
    assert!((ex.charge - 3.0).abs() < 1e-12 && ex.spill == 0.0);
    // A nearly full battery takes what it can; the rest is spilled.
    let ex = execute_interval(&b, 1.0 / 12.0, 13.4, &plan(0.0, 0.0, 0.0, 5.0), 1.0, 6.0, 2.0);
    let room = 0.1 / (0.95 / 12.0);
    assert!((ex.charge - room).abs() < 1e-9);
    assert!((ex.spill - (3.0 - room)).abs() < 1e-9);
    assert!((ex.soc_kwh - 13.5).abs() < 1e-9);
}

proptest! {
    #[test]
    fn execution_conserves_power(
        soc in 0.0f64..13.5,
        charge in 0.0f64..5.0,
        discharge in 0.0f64..5.0,
        import in 0.0f64..8.0,
        load in 0.0f64..10.0,
        pv in 0.0f64..12.0,
        aes in 0.0f64..8.0,
        charging in any::<bool>(),
    ) {
        let b = battery();
        let dt = 1.0 / 12.0;
        let p = if charging { plan(charge, 0.0, import, aes) } else { plan(0.0, discharge, import, aes) };
        let ex = execute_interval(&b, dt, soc, &p, load, pv, aes);
        let lhs = pv + ex.discharge + ex.import;
        let rhs = load + ex.charge + aes + ex.spill;
        prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        prop_assert!(ex.charge * ex.discharge == 0.0);
        prop_assert!(ex.charge <= b.p_max_kw + 1e-12 && ex.discharge <= b.p_max_kw + 1e-12);
        prop_assert!(ex.import >= 0.0 && ex.spill >= 0.0 && ex.spill <= pv + 1e-9);
        prop_assert!((0.0..=b.e_max_kwh).contains(&ex.soc_kwh));
        let expected = soc + b.eta_c * ex.charge * dt - ex.discharge * dt / b.eta_d;
        prop_assert!((ex.soc_kwh - expected).abs() < 1e-9);
    }
}

fn short_config(span: usize) -> SimulationConfig {
    SimulationConfig {
        horizon_hours: 1.0,
        span,
        start_minute: 11.0 * 60.0,
        ..Default::default()
    }
}

#[test]
fn no_pv_means_no_curtailment() {
    let model = fixtures::ieee4_anoca();
    let run = run_simulation(
        &model,
        &short_config(3),
        &fixtures::scenario("ieee4_anoca", 3),
        &Profiles::without_pv(),
    )
    .unwrap();
    for r in &run.records {
        for p in &r.prosumers {
            assert_eq!(p.p_cu_kw, 0.0);
            assert_eq!(p.aes_kw, p.oes_kw);
        }
    }
}

#[test]
fn ieee4_step_curtails_some_prosumers_and_clears_the_band() {
    let model = fixtures::ieee4_anoca();
    let run = run_simulation(
        &model,
        &SimulationConfig::default(),
        &fixtures::scenario("ieee4_anoca", 3),
        &Profiles::synthetic(),
    )
    .unwrap();
    let r = &run.records[0];
    assert_eq!(r.dms.status, DmsStatus::Optimal);
    assert!(r.violations_before.unwrap() > 0);
    assert_eq!(r.violations_after, 0);
    let curtailed = r.prosumers.iter().filter(|p| p.p_cu_kw > 0.0).count();
    assert!((1..3).contains(&curtailed), "{:?}", r.prosumers);
    assert!(r.dms.v_min_pu >= 0.95 - 1e-6 && r.dms.v_max_pu <= 1.05 + 1e-6);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let model = fixtures::ieee4_anoca();
    let mut scenario = fixtures::scenario("ieee4_anoca", 3);
    scenario.noise_sigma = 0.1;
    scenario.rng_seed = 17;
    let cfg = SimulationConfig {
        on_dms_failure: DmsFailurePolicy::GrantOffers,
        ..short_config(3)
    };
    let a = run_simulation(&model, &cfg, &scenario, &Profiles::synthetic()).unwrap();
    let b = run_simulation_with(&model, &cfg, &scenario, &Profiles::synthetic(), Some(1), &mut |_| {})
        .unwrap();
    assert_eq!(records_to_jsonl(&a.records), records_to_jsonl(&b.records));
    let csv = summary_csv(&a);
    assert!(csv.starts_with("Step,Minute,Total Power (MW)"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn soc_rolls_forward_and_ends_at_target() {
    let model = fixtures::ieee4_anoca();
    let cfg = SimulationConfig {
        horizon_hours: 1.0,
        span: 12,
        start_minute: 10.0 * 60.0,
        terminal_soc: TerminalMode::AbsoluteEnd,
        ..Default::default()
    };
    let run = run_simulation(
        &model,
        &cfg,
        &fixtures::scenario("ieee4_anoca", 1),
        &Profiles::without_pv(),
    )
    .unwrap();
    let b = model.battery("bank").unwrap();
    let mut soc = b.e_set_kwh;
    for r in &run.records {
        let p = &r.prosumers[0];
        soc += b.eta_c * p.p_charge_kw / 12.0 - p.p_discharge_kw / (12.0 * b.eta_d);
        assert!((p.soc_kwh - soc).abs() < 1e-9);
    }
    // Without noise the plan is executed as is and the last window ends on target.
    assert!((soc - b.e_set_kwh).abs() < 1e-6, "{soc}");
}

#[test]
fn infeasible_step_halts_by_default() {
    let model = fixtures::ieee4_anoca();
    let mut scenario = fixtures::scenario("ieee4_anoca", 3);
    scenario.noise_sigma = 0.1;
    scenario.rng_seed = 17;
    let mut seen = Vec::new();
    let err = run_simulation_with(&model, &short_config(3), &scenario, &Profiles::synthetic(), None, &mut |r| {
        seen.push(r.step)
    })
    .unwrap_err();
    assert!(matches!(
        err,
        SimError::Dms {
            step: 1,
            source: DmsError::LocallyInfeasible { .. }
        }
    ));
    assert_eq!(seen, [0]);
}

#[test]
fn infeasible_step_can_grant_offers_and_keep_going() {
    let model = fixtures::ieee4_anoca();
    let mut scenario = fixtures::scenario("ieee4_anoca", 3);
    scenario.noise_sigma = 0.1;
    scenario.rng_seed = 17;
    let cfg = SimulationConfig {
        on_dms_failure: DmsFailurePolicy::GrantOffers,
        ..short_config(3)
    };
    let run = run_simulation(&model, &cfg, &scenario, &Profiles::synthetic()).unwrap();
    assert_eq!(run.records.len(), 3);
    let r = run
        .records
        .iter()
        .find(|r| r.dms.status != DmsStatus::Optimal)
        .expect("seed 17 hits an undervoltage curtailment cannot fix");
    assert!(r.violations_after > 0);
    assert_eq!(r.violations_before, Some(r.violations_after));
    assert!(r.prosumers.iter().all(|p| p.p_cu_kw == 0.0 && p.aes_kw == p.oes_kw));
    assert!(r.dms.kkt_residual.is_none());
    let line = records_to_jsonl(std::slice::from_ref(r));
    let back: StepRecord = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(&back, r);
}
