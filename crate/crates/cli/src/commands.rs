use std::path::{Path, PathBuf};
use std::time::Instant;

use anoca::dms::{
    build_problem, feasibility_certificate, solve_dms, CurtailmentStrategy, DmsOptions,
    DmsSolution, FeasibilityReport,
};
use anoca::fixtures;
use anoca::hems::{read_forecast_csv, solve_hems_with, write_schedule_csv, BatteryParams, HemsOptions};
use anoca::network::{parse_unchecked, to_text, validate as validate_model, NetworkModel, PhaseId};
use anoca::powerflow::{solve_powerflow, InjectionSet, PowerflowOptions, VoltageSolution};
use anoca::sim::{
    records_to_jsonl, run_simulation_with, scenario_setpoints, summary_csv, ScenarioSpec,
    SimulationConfig, StepRecord, ADJUSTED_THRESHOLD_KW,
};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::inputs::{
    load_injections, load_network, load_profiles, load_setpoints, parent_dir, parse_structured,
    read_input, resolve,
};
use crate::manifest::{OutputDir, RunManifest};
use crate::{DmsArgs, FixtureArgs, Format, HemsArgs, PowerflowArgs, SimulateArgs};

/// Writes `files` and the manifest under `out`, or prints the first file to
/// stdout when there is no output directory.
fn emit(
    out: Option<&Path>,
    files: Vec<(&str, String)>,
    manifest: RunManifest,
    summary: &str,
) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            let mut od = OutputDir::create(dir)?;
            for (name, body) in &files {
                od.write(name, body)?;
            }
            od.finish(manifest)?;
            println!("{summary}");
        }
        None => {
            print!("{}", files[0].1);
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn validate(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model = parse_unchecked(&text, Some(path))
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let diagnostics = validate_model(&model);
    if diagnostics.is_empty() {
        println!(
            "ok: {} buses, {} lines, {} transformers, {} loads, {} prosumers",
            model.buses.len(),
            model.lines.len(),
            model.transformers.len(),
            model.loads.len(),
            model.prosumers.len()
        );
        return Ok(());
    }
    for d in &diagnostics {
        println!("{d}");
    }
    Err(CliError::Domain(format!(
        "{}: {} problem(s) found",
        path.display(),
        diagnostics.len()
    )))
}

#[derive(Serialize)]
struct VoltageRow {
    bus: String,
    phase: PhaseId,
    v_real: f64,
    v_imag: f64,
    v_mag_pu: f64,
    v_mag_volts: f64,
}

fn voltage_rows(model: &NetworkModel, v: &VoltageSolution) -> Vec<VoltageRow> {
    v.nodes
        .iter()
        .map(|n| {
            let base_kv = model.bus(&n.bus).map_or(0.0, |b| b.base_kv);
            VoltageRow {
                bus: n.bus.clone(),
                phase: n.phase,
                v_real: n.v_real,
                v_imag: n.v_imag,
                v_mag_pu: n.magnitude(),
                v_mag_volts: n.magnitude() * base_kv * 1000.0,
            }
        })
        .collect()
}

pub fn powerflow(a: &PowerflowArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("powerflow");
    let model = load_network(&a.network, &mut m)?;
    let injections = match &a.injections {
        Some(p) => load_injections(p, &mut m)?,
        None => InjectionSet::from_loads(&model),
    };
    let opts = PowerflowOptions {
        tol: a.tol,
        ..Default::default()
    };
    m.options(&json!({ "tol": a.tol, "max_iter": opts.max_iter, "format": format_name(a.format) }));
    let t = Instant::now();
    let sol = solve_powerflow(&model, &injections, &opts).map_err(|e| CliError::Domain(e.to_string()))?;
    m.timings.insert("powerflow_seconds".into(), t.elapsed().as_secs_f64());

    let rows = voltage_rows(&model, &sol);
    let file = match a.format {
        Format::Csv => ("voltages.csv", to_csv(&rows)),
        Format::Json => (
            "voltages.json",
            pretty(&json!({
                "iterations": sol.iterations,
                "max_residual": sol.max_residual,
                "nodes": rows,
            })),
        ),
    };
    let summary = format!(
        "converged in {} iterations, max residual {:.3e} pu",
        sol.iterations, sol.max_residual
    );
    emit(a.out.as_deref(), vec![file], m, &summary)
}

pub fn hems(a: &HemsArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("hems");
    let text = read_input(&a.forecast, "forecast", &mut m)?;
    let (forecast, tariff) = read_forecast_csv(&text, a.dt_minutes / 60.0)
        .map_err(|e| CliError::Domain(format!("{}: {e}", a.forecast.display())))?;
    let battery: BatteryParams = match (&a.battery, &a.network, &a.prosumer) {
        (Some(p), _, _) => parse_structured(p, &read_input(p, "battery", &mut m)?)?,
        (None, Some(net), Some(id)) => {
            let model = load_network(net, &mut m)?;
            let pro = model
                .prosumers
                .iter()
                .find(|p| &p.id == id)
                .ok_or_else(|| CliError::Domain(format!("no prosumer '{id}' in {}", net.display())))?;
            *model.battery(&pro.battery).expect("validated network")
        }
        _ => return Err(CliError::Usage("pass --battery, or --network with --prosumer".into())),
    };
    let opts = HemsOptions {
        initial_soc_kwh: a.initial_soc,
        terminal: a.free_terminal.then_some(None),
        max_nodes: None,
    };
    m.options(&json!({
        "dt_minutes": a.dt_minutes,
        "battery": battery,
        "initial_soc_kwh": a.initial_soc,
        "free_terminal": a.free_terminal,
        "format": format_name(a.format),
    }));
    let t = Instant::now();
    let sol = solve_hems_with(&battery, &tariff, &forecast, &opts)?;
    m.timings.insert("hems_seconds".into(), t.elapsed().as_secs_f64());

    let file = match a.format {
        Format::Csv => (
            "schedule.csv",
            write_schedule_csv(&sol).map_err(|e| CliError::Domain(e.to_string()))?,
        ),
        Format::Json => ("schedule.json", pretty(&sol)),
    };
    let first = &sol.intervals[0];
    let summary = format!(
        "cost {:.4}, gap {:.1e}, {} nodes; first interval: export {:.3} kW, import {:.3} kW",
        sol.objective_value, sol.gap, sol.nodes, first.p_export, first.p_import
    );
    emit(a.out.as_deref(), vec![file], m, &summary)
}

#[derive(Serialize)]
struct ProsumerRow {
    bus: String,
    phase: PhaseId,
    oes_kw: f64,
    ois_kw: f64,
    p_cu_kw: f64,
    aes_kw: f64,
}

#[derive(Serialize)]
struct BranchRow {
    kind: &'static str,
    id: String,
    loading: f64,
}

#[derive(Serialize)]
struct DmsSummary {
    net_curtailed_mw: f64,
    max_curtailed_kw: f64,
    buses_adjusted: usize,
}

#[derive(Serialize)]
struct DmsDiagnostics<'a> {
    objective: f64,
    p_bar_kw: Option<f64>,
    iterations: usize,
    kkt_residual: f64,
    primal_infeasibility: f64,
    complementarity: f64,
    restorations: usize,
    certificate: &'a FeasibilityReport,
}

#[derive(Serialize)]
struct DmsReport<'a> {
    strategy: CurtailmentStrategy,
    summary: DmsSummary,
    prosumers: Vec<ProsumerRow>,
    voltages: Vec<VoltageRow>,
    branches: Vec<BranchRow>,
    taps: &'a [f64],
    diagnostics: DmsDiagnostics<'a>,
}

fn dms_summary(sol: &DmsSolution) -> DmsSummary {
    DmsSummary {
        net_curtailed_mw: sol.total_curtailment_kw() / 1000.0,
        max_curtailed_kw: sol.max_curtailment_kw(),
        buses_adjusted: sol.adjusted_count(ADJUSTED_THRESHOLD_KW),
    }
}

fn summary_line(s: &DmsSummary) -> String {
    if s.buses_adjusted == 0 {
        return "no curtailment needed".into();
    }
    format!(
        "Net. Curtailed Power (MW): {:.6}; Maximum Curtailed power (KW): {:.4}; # Load Buses Adjusted: {}",
        s.net_curtailed_mw, s.max_curtailed_kw, s.buses_adjusted
    )
}

pub fn dms(a: &DmsArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("dms");
    let model = load_network(&a.network, &mut m)?;
    let setpoints = match (&a.setpoints, &a.scenario) {
        (Some(p), _) => load_setpoints(p, &mut m)?,
        (None, Some(p)) => {
            let spec: ScenarioSpec = parse_structured(p, &read_input(p, "scenario", &mut m)?)?;
            scenario_setpoints(&model, &spec).map_err(CliError::from)?
        }
        (None, None) => return Err(CliError::Usage("pass --setpoints or --scenario".into())),
    };
    let strategy = CurtailmentStrategy::from(a.strategy);
    let opts = DmsOptions {
        fixed_taps: a.fixed_taps,
        ..Default::default()
    };
    m.options(&json!({
        "strategy": strategy,
        "fixed_taps": a.fixed_taps,
        "setpoints": setpoints,
        "format": format_name(a.format),
    }));
    let loads = InjectionSet::from_loads(&model);
    let t = Instant::now();
    let problem = build_problem(&model, &setpoints, &loads, strategy, None, &opts)?;
    let sol = solve_dms(&problem, &opts)?;
    m.timings.insert("dms_seconds".into(), t.elapsed().as_secs_f64());
    let certificate = feasibility_certificate(&problem, &sol);

    let prosumers: Vec<ProsumerRow> = sol
        .prosumers
        .iter()
        .map(|p| ProsumerRow {
            bus: p.bus.clone(),
            phase: p.phase,
            oes_kw: p.oes_kw,
            ois_kw: p.ois_kw,
            p_cu_kw: p.p_cu_kw,
            aes_kw: p.aes_kw,
        })
        .collect();
    let summary = dms_summary(&sol);
    let line = summary_line(&summary);
    let file = match a.format {
        Format::Csv => ("curtailment.csv", to_csv(&prosumers)),
        Format::Json => {
            let branches = sol
                .flows
                .lines
                .iter()
                .map(|l| BranchRow {
                    kind: "line",
                    id: l.id.clone(),
                    loading: l.loading,
                })
                .chain(sol.flows.transformers.iter().map(|t| BranchRow {
                    kind: "transformer",
                    id: t.id.clone(),
                    loading: t.loading,
                }))
                .collect();
            let report = DmsReport {
                strategy,
                summary,
                prosumers,
                voltages: voltage_rows(&model, &sol.voltages),
                branches,
                taps: &sol.taps,
                diagnostics: DmsDiagnostics {
                    objective: sol.objective,
                    p_bar_kw: sol.p_bar_kw,
                    iterations: sol.iterations,
                    kkt_residual: sol.kkt_residual,
                    primal_infeasibility: sol.primal_infeasibility,
                    complementarity: sol.complementarity,
                    restorations: sol.restorations,
                    certificate: &certificate,
                },
            };
            ("solution.json", pretty(&report))
        }
    };
    emit(a.out.as_deref(), vec![file], m, &line)
}

pub const STEPS_FILE: &str = "steps.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new("simulate");
    let (mut cfg, base_dir) = match &a.config {
        Some(p) => (
            parse_structured::<SimulationConfig>(p, &read_input(p, "config", &mut m)?)?,
            parent_dir(p),
        ),
        None => (SimulationConfig::default(), PathBuf::new()),
    };
    let from_config = |field: &Option<String>| field.as_deref().map(|f| resolve(&base_dir, f));
    let network_path = a
        .network
        .clone()
        .or_else(|| from_config(&cfg.network))
        .ok_or_else(|| CliError::Usage("no network: pass --network or set `network` in the config".into()))?;
    let scenario_path = a
        .scenario
        .clone()
        .or_else(|| from_config(&cfg.scenario))
        .ok_or_else(|| CliError::Usage("no scenario: pass --scenario or set `scenario` in the config".into()))?;
    if let Some(s) = a.strategy {
        cfg.strategy = s.into();
    }
    if let Some(n) = a.span {
        cfg.span = n;
    }
    cfg.network = Some(network_path.display().to_string());
    cfg.scenario = Some(scenario_path.display().to_string());

    let model = load_network(&network_path, &mut m)?;
    let mut scenario: ScenarioSpec =
        parse_structured(&scenario_path, &read_input(&scenario_path, "scenario", &mut m)?)?;
    if let Some(seed) = a.seed {
        scenario.rng_seed = seed;
    }
    let profiles = load_profiles(&scenario.profile, &parent_dir(&scenario_path), &mut m)?;
    m.options(&json!({ "config": cfg, "scenario": scenario, "threads": a.threads }));
    m.rng_seeds.insert("forecast_noise".into(), scenario.rng_seed);

    let mut done: Vec<StepRecord> = Vec::new();
    let t = Instant::now();
    let result = run_simulation_with(&model, &cfg, &scenario, &profiles, a.threads, &mut |r| {
        eprintln!(
            "step {}/{} minute {}: {} of {} prosumers curtailed",
            r.step + 1,
            cfg.span,
            r.minute,
            r.adjusted_count(),
            r.prosumers.len()
        );
        done.push(r.clone());
    });
    m.timings.insert("total_seconds".into(), t.elapsed().as_secs_f64());

    let run = match result {
        Ok(run) => run,
        Err(e) => {
            // Completed steps are kept so a halted run can be inspected.
            if let Some(dir) = &a.out {
                let mut od = OutputDir::create(dir)?;
                od.remove_stale(SUMMARY_FILE)?;
                od.write(STEPS_FILE, &records_to_jsonl(&done))?;
                od.finish(m)?;
            }
            return Err(e.into());
        }
    };
    let sum = |f: fn(&anoca::sim::StepTiming) -> f64| run.timings.iter().map(f).sum::<f64>();
    m.timings.insert("hems_seconds".into(), sum(|t| t.hems_seconds));
    m.timings.insert("dms_seconds".into(), sum(|t| t.dms_seconds));

    let curtailed_steps = run.records.iter().filter(|r| r.curtailed).count();
    let summary = format!("{} steps, {curtailed_steps} with curtailment", run.records.len());
    emit(
        a.out.as_deref(),
        vec![
            (STEPS_FILE, records_to_jsonl(&run.records)),
            (SUMMARY_FILE, summary_csv(&run)),
        ],
        m,
        &summary,
    )
}

/// Scenario, first minute and span of each network's simulation config. The
/// mesh runs close to its lower voltage limit, so its window stays short.
fn sim_settings(name: &str) -> (u8, f64, usize) {
    if name == "mesh" {
        (1, 750.0, 3)
    } else {
        (3, 660.0, 12)
    }
}

/// Every file `fixture` writes for `name`, in order.
pub fn fixture_files(name: &str) -> Result<Vec<(String, String)>, CliError> {
    let model = fixtures::by_name(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown fixture '{name}'; expected one of {}",
            fixtures::NAMES.join(", ")
        ))
    })?;
    let mut files = vec![(format!("{name}.net"), to_text(&model))];
    if !fixtures::categories(name).is_empty() {
        for id in 1..=4 {
            let spec = fixtures::scenario(name, id);
            let text = toml::to_string(&spec).map_err(|e| CliError::Domain(e.to_string()))?;
            files.push((format!("{name}_s{id}.toml"), text));
        }
        let (id, start_minute, span) = sim_settings(name);
        let cfg = SimulationConfig {
            span,
            start_minute,
            network: Some(format!("{name}.net")),
            scenario: Some(format!("{name}_s{id}.toml")),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).map_err(|e| CliError::Domain(e.to_string()))?;
        files.push((format!("{name}_sim.toml"), text));
    }
    Ok(files)
}

pub fn fixture(a: &FixtureArgs) -> Result<(), CliError> {
    let names: Vec<&str> = if a.names.is_empty() {
        fixtures::NAMES.to_vec()
    } else {
        a.names.iter().map(String::as_str).collect()
    };
    let mut files = Vec::new();
    for name in &names {
        files.extend(fixture_files(name)?);
    }
    let mut m = RunManifest::new("fixture");
    m.options(&json!({ "names": names }));
    let mut od = OutputDir::create(&a.out)?;
    for (file, body) in &files {
        od.write(file, body)?;
    }
    od.finish(m)?;
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}
