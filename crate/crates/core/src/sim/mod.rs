//! The closed loop between prosumers and the utility.
//!
//! Every step each prosumer plans its battery over a rolling window from
//! noisy forecasts and proposes the first interval's export and import. The
//! utility solves one curtailment problem for all proposals, returns the
//! adjusted export setpoints, and each prosumer executes the interval against
//! actual load and PV before the window rolls forward.

mod profile;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use profile::{generate_forecasts, generate_forecasts_with, perturb, Profiles};

use crate::dms::{
    build_problem, count_bound_violations, solve_dms, CurtailmentStrategy, DmsError, DmsOptions,
    Setpoint,
};
use crate::hems::{
    solve_hems_with, BatteryParams, ForecastSeries, HemsError, HemsInterval, HemsOptions,
    TariffSchedule, TerminalSoc,
};
use crate::network::{NetworkModel, PhaseId, TapSettings};
use crate::powerflow::{solve_powerflow, InjectionSet, PowerflowOptions};

/// Tolerance used when counting bound violations, per unit.
pub const VIOLATION_TOL: f64 = 1e-6;
/// Curtailments above this are counted as an adjusted prosumer, kW.
pub const ADJUSTED_THRESHOLD_KW: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    A,
    B,
    C,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::A, Category::B, Category::C];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// PV export as a percentage of base load for categories A, B and C in each
/// of the four named scenarios.
pub const SCENARIO_TABLE: [[f64; 3]; 4] = [
    [150.0, 0.0, 30.0],
    [30.0, 150.0, 0.0],
    [30.0, 0.0, 150.0],
    [0.0, 150.0, 30.0],
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("step {step}: prosumer {prosumer}: {source}")]
    Hems {
        step: usize,
        prosumer: String,
        source: HemsError,
    },
    #[error("step {step}: {source}")]
    Dms { step: usize, source: DmsError },
}

fn default_profile() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Selects a row of [`SCENARIO_TABLE`].
    #[serde(default)]
    pub scenario_id: Option<u8>,
    /// Explicit percentages for A, B and C.
    #[serde(default)]
    pub pv_export_pct: Option<[f64; 3]>,
    /// Prosumer id to category. Unlisted prosumers take A, B, C in turn by
    /// their position in the network.
    #[serde(default)]
    pub categories: BTreeMap<String, Category>,
    /// `synthetic`, `no-pv`, or a path to a `minute,load,pv` CSV.
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            scenario_id: None,
            pv_export_pct: None,
            categories: BTreeMap::new(),
            profile: default_profile(),
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn named(id: u8) -> Self {
        ScenarioSpec {
            scenario_id: Some(id),
            ..Default::default()
        }
    }

    pub fn export_pct(&self) -> Result<[f64; 3], SimError> {
        let table = match self.scenario_id {
            Some(id @ 1..=4) => Some(SCENARIO_TABLE[id as usize - 1]),
            Some(id) => return Err(SimError::Input(format!("scenario {id} is not one of 1-4"))),
            None => None,
        };
        let pct = match (table, self.pv_export_pct) {
            (Some(t), Some(p)) if t != p => {
                return Err(SimError::Input(format!(
                    "pv_export_pct {p:?} disagrees with scenario {} {t:?}",
                    self.scenario_id.unwrap_or(0)
                )))
            }
            (Some(t), _) => t,
            (None, Some(p)) => p,
            (None, None) => [0.0; 3],
        };
        if pct.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(SimError::Input(format!("negative or non-finite export percentage in {pct:?}")));
        }
        Ok(pct)
    }

    pub fn category(&self, model: &NetworkModel, k: usize) -> Category {
        self.categories
            .get(&model.prosumers[k].id)
            .copied()
            .unwrap_or(Category::ALL[k % 3])
    }

    pub fn check(&self, model: &NetworkModel) -> Result<(), SimError> {
        self.export_pct()?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SimError::Input(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        for id in self.categories.keys() {
            if !model.prosumers.iter().any(|p| &p.id == id) {
                return Err(SimError::Input(format!("category given for unknown prosumer '{id}'")));
            }
        }
        Ok(())
    }
}

fn base_load_kw(model: &NetworkModel, bus: &str, phase: PhaseId) -> f64 {
    model
        .loads
        .iter()
        .filter(|l| l.bus == bus && l.phase == phase)
        .map(|l| l.p_kw)
        .sum()
}

/// One-shot setpoints at base load: exporting categories offer their
/// percentage of base load, the others import their whole base load.
pub fn scenario_setpoints(
    model: &NetworkModel,
    scenario: &ScenarioSpec,
) -> Result<Vec<Setpoint>, SimError> {
    scenario.check(model)?;
    let pct = scenario.export_pct()?;
    Ok(model
        .prosumers
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let base = base_load_kw(model, &p.bus, p.phase);
            let share = pct[scenario.category(model, k).index()] / 100.0;
            let (oes_kw, ois_kw) = if share > 0.0 { (share * base, 0.0) } else { (0.0, base) };
            Setpoint {
                bus: p.bus.clone(),
                phase: p.phase,
                oes_kw,
                ois_kw,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// Every window ends at the boundary SOC.
    WindowEnd,
    /// Only the last simulated interval is pinned; earlier windows are free
    /// until it comes into view.
    AbsoluteEnd,
}

/// Time-of-use prices per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffSpec {
    pub import: f64,
    pub import_peak: f64,
    pub export: f64,
    pub peak_start_hour: f64,
    pub peak_end_hour: f64,
}

impl Default for TariffSpec {
    fn default() -> Self {
        TariffSpec {
            import: 0.18,
            import_peak: 0.32,
            export: 0.06,
            peak_start_hour: 16.0,
            peak_end_hour: 21.0,
        }
    }
}

impl TariffSpec {
    pub fn prices_at(&self, minute: f64) -> (f64, f64) {
        let h = minute.rem_euclid(1440.0) / 60.0;
        let peak = h >= self.peak_start_hour && h < self.peak_end_hour;
        (if peak { self.import_peak } else { self.import }, self.export)
    }
}

/// What a step does when the DMS finds no feasible curtailment or fails to
/// converge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmsFailurePolicy {
    /// Stop and report the step.
    #[default]
    Halt,
    /// Grant every offer uncurtailed, record the violations and continue.
    GrantOffers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt_minutes: f64,
    pub horizon_hours: f64,
    /// Executed steps.
    pub span: usize,
    /// Minute of day of the first step.
    pub start_minute: f64,
    pub strategy: CurtailmentStrategy,
    pub terminal_soc: TerminalMode,
    pub tariff: TariffSpec,
    pub on_dms_failure: DmsFailurePolicy,
    /// Network file, relative to the config file.
    pub network: Option<String>,
    /// Scenario file, relative to the config file.
    pub scenario: Option<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt_minutes: 5.0,
            horizon_hours: 4.0,
            span: 1,
            start_minute: 720.0,
            strategy: CurtailmentStrategy::L1,
            terminal_soc: TerminalMode::WindowEnd,
            tariff: TariffSpec::default(),
            on_dms_failure: DmsFailurePolicy::Halt,
            network: None,
            scenario: None,
        }
    }
}

impl SimulationConfig {
    /// Intervals per planning window.
    pub fn window(&self) -> Result<usize, SimError> {
        let dt = self.dt_minutes;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::Input(format!("dt_minutes {dt} must be positive")));
        }
        let ratio = self.horizon_hours * 60.0 / dt;
        let n = ratio.round();
        if !(n >= 1.0 && (ratio - n).abs() < 1e-9) {
            return Err(SimError::Input(format!(
                "dt {dt} min does not divide the {} h horizon",
                self.horizon_hours
            )));
        }
        if self.span == 0 {
            return Err(SimError::Input("span must be at least 1".into()));
        }
        let t = &self.tariff;
        if !(t.import > t.export && t.import_peak > t.export) {
            return Err(SimError::Input("import prices must exceed the export price".into()));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerStep {
    pub id: String,
    pub category: Category,
    pub load_kw: f64,
    pub pv_kw: f64,
    pub oes_kw: f64,
    pub ois_kw: f64,
    pub p_cu_kw: f64,
    pub aes_kw: f64,
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
    pub p_import_kw: f64,
    pub p_spill_kw: f64,
    /// SOC at the end of the executed interval.
    pub soc_kwh: f64,
}

/// Outcome of a step's DMS solve. Anything but `Optimal` only appears under
/// [`DmsFailurePolicy::GrantOffers`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmsStatus {
    Optimal,
    Infeasible,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmsDiagnostics {
    pub status: DmsStatus,
    pub objective: f64,
    pub iterations: usize,
    /// Absent when the solver result was discarded.
    pub kkt_residual: Option<f64>,
    pub primal_infeasibility: Option<f64>,
    pub taps: Vec<f64>,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub minute: f64,
    pub curtailed: bool,
    pub prosumers: Vec<ProsumerStep>,
    pub dms: DmsDiagnostics,
    /// Violations with every OES granted; `None` if that power flow diverges.
    pub violations_before: Option<usize>,
    pub violations_after: usize,
    pub total_load_kw: f64,
}

impl StepRecord {
    pub fn total_curtailment_kw(&self) -> f64 {
        self.prosumers.iter().map(|p| p.p_cu_kw).sum()
    }

    pub fn max_curtailment_kw(&self) -> f64 {
        self.prosumers.iter().fold(0.0, |m, p| m.max(p.p_cu_kw))
    }

    pub fn adjusted_count(&self) -> usize {
        self.prosumers
            .iter()
            .filter(|p| p.p_cu_kw > ADJUSTED_THRESHOLD_KW)
            .count()
    }
}

/// Wall-clock time of one step; kept apart from the records so that records
/// are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub hems_seconds: f64,
    pub dms_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub records: Vec<StepRecord>,
    pub timings: Vec<StepTiming>,
}

/// Power actually exchanged by a prosumer over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Executed {
    pub charge: f64,
    pub discharge: f64,
    pub import: f64,
    pub spill: f64,
    pub soc_kwh: f64,
}

/// Executes the planned interval with the actual load and PV and the export
/// fixed at `aes`. A surplus first cancels import, then charges the battery,
/// then is spilled; a deficit is met from the battery and then from import.
pub fn execute_interval(
    batt: &BatteryParams,
    dt_hours: f64,
    soc_kwh: f64,
    plan: &HemsInterval,
    load_kw: f64,
    pv_kw: f64,
    aes_kw: f64,
) -> Executed {
    let hi = batt
        .p_max_kw
        .min((batt.e_max_kwh - soc_kwh).max(0.0) / (batt.eta_c * dt_hours));
    let lo = -batt.p_max_kw.min(soc_kwh.max(0.0) * batt.eta_d / dt_hours);
    let mut net = (plan.p_charge - plan.p_discharge).clamp(lo, hi);
    let mut import = plan.p_import.max(0.0);
    let mut spill = 0.0;

    let surplus = pv_kw + import - net - load_kw - aes_kw;
    if surplus > 0.0 {
        let mut rest = surplus;
        let cut = rest.min(import);
        import -= cut;
        rest -= cut;
        let up = rest.min(hi - net);
        net += up;
        rest -= up;
        spill = rest.min(pv_kw);
    } else if surplus < 0.0 {
        let mut need = -surplus;
        let down = need.min(net - lo);
        net -= down;
        need -= down;
        import += need;
    }
    let (charge, discharge) = (net.max(0.0), (-net).max(0.0));
    // Close the balance on the grid-side term that is free to move.
    let residual = pv_kw + discharge + import - load_kw - charge - aes_kw - spill;
    if residual < 0.0 {
        import -= residual;
    } else {
        spill += residual;
    }
    let soc = soc_kwh + batt.eta_c * charge * dt_hours - discharge * dt_hours / batt.eta_d;
    Executed {
        charge,
        discharge,
        import,
        spill,
        soc_kwh: soc.clamp(0.0, batt.e_max_kwh),
    }
}

struct Agent {
    id: String,
    bus: String,
    phase: PhaseId,
    category: Category,
    share: f64,
    base_kw: f64,
    battery: BatteryParams,
    soc_kwh: f64,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, SimError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| SimError::Input(format!("thread pool: {e}")))
}

pub fn run_simulation(
    model: &NetworkModel,
    cfg: &SimulationConfig,
    scenario: &ScenarioSpec,
    profiles: &Profiles,
) -> Result<SimulationRun, SimError> {
    run_simulation_with(model, cfg, scenario, profiles, None, &mut |_| {})
}

/// Runs the loop, handing each record to `on_step` as soon as it is final.
/// `threads` caps the prosumer-side parallelism.
pub fn run_simulation_with(
    model: &NetworkModel,
    cfg: &SimulationConfig,
    scenario: &ScenarioSpec,
    profiles: &Profiles,
    threads: Option<usize>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<SimulationRun, SimError> {
    let window = cfg.window()?;
    scenario.check(model)?;
    let pct = scenario.export_pct()?;
    let dt_h = cfg.dt_minutes / 60.0;
    let pool = thread_pool(threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let dms_opts = DmsOptions::default();

    let mut agents = Vec::with_capacity(model.prosumers.len());
    for (k, p) in model.prosumers.iter().enumerate() {
        let battery = *model.battery(&p.battery).ok_or_else(|| {
            SimError::Input(format!("prosumer {} references unknown battery {}", p.id, p.battery))
        })?;
        let category = scenario.category(model, k);
        agents.push(Agent {
            id: p.id.clone(),
            bus: p.bus.clone(),
            phase: p.phase,
            category,
            share: pct[category.index()] / 100.0,
            base_kw: base_load_kw(model, &p.bus, p.phase),
            battery,
            soc_kwh: battery.e_set_kwh,
        });
    }
    let minute_of = |step: usize| cfg.start_minute + step as f64 * cfg.dt_minutes;
    let actual = |a: &Agent, minute: f64| {
        let load = a.base_kw * profiles.load_at(minute);
        // A zero export share marks a category without PV, matching the snapshot.
        let pv = if a.share > 0.0 {
            profiles.pv_at(minute) * (1.0 + a.share) * load
        } else {
            0.0
        };
        (load, pv)
    };

    let mut run = SimulationRun {
        records: Vec::with_capacity(cfg.span),
        timings: Vec::with_capacity(cfg.span),
    };
    for step in 0..cfg.span {
        let minute = minute_of(step);
        let forecasts: Vec<ForecastSeries> = agents
            .iter()
            .map(|a| {
                let (p_load_kw, p_pv_kw) = (0..window).map(|tau| actual(a, minute_of(step + tau))).unzip();
                let base = ForecastSeries {
                    p_load_kw,
                    p_pv_kw,
                    dt_hours: dt_h,
                };
                generate_forecasts_with(&base, scenario.noise_sigma, &mut rng)
            })
            .collect();
        let (c_import, c_export) = (0..window)
            .map(|tau| cfg.tariff.prices_at(minute_of(step + tau)))
            .unzip();
        let tariff = TariffSchedule { c_import, c_export };
        // None pins the window end; Some(None) leaves the window free.
        let terminal_after = match cfg.terminal_soc {
            TerminalMode::WindowEnd => None,
            TerminalMode::AbsoluteEnd => {
                let left = cfg.span - 1 - step;
                Some((left < window).then_some(left))
            }
        };

        let t0 = Instant::now();
        let plans: Vec<Result<HemsInterval, HemsError>> = pool.install(|| {
            agents
                .par_iter()
                .zip(forecasts.par_iter())
                .map(|(a, fc)| {
                    let opts = HemsOptions {
                        initial_soc_kwh: Some(a.soc_kwh),
                        terminal: terminal_after.map(|t| {
                            t.map(|after_interval| TerminalSoc {
                                after_interval,
                                soc_kwh: a.battery.e_set_kwh,
                            })
                        }),
                        max_nodes: None,
                    };
                    solve_hems_with(&a.battery, &tariff, fc, &opts).map(|s| s.intervals[0].clone())
                })
                .collect()
        });
        let hems_seconds = t0.elapsed().as_secs_f64();
        let mut first = Vec::with_capacity(agents.len());
        for (a, plan) in agents.iter().zip(plans) {
            first.push(plan.map_err(|source| SimError::Hems {
                step,
                prosumer: a.id.clone(),
                source,
            })?);
        }

        let load_scale = profiles.load_at(minute);
        let loads = InjectionSet::from_loads(model).scaled(load_scale);
        let setpoints: Vec<Setpoint> = agents
            .iter()
            .zip(&first)
            .map(|(a, iv)| Setpoint {
                bus: a.bus.clone(),
                phase: a.phase,
                oes_kw: iv.p_export,
                ois_kw: iv.p_import,
            })
            .collect();
        let t1 = Instant::now();
        let problem = build_problem(model, &setpoints, &loads, cfg.strategy, None, &dms_opts)
            .map_err(|source| SimError::Dms { step, source })?;
        let granted = problem.injections(&vec![0.0; setpoints.len()]);
        let flow_at = |inj: &InjectionSet, taps: &TapSettings| {
            solve_powerflow(
                model,
                inj,
                &PowerflowOptions {
                    taps: Some(taps.clone()),
                    ..Default::default()
                },
            )
        };
        let (status, sol) = match solve_dms(&problem, &dms_opts) {
            Ok(sol) => (DmsStatus::Optimal, Some(sol)),
            Err(source) => match (cfg.on_dms_failure, &source) {
                (DmsFailurePolicy::GrantOffers, DmsError::LocallyInfeasible { .. }) => {
                    (DmsStatus::Infeasible, None)
                }
                (DmsFailurePolicy::GrantOffers, DmsError::NonConvergence { .. }) => {
                    (DmsStatus::NotConverged, None)
                }
                _ => return Err(SimError::Dms { step, source }),
            },
        };
        let dms_seconds = t1.elapsed().as_secs_f64();

        let (taps, voltages, outcomes, diag) = match sol {
            Some(sol) => {
                let outcomes: Vec<(f64, f64)> =
                    sol.prosumers.iter().map(|o| (o.p_cu_kw, o.aes_kw)).collect();
                let diag = (
                    sol.objective,
                    sol.iterations,
                    Some(sol.kkt_residual),
                    Some(sol.primal_infeasibility),
                );
                (TapSettings(sol.taps), sol.voltages, outcomes, diag)
            }
            None => {
                // Every offer is granted at nominal taps and the violations are reported.
                let taps = TapSettings::default_for(model);
                let v = flow_at(&granted, &taps).map_err(|e| SimError::Dms {
                    step,
                    source: DmsError::InvalidInput(format!("fallback power flow failed: {e}")),
                })?;
                let outcomes = setpoints.iter().map(|s| (0.0, s.oes_kw)).collect();
                (taps, v, outcomes, (0.0, 0, None, None))
            }
        };
        let violations_before = match status {
            DmsStatus::Optimal => flow_at(&granted, &taps).ok(),
            _ => Some(voltages.clone()),
        }
        .map(|v| count_bound_violations(model, &v, &taps, VIOLATION_TOL));
        let violations_after = count_bound_violations(model, &voltages, &taps, VIOLATION_TOL);

        let mut prosumers = Vec::with_capacity(agents.len());
        for (((a, plan), sp), &(p_cu_kw, aes_kw)) in
            agents.iter_mut().zip(&first).zip(&setpoints).zip(&outcomes)
        {
            let (load_kw, pv_kw) = actual(a, minute);
            let ex = execute_interval(&a.battery, dt_h, a.soc_kwh, plan, load_kw, pv_kw, aes_kw);
            a.soc_kwh = ex.soc_kwh;
            prosumers.push(ProsumerStep {
                id: a.id.clone(),
                category: a.category,
                load_kw,
                pv_kw,
                oes_kw: sp.oes_kw,
                ois_kw: sp.ois_kw,
                p_cu_kw,
                aes_kw,
                p_charge_kw: ex.charge,
                p_discharge_kw: ex.discharge,
                p_import_kw: ex.import,
                p_spill_kw: ex.spill,
                soc_kwh: ex.soc_kwh,
            });
        }
        let (v_min_pu, v_max_pu) = voltages
            .nodes
            .iter()
            .map(|n| n.magnitude())
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let record = StepRecord {
            step,
            minute,
            curtailed: prosumers.iter().any(|p| p.p_cu_kw > ADJUSTED_THRESHOLD_KW),
            prosumers,
            dms: DmsDiagnostics {
                status,
                objective: diag.0,
                iterations: diag.1,
                kkt_residual: diag.2,
                primal_infeasibility: diag.3,
                taps: taps.0.clone(),
                v_min_pu,
                v_max_pu,
            },
            violations_before,
            violations_after,
            total_load_kw: loads.iter().map(|(_, _, p, _)| p).sum(),
        };
        on_step(&record);
        run.records.push(record);
        run.timings.push(StepTiming {
            hems_seconds,
            dms_seconds,
        });
    }
    Ok(run)
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[StepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out += &serde_json::to_string(r).expect("records serialize");
        out.push('\n');
    }
    out
}

/// Column labels of the per-step summary.
pub const SUMMARY_HEADER: [&str; 8] = [
    "Step",
    "Minute",
    "Total Power (MW)",
    "Net. Curtailed Power (MW)",
    "Maximum Curtailed power (KW)",
    "# Load Buses Adjusted",
    "Avg. time (sec)",
    "Avg. Iter. #",
];

pub fn summary_csv(run: &SimulationRun) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for (r, t) in run.records.iter().zip(&run.timings) {
        w.write_record([
            r.step.to_string(),
            r.minute.to_string(),
            format!("{:.6}", r.total_load_kw / 1000.0),
            format!("{:.6}", r.total_curtailment_kw() / 1000.0),
            format!("{:.6}", r.max_curtailment_kw()),
            r.adjusted_count().to_string(),
            format!("{:.6}", t.dms_seconds),
            r.dms.iterations.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
