//! Per-prosumer battery and export scheduling.
//!
//! Each solve is a mixed-integer program over a short horizon: battery charge
//! and discharge are mutually exclusive through one binary per interval, and
//! the objective is the net energy bill. The integer part is settled by
//! best-bound branch-and-bound over LP relaxations.

mod io;
pub mod lp;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_forecast_csv, write_schedule_csv, CsvError};
use lp::{LinearProgram, LpOutcome, RowKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub e_max_kwh: f64,
    pub p_max_kw: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub e_set_kwh: f64,
}

impl BatteryParams {
    /// Human-readable description of every broken invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all = [self.e_max_kwh, self.p_max_kw, self.eta_c, self.eta_d, self.e_set_kwh];
        if all.iter().any(|v| !v.is_finite()) {
            out.push("non-finite battery parameter".to_string());
            return out;
        }
        if self.p_max_kw < 0.0 {
            out.push(format!("negative power rating {}", self.p_max_kw));
        }
        if !(self.e_set_kwh > 0.0 && self.e_set_kwh <= self.e_max_kwh) {
            out.push(format!(
                "boundary SOC {} outside (0, {}]",
                self.e_set_kwh, self.e_max_kwh
            ));
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(eta > 0.0 && eta <= 1.0) {
                out.push(format!("{name} = {eta} outside (0, 1]"));
            }
        }
        if self.eta_c * self.eta_d > 1.0 {
            out.push("round-trip efficiency above 1".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub c_import: Vec<f64>,
    pub c_export: Vec<f64>,
}

impl TariffSchedule {
    pub fn flat(horizon: usize, c_import: f64, c_export: f64) -> Self {
        TariffSchedule {
            c_import: vec![c_import; horizon],
            c_export: vec![c_export; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.c_import.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_import.is_empty()
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        TariffSchedule {
            c_import: self.c_import[start..start + len].to_vec(),
            c_export: self.c_export[start..start + len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub p_load_kw: Vec<f64>,
    pub p_pv_kw: Vec<f64>,
    pub dt_hours: f64,
}

impl ForecastSeries {
    pub fn horizon(&self) -> usize {
        self.p_load_kw.len()
    }
}

/// SOC pinned at the end of interval `after_interval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalSoc {
    pub after_interval: usize,
    pub soc_kwh: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HemsOptions {
    /// Defaults to the battery's boundary SOC.
    pub initial_soc_kwh: Option<f64>,
    /// `None` pins the window end to the boundary SOC; use
    /// `Some(None)` to leave the trajectory free.
    pub terminal: Option<Option<TerminalSoc>>,
    pub max_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemsInterval {
    pub tau: usize,
    pub p_charge: f64,
    pub p_discharge: f64,
    pub p_import: f64,
    pub p_export: f64,
    pub p_spill: f64,
    /// SOC at the end of the interval.
    pub soc_kwh: f64,
    pub z: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemsSolution {
    pub initial_soc_kwh: f64,
    pub intervals: Vec<HemsInterval>,
    pub objective_value: f64,
    pub gap: f64,
    pub nodes: usize,
}

impl HemsSolution {
    pub fn final_soc(&self) -> f64 {
        self.intervals
            .last()
            .map_or(self.initial_soc_kwh, |iv| iv.soc_kwh)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HemsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("boundary SOC unreachable from interval {interval}")]
    Infeasible { interval: usize },
    #[error("branch-and-bound stopped after {nodes} nodes")]
    NodeLimit { nodes: usize },
    #[error("LP relaxation failed: {0}")]
    Relaxation(String),
}

/// Export and import setpoints of the first interval.
pub fn current_step_setpoints(sol: &HemsSolution) -> (f64, f64) {
    sol.intervals
        .first()
        .map_or((0.0, 0.0), |iv| (iv.p_export, iv.p_import))
}

pub fn solve_hems(
    batt: &BatteryParams,
    tariff: &TariffSchedule,
    fc: &ForecastSeries,
) -> Result<HemsSolution, HemsError> {
    solve_hems_with(batt, tariff, fc, &HemsOptions::default())
}

const INT_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-9;
const NVAR: usize = 6;
const PC: usize = 0;
const PD: usize = 1;
const PI: usize = 2;
const PE: usize = 3;
const SPILL: usize = 4;
const Z: usize = 5;

pub fn solve_hems_with(
    batt: &BatteryParams,
    tariff: &TariffSchedule,
    fc: &ForecastSeries,
    opts: &HemsOptions,
) -> Result<HemsSolution, HemsError> {
    check_inputs(batt, tariff, fc)?;
    let h = fc.horizon();
    let e0 = opts.initial_soc_kwh.unwrap_or(batt.e_set_kwh);
    if !(e0 >= -1e-9 && e0 <= batt.e_max_kwh + 1e-9) {
        return Err(HemsError::InvalidInput(format!(
            "initial SOC {e0} outside [0, {}]",
            batt.e_max_kwh
        )));
    }
    let e0 = e0.clamp(0.0, batt.e_max_kwh);
    let terminal = match opts.terminal {
        None => Some(TerminalSoc {
            after_interval: h - 1,
            soc_kwh: batt.e_set_kwh,
        }),
        Some(t) => t,
    };
    if let Some(t) = terminal {
        if t.after_interval >= h {
            return Err(HemsError::InvalidInput(format!(
                "terminal interval {} beyond horizon {h}",
                t.after_interval
            )));
        }
        if let Some(interval) = unreachable_interval(batt, fc.dt_hours, e0, t) {
            return Err(HemsError::Infeasible { interval });
        }
    }

    let base = build_lp(batt, tariff, fc, e0, terminal);
    let max_nodes = opts.max_nodes.unwrap_or(20_000);
    let (x, bound, nodes) = branch_and_bound(&base, h, max_nodes)?;
    Ok(finish(batt, tariff, fc, e0, &x, bound, nodes))
}

fn check_inputs(
    batt: &BatteryParams,
    tariff: &TariffSchedule,
    fc: &ForecastSeries,
) -> Result<(), HemsError> {
    let bad = |m: String| Err(HemsError::InvalidInput(m));
    let violations = batt.violations();
    if !violations.is_empty() {
        return bad(violations.join("; "));
    }
    let h = fc.horizon();
    if h == 0 {
        return bad("empty horizon".into());
    }
    if fc.p_pv_kw.len() != h || tariff.c_import.len() != h || tariff.c_export.len() != h {
        return bad(format!(
            "horizon mismatch: load {h}, pv {}, tariff {}/{}",
            fc.p_pv_kw.len(),
            tariff.c_import.len(),
            tariff.c_export.len()
        ));
    }
    if !(fc.dt_hours > 0.0 && fc.dt_hours.is_finite()) {
        return bad(format!("interval length {} must be positive", fc.dt_hours));
    }
    for tau in 0..h {
        let (l, p) = (fc.p_load_kw[tau], fc.p_pv_kw[tau]);
        if !(l >= 0.0 && p >= 0.0 && l.is_finite() && p.is_finite()) {
            return bad(format!("negative or non-finite forecast at interval {tau}"));
        }
        let (ci, ce) = (tariff.c_import[tau], tariff.c_export[tau]);
        if !(ci.is_finite() && ce.is_finite() && ci > ce) {
            return bad(format!(
                "import price {ci} must exceed export price {ce} at interval {tau}"
            ));
        }
    }
    Ok(())
}

/// Checks the initial SOC against the set of states that can still reach the
/// terminal target. The backward set at interval 0 is exact, so any failure is
/// reported against interval 0.
fn unreachable_interval(batt: &BatteryParams, dt: f64, e0: f64, t: TerminalSoc) -> Option<usize> {
    let up = batt.eta_c * batt.p_max_kw * dt;
    let down = batt.p_max_kw * dt / batt.eta_d;
    let tol = 1e-9 * batt.e_max_kwh.max(1.0);
    let (mut lo, mut hi) = (t.soc_kwh, t.soc_kwh);
    for _ in 0..=t.after_interval {
        lo = (lo - up).max(0.0);
        hi = (hi + down).min(batt.e_max_kwh);
    }
    (e0 < lo - tol || e0 > hi + tol).then_some(0)
}

fn soc_var(h: usize, tau: usize) -> usize {
    NVAR * h + tau
}

fn build_lp(
    batt: &BatteryParams,
    tariff: &TariffSchedule,
    fc: &ForecastSeries,
    e0: f64,
    terminal: Option<TerminalSoc>,
) -> LinearProgram {
    let h = fc.horizon();
    let dt = fc.dt_hours;
    let pmax = batt.p_max_kw;
    let mut lp = LinearProgram::new(NVAR * h + h);
    for tau in 0..h {
        let v = |k: usize| NVAR * tau + k;
        lp.cost[v(PI)] = dt * tariff.c_import[tau];
        lp.cost[v(PE)] = -dt * tariff.c_export[tau];
        lp.upper[v(PC)] = pmax;
        lp.upper[v(PD)] = pmax;
        lp.upper[v(SPILL)] = fc.p_pv_kw[tau];
        lp.upper[v(Z)] = 1.0;
        let e = soc_var(h, tau);
        lp.upper[e] = batt.e_max_kwh;
        if let Some(t) = terminal {
            if t.after_interval == tau {
                lp.lower[e] = t.soc_kwh;
                lp.upper[e] = t.soc_kwh;
            }
        }

        // pv - spill + discharge + import = load + charge + export
        lp.add_row(
            vec![(v(PC), 1.0), (v(PE), 1.0), (v(SPILL), 1.0), (v(PI), -1.0), (v(PD), -1.0)],
            RowKind::Eq,
            fc.p_pv_kw[tau] - fc.p_load_kw[tau],
        );
        let mut soc = vec![
            (e, 1.0),
            (v(PC), -batt.eta_c * dt),
            (v(PD), dt / batt.eta_d),
        ];
        let rhs = if tau == 0 {
            e0
        } else {
            soc.push((soc_var(h, tau - 1), -1.0));
            0.0
        };
        lp.add_row(soc, RowKind::Eq, rhs);
        lp.add_row(vec![(v(PC), 1.0), (v(Z), -pmax)], RowKind::Le, 0.0);
        lp.add_row(vec![(v(PD), 1.0), (v(Z), pmax)], RowKind::Le, pmax);
    }
    lp
}

struct Node {
    bound: f64,
    seq: usize,
    fixed: Vec<Option<bool>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum NodeResult {
    Pruned,
    Integral(Vec<f64>, f64),
    Branch(f64, usize),
}

fn evaluate(base: &LinearProgram, h: usize, fixed: &[Option<bool>]) -> Result<NodeResult, HemsError> {
    let mut lp = base.clone();
    for (tau, f) in fixed.iter().enumerate() {
        if let Some(on) = f {
            let z = NVAR * tau + Z;
            let v = if *on { 1.0 } else { 0.0 };
            lp.lower[z] = v;
            lp.upper[z] = v;
        }
    }
    let (mut x, obj) = match lp.solve() {
        LpOutcome::Optimal { x, objective } => (x, objective),
        LpOutcome::Infeasible => return Ok(NodeResult::Pruned),
        LpOutcome::Unbounded => return Err(HemsError::Relaxation("unbounded".into())),
        LpOutcome::IterationLimit => {
            return Err(HemsError::Relaxation("iteration limit".into()))
        }
    };
    // A fractional z is harmless when one of the two powers is already zero.
    let mut branch_on = None;
    for tau in 0..h {
        let z = NVAR * tau + Z;
        if x[z] > INT_TOL && x[z] < 1.0 - INT_TOL {
            let (pc, pd) = (x[NVAR * tau + PC], x[NVAR * tau + PD]);
            if pc <= INT_TOL {
                x[z] = 0.0;
            } else if pd <= INT_TOL {
                x[z] = 1.0;
            } else if branch_on.is_none() {
                branch_on = Some(tau);
            }
        } else {
            x[z] = x[z].round();
        }
    }
    Ok(match branch_on {
        Some(tau) => NodeResult::Branch(obj, tau),
        None => NodeResult::Integral(x, obj),
    })
}

fn branch_and_bound(
    base: &LinearProgram,
    h: usize,
    max_nodes: usize,
) -> Result<(Vec<f64>, f64, usize), HemsError> {
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixed: vec![None; h],
    });
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut nodes = 0;
    while let Some(node) = heap.pop() {
        if let Some((_, best)) = &incumbent {
            if node.bound >= best - BOUND_TOL {
                break;
            }
        }
        nodes += 1;
        if nodes > max_nodes {
            return Err(HemsError::NodeLimit { nodes: max_nodes });
        }
        match evaluate(base, h, &node.fixed)? {
            NodeResult::Pruned => {}
            NodeResult::Integral(x, obj) => {
                if incumbent.as_ref().is_none_or(|(_, best)| obj < *best) {
                    incumbent = Some((x, obj));
                }
            }
            NodeResult::Branch(obj, tau) => {
                if incumbent.as_ref().is_some_and(|(_, best)| obj >= best - BOUND_TOL) {
                    continue;
                }
                for on in [false, true] {
                    let mut fixed = node.fixed.clone();
                    fixed[tau] = Some(on);
                    seq += 1;
                    heap.push(Node {
                        bound: obj,
                        seq,
                        fixed,
                    });
                }
            }
        }
    }
    match incumbent {
        Some((x, obj)) => Ok((x, obj, nodes)),
        None => Err(HemsError::Infeasible { interval: 0 }),
    }
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

/// Snaps the LP point so that the balance and SOC recursions hold to
/// rounding, then recomputes the bill from the cleaned schedule.
fn finish(
    batt: &BatteryParams,
    tariff: &TariffSchedule,
    fc: &ForecastSeries,
    e0: f64,
    x: &[f64],
    bound: f64,
    nodes: usize,
) -> HemsSolution {
    let h = fc.horizon();
    let dt = fc.dt_hours;
    let mut soc = e0;
    let mut objective = 0.0;
    let mut intervals = Vec::with_capacity(h);
    for tau in 0..h {
        let v = |k: usize| x[NVAR * tau + k];
        let z = v(Z).round() as u8;
        let mut pc = clean(v(PC)).clamp(0.0, batt.p_max_kw);
        let mut pd = clean(v(PD)).clamp(0.0, batt.p_max_kw);
        if z == 1 {
            pd = 0.0;
        } else {
            pc = 0.0;
        }
        let pv = fc.p_pv_kw[tau];
        let surplus = pv - fc.p_load_kw[tau] - pc + pd;
        let (pi, pe, spill) = if surplus >= 0.0 {
            let mut pe = clean(v(PE)).clamp(0.0, surplus);
            let spill = (surplus - pe).min(pv);
            pe = surplus - spill;
            (0.0, pe, spill)
        } else {
            (-surplus, 0.0, 0.0)
        };
        debug_assert!(pi == 0.0 || pe == 0.0);
        soc += dt * (batt.eta_c * pc - pd / batt.eta_d);
        objective += dt * (tariff.c_import[tau] * pi - tariff.c_export[tau] * pe);
        intervals.push(HemsInterval {
            tau,
            p_charge: pc,
            p_discharge: pd,
            p_import: pi,
            p_export: pe,
            p_spill: spill,
            soc_kwh: soc,
            z,
        });
    }
    let scale = objective.abs().max(1.0);
    let gap = if (objective - bound).abs() <= BOUND_TOL * scale {
        0.0
    } else {
        (objective - bound).abs() / scale
    };
    HemsSolution {
        initial_soc_kwh: e0,
        intervals,
        objective_value: objective,
        gap,
        nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battery(e_max: f64, p_max: f64, eta: f64, e_set: f64) -> BatteryParams {
        BatteryParams {
            e_max_kwh: e_max,
            p_max_kw: p_max,
            eta_c: eta,
            eta_d: eta,
            e_set_kwh: e_set,
        }
    }

    #[test]
    fn idle_when_nothing_to_do() {
        let b = battery(10.0, 5.0, 0.95, 5.0);
        let fc = ForecastSeries {
            p_load_kw: vec![0.0; 4],
            p_pv_kw: vec![0.0; 4],
            dt_hours: 1.0,
        };
        let sol = solve_hems(&b, &TariffSchedule::flat(4, 0.3, 0.1), &fc).unwrap();
        assert_eq!(sol.objective_value, 0.0);
        assert_eq!(sol.gap, 0.0);
        for iv in &sol.intervals {
            assert_eq!((iv.p_charge, iv.p_discharge, iv.p_import, iv.p_export), (0.0, 0.0, 0.0, 0.0));
        }
        assert_eq!(current_step_setpoints(&sol), (0.0, 0.0));
    }

    #[test]
    fn store_then_sell_at_peak_price() {
        let b = battery(10.0, 5.0, 1.0, 5.0);
        let fc = ForecastSeries {
            p_load_kw: vec![0.0; 3],
            p_pv_kw: vec![5.0, 0.0, 0.0],
            dt_hours: 1.0,
        };
        let tariff = TariffSchedule {
            c_import: vec![20.0; 3],
            c_export: vec![1.0, 1.0, 10.0],
        };
        let sol = solve_hems(&b, &tariff, &fc).unwrap();
        assert!((sol.objective_value + 50.0).abs() < 1e-9);
        assert!((sol.intervals[0].p_charge - 5.0).abs() < 1e-9);
        assert!((sol.intervals[2].p_discharge - 5.0).abs() < 1e-9);
        assert!((sol.intervals[2].p_export - 5.0).abs() < 1e-9);
        assert_eq!(current_step_setpoints(&sol), (0.0, 0.0));
    }

    #[test]
    fn zero_rating_cannot_reach_boundary() {
        let b = battery(10.0, 0.0, 1.0, 5.0);
        let fc = ForecastSeries {
            p_load_kw: vec![1.0; 3],
            p_pv_kw: vec![0.0; 3],
            dt_hours: 1.0,
        };
        let opts = HemsOptions {
            initial_soc_kwh: Some(2.0),
            ..Default::default()
        };
        let err = solve_hems_with(&b, &TariffSchedule::flat(3, 0.3, 0.1), &fc, &opts).unwrap_err();
        assert_eq!(err, HemsError::Infeasible { interval: 0 });
    }

    #[test]
    fn night_import_covers_load_and_charge() {
        let b = battery(10.0, 2.0, 0.9, 5.0);
        let fc = ForecastSeries {
            p_load_kw: vec![3.0, 1.0],
            p_pv_kw: vec![0.0, 0.0],
            dt_hours: 1.0,
        };
        let sol = solve_hems(&b, &TariffSchedule::flat(2, 0.3, 0.1), &fc).unwrap();
        let (_, ois) = current_step_setpoints(&sol);
        let iv = &sol.intervals[0];
        assert!((ois - (3.0 + iv.p_charge - iv.p_discharge)).abs() < 1e-12);
    }

    #[test]
    fn rejects_inverted_tariff() {
        let b = battery(10.0, 2.0, 0.9, 5.0);
        let fc = ForecastSeries {
            p_load_kw: vec![1.0],
            p_pv_kw: vec![0.0],
            dt_hours: 1.0,
        };
        let err = solve_hems(&b, &TariffSchedule::flat(1, 0.1, 0.1), &fc).unwrap_err();
        assert!(matches!(err, HemsError::InvalidInput(_)));
    }

    #[test]
    fn battery_violations() {
        assert!(battery(10.0, 5.0, 0.9, 5.0).violations().is_empty());
        assert_eq!(battery(10.0, 5.0, 0.9, 12.0).violations().len(), 1);
        assert_eq!(battery(10.0, 5.0, 1.2, 5.0).violations().len(), 3);
    }
}
