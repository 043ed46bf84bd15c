//! Utility-side curtailment over the three-phase AC network.
//!
//! Given the export and import setpoints proposed by prosumers, the DMS finds
//! the smallest curtailment (in the chosen norm) for which the network has a
//! power-flow solution inside the voltage, ampacity and transformer limits.
//! Voltages are rectangular per node-phase, transformer taps are continuous,
//! and the problem is solved with a primal-dual interior-point method.

mod certificate;
pub mod jet;
pub mod nlp;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use certificate::{count_bound_violations, feasibility_certificate, FeasibilityReport};
use nlp::{Constraint, IpmError, IpmOptions, IpmResult, Nlp, Term};

use crate::network::{
    admittance::current_base_amps, BranchAdmittances, NetworkModel, NodeIndex, PhaseId,
    TapSettings,
};
use crate::powerflow::{
    compute_branch_flows, solve_powerflow, BranchFlows, InjectionSet, PowerflowOptions,
    VoltageSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurtailmentStrategy {
    L1,
    L2,
    Linf,
}

impl CurtailmentStrategy {
    pub const ALL: [CurtailmentStrategy; 3] = [Self::L1, Self::L2, Self::Linf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Linf => "linf",
        }
    }
}

impl fmt::Display for CurtailmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurtailmentStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "linf" | "l-inf" | "linfinity" => Ok(Self::Linf),
            other => Err(format!("unknown strategy '{other}' (expected l1, l2 or linf)")),
        }
    }
}

/// A prosumer's proposal for the current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub bus: String,
    pub phase: PhaseId,
    pub oes_kw: f64,
    pub ois_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DmsOptions {
    pub ipm: IpmOptions,
    /// Hold every transformer at its default tap.
    pub fixed_taps: bool,
    /// Keep the negative-curtailment variable of the split L1 form.
    pub l1_split: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub v_re: Vec<usize>,
    pub v_im: Vec<usize>,
    pub taps: Vec<usize>,
    /// Per setpoint: curtailment (the positive part under split L1).
    pub p_cu: Vec<usize>,
    pub p_minus: Vec<Option<usize>>,
    pub p_bar: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DmsProblem<'a> {
    pub model: &'a NetworkModel,
    pub index: NodeIndex,
    pub strategy: CurtailmentStrategy,
    pub setpoints: Vec<Setpoint>,
    pub weights: Vec<f64>,
    /// Consumption at every load node-phase; at prosumer node-phases only the
    /// reactive part is used.
    pub loads: InjectionSet,
    pub nlp: Nlp,
    pub layout: VarLayout,
}

impl DmsProblem<'_> {
    pub fn num_variables(&self) -> usize {
        self.nlp.num_vars()
    }

    /// Curtailment-related variables: `P_cu`, `P^-` and the L-infinity bound.
    pub fn num_curtailment_variables(&self) -> usize {
        self.layout.p_cu.len()
            + self.layout.p_minus.iter().flatten().count()
            + usize::from(self.layout.p_bar.is_some())
    }

    /// Net consumption `ois - oes + p_cu` (kW) at each prosumer.
    pub fn injections(&self, p_cu_kw: &[f64]) -> InjectionSet {
        let mut inj = InjectionSet::new();
        let prosumer: HashMap<(&str, PhaseId), usize> = self
            .setpoints
            .iter()
            .enumerate()
            .map(|(k, s)| ((s.bus.as_str(), s.phase), k))
            .collect();
        for (bus, phase, p, q) in self.loads.iter() {
            if !prosumer.contains_key(&(bus, phase)) {
                inj.set(bus, phase, p, q);
            }
        }
        for (k, s) in self.setpoints.iter().enumerate() {
            let (_, q) = self.loads.get(&s.bus, s.phase);
            inj.set(&s.bus, s.phase, s.ois_kw - s.oes_kw + p_cu_kw[k], q);
        }
        inj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerOutcome {
    pub bus: String,
    pub phase: PhaseId,
    pub weight: f64,
    pub oes_kw: f64,
    pub ois_kw: f64,
    pub p_cu_kw: f64,
    pub aes_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmsSolution {
    pub strategy: CurtailmentStrategy,
    pub prosumers: Vec<ProsumerOutcome>,
    pub voltages: VoltageSolution,
    pub taps: Vec<f64>,
    pub flows: BranchFlows,
    /// Objective in per-unit curtailment.
    pub objective: f64,
    /// Weighted maximum curtailment (kW) under L-infinity.
    pub p_bar_kw: Option<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub primal_infeasibility: f64,
    pub complementarity: f64,
    pub restorations: usize,
}

impl DmsSolution {
    pub fn total_curtailment_kw(&self) -> f64 {
        self.prosumers.iter().map(|p| p.p_cu_kw).sum()
    }

    pub fn max_curtailment_kw(&self) -> f64 {
        self.prosumers.iter().fold(0.0, |m, p| m.max(p.p_cu_kw))
    }

    /// Prosumers whose curtailment exceeds `threshold_kw`.
    pub fn adjusted_count(&self, threshold_kw: f64) -> usize {
        self.prosumers.iter().filter(|p| p.p_cu_kw > threshold_kw).count()
    }

    pub fn voltage_range_pu(&self) -> (f64, f64) {
        self.voltages
            .nodes
            .iter()
            .map(|n| n.magnitude())
            .fold((f64::INFINITY, 0.0), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Error)]
pub enum DmsError {
    #[error("no prosumer at bus '{bus}' phase {phase}")]
    UnknownProsumer { bus: String, phase: PhaseId },
    #[error("invalid setpoint at bus '{bus}' phase {phase}: {message}")]
    InvalidSetpoint {
        bus: String,
        phase: PhaseId,
        message: String,
    },
    #[error("{0}")]
    InvalidInput(String),
    #[error("DMS did not converge after {iterations} iterations (KKT residual {kkt:.2e}, infeasibility {infeasibility:.2e})")]
    NonConvergence {
        iterations: usize,
        kkt: f64,
        infeasibility: f64,
        last: Box<DmsSolution>,
    },
    #[error("network cannot be made feasible: {constraint} violated by {violation:.3e}")]
    LocallyInfeasible { constraint: String, violation: f64 },
}

/// Builds the curtailment problem. `weights` defaults to each prosumer's
/// configured weight.
pub fn build_problem<'a>(
    model: &'a NetworkModel,
    setpoints: &[Setpoint],
    loads: &InjectionSet,
    strategy: CurtailmentStrategy,
    weights: Option<&[f64]>,
    opts: &DmsOptions,
) -> Result<DmsProblem<'a>, DmsError> {
    let index = NodeIndex::new(model);
    let s_base = model.s_base_kva();

    let mut seen = HashMap::new();
    for (k, sp) in setpoints.iter().enumerate() {
        let Some(pro) = model
            .prosumers
            .iter()
            .find(|p| p.bus == sp.bus && p.phase == sp.phase)
        else {
            return Err(DmsError::UnknownProsumer {
                bus: sp.bus.clone(),
                phase: sp.phase,
            });
        };
        let bad = |message: &str| DmsError::InvalidSetpoint {
            bus: sp.bus.clone(),
            phase: sp.phase,
            message: message.to_string(),
        };
        if !(sp.oes_kw >= 0.0 && sp.ois_kw >= 0.0 && sp.oes_kw.is_finite() && sp.ois_kw.is_finite()) {
            return Err(bad("setpoints must be finite and nonnegative"));
        }
        if seen.insert((sp.bus.as_str(), sp.phase), k).is_some() {
            return Err(bad("duplicate setpoint"));
        }
        let _ = pro;
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != setpoints.len() {
                return Err(DmsError::InvalidInput(format!(
                    "{} weights for {} setpoints",
                    w.len(),
                    setpoints.len()
                )));
            }
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(DmsError::InvalidInput("weights must be positive".into()));
            }
            w.to_vec()
        }
        None => setpoints
            .iter()
            .map(|sp| {
                model
                    .prosumers
                    .iter()
                    .find(|p| p.bus == sp.bus && p.phase == sp.phase)
                    .map_or(1.0, |p| p.weight)
            })
            .collect(),
    };

    let mut nlp = Nlp::default();
    let mut v_re = Vec::with_capacity(index.len());
    let mut v_im = Vec::with_capacity(index.len());
    for (i, np) in index.iter() {
        let label = format!("{}.{}", model.buses[np.bus].id, np.phase);
        if np.slack {
            let (re, im) = crate::network::slack_phasor(model, np.phase);
            v_re.push(nlp.add_var(format!("vr {label}"), re, re));
            v_im.push(nlp.add_var(format!("vi {label}"), im, im));
        } else {
            v_re.push(nlp.add_var(format!("vr {label}"), f64::NEG_INFINITY, f64::INFINITY));
            v_im.push(nlp.add_var(format!("vi {label}"), f64::NEG_INFINITY, f64::INFINITY));
        }
        debug_assert_eq!(v_re.len(), i + 1);
    }
    let taps: Vec<usize> = model
        .transformers
        .iter()
        .map(|xf| {
            let fixed = xf.tap_fixed.or(opts.fixed_taps.then(|| xf.default_tap()));
            match fixed {
                Some(t) => nlp.add_var(format!("tap {}", xf.id), t, t),
                None if xf.tap_min == xf.tap_max => nlp.add_var(format!("tap {}", xf.id), xf.tap_min, xf.tap_min),
                None => nlp.add_var(format!("tap {}", xf.id), xf.tap_min, xf.tap_max),
            }
        })
        .collect();

    let split = strategy == CurtailmentStrategy::L1 && opts.l1_split;
    let mut p_cu = Vec::new();
    let mut p_minus = Vec::new();
    for sp in setpoints {
        let oes = sp.oes_kw / s_base;
        let name = format!("{}.{}", sp.bus, sp.phase);
        if split {
            let upper = if oes > 0.0 { f64::INFINITY } else { 0.0 };
            p_cu.push(nlp.add_var(format!("pcu+ {name}"), 0.0, upper));
            p_minus.push(Some(nlp.add_var(format!("pcu- {name}"), 0.0, upper)));
        } else {
            p_cu.push(nlp.add_var(format!("pcu {name}"), 0.0, oes));
            p_minus.push(None);
        }
    }
    let p_bar = (strategy == CurtailmentStrategy::Linf)
        .then(|| nlp.add_var("pbar", 0.0, f64::INFINITY));

    match strategy {
        CurtailmentStrategy::L1 => {
            for k in 0..setpoints.len() {
                nlp.obj_linear.push((p_cu[k], weights[k]));
                if let Some(m) = p_minus[k] {
                    nlp.obj_linear.push((m, weights[k]));
                }
            }
        }
        CurtailmentStrategy::L2 => {
            for k in 0..setpoints.len() {
                nlp.obj_quadratic.push((p_cu[k], weights[k]));
            }
        }
        CurtailmentStrategy::Linf => {
            nlp.obj_linear.push((p_bar.expect("bound variable"), 1.0));
        }
    }

    // Per node-phase consumption.
    let prosumer_of: HashMap<usize, usize> = setpoints
        .iter()
        .enumerate()
        .filter_map(|(k, sp)| index.get_by_id(&sp.bus, sp.phase).map(|i| (i, k)))
        .collect();
    let mut p_node = vec![0.0; index.len()];
    let mut q_node = vec![0.0; index.len()];
    for (bus, phase, p, q) in loads.iter() {
        let Some(i) = index.get_by_id(bus, phase) else {
            return Err(DmsError::InvalidInput(format!("load at unknown node {bus}.{phase}")));
        };
        if index.is_slack(i) {
            return Err(DmsError::InvalidInput(format!("load at slack node {bus}.{phase}")));
        }
        p_node[i] = p / s_base;
        q_node[i] = q / s_base;
    }

    // KCL rows: line stamps are linear, transformer stamps carry the tap.
    let branches = BranchAdmittances::new(model, &index);
    let n = index.len();
    let mut lin_re: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut lin_im: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut terms_re: Vec<Vec<(f64, Term)>> = vec![Vec::new(); n];
    let mut terms_im: Vec<Vec<(f64, Term)>> = vec![Vec::new(); n];
    let mut stamp = |row: usize, col: usize, sign: f64, g: f64, b: f64| {
        lin_re[row].push((v_re[col], sign * g));
        lin_re[row].push((v_im[col], -sign * b));
        lin_im[row].push((v_re[col], sign * b));
        lin_im[row].push((v_im[col], sign * g));
    };
    for la in &branches.lines {
        let k = la.from_nodes.len();
        for r in 0..k {
            for c in 0..k {
                let (g, b) = (la.g[r][c], la.b[r][c]);
                let (fr, fc) = (la.from_nodes[r], la.from_nodes[c]);
                let (tr, tc) = (la.to_nodes[r], la.to_nodes[c]);
                stamp(fr, fc, 1.0, g, b);
                stamp(fr, tc, -1.0, g, b);
                stamp(tr, tc, 1.0, g, b);
                stamp(tr, fc, -1.0, g, b);
            }
        }
    }
    for xa in &branches.transformers {
        let t = taps[xa.transformer];
        for (&pn, &sn) in xa.from_nodes.iter().zip(&xa.to_nodes) {
            for imag in [false, true] {
                let tap = |node: usize, power: i32| Term::Tap {
                    v_re: v_re[node],
                    v_im: v_im[node],
                    t,
                    power,
                    g: xa.g,
                    b: xa.b,
                    imag,
                };
                let rows = if imag { &mut terms_im } else { &mut terms_re };
                rows[pn].push((1.0, tap(pn, -2)));
                rows[pn].push((-1.0, tap(sn, -1)));
                rows[sn].push((-1.0, tap(pn, -1)));
            }
            stamp(sn, sn, 1.0, xa.g, xa.b);
        }
    }
    for (i, np) in index.iter() {
        if np.slack {
            continue;
        }
        let label = format!("{}.{}", model.buses[np.bus].id, np.phase);
        let mut p_vars = Vec::new();
        let mut p0 = p_node[i];
        if let Some(&k) = prosumer_of.get(&i) {
            let sp = &setpoints[k];
            p0 = (sp.ois_kw - sp.oes_kw) / s_base;
            p_vars.push((p_cu[k], 1.0));
            if let Some(m) = p_minus[k] {
                p_vars.push((m, -1.0));
            }
        }
        let has_load = p0 != 0.0 || q_node[i] != 0.0 || !p_vars.is_empty();
        for imag in [false, true] {
            let mut terms = if imag {
                std::mem::take(&mut terms_im[i])
            } else {
                std::mem::take(&mut terms_re[i])
            };
            if has_load {
                terms.push((
                    1.0,
                    Term::Load {
                        a: v_re[i],
                        b: v_im[i],
                        p: p_vars.clone(),
                        p0,
                        q: q_node[i],
                        imag,
                    },
                ));
            }
            let linear = merge(if imag { &lin_im[i] } else { &lin_re[i] });
            nlp.constraints.push(Constraint {
                name: format!("kcl {} {label}", if imag { "im" } else { "re" }),
                linear,
                terms,
                lower: 0.0,
                upper: 0.0,
            });
        }
    }

    // Voltage bands.
    for (i, np) in index.iter() {
        if np.slack {
            continue;
        }
        let bus = &model.buses[np.bus];
        nlp.constraints.push(Constraint {
            name: format!("voltage {}.{}", bus.id, np.phase),
            linear: vec![],
            terms: vec![(
                1.0,
                Term::SqMag {
                    re: vec![(v_re[i], 1.0)],
                    im: vec![(v_im[i], 1.0)],
                },
            )],
            lower: bus.v_min_pu * bus.v_min_pu,
            upper: bus.v_max_pu * bus.v_max_pu,
        });
    }

    // Ampacity, as squared current magnitude.
    for la in &branches.lines {
        let line = &model.lines[la.line];
        let k = la.from_nodes.len();
        for (r, phase) in line.phases.iter().enumerate() {
            let mut re = Vec::new();
            let mut im = Vec::new();
            for c in 0..k {
                let (g, b) = (la.g[r][c], la.b[r][c]);
                let (f, t) = (la.from_nodes[c], la.to_nodes[c]);
                re.extend([(v_re[f], g), (v_re[t], -g), (v_im[f], -b), (v_im[t], b)]);
                im.extend([(v_re[f], b), (v_re[t], -b), (v_im[f], g), (v_im[t], -g)]);
            }
            nlp.constraints.push(Constraint {
                name: format!("ampacity {}.{}", line.id, phase),
                linear: vec![],
                terms: vec![(1.0, Term::SqMag { re, im })],
                lower: f64::NEG_INFINITY,
                upper: la.i_max_pu * la.i_max_pu,
            });
        }
    }

    // Transformer apparent power at the from terminal.
    for xa in &branches.transformers {
        let xf = &model.transformers[xa.transformer];
        let phases = xa
            .from_nodes
            .iter()
            .zip(&xa.to_nodes)
            .map(|(&p, &s)| [v_re[p], v_im[p], v_re[s], v_im[s]])
            .collect();
        nlp.constraints.push(Constraint {
            name: format!("rating {}", xf.id),
            linear: vec![],
            terms: vec![(
                1.0,
                Term::XfmrPower {
                    phases,
                    t: taps[xa.transformer],
                    g: xa.g,
                    b: xa.b,
                },
            )],
            lower: f64::NEG_INFINITY,
            upper: xa.s_max_pu * xa.s_max_pu,
        });
    }

    if split {
        for (k, sp) in setpoints.iter().enumerate() {
            let Some(m) = p_minus[k] else { continue };
            nlp.constraints.push(Constraint {
                name: format!("curtail range {}.{}", sp.bus, sp.phase),
                linear: vec![(p_cu[k], 1.0), (m, -1.0)],
                terms: vec![],
                lower: 0.0,
                upper: sp.oes_kw / s_base,
            });
        }
    }
    if let Some(pb) = p_bar {
        for (k, sp) in setpoints.iter().enumerate() {
            if sp.oes_kw <= 0.0 {
                continue;
            }
            nlp.constraints.push(Constraint {
                name: format!("max curtail {}.{}", sp.bus, sp.phase),
                linear: vec![(p_cu[k], weights[k]), (pb, -1.0)],
                terms: vec![],
                lower: f64::NEG_INFINITY,
                upper: 0.0,
            });
        }
    }

    Ok(DmsProblem {
        model,
        index,
        strategy,
        setpoints: setpoints.to_vec(),
        weights,
        loads: loads.clone(),
        nlp,
        layout: VarLayout {
            v_re,
            v_im,
            taps,
            p_cu,
            p_minus,
            p_bar,
        },
    })
}

/// Sums duplicate columns.
fn merge(entries: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
    for (j, v) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

/// Warm start: power flow with every export fully curtailed and taps at
/// their defaults.
fn initial_point(problem: &DmsProblem) -> Vec<f64> {
    let model = problem.model;
    let nlp = &problem.nlp;
    let lay = &problem.layout;
    let s_base = model.s_base_kva();
    let mut x = vec![0.0; nlp.num_vars()];

    let full: Vec<f64> = problem.setpoints.iter().map(|s| s.oes_kw).collect();
    let inj = problem.injections(&full);
    let taps: Vec<f64> = lay
        .taps
        .iter()
        .zip(&model.transformers)
        .map(|(&v, xf)| {
            if nlp.lower[v] == nlp.upper[v] {
                nlp.lower[v]
            } else {
                xf.default_tap()
            }
        })
        .collect();
    let pf_opts = PowerflowOptions {
        taps: Some(TapSettings(taps.clone())),
        ..Default::default()
    };
    let (vr, vi) = match solve_powerflow(model, &inj, &pf_opts) {
        Ok(sol) => (sol.v_re(), sol.v_im()),
        Err(_) => crate::powerflow::flat_start(model, &problem.index, &TapSettings(taps.clone())),
    };
    for i in 0..problem.index.len() {
        x[lay.v_re[i]] = vr[i];
        x[lay.v_im[i]] = vi[i];
    }
    for (k, &v) in lay.taps.iter().enumerate() {
        x[v] = taps[k];
    }
    let mut worst: f64 = 0.0;
    for (k, sp) in problem.setpoints.iter().enumerate() {
        let oes = sp.oes_kw / s_base;
        x[lay.p_cu[k]] = oes;
        worst = worst.max(problem.weights[k] * oes);
    }
    if let Some(pb) = lay.p_bar {
        x[pb] = worst;
    }
    x
}

pub fn solve_dms(problem: &DmsProblem, opts: &DmsOptions) -> Result<DmsSolution, DmsError> {
    let x0 = initial_point(problem);
    match nlp::solve_ipm(&problem.nlp, &x0, &opts.ipm) {
        Ok(res) => Ok(extract(problem, &polish(problem, res, opts))),
        Err(IpmError::NonConvergence(res)) => Err(DmsError::NonConvergence {
            iterations: res.iterations,
            kkt: res.stationarity,
            infeasibility: res.primal_infeasibility,
            last: Box::new(extract(problem, &res)),
        }),
        Err(IpmError::LocallyInfeasible {
            constraint,
            violation,
            ..
        }) => Err(DmsError::LocallyInfeasible {
            constraint: problem.nlp.constraints[constraint].name.clone(),
            violation,
        }),
    }
}

/// Curtailments left a barrier-sized distance above zero are fixed at zero
/// and the problem re-solved; the result is kept only if no worse. The
/// L-infinity optimum is a face rather than a point, so its central solution
/// is kept unless the bound itself is near zero.
fn polish(problem: &DmsProblem, res: IpmResult, opts: &DmsOptions) -> IpmResult {
    const NEAR_ZERO_PU: f64 = 1e-4;
    let lay = &problem.layout;
    if let Some(bar) = lay.p_bar {
        if res.x[bar] > NEAR_ZERO_PU {
            return res;
        }
    }
    let mut nlp = problem.nlp.clone();
    let mut pinned = Vec::new();
    let p_bar = lay.p_bar.iter();
    for &v in lay.p_cu.iter().chain(lay.p_minus.iter().flatten()).chain(p_bar) {
        if nlp.lower[v] < nlp.upper[v] && res.x[v] <= NEAR_ZERO_PU && res.x[v] > 0.0 {
            nlp.lower[v] = 0.0;
            nlp.upper[v] = 0.0;
            pinned.push(v);
        }
    }
    if pinned.is_empty() {
        return res;
    }
    let ipm = IpmOptions {
        mu0: opts.ipm.mu0.min(1e-3),
        ..opts.ipm.clone()
    };
    match nlp::solve_ipm(&nlp, &res.x, &ipm) {
        Ok(mut fixed) if fixed.objective <= res.objective + 1e-10 + 1e-6 * res.objective.abs() => {
            let zero = vec![0.0; fixed.x.len()];
            let g = nlp.lagrangian_gradient(&fixed.x, &fixed.lambda, &zero, &zero);
            for &v in &pinned {
                fixed.z_lower[v] = g[v].max(0.0);
                fixed.z_upper[v] = (-g[v]).max(0.0);
            }
            fixed.iterations += res.iterations;
            fixed.restorations += res.restorations;
            fixed
        }
        _ => res,
    }
}

fn extract(problem: &DmsProblem, res: &IpmResult) -> DmsSolution {
    let model = problem.model;
    let lay = &problem.layout;
    let s_base = model.s_base_kva();
    let x = &res.x;

    let prosumers = problem
        .setpoints
        .iter()
        .enumerate()
        .map(|(k, sp)| {
            let mut p = x[lay.p_cu[k]];
            if let Some(m) = lay.p_minus[k] {
                p -= x[m];
            }
            let p_cu_kw = (p * s_base).clamp(0.0, sp.oes_kw);
            ProsumerOutcome {
                bus: sp.bus.clone(),
                phase: sp.phase,
                weight: problem.weights[k],
                oes_kw: sp.oes_kw,
                ois_kw: sp.ois_kw,
                p_cu_kw,
                aes_kw: sp.oes_kw - p_cu_kw,
            }
        })
        .collect::<Vec<_>>();

    let vr: Vec<f64> = lay.v_re.iter().map(|&v| x[v]).collect();
    let vi: Vec<f64> = lay.v_im.iter().map(|&v| x[v]).collect();
    let taps = TapSettings(lay.taps.iter().map(|&v| x[v]).collect());
    let p_cu_kw: Vec<f64> = prosumers.iter().map(|p| p.p_cu_kw).collect();
    let inj = problem.injections(&p_cu_kw);
    let kcl = crate::powerflow::kcl_residuals(model, &inj, &VoltageSolution::from_arrays(model, &problem.index, &vr, &vi, res.iterations, 0.0), &taps)
        .map(|(re, im)| crate::linalg::norm_inf(&re).max(crate::linalg::norm_inf(&im)))
        .unwrap_or(f64::NAN);
    let voltages = VoltageSolution::from_arrays(model, &problem.index, &vr, &vi, res.iterations, kcl);
    let flows = compute_branch_flows(model, &voltages, &taps);
    DmsSolution {
        strategy: problem.strategy,
        prosumers,
        voltages,
        taps: taps.0,
        flows,
        objective: res.objective,
        p_bar_kw: lay.p_bar.map(|v| x[v] * s_base),
        iterations: res.iterations,
        kkt_residual: res.stationarity,
        primal_infeasibility: res.primal_infeasibility,
        complementarity: res.complementarity,
        restorations: res.restorations,
    }
}

/// Adjusted export setpoints keyed by `(bus, phase)`.
pub fn adjusted_setpoints(sol: &DmsSolution) -> Vec<((String, PhaseId), f64)> {
    sol.prosumers
        .iter()
        .map(|p| ((p.bus.clone(), p.phase), p.aes_kw))
        .collect()
}

/// Ampere base of a line's from bus, for reporting.
pub fn line_current_base(model: &NetworkModel, line: usize) -> f64 {
    let kv = model
        .bus(&model.lines[line].from)
        .map_or(1.0, |b| b.base_kv);
    current_base_amps(model, kv)
}
