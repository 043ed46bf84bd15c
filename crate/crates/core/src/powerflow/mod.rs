//! Three-phase power flow in rectangular current-injection form.
//!
//! Unknowns are `(V^R, V^I)` at every non-slack node-phase. The residual at a
//! node-phase is the real/imaginary KCL mismatch
//! `sum_j Y_ij V_j + I_load,i(V_i)` where the load current follows the
//! constant-power law `I = conj(S / V)` with consumption-positive `S`.

mod flows;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{
    assemble_admittance, slack_phasor, NetworkModel, NodeIndex, PhaseId,
    SparseRealAdmittance, TapSettings,
};
use crate::sparse::{LuError, SparseLu, Triplets};

pub use flows::{compute_branch_flows, kcl_residuals, BranchFlows, LineFlow, TransformerFlow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerflowError {
    #[error("power flow did not converge in {iterations} iterations (max residual {max_residual:.3e} pu)")]
    NonConvergence {
        iterations: usize,
        max_residual: f64,
        /// Best iterate reached, for diagnosis.
        best: Box<VoltageSolution>,
    },
    #[error("singular Jacobian at pivot node ({bus}, {phase})")]
    SingularJacobian { bus: String, phase: PhaseId },
    #[error("voltage collapse: |V| at ({bus}, {phase}) is at the 0.3 pu floor")]
    VoltageCollapse { bus: String, phase: PhaseId },
    #[error("injection at ({bus}, {phase}) does not match a non-slack node-phase")]
    InvalidInjection { bus: String, phase: PhaseId },
}

/// Net demand per (bus, phase) in kW/kvar, consumption positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    entries: BTreeMap<(String, PhaseId), (f64, f64)>,
}

impl InjectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Demand taken from the model's load entries.
    pub fn from_loads(model: &NetworkModel) -> Self {
        let mut set = InjectionSet::new();
        for load in &model.loads {
            set.add(&load.bus, load.phase, load.p_kw, load.q_kvar);
        }
        set
    }

    pub fn add(&mut self, bus: &str, phase: PhaseId, p_kw: f64, q_kvar: f64) {
        let e = self.entries.entry((bus.to_string(), phase)).or_default();
        e.0 += p_kw;
        e.1 += q_kvar;
    }

    pub fn set(&mut self, bus: &str, phase: PhaseId, p_kw: f64, q_kvar: f64) {
        self.entries.insert((bus.to_string(), phase), (p_kw, q_kvar));
    }

    pub fn get(&self, bus: &str, phase: PhaseId) -> (f64, f64) {
        self.entries
            .get(&(bus.to_string(), phase))
            .copied()
            .unwrap_or((0.0, 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        InjectionSet {
            entries: self
                .entries
                .iter()
                .map(|(k, (p, q))| (k.clone(), (p * factor, q * factor)))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, PhaseId, f64, f64)> {
        self.entries
            .iter()
            .map(|((bus, phase), (p, q))| (bus.as_str(), *phase, *p, *q))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-unit `(p, q)` arrays over node-phases.
    pub fn to_per_unit(
        &self,
        model: &NetworkModel,
        index: &NodeIndex,
    ) -> Result<(Vec<f64>, Vec<f64>), PowerflowError> {
        let mut p = vec![0.0; index.len()];
        let mut q = vec![0.0; index.len()];
        let s_base = model.s_base_kva();
        for (bus, phase, pk, qk) in self.iter() {
            match index.get_by_id(bus, phase) {
                Some(i) if !index.is_slack(i) => {
                    p[i] += pk / s_base;
                    q[i] += qk / s_base;
                }
                _ => {
                    return Err(PowerflowError::InvalidInjection {
                        bus: bus.to_string(),
                        phase,
                    })
                }
            }
        }
        Ok((p, q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVoltage {
    pub bus: String,
    pub phase: PhaseId,
    pub v_real: f64,
    pub v_imag: f64,
}

impl NodeVoltage {
    pub fn magnitude(&self) -> f64 {
        self.v_real.hypot(self.v_imag)
    }
}

/// Per-unit rectangular voltages at every node-phase, in [`NodeIndex`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    pub nodes: Vec<NodeVoltage>,
    pub iterations: usize,
    pub max_residual: f64,
}

impl VoltageSolution {
    pub fn v_re(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.v_real).collect()
    }

    pub fn v_im(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.v_imag).collect()
    }

    pub fn get(&self, bus: &str, phase: PhaseId) -> Option<&NodeVoltage> {
        self.nodes.iter().find(|n| n.bus == bus && n.phase == phase)
    }

    pub(crate) fn from_arrays(
        model: &NetworkModel,
        index: &NodeIndex,
        v_re: &[f64],
        v_im: &[f64],
        iterations: usize,
        max_residual: f64,
    ) -> Self {
        let nodes = index
            .iter()
            .map(|(i, np)| NodeVoltage {
                bus: model.buses[np.bus].id.clone(),
                phase: np.phase,
                v_real: v_re[i],
                v_imag: v_im[i],
            })
            .collect();
        VoltageSolution {
            nodes,
            iterations,
            max_residual,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerflowOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub taps: Option<TapSettings>,
    pub voltage_floor: f64,
    pub max_halvings: usize,
}

impl Default for PowerflowOptions {
    fn default() -> Self {
        PowerflowOptions {
            tol: 1e-8,
            max_iter: 50,
            taps: None,
            voltage_floor: 0.3,
            max_halvings: 8,
        }
    }
}

/// Flat start: slack phasors carried through transformers as `V / t`.
pub fn flat_start(
    model: &NetworkModel,
    index: &NodeIndex,
    taps: &TapSettings,
) -> (Vec<f64>, Vec<f64>) {
    let n_bus = model.buses.len();
    let mut scale: Vec<Option<f64>> = vec![None; n_bus];
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_bus];
    for line in &model.lines {
        if let (Some(a), Some(b)) = (index.bus_position(&line.from), index.bus_position(&line.to)) {
            adjacency[a].push((b, 1.0));
            adjacency[b].push((a, 1.0));
        }
    }
    for (k, xf) in model.transformers.iter().enumerate() {
        if let (Some(a), Some(b)) = (index.bus_position(&xf.from), index.bus_position(&xf.to)) {
            let t = taps.0[k];
            adjacency[a].push((b, 1.0 / t));
            adjacency[b].push((a, t));
        }
    }
    let mut queue = std::collections::VecDeque::new();
    for (bi, bus) in model.buses.iter().enumerate() {
        if bus.kind == crate::network::BusKind::Slack {
            scale[bi] = Some(1.0);
            queue.push_back(bi);
        }
    }
    while let Some(b) = queue.pop_front() {
        let s = scale[b].unwrap();
        for &(nb, ratio) in &adjacency[b] {
            if scale[nb].is_none() {
                scale[nb] = Some(s * ratio);
                queue.push_back(nb);
            }
        }
    }
    let mut v_re = vec![0.0; index.len()];
    let mut v_im = vec![0.0; index.len()];
    for (i, np) in index.iter() {
        let (re, im) = slack_phasor(model, np.phase);
        let s = scale[np.bus].unwrap_or(1.0);
        v_re[i] = re * s;
        v_im[i] = im * s;
    }
    (v_re, v_im)
}

/// Constant-power load current `(I^R, I^I)` drawn at voltage `(a, b)`.
pub fn load_current(p: f64, q: f64, a: f64, b: f64) -> (f64, f64) {
    let m = a * a + b * b;
    ((p * a + q * b) / m, (p * b - q * a) / m)
}

/// Jacobian of [`load_current`] w.r.t. `(a, b)`:
/// `[[dIr/da, dIr/db], [dIi/da, dIi/db]]`.
fn load_current_jacobian(p: f64, q: f64, a: f64, b: f64) -> [[f64; 2]; 2] {
    let m = a * a + b * b;
    let m2 = m * m;
    let d_ir_da = (p * (b * b - a * a) - 2.0 * q * a * b) / m2;
    let d_ir_db = (q * (a * a - b * b) - 2.0 * p * a * b) / m2;
    let d_ii_da = (q * (a * a - b * b) - 2.0 * p * a * b) / m2;
    let d_ii_db = (p * (a * a - b * b) + 2.0 * q * a * b) / m2;
    [[d_ir_da, d_ir_db], [d_ii_da, d_ii_db]]
}

struct Problem<'a> {
    y: SparseRealAdmittance,
    index: &'a NodeIndex,
    p: Vec<f64>,
    q: Vec<f64>,
    /// Node-phase -> position among unknowns (None for slack).
    unknown: Vec<Option<usize>>,
    nodes: Vec<usize>,
}

impl Problem<'_> {
    fn residual(&self, v_re: &[f64], v_im: &[f64]) -> Vec<f64> {
        let (yr, yi) = self.y.multiply(v_re, v_im);
        let mut f = vec![0.0; 2 * self.nodes.len()];
        for (k, &i) in self.nodes.iter().enumerate() {
            let (lr, li) = load_current(self.p[i], self.q[i], v_re[i], v_im[i]);
            f[2 * k] = yr[i] + lr;
            f[2 * k + 1] = yi[i] + li;
        }
        f
    }

    fn jacobian(&self, v_re: &[f64], v_im: &[f64]) -> Triplets {
        let n = 2 * self.nodes.len();
        let mut t = Triplets::new(n, n);
        for (k, &i) in self.nodes.iter().enumerate() {
            for &(j, g, b) in self.y.row(i) {
                if let Some(m) = self.unknown[j] {
                    t.push(2 * k, 2 * m, g);
                    t.push(2 * k, 2 * m + 1, -b);
                    t.push(2 * k + 1, 2 * m, b);
                    t.push(2 * k + 1, 2 * m + 1, g);
                }
            }
            if self.p[i] != 0.0 || self.q[i] != 0.0 {
                let d = load_current_jacobian(self.p[i], self.q[i], v_re[i], v_im[i]);
                t.push(2 * k, 2 * k, d[0][0]);
                t.push(2 * k, 2 * k + 1, d[0][1]);
                t.push(2 * k + 1, 2 * k, d[1][0]);
                t.push(2 * k + 1, 2 * k + 1, d[1][1]);
            }
        }
        t
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the three-phase power flow by damped Newton from a flat start.
pub fn solve_powerflow(
    model: &NetworkModel,
    injections: &InjectionSet,
    opts: &PowerflowOptions,
) -> Result<VoltageSolution, PowerflowError> {
    let index = NodeIndex::new(model);
    let taps = opts
        .taps
        .clone()
        .unwrap_or_else(|| TapSettings::default_for(model));
    let (p, q) = injections.to_per_unit(model, &index)?;
    let y = assemble_admittance(model, &index, &taps);
    let mut unknown = vec![None; index.len()];
    let mut nodes = Vec::new();
    for (i, np) in index.iter() {
        if !np.slack {
            unknown[i] = Some(nodes.len());
            nodes.push(i);
        }
    }
    let problem = Problem {
        y,
        index: &index,
        p,
        q,
        unknown,
        nodes,
    };
    let (mut v_re, mut v_im) = flat_start(model, &index, &taps);

    let node_label = |i: usize| {
        let np = problem.index.node(i);
        (model.buses[np.bus].id.clone(), np.phase)
    };

    let mut f = problem.residual(&v_re, &v_im);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let max_residual = crate::linalg::norm_inf(&f);
        if max_residual <= opts.tol {
            for &i in &problem.nodes {
                if v_re[i].hypot(v_im[i]) <= opts.voltage_floor * (1.0 + 1e-9) {
                    let (bus, phase) = node_label(i);
                    return Err(PowerflowError::VoltageCollapse { bus, phase });
                }
            }
            return Ok(VoltageSolution::from_arrays(
                model, &index, &v_re, &v_im, iterations, max_residual,
            ));
        }
        if iterations > opts.max_iter || problem.nodes.is_empty() {
            return Err(PowerflowError::NonConvergence {
                iterations: iterations - 1,
                max_residual,
                best: Box::new(VoltageSolution::from_arrays(
                    model,
                    &index,
                    &v_re,
                    &v_im,
                    iterations - 1,
                    max_residual,
                )),
            });
        }

        let jac = problem.jacobian(&v_re, &v_im).to_csr();
        let lu = SparseLu::factor(&jac).map_err(|e| match e {
            LuError::Singular { column, .. } => {
                let (bus, phase) = node_label(problem.nodes[column / 2]);
                PowerflowError::SingularJacobian { bus, phase }
            }
            LuError::NotSquare(..) => unreachable!("Jacobian is square"),
        })?;
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let dx = lu.solve_refined(&jac, &rhs);

        let base_norm = norm2(&f);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let (mut tr, mut ti) = (v_re.clone(), v_im.clone());
            for (k, &i) in problem.nodes.iter().enumerate() {
                tr[i] += alpha * dx[2 * k];
                ti[i] += alpha * dx[2 * k + 1];
                let mag = tr[i].hypot(ti[i]);
                if mag < opts.voltage_floor {
                    let s = opts.voltage_floor / mag.max(f64::MIN_POSITIVE);
                    if mag > 0.0 {
                        tr[i] *= s;
                        ti[i] *= s;
                    } else {
                        let (re, im) = slack_phasor(model, problem.index.node(i).phase);
                        tr[i] = re * opts.voltage_floor;
                        ti[i] = im * opts.voltage_floor;
                    }
                }
            }
            let ft = problem.residual(&tr, &ti);
            let decreased = norm2(&ft) < base_norm;
            accepted = Some((tr, ti, ft));
            if decreased {
                break;
            }
            alpha *= 0.5;
        }
        let (tr, ti, ft) = accepted.expect("at least one trial step");
        v_re = tr;
        v_im = ti;
        f = ft;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network_text;

    fn two_bus(g: f64, b: f64, p: f64, q: f64) -> (NetworkModel, InjectionSet) {
        let text = format!(
            "[bus]\ns slack a 1 0.5 1.5\nn load a 1 0.5 1.5\n[line]\nl s n a 100 {g} {b}\n[load]\nn a {p} {q}\n"
        );
        let model = parse_network_text(&text).unwrap();
        let inj = InjectionSet::from_loads(&model);
        (model, inj)
    }

    #[test]
    fn zero_injection_is_flat_in_one_iteration() {
        let (model, _) = two_bus(2.0, -6.0, 0.0, 0.0);
        let sol = solve_powerflow(&model, &InjectionSet::new(), &Default::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.nodes[1].v_real, 1.0);
        assert_eq!(sol.nodes[1].v_imag, 0.0);
    }

    #[test]
    fn two_bus_matches_quadratic() {
        // z = 1/y; with V1 = 1 and real V2 solution of V2^2 - V2 + z*conj(S) ... use the
        // classic |V2|^2 quadratic: |V2|^4 + (2(RP + XQ) - 1)|V2|^2 + (R^2 + X^2)(P^2 + Q^2) = 0.
        let (g, b) = (4.0, -8.0);
        let (p_kw, q_kvar) = (150.0, 60.0);
        let (model, inj) = two_bus(g, b, p_kw, q_kvar);
        let sol = solve_powerflow(&model, &inj, &Default::default()).unwrap();
        let den = g * g + b * b;
        let (r, x) = (g / den, -b / den);
        let (p, q) = (p_kw / 1000.0, q_kvar / 1000.0);
        let bq = 2.0 * (r * p + x * q) - 1.0;
        let c = (r * r + x * x) * (p * p + q * q);
        let m2 = (-bq + (bq * bq - 4.0 * c).sqrt()) / 2.0;
        let v = sol.nodes[1].magnitude();
        assert!((v - m2.sqrt()).abs() < 1e-10, "{v} vs {}", m2.sqrt());
        assert!(sol.max_residual <= 1e-8);
    }

    #[test]
    fn slack_injection_rejected() {
        let (model, _) = two_bus(1.0, -1.0, 0.0, 0.0);
        let mut inj = InjectionSet::new();
        inj.add("s", PhaseId::A, 1.0, 0.0);
        assert!(matches!(
            solve_powerflow(&model, &inj, &Default::default()),
            Err(PowerflowError::InvalidInjection { .. })
        ));
    }

    #[test]
    fn overload_does_not_converge() {
        // Far beyond the nose of the PV curve.
        let (model, inj) = two_bus(1.0, -1.0, 5000.0, 0.0);
        match solve_powerflow(&model, &inj, &Default::default()) {
            Err(PowerflowError::NonConvergence { max_residual, .. }) => assert!(max_residual > 1e-8),
            Err(PowerflowError::VoltageCollapse { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
