use serde::{Deserialize, Serialize};

use super::{DmsProblem, DmsSolution};
use crate::linalg::norm_inf;
use crate::network::{NetworkModel, NodeIndex, TapSettings};
use crate::powerflow::{compute_branch_flows, kcl_residuals, VoltageSolution};

/// Limits re-checked from scratch against the solved voltages, without using
/// any quantity computed inside the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Largest KCL mismatch, per unit current.
    pub kcl_residual: f64,
    /// Largest distance outside a voltage band, per unit.
    pub voltage_violation: f64,
    /// Largest `|I| / I_max - 1`, clamped at zero.
    pub line_overload: f64,
    pub transformer_overload: f64,
    pub tap_violation: f64,
    /// Largest curtailment outside `[0, oes]`, kW.
    pub curtailment_violation: f64,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        [
            self.kcl_residual,
            self.voltage_violation,
            self.line_overload,
            self.transformer_overload,
            self.tap_violation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.worst() <= tol && self.curtailment_violation <= tol
    }
}

pub fn feasibility_certificate(problem: &DmsProblem, sol: &DmsSolution) -> FeasibilityReport {
    let model = problem.model;
    let p_cu: Vec<f64> = sol.prosumers.iter().map(|p| p.p_cu_kw).collect();
    let inj = problem.injections(&p_cu);
    let taps = TapSettings(sol.taps.clone());
    let kcl_residual = kcl_residuals(model, &inj, &sol.voltages, &taps)
        .map(|(re, im)| norm_inf(&re).max(norm_inf(&im)))
        .unwrap_or(f64::INFINITY);

    let mut voltage_violation: f64 = 0.0;
    for (i, np) in problem.index.iter() {
        let bus = &model.buses[np.bus];
        let v = sol.voltages.nodes[i].magnitude();
        voltage_violation = voltage_violation
            .max(bus.v_min_pu - v)
            .max(v - bus.v_max_pu);
    }

    let flows = compute_branch_flows(model, &sol.voltages, &taps);
    let line_overload = flows
        .lines
        .iter()
        .fold(0.0, |m: f64, l| m.max(l.loading - 1.0));
    let transformer_overload = flows
        .transformers
        .iter()
        .fold(0.0, |m: f64, t| m.max(t.loading - 1.0));

    let tap_violation = model
        .transformers
        .iter()
        .zip(&sol.taps)
        .fold(0.0, |m: f64, (xf, &t)| m.max(xf.tap_min - t).max(t - xf.tap_max));
    let curtailment_violation = sol
        .prosumers
        .iter()
        .fold(0.0, |m: f64, p| m.max(-p.p_cu_kw).max(p.p_cu_kw - p.oes_kw));

    FeasibilityReport {
        kcl_residual,
        voltage_violation,
        line_overload,
        transformer_overload,
        tap_violation,
        curtailment_violation,
    }
}

/// Number of voltage bands, line ampacities and transformer ratings broken
/// by more than `tol` at the given operating point.
pub fn count_bound_violations(
    model: &NetworkModel,
    voltages: &VoltageSolution,
    taps: &TapSettings,
    tol: f64,
) -> usize {
    let index = NodeIndex::new(model);
    let mut count = 0;
    for (i, np) in index.iter() {
        if index.is_slack(i) {
            continue;
        }
        let bus = &model.buses[np.bus];
        let v = voltages.nodes[i].magnitude();
        if v < bus.v_min_pu - tol || v > bus.v_max_pu + tol {
            count += 1;
        }
    }
    let flows = compute_branch_flows(model, voltages, taps);
    count += flows.lines.iter().filter(|l| l.loading > 1.0 + tol).count();
    count += flows
        .transformers
        .iter()
        .filter(|t| t.loading > 1.0 + tol)
        .count();
    count
}
