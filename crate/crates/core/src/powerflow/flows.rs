use serde::{Deserialize, Serialize};

use super::{load_current, InjectionSet, PowerflowError, VoltageSolution};
use crate::network::{
    admittance::current_base_amps, BranchAdmittances, NetworkModel, NodeIndex, PhaseId,
    TapSettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurrent {
    pub phase: PhaseId,
    /// From-end current, per unit.
    pub i_real: f64,
    pub i_imag: f64,
    pub i_amps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    pub id: String,
    pub phases: Vec<PhaseCurrent>,
    /// Largest `|I| / I_max` over phases.
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerFlow {
    pub id: String,
    pub tap: f64,
    /// Per-phase primary-side currents, per unit of the primary base.
    pub phases: Vec<PhaseCurrent>,
    /// Three-phase power entering the from terminal.
    pub p_kw: f64,
    pub q_kvar: f64,
    /// `|S| / S_max`.
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlows {
    pub lines: Vec<LineFlow>,
    pub transformers: Vec<TransformerFlow>,
}

/// Branch currents from Ohm's law over each branch block.
pub fn compute_branch_flows(
    model: &NetworkModel,
    solution: &VoltageSolution,
    taps: &TapSettings,
) -> BranchFlows {
    let index = NodeIndex::new(model);
    let branches = BranchAdmittances::new(model, &index);
    let v_re = solution.v_re();
    let v_im = solution.v_im();

    let lines = branches
        .lines
        .iter()
        .map(|la| {
            let line = &model.lines[la.line];
            let base_kv = model.bus(&line.from).map_or(1.0, |b| b.base_kv);
            let i_base = current_base_amps(model, base_kv);
            let k = la.from_nodes.len();
            let mut loading = 0.0f64;
            let phases = line
                .phases
                .iter()
                .enumerate()
                .map(|(r, phase)| {
                    let (mut ir, mut ii) = (0.0, 0.0);
                    for c in 0..k {
                        let dr = v_re[la.from_nodes[c]] - v_re[la.to_nodes[c]];
                        let di = v_im[la.from_nodes[c]] - v_im[la.to_nodes[c]];
                        ir += la.g[r][c] * dr - la.b[r][c] * di;
                        ii += la.b[r][c] * dr + la.g[r][c] * di;
                    }
                    loading = loading.max(ir.hypot(ii) / la.i_max_pu);
                    PhaseCurrent {
                        phase,
                        i_real: ir,
                        i_imag: ii,
                        i_amps: ir.hypot(ii) * i_base,
                    }
                })
                .collect();
            LineFlow {
                id: line.id.clone(),
                phases,
                loading,
            }
        })
        .collect();

    let transformers = branches
        .transformers
        .iter()
        .map(|xa| {
            let xf = &model.transformers[xa.transformer];
            let t = taps.0[xa.transformer];
            let base_kv = model.bus(&xf.from).map_or(1.0, |b| b.base_kv);
            let i_base = current_base_amps(model, base_kv);
            let (mut p, mut q) = (0.0, 0.0);
            let phases = xf
                .phases
                .iter()
                .enumerate()
                .map(|(r, phase)| {
                    let (pi, si) = (xa.from_nodes[r], xa.to_nodes[r]);
                    // I_p = y (V_p / t^2 - V_s / t)
                    let dr = v_re[pi] / (t * t) - v_re[si] / t;
                    let di = v_im[pi] / (t * t) - v_im[si] / t;
                    let ir = xa.g * dr - xa.b * di;
                    let ii = xa.b * dr + xa.g * di;
                    // S = V conj(I)
                    p += v_re[pi] * ir + v_im[pi] * ii;
                    q += v_im[pi] * ir - v_re[pi] * ii;
                    PhaseCurrent {
                        phase,
                        i_real: ir,
                        i_imag: ii,
                        i_amps: ir.hypot(ii) * i_base,
                    }
                })
                .collect();
            TransformerFlow {
                id: xf.id.clone(),
                tap: t,
                phases,
                p_kw: p * model.s_base_kva(),
                q_kvar: q * model.s_base_kva(),
                loading: p.hypot(q) / xa.s_max_pu,
            }
        })
        .collect();

    BranchFlows {
        lines,
        transformers,
    }
}

/// KCL mismatch `(Re, Im)` at every node-phase, summed branch by branch
/// (independently of the assembled admittance). Slack entries are zero.
pub fn kcl_residuals(
    model: &NetworkModel,
    injections: &InjectionSet,
    solution: &VoltageSolution,
    taps: &TapSettings,
) -> Result<(Vec<f64>, Vec<f64>), PowerflowError> {
    let index = NodeIndex::new(model);
    let branches = BranchAdmittances::new(model, &index);
    let (p, q) = injections.to_per_unit(model, &index)?;
    let v_re = solution.v_re();
    let v_im = solution.v_im();
    let mut res_re = vec![0.0; index.len()];
    let mut res_im = vec![0.0; index.len()];

    for la in &branches.lines {
        let k = la.from_nodes.len();
        for r in 0..k {
            let (mut ir, mut ii) = (0.0, 0.0);
            for c in 0..k {
                let dr = v_re[la.from_nodes[c]] - v_re[la.to_nodes[c]];
                let di = v_im[la.from_nodes[c]] - v_im[la.to_nodes[c]];
                ir += la.g[r][c] * dr - la.b[r][c] * di;
                ii += la.b[r][c] * dr + la.g[r][c] * di;
            }
            res_re[la.from_nodes[r]] += ir;
            res_im[la.from_nodes[r]] += ii;
            res_re[la.to_nodes[r]] -= ir;
            res_im[la.to_nodes[r]] -= ii;
        }
    }
    for xa in &branches.transformers {
        let t = taps.0[xa.transformer];
        for (&pi, &si) in xa.from_nodes.iter().zip(&xa.to_nodes) {
            // Secondary current through the series admittance, I_s = y (V_p / t - V_s).
            let dr = v_re[pi] / t - v_re[si];
            let di = v_im[pi] / t - v_im[si];
            let ir = xa.g * dr - xa.b * di;
            let ii = xa.b * dr + xa.g * di;
            res_re[pi] += ir / t;
            res_im[pi] += ii / t;
            res_re[si] -= ir;
            res_im[si] -= ii;
        }
    }
    for (i, np) in index.iter() {
        if np.slack {
            res_re[i] = 0.0;
            res_im[i] = 0.0;
            continue;
        }
        let (lr, li) = load_current(p[i], q[i], v_re[i], v_im[i]);
        res_re[i] += lr;
        res_im[i] += li;
    }
    Ok((res_re, res_im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network_text;
    use crate::powerflow::solve_powerflow;

    #[test]
    fn no_load_has_no_current() {
        let model = parse_network_text(
            "[bus]\ns slack abc 7.2 0.9 1.1\nn load abc 7.2 0.9 1.1\n\
             [line]\nl s n abc 400 2 -0.5 -0.3 -0.5 2 -0.4 -0.3 -0.4 2 -6 1 1 1 -6 1 1 1 -6\n",
        )
        .unwrap();
        let sol = solve_powerflow(&model, &InjectionSet::new(), &Default::default()).unwrap();
        let flows = compute_branch_flows(&model, &sol, &TapSettings::default_for(&model));
        for ph in &flows.lines[0].phases {
            assert_eq!(ph.i_amps, 0.0);
        }
    }

    #[test]
    fn two_bus_current_matches_ohms_law() {
        let model = parse_network_text(
            "[bus]\ns slack a 1 0.5 1.5\nn load a 1 0.5 1.5\n[line]\nl s n a 100 3 -9\n[load]\nn a 200 50\n",
        )
        .unwrap();
        let inj = InjectionSet::from_loads(&model);
        let sol = solve_powerflow(&model, &inj, &Default::default()).unwrap();
        let flows = compute_branch_flows(&model, &sol, &TapSettings::default_for(&model));
        let dv_re = sol.nodes[0].v_real - sol.nodes[1].v_real;
        let dv_im = sol.nodes[0].v_imag - sol.nodes[1].v_imag;
        let expect = (3.0f64.powi(2) + 9.0f64.powi(2)).sqrt() * dv_re.hypot(dv_im);
        let got = flows.lines[0].phases[0].i_real.hypot(flows.lines[0].phases[0].i_imag);
        assert!((got - expect).abs() < 1e-12);
        // The line current equals the load current.
        let (lr, li) = load_current(0.2, 0.05, sol.nodes[1].v_real, sol.nodes[1].v_imag);
        assert!((got - lr.hypot(li)).abs() < 1e-8);
    }
}
