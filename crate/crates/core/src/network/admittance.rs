//! Per-unit branch data and the assembled real-valued admittance (G, B).
//!
//! Per-unit system: every phase quantity uses the model's `base_mva` as power
//! base and the bus line-to-neutral `base_kv` as voltage base.

use std::collections::BTreeMap;

use super::{NetworkModel, NodeIndex};

/// Tap ratio per transformer, in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSettings(pub Vec<f64>);

impl TapSettings {
    /// Fixed taps where given, midpoint of the tap range elsewhere.
    pub fn default_for(model: &NetworkModel) -> Self {
        TapSettings(model.transformers.iter().map(|t| t.default_tap()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct LineAdmittance {
    pub line: usize,
    pub from_nodes: Vec<usize>,
    pub to_nodes: Vec<usize>,
    /// Per-unit conductance/susceptance blocks, indexed by phase position.
    pub g: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub i_max_pu: f64,
}

#[derive(Debug, Clone)]
pub struct TransformerAdmittance {
    pub transformer: usize,
    pub from_nodes: Vec<usize>,
    pub to_nodes: Vec<usize>,
    pub g: f64,
    pub b: f64,
    pub tap_min: f64,
    pub tap_max: f64,
    pub tap_fixed: Option<f64>,
    /// Three-phase rating at the from terminal, per unit of `base_mva`.
    pub s_max_pu: f64,
}

/// Per-unit view of every branch, with node-phase endpoints resolved.
#[derive(Debug, Clone)]
pub struct BranchAdmittances {
    pub lines: Vec<LineAdmittance>,
    pub transformers: Vec<TransformerAdmittance>,
}

/// Current base in amperes for a bus of the given line-to-neutral kV.
pub fn current_base_amps(model: &NetworkModel, base_kv: f64) -> f64 {
    1000.0 * model.base_mva / base_kv
}

/// Impedance base in ohms.
pub fn impedance_base_ohms(model: &NetworkModel, base_kv: f64) -> f64 {
    base_kv * base_kv / model.base_mva
}

impl BranchAdmittances {
    /// Requires a validated model.
    pub fn new(model: &NetworkModel, index: &NodeIndex) -> Self {
        let resolve = |bus: &str, phases: super::PhaseSet| -> Vec<usize> {
            phases
                .iter()
                .map(|p| index.get_by_id(bus, p).expect("validated model"))
                .collect()
        };
        let lines = model
            .lines
            .iter()
            .enumerate()
            .map(|(li, line)| {
                let base_kv = model.bus(&line.from).expect("validated model").base_kv;
                let z_base = impedance_base_ohms(model, base_kv);
                let scale = |block: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    block
                        .iter()
                        .map(|row| row.iter().map(|v| v * z_base).collect())
                        .collect()
                };
                LineAdmittance {
                    line: li,
                    from_nodes: resolve(&line.from, line.phases),
                    to_nodes: resolve(&line.to, line.phases),
                    g: scale(&line.g_block),
                    b: scale(&line.b_block),
                    i_max_pu: line.i_max_amps / current_base_amps(model, base_kv),
                }
            })
            .collect();
        let transformers = model
            .transformers
            .iter()
            .enumerate()
            .map(|(ti, xf)| {
                let base_kv = model.bus(&xf.to).expect("validated model").base_kv;
                let z_base = impedance_base_ohms(model, base_kv);
                TransformerAdmittance {
                    transformer: ti,
                    from_nodes: resolve(&xf.from, xf.phases),
                    to_nodes: resolve(&xf.to, xf.phases),
                    g: xf.series_g * z_base,
                    b: xf.series_b * z_base,
                    tap_min: xf.tap_min,
                    tap_max: xf.tap_max,
                    tap_fixed: xf.tap_fixed,
                    s_max_pu: xf.s_max_kva / model.s_base_kva(),
                }
            })
            .collect();
        BranchAdmittances {
            lines,
            transformers,
        }
    }
}

/// Sparse G/B matrix over node-phases, rows sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRealAdmittance {
    rows: Vec<Vec<(usize, f64, f64)>>,
}

impl SparseRealAdmittance {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Entries `(column, g, b)` of one row.
    pub fn row(&self, i: usize) -> &[(usize, f64, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(pos) => (self.rows[i][pos].1, self.rows[i][pos].2),
            Err(_) => (0.0, 0.0),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Branch current leaving each node-phase, `(Re, Im)` of `Y V`.
    pub fn multiply(&self, v_re: &[f64], v_im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; self.rows.len()];
        let mut im = vec![0.0; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, g, b) in row {
                re[i] += g * v_re[j] - b * v_im[j];
                im[i] += b * v_re[j] + g * v_im[j];
            }
        }
        (re, im)
    }
}

/// Stamps every branch into a node-phase admittance matrix at the given taps.
///
/// Transformers use the ideal-tap model: the from-side (tap side) sees
/// `y / t^2` on its diagonal and `-y / t` on the coupling terms.
pub fn assemble_admittance(
    model: &NetworkModel,
    index: &NodeIndex,
    taps: &TapSettings,
) -> SparseRealAdmittance {
    let branches = BranchAdmittances::new(model, index);
    let mut acc: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    let mut add = |i: usize, j: usize, g: f64, b: f64| {
        let e = acc.entry((i, j)).or_insert((0.0, 0.0));
        e.0 += g;
        e.1 += b;
    };
    for line in &branches.lines {
        let k = line.from_nodes.len();
        for r in 0..k {
            for c in 0..k {
                let (g, b) = (line.g[r][c], line.b[r][c]);
                add(line.from_nodes[r], line.from_nodes[c], g, b);
                add(line.from_nodes[r], line.to_nodes[c], -g, -b);
                add(line.to_nodes[r], line.to_nodes[c], g, b);
                add(line.to_nodes[r], line.from_nodes[c], -g, -b);
            }
        }
    }
    for xf in &branches.transformers {
        let t = taps.0[xf.transformer];
        for (&p, &s) in xf.from_nodes.iter().zip(&xf.to_nodes) {
            add(p, p, xf.g / (t * t), xf.b / (t * t));
            add(p, s, -xf.g / t, -xf.b / t);
            add(s, p, -xf.g / t, -xf.b / t);
            add(s, s, xf.g, xf.b);
        }
    }
    let mut rows = vec![Vec::new(); index.len()];
    for ((i, j), (g, b)) in acc {
        rows[i].push((j, g, b));
    }
    SparseRealAdmittance { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network_text;

    #[test]
    fn single_line_laplacian_pattern() {
        // z_base = 1 with base_kv = 1, base_mva = 1.
        let model = parse_network_text(
            "[bus]\ns slack a 1 0.9 1.1\nn load a 1 0.9 1.1\n[line]\nl s n a 10 1 0\n",
        )
        .unwrap();
        let index = NodeIndex::new(&model);
        let y = assemble_admittance(&model, &index, &TapSettings::default_for(&model));
        assert_eq!(y.get(0, 0), (1.0, 0.0));
        assert_eq!(y.get(0, 1), (-1.0, 0.0));
        assert_eq!(y.get(1, 0), (-1.0, 0.0));
        assert_eq!(y.get(1, 1), (1.0, 0.0));
    }

    #[test]
    fn tap_scales_primary_side() {
        let model = parse_network_text(
            "[bus]\np slack a 1 0.9 1.1\ns load a 1 0.9 1.1\n\
             [transformer]\nt p s a 0.9 1.1 - 2 -4 1000\n",
        )
        .unwrap();
        let index = NodeIndex::new(&model);
        let y = assemble_admittance(&model, &index, &TapSettings(vec![1.1]));
        let (g, b) = y.get(0, 0);
        assert!((g - 2.0 / 1.21).abs() < 1e-12 && (b + 4.0 / 1.21).abs() < 1e-12);
        let (g, _) = y.get(0, 1);
        assert!((g + 2.0 / 1.1).abs() < 1e-12);
        assert_eq!(y.get(1, 1), (2.0, -4.0));
    }
}
