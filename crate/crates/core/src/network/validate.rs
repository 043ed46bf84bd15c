use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{BusKind, NetworkModel, PhaseSet};

/// One invariant violation, naming the entity at fault.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub entity: String,
    pub message: String,
}

impl Diagnostic {
    fn new(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            entity: entity.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

const SYMMETRY_TOL: f64 = 1e-9;

fn is_symmetric(block: &[Vec<f64>]) -> bool {
    block.iter().enumerate().all(|(r, row)| {
        row.iter().enumerate().all(|(c, v)| {
            let w = block[c][r];
            (v - w).abs() <= SYMMETRY_TOL * v.abs().max(w.abs()).max(1.0)
        })
    })
}

/// Checks every model invariant; an empty list means the model is valid.
pub fn validate(model: &NetworkModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if !(model.base_mva.is_finite() && model.base_mva > 0.0) {
        out.push(Diagnostic::new("network", "base_mva must be positive"));
    }
    if !(model.slack_voltage_pu.is_finite() && model.slack_voltage_pu > 0.0) {
        out.push(Diagnostic::new("network", "slack_voltage_pu must be positive"));
    }

    let mut buses: HashMap<&str, PhaseSet> = HashMap::new();
    let mut kinds: HashMap<&str, BusKind> = HashMap::new();
    let mut slack_count = 0;
    for bus in &model.buses {
        let name = format!("bus '{}'", bus.id);
        if buses.insert(&bus.id, bus.phases).is_some() {
            out.push(Diagnostic::new(&name, "duplicate bus id"));
        }
        kinds.insert(&bus.id, bus.kind);
        if bus.phases.is_empty() {
            out.push(Diagnostic::new(&name, "no phases"));
        }
        if bus.kind == BusKind::Slack {
            slack_count += 1;
        }
        if !(bus.base_kv.is_finite() && bus.base_kv > 0.0) {
            out.push(Diagnostic::new(&name, "base_kv must be positive"));
        }
        if !(bus.v_min_pu.is_finite() && bus.v_max_pu.is_finite()) {
            out.push(Diagnostic::new(&name, "non-finite voltage bounds"));
        } else if bus.v_min_pu >= bus.v_max_pu {
            out.push(Diagnostic::new(&name, "degenerate voltage band"));
        } else if bus.v_min_pu <= 0.0 {
            out.push(Diagnostic::new(&name, "v_min_pu must be positive"));
        }
    }
    match slack_count {
        0 => out.push(Diagnostic::new("network", "no slack bus")),
        1 => {}
        n => out.push(Diagnostic::new(
            "network",
            format!("duplicate slack: {n} slack buses"),
        )),
    }

    let bus_ref = |out: &mut Vec<Diagnostic>, entity: &str, id: &str| -> Option<PhaseSet> {
        let found = buses.get(id).copied();
        if found.is_none() {
            out.push(Diagnostic::new(entity, format!("unknown bus '{id}'")));
        }
        found
    };

    let mut branch_ids = HashSet::new();
    let mut edges: Vec<(&str, &str)> = Vec::new();
    for line in &model.lines {
        let name = format!("line '{}'", line.id);
        if !branch_ids.insert(line.id.as_str()) {
            out.push(Diagnostic::new(&name, "duplicate branch id"));
        }
        let from = bus_ref(&mut out, &name, &line.from);
        let to = bus_ref(&mut out, &name, &line.to);
        if line.from == line.to {
            out.push(Diagnostic::new(&name, "connects a bus to itself"));
        }
        for (end, phases) in [(&line.from, from), (&line.to, to)] {
            if let Some(p) = phases {
                if !line.phases.is_subset_of(p) {
                    out.push(Diagnostic::new(
                        &name,
                        format!("phase mismatch: phases {} not present on bus '{end}'", line.phases),
                    ));
                }
            }
        }
        if let (Some(a), Some(b)) = (model.bus(&line.from), model.bus(&line.to)) {
            if (a.base_kv - b.base_kv).abs() > 1e-9 * a.base_kv.max(b.base_kv) {
                out.push(Diagnostic::new(&name, "base voltage differs between line ends"));
            }
        }
        let k = line.phases.len();
        let dims_ok = |block: &Vec<Vec<f64>>| block.len() == k && block.iter().all(|r| r.len() == k);
        if !dims_ok(&line.g_block) || !dims_ok(&line.b_block) {
            out.push(Diagnostic::new(
                &name,
                format!("admittance block dimensions do not match {k} phases"),
            ));
        } else {
            if !is_symmetric(&line.g_block) || !is_symmetric(&line.b_block) {
                out.push(Diagnostic::new(&name, "admittance block not symmetric"));
            }
            let finite = line
                .g_block
                .iter()
                .chain(&line.b_block)
                .flatten()
                .all(|v| v.is_finite());
            if !finite {
                out.push(Diagnostic::new(&name, "non-finite admittance entry"));
            }
        }
        if !(line.i_max_amps.is_finite() && line.i_max_amps > 0.0) {
            out.push(Diagnostic::new(&name, "ampacity must be positive"));
        }
        edges.push((&line.from, &line.to));
    }

    for xf in &model.transformers {
        let name = format!("transformer '{}'", xf.id);
        if !branch_ids.insert(xf.id.as_str()) {
            out.push(Diagnostic::new(&name, "duplicate branch id"));
        }
        let from = bus_ref(&mut out, &name, &xf.from);
        let to = bus_ref(&mut out, &name, &xf.to);
        for (end, phases) in [(&xf.from, from), (&xf.to, to)] {
            if let Some(p) = phases {
                if !xf.phases.is_subset_of(p) {
                    out.push(Diagnostic::new(
                        &name,
                        format!("phase mismatch: phases {} not present on bus '{end}'", xf.phases),
                    ));
                }
            }
        }
        if !(xf.tap_min > 0.0 && xf.tap_min <= xf.tap_max && xf.tap_max.is_finite()) {
            out.push(Diagnostic::new(&name, "tap bounds must satisfy 0 < tap_min <= tap_max"));
        }
        if let Some(t) = xf.tap_fixed {
            if !(xf.tap_min <= t && t <= xf.tap_max) {
                out.push(Diagnostic::new(&name, "fixed tap outside tap bounds"));
            }
        }
        if !(xf.s_max_kva.is_finite() && xf.s_max_kva > 0.0) {
            out.push(Diagnostic::new(&name, "rating s_max_kva must be positive"));
        }
        if !(xf.series_g.is_finite() && xf.series_b.is_finite())
            || (xf.series_g == 0.0 && xf.series_b == 0.0)
        {
            out.push(Diagnostic::new(&name, "series admittance must be nonzero"));
        }
        edges.push((&xf.from, &xf.to));
    }

    for (i, load) in model.loads.iter().enumerate() {
        let name = format!("load #{} at '{}'", i + 1, load.bus);
        if let Some(phases) = bus_ref(&mut out, &name, &load.bus) {
            if !phases.contains(load.phase) {
                out.push(Diagnostic::new(
                    &name,
                    format!("phase mismatch: bus has no phase {}", load.phase),
                ));
            }
            match kinds.get(load.bus.as_str()) {
                Some(BusKind::Load | BusKind::Prosumer) => {}
                Some(kind) => out.push(Diagnostic::new(
                    &name,
                    format!("load attached to {} bus", kind.as_str()),
                )),
                None => {}
            }
        }
        if !(load.p_kw.is_finite() && load.q_kvar.is_finite()) {
            out.push(Diagnostic::new(&name, "non-finite demand"));
        }
    }

    let mut battery_ids = HashSet::new();
    for battery in &model.batteries {
        let name = format!("battery '{}'", battery.id);
        if !battery_ids.insert(battery.id.as_str()) {
            out.push(Diagnostic::new(&name, "duplicate battery id"));
        }
        for problem in battery.params.violations() {
            out.push(Diagnostic::new(&name, problem));
        }
    }

    let mut prosumer_ids = HashSet::new();
    let mut prosumer_slots = HashSet::new();
    for pro in &model.prosumers {
        let name = format!("prosumer '{}'", pro.id);
        if !prosumer_ids.insert(pro.id.as_str()) {
            out.push(Diagnostic::new(&name, "duplicate prosumer id"));
        }
        if !prosumer_slots.insert((pro.bus.as_str(), pro.phase)) {
            out.push(Diagnostic::new(
                &name,
                format!("duplicate prosumer at ({}, {})", pro.bus, pro.phase),
            ));
        }
        if let Some(phases) = bus_ref(&mut out, &name, &pro.bus) {
            if !phases.contains(pro.phase) {
                out.push(Diagnostic::new(
                    &name,
                    format!("phase mismatch: bus has no phase {}", pro.phase),
                ));
            }
            if kinds.get(pro.bus.as_str()) != Some(&BusKind::Prosumer) {
                out.push(Diagnostic::new(&name, "bus is not of kind prosumer"));
            }
        }
        if !battery_ids.contains(pro.battery.as_str()) {
            out.push(Diagnostic::new(&name, format!("unknown battery '{}'", pro.battery)));
        }
        if !(pro.weight.is_finite() && pro.weight > 0.0) {
            out.push(Diagnostic::new(&name, "weight must be positive"));
        }
        if !(pro.pv_kw_rating.is_finite() && pro.pv_kw_rating >= 0.0) {
            out.push(Diagnostic::new(&name, "pv rating must be nonnegative"));
        }
    }

    // Reachability from the slack over all branches.
    if let Some(slack) = model.slack_bus() {
        let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
        for (a, b) in &edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        let mut seen: HashSet<&str> = HashSet::from([slack.id.as_str()]);
        let mut queue = VecDeque::from([slack.id.as_str()]);
        while let Some(bus) = queue.pop_front() {
            for &next in adjacency.get(bus).map(Vec::as_slice).unwrap_or(&[]) {
                if buses.contains_key(next) && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        for bus in &model.buses {
            if !seen.contains(bus.id.as_str()) {
                out.push(Diagnostic::new(
                    format!("bus '{}'", bus.id),
                    "unreachable from slack",
                ));
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network_text;

    const BASE: &str = "\
[bus]
s slack abc 7.2 0.95 1.05
n1 load abc 7.2 0.95 1.05
[line]
l1 s n1 a 400 2 -6
[load]
n1 a 10 1
";

    fn diags(text: &str) -> Vec<Diagnostic> {
        validate(&parse_network_text(text).unwrap())
    }

    #[test]
    fn valid_model_has_no_diagnostics() {
        assert!(diags(BASE).is_empty());
    }

    #[test]
    fn degenerate_band() {
        let d = diags(&BASE.replace("n1 load abc 7.2 0.95 1.05", "n1 load abc 7.2 1.0 1.0"));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].message, "degenerate voltage band");
    }

    #[test]
    fn unreachable_bus() {
        let d = diags(&format!("{BASE}[bus]\nlonely load a 7.2 0.9 1.1\n"));
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].message, "unreachable from slack");
        assert!(d[0].entity.contains("lonely"));
    }

    #[test]
    fn duplicate_slack() {
        let d = diags(&BASE.replace("n1 load", "n1 slack").replace("[load]\nn1 a 10 1\n", ""));
        assert!(d.iter().any(|d| d.message.starts_with("duplicate slack")), "{d:?}");
    }

    #[test]
    fn phase_mismatch() {
        let text = BASE.replace("n1 load abc", "n1 load bc");
        let d = diags(&text);
        assert!(d.iter().any(|d| d.message.contains("phase mismatch")), "{d:?}");
    }

    #[test]
    fn asymmetric_block() {
        let text = BASE.replace(
            "l1 s n1 a 400 2 -6",
            "l1 s n1 ab 400 2 0.5 0.4 2 -6 1 1 -6",
        );
        let d = diags(&text);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].message, "admittance block not symmetric");
    }
}
