//! Built-in test networks.
//!
//! `ieee4` is the unbalanced step-down IEEE 4-node feeder. `ieee4_anoca`
//! is a lighter variant with three single-phase prosumers at the load bus and
//! a [0.95, 1.05] band. `mesh` is a reduced synthetic meshed LV network.
//! [`scenario`] pairs a network with category assignments.

use std::collections::BTreeMap;

use crate::hems::BatteryParams;
use crate::network::{
    BatterySpec, Bus, BusKind, LineBranch, LoadSpec, NetworkModel, PhaseId, PhaseSet,
    ProsumerSpec, TransformerBranch,
};
use crate::sim::{Category, ScenarioSpec};

pub const NAMES: [&str; 3] = ["ieee4", "ieee4_anoca", "mesh"];

pub fn by_name(name: &str) -> Option<NetworkModel> {
    match name {
        "ieee4" => Some(ieee4()),
        "ieee4_anoca" => Some(ieee4_anoca()),
        "mesh" => Some(mesh()),
        _ => None,
    }
}

const ABC: [PhaseId; 3] = [PhaseId::A, PhaseId::B, PhaseId::C];

/// Phase impedance of the 4-wire overhead configuration, ohm per mile.
const Z_ABC: [[(f64, f64); 3]; 3] = [
    [(0.4576, 1.0780), (0.1560, 0.5017), (0.1535, 0.3849)],
    [(0.1560, 0.5017), (0.4666, 1.0482), (0.1580, 0.4236)],
    [(0.1535, 0.3849), (0.1580, 0.4236), (0.4615, 1.0651)],
];

fn abc() -> PhaseSet {
    PhaseSet::single(PhaseId::A)
        .with(PhaseId::B)
        .with(PhaseId::C)
}

fn bus(id: &str, kind: BusKind, kv: f64, v_min: f64, v_max: f64) -> Bus {
    Bus {
        id: id.into(),
        kind,
        phases: abc(),
        base_kv: kv,
        v_min_pu: v_min,
        v_max_pu: v_max,
    }
}

/// Kron-reduced impedance of a 4-core LV cable, ohm per mile.
const Z_CABLE: [[(f64, f64); 3]; 3] = [
    [(1.10, 0.42), (0.10, 0.08), (0.10, 0.07)],
    [(0.10, 0.08), (1.10, 0.42), (0.10, 0.08)],
    [(0.10, 0.07), (0.10, 0.08), (1.10, 0.42)],
];

fn overhead(id: &str, from: &str, to: &str, miles: f64, i_max: f64) -> LineBranch {
    phase_line(&Z_ABC, id, from, to, miles, i_max)
}

fn phase_line(
    z: &[[(f64, f64); 3]; 3],
    id: &str,
    from: &str,
    to: &str,
    miles: f64,
    i_max: f64,
) -> LineBranch {
    let r: Vec<Vec<f64>> = z
        .iter()
        .map(|row| row.iter().map(|z| z.0 * miles).collect())
        .collect();
    let x: Vec<Vec<f64>> = z
        .iter()
        .map(|row| row.iter().map(|z| z.1 * miles).collect())
        .collect();
    LineBranch::from_impedance(id, from, to, abc(), &r, &x, i_max).expect("nonsingular impedance")
}

/// Series admittance in siemens from a percent impedance on the bank rating.
fn bank_admittance(r_pct: f64, x_pct: f64, kva_3ph: f64, kv_ll: f64) -> (f64, f64) {
    let z_base = kv_ll * kv_ll * 1000.0 / kva_3ph;
    let (r, x) = (r_pct / 100.0 * z_base, x_pct / 100.0 * z_base);
    let d = r * r + x * x;
    (r / d, -x / d)
}

fn load(bus: &str, phase: PhaseId, p_kw: f64, pf: f64) -> LoadSpec {
    LoadSpec {
        bus: bus.into(),
        phase,
        p_kw,
        q_kvar: p_kw * (1.0 / (pf * pf) - 1.0).sqrt(),
    }
}

fn powerwall(units: f64) -> BatteryParams {
    BatteryParams {
        e_max_kwh: 13.5 * units,
        p_max_kw: 5.0 * units,
        eta_c: 0.95,
        eta_d: 0.95,
        e_set_kwh: 6.75 * units,
    }
}

const IEEE4_LOADS: [(f64, f64); 3] = [(1275.0, 0.85), (1800.0, 0.9), (2375.0, 0.95)];

/// Unbalanced step-down IEEE 4-node feeder with wide bands.
pub fn ieee4() -> NetworkModel {
    let hv = 12.47 / 3f64.sqrt();
    let lv = 4.16 / 3f64.sqrt();
    let (g, b) = bank_admittance(1.0, 6.0, 6000.0, 4.16);
    NetworkModel {
        name: "ieee4".into(),
        base_mva: 2.0,
        slack_voltage_pu: 1.0,
        buses: vec![
            bus("1", BusKind::Slack, hv, 0.7, 1.1),
            bus("2", BusKind::Junction, hv, 0.7, 1.1),
            bus("3", BusKind::Junction, lv, 0.7, 1.1),
            bus("4", BusKind::Load, lv, 0.7, 1.1),
        ],
        lines: vec![
            overhead("l12", "1", "2", 2000.0 / 5280.0, 730.0),
            overhead("l34", "3", "4", 2500.0 / 5280.0, 1200.0),
        ],
        transformers: vec![TransformerBranch {
            id: "t23".into(),
            from: "2".into(),
            to: "3".into(),
            phases: abc(),
            tap_min: 0.9,
            tap_max: 1.1,
            tap_fixed: Some(1.0),
            series_g: g,
            series_b: b,
            s_max_kva: 6000.0,
        }],
        loads: ABC
            .iter()
            .zip(IEEE4_LOADS)
            .map(|(&ph, (p, pf))| load("4", ph, p, pf))
            .collect(),
        batteries: vec![],
        prosumers: vec![],
    }
}

/// Load scale applied to the IEEE 4-node demands in [`ieee4_anoca`].
pub const IEEE4_ANOCA_LOAD_SCALE: f64 = 0.35;
/// Length of the secondary line in [`ieee4_anoca`], miles.
pub const IEEE4_ANOCA_LV_MILES: f64 = 0.6;

/// The 4-node feeder with one prosumer per phase at bus 4, a continuous
/// regulating tap and a [0.95, 1.05] band on every non-slack bus.
pub fn ieee4_anoca() -> NetworkModel {
    let mut m = ieee4();
    m.name = "ieee4_anoca".into();
    for b in m.buses.iter_mut().skip(1) {
        b.v_min_pu = 0.95;
        b.v_max_pu = 1.05;
    }
    m.buses[3].kind = BusKind::Prosumer;
    m.lines[1] = overhead("l34", "3", "4", IEEE4_ANOCA_LV_MILES, 1200.0);
    m.transformers[0].tap_fixed = None;
    for l in &mut m.loads {
        l.p_kw *= IEEE4_ANOCA_LOAD_SCALE;
        l.q_kvar *= IEEE4_ANOCA_LOAD_SCALE;
    }
    m.batteries = vec![BatterySpec {
        id: "bank".into(),
        params: powerwall(10.0),
    }];
    m.prosumers = ABC
        .iter()
        .map(|&ph| ProsumerSpec {
            id: format!("p4{}", ph.as_char()),
            bus: "4".into(),
            phase: ph,
            pv_kw_rating: 0.0,
            battery: "bank".into(),
            weight: 1.0,
        })
        .collect();
    m
}

/// Rows and columns of the LV grid in [`mesh`].
pub const MESH_ROWS: usize = 6;
pub const MESH_COLS: usize = 10;

/// A substation transformer feeding a `MESH_ROWS x MESH_COLS` grid of
/// three-phase LV buses. Each row is a radial run from the LV busbar; rows
/// are tied at every third column, which closes loops. Every bus hosts one
/// single-phase prosumer per phase.
pub fn mesh() -> NetworkModel {
    let hv = 12.47 / 3f64.sqrt();
    let lv = 0.48 / 3f64.sqrt();
    let (g, b) = bank_admittance(1.0, 5.0, 1000.0, 0.48);
    let name = |r: usize, c: usize| format!("n{r}{c}");
    let mut buses = vec![
        bus("src", BusKind::Slack, hv, 0.9, 1.1),
        bus("lv", BusKind::Junction, lv, 0.95, 1.05),
    ];
    let mut lines = Vec::new();
    let mut loads = Vec::new();
    let mut prosumers = Vec::new();
    for r in 0..MESH_ROWS {
        for c in 0..MESH_COLS {
            let id = name(r, c);
            buses.push(bus(&id, BusKind::Prosumer, lv, 0.95, 1.05));
            for (i, &ph) in ABC.iter().enumerate() {
                let p = 8.0 + 2.0 * ((r * 7 + c * 3 + i * 2) % 5) as f64;
                loads.push(load(&id, ph, p, 0.95));
                prosumers.push(ProsumerSpec {
                    id: format!("p{r}{c}{}", ph.as_char()),
                    bus: id.clone(),
                    phase: ph,
                    pv_kw_rating: 15.0,
                    battery: "pw".into(),
                    weight: 1.0,
                });
            }
        }
    }
    let cable = |id: String, from: &str, to: &str, feet: f64, i_max: f64| {
        phase_line(&Z_CABLE, &id, from, to, feet / 5280.0, i_max)
    };
    for r in 0..MESH_ROWS {
        lines.push(cable(format!("f{r}"), "lv", &name(r, 0), 375.0, 900.0));
        for c in 1..MESH_COLS {
            let len = 225.0 + 37.5 * ((r + c) % 4) as f64;
            lines.push(cable(format!("h{r}{c}"), &name(r, c - 1), &name(r, c), len, 600.0));
        }
    }
    for r in 1..MESH_ROWS {
        for c in (2..MESH_COLS).step_by(3) {
            lines.push(cable(format!("v{r}{c}"), &name(r - 1, c), &name(r, c), 300.0, 400.0));
        }
    }
    NetworkModel {
        name: "mesh".into(),
        base_mva: 0.5,
        slack_voltage_pu: 1.0,
        buses,
        lines,
        transformers: vec![TransformerBranch {
            id: "sub".into(),
            from: "src".into(),
            to: "lv".into(),
            phases: abc(),
            tap_min: 0.95,
            tap_max: 1.05,
            tap_fixed: None,
            series_g: g,
            series_b: b,
            s_max_kva: 1000.0,
        }],
        loads,
        batteries: vec![BatterySpec {
            id: "pw".into(),
            params: powerwall(1.0),
        }],
        prosumers,
    }
}

/// Category of every prosumer in the built-in networks: the IEEE 4-node
/// prosumers take A, C and B on phases a, b and c, and [`mesh`] assigns a
/// whole bus at a time so that neighbouring buses differ.
pub fn categories(name: &str) -> BTreeMap<String, Category> {
    let mut out = BTreeMap::new();
    match name {
        "ieee4_anoca" => {
            for (ph, cat) in ABC.iter().zip([Category::A, Category::C, Category::B]) {
                out.insert(format!("p4{}", ph.as_char()), cat);
            }
        }
        "mesh" => {
            for r in 0..MESH_ROWS {
                for c in 0..MESH_COLS {
                    for ph in ABC {
                        out.insert(format!("p{r}{c}{}", ph.as_char()), Category::ALL[(r + 2 * c) % 3]);
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// One of the four named scenarios on a built-in network.
pub fn scenario(name: &str, id: u8) -> ScenarioSpec {
    ScenarioSpec {
        categories: categories(name),
        ..ScenarioSpec::named(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate;

    #[test]
    fn fixtures_validate() {
        for name in NAMES {
            let m = by_name(name).unwrap();
            assert!(validate(&m).is_empty(), "{name}: {:?}", validate(&m));
        }
    }

    #[test]
    fn ieee4_shape() {
        let m = ieee4();
        assert_eq!((m.buses.len(), m.lines.len(), m.transformers.len()), (4, 2, 1));
        assert_eq!(m.loads.len(), 3);
    }

    #[test]
    fn mesh_size() {
        let m = mesh();
        assert_eq!(m.buses.len(), MESH_ROWS * MESH_COLS + 2);
        assert!(m.prosumers.len() >= 20);
        assert_eq!(categories("mesh").len(), m.prosumers.len());
        // Loops: more branches than a spanning tree needs.
        assert!(m.lines.len() + m.transformers.len() > m.buses.len() - 1);
    }
}
