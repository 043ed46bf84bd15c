//! Reference implementations shared by the integration and acceptance tests.
//! None of them call into the solvers they check.
#![allow(dead_code)]

use std::collections::HashMap;

use anoca::hems::{BatteryParams, ForecastSeries, TariffSchedule};
use anoca::network::{
    validate, BatterySpec, Bus, BusKind, LineBranch, LoadSpec, NetworkModel, PhaseId, PhaseSet,
    ProsumerSpec, TransformerBranch,
};
use anoca::powerflow::InjectionSet;
use num_complex::Complex64;

pub type NodeKey = (String, PhaseId);

fn phases(s: &str) -> PhaseSet {
    s.parse().unwrap()
}

fn bus(id: &str, kind: BusKind, ph: &str, kv: f64) -> Bus {
    Bus {
        id: id.into(),
        kind,
        phases: phases(ph),
        base_kv: kv,
        v_min_pu: 0.5,
        v_max_pu: 1.5,
    }
}

/// Line with self impedance `zs` and mutual `zm` ohms per phase pair.
fn line(id: &str, from: &str, to: &str, ph: &str, zs: (f64, f64), zm: (f64, f64), len: f64) -> LineBranch {
    let n = ph.len();
    let r: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| len * if i == j { zs.0 } else { zm.0 }).collect())
        .collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| len * if i == j { zs.1 } else { zm.1 }).collect())
        .collect();
    LineBranch::from_impedance(id, from, to, phases(ph), &r, &x, 1000.0).unwrap()
}

fn load(bus: &str, phase: PhaseId, p: f64, q: f64) -> LoadSpec {
    LoadSpec {
        bus: bus.into(),
        phase,
        p_kw: p,
        q_kvar: q,
    }
}

fn model(name: &str, base_mva: f64, buses: Vec<Bus>, lines: Vec<LineBranch>, loads: Vec<LoadSpec>) -> NetworkModel {
    NetworkModel {
        name: name.into(),
        base_mva,
        slack_voltage_pu: 1.0,
        buses,
        lines,
        transformers: vec![],
        loads,
        batteries: vec![],
        prosumers: vec![],
    }
}

const ZS: (f64, f64) = (3.0, 6.0);
const ZM: (f64, f64) = (1.0, 2.5);
const KV: f64 = 7.2;

/// Five to seven small networks of at most ten buses, with their load
/// injections. One is meshed, one has single- and two-phase laterals, one an
/// off-nominal transformer and one exports.
pub fn small_networks() -> Vec<(NetworkModel, InjectionSet)> {
    use BusKind::*;
    use PhaseId::*;
    let mut out = Vec::new();

    let radial = model(
        "radial6",
        1.0,
        vec![
            bus("s", Slack, "abc", KV),
            bus("1", Junction, "abc", KV),
            bus("2", Load, "abc", KV),
            bus("3", Load, "abc", KV),
            bus("4", Load, "abc", KV),
            bus("5", Load, "abc", KV),
        ],
        vec![
            line("s1", "s", "1", "abc", ZS, ZM, 1.0),
            line("12", "1", "2", "abc", ZS, ZM, 0.8),
            line("23", "2", "3", "abc", ZS, ZM, 0.6),
            line("14", "1", "4", "abc", ZS, ZM, 1.2),
            line("45", "4", "5", "abc", ZS, ZM, 0.5),
        ],
        vec![
            load("2", A, 300.0, 120.0),
            load("2", B, 180.0, 60.0),
            load("3", C, 420.0, 150.0),
            load("4", A, 250.0, 80.0),
            load("5", B, 390.0, 140.0),
            load("5", C, 90.0, 20.0),
        ],
    );
    out.push(radial);

    let meshed = model(
        "ring5",
        1.0,
        vec![
            bus("s", Slack, "abc", KV),
            bus("1", Load, "abc", KV),
            bus("2", Load, "abc", KV),
            bus("3", Load, "abc", KV),
            bus("4", Load, "abc", KV),
        ],
        vec![
            line("s1", "s", "1", "abc", ZS, ZM, 1.0),
            line("12", "1", "2", "abc", ZS, ZM, 0.7),
            line("23", "2", "3", "abc", ZS, ZM, 0.9),
            line("34", "3", "4", "abc", ZS, ZM, 0.6),
            line("4s", "4", "s", "abc", ZS, ZM, 1.1),
            line("13", "1", "3", "abc", ZS, ZM, 1.4),
        ],
        PhaseId::ALL
            .iter()
            .enumerate()
            .flat_map(|(k, &ph)| {
                (1..=4).map(move |b| load(&b.to_string(), ph, 150.0 + 40.0 * ((b + k) % 3) as f64, 50.0))
            })
            .collect(),
    );
    out.push(meshed);

    let laterals = model(
        "laterals",
        1.0,
        vec![
            bus("s", Slack, "abc", KV),
            bus("1", Junction, "abc", KV),
            bus("a1", Load, "a", KV),
            bus("a2", Load, "a", KV),
            bus("bc", Load, "bc", KV),
            bus("2", Load, "abc", KV),
        ],
        vec![
            line("s1", "s", "1", "abc", ZS, ZM, 1.0),
            line("1a", "1", "a1", "a", ZS, ZM, 0.8),
            line("aa", "a1", "a2", "a", ZS, ZM, 0.5),
            line("1bc", "1", "bc", "bc", ZS, ZM, 0.9),
            line("12", "1", "2", "abc", ZS, ZM, 0.7),
        ],
        vec![
            load("a1", A, 120.0, 40.0),
            load("a2", A, 200.0, 70.0),
            load("bc", B, 160.0, 50.0),
            load("bc", C, 90.0, 10.0),
            load("2", A, 100.0, 30.0),
            load("2", B, 250.0, 90.0),
            load("2", C, 300.0, 100.0),
        ],
    );
    out.push(laterals);

    let mut stepdown = model(
        "stepdown",
        0.5,
        vec![
            bus("s", Slack, "abc", KV),
            bus("p", Junction, "abc", KV),
            bus("q", Junction, "abc", 0.277),
            bus("r", Load, "abc", 0.277),
            bus("t", Load, "abc", 0.277),
        ],
        vec![
            line("sp", "s", "p", "abc", ZS, ZM, 0.5),
            line("qr", "q", "r", "abc", (0.05, 0.03), (0.01, 0.01), 0.3),
            line("rt", "r", "t", "abc", (0.05, 0.03), (0.01, 0.01), 0.2),
        ],
        vec![
            load("r", A, 60.0, 20.0),
            load("r", B, 45.0, 15.0),
            load("t", C, 80.0, 30.0),
            load("t", A, 30.0, 5.0),
        ],
    );
    stepdown.transformers.push(TransformerBranch {
        id: "x".into(),
        from: "p".into(),
        to: "q".into(),
        phases: phases("abc"),
        tap_min: 0.9,
        tap_max: 1.1,
        tap_fixed: Some(1.025),
        series_g: 15.0,
        series_b: -60.0,
        s_max_kva: 1000.0,
    });
    out.push(stepdown);

    // Reverse flow: two buses export more than they consume.
    let exporter = model(
        "exporter",
        1.0,
        vec![
            bus("s", Slack, "abc", KV),
            bus("1", Load, "abc", KV),
            bus("2", Load, "abc", KV),
            bus("3", Load, "abc", KV),
        ],
        vec![
            line("s1", "s", "1", "abc", ZS, ZM, 1.5),
            line("12", "1", "2", "abc", ZS, ZM, 1.0),
            line("23", "2", "3", "abc", ZS, ZM, 1.0),
        ],
        vec![
            load("1", A, 200.0, 60.0),
            load("2", B, -500.0, 40.0),
            load("3", A, -350.0, 20.0),
            load("3", C, 150.0, 50.0),
        ],
    );
    out.push(exporter);

    let ieee4 = anoca::fixtures::ieee4();
    out.push(ieee4);

    out.into_iter()
        .map(|m| {
            assert!(validate(&m).is_empty(), "{}: {:?}", m.name, validate(&m));
            let inj = InjectionSet::from_loads(&m);
            (m, inj)
        })
        .collect()
}

/// Node-phase keys in bus then phase order, with the dense admittance in
/// per unit and the per-unit demand at each node.
pub struct DenseNetwork {
    pub keys: Vec<NodeKey>,
    pub slack: Vec<bool>,
    pub y: Vec<Vec<Complex64>>,
}

impl DenseNetwork {
    pub fn new(model: &NetworkModel, taps: &[f64]) -> Self {
        let mut keys = Vec::new();
        let mut slack = Vec::new();
        for b in &model.buses {
            for ph in PhaseId::ALL {
                if b.phases.contains(ph) {
                    keys.push((b.id.clone(), ph));
                    slack.push(b.kind == BusKind::Slack);
                }
            }
        }
        let pos: HashMap<NodeKey, usize> = keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let at = |bus: &str, ph: PhaseId| pos[&(bus.to_string(), ph)];
        let n = keys.len();
        let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        let z_base = |kv: f64| kv * kv / model.base_mva;
        for l in &model.lines {
            let zb = z_base(model.bus(&l.from).unwrap().base_kv);
            let ph: Vec<PhaseId> = l.phases.iter().collect();
            for (r, &pr) in ph.iter().enumerate() {
                for (c, &pc) in ph.iter().enumerate() {
                    let yrc = Complex64::new(l.g_block[r][c], l.b_block[r][c]) * zb;
                    let (fr, fc, tr, tc) = (at(&l.from, pr), at(&l.from, pc), at(&l.to, pr), at(&l.to, pc));
                    y[fr][fc] += yrc;
                    y[fr][tc] -= yrc;
                    y[tr][tc] += yrc;
                    y[tr][fc] -= yrc;
                }
            }
        }
        for (k, x) in model.transformers.iter().enumerate() {
            // Ideal ratio t:1 on the from side, series branch on the to side.
            let t = taps[k];
            let ys = Complex64::new(x.series_g, x.series_b) * z_base(model.bus(&x.to).unwrap().base_kv);
            for ph in x.phases.iter() {
                let (p, s) = (at(&x.from, ph), at(&x.to, ph));
                y[p][p] += ys / (t * t);
                y[p][s] -= ys / t;
                y[s][p] -= ys / t;
                y[s][s] += ys;
            }
        }
        DenseNetwork { keys, slack, y }
    }

    pub fn demand_pu(&self, model: &NetworkModel, inj: &InjectionSet) -> Vec<Complex64> {
        let s_base = model.base_mva * 1000.0;
        self.keys
            .iter()
            .map(|(b, ph)| {
                let (p, q) = inj.get(b, *ph);
                Complex64::new(p, q) / s_base
            })
            .collect()
    }

    pub fn slack_voltage(&self, model: &NetworkModel, ph: PhaseId) -> Complex64 {
        let angle = match ph {
            PhaseId::A => 0.0,
            PhaseId::B => -2.0 * std::f64::consts::PI / 3.0,
            PhaseId::C => 2.0 * std::f64::consts::PI / 3.0,
        };
        Complex64::from_polar(model.slack_voltage_pu, angle)
    }

    /// Largest `|Y V + conj(S / V)|` over non-slack nodes.
    pub fn kcl_mismatch(&self, demand: &[Complex64], v: &[Complex64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.keys.len() {
            if self.slack[i] {
                continue;
            }
            let flow: Complex64 = (0..v.len()).map(|j| self.y[i][j] * v[j]).sum();
            worst = worst.max((flow + (demand[i] / v[i]).conj()).norm());
        }
        worst
    }
}

/// Gauss-Seidel on the current-injection equations, from a flat start, until
/// no component moves by more than `tol`.
pub fn gauss_seidel(model: &NetworkModel, inj: &InjectionSet, taps: &[f64], tol: f64) -> HashMap<NodeKey, Complex64> {
    let net = DenseNetwork::new(model, taps);
    let demand = net.demand_pu(model, inj);
    let mut v: Vec<Complex64> = net
        .keys
        .iter()
        .map(|(_, ph)| net.slack_voltage(model, *ph))
        .collect();
    for sweep in 0.. {
        assert!(sweep < 2_000_000, "Gauss-Seidel stalled on {}", model.name);
        let mut moved: f64 = 0.0;
        for i in 0..v.len() {
            if net.slack[i] {
                continue;
            }
            let mut rhs = -(demand[i] / v[i]).conj();
            for j in 0..v.len() {
                if j != i {
                    rhs -= net.y[i][j] * v[j];
                }
            }
            let next = rhs / net.y[i][i];
            moved = moved.max((next - v[i]).norm());
            v[i] = next;
        }
        if moved < tol {
            break;
        }
    }
    net.keys.into_iter().zip(v).collect()
}

/// Single-phase slack and prosumer bus joined by a short cable; the prosumer
/// exports `oes_kw` against a 5 kW load.
pub fn two_bus(oes_kw: f64) -> (NetworkModel, f64) {
    let mut m = model(
        "two_bus",
        0.1,
        vec![bus("s", BusKind::Slack, "a", 0.24), bus("p", BusKind::Prosumer, "a", 0.24)],
        vec![line("sp", "s", "p", "a", (0.05, 0.02), (0.0, 0.0), 1.0)],
        vec![load("p", PhaseId::A, 5.0, 1.6)],
    );
    m.buses[1].v_min_pu = 0.95;
    m.buses[1].v_max_pu = 1.05;
    m.batteries.push(BatterySpec {
        id: "b".into(),
        params: BatteryParams {
            e_max_kwh: 13.5,
            p_max_kw: 5.0,
            eta_c: 0.95,
            eta_d: 0.95,
            e_set_kwh: 6.75,
        },
    });
    m.prosumers.push(ProsumerSpec {
        id: "pa".into(),
        bus: "p".into(),
        phase: PhaseId::A,
        pv_kw_rating: 100.0,
        battery: "b".into(),
        weight: 1.0,
    });
    assert!(validate(&m).is_empty(), "{:?}", validate(&m));
    (m, oes_kw)
}

/// Smallest curtailment on a `step` grid whose Gauss-Seidel voltage at the
/// prosumer sits inside its band and whose cable current stays under rating.
pub fn two_bus_grid_search(model: &NetworkModel, oes_kw: f64, step: f64) -> f64 {
    let net = DenseNetwork::new(model, &[]);
    let (_, q) = (5.0, 1.6);
    let s_base = model.base_mva * 1000.0;
    let vs = net.slack_voltage(model, PhaseId::A);
    let y = -net.y[1][0];
    let bus = &model.buses[1];
    let i_base = 1000.0 * model.base_mva / bus.base_kv;
    let i_max = model.lines[0].i_max_amps / i_base;
    let n = (oes_kw / step).round() as usize;
    let mut v = vs;
    for k in 0..=n {
        let p_cu = k as f64 * step;
        let s = Complex64::new(-oes_kw + p_cu, q) / s_base;
        // Two-bus fixed point, warm-started from the previous grid point.
        for _ in 0..10_000 {
            let next = vs - (s / v).conj() / y;
            let done = (next - v).norm() < 1e-14;
            v = next;
            if done {
                break;
            }
        }
        let current = (y * (vs - v)).norm();
        if v.norm() <= bus.v_max_pu && v.norm() >= bus.v_min_pu && current <= i_max {
            return p_cu;
        }
    }
    f64::NAN
}

/// Cheapest bill over a grid of battery powers. Given the battery action the
/// grid exchange is forced: import any deficit, and export or spill any
/// surplus depending on the sign of the export price.
pub fn hems_brute_force(batt: &BatteryParams, tariff: &TariffSchedule, fc: &ForecastSeries, step: f64) -> f64 {
    let levels: Vec<f64> = {
        let n = (batt.p_max_kw / step).round() as i64;
        (-n..=n).map(|k| k as f64 * step).collect()
    };
    let h = fc.horizon();
    let mut best = f64::INFINITY;
    let mut choice = vec![0usize; h];
    loop {
        let mut soc = batt.e_set_kwh;
        let mut cost = 0.0;
        let mut ok = true;
        for tau in 0..h {
            let p = levels[choice[tau]];
            let (pc, pd) = if p >= 0.0 { (p, 0.0) } else { (0.0, -p) };
            soc += fc.dt_hours * (batt.eta_c * pc - pd / batt.eta_d);
            if soc < -1e-9 || soc > batt.e_max_kwh + 1e-9 {
                ok = false;
                break;
            }
            let net = fc.p_load_kw[tau] + pc - pd - fc.p_pv_kw[tau];
            cost += if net > 0.0 {
                fc.dt_hours * tariff.c_import[tau] * net
            } else {
                // Spill covers only PV; discharged energy must be exported.
                let surplus = -net;
                let dumpable = surplus.min(fc.p_pv_kw[tau]);
                let ce = tariff.c_export[tau];
                let exported = if ce >= 0.0 { surplus } else { surplus - dumpable };
                -fc.dt_hours * ce * exported
            };
        }
        if ok && (soc - batt.e_set_kwh).abs() < 1e-9 && cost < best {
            best = cost;
        }
        let mut k = 0;
        loop {
            if k == h {
                return best;
            }
            choice[k] += 1;
            if choice[k] < levels.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}
