use std::fmt::Write;

use super::NetworkModel;

/// Serializes a model to the sectioned text format. Floats use the shortest
/// round-trip representation, so `parse_network_text(to_text(m)) == m`.
pub fn to_text(model: &NetworkModel) -> String {
    let mut s = String::new();
    s.push_str("[network]\n");
    if !model.name.is_empty() {
        let _ = writeln!(s, "name {}", model.name);
    }
    let _ = writeln!(s, "base_mva {:?}", model.base_mva);
    let _ = writeln!(s, "slack_voltage_pu {:?}", model.slack_voltage_pu);

    s.push_str("\n[bus]\n# id kind phases base_kv v_min_pu v_max_pu\n");
    for b in &model.buses {
        let _ = writeln!(
            s,
            "{} {} {} {:?} {:?} {:?}",
            b.id,
            b.kind.as_str(),
            b.phases,
            b.base_kv,
            b.v_min_pu,
            b.v_max_pu
        );
    }

    if !model.lines.is_empty() {
        s.push_str("\n[line]\n# id from to phases i_max_amps g_block b_block (row-major, siemens)\n");
        for l in &model.lines {
            let _ = write!(s, "{} {} {} {} {:?}", l.id, l.from, l.to, l.phases, l.i_max_amps);
            for v in l.g_block.iter().chain(&l.b_block).flatten() {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
    }

    if !model.transformers.is_empty() {
        s.push_str(
            "\n[transformer]\n# id from to phases tap_min tap_max tap_fixed series_g series_b s_max_kva\n",
        );
        for t in &model.transformers {
            let fixed = t.tap_fixed.map_or("-".to_string(), |v| format!("{v:?}"));
            let _ = writeln!(
                s,
                "{} {} {} {} {:?} {:?} {} {:?} {:?} {:?}",
                t.id, t.from, t.to, t.phases, t.tap_min, t.tap_max, fixed, t.series_g, t.series_b, t.s_max_kva
            );
        }
    }

    if !model.loads.is_empty() {
        s.push_str("\n[load]\n# bus phase p_kw q_kvar\n");
        for l in &model.loads {
            let _ = writeln!(s, "{} {} {:?} {:?}", l.bus, l.phase, l.p_kw, l.q_kvar);
        }
    }

    if !model.batteries.is_empty() {
        s.push_str("\n[battery]\n# id e_max_kwh p_max_kw eta_c eta_d e_set_kwh\n");
        for b in &model.batteries {
            let p = &b.params;
            let _ = writeln!(
                s,
                "{} {:?} {:?} {:?} {:?} {:?}",
                b.id, p.e_max_kwh, p.p_max_kw, p.eta_c, p.eta_d, p.e_set_kwh
            );
        }
    }

    if !model.prosumers.is_empty() {
        s.push_str("\n[prosumer]\n# id bus phase pv_kw_rating battery weight\n");
        for p in &model.prosumers {
            let _ = writeln!(
                s,
                "{} {} {} {:?} {} {:?}",
                p.id, p.bus, p.phase, p.pv_kw_rating, p.battery, p.weight
            );
        }
    }
    s
}
