//! Three-phase unbalanced network model.
//!
//! A [`NetworkModel`] is an immutable description of buses, branches, loads
//! and prosumers in engineering units. Solvers never read it directly; they
//! go through [`NodeIndex`] (node-phase numbering) and
//! [`admittance::BranchAdmittances`] (per-unit branch data).

pub mod admittance;
mod parse;
mod validate;
mod write;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hems::BatteryParams;

pub use admittance::{assemble_admittance, BranchAdmittances, SparseRealAdmittance, TapSettings};
pub use parse::{parse_network, parse_network_json, parse_network_text, parse_unchecked, ParseError};
pub use validate::{validate, Diagnostic};
pub use write::to_text;

/// One of the three phase conductors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseId {
    A,
    B,
    C,
}

impl PhaseId {
    pub const ALL: [PhaseId; 3] = [PhaseId::A, PhaseId::B, PhaseId::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            PhaseId::A => 'a',
            PhaseId::B => 'b',
            PhaseId::C => 'c',
        }
    }

    /// Nominal phase angle of the balanced positive-sequence set, in radians.
    pub fn nominal_angle(self) -> f64 {
        match self {
            PhaseId::A => 0.0,
            PhaseId::B => -2.0 * std::f64::consts::FRAC_PI_3,
            PhaseId::C => 2.0 * std::f64::consts::FRAC_PI_3,
        }
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for PhaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(PhaseId::A),
            "b" | "B" => Ok(PhaseId::B),
            "c" | "C" => Ok(PhaseId::C),
            _ => Err(format!("invalid phase '{s}'")),
        }
    }
}

/// Subset of {a, b, c}, iterated in a < b < c order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn empty() -> Self {
        PhaseSet(0)
    }

    pub fn single(phase: PhaseId) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn with(self, phase: PhaseId) -> Self {
        PhaseSet(self.0 | (1 << phase.index()))
    }

    pub fn contains(self, phase: PhaseId) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = PhaseId> {
        PhaseId::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `phase` within this set (row/column in a phase block).
    pub fn position(self, phase: PhaseId) -> Option<usize> {
        self.iter().position(|p| p == phase)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "-");
        }
        for p in self.iter() {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

impl FromStr for PhaseSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("empty phase set".into());
        }
        let mut set = PhaseSet::empty();
        for ch in s.chars() {
            let phase: PhaseId = ch.to_string().parse()?;
            if set.contains(phase) {
                return Err(format!("phase '{ch}' repeated in '{s}'"));
            }
            set = set.with(phase);
        }
        Ok(set)
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
    Prosumer,
    Junction,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Load => "load",
            BusKind::Prosumer => "prosumer",
            BusKind::Junction => "junction",
        }
    }
}

impl FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slack" => Ok(BusKind::Slack),
            "load" => Ok(BusKind::Load),
            "prosumer" => Ok(BusKind::Prosumer),
            "junction" => Ok(BusKind::Junction),
            _ => Err(format!("invalid bus kind '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    pub phases: PhaseSet,
    /// Line-to-neutral base voltage in kV.
    pub base_kv: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

/// Series line with (possibly mutually coupled) phase admittance blocks.
///
/// `g_block` and `b_block` are indexed by position within `phases`, in siemens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineBranch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    pub i_max_amps: f64,
    pub g_block: Vec<Vec<f64>>,
    pub b_block: Vec<Vec<f64>>,
}

impl LineBranch {
    /// Builds the admittance blocks by inverting a series impedance matrix
    /// given in ohms (`r + jx`, indexed like `phases`).
    pub fn from_impedance(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        phases: PhaseSet,
        r_ohm: &[Vec<f64>],
        x_ohm: &[Vec<f64>],
        i_max_amps: f64,
    ) -> Option<Self> {
        let (g_block, b_block) = crate::linalg::complex_inverse(r_ohm, x_ohm)?;
        Some(LineBranch {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            phases,
            i_max_amps,
            g_block,
            b_block,
        })
    }
}

/// Wye-grounded transformer bank: ideal tap on the `from` side followed by a
/// per-phase series admittance referred to the `to` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerBranch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    pub tap_min: f64,
    pub tap_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_fixed: Option<f64>,
    pub series_g: f64,
    pub series_b: f64,
    pub s_max_kva: f64,
}

impl TransformerBranch {
    /// Tap used when the caller does not choose one.
    pub fn default_tap(&self) -> f64 {
        self.tap_fixed.unwrap_or(0.5 * (self.tap_min + self.tap_max))
    }
}

/// Constant-power demand on one phase of a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: String,
    pub phase: PhaseId,
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub id: String,
    #[serde(flatten)]
    pub params: BatteryParams,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSpec {
    pub id: String,
    pub bus: String,
    pub phase: PhaseId,
    pub pv_kw_rating: f64,
    pub battery: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_slack_voltage() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    /// Slack magnitude in per unit; phase angles are the nominal 0/-120/+120.
    #[serde(default = "default_slack_voltage")]
    pub slack_voltage_pu: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<LineBranch>,
    #[serde(default)]
    pub transformers: Vec<TransformerBranch>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub batteries: Vec<BatterySpec>,
    #[serde(default)]
    pub prosumers: Vec<ProsumerSpec>,
}

impl NetworkModel {
    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_position(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    pub fn battery(&self, id: &str) -> Option<&BatteryParams> {
        self.batteries.iter().find(|b| b.id == id).map(|b| &b.params)
    }

    /// Summed demand per (bus, phase) over all load entries.
    pub fn load_totals(&self) -> HashMap<(String, PhaseId), (f64, f64)> {
        let mut totals: HashMap<(String, PhaseId), (f64, f64)> = HashMap::new();
        for load in &self.loads {
            let e = totals.entry((load.bus.clone(), load.phase)).or_default();
            e.0 += load.p_kw;
            e.1 += load.q_kvar;
        }
        totals
    }

    /// Per-phase power base in kVA.
    pub fn s_base_kva(&self) -> f64 {
        self.base_mva * 1000.0
    }
}

/// Dense numbering of every present (bus, phase) pair.
///
/// Node-phases are numbered in bus order, then phase order. Slack node-phases
/// are included; solvers skip them through [`NodeIndex::is_slack`].
#[derive(Debug, Clone)]
pub struct NodeIndex {
    entries: Vec<NodePhase>,
    lookup: HashMap<(usize, PhaseId), usize>,
    bus_lookup: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePhase {
    pub bus: usize,
    pub phase: PhaseId,
    pub slack: bool,
}

impl NodeIndex {
    pub fn new(model: &NetworkModel) -> Self {
        let mut entries = Vec::new();
        let mut lookup = HashMap::new();
        let mut bus_lookup = HashMap::new();
        for (bi, bus) in model.buses.iter().enumerate() {
            bus_lookup.insert(bus.id.clone(), bi);
            for phase in bus.phases.iter() {
                lookup.insert((bi, phase), entries.len());
                entries.push(NodePhase {
                    bus: bi,
                    phase,
                    slack: bus.kind == BusKind::Slack,
                });
            }
        }
        NodeIndex {
            entries,
            lookup,
            bus_lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bus: usize, phase: PhaseId) -> Option<usize> {
        self.lookup.get(&(bus, phase)).copied()
    }

    pub fn get_by_id(&self, bus: &str, phase: PhaseId) -> Option<usize> {
        self.bus_lookup
            .get(bus)
            .and_then(|&bi| self.get(bi, phase))
    }

    pub fn bus_position(&self, bus: &str) -> Option<usize> {
        self.bus_lookup.get(bus).copied()
    }

    pub fn node(&self, idx: usize) -> &NodePhase {
        &self.entries[idx]
    }

    pub fn is_slack(&self, idx: usize) -> bool {
        self.entries[idx].slack
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &NodePhase)> {
        self.entries.iter().enumerate()
    }
}

/// Slack voltage phasor (per unit, rectangular) for one phase.
pub fn slack_phasor(model: &NetworkModel, phase: PhaseId) -> (f64, f64) {
    let angle = phase.nominal_angle();
    (
        model.slack_voltage_pu * angle.cos(),
        model.slack_voltage_pu * angle.sin(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_set_parse_and_order() {
        let set: PhaseSet = "ca".parse().unwrap();
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![PhaseId::A, PhaseId::C]);
        assert_eq!(set.to_string(), "ac");
        assert_eq!(set.position(PhaseId::C), Some(1));
        assert!("aa".parse::<PhaseSet>().is_err());
        assert!("d".parse::<PhaseSet>().is_err());
        assert!(PhaseSet::single(PhaseId::B).is_subset_of(PhaseSet::ABC));
    }

    #[test]
    fn phase_ordering_is_stable() {
        let mut v = vec![PhaseId::C, PhaseId::A, PhaseId::B];
        v.sort();
        assert_eq!(v, PhaseId::ALL.to_vec());
    }
}
