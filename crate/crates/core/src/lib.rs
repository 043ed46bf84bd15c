//! Network-aware coordination of prosumer PV exports.
//!
//! Prosumers schedule their batteries and propose export setpoints with a
//! mixed-integer home energy manager ([`hems`]). The utility checks the
//! proposals against a three-phase unbalanced AC model of the feeder and
//! curtails the smallest amount needed to keep voltages, currents and
//! transformer loading in bounds ([`dms`]). [`sim`] runs both stages over a
//! rolling horizon.

pub mod dms;
pub mod fixtures;
pub mod hems;
pub mod linalg;
pub mod network;
pub mod powerflow;
pub mod sim;
pub mod sparse;
