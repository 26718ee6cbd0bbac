//! Monte Carlo simulation and analysis of energy-time entanglement
//! distribution sharing a fiber with classical WDM traffic.
//!
//! The crate is organised bottom-up: [`channel_plan`] (ITU grid and DWDM
//! filters), [`photonics`] (tags, source, detector), [`raman`] (noise from
//! classical channels), [`link_sim`] (the full link), [`analysis`]
//! (coincidences, histograms, CAR), [`franson`] (interferometry and
//! visibility fits), [`qkd`] (BBM92 key rates), and the scenario and
//! session layers used by the command-line tool.

pub mod analysis;
pub mod channel_plan;
pub mod error;
pub mod franson;
pub mod link_sim;
pub mod photonics;
pub mod qkd;
pub mod qtt1;
pub mod raman;
pub mod scenario;
pub mod session;

pub use error::{Error, Result};
