//! Weyl–Heisenberg SIC-POVMs for qudits, a forward model of a storage-loop
//! linear-optics implementation of the qutrit SIC, state reconstruction from
//! port statistics, and the SIC form of the Born rule.

pub mod cli;
pub mod error;
pub mod loopsim;
pub mod optim;
pub mod qltp;
pub mod reconstruct;
pub mod sic;
pub mod state;

pub use error::{Error, Result};
