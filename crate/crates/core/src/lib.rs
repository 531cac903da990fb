//! Truncated Fock-space simulation of linear-optical quantum links, with
//! rate models for heralded device-independent QKD, weak-coherent-pulse QKD
//! and quantum repeater chains.

pub mod diqkd;
pub mod error;
pub mod fock;
pub mod optics;
pub mod repeater;
pub mod wcp;

pub use error::{Result, SimError};
pub use fock::{BellState, DualRailSectors, FockState, MixedState, ModeLabel, Polarization, Truncation, TwoQubitState};
pub use optics::{DetectionOutcome, DetectorKind, DetectorModel, SourceModel};
