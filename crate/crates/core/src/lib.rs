//! Programmable photon-mediated spin-exchange interactions in an array of
//! atomic ensembles: waveform synthesis, early-time spin-wave analytics,
//! truncated Wigner simulation, correlation estimation, and reconstruction
//! of effective Euclidean and treelike geometries from correlations.

pub mod config;
pub mod correlations;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lattice;
pub mod pipeline;
pub mod presets;
pub mod spinwave;
pub mod twa;
pub mod waveform;

pub use error::{Error, Result};
pub use lattice::{CouplingProfile, LatticeConfig, TreeCouplingSpec};
pub use waveform::{Dispersion, DriveWaveform};
