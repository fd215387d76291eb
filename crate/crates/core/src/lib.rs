//! Simulation and analysis of two-dimensional ion crystals in a Paul trap.
//!
//! * [`trap_model`]: electrode bases, secular frequencies, principal-axis rotation.
//! * [`crystal`]: equilibrium geometries and structural scans.
//! * [`modes`]: normal modes and soft-mode detection.
//! * [`calibration`]: imperfection coefficients from measured frequencies.
//! * [`spectroscopy`]: Raman sideband spectra, Rabi flopping and micromotion.
//! * [`io`]: trap-basis files.
//!
//! All quantities are SI; angular frequencies are in rad/s.

pub mod axis;
pub mod calibration;
pub mod constants;
pub mod crystal;
pub mod io;
pub mod modes;
pub mod par;
pub mod spectroscopy;
pub mod trap_model;

pub use axis::Axis;
pub use par::Execution;
