//! Physical constants (CODATA 2018) and unit conversions used at the crate boundary.

use std::f64::consts::TAU;

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Electron mass in atomic mass units.
pub const ELECTRON_MASS_AMU: f64 = 5.485_799_090_65e-4;

/// Atomic mass of neutral 171Yb, in atomic mass units.
pub const YB171_ATOMIC_MASS_AMU: f64 = 170.936_325_8;

/// Hyperfine clock splitting of 171Yb+, rad/s.
pub const YB171_QUBIT_SPLITTING: f64 = TAU * 12.642_821e9;

/// Coulomb constant 1/(4 pi eps0), N m^2 / C^2.
pub fn coulomb_constant() -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY)
}

/// Converts a frequency in MHz (the `2 pi x` convention) to angular frequency in rad/s.
pub fn mhz_to_angular(mhz: f64) -> f64 {
    TAU * mhz * 1e6
}

/// Converts an angular frequency in rad/s to MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (TAU * 1e6)
}

pub fn amu_to_kg(amu: f64) -> f64 {
    amu * ATOMIC_MASS_UNIT
}
