//! Harmonic + Coulomb energy in dimensionless units.
//!
//! Lengths are in `l = (k q^2 / (m w_ref^2))^(1/3)` and energies in
//! `m w_ref^2 l^2`, with `w_ref = w_x`. In these units
//! `U = sum_i 1/2 sum_a s_a u_ia^2 + sum_{i<j} 1/|u_i - u_j|` where
//! `s_a = (w_a / w_ref)^2`.

use nalgebra::{DMatrix, Vector3};

use super::HarmonicTrap;
use crate::constants::coulomb_constant;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ReducedUnits {
    /// m
    pub length: f64,
    /// J
    pub energy: f64,
    /// N
    pub force: f64,
    /// rad/s
    pub omega_ref: f64,
    /// (w_a / w_ref)^2
    pub stiffness: [f64; 3],
}

impl ReducedUnits {
    pub fn of(trap: &HarmonicTrap) -> Self {
        let omega_ref = trap.omega[0];
        let m = trap.species.mass;
        let q = trap.species.charge;
        let length = (coulomb_constant() * q * q / (m * omega_ref * omega_ref)).cbrt();
        let energy = m * omega_ref * omega_ref * length * length;
        ReducedUnits {
            length,
            energy,
            force: energy / length,
            omega_ref,
            stiffness: trap.omega.map(|w| (w / omega_ref).powi(2)),
        }
    }

    pub fn to_reduced(&self, positions: &[Vector3<f64>]) -> Vec<f64> {
        positions
            .iter()
            .flat_map(|r| [r.x, r.y, r.z])
            .map(|v| v / self.length)
            .collect()
    }

    pub fn to_si(&self, flat: &[f64]) -> Vec<Vector3<f64>> {
        flat.chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]) * self.length)
            .collect()
    }
}

/// Smallest pairwise distance and the offending pair, in the units of `flat`.
pub(crate) fn closest_pair(flat: &[f64]) -> Option<(usize, usize, f64)> {
    let n = flat.len() / 3;
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(flat, i, j);
            if best.is_none_or(|(_, _, b)| d < b) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

fn dist(flat: &[f64], i: usize, j: usize) -> f64 {
    let dx = flat[3 * i] - flat[3 * j];
    let dy = flat[3 * i + 1] - flat[3 * j + 1];
    let dz = flat[3 * i + 2] - flat[3 * j + 2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub(crate) fn energy(stiffness: &[f64; 3], u: &[f64]) -> f64 {
    let n = u.len() / 3;
    let mut e = 0.0;
    for i in 0..n {
        for a in 0..3 {
            e += 0.5 * stiffness[a] * u[3 * i + a] * u[3 * i + a];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            e += 1.0 / dist(u, i, j);
        }
    }
    e
}

/// Energy and gradient; `grad` must have the length of `u`.
pub(crate) fn energy_gradient(stiffness: &[f64; 3], u: &[f64], grad: &mut [f64]) -> f64 {
    let n = u.len() / 3;
    let mut e = 0.0;
    for i in 0..n {
        for a in 0..3 {
            let x = u[3 * i + a];
            e += 0.5 * stiffness[a] * x * x;
            grad[3 * i + a] = stiffness[a] * x;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = [
                u[3 * i] - u[3 * j],
                u[3 * i + 1] - u[3 * j + 1],
                u[3 * i + 2] - u[3 * j + 2],
            ];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let r = r2.sqrt();
            e += 1.0 / r;
            let inv3 = 1.0 / (r2 * r);
            for a in 0..3 {
                let f = d[a] * inv3;
                grad[3 * i + a] -= f;
                grad[3 * j + a] += f;
            }
        }
    }
    e
}

/// Second derivatives of the reduced energy (3N x 3N, symmetric by construction).
pub(crate) fn hessian(stiffness: &[f64; 3], u: &[f64]) -> DMatrix<f64> {
    let n = u.len() / 3;
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for a in 0..3 {
            h[(3 * i + a, 3 * i + a)] = stiffness[a];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = [
                u[3 * i] - u[3 * j],
                u[3 * i + 1] - u[3 * j + 1],
                u[3 * i + 2] - u[3 * j + 2],
            ];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let r = r2.sqrt();
            let inv3 = 1.0 / (r2 * r);
            let inv5 = inv3 / r2;
            for a in 0..3 {
                for b in a..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let k = 3.0 * d[a] * d[b] * inv5 - delta * inv3;
                    let blocks = [(i, i, k), (j, j, k), (i, j, -k), (j, i, -k)];
                    for (p, q, v) in blocks {
                        h[(3 * p + a, 3 * q + b)] += v;
                        if a != b {
                            h[(3 * p + b, 3 * q + a)] += v;
                        }
                    }
                }
            }
        }
    }
    h
}
