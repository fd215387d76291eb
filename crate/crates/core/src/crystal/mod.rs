//! Equilibrium geometry of N ions in a three-dimensional harmonic well.
//!
//! The energy `U = sum_i m/2 (wx^2 x^2 + wy^2 y^2 + wz^2 z^2) + sum_{i<j} k q^2 / r_ij`
//! is minimised in reduced units (see [`ReducedUnits`](reduced::ReducedUnits))
//! from several seeded random starts; the lowest converged minimum wins.
//! Global optimality is not guaranteed. Degenerate crystal orientations (for
//! example a planar crystal in an isotropic x-z well) can come out rotated
//! differently for different seeds.

pub(crate) mod minimize;
pub(crate) mod reduced;
pub(crate) mod scan;

use std::fmt;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::Axis;
use crate::par::{map_indexed, Execution};
use crate::trap_model::{IonSpecies, SecularFrequencies, TrapError};
use minimize::{minimize, MinimizeOptions, MinimizeOutcome, Objective};
use reduced::ReducedUnits;

pub use scan::{
    scan_structure, ScanRecord, ScanSpec, StructureScanResult, SweepParameter, Transition,
    TransitionKind,
};

/// Default extent below which an axis counts as collapsed, m.
pub const DEFAULT_PLANARITY_THRESHOLD: f64 = 1e-8;
/// Default number of random starts.
pub const DEFAULT_RESTARTS: usize = 8;
/// Pairs closer than this (m) are rejected as coincident.
pub const COINCIDENCE_DISTANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error("invalid harmonic trap: {0}")]
    InvalidTrap(String),
    #[error("ions {0} and {1} coincide")]
    CoincidentIons(usize, usize),
    #[error("at least one ion is required")]
    NoIons,
    #[error("at least one restart is required")]
    NoRestarts,
    #[error("planarity threshold must be positive")]
    InvalidThreshold,
    #[error("minimiser did not converge (max force {:e} N)", .0.gradient_norm)]
    NotConverged(Box<CrystalConfigurationResult>),
    #[error("scan grid must be strictly monotone")]
    NonMonotoneGrid,
    #[error(transparent)]
    Trap(#[from] TrapError),
}

pub type Result<T, E = CrystalError> = std::result::Result<T, E>;

/// Ideal harmonic well aligned with the lab axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTrap {
    /// Angular frequencies along x, y, z, rad/s.
    pub omega: [f64; 3],
    pub species: IonSpecies,
}

impl HarmonicTrap {
    pub fn new(omega: [f64; 3], species: IonSpecies) -> Result<Self> {
        if let Some(axis) = Axis::ALL
            .into_iter()
            .find(|a| !(omega[a.index()].is_finite() && omega[a.index()] > 0.0))
        {
            return Err(CrystalError::InvalidTrap(format!(
                "omega_{axis} = {} must be positive",
                omega[axis.index()]
            )));
        }
        Ok(HarmonicTrap { omega, species })
    }

    /// Harmonic trap from secular frequencies, expressed in the principal frame.
    pub fn from_secular(freqs: &SecularFrequencies, species: IonSpecies) -> Result<Self> {
        Self::new(freqs.as_array(), species)
    }

    pub fn omega(&self, axis: Axis) -> f64 {
        self.omega[axis.index()]
    }

    pub fn with_omega(mut self, axis: Axis, omega: f64) -> Result<Self> {
        self.omega[axis.index()] = omega;
        Self::new(self.omega, self.species)
    }

    /// Length scale `(k q^2 / (m w^2))^(1/3)` for the given axis frequency.
    pub fn length_scale(&self, axis: Axis) -> f64 {
        let w = self.omega(axis);
        let s = &self.species;
        (crate::constants::coulomb_constant() * s.charge * s.charge / (s.mass * w * w)).cbrt()
    }

    /// Characteristic force `m w_x^2 l`, N.
    pub fn characteristic_force(&self) -> f64 {
        ReducedUnits::of(self).force
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the max-norm force as a fraction of
    /// [`HarmonicTrap::characteristic_force`].
    pub relative_force_tolerance: f64,
    pub max_iterations: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            relative_force_tolerance: 1e-10,
            max_iterations: 20_000,
            execution: Execution::Parallel,
        }
    }
}

impl SolverOptions {
    /// Force tolerance in newtons for `trap`.
    pub fn force_tolerance(&self, trap: &HarmonicTrap) -> f64 {
        self.relative_force_tolerance * trap.characteristic_force()
    }

    fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions {
            gradient_tolerance: self.relative_force_tolerance,
            max_iterations: self.max_iterations,
            max_step: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalConfigurationResult {
    /// Ion positions, m.
    pub positions: Vec<Vector3<f64>>,
    /// Potential energy, J.
    pub energy: f64,
    /// Max-norm of the residual force, N.
    pub gradient_norm: f64,
    /// Force tolerance the result was checked against, N.
    pub force_tolerance: f64,
    pub converged: bool,
    pub restarts_used: usize,
    pub seed: u64,
    /// Minimiser iterations of the selected run.
    pub iterations: usize,
}

impl CrystalConfigurationResult {
    pub fn n_ions(&self) -> usize {
        self.positions.len()
    }

    pub fn extent(&self) -> CrystalExtent {
        crystal_extent(&self.positions)
    }
}

fn check_coincident(positions: &[Vector3<f64>]) -> Result<()> {
    let flat: Vec<f64> = positions.iter().flat_map(|r| [r.x, r.y, r.z]).collect();
    match reduced::closest_pair(&flat) {
        Some((i, j, d)) if d <= COINCIDENCE_DISTANCE => Err(CrystalError::CoincidentIons(i, j)),
        _ => Ok(()),
    }
}

/// Total potential energy, J.
pub fn potential_energy(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<f64> {
    check_coincident(positions)?;
    let units = ReducedUnits::of(trap);
    Ok(reduced::energy(&units.stiffness, &units.to_reduced(positions)) * units.energy)
}

/// Gradient of [`potential_energy`] per ion, N (equal to minus the force).
pub fn potential_gradient(
    positions: &[Vector3<f64>],
    trap: &HarmonicTrap,
) -> Result<Vec<Vector3<f64>>> {
    check_coincident(positions)?;
    let units = ReducedUnits::of(trap);
    let u = units.to_reduced(positions);
    let mut g = vec![0.0; u.len()];
    reduced::energy_gradient(&units.stiffness, &u, &mut g);
    Ok(g.chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]) * units.force)
        .collect())
}

/// Free coordinates: all three per ion, or x and z only (y pinned at zero).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Freedom {
    Full,
    PlanarXZ,
}

pub(crate) struct CrystalObjective {
    pub stiffness: [f64; 3],
    pub n: usize,
    pub freedom: Freedom,
}

impl CrystalObjective {
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        match self.freedom {
            Freedom::Full => x.to_vec(),
            Freedom::PlanarXZ => x
                .chunks_exact(2)
                .flat_map(|c| [c[0], 0.0, c[1]])
                .collect(),
        }
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        match self.freedom {
            Freedom::Full => full.to_vec(),
            Freedom::PlanarXZ => full.chunks_exact(3).flat_map(|c| [c[0], c[2]]).collect(),
        }
    }

    fn free_index(&self) -> Vec<usize> {
        match self.freedom {
            Freedom::Full => (0..3 * self.n).collect(),
            Freedom::PlanarXZ => (0..self.n).flat_map(|i| [3 * i, 3 * i + 2]).collect(),
        }
    }
}

impl Objective for CrystalObjective {
    fn dim(&self) -> usize {
        match self.freedom {
            Freedom::Full => 3 * self.n,
            Freedom::PlanarXZ => 2 * self.n,
        }
    }

    fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self.freedom {
            Freedom::Full => reduced::energy_gradient(&self.stiffness, x, grad),
            Freedom::PlanarXZ => {
                let full = self.expand(x);
                let mut g = vec![0.0; full.len()];
                let e = reduced::energy_gradient(&self.stiffness, &full, &mut g);
                grad.copy_from_slice(&self.restrict(&g));
                e
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let full = reduced::hessian(&self.stiffness, &self.expand(x));
        match self.freedom {
            Freedom::Full => full,
            Freedom::PlanarXZ => {
                let idx = self.free_index();
                full.select_rows(&idx).select_columns(&idx)
            }
        }
    }
}

/// Seeded random start inside a cube of half-width `l_min N^(1/3)`, where
/// `l_min` is the length scale of the softest axis. Returned in reduced units.
fn random_start(units: &ReducedUnits, trap: &HarmonicTrap, n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let omega_min = trap.omega.iter().copied().fold(f64::INFINITY, f64::min);
    let half = (units.omega_ref / omega_min).powf(2.0 / 3.0) * (n as f64).cbrt();
    (0..3 * n).map(|_| rng.gen_range(-half..half)).collect()
}

pub(crate) struct Relaxed {
    pub outcome: MinimizeOutcome,
    pub full: Vec<f64>,
}

pub(crate) fn relax_reduced(
    units: &ReducedUnits,
    start: Vec<f64>,
    freedom: Freedom,
    options: &SolverOptions,
) -> Relaxed {
    let n = start.len() / 3;
    let obj = CrystalObjective {
        stiffness: units.stiffness,
        n,
        freedom,
    };
    let outcome = minimize(&obj, obj.restrict(&start), &options.minimize_options());
    let full = obj.expand(&outcome.x);
    Relaxed { outcome, full }
}

fn to_result(
    units: &ReducedUnits,
    trap: &HarmonicTrap,
    relaxed: &Relaxed,
    restarts_used: usize,
    seed: u64,
    options: &SolverOptions,
) -> CrystalConfigurationResult {
    let mut g = vec![0.0; relaxed.full.len()];
    reduced::energy_gradient(&units.stiffness, &relaxed.full, &mut g);
    let g_norm = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    CrystalConfigurationResult {
        positions: units.to_si(&relaxed.full),
        energy: relaxed.outcome.value * units.energy,
        gradient_norm: g_norm * units.force,
        force_tolerance: options.force_tolerance(trap),
        converged: relaxed.outcome.converged,
        restarts_used,
        seed,
        iterations: relaxed.outcome.iterations,
    }
}

/// Picks the lowest-energy converged run; ties go to the lower index.
fn select_best(runs: &[Relaxed]) -> usize {
    let key = |r: &Relaxed| (!r.outcome.converged, r.outcome.value);
    (0..runs.len())
        .min_by(|&a, &b| {
            let (ca, ea) = key(&runs[a]);
            let (cb, eb) = key(&runs[b]);
            ca.cmp(&cb).then(ea.total_cmp(&eb)).then(a.cmp(&b))
        })
        .expect("at least one run")
}

/// Lowest-energy equilibrium over `restarts` seeded random starts, using
/// default solver options.
pub fn solve_equilibrium(
    trap: &HarmonicTrap,
    n_ions: usize,
    seed: u64,
    restarts: usize,
) -> Result<CrystalConfigurationResult> {
    solve_equilibrium_with(trap, n_ions, seed, restarts, &[], &SolverOptions::default())
}

/// Like [`solve_equilibrium`], with extra starting geometries (SI, tried
/// before the random starts) and explicit options.
pub fn solve_equilibrium_with(
    trap: &HarmonicTrap,
    n_ions: usize,
    seed: u64,
    restarts: usize,
    warm_starts: &[Vec<Vector3<f64>>],
    options: &SolverOptions,
) -> Result<CrystalConfigurationResult> {
    solve_internal(trap, n_ions, seed, restarts, warm_starts, Freedom::Full, options)
}

pub(crate) fn solve_internal(
    trap: &HarmonicTrap,
    n_ions: usize,
    seed: u64,
    restarts: usize,
    warm_starts: &[Vec<Vector3<f64>>],
    freedom: Freedom,
    options: &SolverOptions,
) -> Result<CrystalConfigurationResult> {
    if n_ions == 0 {
        return Err(CrystalError::NoIons);
    }
    if restarts == 0 {
        return Err(CrystalError::NoRestarts);
    }
    HarmonicTrap::new(trap.omega, trap.species)?;
    let units = ReducedUnits::of(trap);
    for w in warm_starts {
        if w.len() != n_ions {
            return Err(CrystalError::InvalidTrap(format!(
                "warm start has {} ions, expected {n_ions}",
                w.len()
            )));
        }
    }

    let total = warm_starts.len() + restarts;
    let runs = map_indexed(total, options.execution, |k| {
        let start = if k < warm_starts.len() {
            units.to_reduced(&warm_starts[k])
        } else {
            random_start(&units, trap, n_ions, seed, (k - warm_starts.len()) as u64)
        };
        relax_reduced(&units, start, freedom, options)
    });
    let best = select_best(&runs);
    let result = to_result(&units, trap, &runs[best], total, seed, options);
    if result.converged {
        Ok(result)
    } else {
        Err(CrystalError::NotConverged(Box::new(result)))
    }
}

/// Minimises from a single given geometry (SI). Non-convergence is reported
/// through the `converged` flag rather than an error.
pub fn relax_from(
    trap: &HarmonicTrap,
    initial: &[Vector3<f64>],
    options: &SolverOptions,
) -> Result<CrystalConfigurationResult> {
    if initial.is_empty() {
        return Err(CrystalError::NoIons);
    }
    HarmonicTrap::new(trap.omega, trap.species)?;
    check_coincident(initial)?;
    let units = ReducedUnits::of(trap);
    let relaxed = relax_reduced(&units, units.to_reduced(initial), Freedom::Full, options);
    Ok(to_result(&units, trap, &relaxed, 1, 0, options))
}

/// Energy after every accepted minimiser step from `initial` (J).
pub fn relaxation_trace(
    trap: &HarmonicTrap,
    initial: &[Vector3<f64>],
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    check_coincident(initial)?;
    let units = ReducedUnits::of(trap);
    let relaxed = relax_reduced(&units, units.to_reduced(initial), Freedom::Full, options);
    Ok(relaxed.outcome.trace.iter().map(|e| e * units.energy).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalExtent {
    pub size_x: f64,
    pub size_y: f64,
    pub size_z: f64,
}

impl CrystalExtent {
    pub fn as_array(&self) -> [f64; 3] {
        [self.size_x, self.size_y, self.size_z]
    }

    pub fn along(&self, axis: Axis) -> f64 {
        self.as_array()[axis.index()]
    }
}

/// Per-axis spread `max - min` of the coordinates.
pub fn crystal_extent(positions: &[Vector3<f64>]) -> CrystalExtent {
    let mut size = [0.0; 3];
    for (a, s) in size.iter_mut().enumerate() {
        let (lo, hi) = positions
            .iter()
            .map(|r| r[a])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        *s = if positions.is_empty() { 0.0 } else { hi - lo };
    }
    CrystalExtent {
        size_x: size[0],
        size_y: size[1],
        size_z: size[2],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensionality {
    /// Every axis collapsed (a single ion).
    Point,
    /// Chain along the given axis.
    Linear(Axis),
    /// Planar; the axis is the collapsed normal.
    Planar { normal: Axis },
    Volume,
}

impl Dimensionality {
    pub fn rank(&self) -> usize {
        match self {
            Dimensionality::Point => 0,
            Dimensionality::Linear(_) => 1,
            Dimensionality::Planar { .. } => 2,
            Dimensionality::Volume => 3,
        }
    }

    /// True when the crystal has non-zero extent along `axis`.
    pub fn spans(&self, axis: Axis) -> bool {
        match self {
            Dimensionality::Point => false,
            Dimensionality::Linear(a) => *a == axis,
            Dimensionality::Planar { normal } => *normal != axis,
            Dimensionality::Volume => true,
        }
    }

    pub fn is_planar_xz(&self) -> bool {
        *self == Dimensionality::Planar { normal: Axis::Y }
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimensionality::Point => f.write_str("0D"),
            Dimensionality::Linear(a) => write!(f, "1D-{a}"),
            Dimensionality::Planar { normal } => {
                let plane: Vec<&str> = Axis::ALL
                    .iter()
                    .filter(|a| *a != normal)
                    .map(|a| a.label())
                    .collect();
                write!(f, "2D-{}{}", plane[0], plane[1])
            }
            Dimensionality::Volume => f.write_str("3D"),
        }
    }
}

/// Collapses axes whose extent is below `threshold` (m).
pub fn classify_dimension(positions: &[Vector3<f64>], threshold: f64) -> Result<Dimensionality> {
    if !(threshold > 0.0) {
        return Err(CrystalError::InvalidThreshold);
    }
    let ext = crystal_extent(positions).as_array();
    let open: Vec<Axis> = Axis::ALL
        .into_iter()
        .filter(|a| ext[a.index()] >= threshold)
        .collect();
    Ok(match open.as_slice() {
        [] => Dimensionality::Point,
        [a] => Dimensionality::Linear(*a),
        [a, b] => Dimensionality::Planar {
            normal: Axis::ALL
                .into_iter()
                .find(|c| c != a && c != b)
                .expect("third axis"),
        },
        _ => Dimensionality::Volume,
    })
}

/// Smallest distance from each ion to any other, m.
pub fn nearest_neighbor_distances(positions: &[Vector3<f64>]) -> Vec<f64> {
    positions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| (r - s).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
