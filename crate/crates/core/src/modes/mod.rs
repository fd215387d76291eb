//! Small-oscillation normal modes about an equilibrium, the transverse (y)
//! band of planar crystals and soft-mode tracking across the 2D to 3D
//! transition.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::Axis;
use crate::crystal::reduced::{self, ReducedUnits};
use crate::crystal::{
    self, classify_dimension, CrystalConfigurationResult, CrystalError, Freedom, HarmonicTrap,
    SolverOptions, DEFAULT_PLANARITY_THRESHOLD,
};
use crate::par::map_indexed;
use crate::trap_model::SecularFrequencies;

/// Eigenvalues below `-SOFT_MODE_FRACTION * max eigenvalue` are unstable.
pub const SOFT_MODE_FRACTION: f64 = 1e-6;
/// A mode belongs to the transverse band when its y-participation exceeds this.
pub const Y_BAND_CUTOFF: f64 = 0.999;
/// A mode is in-plane when its y-participation is below this.
pub const IN_PLANE_CUTOFF: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("crystal is not planar in x-z (size_y = {size_y:e} m)")]
    NotPlanar { size_y: f64 },
    #[error("y-modes do not decouple: {found} transverse modes for {n_ions} ions")]
    NotDecoupled { found: usize, n_ions: usize },
    #[error("the squeeze grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Crystal(#[from] CrystalError),
}

pub type Result<T, E = ModeError> = std::result::Result<T, E>;

/// Mass-weighted Hessian `(1/m) d2U/dr dr`, (rad/s)^2, ordered
/// `(x0, y0, z0, x1, ...)`.
///
/// Logs a warning when the residual force exceeds ten times the default
/// force tolerance, since the expansion is then not about an equilibrium.
pub fn hessian(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<DMatrix<f64>> {
    let units = ReducedUnits::of(trap);
    let u = units.to_reduced(positions);
    if let Some((i, j, d)) = reduced::closest_pair(&u) {
        if d * units.length <= crystal::COINCIDENCE_DISTANCE {
            return Err(CrystalError::CoincidentIons(i, j).into());
        }
    }
    let residual = equilibrium_residual(positions, trap)?;
    if residual > 10.0 * SolverOptions::default().relative_force_tolerance {
        log::warn!("not at equilibrium: residual force {residual:e} of the trap force scale");
    }
    Ok(reduced::hessian(&units.stiffness, &u) * units.omega_ref.powi(2))
}

/// Max-norm residual force as a fraction of the characteristic trap force.
pub fn equilibrium_residual(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<f64> {
    let g = crystal::potential_gradient(positions, trap)?;
    let gmax = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
    Ok(gmax / trap.characteristic_force())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    /// `sqrt(|eigenvalue|)`, rad/s, ascending by eigenvalue.
    pub frequencies: Vec<f64>,
    /// Hessian eigenvalues, (rad/s)^2.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, one per mode.
    pub eigenvectors: DMatrix<f64>,
    /// Fraction of each mode's squared norm along x, y and z.
    pub participation: Vec<[f64; 3]>,
    /// Eigenvalue below `-SOFT_MODE_FRACTION * max eigenvalue`.
    pub soft: Vec<bool>,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Axis carrying most of the mode's weight.
    pub fn dominant_axis(&self, mode: usize) -> Axis {
        let p = self.participation[mode];
        let i = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        Axis::from_index(i).expect("index below 3")
    }

    pub fn has_soft_modes(&self) -> bool {
        self.soft.iter().any(|s| *s)
    }

    /// Displacement of ion `ion` in mode `mode`.
    pub fn ion_vector(&self, mode: usize, ion: usize) -> Vector3<f64> {
        let c = self.eigenvectors.column(mode);
        Vector3::new(c[3 * ion], c[3 * ion + 1], c[3 * ion + 2])
    }

    pub fn n_ions(&self) -> usize {
        self.eigenvectors.nrows() / 3
    }

    /// Re-expresses the eigenvectors in another frame. `axes` holds the
    /// principal directions as columns, so a displacement `b` in the
    /// principal frame becomes `axes * b`. Participations follow the new frame.
    pub fn rotated(&self, axes: &Matrix3<f64>) -> ModeSpectrum {
        let mut out = self.clone();
        for k in 0..self.len() {
            let mut p = [0.0; 3];
            for i in 0..self.n_ions() {
                let b = axes * self.ion_vector(k, i);
                for a in 0..3 {
                    out.eigenvectors[(3 * i + a, k)] = b[a];
                    p[a] += b[a] * b[a];
                }
            }
            out.participation[k] = p;
        }
        out
    }

    /// Indices of modes with y-participation above [`Y_BAND_CUTOFF`].
    pub fn transverse_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.participation[k][1] > Y_BAND_CUTOFF)
            .collect()
    }
}

/// Eigen-decomposition of a symmetric mass-weighted Hessian.
pub fn spectrum_of(h: &DMatrix<f64>) -> ModeSpectrum {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Fix the sign: largest-magnitude component positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    let lmax = eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let soft = eigenvalues
        .iter()
        .map(|&l| l < -SOFT_MODE_FRACTION * lmax)
        .collect();
    let participation = (0..n)
        .map(|k| {
            let mut p = [0.0; 3];
            for (row, v) in vectors.column(k).iter().enumerate() {
                p[row % 3] += v * v;
            }
            p
        })
        .collect();
    ModeSpectrum {
        frequencies: eigenvalues.iter().map(|l| l.abs().sqrt()).collect(),
        eigenvalues,
        eigenvectors: vectors,
        participation,
        soft,
    }
}

pub fn mode_spectrum(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<ModeSpectrum> {
    Ok(spectrum_of(&hessian(positions, trap)?))
}

/// Modes of a single ion with the given secular frequencies, expressed in
/// the lab frame through the principal axes.
pub fn single_ion_spectrum(freqs: &SecularFrequencies) -> ModeSpectrum {
    let w = freqs.as_array();
    let h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, w.iter().map(|w| w * w)));
    spectrum_of(&h).rotated(&freqs.principal_axes)
}

fn check_planar(positions: &[Vector3<f64>], threshold: f64) -> Result<()> {
    let dim = classify_dimension(positions, threshold)?;
    if dim.spans(Axis::Y) {
        return Err(ModeError::NotPlanar {
            size_y: crystal::crystal_extent(positions).size_y,
        });
    }
    Ok(())
}

/// Hessian eigenvalues of the N transverse modes, descending, (rad/s)^2.
/// Negative values mark out-of-plane instability.
pub fn transverse_eigenvalues(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<Vec<f64>> {
    check_planar(positions, DEFAULT_PLANARITY_THRESHOLD)?;
    let spec = mode_spectrum(positions, trap)?;
    let idx = spec.transverse_indices();
    let n = positions.len();
    let in_plane = (0..spec.len())
        .filter(|&k| spec.participation[k][1] < IN_PLANE_CUTOFF)
        .count();
    if idx.len() != n || in_plane != 2 * n {
        return Err(ModeError::NotDecoupled {
            found: idx.len(),
            n_ions: n,
        });
    }
    let mut vals: Vec<f64> = idx.iter().map(|&k| spec.eigenvalues[k]).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Frequencies of the transverse band, descending, rad/s. The first entry
/// is the centre-of-mass mode at `omega_y`.
pub fn transverse_band(positions: &[Vector3<f64>], trap: &HarmonicTrap) -> Result<Vec<f64>> {
    Ok(transverse_eigenvalues(positions, trap)?
        .into_iter()
        .map(|l| l.abs().sqrt())
        .collect())
}

/// Smallest eigenvalue of the y-y block of the Hessian, (rad/s)^2. Exact for
/// a crystal lying in the x-z plane, where the y motion decouples.
pub(crate) fn min_y_block_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows() / 3;
    let idx: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
    let block = h.select_rows(&idx).select_columns(&idx);
    SymmetricEigen::new(block).eigenvalues.min()
}

/// In-plane squeeze: `omega_x` takes the grid values and `omega_z` follows
/// at `z_ratio * omega_x`; `omega_y` is taken from the template.
#[derive(Clone, Debug, PartialEq)]
pub struct SqueezeSpec {
    pub template: HarmonicTrap,
    /// omega_x grid, rad/s, strictly monotone.
    pub omega_x: Vec<f64>,
    pub z_ratio: f64,
    pub n_ions: usize,
    pub seed: u64,
    pub restarts: usize,
    pub options: SolverOptions,
}

impl SqueezeSpec {
    pub fn new(template: HarmonicTrap, omega_x: Vec<f64>, z_ratio: f64, n_ions: usize) -> Self {
        SqueezeSpec {
            template,
            omega_x,
            z_ratio,
            n_ions,
            seed: 0,
            restarts: crystal::DEFAULT_RESTARTS,
            options: SolverOptions::default(),
        }
    }

    pub fn trap_at(&self, omega_x: f64) -> Result<HarmonicTrap> {
        let mut omega = self.template.omega;
        omega[0] = omega_x;
        omega[2] = self.z_ratio * omega_x;
        Ok(HarmonicTrap::new(omega, self.template.species)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftModePoint {
    pub omega_x: f64,
    /// Smallest transverse eigenvalue of the planar crystal, (rad/s)^2.
    pub min_eigenvalue: Option<f64>,
    /// `sqrt(max(min_eigenvalue, 0))`, rad/s.
    pub min_frequency: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftModeScan {
    pub points: Vec<SoftModePoint>,
    /// First grid index at which the smallest transverse eigenvalue is
    /// negative, following a non-negative one.
    pub crossing_index: Option<usize>,
    /// Zero crossing of the eigenvalue, linearly interpolated, rad/s.
    pub transition_omega_x: Option<f64>,
}

/// Tracks the softest transverse mode of the planar crystal across a squeeze.
///
/// Each point relaxes the crystal with every ion held in the x-z plane, so
/// the planar configuration can be followed past its stability limit, where
/// its lowest y eigenvalue turns negative.
pub fn soft_mode_scan(spec: &SqueezeSpec) -> Result<SoftModeScan> {
    if spec.omega_x.is_empty() {
        return Err(ModeError::EmptyGrid);
    }
    crate::crystal::scan::check_monotone(&spec.omega_x)?;
    let inner = SolverOptions {
        execution: crate::par::Execution::Sequential,
        ..spec.options
    };
    let points = map_indexed(spec.omega_x.len(), spec.options.execution, |i| {
        let w = spec.omega_x[i];
        let eigen = spec.trap_at(w).and_then(|trap| {
            let eq = planar_equilibrium(&trap, spec.n_ions, spec.seed, spec.restarts, &inner)?;
            let units = ReducedUnits::of(&trap);
            let h = reduced::hessian(&units.stiffness, &units.to_reduced(&eq.positions))
                * units.omega_ref.powi(2);
            Ok(min_y_block_eigenvalue(&h))
        });
        match eigen {
            Ok(l) => SoftModePoint {
                omega_x: w,
                min_eigenvalue: Some(l),
                min_frequency: Some(l.max(0.0).sqrt()),
                error: None,
            },
            Err(e) => SoftModePoint {
                omega_x: w,
                min_eigenvalue: None,
                min_frequency: None,
                error: Some(e.to_string()),
            },
        }
    });

    let mut crossing_index = None;
    let mut transition_omega_x = None;
    for i in 1..points.len() {
        if let (Some(a), Some(b)) = (points[i - 1].min_eigenvalue, points[i].min_eigenvalue) {
            if a >= 0.0 && b < 0.0 {
                crossing_index = Some(i);
                let (wa, wb) = (points[i - 1].omega_x, points[i].omega_x);
                transition_omega_x = Some(wa + (wb - wa) * a / (a - b));
                break;
            }
        }
    }
    Ok(SoftModeScan {
        points,
        crossing_index,
        transition_omega_x,
    })
}

/// Lowest-energy equilibrium with every ion constrained to `y = 0`.
pub fn planar_equilibrium(
    trap: &HarmonicTrap,
    n_ions: usize,
    seed: u64,
    restarts: usize,
    options: &SolverOptions,
) -> Result<CrystalConfigurationResult> {
    Ok(crystal::solve_internal(
        trap,
        n_ions,
        seed,
        restarts,
        &[],
        Freedom::PlanarXZ,
        options,
    )?)
}
