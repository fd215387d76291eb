//! Structural scans: equilibria along a one-parameter family of traps.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classify_dimension, solve_internal, CrystalConfigurationResult, CrystalError, CrystalExtent,
    Dimensionality, Freedom, HarmonicTrap, Result, SolverOptions, DEFAULT_PLANARITY_THRESHOLD,
    DEFAULT_RESTARTS,
};
use crate::axis::Axis;
use crate::par::map_indexed;
use crate::trap_model::{secular_frequencies, TrapConfiguration};

/// What the scan varies.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepParameter {
    /// Sets `omega(axis)` to the grid value (rad/s). If `follow` is given,
    /// that axis is held at `ratio` times the swept frequency.
    Omega {
        axis: Axis,
        follow: Option<(Axis, f64)>,
    },
    /// Sets the RF amplitude (V) of the configuration and uses its secular
    /// frequencies.
    RfVoltage(Box<TrapConfiguration>),
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Omega { axis: Axis::X, .. } => "omega_x",
            SweepParameter::Omega { axis: Axis::Y, .. } => "omega_y",
            SweepParameter::Omega { axis: Axis::Z, .. } => "omega_z",
            SweepParameter::RfVoltage(_) => "v_rf",
        }
    }

    /// Harmonic trap at grid value `value`, starting from `template`.
    pub fn trap_at(&self, template: &HarmonicTrap, value: f64) -> Result<HarmonicTrap> {
        match self {
            SweepParameter::Omega { axis, follow } => {
                let mut trap = template.with_omega(*axis, value)?;
                if let Some((other, ratio)) = follow {
                    trap = trap.with_omega(*other, ratio * value)?;
                }
                Ok(trap)
            }
            SweepParameter::RfVoltage(config) => {
                let cfg = config.as_ref().clone().with_rf_voltage(value)?;
                HarmonicTrap::from_secular(&secular_frequencies(&cfg)?, cfg.species)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSpec {
    /// Frequencies not set by the sweep come from here.
    pub template: HarmonicTrap,
    pub parameter: SweepParameter,
    /// Strictly monotone grid.
    pub values: Vec<f64>,
    pub n_ions: usize,
    pub seed: u64,
    /// Fresh random starts per grid point.
    pub restarts: usize,
    /// Seed each point with the previous equilibrium. When false, grid points
    /// are solved independently (and in parallel).
    pub warm_start: bool,
    /// Also run the sweep in reverse (warm start only).
    pub bidirectional: bool,
    pub threshold: f64,
    /// A change of any extent larger than this fraction of the larger value
    /// between neighbouring points is flagged as a jump.
    pub jump_fraction: f64,
    pub options: SolverOptions,
}

impl ScanSpec {
    pub fn new(template: HarmonicTrap, parameter: SweepParameter, values: Vec<f64>, n_ions: usize) -> Self {
        ScanSpec {
            template,
            parameter,
            values,
            n_ions,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            warm_start: true,
            bidirectional: false,
            threshold: DEFAULT_PLANARITY_THRESHOLD,
            jump_fraction: 0.25,
            options: SolverOptions::default(),
        }
    }

    fn point_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub parameter: f64,
    /// Trap frequencies at this point, rad/s.
    pub omega: [f64; 3],
    pub extent: Option<CrystalExtent>,
    pub energy: Option<f64>,
    pub converged: bool,
    pub dimensionality: Option<Dimensionality>,
    pub positions: Option<Vec<Vector3<f64>>>,
    /// Failure message when no geometry is available or it did not converge.
    pub error: Option<String>,
}

impl ScanRecord {
    fn from_outcome(
        value: f64,
        omega: [f64; 3],
        outcome: Result<CrystalConfigurationResult>,
        threshold: f64,
    ) -> Self {
        let (result, error) = match outcome {
            Ok(r) => (Some(r), None),
            Err(CrystalError::NotConverged(r)) => {
                let msg = CrystalError::NotConverged(r.clone()).to_string();
                (Some(*r), Some(msg))
            }
            Err(e) => (None, Some(e.to_string())),
        };
        match result {
            Some(r) => ScanRecord {
                parameter: value,
                omega,
                extent: Some(r.extent()),
                energy: Some(r.energy),
                converged: r.converged,
                dimensionality: classify_dimension(&r.positions, threshold).ok(),
                positions: Some(r.positions),
                error,
            },
            None => ScanRecord {
                parameter: value,
                omega,
                extent: None,
                energy: None,
                converged: false,
                dimensionality: None,
                positions: None,
                error,
            },
        }
    }

    pub fn size_y(&self) -> Option<f64> {
        self.extent.map(|e| e.size_y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Dimensionality,
    ExtentJump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    Forward,
    Backward,
}

/// Structural change between grid points `index` and `index + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub index: usize,
    pub from_value: f64,
    pub to_value: f64,
    pub kind: TransitionKind,
    pub direction: SweepDirection,
    pub from: Option<Dimensionality>,
    pub to: Option<Dimensionality>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureScanResult {
    pub parameter_name: String,
    /// One record per grid value, in grid order.
    pub records: Vec<ScanRecord>,
    /// Reverse sweep, also in grid order, when requested.
    pub reverse_records: Option<Vec<ScanRecord>>,
    pub transitions: Vec<Transition>,
    /// True when the two sweep directions disagree on transition points.
    pub hysteresis: bool,
}

impl StructureScanResult {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.parameter).collect()
    }

    /// First grid index (forward sweep) at which the crystal leaves the
    /// x-z plane after having been in it.
    pub fn planar_departure(&self) -> Option<usize> {
        planar_departure(&self.records)
    }
}

pub(crate) fn planar_departure(records: &[ScanRecord]) -> Option<usize> {
    let planar: Vec<Option<bool>> = records
        .iter()
        .map(|r| r.dimensionality.map(|d| !d.spans(Axis::Y)))
        .collect();
    let first_planar = planar.iter().position(|p| *p == Some(true))?;
    (first_planar + 1..records.len()).find(|&i| planar[i] == Some(false))
}

/// Checks that `values` is strictly increasing or strictly decreasing.
pub(crate) fn check_monotone(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CrystalError::NonMonotoneGrid);
    }
    let up = values.windows(2).all(|w| w[1] > w[0]);
    let down = values.windows(2).all(|w| w[1] < w[0]);
    if values.is_empty() || up || down {
        Ok(())
    } else {
        Err(CrystalError::NonMonotoneGrid)
    }
}

fn jitter(positions: &[Vector3<f64>], scale: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    positions
        .iter()
        .map(|r| {
            r + Vector3::new(
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
            )
        })
        .collect()
}

fn solve_point(
    spec: &ScanSpec,
    index: usize,
    trap: &HarmonicTrap,
    warm: Option<&[Vector3<f64>]>,
) -> Result<CrystalConfigurationResult> {
    let warm_starts: Vec<Vec<Vector3<f64>>> = warm
        .map(|w| {
            let scale = 1e-3 * trap.length_scale(Axis::X);
            vec![jitter(w, scale, spec.point_seed(index))]
        })
        .unwrap_or_default();
    solve_internal(
        trap,
        spec.n_ions,
        spec.point_seed(index),
        spec.restarts,
        &warm_starts,
        Freedom::Full,
        &spec.options,
    )
}

fn sweep(spec: &ScanSpec, order: &[usize]) -> Vec<ScanRecord> {
    let mut out: Vec<Option<ScanRecord>> = vec![None; spec.values.len()];
    let mut previous: Option<Vec<Vector3<f64>>> = None;
    for &i in order {
        let value = spec.values[i];
        let record = match spec.parameter.trap_at(&spec.template, value) {
            Ok(trap) => {
                let outcome = solve_point(spec, i, &trap, previous.as_deref());
                let rec = ScanRecord::from_outcome(value, trap.omega, outcome, spec.threshold);
                previous = rec.positions.clone();
                rec
            }
            Err(e) => ScanRecord::from_outcome(value, [f64::NAN; 3], Err(e), spec.threshold),
        };
        out[i] = Some(record);
    }
    out.into_iter().map(|r| r.expect("every grid point visited")).collect()
}

fn cold_sweep(spec: &ScanSpec) -> Vec<ScanRecord> {
    map_indexed(spec.values.len(), spec.options.execution, |i| {
        let value = spec.values[i];
        match spec.parameter.trap_at(&spec.template, value) {
            Ok(trap) => {
                let mut opts = spec.options;
                // Grid points already run in parallel.
                opts.execution = crate::par::Execution::Sequential;
                let outcome = solve_internal(
                    &trap,
                    spec.n_ions,
                    spec.point_seed(i),
                    spec.restarts,
                    &[],
                    Freedom::Full,
                    &opts,
                );
                ScanRecord::from_outcome(value, trap.omega, outcome, spec.threshold)
            }
            Err(e) => ScanRecord::from_outcome(value, [f64::NAN; 3], Err(e), spec.threshold),
        }
    })
}

fn detect_transitions(
    records: &[ScanRecord],
    jump_fraction: f64,
    threshold: f64,
    direction: SweepDirection,
) -> Vec<Transition> {
    let mut out = Vec::new();
    for (i, w) in records.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let kind = if a.dimensionality != b.dimensionality {
            Some(TransitionKind::Dimensionality)
        } else {
            match (a.extent, b.extent) {
                (Some(ea), Some(eb)) => {
                    let jump = ea.as_array().iter().zip(eb.as_array()).any(|(p, q)| {
                        let d = (p - q).abs();
                        d > threshold && d > jump_fraction * p.max(q)
                    });
                    jump.then_some(TransitionKind::ExtentJump)
                }
                _ => None,
            }
        };
        if let Some(kind) = kind {
            out.push(Transition {
                index: i,
                from_value: a.parameter,
                to_value: b.parameter,
                kind,
                direction,
                from: a.dimensionality,
                to: b.dimensionality,
            });
        }
    }
    out
}

/// Solves the equilibrium at every grid value and flags structural changes.
///
/// Per-point failures are recorded in [`ScanRecord::error`] and do not abort
/// the scan.
pub fn scan_structure(spec: &ScanSpec) -> Result<StructureScanResult> {
    check_monotone(&spec.values)?;
    if spec.n_ions == 0 {
        return Err(CrystalError::NoIons);
    }
    if spec.restarts == 0 {
        return Err(CrystalError::NoRestarts);
    }
    if !(spec.threshold > 0.0) {
        return Err(CrystalError::InvalidThreshold);
    }
    let n = spec.values.len();
    let forward_order: Vec<usize> = (0..n).collect();

    let records = if spec.warm_start {
        sweep(spec, &forward_order)
    } else {
        cold_sweep(spec)
    };
    let mut transitions =
        detect_transitions(&records, spec.jump_fraction, spec.threshold, SweepDirection::Forward);

    let mut reverse_records = None;
    let mut hysteresis = false;
    if spec.bidirectional && spec.warm_start {
        let backward_order: Vec<usize> = (0..n).rev().collect();
        let reverse = sweep(spec, &backward_order);
        let back = detect_transitions(
            &reverse,
            spec.jump_fraction,
            spec.threshold,
            SweepDirection::Backward,
        );
        let key = |t: &Transition| (t.index, t.kind);
        let fwd: Vec<_> = transitions.iter().map(key).collect();
        let bwd: Vec<_> = back.iter().map(key).collect();
        hysteresis = fwd != bwd;
        transitions.extend(back);
        reverse_records = Some(reverse);
    }

    Ok(StructureScanResult {
        parameter_name: spec.parameter.name().to_string(),
        records,
        reverse_records,
        transitions,
        hysteresis,
    })
}
