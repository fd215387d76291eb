//! Raman sideband spectra, Rabi flopping signals, micromotion modulation
//! indices and principal-axis misalignment bounds.
//!
//! Spectra are computed in the time domain: each carrier or first-order
//! sideband transition is a detuned two-level system driven for the probe
//! duration, averaged over the thermal Fock distribution of its mode.
//! Detunings are `δ = ω_R − ω_0`, so blue sidebands sit at `+ω_m`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{HBAR, YB171_QUBIT_SPLITTING};
use crate::modes::ModeSpectrum;
use crate::par::{map_indexed, Execution};
use crate::trap_model::{rf_field_at, IonSpecies, TrapConfiguration};

/// Largest thermal tail probability a Fock truncation may drop.
pub const MAX_TAIL_MASS: f64 = 1e-6;
/// Tail mass targeted by [`ThermalState::new`].
pub const AUTO_TAIL_MASS: f64 = 1e-8;
/// `η sqrt(n̄ + 1)` above which first-order sidebands are a poor model.
pub const LAMB_DICKE_LIMIT: f64 = 0.3;
/// Measured micromotion sideband/carrier ratio range `β/2` for the
/// three-ion crystal, used by the comparison report.
pub const REFERENCE_BETA_HALF_RANGE: (f64, f64) = (0.021, 0.038);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectroscopyError {
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("invalid thermal state: {0}")]
    InvalidThermal(String),
    #[error("Fock cutoff {cutoff} drops {tail:e} of the thermal population (limit {MAX_TAIL_MASS:e})")]
    CutoffTooLow { cutoff: usize, tail: f64 },
    #[error("mode {mode} has frequency {frequency:e} rad/s; a positive frequency is required")]
    InvalidMode { mode: usize, frequency: f64 },
    #[error("probe gives {rates} carrier rates for {ions} ions")]
    IonCountMismatch { rates: usize, ions: usize },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("Rabi fit diverged after {iterations} iterations (rms residual {residual_rms:e})")]
    FitDiverged {
        residual_rms: f64,
        iterations: usize,
    },
}

pub type Result<T, E = SpectroscopyError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamanProbe {
    /// Net wavevector of the beam pair, rad/m.
    pub delta_k: Vector3<f64>,
    /// Carrier Rabi rate per ion, rad/s. A single entry applies to every ion.
    pub carrier_rabi: Vec<f64>,
    /// s
    pub probe_duration: f64,
    /// rad/s
    pub qubit_splitting: f64,
}

impl RamanProbe {
    pub fn new(delta_k: Vector3<f64>, carrier_rabi: Vec<f64>, probe_duration: f64) -> Result<Self> {
        let probe = RamanProbe {
            delta_k,
            carrier_rabi,
            probe_duration,
            qubit_splitting: YB171_QUBIT_SPLITTING,
        };
        probe.validate()?;
        Ok(probe)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpectroscopyError::InvalidProbe(m.to_string()));
        if !(self.delta_k.norm() > 0.0) || !self.delta_k.iter().all(|v| v.is_finite()) {
            return bad("delta_k must be finite and nonzero");
        }
        if !(self.probe_duration >= 0.0) || !self.probe_duration.is_finite() {
            return bad("probe duration must be finite and non-negative");
        }
        if self.carrier_rabi.is_empty() {
            return bad("at least one carrier Rabi rate is required");
        }
        if self.carrier_rabi.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("carrier Rabi rates must be finite and non-negative");
        }
        Ok(())
    }

    /// Carrier Rabi rate seen by `ion`.
    pub fn carrier_for(&self, ion: usize) -> f64 {
        if self.carrier_rabi.len() == 1 {
            self.carrier_rabi[0]
        } else {
            self.carrier_rabi[ion]
        }
    }

    fn check_ions(&self, ions: usize) -> Result<()> {
        let rates = self.carrier_rabi.len();
        if rates != 1 && rates != ions {
            return Err(SpectroscopyError::IonCountMismatch { rates, ions });
        }
        Ok(())
    }
}

/// Thermal occupation shared by every mode, truncated to `fock_cutoff`
/// levels (`n = 0 .. fock_cutoff - 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub nbar: f64,
    pub fock_cutoff: usize,
}

impl ThermalState {
    /// Picks the smallest cutoff above `10 n̄ + 20` whose dropped tail is
    /// below [`AUTO_TAIL_MASS`].
    pub fn new(nbar: f64) -> Result<Self> {
        check_nbar(nbar)?;
        let mut cutoff = min_cutoff(nbar);
        if nbar > 0.0 {
            let r = nbar / (nbar + 1.0);
            let needed = (AUTO_TAIL_MASS.ln() / r.ln()).ceil();
            cutoff = cutoff.max(needed as usize);
        }
        Ok(ThermalState {
            nbar,
            fock_cutoff: cutoff,
        })
    }

    pub fn with_cutoff(nbar: f64, fock_cutoff: usize) -> Result<Self> {
        check_nbar(nbar)?;
        if (fock_cutoff as f64) <= 10.0 * nbar + 20.0 {
            return Err(SpectroscopyError::InvalidThermal(format!(
                "cutoff {fock_cutoff} must exceed 10 nbar + 20 = {}",
                10.0 * nbar + 20.0
            )));
        }
        Ok(ThermalState { nbar, fock_cutoff })
    }

    /// Probability of level `n`.
    pub fn population(&self, n: usize) -> f64 {
        if self.nbar == 0.0 {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        let r = self.nbar / (self.nbar + 1.0);
        r.powi(n as i32) / (self.nbar + 1.0)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.fock_cutoff).map(|n| self.population(n)).collect()
    }

    /// Probability mass above the cutoff.
    pub fn tail_mass(&self) -> f64 {
        if self.nbar == 0.0 {
            return 0.0;
        }
        (self.nbar / (self.nbar + 1.0)).powi(self.fock_cutoff as i32)
    }
}

fn check_nbar(nbar: f64) -> Result<()> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(SpectroscopyError::InvalidThermal(format!(
            "nbar must be finite and non-negative, got {nbar}"
        )));
    }
    Ok(())
}

fn min_cutoff(nbar: f64) -> usize {
    (10.0 * nbar + 20.0).floor() as usize + 1
}

/// Lamb-Dicke parameter `(Δk · b_im) sqrt(ħ / 2 m ω_m)` of `ion` in `mode`.
pub fn lamb_dicke(
    delta_k: &Vector3<f64>,
    modes: &ModeSpectrum,
    mode: usize,
    ion: usize,
    species: &IonSpecies,
) -> Result<f64> {
    let w = modes.frequencies[mode];
    if !(w > 0.0) || modes.soft[mode] {
        return Err(SpectroscopyError::InvalidMode { mode, frequency: w });
    }
    Ok(delta_k.dot(&modes.ion_vector(mode, ion)) * (HBAR / (2.0 * species.mass * w)).sqrt())
}

/// Excitation of a two-level system driven at Rabi rate `rabi` and
/// detuning `detuning` for time `t`.
pub fn two_level_excitation(rabi: f64, detuning: f64, t: f64) -> f64 {
    let g2 = rabi * rabi + detuning * detuning;
    if g2 == 0.0 {
        return 0.0;
    }
    let s = (g2.sqrt() * t / 2.0).sin();
    rabi * rabi / g2 * s * s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "mode", rename_all = "lowercase")]
pub enum Process {
    Carrier,
    Red(usize),
    Blue(usize),
}

impl std::fmt::Display for Process {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Process::Carrier => write!(f, "carrier"),
            Process::Red(m) => write!(f, "red{m}"),
            Process::Blue(m) => write!(f, "blue{m}"),
        }
    }
}

/// Ion-averaged excitation from one transition alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComponent {
    pub process: Process,
    /// Resonant detuning, rad/s.
    pub center: f64,
    pub excitation: Vec<f64>,
}

impl SpectrumComponent {
    pub fn peak(&self) -> f64 {
        self.excitation.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    /// rad/s
    pub detunings: Vec<f64>,
    /// Ion-averaged probability of leaving the initial qubit state.
    pub excitation: Vec<f64>,
    pub components: Vec<SpectrumComponent>,
}

impl SpectrumCurve {
    pub fn component(&self, process: Process) -> Option<&SpectrumComponent> {
        self.components.iter().find(|c| c.process == process)
    }

    /// Detuning of the largest excitation within `[lo, hi]`.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.detunings
            .iter()
            .zip(&self.excitation)
            .filter(|(d, _)| **d >= lo && **d <= hi)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(d, p)| (*d, *p))
    }
}

struct Transition {
    process: Process,
    center: f64,
    /// Per ion: (rate, weight) pairs.
    per_ion: Vec<Vec<(f64, f64)>>,
}

pub fn simulate_spectrum(
    probe: &RamanProbe,
    modes: &ModeSpectrum,
    species: &IonSpecies,
    thermal: &ThermalState,
    detunings: &[f64],
) -> Result<SpectrumCurve> {
    simulate_spectrum_with(probe, modes, species, thermal, detunings, Execution::Parallel)
}

pub fn simulate_spectrum_with(
    probe: &RamanProbe,
    modes: &ModeSpectrum,
    species: &IonSpecies,
    thermal: &ThermalState,
    detunings: &[f64],
    exec: Execution,
) -> Result<SpectrumCurve> {
    probe.validate()?;
    let n_ions = modes.n_ions();
    probe.check_ions(n_ions)?;
    let tail = thermal.tail_mass();
    if tail > MAX_TAIL_MASS {
        return Err(SpectroscopyError::CutoffTooLow {
            cutoff: thermal.fock_cutoff,
            tail,
        });
    }
    let pops = thermal.populations();

    let mut transitions = vec![Transition {
        process: Process::Carrier,
        center: 0.0,
        per_ion: (0..n_ions)
            .map(|i| vec![(probe.carrier_for(i), 1.0)])
            .collect(),
    }];
    let mut worst = 0.0_f64;
    for m in 0..modes.len() {
        let etas = (0..n_ions)
            .map(|i| lamb_dicke(&probe.delta_k, modes, m, i, species))
            .collect::<Result<Vec<_>>>()?;
        worst = etas.iter().fold(worst, |a, e| a.max(e.abs()));
        let ladder = |shift: f64| -> Vec<Vec<(f64, f64)>> {
            etas.iter()
                .enumerate()
                .map(|(i, eta)| {
                    if *eta == 0.0 {
                        return Vec::new();
                    }
                    let base = probe.carrier_for(i) * eta.abs();
                    pops.iter()
                        .enumerate()
                        .map(|(n, p)| (base * (n as f64 + shift).sqrt(), *p))
                        .collect()
                })
                .collect()
        };
        let w = modes.frequencies[m];
        transitions.push(Transition {
            process: Process::Red(m),
            center: -w,
            per_ion: ladder(0.0),
        });
        transitions.push(Transition {
            process: Process::Blue(m),
            center: w,
            per_ion: ladder(1.0),
        });
    }
    if worst * (thermal.nbar + 1.0).sqrt() > LAMB_DICKE_LIMIT {
        log::warn!(
            "eta sqrt(nbar + 1) = {:.3} exceeds {LAMB_DICKE_LIMIT}; first-order sidebands are inaccurate",
            worst * (thermal.nbar + 1.0).sqrt()
        );
    }

    let t = probe.probe_duration;
    let inv_ions = 1.0 / n_ions as f64;
    let columns = map_indexed(detunings.len(), exec, |j| {
        let d = detunings[j];
        let mut comp = vec![0.0; transitions.len()];
        let mut total = 0.0;
        for i in 0..n_ions {
            let mut dark = 1.0;
            for (k, tr) in transitions.iter().enumerate() {
                let p: f64 = tr.per_ion[i]
                    .iter()
                    .map(|(rate, w)| w * two_level_excitation(*rate, d - tr.center, t))
                    .sum();
                let p = p.clamp(0.0, 1.0);
                comp[k] += p * inv_ions;
                dark *= 1.0 - p;
            }
            total += (1.0 - dark) * inv_ions;
        }
        (total.clamp(0.0, 1.0), comp)
    });

    let mut components: Vec<SpectrumComponent> = transitions
        .iter()
        .map(|tr| SpectrumComponent {
            process: tr.process,
            center: tr.center,
            excitation: Vec::with_capacity(detunings.len()),
        })
        .collect();
    let mut excitation = Vec::with_capacity(detunings.len());
    for (total, comp) in columns {
        excitation.push(total);
        for (c, p) in components.iter_mut().zip(comp) {
            c.excitation.push(p);
        }
    }
    Ok(SpectrumCurve {
        detunings: detunings.to_vec(),
        excitation,
        components,
    })
}

/// `S(t) = Σ sin²(Ω_i t / 2)`.
pub fn rabi_signal(rates: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    rabi_signal_weighted(rates, &vec![1.0; rates.len()], times)
}

/// `S(t) = Σ w_i sin²(Ω_i t / 2)`, for unequal detection weights.
pub fn rabi_signal_weighted(rates: &[f64], weights: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(SpectroscopyError::InvalidSignal(
            "Rabi rates must be finite and non-negative".into(),
        ));
    }
    if weights.len() != rates.len() {
        return Err(SpectroscopyError::InvalidSignal(format!(
            "{} weights for {} rates",
            weights.len(),
            rates.len()
        )));
    }
    Ok(times
        .iter()
        .map(|t| {
            rates
                .iter()
                .zip(weights)
                .map(|(r, w)| {
                    let s = (r * t / 2.0).sin();
                    w * s * s
                })
                .sum()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// rad/s, ascending.
    pub rates: Vec<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl RabiFit {
    /// `π / Ω` for each rate, s.
    pub fn pi_times(&self) -> Vec<f64> {
        self.rates.iter().map(|r| std::f64::consts::PI / r).collect()
    }
}

const LM_MAX_ITERATIONS: usize = 2000;

/// Least-squares fit of equal-amplitude Rabi components to `signal`.
///
/// Without `initial` guesses, the strongest peaks of the signal's discrete
/// spectrum are used.
pub fn fit_rabi(
    times: &[f64],
    signal: &[f64],
    n_components: usize,
    initial: Option<&[f64]>,
) -> Result<RabiFit> {
    if n_components == 0 {
        return Err(SpectroscopyError::InvalidSignal("n_components must be at least 1".into()));
    }
    if times.len() != signal.len() {
        return Err(SpectroscopyError::InvalidSignal(format!(
            "{} times for {} samples",
            times.len(),
            signal.len()
        )));
    }
    if signal.len() < 4 * n_components {
        return Err(SpectroscopyError::InvalidSignal(format!(
            "{} samples are too few for {n_components} components",
            signal.len()
        )));
    }
    if times.iter().chain(signal).any(|v| !v.is_finite()) {
        return Err(SpectroscopyError::InvalidSignal("non-finite sample".into()));
    }
    let guess = match initial {
        Some(g) if g.len() != n_components => {
            return Err(SpectroscopyError::InvalidSignal(format!(
                "{} initial guesses for {n_components} components",
                g.len()
            )))
        }
        Some(g) => g.to_vec(),
        None => spectral_guess(times, signal, n_components)?,
    };
    levenberg_marquardt(times, signal, guess)
}

fn residuals(times: &[f64], signal: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        times.len(),
        times.iter().zip(signal).map(|(t, s)| {
            p.iter()
                .map(|r| {
                    let x = (r * t / 2.0).sin();
                    x * x
                })
                .sum::<f64>()
                - s
        }),
    )
}

fn levenberg_marquardt(times: &[f64], signal: &[f64], mut p: Vec<f64>) -> Result<RabiFit> {
    let n = p.len();
    let m = times.len();
    let mut r = residuals(times, signal, &p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let scale = signal.iter().fold(0.0_f64, |a, s| a.max(s.abs())).max(1.0);
    while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut jac = DMatrix::zeros(m, n);
        for (row, t) in times.iter().enumerate() {
            for (col, rate) in p.iter().enumerate() {
                jac[(row, col)] = (rate * t).sin() * t / 2.0;
            }
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-15 * scale * scale * m as f64 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut improved = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(times, signal, &trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                let rel = step
                    .iter()
                    .zip(&p)
                    .fold(0.0_f64, |acc, (s, v)| acc.max(s.abs() / v.abs().max(f64::MIN_POSITIVE)));
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = true;
            break;
        }
    }
    let residual_rms = (cost / m as f64).sqrt();
    if !converged || p.iter().any(|v| !v.is_finite()) || !residual_rms.is_finite() {
        return Err(SpectroscopyError::FitDiverged {
            residual_rms,
            iterations,
        });
    }
    let mut rates: Vec<f64> = p.iter().map(|v| v.abs()).collect();
    rates.sort_by(f64::total_cmp);
    Ok(RabiFit {
        rates,
        residual_rms,
        iterations,
    })
}

/// Initial rates from the strongest local maxima of the signal's
/// periodogram.
fn spectral_guess(times: &[f64], signal: &[f64], n_components: usize) -> Result<Vec<f64>> {
    let (t0, t1) = times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(*t), b.max(*t)));
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(SpectroscopyError::InvalidSignal("time grid has zero span".into()));
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let nyquist = std::f64::consts::PI * (times.len() - 1) as f64 / span;
    let step = std::f64::consts::TAU / (8.0 * span);
    let count = (nyquist / step).ceil() as usize;
    let power: Vec<f64> = (0..=count)
        .map(|k| {
            let w = k as f64 * step;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, s) in times.iter().zip(signal) {
                let (sin, cos) = (w * t).sin_cos();
                re += (s - mean) * cos;
                im += (s - mean) * sin;
            }
            re * re + im * im
        })
        .collect();
    let mut peaks: Vec<usize> = (1..power.len().saturating_sub(1))
        .filter(|&k| power[k] >= power[k - 1] && power[k] > power[k + 1])
        .collect();
    peaks.sort_by(|a, b| power[*b].total_cmp(&power[*a]).then(a.cmp(b)));
    let Some(&top) = peaks.first() else {
        return Err(SpectroscopyError::InvalidSignal("signal has no oscillating component".into()));
    };
    let mut guess: Vec<f64> = peaks.iter().take(n_components).map(|&k| k as f64 * step).collect();
    let mut k = 1.0;
    while guess.len() < n_components {
        guess.push(top as f64 * step * (1.0 + 0.05 * k));
        k += 1.0;
    }
    Ok(guess)
}

/// Bessel function of the first kind `J_n(x)` by its power series.
/// Accurate for `|x|` up to about 20.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200 {
        let k = k as f64;
        term *= -half * half / (k * (k + n as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// Micromotion amplitude vector, m.
    pub amplitude: Vector3<f64>,
    /// `Δk · u`
    pub beta: f64,
    /// Predicted micromotion sideband to carrier Rabi ratio `J1(β)/J0(β)`.
    pub sideband_ratio: f64,
}

/// Micromotion modulation index at `position`.
pub fn modulation_index(
    config: &TrapConfiguration,
    position: &Vector3<f64>,
    delta_k: &Vector3<f64>,
) -> Modulation {
    let omega = config.rf_drive.omega_rf;
    let u = rf_field_at(config, position) * config.species.charge / (config.species.mass * omega * omega);
    let beta = delta_k.dot(&u);
    let b = beta.abs();
    Modulation {
        amplitude: u,
        beta,
        sideband_ratio: bessel_j(1, b) / bessel_j(0, b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicromotionReport {
    pub per_ion: Vec<Modulation>,
    /// Largest and smallest `|β|/2` over the ions.
    pub max_beta_half: f64,
    pub min_beta_half: f64,
    pub reference_beta_half: (f64, f64),
}

impl MicromotionReport {
    /// True when every ion's `|β|/2` lies in the reference range.
    pub fn within_reference(&self) -> bool {
        let (lo, hi) = self.reference_beta_half;
        self.min_beta_half >= lo && self.max_beta_half <= hi
    }
}

pub fn micromotion_report(
    config: &TrapConfiguration,
    positions: &[Vector3<f64>],
    delta_k: &Vector3<f64>,
) -> MicromotionReport {
    let per_ion: Vec<Modulation> =
        positions.iter().map(|r| modulation_index(config, r, delta_k)).collect();
    let halves = per_ion.iter().map(|m| m.beta.abs() / 2.0);
    let max_beta_half = halves.clone().fold(0.0, f64::max);
    let min_beta_half = halves.fold(f64::INFINITY, f64::min);
    MicromotionReport {
        per_ion,
        max_beta_half,
        min_beta_half: if min_beta_half.is_finite() { min_beta_half } else { 0.0 },
        reference_beta_half: REFERENCE_BETA_HALF_RANGE,
    }
}

/// Upper bound on the angle between the principal axes and the lab y-z
/// axes, degrees, from the ratio of residual z-sideband to y-sideband
/// excitation. Uses the projection model `η_z²/η_y² = tan²θ · ω_y/ω_z`,
/// so `θ ≤ asin(sqrt(ratio · ω_z/ω_y))`.
pub fn axis_misalignment_bound(ratio: f64, omega_y: f64, omega_z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SpectroscopyError::InvalidSignal(format!(
            "peak ratio must lie in [0, 1], got {ratio}"
        )));
    }
    if !(omega_y > 0.0 && omega_z > 0.0) {
        return Err(SpectroscopyError::InvalidSignal("frequencies must be positive".into()));
    }
    Ok((ratio * omega_z / omega_y).min(1.0).sqrt().asin().to_degrees())
}
