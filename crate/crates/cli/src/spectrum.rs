use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ioncrystal::constants::{angular_to_mhz, mhz_to_angular};
use ioncrystal::crystal::DEFAULT_RESTARTS;
use ioncrystal::modes::mode_spectrum;
use ioncrystal::spectroscopy::{
    axis_misalignment_bound, fit_rabi, lamb_dicke, rabi_signal_weighted, simulate_spectrum, Process,
    RamanProbe, SpectrumCurve, ThermalState, MAX_TAIL_MASS,
};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::crystal::crystal_geometry;
use crate::freqs::{parse_grid, Grid};
use crate::output::{invalid, read_input, Run};
use crate::source::SourceArgs;
use crate::Status;

/// Excitation a sideband component must reach to count as a peak.
const PEAK_THRESHOLD: f64 = 1e-3;

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Geometry file written by `equilibrium`; otherwise the crystal is solved.
    #[arg(long, conflicts_with_all = ["freqs", "trap", "set", "v_rf", "ions"])]
    pub geometry: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of ions when solving.
    #[arg(long, short = 'n', default_value_t = 1)]
    pub ions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Net Raman wavevector KX,KY,KZ in rad/µm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub delta_k: Vec<f64>,
    /// Carrier Rabi frequency in kHz (Ω = 2π·f): one value, or one per ion.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rabi_khz: Vec<f64>,
    /// Probe duration, µs.
    #[arg(long)]
    pub duration_us: f64,
    /// Mean phonon number of every mode.
    #[arg(long, default_value_t = 0.0)]
    pub nbar: f64,
    /// Fock levels kept per mode; chosen automatically when omitted.
    #[arg(long)]
    pub fock_cutoff: Option<usize>,
    /// Detuning grid START:STOP:COUNT in MHz.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    pub detuning: Grid,
    /// Also write the per-transition curves.
    #[arg(long)]
    pub components: bool,
    /// Measured spectrum (detuning_MHz, excitation) to compare peak positions against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Half-width of the peak search window around each sideband, kHz.
    #[arg(long, default_value_t = 20.0)]
    pub peak_window_khz: f64,
}

#[derive(Serialize)]
struct SpectrumRow {
    detuning_mhz: f64,
    excitation: f64,
}

#[derive(Serialize)]
struct ComponentRow {
    detuning_mhz: f64,
    process: String,
    excitation: f64,
}

#[derive(Serialize)]
struct ModeInfo {
    index: usize,
    frequency_mhz: f64,
    /// Lamb-Dicke parameter per ion.
    lamb_dicke: Vec<f64>,
}

#[derive(Serialize)]
struct PeakResidual {
    process: String,
    center_mhz: f64,
    simulated_mhz: f64,
    measured_mhz: Option<f64>,
    residual_khz: Option<f64>,
}

#[derive(Deserialize)]
struct MeasuredRow {
    #[serde(rename = "detuning_MHz")]
    detuning: f64,
    excitation: f64,
}

fn argmax_in(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Option<f64> {
    x.iter()
        .zip(y)
        .filter(|(d, _)| **d >= lo && **d <= hi)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(d, _)| *d)
}

fn peak_residuals(curve: &SpectrumCurve, measured: Option<&[MeasuredRow]>, window: f64) -> Vec<PeakResidual> {
    let (lo, hi) = (curve.detunings[0], *curve.detunings.last().expect("non-empty grid"));
    curve
        .components
        .iter()
        .filter(|c| c.process != Process::Carrier && c.center >= lo && c.center <= hi)
        .filter(|c| c.peak() > PEAK_THRESHOLD)
        .map(|c| {
            let (a, b) = (c.center - window, c.center + window);
            let sim = argmax_in(&curve.detunings, &curve.excitation, a, b).unwrap_or(c.center);
            let meas = measured.and_then(|m| {
                let x: Vec<f64> = m.iter().map(|r| mhz_to_angular(r.detuning)).collect();
                let y: Vec<f64> = m.iter().map(|r| r.excitation).collect();
                argmax_in(&x, &y, a, b)
            });
            PeakResidual {
                process: c.process.to_string(),
                center_mhz: angular_to_mhz(c.center),
                simulated_mhz: angular_to_mhz(sim),
                measured_mhz: meas.map(angular_to_mhz),
                residual_khz: meas.map(|m| angular_to_mhz(m - sim) * 1e3),
            }
        })
        .collect()
}

pub fn run_spectrum(args: &SpectrumArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("spectrum");
    if args.delta_k.len() != 3 {
        return Err(invalid("--delta-k needs three components"));
    }
    let delta_k = Vector3::new(args.delta_k[0], args.delta_k[1], args.delta_k[2]) * 1e6;
    let rates: Vec<f64> = args.rabi_khz.iter().map(|f| mhz_to_angular(f * 1e-3)).collect();
    let probe = RamanProbe::new(delta_k, rates, args.duration_us * 1e-6).map_err(invalid)?;
    let thermal = match args.fock_cutoff {
        Some(c) => ThermalState::with_cutoff(args.nbar, c),
        None => ThermalState::new(args.nbar),
    }
    .map_err(invalid)?;
    if thermal.tail_mass() > MAX_TAIL_MASS {
        return Err(invalid(format!(
            "Fock cutoff {} drops {:e} of the thermal population",
            thermal.fock_cutoff,
            thermal.tail_mass()
        )));
    }
    if !(args.peak_window_khz > 0.0) {
        return Err(invalid("--peak-window-khz must be positive"));
    }
    let measured: Option<Vec<MeasuredRow>> = match &args.compare {
        Some(path) => {
            let text = read_input(&mut run, path)?;
            let rows = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes())
                .deserialize()
                .collect::<Result<Vec<MeasuredRow>, _>>()
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            Some(rows)
        }
        None => None,
    };

    let g = crystal_geometry(
        &mut run,
        args.geometry.as_deref(),
        &args.source,
        Some(args.ions),
        args.seed,
        args.restarts,
    )?;
    let source = g.source()?;
    let modes = mode_spectrum(&g.principal_positions(), &source.trap)
        .map_err(invalid)?
        .rotated(&source.axes);
    let species = source.trap.species;
    let detunings: Vec<f64> = args.detuning.values().into_iter().map(mhz_to_angular).collect();
    let curve = simulate_spectrum(&probe, &modes, &species, &thermal, &detunings).map_err(invalid)?;

    let mode_info = (0..modes.len())
        .map(|m| {
            Ok(ModeInfo {
                index: m,
                frequency_mhz: angular_to_mhz(modes.frequencies[m]),
                lamb_dicke: (0..modes.n_ions())
                    .map(|i| lamb_dicke(&delta_k, &modes, m, i, &species))
                    .collect::<Result<_, _>>()
                    .map_err(invalid)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let peaks = peak_residuals(&curve, measured.as_deref(), mhz_to_angular(args.peak_window_khz * 1e-3));
    for p in &peaks {
        match p.residual_khz {
            Some(r) => println!("{}: simulated {:.6} MHz, residual {r:.3} kHz", p.process, p.simulated_mhz),
            None => println!("{}: simulated {:.6} MHz", p.process, p.simulated_mhz),
        }
    }

    run.seed = Some(g.seed);
    run.parameters = serde_json::json!({
        "geometry": args.geometry,
        "source": args.source.describe(),
        "ions": args.ions,
        "delta_k_rad_per_um": args.delta_k,
        "rabi_khz": args.rabi_khz,
        "duration_us": args.duration_us,
        "nbar": thermal.nbar,
        "fock_cutoff": thermal.fock_cutoff,
        "detuning_mhz": [args.detuning.start, args.detuning.stop, args.detuning.count],
    });
    run.tolerances.insert("thermal_tail_mass".into(), thermal.tail_mass());
    run.converged = g.converged;
    run.csv(
        "spectrum.csv",
        curve.detunings.iter().zip(&curve.excitation).map(|(d, p)| SpectrumRow {
            detuning_mhz: angular_to_mhz(*d),
            excitation: *p,
        }),
    )?;
    if args.components {
        let rows = curve.components.iter().flat_map(|c| {
            curve.detunings.iter().zip(&c.excitation).map(move |(d, p)| ComponentRow {
                detuning_mhz: angular_to_mhz(*d),
                process: c.process.to_string(),
                excitation: *p,
            })
        });
        run.csv("spectrum_components.csv", rows)?;
    }
    run.json(
        "spectrum.json",
        &serde_json::json!({
            "modes": mode_info,
            "peaks": peaks,
            "component_peaks": curve.components.iter().map(|c| (c.process.to_string(), c.peak())).collect::<Vec<_>>(),
        }),
    )?;
    if args.geometry.is_none() {
        run.json("geometry.json", &g)?;
    }
    run.commit(out)?;
    Ok(if g.converged { Status::Ok } else { Status::NotConverged })
}

#[derive(Args, Debug)]
pub struct RabiArgs {
    /// Synthesize a signal from these π-times (µs).
    #[arg(long, value_delimiter = ',', conflicts_with = "fit", required_unless_present = "fit")]
    pub pi_times_us: Vec<f64>,
    /// Detection weight per ion (defaults to 1).
    #[arg(long, value_delimiter = ',', requires = "pi_times_us")]
    pub weights: Vec<f64>,
    /// Time grid START:STOP:COUNT in µs, for synthesis.
    #[arg(long, value_parser = parse_grid, requires = "pi_times_us")]
    pub times: Option<Grid>,
    /// Fit a measured signal (columns time_us, signal).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Components to fit.
    #[arg(long, default_value_t = 1, requires = "fit")]
    pub components: usize,
    /// Initial π-time guesses (µs), one per component.
    #[arg(long, value_delimiter = ',', requires = "fit")]
    pub guess_pi_us: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RabiRow {
    time_us: f64,
    signal: f64,
}

pub fn run_rabi(args: &RabiArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("rabi");
    if let Some(path) = &args.fit {
        let text = read_input(&mut run, path)?;
        let rows = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<Vec<RabiRow>, _>>()
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let times: Vec<f64> = rows.iter().map(|r| r.time_us * 1e-6).collect();
        let signal: Vec<f64> = rows.iter().map(|r| r.signal).collect();
        if args.guess_pi_us.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("π-time guesses must be positive"));
        }
        let guess: Vec<f64> = args
            .guess_pi_us
            .iter()
            .map(|t| std::f64::consts::PI / (t * 1e-6))
            .collect();
        let initial = (!guess.is_empty()).then_some(guess.as_slice());
        let fit = match fit_rabi(&times, &signal, args.components, initial) {
            Ok(f) => f,
            Err(e @ ioncrystal::spectroscopy::SpectroscopyError::FitDiverged { .. }) => {
                run.converged = false;
                run.json("rabi_fit.json", &serde_json::json!({ "converged": false, "error": e.to_string() }))?;
                run.commit(out)?;
                return Ok(Status::NotConverged);
            }
            Err(e) => return Err(invalid(e)),
        };
        let pi_us: Vec<f64> = fit.pi_times().iter().map(|t| t * 1e6).collect();
        println!("pi times (us): {pi_us:?}, rms residual {:.3e}", fit.residual_rms);
        run.parameters = serde_json::json!({ "components": args.components, "guess_pi_us": args.guess_pi_us });
        run.json(
            "rabi_fit.json",
            &serde_json::json!({
                "converged": true,
                "rabi_rates_rad_s": fit.rates,
                "pi_times_us": pi_us,
                "residual_rms": fit.residual_rms,
                "iterations": fit.iterations,
            }),
        )?;
    } else {
        if args.pi_times_us.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("π-times must be positive"));
        }
        let grid = args.times.clone().ok_or_else(|| invalid("--times is required for synthesis"))?;
        let rates: Vec<f64> = args
            .pi_times_us
            .iter()
            .map(|t| std::f64::consts::PI / (t * 1e-6))
            .collect();
        let weights = if args.weights.is_empty() {
            vec![1.0; rates.len()]
        } else {
            args.weights.clone()
        };
        let times_us = grid.values();
        let times: Vec<f64> = times_us.iter().map(|t| t * 1e-6).collect();
        let signal = rabi_signal_weighted(&rates, &weights, &times).map_err(invalid)?;
        run.parameters = serde_json::json!({
            "pi_times_us": args.pi_times_us,
            "weights": weights,
            "times_us": [grid.start, grid.stop, grid.count],
        });
        run.csv(
            "rabi.csv",
            times_us.iter().zip(signal).map(|(t, s)| RabiRow { time_us: *t, signal: s }),
        )?;
    }
    run.commit(out)?;
    Ok(Status::Ok)
}

#[derive(Args, Debug)]
pub struct MisalignmentArgs {
    /// Residual z-sideband excitation relative to the y-sideband.
    #[arg(long)]
    pub ratio: f64,
    /// y-mode frequency, MHz.
    #[arg(long)]
    pub fy: f64,
    /// z-mode frequency, MHz.
    #[arg(long)]
    pub fz: f64,
}

pub fn run_misalignment(args: &MisalignmentArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("misalignment");
    let bound = axis_misalignment_bound(args.ratio, mhz_to_angular(args.fy), mhz_to_angular(args.fz))
        .map_err(invalid)?;
    println!("misalignment <= {bound:.4} deg (projection model, upper bound)");
    run.parameters = serde_json::json!({ "ratio": args.ratio, "fy_mhz": args.fy, "fz_mhz": args.fz });
    run.json(
        "misalignment.json",
        &serde_json::json!({
            "bound_deg": bound,
            "kind": "upper bound",
            "model": "projection: eta_z^2 / eta_y^2 = tan^2(theta) * f_y / f_z, theta <= asin(sqrt(ratio * f_z / f_y))",
        }),
    )?;
    run.commit(out)?;
    Ok(Status::Ok)
}
