//! `ioncrystal` command-line interface.
//!
//! Units at this boundary: frequencies in MHz (values of f where ω = 2πf),
//! voltages in V, masses in amu, lengths in µm. Every command writes its
//! files into `--out-dir` together with `<command>.manifest.json`.

mod calibrate;
mod crystal;
mod freqs;
mod micromotion;
mod output;
mod scan;
mod source;
mod spectrum;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::output::Invalid;

#[derive(Parser, Debug)]
#[command(name = "ioncrystal", version, about = "Planar ion crystals in a Paul trap")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "IONCRYSTAL_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (0 = all cores). Ignored in sequential builds.
    #[arg(long, global = true, env = "IONCRYSTAL_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Secular frequencies, principal-axis rotation and Mathieu q.
    Freqs(freqs::FreqsArgs),
    /// Equilibrium geometry of an N-ion crystal.
    Equilibrium(crystal::EquilibriumArgs),
    /// Normal modes of an equilibrium crystal.
    Modes(crystal::ModesArgs),
    /// Structural scan (and soft-mode scan) from a scan spec file.
    Scan(scan::ScanArgs),
    /// Imperfection coefficients from measured frequencies.
    Calibrate(calibrate::CalibrateArgs),
    /// Raman sideband spectrum.
    Spectrum(spectrum::SpectrumArgs),
    /// Synthesize or fit Rabi flopping signals.
    Rabi(spectrum::RabiArgs),
    /// Upper bound on principal-axis misalignment from a residual peak ratio.
    Misalignment(spectrum::MisalignmentArgs),
    /// Micromotion modulation index per ion.
    Micromotion(micromotion::MicromotionArgs),
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cli.out_dir.as_path();
    let result = match &cli.command {
        Command::Freqs(a) => freqs::run(a, out),
        Command::Equilibrium(a) => crystal::run_equilibrium(a, out),
        Command::Modes(a) => crystal::run_modes(a, out),
        Command::Scan(a) => scan::run(a, out),
        Command::Calibrate(a) => calibrate::run(a, out),
        Command::Spectrum(a) => spectrum::run_spectrum(a, out),
        Command::Rabi(a) => spectrum::run_rabi(a, out),
        Command::Misalignment(a) => spectrum::run_misalignment(a, out),
        Command::Micromotion(a) => micromotion::run(a, out),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: not converged; outputs are flagged");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Invalid>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
