use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ioncrystal::spectroscopy::micromotion_report;
use ioncrystal::trap_model::trap_center;
use nalgebra::Vector3;
use serde::Serialize;

use crate::output::{invalid, Run};
use crate::source::{GeometryFile, TrapArgs};
use crate::Status;

#[derive(Args, Debug)]
pub struct MicromotionArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// Geometry file with lab-frame positions. Defaults to one ion at the trap centre.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Net Raman wavevector KX,KY,KZ in rad/µm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub delta_k: Vec<f64>,
}

#[derive(Serialize)]
struct Row {
    index: usize,
    x_um: f64,
    y_um: f64,
    z_um: f64,
    beta: f64,
    beta_half: f64,
    sideband_ratio: f64,
}

pub fn run(args: &MicromotionArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("micromotion");
    if args.delta_k.len() != 3 {
        return Err(invalid("--delta-k needs three components"));
    }
    let delta_k = Vector3::new(args.delta_k[0], args.delta_k[1], args.delta_k[2]) * 1e6;
    let config = args.trap.configuration(&mut run)?;
    let positions = match &args.geometry {
        Some(p) => GeometryFile::load(&mut run, p)?.lab_positions(),
        None => vec![trap_center(&config).map_err(invalid)?],
    };
    let report = micromotion_report(&config, &positions, &delta_k);
    let rows: Vec<Row> = positions
        .iter()
        .zip(&report.per_ion)
        .enumerate()
        .map(|(index, (r, m))| Row {
            index,
            x_um: r.x * 1e6,
            y_um: r.y * 1e6,
            z_um: r.z * 1e6,
            beta: m.beta,
            beta_half: m.beta.abs() / 2.0,
            sideband_ratio: m.sideband_ratio,
        })
        .collect();
    let (lo, hi) = report.reference_beta_half;
    println!(
        "beta/2: min {:.5}, max {:.5}; reference range [{lo}, {hi}], within = {}",
        report.min_beta_half,
        report.max_beta_half,
        report.within_reference()
    );
    run.parameters = serde_json::json!({
        "set": args.trap.set,
        "v_rf": args.trap.v_rf,
        "delta_k_rad_per_um": args.delta_k,
    });
    run.csv("micromotion.csv", rows)?;
    run.json(
        "micromotion.json",
        &serde_json::json!({
            "max_beta_half": report.max_beta_half,
            "min_beta_half": report.min_beta_half,
            "reference_beta_half": [lo, hi],
            "within_reference": report.within_reference(),
        }),
    )?;
    run.commit(out)?;
    Ok(Status::Ok)
}
