use std::path::Path;

use anyhow::Result;
use clap::Args;
use ioncrystal::constants::angular_to_mhz;
use ioncrystal::trap_model::{axis_rotation_angle, secular_spectrum, TrapConfiguration};
use serde::Serialize;

use crate::output::{invalid, Run};
use crate::source::TrapArgs;
use crate::Status;

/// Linear grid `START:STOP:COUNT`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected START:STOP:COUNT, got '{s}'"));
    }
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number"));
    let (start, stop) = (num(parts[0])?, num(parts[1])?);
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("'{}' is not a count", parts[2]))?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(format!("invalid grid '{s}'"));
    }
    Ok(Grid { start, stop, count })
}

#[derive(Args, Debug)]
pub struct FreqsArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// Also sweep the RF amplitude, START:STOP:COUNT in V.
    #[arg(long, value_name = "START:STOP:COUNT", value_parser = parse_grid)]
    pub sweep_rf: Option<Grid>,
}

#[derive(Serialize)]
struct FreqsReport {
    /// `None` for an unconfined axis.
    freqs_mhz: [Option<f64>; 3],
    omega_squared: [f64; 3],
    stable: bool,
    rotation_deg: Option<f64>,
    mathieu_q: [f64; 3],
    /// Principal directions as rows: x, y, z.
    principal_axes: [[f64; 3]; 3],
    v_rf: f64,
}

#[derive(Serialize)]
struct SweepRow {
    v_rf_v: f64,
    f_x_mhz: Option<f64>,
    f_y_mhz: Option<f64>,
    f_z_mhz: Option<f64>,
    rotation_deg: Option<f64>,
    stable: bool,
}

fn report(config: &TrapConfiguration) -> FreqsReport {
    let spec = secular_spectrum(config);
    let scale = spec.omega_squared.iter().fold(0.0_f64, |a, w| a.max(w.abs()));
    let freq = |w2: f64| (w2 >= -1e-12 * scale).then(|| angular_to_mhz(w2.max(0.0).sqrt()));
    let freqs_mhz = spec.omega_squared.map(freq);
    let rotation_deg = axis_rotation_angle(config).ok();
    let a = spec.principal_axes;
    FreqsReport {
        freqs_mhz,
        omega_squared: spec.omega_squared,
        stable: freqs_mhz.iter().all(Option::is_some),
        rotation_deg,
        mathieu_q: spec.mathieu_q,
        principal_axes: [0, 1, 2].map(|c| [a[(0, c)], a[(1, c)], a[(2, c)]]),
        v_rf: config.rf_drive.v_rf,
    }
}

fn show(v: Option<f64>) -> String {
    v.map_or("unstable".to_string(), |f| format!("{f:.6}"))
}

pub fn run(args: &FreqsArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("freqs");
    let config = args.trap.configuration(&mut run)?;
    if let Some(g) = &args.sweep_rf {
        if g.start < 0.0 || g.stop < 0.0 {
            return Err(invalid("RF amplitudes must be non-negative"));
        }
    }
    let rep = report(&config);
    println!(
        "f_x = {} MHz, f_y = {} MHz, f_z = {} MHz",
        show(rep.freqs_mhz[0]),
        show(rep.freqs_mhz[1]),
        show(rep.freqs_mhz[2])
    );
    println!(
        "rotation = {} deg, Mathieu q = [{:.4}, {:.4}, {:.4}]",
        rep.rotation_deg.map_or("undefined".into(), |a| format!("{a:.4}")),
        rep.mathieu_q[0],
        rep.mathieu_q[1],
        rep.mathieu_q[2]
    );
    run.json("freqs.json", &rep)?;
    if let Some(g) = &args.sweep_rf {
        let mut rows = Vec::new();
        for v in g.values() {
            let cfg = config.clone().with_rf_voltage(v).map_err(invalid)?;
            let r = report(&cfg);
            rows.push(SweepRow {
                v_rf_v: v,
                f_x_mhz: r.freqs_mhz[0],
                f_y_mhz: r.freqs_mhz[1],
                f_z_mhz: r.freqs_mhz[2],
                rotation_deg: r.rotation_deg,
                stable: r.stable,
            });
        }
        run.csv("rf_sweep.csv", rows)?;
    }
    run.parameters = serde_json::json!({
        "set": args.trap.set,
        "v_rf": args.trap.v_rf,
        "sweep_rf": args.sweep_rf.as_ref().map(|g| (g.start, g.stop, g.count)),
    });
    run.commit(out)?;
    Ok(Status::Ok)
}
