use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ioncrystal::calibration::{
    correct_configuration, fit_eta, radial_eta_pair, CalibrationFit, CalibrationRecord,
    DEFAULT_MAX_ROTATION_DEG,
};
use ioncrystal::constants::mhz_to_angular;
use ioncrystal::io::TrapFile;
use ioncrystal::Axis;
use serde::{Deserialize, Serialize};

use crate::output::{invalid, read_input, Run};
use crate::source::TrapArgs;
use crate::Status;

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Measurements: electrode_group, voltage_V, axis, measured_freq_MHz[, sigma_MHz].
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub trap: TrapArgs,
    /// Largest principal-axis tilt allowed in radial datasets, degrees.
    #[arg(long, default_value_t = DEFAULT_MAX_ROTATION_DEG)]
    pub max_rotation_deg: f64,
}

#[derive(Debug, Deserialize)]
struct Row {
    electrode_group: String,
    #[serde(rename = "voltage_V")]
    voltage: f64,
    axis: String,
    #[serde(rename = "measured_freq_MHz")]
    measured: f64,
    #[serde(rename = "sigma_MHz", default)]
    sigma: Option<f64>,
}

#[derive(Serialize)]
struct GroupReport {
    electrodes: Vec<String>,
    eta_axial: f64,
    eta_radial: f64,
    /// Axes whose data were missing; their coefficient defaults to 1.
    defaulted: Vec<&'static str>,
    fits: BTreeMap<String, CalibrationFit>,
}

fn parse_records(text: &str, source: &str) -> Result<Vec<(String, CalibrationRecord)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| invalid(format!("{source}: {e}")))?;
        let axis: Axis = row
            .axis
            .parse()
            .map_err(|e| invalid(format!("{source}: line {line}: {e}")))?;
        if !(row.measured.is_finite() && row.measured > 0.0) {
            return Err(invalid(format!("{source}: line {line}: frequency must be positive")));
        }
        if !row.voltage.is_finite() {
            return Err(invalid(format!("{source}: line {line}: voltage must be finite")));
        }
        if let Some(s) = row.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(format!("{source}: line {line}: sigma must be positive")));
            }
        }
        let mut rec = CalibrationRecord::new(BTreeMap::new(), mhz_to_angular(row.measured), axis);
        rec.sigma = row.sigma.map(mhz_to_angular);
        rec.voltages.insert(row.electrode_group.clone(), row.voltage);
        out.push((row.electrode_group, rec));
    }
    if out.is_empty() {
        return Err(invalid(format!("{source}: no records")));
    }
    Ok(out)
}

pub fn run(args: &CalibrateArgs, out: &Path) -> Result<Status> {
    let mut run = Run::new("calibrate");
    if !(args.max_rotation_deg > 0.0) {
        return Err(invalid("--max-rotation-deg must be positive"));
    }
    let trap_file = args.trap.load_file(&mut run)?;
    let template = trap_file.configuration();
    let text = read_input(&mut run, &args.records)?;
    let parsed = parse_records(&text, &args.records.display().to_string())?;

    // Expand group names into their electrodes.
    let mut by_group: BTreeMap<String, (Vec<String>, [Vec<CalibrationRecord>; 3])> = BTreeMap::new();
    for (group, rec) in parsed {
        let members = trap_file
            .resolve(&group)
            .ok_or_else(|| invalid(format!("unknown electrode group '{group}'")))?;
        let v = rec.voltages[&group];
        let mut expanded = rec.clone();
        expanded.voltages = members.iter().map(|m| (m.clone(), v)).collect();
        let entry = by_group.entry(group).or_insert_with(|| (members, Default::default()));
        entry.1[rec.axis.index()].push(expanded);
    }

    let mut reports = BTreeMap::new();
    let mut corrected = template.clone();
    for (group, (members, [xs, ys, zs])) in &by_group {
        let mut fits = BTreeMap::new();
        let mut defaulted = Vec::new();
        let eta_axial = if xs.is_empty() {
            defaulted.push("x");
            1.0
        } else {
            let f = fit_eta(xs, &template).map_err(|e| invalid(format!("group {group}, x: {e}")))?;
            let eta = f.eta;
            fits.insert("x".to_string(), f);
            eta
        };
        let eta_radial = match (ys.is_empty(), zs.is_empty()) {
            (false, false) => {
                let r = radial_eta_pair(ys, zs, &template, args.max_rotation_deg)
                    .map_err(|e| invalid(format!("group {group}, radial: {e}")))?;
                fits.insert("y".to_string(), r.y);
                fits.insert("z".to_string(), r.z);
                r.eta_avg
            }
            (true, true) => {
                defaulted.push("radial");
                1.0
            }
            (y_empty, _) => {
                let (name, recs) = if y_empty { ("z", zs) } else { ("y", ys) };
                let f = fit_eta(recs, &template)
                    .map_err(|e| invalid(format!("group {group}, {name}: {e}")))?;
                let eta = f.eta;
                fits.insert(name.to_string(), f);
                eta
            }
        };
        if !(eta_axial > 0.0 && eta_radial > 0.0) {
            return Err(invalid(format!(
                "group {group}: fitted coefficients must be positive (axial {eta_axial}, radial {eta_radial})"
            )));
        }
        let labels: Vec<&str> = members.iter().map(String::as_str).collect();
        corrected = correct_configuration(&corrected, &labels, eta_axial, eta_radial).map_err(invalid)?;
        println!("{group}: eta_axial = {eta_axial:.6}, eta_radial = {eta_radial:.6}");
        reports.insert(
            group.clone(),
            GroupReport {
                electrodes: members.clone(),
                eta_axial,
                eta_radial,
                defaulted,
                fits,
            },
        );
    }

    let name = if trap_file.name.is_empty() {
        "corrected".to_string()
    } else {
        format!("{} (corrected)", trap_file.name)
    };
    let corrected_file = TrapFile::from_configuration(&corrected, &name, trap_file.groups.clone());
    run.parameters = serde_json::json!({
        "set": args.trap.set,
        "v_rf": args.trap.v_rf,
        "max_rotation_deg": args.max_rotation_deg,
    });
    run.tolerances
        .insert("voltage_tolerance_v".into(), ioncrystal::calibration::VOLTAGE_TOLERANCE);
    run.json("calibration.json", &serde_json::json!({ "groups": reports }))?;
    run.output("corrected_trap.toml", corrected_file.to_toml().into_bytes());
    run.commit(out)?;
    Ok(Status::Ok)
}
