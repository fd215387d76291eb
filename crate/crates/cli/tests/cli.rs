use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ioncrystal::calibration::synthetic_records;
use ioncrystal::constants::angular_to_mhz;
use ioncrystal::io::TrapFile;
use ioncrystal::Axis;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn ioncrystal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ioncrystal"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ioncrystal(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn freqs_reports_reference_trap() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(dir.path(), &["freqs"]);
    assert!(stdout.contains("f_x = 0.427000 MHz"), "{stdout}");
    assert!(stdout.contains("f_y = 1.500000 MHz"));
    assert!(stdout.contains("f_z = 0.561000 MHz"));
    let rep = json(&dir.path().join("freqs.json"));
    assert!(rep["rotation_deg"].as_f64().unwrap().abs() < 0.01);

    let manifest = json(&dir.path().join("freqs.manifest.json"));
    assert_eq!(manifest["command"], "freqs");
    let out = &manifest["outputs"][0];
    assert_eq!(out["path"], "freqs.json");
    let bytes = fs::read(dir.path().join("freqs.json")).unwrap();
    assert_eq!(out["sha256"], hex(&bytes));
}

#[test]
fn zero_voltages_give_zero_frequencies() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["freqs", "--set", "C=0", "--set", "NC=0", "--v-rf", "0"]);
    let rep = json(&dir.path().join("freqs.json"));
    for f in rep["freqs_mhz"].as_array().unwrap() {
        assert_eq!(f.as_f64().unwrap(), 0.0);
    }
    assert!(rep["rotation_deg"].is_null());
}

#[test]
fn rf_sweep_is_monotone() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["freqs", "--sweep-rf", "80:140:13"]);
    let rows = csv_rows(&dir.path().join("rf_sweep.csv"));
    assert_eq!(rows.len(), 13);
    for w in rows.windows(2) {
        assert!(num(&w[1], "f_y_mhz") > num(&w[0], "f_y_mhz"));
        assert!(num(&w[1], "f_z_mhz") > num(&w[0], "f_z_mhz"));
        let (a, b) = (num(&w[0], "rotation_deg"), num(&w[1], "rotation_deg"));
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["equilibrium", "-n", "10", "--seed", "5"];
    ok(a.path(), &args);
    let out = Command::new(env!("CARGO_BIN_EXE_ioncrystal"))
        .env("IONCRYSTAL_OUT_DIR", b.path())
        .env("IONCRYSTAL_THREADS", "1")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["geometry.csv", "geometry.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let g = json(&a.path().join("geometry.json"));
    assert_eq!(g["dimensionality"], "2D-xz");
    assert_eq!(g["n_ions"], 10);
    assert!(g["extent_um"][1].as_f64().unwrap() < 0.01);
}

#[test]
fn three_ion_chain_from_frequencies() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["equilibrium", "--freqs", "0.2,1.5,1.2", "-n", "3"]);
    let rows = csv_rows(&dir.path().join("geometry.csv"));
    let mut xs: Vec<f64> = rows.iter().map(|r| num(r, "x_um")).collect();
    xs.sort_by(f64::total_cmp);
    // ℓ³ = e² / (4π ε0 m ω²)
    let m = (ioncrystal::constants::YB171_ATOMIC_MASS_AMU - ioncrystal::constants::ELECTRON_MASS_AMU)
        * ioncrystal::constants::ATOMIC_MASS_UNIT;
    let w = ioncrystal::constants::mhz_to_angular(0.2);
    let e = ioncrystal::constants::ELEMENTARY_CHARGE;
    let l = (ioncrystal::constants::coulomb_constant() * e * e / (m * w * w)).cbrt();
    let expected = 1.25_f64.cbrt() * l * 1e6;
    assert!((xs[2] / expected - 1.0).abs() < 1e-8);
    assert!((xs[0] / expected + 1.0).abs() < 1e-8);
    assert!(xs[1].abs() < 1e-8 * expected);
}

#[test]
fn two_ion_modes_match_closed_forms() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["modes", "--freqs", "0.3,1.5,1.2", "-n", "2"]);
    let rows = csv_rows(&dir.path().join("modes.csv"));
    let f: Vec<f64> = rows.iter().map(|r| num(r, "frequency_mhz")).collect();
    let mut want = vec![
        0.3,
        3f64.sqrt() * 0.3,
        1.5,
        (1.5f64.powi(2) - 0.09).sqrt(),
        1.2,
        (1.2f64.powi(2) - 0.09).sqrt(),
    ];
    want.sort_by(f64::total_cmp);
    for (a, b) in f.iter().zip(&want) {
        assert!((a / b - 1.0).abs() < 1e-9, "{a} vs {b}");
    }
    assert!(dir.path().join("geometry.json").exists());
}

#[test]
fn modes_from_geometry_file() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["equilibrium", "-n", "10", "--seed", "2"]);
    let geometry = dir.path().join("geometry.json");
    ok(dir.path(), &["modes", "--geometry", geometry.to_str().unwrap()]);
    let rows = csv_rows(&dir.path().join("modes.csv"));
    assert_eq!(rows.len(), 30);
    let y_band: Vec<f64> = rows
        .iter()
        .filter(|r| num(r, "participation_y") > 0.999)
        .map(|r| num(r, "frequency_mhz"))
        .collect();
    assert_eq!(y_band.len(), 10);
    assert!((y_band.iter().copied().fold(0.0, f64::max) - 1.5).abs() < 1e-9);
    assert!(y_band.iter().all(|f| *f > 0.75));
    let manifest = json(&dir.path().join("modes.manifest.json"));
    assert_eq!(manifest["inputs"][0]["sha256"], hex(&fs::read(&geometry).unwrap()));
}

#[test]
fn invalid_trap_file_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema = \"ioncrystal.trap/1\"\nname = [\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = ioncrystal(&out_dir, &["freqs", "--trap", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(!out_dir.exists());

    let schema = dir.path().join("schema.toml");
    fs::write(&schema, TrapFile::reference().to_toml().replace("ioncrystal.trap/1", "other/9")).unwrap();
    let out = ioncrystal(&out_dir, &["equilibrium", "-n", "3", "--trap", schema.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert!(!out_dir.exists());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["equilibrium", "-n", "0"],
        vec!["freqs", "--set", "NOPE=1"],
        vec!["equilibrium", "--freqs", "0.2,-1,1", "-n", "2"],
        vec!["misalignment", "--ratio", "2", "--fy", "1.5", "--fz", "0.5"],
    ] {
        let out = ioncrystal(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn non_convergence_writes_flagged_outputs() {
    let dir = TempDir::new().unwrap();
    let out = ioncrystal(dir.path(), &["equilibrium", "-n", "8", "--max-iterations", "2", "--restarts", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let g = json(&dir.path().join("geometry.json"));
    assert_eq!(g["converged"], false);
    assert_eq!(json(&dir.path().join("equilibrium.manifest.json"))["converged"], false);
}

#[test]
fn scan_with_soft_mode_track() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("scan.toml");
    fs::write(
        &spec,
        r#"schema = "ioncrystal.scan/1"
ions = 6
seed = 3
restarts = 4
soft_mode = true

[trap]
freqs_mhz = [0.4, 1.5, 0.52]

[sweep]
parameter = "omega_x"
start = 0.4
stop = 1.2
steps = 9
follow = { axis = "z", ratio = 1.3 }
"#,
    )
    .unwrap();
    ok(dir.path(), &["scan", "--spec", spec.to_str().unwrap()]);
    let rows = csv_rows(&dir.path().join("scan.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0]["dimensionality"], "2D-xz");
    assert_eq!(rows[8]["dimensionality"], "3D");
    let soft = csv_rows(&dir.path().join("softmode.csv"));
    assert!(num(&soft[0], "min_eigenvalue_rad2_s2") > 0.0);
    assert!(num(&soft[8], "min_eigenvalue_rad2_s2") < 0.0);
    let summary = json(&dir.path().join("scan.json"));
    let t = summary["soft_mode_transition_mhz"].as_f64().unwrap();
    let d = summary["planar_departure"].as_f64().unwrap();
    assert!((t - d).abs() <= 0.1 + 1e-9, "{t} vs {d}");
}

#[test]
fn scan_spec_errors_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("scan.toml");
    fs::write(
        &spec,
        "schema = \"ioncrystal.scan/1\"\nions = 3\n[trap]\nfreqs_mhz = [0.4, 1.5, 0.5]\n[sweep]\nparameter = \"omega_q\"\nvalues = [0.4, 0.5]\n",
    )
    .unwrap();
    let out = ioncrystal(&dir.path().join("out"), &["scan", "--spec", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

fn write_records(path: &Path, records: &[(String, f64, Axis, f64)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["electrode_group", "voltage_V", "axis", "measured_freq_MHz"]).unwrap();
    for (g, v, a, f) in records {
        w.write_record([g.clone(), v.to_string(), a.to_string(), f.to_string()]).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn calibrate_recovers_eta_and_writes_corrected_trap() {
    let dir = TempDir::new().unwrap();
    let mut file = TrapFile::reference();
    file.set_voltage("NC", 0.0).unwrap();
    let template = file.configuration();
    let members = file.resolve("C").unwrap();
    let labels: Vec<&str> = members.iter().map(String::as_str).collect();
    let volts: Vec<f64> = (0..8).map(|i| 0.1 + 0.04 * i as f64).collect();
    let recs = synthetic_records(&template, &labels, &volts, Axis::X, 1.23, 0.0, 0.0, 0).unwrap();
    let rows: Vec<_> = recs
        .iter()
        .zip(&volts)
        .map(|(r, v)| ("C".to_string(), *v, Axis::X, angular_to_mhz(r.measured_frequency)))
        .collect();
    let csv_path = dir.path().join("records.csv");
    write_records(&csv_path, &rows);
    ok(dir.path(), &["calibrate", "--records", csv_path.to_str().unwrap(), "--set", "NC=0"]);
    let rep = json(&dir.path().join("calibration.json"));
    let eta = rep["groups"]["C"]["eta_axial"].as_f64().unwrap();
    assert!((eta - 1.23).abs() < 1e-8, "{eta}");
    assert_eq!(rep["groups"]["C"]["eta_radial"].as_f64().unwrap(), 1.0);

    // Refit against the corrected trap: identity.
    let corrected = dir.path().join("corrected_trap.toml");
    let again = dir.path().join("again");
    ok(
        &again,
        &["calibrate", "--records", csv_path.to_str().unwrap(), "--trap", corrected.to_str().unwrap()],
    );
    let rep = json(&again.join("calibration.json"));
    let eta = rep["groups"]["C"]["eta_axial"].as_f64().unwrap();
    assert!((eta - 1.0).abs() < 1e-8, "{eta}");
}

#[test]
fn calibrate_rejects_unknown_group() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("records.csv");
    write_records(&csv_path, &[("Q".into(), 0.3, Axis::X, 0.4)]);
    let out = ioncrystal(&dir.path().join("out"), &["calibrate", "--records", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn component_peaks(dir: &Path) -> BTreeMap<String, f64> {
    let s = json(&dir.join("spectrum.json"));
    s["component_peaks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p[0].as_str().unwrap().to_string(), p[1].as_f64().unwrap()))
        .collect()
}

#[test]
fn spectrum_tilted_versus_aligned() {
    let common = [
        "spectrum", "--delta-k", "0,25,0", "--rabi-khz", "100", "--duration-us", "40", "--nbar", "1",
        "--detuning=-2:2:801",
    ];
    let aligned = TempDir::new().unwrap();
    ok(aligned.path(), &common);
    let peaks = component_peaks(aligned.path());
    // Modes ascend: 0 = x, 1 = z, 2 = y.
    assert!(peaks["blue1"] < 1e-4 && peaks["red1"] < 1e-4);
    assert!(peaks["blue2"] > 0.1);

    let tilted = TempDir::new().unwrap();
    let mut args = common.to_vec();
    args.extend(["--set", "C=0"]);
    ok(tilted.path(), &args);
    let peaks = component_peaks(tilted.path());
    for p in ["red1", "blue1", "red2", "blue2"] {
        assert!(peaks[p] > 1e-3, "{p}");
    }
    let rows = csv_rows(&tilted.path().join("spectrum.csv"));
    assert_eq!(rows.len(), 801);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&num(r, "excitation"))));
}

#[test]
fn spectrum_compare_reports_residuals() {
    let dir = TempDir::new().unwrap();
    let args = [
        "spectrum", "--delta-k", "0,25,5", "--rabi-khz", "50", "--duration-us", "60", "--detuning=0.4:1.7:1301",
    ];
    ok(dir.path(), &args);
    // Feed the simulated spectrum back as the measurement.
    let measured = dir.path().join("measured.csv");
    let text = fs::read_to_string(dir.path().join("spectrum.csv"))
        .unwrap()
        .replacen("detuning_mhz", "detuning_MHz", 1);
    fs::write(&measured, text).unwrap();
    let mut with = args.to_vec();
    with.extend(["--compare", measured.to_str().unwrap()]);
    let out = dir.path().join("cmp");
    ok(&out, &with);
    let s = json(&out.join("spectrum.json"));
    let peaks = s["peaks"].as_array().unwrap();
    assert!(!peaks.is_empty());
    for p in peaks {
        assert_eq!(p["residual_khz"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn micromotion_at_null_and_reference_range() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(dir.path(), &["micromotion", "--delta-k", "0,25,0"]);
    assert!(stdout.contains("[0.021, 0.038]"));
    let rows = csv_rows(&dir.path().join("micromotion.csv"));
    assert_eq!(num(&rows[0], "beta"), 0.0);
    let rep = json(&dir.path().join("micromotion.json"));
    assert_eq!(rep["reference_beta_half"][0], 0.021);
    assert_eq!(rep["reference_beta_half"][1], 0.038);
}

#[test]
fn rabi_synthesis_and_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["rabi", "--pi-times-us", "474,440,317", "--times", "0:4000:800"]);
    let signal = dir.path().join("rabi.csv");
    ok(
        dir.path(),
        &["rabi", "--fit", signal.to_str().unwrap(), "--components", "3", "--guess-pi-us", "480,430,320"],
    );
    let fit = json(&dir.path().join("rabi_fit.json"));
    let pi: Vec<f64> = fit["pi_times_us"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (a, b) in pi.iter().zip([474.0, 440.0, 317.0]) {
        assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn misalignment_is_labelled_as_bound() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["misalignment", "--ratio", "0", "--fy", "1.5", "--fz", "0.561"]);
    let rep = json(&dir.path().join("misalignment.json"));
    assert_eq!(rep["bound_deg"].as_f64().unwrap(), 0.0);
    assert_eq!(rep["kind"], "upper bound");
    assert!(rep["model"].as_str().unwrap().contains("projection"));
}
