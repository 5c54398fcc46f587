//! End-to-end tests of the `nvem` binary: exit codes, output formats,
//! fail-closed configuration, ingestion edge cases, and byte determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn nvem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nvem"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        format!("rho_eff_ratio = 2.028\nseeds = [42]\n{extra}"),
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "not_a_key = 1\n").unwrap();
    let out = run(nvem()
        .arg("--config")
        .arg(&path)
        .args(["theory"]));
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("not_a_key"), "{msg}");
}

#[test]
fn negative_density_names_key_and_exits_2() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[sample]\nrho_c = -2.0\n").unwrap();
    let out = run(nvem().arg("--config").arg(&path).args(["theory"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample.rho_c"));
}

#[test]
fn malformed_data_exits_3_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let data = tmp.path().join("data.csv");
    fs::write(&data, "detuning_ghz,pi_perp_mhz,pi_perp_err_mhz\n100,3.0,oops\n").unwrap();
    let out = run(nvem()
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["fit", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("fit.json")));
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"), "{out:?}");
}

#[test]
fn duplicate_mw_offset_rejected_with_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let data = tmp.path().join("spectra.csv");
    fs::write(
        &data,
        "detuning_ghz,mw_offset_mhz,signal\n100,-1.0,0.1\n100,0.0,0.2\n100,0.0,0.3\n",
    )
    .unwrap();
    let out = run(nvem()
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["fit", "--spectra"])
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("fit.json")));
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("duplicate mw_offset"), "{msg}");
}

#[test]
fn too_few_calibration_samples_exits_4() {
    let tmp = TempDir::new().unwrap();
    let out = run(nvem()
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["field-dist", "--samples", "50", "--out"])
        .arg(tmp.path().join("f.csv")));
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn sensitivity_single_density_csv_and_json() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let csv_path = tmp.path().join("sens.csv");
    let out = run(nvem()
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["sensitivity", "--rho-nv-ppm", "8", "--out"])
        .arg(&csv_path));
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("# nvem"));
    assert!(text.lines().nth(1).unwrap().starts_with("rho_nv_ppm,eta_pi,eta_f,eta_total"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json")).unwrap())
            .unwrap();
    let eta = json["eta_total"].as_f64().unwrap();
    assert!((eta - 0.017).abs() / 0.017 < 0.15, "{eta}");
    // Record written alongside.
    assert!(tmp.path().join("sensitivity-record.json").exists());
}

#[test]
fn spectrum_deterministic_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let mut digests = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = tmp.path().join(name);
        let out = run(nvem()
            .arg("--config")
            .arg(&cfg)
            .arg("--out-dir")
            .arg(tmp.path())
            .args(["spectrum", "--detuning-ghz", "156", "--out"])
            .arg(&path));
        assert!(out.status.success(), "{out:?}");
        digests.push(fs::read(&path).unwrap());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn preset_spectrum_has_wide_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let path = tmp.path().join("preset.csv");
    let out = run(nvem()
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["spectrum", "--detuning-ghz", "156", "--preset", "5K", "--out"])
        .arg(&path));
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(&path).unwrap();
    let first_row = text.lines().nth(2).unwrap();
    let w: f64 = first_row.split(',').next().unwrap().parse().unwrap();
    assert!(w <= -59.9, "grid starts at {w}");
}

#[test]
fn unknown_preset_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = run(nvem()
        .arg("--out-dir")
        .arg(tmp.path())
        .args(["spectrum", "--detuning-ghz", "156", "--preset", "3K", "--out"])
        .arg(tmp.path().join("x.csv")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bias_field_prints_value() {
    let out = run(nvem().args(["bias-field", "--rho-nv-ppm", "0.01"]));
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    let bias = json["bias_field_vcm"].as_f64().unwrap();
    let gamma_e = json["gamma_e_mhz"].as_f64().unwrap();
    // Tetrahedral projection: E_bias = Γ_e/2 / (4/3·χ_∥ + 2√2/3·χ_⊥).
    let expect = 0.5 * gamma_e / (4.0 / 3.0 * 0.7 + 2.0 * std::f64::consts::SQRT_2 / 3.0 * 1.4);
    assert!((bias - expect).abs() / expect < 1e-9, "{bias} vs {expect}");
    assert!((3.0e3..7.0e3).contains(&bias), "{bias}");
}

#[test]
fn fluorescence_scan_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let path = tmp.path().join("fluo.csv");
    let out = run(nvem()
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path())
        .args([
            "fluorescence",
            "--detuning-min",
            "50",
            "--detuning-max",
            "250",
            "--detuning-step",
            "100",
            "--out",
        ])
        .arg(&path));
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().nth(1).unwrap() == "detuning_ghz,rel_fluorescence,f_r,f_or");
    assert_eq!(text.lines().count(), 5); // header comment + header + 3 rows
}

mod ingest {
    use nvem_cli::io::ingest_spectra;
    use std::fs;
    use tempfile::TempDir;

    #[test]
    fn shuffled_rows_are_canonicalized() {
        let tmp = TempDir::new().unwrap();
        let sorted = tmp.path().join("sorted.csv");
        let shuffled = tmp.path().join("shuffled.csv");
        fs::write(
            &sorted,
            "detuning_ghz,mw_offset_mhz,signal\n100,-1.0,0.3\n100,0.0,0.1\n100,1.0,0.35\n",
        )
        .unwrap();
        fs::write(
            &shuffled,
            "# comment line\n100,1.0,0.35\n100,-1.0,0.3\n100,0.0,0.1\n",
        )
        .unwrap();
        let a = ingest_spectra(&sorted).unwrap();
        let b = ingest_spectra(&shuffled).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].0, 100.0);
        assert_eq!(a[0].1, b[0].1);
    }

    #[test]
    fn multi_detuning_groups_sorted() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("multi.csv");
        fs::write(
            &path,
            "300,-1.0,0.1\n300,1.0,0.1\n100,-1.0,0.2\n100,1.0,0.2\n",
        )
        .unwrap();
        let groups = ingest_spectra(&path).unwrap();
        assert_eq!(groups.len(), 2);
        assert!(groups[0].0 < groups[1].0);
    }

    #[test]
    fn round_trip_through_csv_is_bit_exact() {
        // Values formatted with {:.9e} by the writers parse back to the
        // identical f64 when they came from that representation.
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("rt.csv");
        let values = [(-1.5e0, 3.369846557e-2), (0.0, 1.0e-8), (1.5, 9.87654321e-1)];
        let mut text = String::from("detuning_ghz,mw_offset_mhz,signal\n");
        for (w, s) in values {
            text.push_str(&format!("100,{w:.9e},{s:.9e}\n"));
        }
        fs::write(&path, &text).unwrap();
        let groups = ingest_spectra(&path).unwrap();
        let spec = &groups[0].1;
        for (i, (w, s)) in values.iter().enumerate() {
            let w_rt: f64 = format!("{w:.9e}").parse().unwrap();
            let s_rt: f64 = format!("{s:.9e}").parse().unwrap();
            assert_eq!(spec.mw_offset_mhz()[i], w_rt);
            assert_eq!(spec.signal()[i], s_rt);
        }
    }
}
