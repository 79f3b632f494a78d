use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use wgimage::validate::ValidationConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wgimage"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn base(n: usize, sigma_nu: f64) -> Value {
    let a = (n as f64 + 0.5) * PI;
    let lam = 2.0 * PI;
    json!({
        "format_version": 1,
        "output_dir": "out",
        "waveguide": { "a": a, "c0": 1.0, "omega0": 1.0 },
        "medium": { "epsilon": 0.05, "ell_z": lam, "ell_x": lam, "sigma_nu": sigma_nu, "seed": 3 },
        "source": { "x_s": a / 3.0 },
        "reflector": { "x_r": a / 2.0, "z_r": 4.0 * a, "sigma_r": 0.01 },
        "apertures": [{ "kind": "full" }],
        "grid": {
            "x_min": a / 2.0 - lam / 2.0, "x_max": a / 2.0 + lam / 2.0, "nx": 9,
            "z_min": 4.0 * a - lam / 2.0, "z_max": 4.0 * a + lam / 2.0, "nz": 9
        },
        "ensemble": {
            "realizations": 6, "seed": 11, "distance": 3.0,
            "distance_unit": "equipartition", "step_factor": 2.0
        },
        "moments": { "curve_multiples": [0.0, 0.2, 1.0, 3.0, 10.0] }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn modes_lists_every_propagating_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 0.0);
    cfg["waveguide"] = json!({ "a": 1.0, "c0": 1.0, "omega0": 20.5 * PI });
    cfg["output_dir"] = json!(dir.path().join("out"));
    let path = write_config(dir.path(), &cfg);
    let out = run(&["modes", "--config", &path]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 20);
    let beta1 = ((20.5 * PI).powi(2) - PI * PI).sqrt();
    assert!((rows[0][2] - beta1).abs() < 1e-12 * beta1);
    let file = fs::read_to_string(dir.path().join("out/modes.csv")).unwrap();
    assert!(file.starts_with("# config_sha256="));
}

#[test]
fn malformed_config_reports_path_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 1.0);
    cfg["medium"]["sigma"] = json!(1.0);
    let path = write_config(dir.path(), &cfg);
    let out = run(&["modes", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("medium"), "{err}");

    let mut cfg = base(5, 1.0);
    cfg["format_version"] = json!(2);
    let path = write_config(dir.path(), &cfg);
    let out = run(&["modes", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version"));

    let out = run(&[
        "modes",
        "--config",
        &dir.path().join("missing.json").to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn psf_table_is_even_with_known_center() {
    let out = run(&["psf"]);
    assert!(out.status.success());
    let rows = data_rows(&String::from_utf8(out.stdout).unwrap());
    let mid = rows.len() / 2;
    assert_eq!(rows[mid][0], 0.0);
    assert!((rows[mid][1] - PI * PI / 4.0).abs() < 1e-12);
    assert!((rows[mid][2] - PI * PI / 4.0).abs() < 1e-12);
    for k in 0..rows.len() {
        let m = rows.len() - 1 - k;
        assert!((rows[k][0] + rows[m][0]).abs() < 1e-14);
        assert!((rows[k][1] - rows[m][1]).abs() < 1e-14);
    }
}

#[test]
fn moments_conserve_power_and_equilibrate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 2.0);
    cfg["output_dir"] = json!(dir.path().join("out"));
    let path = write_config(dir.path(), &cfg);
    let out = run(&["moments", "--config", &path]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let l_equip: f64 = stdout
        .trim()
        .strip_prefix("L_equip = ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(l_equip > 0.0);
    let rows = data_rows(&fs::read_to_string(dir.path().join("out/coupled_power.csv")).unwrap());
    let last = 10.0 * l_equip;
    for r in rows.iter().filter(|r| (r[0] - last).abs() < 1e-9 * last) {
        assert!((r[3] - 0.2).abs() < 1e-3, "{r:?}");
    }
    let report = fs::read_to_string(dir.path().join("out/moments.ndjson")).unwrap();
    assert!(report.lines().next().unwrap().contains("config_sha256"));
}

#[test]
fn homogeneous_image_is_seed_free_and_expected_image_peaks_at_reflector() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(10, 0.0);
    cfg["ensemble"]["distance_unit"] = json!("normalized");
    cfg["ensemble"]["distance"] = json!(1.0);
    cfg["ensemble"]["waive"] = json!(["range", "born"]);
    cfg["reflector"]["sigma_r"] = json!(30.0);
    let path = write_config(dir.path(), &cfg);
    let outs: Vec<_> = [("a", "11"), ("b", "11"), ("c", "99")]
        .iter()
        .map(|(name, seed)| {
            let d = dir.path().join(name);
            let out = run(&[
                "image",
                "--config",
                &path,
                "--seed",
                seed,
                "--out",
                &d.to_string_lossy(),
            ]);
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            d
        })
        .collect();
    let fa = fs::read_to_string(outs[0].join("fa.csv")).unwrap();
    assert_eq!(fa, fs::read_to_string(outs[1].join("fa.csv")).unwrap());
    // Without a random medium the seed only changes the provenance header.
    assert_eq!(
        data_rows(&fa),
        data_rows(&fs::read_to_string(outs[2].join("fa.csv")).unwrap())
    );
    let rows = data_rows(&fs::read_to_string(outs[0].join("expected_fa.csv")).unwrap());
    let best = rows.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    let a = (10.0 + 0.5) * PI;
    assert!(
        (best[0] - a / 2.0).abs() < 1e-9 && (best[1] - 4.0 * a).abs() < 1e-9,
        "{best:?}"
    );
}

#[test]
fn ensemble_output_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 2.0);
    cfg["ensemble"]["waive"] = json!(["range"]);
    let path = write_config(dir.path(), &cfg);
    let mut outs = Vec::new();
    for (name, workers) in [("w1", "1"), ("w2", "2")] {
        let d = dir.path().join(name);
        let out = run(&[
            "ensemble",
            "--config",
            &path,
            "--workers",
            workers,
            "--out",
            &d.to_string_lossy(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outs.push(d);
    }
    for f in [
        "fa_stats.csv",
        "la_0_stats.csv",
        "km_re_stats.csv",
        "peak_samples.csv",
        "ensemble.ndjson",
    ] {
        let a = fs::read(outs[0].join(f)).unwrap();
        let b = fs::read(outs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let other = dir.path().join("seed");
    let out = run(&[
        "ensemble",
        "--config",
        &path,
        "--seed",
        "12",
        "--out",
        &other.to_string_lossy(),
    ]);
    assert!(out.status.success());
    assert_ne!(
        fs::read(other.join("fa_stats.csv")).unwrap(),
        fs::read(outs[0].join("fa_stats.csv")).unwrap()
    );
}

#[test]
fn unwaived_regime_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 2.0);
    cfg["ensemble"]["distance"] = json!(1.0);
    let path = write_config(dir.path(), &cfg);
    let out = run(&[
        "ensemble",
        "--config",
        &path,
        "--out",
        &dir.path().join("o").to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("regime"));
}

#[test]
fn validate_reports_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = ValidationConfig::desk_scale(5);
    v.unitarity.realizations = 1;
    v.moments.realizations = 20;
    v.imaging = serde_json::from_value(json!({
        "realizations": 4,
        "seed": 5,
        "scenario": {
            "waveguide": base(10, 0.0)["waveguide"],
            "medium": { "epsilon": 0.05, "ell_z": 2.0 * PI, "ell_x": 2.0 * PI, "sigma_nu": 2.0, "seed": 5 },
            "source": base(10, 0.0)["source"],
            "reflector": base(10, 0.0)["reflector"],
            "apertures": [{ "kind": "full" }],
            "grid": base(10, 0.0)["grid"],
            "distance": 3.0,
            "distance_unit": "equipartition",
            "step_factor": 2.0
        },
        "waive": ["born", "range"]
    }))
    .unwrap();
    v.broadband.realizations = 3;
    v.coherence.realizations = 3;
    v.determinism.realizations = 2;
    v.resamples = 500;
    let mut cfg = base(5, 2.0);
    cfg["validation"] = serde_json::to_value(&v).unwrap();
    let path = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("v");
    let out = run(&[
        "validate",
        "--config",
        &path,
        "--out",
        &out_dir.to_string_lossy(),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout
            .lines()
            .filter(|l| l.starts_with("criterion"))
            .count(),
        11,
        "{stdout}"
    );
    let records: Vec<Value> = fs::read_to_string(out_dir.join("validation.ndjson"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 11);
    assert!(records[4]["waived"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w == "range"));
    let any_failed = records.iter().any(|r| r["pass"] == json!(false));
    assert_eq!(out.status.code(), Some(if any_failed { 1 } else { 0 }));
}
