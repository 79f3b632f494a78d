use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use wgimage::correlation::Components;
use wgimage::imaging::{expected_image, psf_table, Functional, ImageGrid};
use wgimage::moments::{coupled_power_curves, MomentModel};
use wgimage::montecarlo::{
    kirchhoff_statistics, run_ensemble, run_transmission_ensemble, verify_variance_at_peak,
    MIN_BOOTSTRAP,
};
use wgimage::report::{config_hash, csv_header, fmt17, Check};
use wgimage::validate::run_all;
use wgimage::waveguide::ModeBasis;

use crate::config::{PsfSection, RunConfig};
use crate::Failure;

/// Output directory plus the provenance stamped into every file.
struct Output {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self, Failure> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Output {
            dir: cfg.output_dir.clone(),
            hash: cfg.hash(),
            seed: cfg.ensemble.seed,
        })
    }

    fn csv<F>(&self, name: &str, body: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> wgimage::Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        csv_header(&mut w, &self.hash, self.seed)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn image(&self, name: &str, g: &ImageGrid) -> Result<(), Failure> {
        self.csv(name, |w| g.write_csv(w))
    }

    /// First record carries the provenance; the rest follow one per line.
    fn ndjson<T: Serialize>(&self, name: &str, records: &[T]) -> Result<(), Failure> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        let head = json!({ "config_sha256": self.hash, "seed": self.seed });
        writeln!(w, "{head}")?;
        wgimage::report::write_ndjson(&mut w, records)?;
        w.flush()?;
        Ok(())
    }
}

fn check_record(c: &Check) -> Value {
    serde_json::to_value(c).expect("check serializes")
}

pub fn modes(cfg: &RunConfig) -> Result<(), Failure> {
    let basis = ModeBasis::carrier(&cfg.waveguide)?;
    let out = Output::new(cfg)?;
    let mut text = String::new();
    text.push_str(&format!("# modes={}\n", basis.n()));
    text.push_str("j,lambda_j,beta_j,beta_prime_j\n");
    for j in 1..=basis.n() {
        let lam = cfg.waveguide.eigenvalue(j);
        let beta = basis.beta(j);
        let bp = cfg.waveguide.beta_prime(j, basis.omega)?;
        text.push_str(&format!(
            "{j},{},{},{}\n",
            fmt17(lam),
            fmt17(beta),
            fmt17(bp)
        ));
    }
    print!("{text}");
    out.csv("modes.csv", |w| {
        w.write_all(text.as_bytes())?;
        Ok(())
    })
}

pub fn moments(cfg: &RunConfig) -> Result<(), Failure> {
    let basis = ModeBasis::carrier(&cfg.waveguide)?;
    cfg.medium.validate(basis.wavelength())?;
    let model = MomentModel::new(&cfg.medium, &basis)?;
    let section = cfg.moments.clone().ok_or_else(|| {
        Failure::Config("config error at `moments`: section required by this command".into())
    })?;
    if section.curve_multiples.iter().any(|m| !(*m >= 0.0)) {
        return Err(Failure::Config(
            "config error at `moments.curve_multiples`: must be non-negative".into(),
        ));
    }
    let out = Output::new(cfg)?;
    let distances: Vec<f64> = section
        .curve_multiples
        .iter()
        .map(|m| m * model.l_equip)
        .collect();
    let n = basis.n();
    let curves: Vec<Vec<Vec<f64>>> = (1..=n)
        .map(|l| coupled_power_curves(&model, &distances, l))
        .collect();
    let mut worst_sum = 0.0f64;
    out.csv("coupled_power.csv", |w| {
        writeln!(w, "distance,launch,mode,power")?;
        for (l, per_launch) in curves.iter().enumerate() {
            for (d, p) in distances.iter().zip(per_launch) {
                worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
                for (j, v) in p.iter().enumerate() {
                    writeln!(w, "{},{},{},{}", fmt17(*d), l + 1, j + 1, fmt17(*v))?;
                }
            }
        }
        Ok(())
    })?;
    println!("L_equip = {}", fmt17(model.l_equip));
    let mut records = vec![
        check_record(&Check::info("l_equip", model.l_equip, 0.0, model.l_equip)),
        check_record(&Check::within(
            "power_conservation_defect",
            worst_sum,
            0.0,
            0.0,
            1e-10,
        )),
    ];
    let conserved = worst_sum <= 1e-10;
    let mut red = 0usize;
    if section.realizations > 0 {
        let stats = run_transmission_ensemble(&cfg.moments_config(&section))?;
        let eps = cfg.medium.epsilon;
        for d in 0..stats.distances.len() {
            let multiple = stats.distances[d] / stats.l_equip;
            let mut checks = vec![stats.first_moment_check(d), stats.coupled_power_check(d)];
            if multiple >= 3.0 - 1e-9 {
                checks.push(stats.second_moment_check(d, eps));
                checks.extend(stats.fourth_moment_checks(d, eps));
            }
            for c in checks {
                red += usize::from(!c.pass);
                let mut v = check_record(&c);
                v["distance_multiple"] = json!(multiple);
                records.push(v);
            }
        }
        records.push(check_record(&Check::info(
            "max_unitarity_defect",
            stats.max_defect,
            0.0,
            0.0,
        )));
    }
    out.ndjson("moments.ndjson", &records)?;
    // Monte Carlo checks are reported, not enforced; `validate` is the gate.
    if red > 0 {
        log::warn!("{red} Monte Carlo moment checks outside tolerance; see moments.ndjson");
    }
    if conserved {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "coupled-power curves lose conservation by {worst_sum:e}"
        )))
    }
}

pub fn image(cfg: &RunConfig) -> Result<(), Failure> {
    let scenario = cfg.scenario();
    let prep = scenario.prepare(&cfg.ensemble.waive)?;
    let out = Output::new(cfg)?;
    let r = prep.realize(0)?;
    out.image("fa.csv", &r.fa)?;
    out.image("km.csv", &r.km)?;
    for (k, g) in r.la.iter().enumerate() {
        out.image(&format!("la_{k}.csv"), g)?;
    }
    let x_s = scenario.source.x_s;
    let expected_fa = expected_image(
        Functional::Fa,
        Components::RETAINED,
        &prep.basis,
        x_s,
        &scenario.reflector,
        None,
        &prep.xs,
        &prep.zs,
    )?;
    out.image("expected_fa.csv", &expected_fa)?;
    for (k, geo) in prep.geometries.iter().enumerate() {
        let g = expected_image(
            Functional::La,
            Components::RETAINED,
            &prep.basis,
            x_s,
            &scenario.reflector,
            Some(geo),
            &prep.xs,
            &prep.zs,
        )?;
        out.image(&format!("expected_la_{k}.csv"), &g)?;
    }
    let (px, pz) = r.fa.peak_location();
    let (ex, ez) = expected_fa.peak_location();
    let mut records: Vec<Value> = prep.regime.iter().map(|c| json!({ "regime": c })).collect();
    records.push(check_record(&Check::info(
        "fa_peak_x",
        px,
        0.0,
        scenario.reflector.x_r,
    )));
    records.push(check_record(&Check::info(
        "fa_peak_z",
        pz,
        0.0,
        scenario.reflector.z_r,
    )));
    records.push(check_record(&Check::info(
        "expected_fa_peak_x",
        ex,
        0.0,
        scenario.reflector.x_r,
    )));
    records.push(check_record(&Check::info(
        "expected_fa_peak_z",
        ez,
        0.0,
        scenario.reflector.z_r,
    )));
    records.push(check_record(&Check::info(
        "norm_defect",
        r.defect,
        0.0,
        0.0,
    )));
    out.ndjson("image.ndjson", &records)
}

pub fn psf(cfg: Option<&RunConfig>, out_dir: Option<&Path>) -> Result<(), Failure> {
    let section = cfg.and_then(|c| c.psf.clone()).unwrap_or_default();
    if !(section.max > 0.0) || section.points < 2 {
        return Err(Failure::Config(
            "config error at `psf`: need max > 0 and at least two points".into(),
        ));
    }
    let table = psf_table(section.max, section.points);
    let mut text = String::from("xi,h,g\n");
    for (s, h, g) in &table {
        text.push_str(&format!("{},{},{}\n", fmt17(*s), fmt17(*h), fmt17(*g)));
    }
    match cfg {
        Some(c) => {
            let out = Output::new(c)?;
            out.csv("psf.csv", |w| {
                w.write_all(text.as_bytes())?;
                Ok(())
            })
        }
        None => {
            let PsfSection { max, points } = section;
            let hash = config_hash(format!("psf max={max} points={points}").as_bytes());
            let mut buf = Vec::new();
            csv_header(&mut buf, &hash, 0)?;
            buf.extend_from_slice(text.as_bytes());
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join("psf.csv"), buf)?;
                }
                None => std::io::stdout().write_all(&buf)?,
            }
            Ok(())
        }
    }
}

pub fn ensemble(cfg: &RunConfig) -> Result<(), Failure> {
    let config = cfg.ensemble_config();
    let stats = run_ensemble(&config)?;
    let out = Output::new(cfg)?;
    out.csv("fa_stats.csv", |w| stats.fa.write_csv(w))?;
    for (k, la) in stats.la.iter().enumerate() {
        out.csv(&format!("la_{k}_stats.csv"), |w| la.write_csv(w))?;
    }
    out.csv("km_re_stats.csv", |w| stats.km_re.write_csv(w))?;
    out.csv("km_im_stats.csv", |w| stats.km_im.write_csv(w))?;
    out.csv("peak_samples.csv", |w| {
        writeln!(w, "realization,fa_at_reflector")?;
        for (i, v) in stats.peak_samples.iter().enumerate() {
            writeln!(w, "{i},{}", fmt17(*v))?;
        }
        Ok(())
    })?;
    let mut records: Vec<Value> = stats
        .regime
        .iter()
        .map(|c| json!({ "regime": c }))
        .collect();
    let (worst, lo, hi) = kirchhoff_statistics(&stats);
    records.push(check_record(&Check::info(
        "max_abs_mean_km_over_stderr",
        worst,
        0.0,
        0.0,
    )));
    records.push(check_record(&Check::info(
        "min_rms_km_over_stderr_sqrt_m",
        lo,
        0.0,
        1.0,
    )));
    records.push(check_record(&Check::info(
        "max_rms_km_over_stderr_sqrt_m",
        hi,
        0.0,
        1.0,
    )));
    records.push(check_record(&Check::info(
        "max_norm_defect",
        stats.max_defect,
        0.0,
        0.0,
    )));
    for c in verify_variance_at_peak(&stats, &config.scenario, MIN_BOOTSTRAP.max(1000))? {
        records.push(check_record(&c));
    }
    out.ndjson("ensemble.ndjson", &records)
}

pub fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let v = cfg.validation_config();
    let out = Output::new(cfg)?;
    let reports = run_all(&v)?;
    for r in &reports {
        println!("{}", r.line());
    }
    out.ndjson("validation.ndjson", &reports)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.criterion.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "criteria failed: {}",
            failed.join(", ")
        )))
    }
}
