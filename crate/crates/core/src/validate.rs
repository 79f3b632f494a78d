//! Acceptance checks at desk scale.
//!
//! Each criterion turns ensemble statistics into [`Check`] records. The
//! expensive ensembles are computed separately so that several criteria can
//! share one run.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{Aperture, Reflector};
use crate::imaging::{
    aperture_integral, first_j1_zero, first_zero_widths, half_max_width, peak_amplitude, psf_g,
    psf_h, GridSpec, Migration,
};
use crate::medium::{MediumSampler, MediumSpec, SamplingGrid};
use crate::moments::haar_intensity_correlation;
use crate::montecarlo::{
    estimate_coherence_radius, kirchhoff_statistics, mean_peak_shape, run_broadband_ensemble,
    run_ensemble, run_indexed, run_transmission_ensemble, verify_broadband_stabilization,
    verify_variance_at_peak, BroadbandConfig, BroadbandStats, CoherenceConfig, CoherenceEstimate,
    DistanceUnit, EnsembleConfig, EnsembleStats, MomentsConfig, Scenario, TransmissionStats,
    MIN_BOOTSTRAP,
};
use crate::propagator::{default_step, Propagator, SourceSpec};
use crate::report::Check;
use crate::waveguide::{ModeBasis, WaveguideSpec};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    /// Regime checks that failed but were waived for this run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waived: Vec<String>,
}

impl CriterionReport {
    pub fn new(criterion: u32, name: &str, checks: Vec<Check>) -> Self {
        CriterionReport {
            criterion,
            name: name.to_string(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            waived: Vec::new(),
        }
    }

    fn waiving(mut self, waived: Vec<String>) -> Self {
        self.waived = waived;
        self
    }

    /// One-line summary listing failing quantities.
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let failed: Vec<&str> = self
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.quantity.as_str())
            .collect();
        let mut s = format!("criterion {:>2} {status} {}", self.criterion, self.name);
        if !failed.is_empty() {
            s.push_str(&format!(" (failed: {})", failed.join(", ")));
        }
        if !self.waived.is_empty() {
            s.push_str(&format!(" [waived: {}]", self.waived.join(", ")));
        }
        s
    }
}

/// Propagator unitarity and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitarityConfig {
    pub waveguide: WaveguideSpec,
    pub medium: MediumSpec,
    /// Physical length `L / eps^2` in wavelengths.
    pub wavelengths: f64,
    pub realizations: u64,
    pub max_defect: f64,
    pub max_seconds: f64,
}

/// Inputs for the whole acceptance suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub unitarity: UnitarityConfig,
    pub moments: MomentsConfig,
    pub imaging: EnsembleConfig,
    pub broadband: BroadbandConfig,
    pub coherence: CoherenceConfig,
    pub determinism: EnsembleConfig,
    pub resamples: usize,
}

fn guide(n: usize) -> WaveguideSpec {
    WaveguideSpec {
        a: (n as f64 + 0.5) * PI,
        c0: 1.0,
        omega0: 1.0,
    }
}

const LAMBDA: f64 = 2.0 * PI;

impl ValidationConfig {
    /// Parameters used by the acceptance tests.
    pub fn desk_scale(seed: u64) -> Self {
        let eps = 0.05;
        let n40 = guide(40);
        let a40 = n40.a;
        let imaging = EnsembleConfig {
            realizations: 2000,
            seed,
            workers: 0,
            scenario: Scenario {
                waveguide: n40,
                medium: MediumSpec::default_for(LAMBDA, eps, 3.0, seed),
                source: SourceSpec::time_harmonic(a40 / 3.0),
                reflector: Reflector {
                    x_r: 0.5 * a40,
                    z_r: 4.0 * a40,
                    sigma_r: 30.0,
                },
                apertures: [0.2, 0.5]
                    .iter()
                    .map(|w| Aperture::Interval {
                        a1: (0.5 - 0.5 * w) * a40,
                        a2: (0.5 + 0.5 * w) * a40,
                    })
                    .chain([Aperture::Full])
                    .collect(),
                grid: GridSpec::centered(0.5 * a40, 4.0 * a40, 1.2 * LAMBDA, LAMBDA, LAMBDA / 16.0),
                distance: 3.0,
                distance_unit: DistanceUnit::Equipartition,
                step_factor: 2.0,
            },
            waive: vec!["born".into(), "range".into()],
        };
        let n6 = guide(6);
        let a6 = n6.a;
        let broadband = BroadbandConfig {
            scenario: Scenario {
                waveguide: n6,
                medium: MediumSpec::default_for(LAMBDA, eps, 2.0, seed),
                source: SourceSpec::time_harmonic(a6 / 3.0),
                reflector: Reflector {
                    x_r: 0.45 * a6,
                    z_r: 4.0 * a6,
                    sigma_r: 30.0,
                },
                apertures: Vec::new(),
                grid: GridSpec::centered(0.45 * a6, 4.0 * a6, 1.2 * LAMBDA, LAMBDA, LAMBDA / 16.0),
                distance: 3.0,
                distance_unit: DistanceUnit::Equipartition,
                step_factor: 2.0,
            },
            alpha: 1.5,
            widths: (0.5, 2.0),
            spacing: 0.1,
            truncation: 3.0,
            migration: Migration::Dispersive,
            realizations: 80,
            seed,
            workers: 0,
            waive: vec!["born".into()],
        };
        let coherence = CoherenceConfig {
            waveguide: n6,
            medium: MediumSpec::default_for(LAMBDA, eps, 2.0, seed),
            multiple: 3.0,
            offsets: (0..12).map(|i| i as f64 * 1e-3).collect(),
            realizations: 100,
            workers: 0,
            step_factor: 2.0,
        };
        let n5 = guide(5);
        let a5 = n5.a;
        let determinism = EnsembleConfig {
            realizations: 6,
            seed,
            workers: 0,
            scenario: Scenario {
                waveguide: n5,
                medium: MediumSpec::default_for(LAMBDA, eps, 2.0, seed),
                source: SourceSpec::time_harmonic(a5 / 3.0),
                reflector: Reflector {
                    x_r: 0.5 * a5,
                    z_r: 4.0 * a5,
                    sigma_r: 0.05,
                },
                apertures: vec![Aperture::Full],
                grid: GridSpec::centered(
                    0.5 * a5,
                    4.0 * a5,
                    0.5 * LAMBDA,
                    0.5 * LAMBDA,
                    LAMBDA / 8.0,
                ),
                distance: 3.0,
                distance_unit: DistanceUnit::Equipartition,
                step_factor: 2.0,
            },
            waive: Vec::new(),
        };
        ValidationConfig {
            unitarity: UnitarityConfig {
                waveguide: guide(10),
                medium: MediumSpec::default_for(LAMBDA, eps, 2.0, seed),
                wavelengths: 500.0,
                realizations: 10,
                max_defect: 1e-8,
                max_seconds: 1.0,
            },
            moments: MomentsConfig {
                waveguide: n5,
                medium: MediumSpec::default_for(LAMBDA, eps, 2.0, seed),
                multiples: vec![1.0, 2.0, 3.0, 6.0],
                realizations: 5000,
                seed,
                workers: 0,
                step_factor: 2.0,
            },
            imaging,
            broadband,
            coherence,
            determinism,
            resamples: 1000,
        }
    }

    /// Replaces every master seed.
    pub fn reseed(&mut self, seed: u64) {
        self.unitarity.medium.seed = seed;
        self.moments.seed = seed;
        self.imaging.seed = seed;
        self.broadband.seed = seed;
        self.coherence.medium.seed = seed;
        self.determinism.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples < MIN_BOOTSTRAP {
            return Err(invalid(
                "resamples",
                format!("need at least {MIN_BOOTSTRAP}"),
            ));
        }
        if self
            .moments
            .multiples
            .iter()
            .all(|m| (m - 3.0).abs() > 1e-9)
        {
            return Err(invalid(
                "moments.multiples",
                "must include 3 (multiples of L_equip)",
            ));
        }
        if self.imaging.scenario.apertures.is_empty() {
            return Err(invalid(
                "imaging.scenario.apertures",
                "need at least one aperture",
            ));
        }
        Ok(())
    }
}

/// Criterion 1: unitarity defect and wall time per realization.
pub fn unitarity(config: &UnitarityConfig) -> Result<CriterionReport> {
    let basis = ModeBasis::carrier(&config.waveguide)?;
    let lambda = basis.wavelength();
    config.medium.validate(lambda)?;
    let eps = config.medium.epsilon;
    let z = config.wavelengths * lambda;
    let l = z * eps * eps;
    let sampler = MediumSampler::new(
        &config.medium,
        &basis,
        z,
        SamplingGrid::default_for(&config.medium, lambda),
    )?;
    let prop = Propagator::new(
        &basis,
        eps,
        config.medium.ell_z,
        default_step(&basis, config.medium.ell_z),
    )?;
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for i in 0..config.realizations {
        let start = Instant::now();
        let t = prop.matrix(&sampler.sample(i), l)?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        worst = worst.max(t.unitarity_defect());
    }
    let checks = vec![
        Check::within("max_unitarity_defect", worst, 0.0, 0.0, config.max_defect),
        Check::within(
            "max_seconds_per_realization",
            slowest,
            0.0,
            0.0,
            config.max_seconds,
        ),
    ];
    Ok(CriterionReport::new(1, "unitarity", checks))
}

fn distance_index(stats: &TransmissionStats, multiple: f64) -> Result<usize> {
    stats.index_of(multiple).ok_or_else(|| {
        invalid(
            "multiples",
            format!("distance {multiple} L_equip was not sampled"),
        )
    })
}

/// Criterion 2: first and second moments at `3 L_equip`.
pub fn moment_limits(stats: &TransmissionStats, epsilon: f64) -> Result<CriterionReport> {
    let d = distance_index(stats, 3.0)?;
    let checks = vec![
        stats.first_moment_check(d),
        stats.second_moment_check(d, epsilon),
    ];
    Ok(CriterionReport::new(2, "moment limits", checks))
}

/// Criterion 3: Monte Carlo mode powers against the coupled-power solution.
pub fn coupled_power(stats: &TransmissionStats) -> Result<CriterionReport> {
    let mut checks = Vec::new();
    for m in [1.0, 2.0, 3.0] {
        checks.push(stats.coupled_power_check(distance_index(stats, m)?));
    }
    Ok(CriterionReport::new(3, "coupled-power oracle", checks))
}

/// Criterion 4: fourth moments at the largest sampled distance.
pub fn fourth_moments(stats: &TransmissionStats, epsilon: f64) -> Result<CriterionReport> {
    let d = stats.distances.len() - 1;
    let mut checks = stats.fourth_moment_checks(d, epsilon);
    let n = stats.n;
    let haar = haar_intensity_correlation((0, 0), (1, 1), n);
    if let Some(avg) = checks
        .iter()
        .find(|c| c.quantity == "mean_disjoint_pair_family_average")
    {
        checks.push(
            Check::info(
                "mean_disjoint_pair_vs_unitary_limit",
                avg.estimate,
                avg.stderr,
                haar,
            )
            .with_note("1/(N^2 - 1), forced by unitarity given the shared-index limit"),
        );
    }
    Ok(CriterionReport::new(4, "fourth moments", checks))
}

/// Criterion 5: the Kirchhoff ensemble mean vanishes while single images do not.
pub fn kirchhoff_failure(stats: &EnsembleStats) -> CriterionReport {
    let (worst, lo, hi) = kirchhoff_statistics(stats);
    let checks = vec![
        Check::within("max_abs_mean_km_over_stderr", worst, 0.0, 0.0, 3.0),
        Check::between("min_rms_km_over_stderr_sqrt_m", lo, 0.0, 0.5, 2.0),
        Check::between("max_rms_km_over_stderr_sqrt_m", hi, 0.0, 0.5, 2.0),
    ];
    CriterionReport::new(5, "Kirchhoff failure", checks).waiving(waived(stats))
}

fn waived(stats: &EnsembleStats) -> Vec<String> {
    stats
        .regime
        .iter()
        .filter(|r| r.waived)
        .map(|r| r.name.clone())
        .collect()
}

/// Criterion 6: peak location, full-aperture `I_LA` half-width, and `I_LA`
/// width agreement across apertures.
pub fn resolution(stats: &EnsembleStats, scenario: &Scenario) -> Result<CriterionReport> {
    let fa = stats.fa.mean_grid();
    let (px, pz) = fa.peak_location();
    let dx = fa.x[1] - fa.x[0];
    let dz = fa.z[1] - fa.z[0];
    let r = scenario.reflector;
    let mut checks = vec![
        Check::within("fa_peak_x_offset_cells", (px - r.x_r) / dx, 0.0, 0.0, 0.5),
        Check::within("fa_peak_z_offset_cells", (pz - r.z_r) / dz, 0.0, 0.0, 0.5),
    ];
    let (_, _, fa_width) = mean_peak_shape(&stats.fa);
    checks.push(Check::info(
        "fa_first_minimum_half_width",
        fa_width.unwrap_or(f64::NAN),
        0.0,
        first_j1_zero(),
    ));
    let basis = ModeBasis::carrier(&scenario.waveguide)?;
    let (ax, az) = fa.argmax();
    let peak = fa.get(ax, az);
    let lambda = basis.wavelength();
    let mut floor = 0.0f64;
    for (ix, &x) in fa.x.iter().enumerate() {
        for (iz, &z) in fa.z.iter().enumerate() {
            if (x - fa.x[ax]).hypot(z - fa.z[az]) > lambda {
                floor = floor.max(fa.get(ix, iz).abs());
            }
        }
    }
    checks.push(
        Check::info("fa_off_peak_floor_relative", floor / peak, 0.0, 0.0)
            .with_note("beyond one wavelength of the peak"),
    );
    let target = first_j1_zero() * basis.wavelength() / (2.0 * PI);
    let full = scenario
        .apertures
        .iter()
        .position(|a| matches!(a, Aperture::Full))
        .ok_or_else(|| invalid("apertures", "the resolution check needs the full aperture"))?;
    let la_full = stats.la[full].mean_grid();
    let (ix, iz) = la_full.argmax();
    let half =
        first_zero_widths(&la_full.x, &la_full.x_profile(iz), ix, 1).map(|(l, r)| 0.5 * (l + r));
    checks.push(match half {
        Some(w) => Check::within(
            "la_full_first_zero_half_width",
            w,
            0.0,
            target,
            0.1 * target,
        ),
        None => Check::within(
            "la_full_first_zero_half_width",
            f64::INFINITY,
            0.0,
            target,
            0.1 * target,
        )
        .with_note("no first zero inside the grid"),
    });
    let mut widths = Vec::new();
    for (im, ap) in stats.la.iter().zip(&scenario.apertures) {
        let g = im.mean_grid();
        let (ix, iz) = g.argmax();
        let w = half_max_width(&g.x, &g.x_profile(iz), ix).unwrap_or(f64::INFINITY);
        let (lo, hi) = match ap {
            Aperture::Full => (0.0, basis.a),
            Aperture::Interval { a1, a2 } => (*a1, *a2),
        };
        checks.push(Check::info(
            format!("la_fwhm_aperture_{:.3}a", (hi - lo) / basis.a),
            w,
            0.0,
            w,
        ));
        widths.push(w);
    }
    let max = widths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = widths.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check::within(
        "la_fwhm_relative_spread",
        (max - min) / min,
        0.0,
        0.0,
        0.15,
    ));
    Ok(CriterionReport::new(6, "resolution", checks).waiving(waived(stats)))
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Criterion 7: point-spread constants.
pub fn psf_constants() -> CriterionReport {
    let quarter = PI * PI / 4.0;
    let j1 = first_j1_zero();
    // The amplitude integral changes sign where h touches zero.
    let zero = bisect(|x| aperture_integral(2, x, 0.0).re, 3.0, 4.5);
    let checks = vec![
        Check::within("h_at_zero", psf_h(0.0), 0.0, quarter, 1e-8),
        Check::within("g_at_zero", psf_g(0.0), 0.0, quarter, 1e-8),
        Check::within("first_zero_of_h", zero, 0.0, j1, 1e-6),
        Check::info("first_zero_of_j1", j1, 0.0, 3.8317),
    ];
    CriterionReport::new(7, "PSF constants", checks)
}

/// Criterion 8: ensemble-mean `I_FA` at the reflector against `P_peak`.
pub fn peak_amplitude_check(stats: &EnsembleStats, scenario: &Scenario) -> Result<CriterionReport> {
    let basis = ModeBasis::carrier(&scenario.waveguide)?;
    let p = peak_amplitude(basis.omega, scenario.reflector.sigma_r, basis.a);
    let m = stats.peak_samples.len() as f64;
    let mean = stats.peak_samples.iter().sum::<f64>() / m;
    let var = stats
        .peak_samples
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (m - 1.0);
    let checks = vec![Check::within(
        "mean_fa_at_reflector_over_ppeak",
        mean / p,
        (var / m).sqrt() / p,
        1.0,
        0.15,
    )];
    Ok(CriterionReport::new(8, "peak amplitude", checks).waiving(waived(stats)))
}

/// Criterion 9: time-harmonic variance at the peak.
pub fn instability(
    stats: &EnsembleStats,
    scenario: &Scenario,
    resamples: usize,
) -> Result<CriterionReport> {
    Ok(CriterionReport::new(
        9,
        "time-harmonic instability",
        verify_variance_at_peak(stats, scenario, resamples)?,
    )
    .waiving(waived(stats)))
}

/// Criterion 10: bandwidth stabilizes the peak without changing the mean image.
pub fn broadband(
    stats: &BroadbandStats,
    coherence: &CoherenceEstimate,
    resamples: usize,
    waive: &[String],
) -> Result<CriterionReport> {
    let mut checks = verify_broadband_stabilization(stats, coherence.omega_c, resamples)?;
    if coherence.omega_c.is_none() {
        checks.push(
            Check::info("omega_c", f64::NAN, 0.0, 0.0)
                .with_note("correlation stayed above 1/2 over the offsets"),
        );
    }
    Ok(CriterionReport::new(10, "broadband stabilization", checks).waiving(waive.to_vec()))
}

/// Serialized numerical payload of an ensemble.
pub fn ensemble_bytes(stats: &EnsembleStats) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    stats.fa.write_csv(&mut out)?;
    for la in &stats.la {
        la.write_csv(&mut out)?;
    }
    stats.km_re.write_csv(&mut out)?;
    stats.km_im.write_csv(&mut out)?;
    for v in stats.km_power.iter().chain(&stats.peak_samples) {
        out.extend_from_slice(format!("{v:.16e}\n").as_bytes());
    }
    Ok(out)
}

/// Criterion 11: repeated runs with one and several workers agree byte for byte.
pub fn determinism(config: &EnsembleConfig) -> Result<CriterionReport> {
    let mut runs = Vec::new();
    for workers in [1, 2, 1, 0] {
        let mut c = config.clone();
        c.workers = workers;
        runs.push(ensemble_bytes(&run_ensemble(&c)?)?);
    }
    let mismatches = runs.iter().skip(1).filter(|r| **r != runs[0]).count();
    // Ordered reduction on a bare index stream as a second witness.
    let mut order = Vec::new();
    run_indexed(64, 3, Ok, |i, v: u64| {
        order.push((i, v));
        Ok(())
    })?;
    let in_order = order
        .iter()
        .enumerate()
        .all(|(k, &(i, v))| i == k as u64 && v == k as u64);
    let checks = vec![
        Check::within("mismatched_reruns", mismatches as f64, 0.0, 0.0, 0.0),
        Check::within(
            "reduction_order_violations",
            if in_order { 0.0 } else { 1.0 },
            0.0,
            0.0,
            0.0,
        ),
        Check::info("payload_bytes", runs[0].len() as f64, 0.0, 0.0),
    ];
    Ok(CriterionReport::new(11, "determinism", checks))
}

/// Results of the shared ensembles.
#[derive(Debug)]
pub struct Ensembles {
    pub moments: TransmissionStats,
    pub imaging: EnsembleStats,
    pub broadband: BroadbandStats,
    pub coherence: CoherenceEstimate,
}

impl Ensembles {
    pub fn run(config: &ValidationConfig) -> Result<Self> {
        Ok(Ensembles {
            moments: run_transmission_ensemble(&config.moments)?,
            imaging: run_ensemble(&config.imaging)?,
            broadband: run_broadband_ensemble(&config.broadband)?,
            coherence: estimate_coherence_radius(&config.coherence)?,
        })
    }
}

/// Runs every criterion in order.
pub fn run_all(config: &ValidationConfig) -> Result<Vec<CriterionReport>> {
    config.validate()?;
    let e = Ensembles::run(config)?;
    let eps = config.moments.medium.epsilon;
    let scen = &config.imaging.scenario;
    Ok(vec![
        unitarity(&config.unitarity)?,
        moment_limits(&e.moments, eps)?,
        coupled_power(&e.moments)?,
        fourth_moments(&e.moments, eps)?,
        kirchhoff_failure(&e.imaging),
        resolution(&e.imaging, scen)?,
        psf_constants(),
        peak_amplitude_check(&e.imaging, scen)?,
        instability(&e.imaging, scen, config.resamples)?,
        broadband(
            &e.broadband,
            &e.coherence,
            config.resamples,
            &config.broadband.waive,
        )?,
        determinism(&config.determinism)?,
    ])
}
