//! Monte Carlo ensembles over medium realizations.
//!
//! Realizations run in parallel with isolated RNG streams and are folded
//! into the accumulators strictly in index order, so every statistic is
//! independent of the worker count.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{BroadbandSpec, Components, ModalSpectrum, SpectralSample};
use crate::error::{invalid, Error, Result};
use crate::fields::{
    primary_from_arrivals, primary_window, secondary_from_arrivals, Aperture, ArrayGeometry,
    Reflector,
};
use crate::imaging::{
    first_zero_widths, full_aperture_image, full_aperture_image_with, kirchhoff_image,
    limited_aperture_image, peak_amplitude, Functional, GridSpec, ImageGrid, Migration,
};
use crate::medium::{MediumSampler, MediumSpec, SamplingGrid};
use crate::moments::{coupled_power_solve, MomentModel};
use crate::propagator::{
    default_step, initial_amplitudes_with, Propagator, PropagatorMatrix, SourceSpec,
};
use crate::report::{Check, Interval};
use crate::waveguide::{ModeBasis, WaveguideSpec};

pub const MIN_BOOTSTRAP: usize = 500;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

/// Streaming mean and variance of a vector of observables (Welford updates).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Welford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "observation length");
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d * inv;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|s| (s / d).max(0.0)).collect()
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.variance().iter().map(|v| (v / c).sqrt()).collect()
    }
}

/// Percentile bootstrap (95%) of `stat` over index resamples of `0..n`.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, stat: F) -> Result<Interval>
where
    F: Fn(&[usize]) -> f64,
{
    if resamples < MIN_BOOTSTRAP {
        return Err(invalid(
            "resamples",
            format!("need at least {MIN_BOOTSTRAP}"),
        ));
    }
    if n < 2 {
        return Err(invalid("n", "bootstrap needs at least two observations"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut values: Vec<f64> = (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let pick = |q: f64| values[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Interval {
        lo: pick(0.025),
        hi: pick(0.975),
    })
}

/// Sample variance of `x` restricted to `idx`.
pub fn variance_of(x: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let m = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn plain_variance(x: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..x.len()).collect();
    variance_of(x, &idx)
}

/// Runs `produce(i)` for `i in 0..count` on at most `workers` threads
/// (`0` means all available) and feeds results to `consume` in index order.
pub fn run_indexed<T, F, C>(count: u64, workers: usize, produce: F, mut consume: C) -> Result<()>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
    C: FnMut(u64, T) -> Result<()>,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let batch = (pool.current_num_threads() as u64 * 4).max(8);
    let mut start = 0;
    while start < count {
        let end = (start + batch).min(count);
        let out: Vec<Result<T>> =
            pool.install(|| (start..end).into_par_iter().map(&produce).collect());
        for (k, r) in out.into_iter().enumerate() {
            let index = start + k as u64;
            let v = r.map_err(|e| Error::Realization {
                index,
                source: Box::new(e),
            })?;
            consume(index, v)?;
        }
        start = end;
    }
    Ok(())
}

/// How [`Scenario::distance`] is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceUnit {
    /// Normalized length `L`; the physical length is `L / eps^2`.
    #[default]
    Normalized,
    /// Multiples of the equipartition distance.
    Equipartition,
}

fn one() -> f64 {
    1.0
}

/// Physical parameters of one imaging experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub waveguide: WaveguideSpec,
    pub medium: MediumSpec,
    pub source: SourceSpec,
    pub reflector: Reflector,
    /// Apertures imaged with `I_LA`.
    #[serde(default)]
    pub apertures: Vec<Aperture>,
    pub grid: GridSpec,
    pub distance: f64,
    #[serde(default)]
    pub distance_unit: DistanceUnit,
    /// Propagation step as a multiple of the default step, in `(0, 2]`.
    #[serde(default = "one")]
    pub step_factor: f64,
}

/// Outcome of one regime test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub name: String,
    pub pass: bool,
    pub waived: bool,
    pub detail: String,
}

/// Everything derived from a [`Scenario`] that realizations share.
#[derive(Debug)]
pub struct Prepared {
    pub basis: ModeBasis,
    pub l_equip: Option<f64>,
    /// Normalized propagation distance.
    pub l: f64,
    pub sampler: MediumSampler,
    pub propagator: Propagator,
    pub geometries: Vec<ArrayGeometry>,
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    pub regime: Vec<RegimeCheck>,
    pub scenario: Scenario,
}

/// Energy ratio of the secondary to the primary field at the array in the
/// equipartition limit; the single-scattering model needs it small.
pub fn born_parameter(basis: &ModeBasis, reflector: &Reflector) -> f64 {
    let n = basis.n();
    let g: f64 = (1..=n)
        .map(|l| basis.phi(l, reflector.x_r).powi(2) / basis.beta(l))
        .sum();
    let s2: f64 = (1..=n)
        .map(|j| basis.phi(j, reflector.x_r).powi(2) / basis.beta(j).powi(2))
        .sum();
    let p2: f64 = basis.wavenumbers.iter().map(|b| 1.0 / b).sum();
    let q2 = (0.5 * basis.omega * basis.omega * reflector.sigma_r).powi(2) * g;
    q2 * s2 / p2
}

fn propagation_step(basis: &ModeBasis, ell_z: f64, factor: f64) -> Result<f64> {
    if !(factor > 0.0 && factor <= 2.0) {
        return Err(invalid(
            "step_factor",
            format!("must lie in (0, 2], got {factor}"),
        ));
    }
    Ok(factor * default_step(basis, ell_z))
}

impl Scenario {
    /// Validates the parameters and evaluates the regime checks; failed
    /// checks not listed in `waive` are errors.
    pub fn prepare(&self, waive: &[String]) -> Result<Prepared> {
        self.waveguide.validate()?;
        let basis = ModeBasis::carrier(&self.waveguide)?;
        let lambda = basis.wavelength();
        self.medium.validate(lambda)?;
        self.source.validate(basis.a)?;
        let l_equip = if self.medium.sigma_nu > 0.0 {
            Some(MomentModel::new(&self.medium, &basis)?.l_equip)
        } else {
            None
        };
        let l = match self.distance_unit {
            DistanceUnit::Normalized => self.distance,
            DistanceUnit::Equipartition => {
                self.distance
                    * l_equip.ok_or_else(|| {
                        invalid("distance_unit", "no equipartition without fluctuations")
                    })?
            }
        };
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid("distance", "must be positive"));
        }
        let eps = self.medium.epsilon;
        let reflector_warnings = self.reflector.validate(&basis, eps, Some(l))?;
        self.grid.validate(&basis)?;
        let mut geometries = Vec::with_capacity(self.apertures.len());
        for ap in &self.apertures {
            let g = ArrayGeometry::new(*ap, basis.a, lambda / 16.0)?;
            g.validate(&basis)?;
            geometries.push(g);
        }
        let step = propagation_step(&basis, self.medium.ell_z, self.step_factor)?;
        let propagator = Propagator::new(&basis, eps, self.medium.ell_z, step)?;
        let grid = SamplingGrid::default_for(&self.medium, lambda);
        let sampler = MediumSampler::new(&self.medium, &basis, l / (eps * eps), grid)?;

        let mut regime = Vec::new();
        if let Some(le) = l_equip {
            regime.push(RegimeCheck {
                name: "equipartition".into(),
                pass: l >= 3.0 * le * (1.0 - 1e-12),
                waived: false,
                detail: format!("L = {l}, 3 L_equip = {}", 3.0 * le),
            });
        }
        let born = born_parameter(&basis, &self.reflector);
        regime.push(RegimeCheck {
            name: "born".into(),
            pass: born < 0.25,
            waived: false,
            detail: format!("secondary/primary energy ratio {born:.4}"),
        });
        regime.push(RegimeCheck {
            name: "range".into(),
            pass: reflector_warnings.is_empty(),
            waived: false,
            detail: if reflector_warnings.is_empty() {
                format!("z_r = {}", self.reflector.z_r)
            } else {
                reflector_warnings.join("; ")
            },
        });
        for r in regime.iter_mut() {
            if !r.pass {
                if waive.iter().any(|w| w == &r.name) {
                    r.waived = true;
                    log::warn!("regime check `{}` waived: {}", r.name, r.detail);
                } else {
                    return Err(Error::Regime(format!("{}: {}", r.name, r.detail)));
                }
            }
        }
        Ok(Prepared {
            l_equip,
            l,
            sampler,
            propagator,
            geometries,
            xs: self.grid.xs(),
            zs: self.grid.zs(),
            regime,
            scenario: self.clone(),
            basis,
        })
    }
}

/// Images of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationImages {
    pub fa: ImageGrid,
    pub la: Vec<ImageGrid>,
    pub km: ImageGrid,
    /// Relative norm defect of the propagated amplitudes.
    pub defect: f64,
}

/// `b_j = e^{i beta_j L / eps^2} a_j(L)`.
pub fn arrivals_from_transmitted(
    a_l: &[Complex64],
    l: f64,
    epsilon: f64,
    basis: &ModeBasis,
) -> Vec<Complex64> {
    let lt = l / (epsilon * epsilon);
    a_l.iter()
        .zip(&basis.wavenumbers)
        .map(|(a, b)| a * Complex64::from_polar(1.0, b * lt))
        .collect()
}

impl Prepared {
    /// Time-harmonic arrivals for realization `index`.
    pub fn arrivals(&self, index: u64) -> Result<(Vec<Complex64>, f64)> {
        let coupling = self.sampler.sample(index);
        let a0 = initial_amplitudes_with(
            self.scenario.source.x_s,
            Complex64::new(1.0, 0.0),
            &self.basis,
        );
        let a_l = self.propagator.vector(&coupling, self.l, &a0)?;
        let n0: f64 = a0.iter().map(|c| c.norm_sqr()).sum();
        let n1: f64 = a_l.iter().map(|c| c.norm_sqr()).sum();
        let defect = (n1.sqrt() - n0.sqrt()).abs() / n0.sqrt();
        Ok((
            arrivals_from_transmitted(&a_l, self.l, self.medium().epsilon, &self.basis),
            defect,
        ))
    }

    pub fn medium(&self) -> &MediumSpec {
        &self.scenario.medium
    }

    /// KM, FA and LA images of realization `index`.
    pub fn realize(&self, index: u64) -> Result<RealizationImages> {
        let (b, defect) = self.arrivals(index)?;
        let eps = self.medium().epsilon;
        let p = primary_from_arrivals(&b, &self.basis, primary_window(eps));
        let s = secondary_from_arrivals(&b, &self.scenario.reflector, &self.basis);
        let spectrum = ModalSpectrum::time_harmonic(&p, &s)?;
        let fa = full_aperture_image(
            &spectrum,
            Components::RETAINED,
            &self.basis,
            &self.xs,
            &self.zs,
        )?;
        let la = self
            .geometries
            .iter()
            .map(|g| {
                limited_aperture_image(
                    &spectrum,
                    Components::RETAINED,
                    g,
                    &self.basis,
                    &self.xs,
                    &self.zs,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let total: Vec<Complex64> = p.values.iter().zip(&s.values).map(|(a, b)| a + b).collect();
        let km = kirchhoff_image(&total, &self.basis, &self.xs, &self.zs)?;
        Ok(RealizationImages { fa, la, km, defect })
    }

    /// Grid node nearest to the reflector.
    pub fn reflector_node(&self) -> (usize, usize) {
        let near = |axis: &[f64], v: f64| {
            (0..axis.len())
                .min_by(|&i, &j| (axis[i] - v).abs().total_cmp(&(axis[j] - v).abs()))
                .unwrap_or(0)
        };
        (
            near(&self.xs, self.scenario.reflector.x_r),
            near(&self.zs, self.scenario.reflector.z_r),
        )
    }
}

/// Ensemble request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub realizations: u64,
    /// Master seed; overrides the medium seed.
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    pub scenario: Scenario,
    /// Names of regime checks allowed to fail.
    #[serde(default)]
    pub waive: Vec<String>,
}

/// Pointwise ensemble statistics of one functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageStats {
    pub functional: Functional,
    pub label: String,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub count: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ImageStats {
    fn from_welford(
        functional: Functional,
        label: &str,
        x: &[f64],
        z: &[f64],
        w: &Welford,
    ) -> Self {
        ImageStats {
            functional,
            label: label.to_string(),
            x: x.to_vec(),
            z: z.to_vec(),
            count: w.count(),
            mean: w.mean().to_vec(),
            variance: w.variance(),
        }
    }

    pub fn stderr(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.variance.iter().map(|v| (v / c).sqrt()).collect()
    }

    /// Mean image as a grid.
    pub fn mean_grid(&self) -> ImageGrid {
        let c: Vec<Complex64> = self.mean.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        ImageGrid::from_complex(self.functional, &self.x, &self.z, &c)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,z,mean,variance,stderr")?;
        let nz = self.z.len();
        let se = self.stderr();
        for (ix, x) in self.x.iter().enumerate() {
            for (iz, z) in self.z.iter().enumerate() {
                let k = ix * nz + iz;
                writeln!(
                    w,
                    "{x:.16e},{z:.16e},{:.16e},{:.16e},{:.16e}",
                    self.mean[k], self.variance[k], se[k]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub realizations: u64,
    pub l: f64,
    pub l_equip: Option<f64>,
    pub fa: ImageStats,
    pub la: Vec<ImageStats>,
    pub km_re: ImageStats,
    pub km_im: ImageStats,
    /// Pointwise mean of `|I_KM|^2`.
    pub km_power: Vec<f64>,
    /// `I_FA` at the grid node nearest the reflector, per realization.
    pub peak_samples: Vec<f64>,
    pub peak_node: (usize, usize),
    pub max_defect: f64,
    pub regime: Vec<RegimeCheck>,
}

/// Samples, propagates, images and accumulates `config.realizations` media.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleStats> {
    if config.realizations < 2 {
        return Err(invalid("realizations", "need at least two"));
    }
    let mut scenario = config.scenario.clone();
    scenario.medium.seed = config.seed;
    let prep = scenario.prepare(&config.waive)?;
    let dim = prep.xs.len() * prep.zs.len();
    let mut fa = Welford::new(dim);
    let mut la: Vec<Welford> = prep.geometries.iter().map(|_| Welford::new(dim)).collect();
    let mut km_re = Welford::new(dim);
    let mut km_im = Welford::new(dim);
    let mut km_pow = Welford::new(dim);
    let (px, pz) = prep.reflector_node();
    let node = px * prep.zs.len() + pz;
    let mut peaks = Vec::with_capacity(config.realizations as usize);
    let mut max_defect = 0.0f64;
    run_indexed(
        config.realizations,
        config.workers,
        |i| prep.realize(i),
        |_, r| {
            fa.push(&r.fa.values);
            for (w, g) in la.iter_mut().zip(&r.la) {
                w.push(&g.values);
            }
            km_re.push(&r.km.values);
            km_im.push(&r.km.imag);
            let p: Vec<f64> = r.km.magnitude.iter().map(|m| m * m).collect();
            km_pow.push(&p);
            peaks.push(r.fa.values[node]);
            max_defect = max_defect.max(r.defect);
            Ok(())
        },
    )?;
    let (x, z) = (&prep.xs, &prep.zs);
    Ok(EnsembleStats {
        realizations: config.realizations,
        l: prep.l,
        l_equip: prep.l_equip,
        fa: ImageStats::from_welford(Functional::Fa, "FA", x, z, &fa),
        la: la
            .iter()
            .zip(&prep.geometries)
            .map(|(w, g)| {
                let (lo, hi) = g.bounds(prep.basis.a);
                ImageStats::from_welford(Functional::La, &format!("LA[{lo:.4},{hi:.4}]"), x, z, w)
            })
            .collect(),
        km_re: ImageStats::from_welford(Functional::Km, "KM.re", x, z, &km_re),
        km_im: ImageStats::from_welford(Functional::Km, "KM.im", x, z, &km_im),
        km_power: km_pow.mean().to_vec(),
        peak_samples: peaks,
        peak_node: (px, pz),
        max_defect,
        regime: prep.regime.clone(),
    })
}

/// `max_nodes |mean I_KM| / stderr` using the complex standard error, and the
/// range of `sqrt(E|I_KM|^2) / (stderr sqrt(M))` over nodes.
pub fn kirchhoff_statistics(stats: &EnsembleStats) -> (f64, f64, f64) {
    let m = stats.realizations as f64;
    let mut worst = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for k in 0..stats.km_re.mean.len() {
        let mean = Complex64::new(stats.km_re.mean[k], stats.km_im.mean[k]);
        let var = stats.km_re.variance[k] + stats.km_im.variance[k];
        let se = (var / m).sqrt();
        if se > 0.0 {
            worst = worst.max(mean.norm() / se);
            let ratio = stats.km_power[k].sqrt() / (se * m.sqrt());
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    (worst, lo, hi)
}

/// Peak-variance checks against `1/2 + pi^2/16`.
pub fn verify_variance_at_peak(
    stats: &EnsembleStats,
    scenario: &Scenario,
    resamples: usize,
) -> Result<Vec<Check>> {
    let basis = ModeBasis::carrier(&scenario.waveguide)?;
    let p_peak = peak_amplitude(basis.omega, scenario.reflector.sigma_r, basis.a);
    let target = 0.5 + PI * PI / 16.0;
    let x = &stats.peak_samples;
    let m = x.len() as f64;
    let var = plain_variance(x);
    let ratio = var / (p_peak * p_peak);
    let ci = bootstrap(x.len(), resamples, BOOTSTRAP_SEED, |idx| {
        variance_of(x, idx) / (p_peak * p_peak)
    })?;
    // Standard error of a sample variance from the fourth central moment.
    let mean = x.iter().sum::<f64>() / m;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    let se = ((m4 - var * var * (m - 3.0) / (m - 1.0)) / m)
        .max(0.0)
        .sqrt()
        / (p_peak * p_peak);
    let mut out =
        vec![Check::within("var_peak_over_ppeak_sq", ratio, se, target, 0.2 * target).with_ci(ci)];
    out.push(Check::info(
        "mean_peak_over_ppeak",
        mean / p_peak,
        (var / m).sqrt() / p_peak,
        1.0,
    ));
    // Off-peak floor: corner of the grid relative to the O(lambda^2 / (N sigma_r)) level.
    let nz = stats.fa.z.len();
    let corner = [0, nz - 1, stats.fa.mean.len() - nz, stats.fa.mean.len() - 1];
    let off = corner
        .iter()
        .map(|&k| stats.fa.variance[k].sqrt())
        .sum::<f64>()
        / 4.0
        / p_peak;
    let floor = basis.wavelength().powi(2) / (basis.n() as f64 * scenario.reflector.sigma_r);
    out.push(
        Check::info("offpeak_std_over_ppeak", off, 0.0, floor)
            .with_note("target is the lambda^2/(N sigma_r) scale, reported for reference"),
    );
    Ok(out)
}

/// Request for the transmission-moment ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub waveguide: WaveguideSpec,
    pub medium: MediumSpec,
    /// Distances as multiples of `L_equip`, increasing.
    pub multiples: Vec<f64>,
    pub realizations: u64,
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "one")]
    pub step_factor: f64,
}

/// Accumulated transmission moments at each requested distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransmissionStats {
    pub n: usize,
    pub l_equip: f64,
    pub distances: Vec<f64>,
    /// `(Re T_jl, Im T_jl)` interleaved, row-major.
    pub first: Vec<Welford>,
    /// `|T_jl|^2`, row-major.
    pub second: Vec<Welford>,
    /// `|T_a|^2 |T_b|^2` for entry pairs `(a, b)`, index `a * N^2 + b`.
    pub fourth: Vec<Welford>,
    pub max_defect: f64,
    pub model: MomentModel,
}

pub fn run_transmission_ensemble(config: &MomentsConfig) -> Result<TransmissionStats> {
    if config.realizations < 2 {
        return Err(invalid("realizations", "need at least two"));
    }
    if config.multiples.is_empty()
        || config.multiples.windows(2).any(|w| w[1] <= w[0])
        || config.multiples[0] <= 0.0
    {
        return Err(invalid("multiples", "must be positive and increasing"));
    }
    let basis = ModeBasis::carrier(&config.waveguide)?;
    let lambda = basis.wavelength();
    let mut medium = config.medium;
    medium.seed = config.seed;
    medium.validate(lambda)?;
    let model = MomentModel::new(&medium, &basis)?;
    let distances: Vec<f64> = config.multiples.iter().map(|m| m * model.l_equip).collect();
    let eps = medium.epsilon;
    let last = *distances.last().unwrap_or(&0.0);
    let sampler = MediumSampler::new(
        &medium,
        &basis,
        last / (eps * eps),
        SamplingGrid::default_for(&medium, lambda),
    )?;
    let step = propagation_step(&basis, medium.ell_z, config.step_factor)?;
    let prop = Propagator::new(&basis, eps, medium.ell_z, step)?;
    let n = basis.n();
    let n2 = n * n;
    let mut first: Vec<Welford> = distances.iter().map(|_| Welford::new(2 * n2)).collect();
    let mut second: Vec<Welford> = distances.iter().map(|_| Welford::new(n2)).collect();
    let mut fourth: Vec<Welford> = distances.iter().map(|_| Welford::new(n2 * n2)).collect();
    let mut max_defect = 0.0f64;
    let mut f1 = vec![0.0; 2 * n2];
    let mut f2 = vec![0.0; n2];
    let mut f4 = vec![0.0; n2 * n2];
    run_indexed(
        config.realizations,
        config.workers,
        |i| prop.matrices_at(&sampler.sample(i), &distances),
        |_, mats: Vec<PropagatorMatrix>| {
            for (d, t) in mats.iter().enumerate() {
                max_defect = max_defect.max(t.unitarity_defect());
                for j in 0..n {
                    for l in 0..n {
                        let v = t.matrix[(j, l)];
                        f1[2 * (j * n + l)] = v.re;
                        f1[2 * (j * n + l) + 1] = v.im;
                        f2[j * n + l] = v.norm_sqr();
                    }
                }
                for a in 0..n2 {
                    for b in 0..n2 {
                        f4[a * n2 + b] = f2[a] * f2[b];
                    }
                }
                first[d].push(&f1);
                second[d].push(&f2);
                fourth[d].push(&f4);
            }
            Ok(())
        },
    )?;
    Ok(TransmissionStats {
        n,
        l_equip: model.l_equip,
        distances,
        first,
        second,
        fourth,
        max_defect,
        model,
    })
}

/// Worst entry of a family: the check passes when every entry satisfies
/// `|estimate - target| <= k stderr + allowance(target)`.
fn family_check<A>(
    quantity: &str,
    est: &[f64],
    se: &[f64],
    target: &[f64],
    k: f64,
    allowance: A,
) -> Check
where
    A: Fn(f64) -> f64,
{
    let mut worst = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut all = true;
    for i in 0..est.len() {
        let tol = k * se[i] + allowance(target[i]);
        let excess = (est[i] - target[i]).abs() - tol;
        if excess > 0.0 {
            all = false;
        }
        if excess > worst_excess {
            worst_excess = excess;
            worst = i;
        }
    }
    let tol = k * se[worst] + allowance(target[worst]);
    Check::within(quantity, est[worst], se[worst], target[worst], tol)
        .with_pass(all)
        .with_note(format!(
            "worst of {} entries at flat index {worst}",
            est.len()
        ))
}

impl TransmissionStats {
    pub fn index_of(&self, multiple: f64) -> Option<usize> {
        self.distances
            .iter()
            .position(|d| (d / self.l_equip - multiple).abs() < 1e-9)
    }

    /// Complex-mean test `|E T_jl| <= 3 stderr` for all entries.
    pub fn first_moment_check(&self, d: usize) -> Check {
        let w = &self.first[d];
        let m = w.count() as f64;
        let var = w.variance();
        let mut worst = 0.0f64;
        let mut at = (0.0, 0.0);
        for e in 0..self.n * self.n {
            let mean = Complex64::new(w.mean()[2 * e], w.mean()[2 * e + 1]);
            let se = ((var[2 * e] + var[2 * e + 1]) / m).sqrt();
            let z = mean.norm() / se;
            if z > worst {
                worst = z;
                at = (mean.norm(), se);
            }
        }
        Check::within("max_abs_mean_T", at.0, at.1, 0.0, 3.0 * at.1)
            .with_note(format!("max |E T|/stderr = {worst:.3}"))
    }

    /// `E|T_jl|^2 -> 1/N` within `3 stderr + 0.1 eps`.
    pub fn second_moment_check(&self, d: usize, epsilon: f64) -> Check {
        let w = &self.second[d];
        let target = vec![1.0 / self.n as f64; self.n * self.n];
        family_check(
            "mean_abs_T_sq_vs_1_over_N",
            w.mean(),
            &w.stderr(),
            &target,
            3.0,
            |_| 0.1 * epsilon,
        )
    }

    /// `E|T_jl|^2` against the coupled-power solution within `3 stderr`.
    pub fn coupled_power_check(&self, d: usize) -> Check {
        let n = self.n;
        let mut target = vec![0.0; n * n];
        for l in 0..n {
            let p = coupled_power_solve(&self.model, self.distances[d], l + 1);
            for j in 0..n {
                target[j * n + l] = p[j];
            }
        }
        let w = &self.second[d];
        let q = format!(
            "mean_abs_T_sq_vs_coupled_power_at_{:.3}_Leq",
            self.distances[d] / self.l_equip
        );
        family_check(&q, w.mean(), &w.stderr(), &target, 3.0, |_| 0.0)
    }

    /// Fourth moments: diagonal `|T_jl|^4`, pairs sharing a row or column,
    /// and fully disjoint pairs, each against its limit with a relative `eps` allowance.
    pub fn fourth_moment_checks(&self, d: usize, epsilon: f64) -> Vec<Check> {
        let n = self.n;
        let n2 = n * n;
        let nf = n as f64;
        let base = 1.0 / (nf * (nf + 1.0));
        let w = &self.fourth[d];
        let se = w.stderr();
        let mut fam: [(Vec<f64>, Vec<f64>, Vec<f64>); 3] = Default::default();
        for a in 0..n2 {
            for b in 0..n2 {
                let (ja, la) = (a / n, a % n);
                let (jb, lb) = (b / n, b % n);
                let (f, t) = if a == b {
                    (0, 2.0 * base)
                } else if b < a {
                    continue;
                } else if ja == jb || la == lb {
                    (1, base)
                } else {
                    (2, base)
                };
                fam[f].0.push(w.mean()[a * n2 + b]);
                fam[f].1.push(se[a * n2 + b]);
                fam[f].2.push(t);
            }
        }
        let names = [
            "mean_abs_T_4",
            "mean_shared_index_pair",
            "mean_disjoint_pair",
        ];
        let mut out: Vec<Check> = fam
            .iter()
            .zip(names)
            .map(|((e, s, t), name)| family_check(name, e, s, t, 3.0, |t| epsilon * t))
            .collect();
        // Pooled family averages for reference.
        for ((e, s, t), name) in fam.iter().zip(names) {
            let k = e.len() as f64;
            let avg = e.iter().sum::<f64>() / k;
            let se_avg = (s.iter().map(|v| v * v).sum::<f64>()).sqrt() / k;
            out.push(Check::info(
                format!("{name}_family_average"),
                avg,
                se_avg,
                t[0],
            ));
        }
        out
    }
}

/// Broadband stabilization request; both bands share media and frequency nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BroadbandConfig {
    pub scenario: Scenario,
    pub alpha: f64,
    /// Baseband standard deviations `(s1, s2)` of the two Gaussian spectra.
    pub widths: (f64, f64),
    /// Uniform node spacing in the baseband variable.
    pub spacing: f64,
    /// Spectra are truncated at this many standard deviations of the wider band.
    pub truncation: f64,
    #[serde(default)]
    pub migration: Migration,
    pub realizations: u64,
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub waive: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadbandStats {
    pub bandwidths: (f64, f64),
    pub nodes: usize,
    /// Time-harmonic, narrow band, wide band.
    pub images: Vec<ImageStats>,
    pub peaks: Vec<Vec<f64>>,
    pub peak_node: (usize, usize),
}

/// Runs the shared-media ensemble for the carrier and both bands.
pub fn run_broadband_ensemble(config: &BroadbandConfig) -> Result<BroadbandStats> {
    if config.realizations < 2 {
        return Err(invalid("realizations", "need at least two"));
    }
    let (s1, s2) = config.widths;
    if !(s1 > 0.0 && s2 > s1) {
        return Err(invalid("widths", "need 0 < s1 < s2"));
    }
    let mut scenario = config.scenario.clone();
    scenario.medium.seed = config.seed;
    let prep = scenario.prepare(&config.waive)?;
    let half = config.truncation * s2;
    let count = (2.0 * half / config.spacing).round() as usize + 1;
    let narrow = BroadbandSpec::gaussian_uniform(
        config.alpha,
        prep.medium().epsilon,
        prep.basis.omega,
        s1,
        config.spacing,
        count,
    )?;
    let wide = BroadbandSpec::gaussian_uniform(
        config.alpha,
        prep.medium().epsilon,
        prep.basis.omega,
        s2,
        config.spacing,
        count,
    )?;
    narrow.validate(&prep.basis)?;
    wide.validate(&prep.basis)?;
    let weights = [narrow.weights(), wide.weights()];
    let omegas: Vec<f64> = narrow.h_grid.iter().map(|&h| narrow.omega(h)).collect();
    let bases = omegas
        .iter()
        .map(|&w| prep.basis.at_frequency(w))
        .collect::<Result<Vec<_>>>()?;
    let props = bases
        .iter()
        .map(|b| {
            let step = propagation_step(b, prep.medium().ell_z, scenario.step_factor)?;
            Propagator::new(b, prep.medium().epsilon, prep.medium().ell_z, step)
        })
        .collect::<Result<Vec<_>>>()?;
    let carrier = omegas
        .iter()
        .position(|&w| w == prep.basis.omega)
        .ok_or_else(|| invalid("spacing", "grid must contain the carrier"))?;
    let dim = prep.xs.len() * prep.zs.len();
    let mut acc = vec![Welford::new(dim); 3];
    let mut peaks = vec![Vec::with_capacity(config.realizations as usize); 3];
    let (px, pz) = prep.reflector_node();
    let node = px * prep.zs.len() + pz;
    let eps = prep.medium().epsilon;
    let refl = scenario.reflector;
    let x_s = scenario.source.x_s;
    run_indexed(
        config.realizations,
        config.workers,
        |i| {
            let coupling = prep.sampler.sample(i);
            let mut samples = Vec::with_capacity(bases.len());
            for ((basis, prop), &omega) in bases.iter().zip(&props).zip(&omegas) {
                let a0 = initial_amplitudes_with(x_s, Complex64::new(1.0, 0.0), basis);
                let a_l = prop.vector(&coupling, prep.l, &a0)?;
                let b = arrivals_from_transmitted(&a_l, prep.l, eps, basis);
                let p = primary_from_arrivals(&b, basis, primary_window(eps));
                let s = secondary_from_arrivals(&b, &refl, basis);
                samples.push(SpectralSample {
                    omega,
                    weight: 0.0,
                    primary: p.values,
                    secondary: s.values,
                });
            }
            let mut images = Vec::with_capacity(3);
            let th = ModalSpectrum::from_samples(vec![SpectralSample {
                weight: 1.0,
                ..samples[carrier].clone()
            }]);
            images.push(
                full_aperture_image(&th, Components::RETAINED, &prep.basis, &prep.xs, &prep.zs)?
                    .values,
            );
            for w in &weights {
                let band = ModalSpectrum::from_samples(
                    samples
                        .iter()
                        .zip(w)
                        .map(|(s, &wt)| SpectralSample {
                            weight: wt,
                            ..s.clone()
                        })
                        .collect(),
                );
                images.push(
                    full_aperture_image_with(
                        &band,
                        Components::RETAINED,
                        &prep.basis,
                        &prep.xs,
                        &prep.zs,
                        config.migration,
                    )?
                    .values,
                );
            }
            Ok(images)
        },
        |_, images: Vec<Vec<f64>>| {
            for (k, im) in images.iter().enumerate() {
                acc[k].push(im);
                peaks[k].push(im[node]);
            }
            Ok(())
        },
    )?;
    let labels = ["FA.time_harmonic", "FA.band1", "FA.band2"];
    Ok(BroadbandStats {
        bandwidths: (narrow.bandwidth(), wide.bandwidth()),
        nodes: omegas.len(),
        images: acc
            .iter()
            .zip(labels)
            .map(|(w, l)| ImageStats::from_welford(Functional::Fa, l, &prep.xs, &prep.zs, w))
            .collect(),
        peaks,
        peak_node: (px, pz),
    })
}

/// Peak location and cross-range first-zero half-width of a mean image.
pub fn mean_peak_shape(stats: &ImageStats) -> (f64, f64, Option<f64>) {
    let g = stats.mean_grid();
    let (px, pz) = g.peak_location();
    let (ix, iz) = g.argmax();
    let w = first_zero_widths(&g.x, &g.x_profile(iz), ix, 1).map(|(l, r)| 0.5 * (l + r));
    (px, pz, w)
}

/// Variance ratio and mean-image stability checks across the two bands.
/// `omega_c`, when known, is reported against both bandwidths.
pub fn verify_broadband_stabilization(
    stats: &BroadbandStats,
    omega_c: Option<f64>,
    resamples: usize,
) -> Result<Vec<Check>> {
    let (b1, b2) = (&stats.peaks[1], &stats.peaks[2]);
    let v1 = plain_variance(b1);
    let v2 = plain_variance(b2);
    let ratio = v1 / v2;
    let ci = bootstrap(b1.len(), resamples, BOOTSTRAP_SEED, |idx| {
        variance_of(b1, idx) / variance_of(b2, idx)
    })?;
    let mut out =
        vec![Check::between("var_ratio_band1_over_band2", ratio, 0.0, 2.0, 8.0).with_ci(ci)];
    let th = &stats.peaks[0];
    out.push(Check::info(
        "var_ratio_time_harmonic_over_band1",
        plain_variance(th) / v1,
        0.0,
        stats.bandwidths.0 / stats.bandwidths.1,
    ));
    if let Some(oc) = omega_c {
        out.push(Check::info(
            "band1_over_omega_c",
            stats.bandwidths.0 / oc,
            0.0,
            1.0,
        ));
        out.push(Check::info(
            "band2_over_omega_c",
            stats.bandwidths.1 / oc,
            0.0,
            1.0,
        ));
    }
    let shapes: Vec<_> = stats.images.iter().map(mean_peak_shape).collect();
    let cell_x = stats.images[0].x[1] - stats.images[0].x[0];
    let cell_z = stats.images[0].z[1] - stats.images[0].z[0];
    let (x1, z1, w1) = shapes[1];
    let (x2, z2, w2) = shapes[2];
    let shift = ((x1 - x2) / cell_x).abs().max(((z1 - z2) / cell_z).abs());
    out.push(Check::within("mean_peak_shift_cells", shift, 0.0, 0.0, 1.0));
    match (w1, w2) {
        (Some(w1), Some(w2)) => out.push(Check::within(
            "mean_width_relative_change",
            (w2 - w1).abs() / w1,
            0.0,
            0.0,
            0.1,
        )),
        _ => out.push(
            Check::within("mean_width_relative_change", f64::INFINITY, 0.0, 0.0, 0.1)
                .with_note("first zero not found"),
        ),
    }
    Ok(out)
}

/// Frequency-coherence request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    pub waveguide: WaveguideSpec,
    pub medium: MediumSpec,
    /// Distance in multiples of `L_equip`.
    pub multiple: f64,
    /// Frequency offsets, increasing from zero.
    pub offsets: Vec<f64>,
    pub realizations: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "one")]
    pub step_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceEstimate {
    pub offsets: Vec<f64>,
    /// Entry-averaged `|E[conj(T(w0)) T(w0 + d)]| / sqrt(E|T(w0)|^2 E|T(w0 + d)|^2)`.
    pub correlation: Vec<f64>,
    /// First offset where the correlation drops below one half.
    pub omega_c: Option<f64>,
}

pub fn estimate_coherence_radius(config: &CoherenceConfig) -> Result<CoherenceEstimate> {
    if config.offsets.first() != Some(&0.0) || config.offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("offsets", "must start at 0 and increase"));
    }
    let basis = ModeBasis::carrier(&config.waveguide)?;
    let lambda = basis.wavelength();
    config.medium.validate(lambda)?;
    let model = MomentModel::new(&config.medium, &basis)?;
    let l = config.multiple * model.l_equip;
    let eps = config.medium.epsilon;
    let sampler = MediumSampler::new(
        &config.medium,
        &basis,
        l / (eps * eps),
        SamplingGrid::default_for(&config.medium, lambda),
    )?;
    let props = config
        .offsets
        .iter()
        .map(|d| {
            let b = basis.at_frequency(basis.omega + d)?;
            if b.n() != basis.n() {
                return Err(invalid("offsets", "mode count changes across the offsets"));
            }
            let step = propagation_step(&b, config.medium.ell_z, config.step_factor)?;
            Propagator::new(&b, eps, config.medium.ell_z, step)
        })
        .collect::<Result<Vec<_>>>()?;
    let n2 = basis.n() * basis.n();
    let k = props.len();
    let mut cross = vec![vec![Complex64::new(0.0, 0.0); n2]; k];
    let mut power = vec![vec![0.0; n2]; k];
    run_indexed(
        config.realizations,
        config.workers,
        |i| {
            let c = sampler.sample(i);
            props
                .iter()
                .map(|p| p.matrix(&c, l))
                .collect::<Result<Vec<_>>>()
        },
        |_, mats: Vec<PropagatorMatrix>| {
            let t0: Vec<Complex64> = mats[0].matrix.transpose().iter().copied().collect();
            for (d, m) in mats.iter().enumerate() {
                for (e, v) in m.matrix.transpose().iter().enumerate() {
                    cross[d][e] += t0[e].conj() * v;
                    power[d][e] += v.norm_sqr();
                }
            }
            Ok(())
        },
    )?;
    let correlation: Vec<f64> = (0..k)
        .map(|d| {
            (0..n2)
                .map(|e| cross[d][e].norm() / (power[0][e] * power[d][e]).sqrt())
                .sum::<f64>()
                / n2 as f64
        })
        .collect();
    let mut omega_c = None;
    for d in 1..k {
        if correlation[d] < 0.5 {
            let (c0, c1) = (correlation[d - 1], correlation[d]);
            let t = (c0 - 0.5) / (c0 - c1);
            omega_c = Some(config.offsets[d - 1] + t * (config.offsets[d] - config.offsets[d - 1]));
            break;
        }
    }
    Ok(CoherenceEstimate {
        offsets: config.offsets.clone(),
        correlation,
        omega_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..37)
            .map(|_| {
                (0..4)
                    .map(|k| 1e3 * k as f64 + rng.random::<f64>())
                    .collect()
            })
            .collect();
        let mut w = Welford::new(4);
        for r in &rows {
            w.push(r);
        }
        let var = w.variance();
        for k in 0..4 {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / 37.0;
            let v = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / 36.0;
            assert!((w.mean()[k] - m).abs() <= 1e-10 * m.abs().max(1.0));
            assert!((var[k] - v).abs() <= 1e-10 * v.max(1e-300));
        }
    }

    #[test]
    fn bootstrap_requires_enough_resamples() {
        assert!(bootstrap(10, 100, 1, |_| 0.0).is_err());
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ci = bootstrap(50, 600, 1, |idx| {
            idx.iter().map(|&i| x[i]).sum::<f64>() / 50.0
        })
        .unwrap();
        assert!(ci.lo < 24.5 && ci.hi > 24.5);
    }

    #[test]
    fn ordered_reduction_is_worker_independent() {
        let run = |workers| {
            let mut seq = Vec::new();
            run_indexed(
                50,
                workers,
                |i| Ok((i as f64).sqrt()),
                |i, v| {
                    seq.push((i, v));
                    Ok(())
                },
            )
            .unwrap();
            seq
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn failing_realization_reports_index() {
        let err = run_indexed(
            20,
            2,
            |i| {
                if i == 13 {
                    Err(invalid("x", "boom"))
                } else {
                    Ok(i)
                }
            },
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Realization { index: 13, .. }));
    }
}
