//! Random medium synthesis and modal coupling processes.
//!
//! The fluctuation `nu(x, z)` is a stationary mean-zero Gaussian field drawn by
//! spectral synthesis on a periodic box larger than the sampled region. The
//! coupling `C_jl(z) = int phi_j phi_l nu dx` is obtained from the cosine
//! projections `D_p(z) = int cos(pi p x / a) nu dx` through
//! `phi_j phi_l = (cos(pi (j-l) x / a) - cos(pi (j+l) x / a)) / a`, which needs
//! only `2N + 1` projections instead of `N (N + 1) / 2`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature;
use crate::waveguide::ModeBasis;

/// Correlation kernel of `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelModel {
    /// `exp(-x^2 / 2 ell_x^2) exp(-z^2 / 2 ell_z^2)`.
    #[default]
    Gaussian,
    /// `exp(-x^2 / 2 ell_x^2) exp(-|z| / ell_z)`.
    ExponentialGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub epsilon: f64,
    pub ell_z: f64,
    pub ell_x: f64,
    #[serde(default)]
    pub model: KernelModel,
    pub sigma_nu: f64,
    pub seed: u64,
}

impl MediumSpec {
    /// Default kernel with both correlation lengths equal to the wavelength.
    pub fn default_for(wavelength: f64, epsilon: f64, sigma_nu: f64, seed: u64) -> Self {
        MediumSpec {
            epsilon,
            ell_z: wavelength,
            ell_x: wavelength,
            model: KernelModel::Gaussian,
            sigma_nu,
            seed,
        }
    }

    /// Hard checks, then soft regime warnings (returned and logged).
    pub fn validate(&self, wavelength: f64) -> Result<Vec<String>> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        if !(self.ell_z > 0.0 && self.ell_x > 0.0) {
            return Err(invalid("ell", "correlation lengths must be positive"));
        }
        if !(self.sigma_nu >= 0.0 && self.sigma_nu.is_finite()) {
            return Err(invalid("sigma_nu", "must be non-negative"));
        }
        let mut warnings = Vec::new();
        if self.epsilon > 0.2 {
            warnings.push(format!("epsilon = {} is not small", self.epsilon));
        }
        for (name, ell) in [("ell_z", self.ell_z), ("ell_x", self.ell_x)] {
            let r = ell / wavelength;
            if !(0.1..=10.0).contains(&r) {
                warnings.push(format!("{name}/lambda = {r:.3} outside [0.1, 10]"));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }

    /// Normalized transverse correlation `rho_x(s)`.
    pub fn rho_x(&self, s: f64) -> f64 {
        (-0.5 * (s / self.ell_x).powi(2)).exp()
    }

    /// Normalized axial correlation `rho_z(s)`.
    pub fn rho_z(&self, s: f64) -> f64 {
        match self.model {
            KernelModel::Gaussian => (-0.5 * (s / self.ell_z).powi(2)).exp(),
            KernelModel::ExponentialGaussian => (-s.abs() / self.ell_z).exp(),
        }
    }

    /// Fourier transform `int rho_z(s) e^{i kappa s} ds`.
    pub fn rho_z_hat(&self, kappa: f64) -> f64 {
        let l = self.ell_z;
        match self.model {
            KernelModel::Gaussian => l * (2.0 * PI).sqrt() * (-0.5 * (kappa * l).powi(2)).exp(),
            KernelModel::ExponentialGaussian => 2.0 * l / (1.0 + (kappa * l).powi(2)),
        }
    }

    /// Fourier transform `int rho_x(s) e^{i kappa s} ds`.
    pub fn rho_x_hat(&self, kappa: f64) -> f64 {
        let l = self.ell_x;
        l * (2.0 * PI).sqrt() * (-0.5 * (kappa * l).powi(2)).exp()
    }

    /// Margin added to each periodic box so that wrap-around correlation is negligible.
    fn z_margin(&self) -> f64 {
        match self.model {
            KernelModel::Gaussian => 8.0 * self.ell_z,
            KernelModel::ExponentialGaussian => 30.0 * self.ell_z,
        }
    }
}

/// Sampling steps for the synthesized field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingGrid {
    pub dz: f64,
    pub dx: f64,
}

impl SamplingGrid {
    pub fn default_for(spec: &MediumSpec, wavelength: f64) -> Self {
        SamplingGrid {
            dz: spec.ell_z / 8.0,
            dx: spec.ell_x.min(wavelength) / 16.0,
        }
    }

    pub fn check(&self, spec: &MediumSpec, wavelength: f64) -> Result<()> {
        if !(self.dz > 0.0 && self.dx > 0.0) {
            return Err(invalid("grid", "steps must be positive"));
        }
        if self.dz > spec.ell_z / 4.0 {
            return Err(Error::Resolution(format!(
                "axial step {} exceeds ell_z/4 = {}",
                self.dz,
                spec.ell_z / 4.0
            )));
        }
        let bound = spec.ell_x.min(wavelength) / 8.0;
        if self.dx > bound {
            return Err(Error::Resolution(format!(
                "transverse step {} exceeds min(ell_x, lambda)/8 = {bound}",
                self.dx
            )));
        }
        Ok(())
    }
}

/// Symmetric coupling matrices `C_jl(z_k)` on the grid `z_k = k dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProcess {
    pub n: usize,
    pub dz: f64,
    /// Row-major `N x N` blocks, one per axial sample.
    pub values: Vec<f64>,
}

impl CouplingProcess {
    pub fn zeros(n: usize, dz: f64, samples: usize) -> Self {
        CouplingProcess {
            n,
            dz,
            values: vec![0.0; n * n * samples],
        }
    }

    pub fn samples(&self) -> usize {
        self.values.len() / (self.n * self.n)
    }

    pub fn extent(&self) -> f64 {
        self.dz * (self.samples() - 1) as f64
    }

    pub fn z(&self, k: usize) -> f64 {
        self.dz * k as f64
    }

    /// Block at sample `k`.
    pub fn at(&self, k: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[k * nn..(k + 1) * nn]
    }

    /// `C_jl(z_k)` with 1-based mode indices.
    pub fn get(&self, k: usize, j: usize, l: usize) -> f64 {
        self.at(k)[(j - 1) * self.n + (l - 1)]
    }

    /// CSV dump with columns `z,j,l,value` over the upper triangle.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z,j,l,value")?;
        for k in 0..self.samples() {
            for j in 1..=self.n {
                for l in j..=self.n {
                    writeln!(w, "{:.16e},{j},{l},{:.16e}", self.z(k), self.get(k, j, l))?;
                }
            }
        }
        Ok(())
    }
}

/// Precomputed synthesis plan for one (medium, basis, extent) triple.
pub struct MediumSampler {
    spec: MediumSpec,
    n: usize,
    a: f64,
    dz: f64,
    samples: usize,
    fft_len: usize,
    /// Spectral amplitude per (x wavenumber, z wavenumber), row-major.
    amplitude: Vec<f64>,
    kx_count: usize,
    /// `int_0^a cos(pi p x / a) e^{i kappa_m x} dx`, indexed `[m][p]`, `p = 0..=2N`.
    projection: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MediumSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MediumSampler")
            .field("n", &self.n)
            .field("samples", &self.samples)
            .field("fft_len", &self.fft_len)
            .field("kx_count", &self.kx_count)
            .finish()
    }
}

impl MediumSampler {
    pub fn new(
        spec: &MediumSpec,
        basis: &ModeBasis,
        z_extent: f64,
        grid: SamplingGrid,
    ) -> Result<Self> {
        if !(z_extent > 0.0) {
            return Err(invalid("z_extent", "must be positive"));
        }
        spec.validate(basis.wavelength())?;
        grid.check(spec, basis.wavelength())?;
        let n = basis.count;
        let a = basis.a;
        let dz = grid.dz;
        let samples = (z_extent / dz - 1e-9).ceil() as usize + 1;
        let needed = samples + (spec.z_margin() / dz).ceil() as usize;
        let fft_len = smooth_length(needed);
        let period_z = fft_len as f64 * dz;

        let period_x = a + 8.0 * spec.ell_x;
        let kx_max = 7.5 / spec.ell_x;
        let kx_count = (kx_max * period_x / (2.0 * PI)).floor() as usize + 1;

        let sigma2 = spec.sigma_nu * spec.sigma_nu;
        let mut amplitude = vec![0.0; kx_count * fft_len];
        for m in 0..kx_count {
            let kx = 2.0 * PI * m as f64 / period_x;
            let sx = spec.rho_x_hat(kx) / period_x * if m == 0 { 1.0 } else { 2.0 };
            for q in 0..fft_len {
                let shifted = if q <= fft_len / 2 {
                    q as f64
                } else {
                    q as f64 - fft_len as f64
                };
                let kz = 2.0 * PI * shifted / period_z;
                let sz = spec.rho_z_hat(kz) / period_z;
                amplitude[m * fft_len + q] = (sigma2 * sx * sz).sqrt();
            }
        }

        let (xs, ws) = quadrature::simpson_grid(0.0, a, grid.dx);
        let pmax = 2 * n;
        let mut projection = vec![Complex64::new(0.0, 0.0); kx_count * (pmax + 1)];
        for m in 0..kx_count {
            let kx = 2.0 * PI * m as f64 / period_x;
            let phase: Vec<Complex64> = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| Complex64::from_polar(w, kx * x))
                .collect();
            for p in 0..=pmax {
                let c = PI * p as f64 / a;
                let s: Complex64 = xs.iter().zip(&phase).map(|(&x, e)| e * (c * x).cos()).sum();
                projection[m * (pmax + 1) + p] = s;
            }
        }

        let fft = FftPlanner::new().plan_fft_inverse(fft_len);
        Ok(MediumSampler {
            spec: *spec,
            n,
            a,
            dz,
            samples,
            fft_len,
            amplitude,
            kx_count,
            projection,
            fft,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    /// Draws realization `index`; deterministic in `(spec.seed, index)`.
    pub fn sample(&self, index: u64) -> CouplingProcess {
        let n = self.n;
        let mut out = CouplingProcess::zeros(n, self.dz, self.samples);
        if self.spec.sigma_nu == 0.0 {
            return out;
        }
        let mut rng = realization_rng(self.spec.seed, index);
        let pcount = 2 * n + 1;
        let mut proj = vec![0.0; pcount * self.samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for m in 0..self.kx_count {
            let amp = &self.amplitude[m * self.fft_len..(m + 1) * self.fft_len];
            for (b, &s) in buf.iter_mut().zip(amp) {
                let g1: f64 = StandardNormal.sample(&mut rng);
                let g2: f64 = StandardNormal.sample(&mut rng);
                *b = Complex64::new(s * g1, s * g2);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let w = &self.projection[m * pcount..(m + 1) * pcount];
            for k in 0..self.samples {
                let g = buf[k];
                let row = &mut proj[k * pcount..(k + 1) * pcount];
                for (r, wp) in row.iter_mut().zip(w) {
                    *r += wp.re * g.re - wp.im * g.im;
                }
            }
        }
        let inv_a = 1.0 / self.a;
        for k in 0..self.samples {
            let d = &proj[k * pcount..(k + 1) * pcount];
            let block = &mut out.values[k * n * n..(k + 1) * n * n];
            for j in 1..=n {
                for l in j..=n {
                    let v = inv_a * (d[j.abs_diff(l)] - d[j + l]);
                    block[(j - 1) * n + (l - 1)] = v;
                    block[(l - 1) * n + (j - 1)] = v;
                }
            }
        }
        out
    }
}

/// RNG stream for one realization.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One-shot synthesis of the coupling process for realization `index`.
pub fn sample_medium(
    spec: &MediumSpec,
    basis: &ModeBasis,
    z_extent: f64,
    index: u64,
    grid: SamplingGrid,
) -> Result<CouplingProcess> {
    Ok(MediumSampler::new(spec, basis, z_extent, grid)?.sample(index))
}

/// Transverse overlap `int int f(x) g(x') rho_x(x - x') dx dx'` on the basis grid.
pub struct TransverseKernel {
    xs: Vec<f64>,
    ws: Vec<f64>,
    rho: Vec<f64>,
}

impl TransverseKernel {
    pub fn new(spec: &MediumSpec, basis: &ModeBasis) -> Self {
        let (xs, ws) = basis.transverse_grid();
        let n = xs.len();
        let mut rho = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                rho[i * n + k] = spec.rho_x(xs[i] - xs[k]);
            }
        }
        TransverseKernel { xs, ws, rho }
    }

    pub fn overlap<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(&self, f: F, g: G) -> f64 {
        let n = self.xs.len();
        let fw: Vec<f64> = self
            .xs
            .iter()
            .zip(&self.ws)
            .map(|(&x, &w)| w * f(x))
            .collect();
        let gw: Vec<f64> = self
            .xs
            .iter()
            .zip(&self.ws)
            .map(|(&x, &w)| w * g(x))
            .collect();
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.rho[i * n..(i + 1) * n];
            let inner: f64 = row.iter().zip(&gw).map(|(r, g)| r * g).sum();
            total += fw[i] * inner;
        }
        total
    }

    /// `X_jl = int int phi_j phi_l(x) phi_j phi_l(x') rho_x(x - x')`, all pairs.
    pub fn pair_overlaps(&self, basis: &ModeBasis) -> Vec<f64> {
        let n = basis.count;
        let mut out = vec![0.0; n * n];
        for j in 1..=n {
            for l in j..=n {
                let f = |x: f64| basis.phi(j, x) * basis.phi(l, x);
                let v = self.overlap(f, f);
                out[(j - 1) * n + (l - 1)] = v;
                out[(l - 1) * n + (j - 1)] = v;
            }
        }
        out
    }

    /// `int int phi_j^2(x) phi_l^2(x') rho_x(x - x')`, all pairs.
    pub fn intensity_overlaps(&self, basis: &ModeBasis) -> Vec<f64> {
        let n = basis.count;
        let mut out = vec![0.0; n * n];
        for j in 1..=n {
            for l in j..=n {
                let v = self.overlap(|x| basis.phi(j, x).powi(2), |x| basis.phi(l, x).powi(2));
                out[(j - 1) * n + (l - 1)] = v;
                out[(l - 1) * n + (j - 1)] = v;
            }
        }
        out
    }
}

/// Axial power spectral density of `C_jl`: `sigma^2 X_jl rho_z_hat(kappa)`.
pub fn coupling_psd(
    spec: &MediumSpec,
    basis: &ModeBasis,
    j: usize,
    l: usize,
    kappa: f64,
) -> Result<f64> {
    if j == 0 || l == 0 || j > basis.count || l > basis.count {
        return Err(invalid("j,l", "mode index out of range"));
    }
    let kernel = TransverseKernel::new(spec, basis);
    let f = |x: f64| basis.phi(j, x) * basis.phi(l, x);
    Ok(spec.sigma_nu.powi(2) * kernel.overlap(f, f) * spec.rho_z_hat(kappa))
}

/// Smallest integer `>= n` whose prime factors are 2, 3 and 5.
fn smooth_length(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveguide::WaveguideSpec;

    fn setup(n: usize) -> (ModeBasis, MediumSpec) {
        let spec = WaveguideSpec::new((n as f64 + 0.5) * PI, 1.0, 1.0).unwrap();
        let basis = ModeBasis::carrier(&spec).unwrap();
        let medium = MediumSpec::default_for(basis.wavelength(), 0.05, 1.0, 7);
        (basis, medium)
    }

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_length(7), 8);
        assert_eq!(smooth_length(1001), 1024);
        assert_eq!(smooth_length(961), 972);
    }

    #[test]
    fn zero_field_gives_zero_coupling() {
        let (basis, mut medium) = setup(3);
        medium.sigma_nu = 0.0;
        let grid = SamplingGrid::default_for(&medium, basis.wavelength());
        let c = sample_medium(&medium, &basis, 50.0, 0, grid).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_grid_rejected() {
        let (basis, medium) = setup(3);
        let mut grid = SamplingGrid::default_for(&medium, basis.wavelength());
        grid.dz = medium.ell_z / 3.0;
        assert!(matches!(
            MediumSampler::new(&medium, &basis, 10.0, grid),
            Err(Error::Resolution(_))
        ));
        let mut grid = SamplingGrid::default_for(&medium, basis.wavelength());
        grid.dx = basis.wavelength() / 7.0;
        assert!(matches!(
            MediumSampler::new(&medium, &basis, 10.0, grid),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn symmetric_and_deterministic() {
        let (basis, medium) = setup(4);
        let grid = SamplingGrid::default_for(&medium, basis.wavelength());
        let s = MediumSampler::new(&medium, &basis, 40.0, grid).unwrap();
        let c1 = s.sample(3);
        let c2 = s.sample(3);
        assert_eq!(c1, c2);
        assert_ne!(c1, s.sample(4));
        for k in 0..c1.samples() {
            for j in 1..=4 {
                for l in 1..=4 {
                    assert_eq!(c1.get(k, j, l), c1.get(k, l, j));
                }
            }
        }
    }

    #[test]
    fn psd_even_and_zero_at_zero_strength() {
        let (basis, mut medium) = setup(3);
        let p = coupling_psd(&medium, &basis, 1, 2, 0.3).unwrap();
        let m = coupling_psd(&medium, &basis, 1, 2, -0.3).unwrap();
        assert_eq!(p, m);
        medium.sigma_nu = 0.0;
        assert_eq!(coupling_psd(&medium, &basis, 1, 2, 0.3).unwrap(), 0.0);
    }
}
