//! Migration functionals and point-spread references.
//!
//! `I_FA` and `I_LA` migrate the correlation to the exact lags
//! `(z / omega0)(beta_j + beta_l)`. Since each frequency sample contributes
//! a product `conj(u_j) v_l`, both functionals factor into two mode sums per
//! node and frequency, which is what the fast paths below evaluate.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlation::{phi_kernel, Components, ModalSpectrum};
use crate::error::{invalid, Error, Result};
use crate::fields::{ArrayGeometry, Reflector};
use crate::quadrature::integrate_gl;
use crate::waveguide::ModeBasis;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
/// Integrable envelope of the second Bessel-function zero, used to bracket the first.
const J1_BRACKET: (f64, f64) = (3.0, 4.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Km,
    Fa,
    La,
}

impl Functional {
    pub fn tag(&self) -> &'static str {
        match self {
            Functional::Km => "KM",
            Functional::Fa => "FA",
            Functional::La => "LA",
        }
    }
}

/// Phase model used to migrate each frequency sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Migration {
    /// Lags `(z / omega0)(beta_j + beta_l)` with carrier wavenumbers.
    #[default]
    CarrierLags,
    /// Per-frequency phases `z (beta_j(omega) + beta_l(omega))`. Identical to
    /// `CarrierLags` for time-harmonic data.
    Dispersive,
}

/// Search grid; `z` is measured from the array plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
}

impl GridSpec {
    /// Square window of half-width `half` around `(x0, z0)` with spacing `step`.
    pub fn centered(x0: f64, z0: f64, half_x: f64, half_z: f64, step: f64) -> Self {
        let nx = (2.0 * half_x / step).round() as usize + 1;
        let nz = (2.0 * half_z / step).round() as usize + 1;
        GridSpec {
            x_min: x0 - 0.5 * (nx - 1) as f64 * step,
            x_max: x0 + 0.5 * (nx - 1) as f64 * step,
            nx,
            z_min: z0 - 0.5 * (nz - 1) as f64 * step,
            z_max: z0 + 0.5 * (nz - 1) as f64 * step,
            nz,
        }
    }

    pub fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.nx)
    }

    pub fn zs(&self) -> Vec<f64> {
        Self::axis(self.z_min, self.z_max, self.nz)
    }

    /// Grid must lie inside the section and beyond the array plane; spacing must be at most `lambda / 8`.
    pub fn validate(&self, basis: &ModeBasis) -> Result<()> {
        if self.nx == 0 || self.nz == 0 {
            return Err(invalid("grid", "needs at least one node per axis"));
        }
        if !(self.x_min > 0.0 && self.x_max < basis.a && self.x_min <= self.x_max) {
            return Err(invalid(
                "grid",
                format!("x range must lie in (0, {})", basis.a),
            ));
        }
        if !(self.z_min >= 0.0 && self.z_min <= self.z_max) {
            return Err(invalid("grid", "z range must be non-negative and ordered"));
        }
        let limit = basis.wavelength() / 8.0 * (1.0 + 1e-12);
        let dx = if self.nx > 1 {
            (self.x_max - self.x_min) / (self.nx - 1) as f64
        } else {
            0.0
        };
        let dz = if self.nz > 1 {
            (self.z_max - self.z_min) / (self.nz - 1) as f64
        } else {
            0.0
        };
        if dx > limit || dz > limit {
            return Err(Error::Resolution(format!(
                "image spacing ({dx}, {dz}) exceeds lambda/8 = {}",
                basis.wavelength() / 8.0
            )));
        }
        Ok(())
    }
}

/// Image values on a grid, stored x-major: `values[ix * nz + iz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub functional: Functional,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Real part of the functional.
    pub values: Vec<f64>,
    pub imag: Vec<f64>,
    /// Modulus of the functional.
    pub magnitude: Vec<f64>,
}

impl ImageGrid {
    pub fn from_complex(functional: Functional, x: &[f64], z: &[f64], c: &[Complex64]) -> Self {
        ImageGrid {
            functional,
            x: x.to_vec(),
            z: z.to_vec(),
            values: c.iter().map(|v| v.re).collect(),
            imag: c.iter().map(|v| v.im).collect(),
            magnitude: c.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn get(&self, ix: usize, iz: usize) -> f64 {
        self.values[ix * self.z.len() + iz]
    }

    /// Grid indices of the largest real value.
    pub fn argmax(&self) -> (usize, usize) {
        let nz = self.z.len();
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / nz, best % nz)
    }

    /// Peak location refined by a three-point parabola on each axis.
    pub fn peak_location(&self) -> (f64, f64) {
        let (ix, iz) = self.argmax();
        let nz = self.z.len();
        let col: Vec<f64> = (0..self.x.len())
            .map(|i| self.values[i * nz + iz])
            .collect();
        let row: Vec<f64> = (0..nz).map(|k| self.values[ix * nz + k]).collect();
        (
            refine_peak(&self.x, &col, ix),
            refine_peak(&self.z, &row, iz),
        )
    }

    /// Cross-range profile through row `iz`.
    pub fn x_profile(&self, iz: usize) -> Vec<f64> {
        let nz = self.z.len();
        (0..self.x.len())
            .map(|i| self.values[i * nz + iz])
            .collect()
    }

    /// Range profile through column `ix`.
    pub fn z_profile(&self, ix: usize) -> Vec<f64> {
        let nz = self.z.len();
        self.values[ix * nz..(ix + 1) * nz].to_vec()
    }

    /// Writes `x,z,value,magnitude` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,z,value,magnitude")?;
        let nz = self.z.len();
        for (ix, x) in self.x.iter().enumerate() {
            for (iz, z) in self.z.iter().enumerate() {
                let k = ix * nz + iz;
                writeln!(
                    w,
                    "{x:.16e},{z:.16e},{:.16e},{:.16e}",
                    self.values[k], self.magnitude[k]
                )?;
            }
        }
        Ok(())
    }
}

fn refine_peak(axis: &[f64], v: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= v.len() {
        return axis[i];
    }
    let (a, b, c) = (v[i - 1], v[i], v[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return axis[i];
    }
    let shift = 0.5 * (a - c) / denom;
    axis[i] + shift.clamp(-0.5, 0.5) * (axis[i + 1] - axis[i])
}

/// Distance from the peak index to the first zero of `profile` on each side.
///
/// A zero is the first sign change (linearly interpolated) or, for profiles
/// that only touch zero, the first local minimum located by a least-squares
/// parabola over `2 fit + 1` samples. Returns `(left, right)` distances.
pub fn first_zero_widths(
    axis: &[f64],
    profile: &[f64],
    peak: usize,
    fit: usize,
) -> Option<(f64, f64)> {
    let side = |dir: isize| -> Option<f64> {
        let mut i = peak as isize;
        loop {
            let next = i + dir;
            if next < 0 || next as usize >= profile.len() {
                return None;
            }
            let (a, b) = (profile[i as usize], profile[next as usize]);
            if b <= 0.0 && a > 0.0 {
                let t = a / (a - b);
                let x = axis[i as usize] + t * (axis[next as usize] - axis[i as usize]);
                return Some((x - axis[peak]).abs());
            }
            let after = next + dir;
            if after >= 0
                && (after as usize) < profile.len()
                && b <= a
                && b < profile[after as usize]
            {
                let x = local_min_fit(axis, profile, next as usize, fit);
                return Some((x - axis[peak]).abs());
            }
            i = next;
        }
    };
    Some((side(-1)?, side(1)?))
}

/// Full width at half maximum of `profile` around `peak`, with linear interpolation.
pub fn half_max_width(axis: &[f64], profile: &[f64], peak: usize) -> Option<f64> {
    let half = 0.5 * profile[peak];
    let cross = |dir: isize| -> Option<f64> {
        let mut i = peak as isize;
        loop {
            let next = i + dir;
            if next < 0 || next as usize >= profile.len() {
                return None;
            }
            let (a, b) = (profile[i as usize], profile[next as usize]);
            if b <= half {
                let t = (a - half) / (a - b);
                return Some(axis[i as usize] + t * (axis[next as usize] - axis[i as usize]));
            }
            i = next;
        }
    };
    Some(cross(1)? - cross(-1)?)
}

fn local_min_fit(axis: &[f64], v: &[f64], i: usize, fit: usize) -> f64 {
    let lo = i.saturating_sub(fit);
    let hi = (i + fit).min(v.len() - 1);
    if hi - lo < 2 {
        return axis[i];
    }
    let x0 = axis[i];
    // Least-squares y = c0 + c1 t + c2 t^2 in t = x - x0.
    let mut s = [0.0f64; 5];
    let mut r = [0.0f64; 3];
    for k in lo..=hi {
        let t = axis[k] - x0;
        let mut p = 1.0;
        for m in s.iter_mut() {
            *m += p;
            p *= t;
        }
        r[0] += v[k];
        r[1] += v[k] * t;
        r[2] += v[k] * t * t;
    }
    let m = nalgebra::Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
    let Some(c) = m.lu().solve(&nalgebra::Vector3::new(r[0], r[1], r[2])) else {
        return x0;
    };
    if c[2] <= 0.0 {
        return x0;
    }
    let t = (-c[1] / (2.0 * c[2])).clamp(axis[lo] - x0, axis[hi] - x0);
    x0 + t
}

/// `Psi(x^S, z^S; x_r, z_r) = (1/N) sum_n phi_n(x_r) phi_n(x^S) e^{i beta_n (z_r - z^S)}`.
pub fn psi(x_s: f64, z_s: f64, x_r: f64, z_r: f64, basis: &ModeBasis) -> Complex64 {
    let n = basis.n();
    (1..=n)
        .map(|j| {
            Complex64::from_polar(
                basis.phi(j, x_r) * basis.phi(j, x_s),
                basis.beta(j) * (z_r - z_s),
            )
        })
        .sum::<Complex64>()
        / n as f64
}

/// `Phi_j(x)`; see [`phi_kernel`].
pub fn phi_j(power: i32, x: f64, basis: &ModeBasis) -> f64 {
    phi_kernel(power, x, basis)
}

/// `I_KM = (1/N) sum_j beta_j phi_j(x^S) e^{-i beta_j z^S} p_j`.
pub fn kirchhoff_image(
    p: &[Complex64],
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
) -> Result<ImageGrid> {
    let n = basis.n();
    if p.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: p.len(),
        });
    }
    let coeff = coefficients(basis, xs, 1);
    let mut out = Vec::with_capacity(xs.len() * zs.len());
    let phased: Vec<Vec<Complex64>> = zs
        .iter()
        .map(|&z| {
            (0..n)
                .map(|j| p[j] * Complex64::from_polar(1.0, -basis.wavenumbers[j] * z))
                .collect()
        })
        .collect();
    for c in &coeff {
        for ph in &phased {
            let v: Complex64 = c.iter().zip(ph).map(|(a, b)| b * a).sum();
            out.push(v / n as f64);
        }
    }
    Ok(ImageGrid::from_complex(Functional::Km, xs, zs, &out))
}

/// `beta_j^power phi_j(x)` for each `x`.
fn coefficients(basis: &ModeBasis, xs: &[f64], power: i32) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            (1..=basis.n())
                .map(|j| basis.beta(j).powi(power) * basis.phi(j, x))
                .collect()
        })
        .collect()
}

/// Factorized migration: for each frequency sample and component pair `(u, v)`,
/// `I += w (i / N^2) [conj(B(u)) A(v) - conj(A(u)) B(v)]` with
/// `A(u) = sum_j c_j(x) e^{i theta_j} u_j`, `B(u) = sum_j c_j(x) e^{-i theta_j} u_j`
/// and `theta_j = omega z beta_j / omega0` (or `z beta_j(omega)` for [`Migration::Dispersive`]).
#[allow(clippy::too_many_arguments)]
fn migrate<F>(
    spec: &ModalSpectrum,
    comps: Components,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
    power: i32,
    migration: Migration,
    premap: F,
) -> Vec<Complex64>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = basis.n();
    let nz = zs.len();
    let coeff = coefficients(basis, xs, power);
    let pairs = comps.pairs();
    let scale = 1.0 / (n * n) as f64;
    let mut out = vec![ZERO; xs.len() * nz];
    let omega0 = basis.omega;
    // Per z: e^{i theta} u and e^{-i theta} u for primary (0) and secondary (1).
    let mut au = vec![vec![ZERO; n]; 2];
    let mut bu = vec![vec![ZERO; n]; 2];
    for s in &spec.samples {
        let fields = [premap(&s.primary), premap(&s.secondary)];
        let rate: Vec<f64> = match migration {
            Migration::CarrierLags => basis
                .wavenumbers
                .iter()
                .map(|b| s.omega * b / omega0)
                .collect(),
            Migration::Dispersive => basis
                .eigenvalues
                .iter()
                .map(|lam| ((s.omega / basis.c0).powi(2) - lam).max(0.0).sqrt())
                .collect(),
        };
        let needed = [
            pairs.iter().any(|&(u, v)| !u || !v),
            pairs.iter().any(|&(u, v)| u || v),
        ];
        for (iz, &z) in zs.iter().enumerate() {
            for f in 0..2 {
                if !needed[f] {
                    continue;
                }
                for j in 0..n {
                    let e = Complex64::from_polar(1.0, z * rate[j]);
                    au[f][j] = e * fields[f][j];
                    bu[f][j] = e.conj() * fields[f][j];
                }
            }
            for (ix, c) in coeff.iter().enumerate() {
                let mut a = [ZERO; 2];
                let mut b = [ZERO; 2];
                for f in 0..2 {
                    if !needed[f] {
                        continue;
                    }
                    for j in 0..n {
                        a[f] += au[f][j] * c[j];
                        b[f] += bu[f][j] * c[j];
                    }
                }
                let mut v = ZERO;
                for &(u, w) in &pairs {
                    let (u, w) = (u as usize, w as usize);
                    v += b[u].conj() * a[w] - a[u].conj() * b[w];
                }
                out[ix * nz + iz] += I * v * (s.weight * scale);
            }
        }
    }
    out
}

/// Full-aperture functional `I_FA` from modal data (factorized evaluation).
pub fn full_aperture_image(
    spec: &ModalSpectrum,
    comps: Components,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
) -> Result<ImageGrid> {
    full_aperture_image_with(spec, comps, basis, xs, zs, Migration::CarrierLags)
}

/// [`full_aperture_image`] with an explicit phase model.
pub fn full_aperture_image_with(
    spec: &ModalSpectrum,
    comps: Components,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
    migration: Migration,
) -> Result<ImageGrid> {
    check_spectrum(spec, basis)?;
    let out = migrate(spec, comps, basis, xs, zs, 1, migration, |u| u.to_vec());
    Ok(ImageGrid::from_complex(Functional::Fa, xs, zs, &out))
}

/// Limited-aperture functional `I_LA`: the operators `(Delta + k^2)` act as
/// `beta^2` on each mode and the aperture enters through `G_qm = int_A phi_q phi_m`.
pub fn limited_aperture_image(
    spec: &ModalSpectrum,
    comps: Components,
    geometry: &ArrayGeometry,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
) -> Result<ImageGrid> {
    check_spectrum(spec, basis)?;
    let (lo, hi) = geometry.bounds(basis.a);
    if !(hi > lo) {
        return Err(invalid("aperture", "degenerate aperture"));
    }
    if hi - lo < 2.0 * basis.wavelength() {
        log::warn!("aperture {} is not large against the wavelength", hi - lo);
    }
    let n = basis.n();
    let g = geometry.gram(basis);
    let b2: Vec<f64> = basis.wavenumbers.iter().map(|b| b * b).collect();
    let premap = |u: &[Complex64]| -> Vec<Complex64> {
        (0..n)
            .map(|q| (0..n).map(|m| u[m] * (g[q * n + m] * b2[m])).sum())
            .collect()
    };
    let out = migrate(
        spec,
        comps,
        basis,
        xs,
        zs,
        0,
        Migration::CarrierLags,
        premap,
    );
    Ok(ImageGrid::from_complex(Functional::La, xs, zs, &out))
}

fn check_spectrum(spec: &ModalSpectrum, basis: &ModeBasis) -> Result<()> {
    if spec.samples.is_empty() {
        return Err(invalid("spectrum", "no frequency samples"));
    }
    if spec.n() != basis.n() {
        return Err(Error::Dimension {
            expected: basis.n(),
            got: spec.n(),
        });
    }
    Ok(())
}

/// Direct `O(N^2)` evaluation of
/// `I_FA+- = -+(i/N^2) sum_{j,l} w_j w_l phi_j(x) phi_l(x) C^{jl}(+-(z/omega0)(beta_j + beta_l))`
/// with mode weights `w_j = beta_j^power` and a caller-supplied `C^{jl}(tau)` (1-based).
pub fn modal_migration<C>(
    corr: C,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
    power: i32,
) -> Vec<Complex64>
where
    C: Fn(usize, usize, f64) -> Complex64,
{
    let n = basis.n();
    let omega0 = basis.omega;
    let coeff = coefficients(basis, xs, power);
    let mut out = Vec::with_capacity(xs.len() * zs.len());
    for c in &coeff {
        for &z in zs {
            let mut plus = ZERO;
            let mut minus = ZERO;
            for j in 0..n {
                for l in 0..n {
                    let tau = z / omega0 * (basis.wavenumbers[j] + basis.wavenumbers[l]);
                    let w = c[j] * c[l];
                    plus += corr(j + 1, l + 1, tau) * w;
                    minus += corr(j + 1, l + 1, -tau) * w;
                }
            }
            out.push((-I * plus + I * minus) / (n * n) as f64);
        }
    }
    out
}

/// Generic `I_FA` from a lag-domain modal correlation.
pub fn full_aperture_image_generic<C>(
    corr: C,
    basis: &ModeBasis,
    xs: &[f64],
    zs: &[f64],
) -> ImageGrid
where
    C: Fn(usize, usize, f64) -> Complex64,
{
    let out = modal_migration(corr, basis, xs, zs, 1);
    ImageGrid::from_complex(Functional::Fa, xs, zs, &out)
}

/// Mean images in the equipartition limit `E[conj(b_j) b_m] = delta_jm P / N`,
/// `P = sum_l phi_l(x_s)^2 / (4 beta_l)`, for time-harmonic data.
///
/// Every mode sum entering the factorized functional is linear in the arrival
/// amplitudes `b`, so its mean product reduces to an inner product of the
/// coefficient vectors.
pub fn expected_image(
    functional: Functional,
    comps: Components,
    basis: &ModeBasis,
    x_s: f64,
    reflector: &Reflector,
    geometry: Option<&ArrayGeometry>,
    xs: &[f64],
    zs: &[f64],
) -> Result<ImageGrid> {
    let n = basis.n();
    let beta = &basis.wavenumbers;
    let power: f64 = (1..=n)
        .map(|l| basis.phi(l, x_s).powi(2) / (4.0 * basis.beta(l)))
        .sum();
    let cov = power / n as f64;
    if functional == Functional::Km {
        let zeros = vec![ZERO; xs.len() * zs.len()];
        return Ok(ImageGrid::from_complex(functional, xs, zs, &zeros));
    }
    // Pre-map M (identity for FA, G diag(beta^2) for LA) and outer weight power.
    let (m, outer): (Vec<f64>, i32) = match functional {
        Functional::Fa => {
            let mut id = vec![0.0; n * n];
            for j in 0..n {
                id[j * n + j] = 1.0;
            }
            (id, 1)
        }
        Functional::La => {
            let geo = geometry.ok_or_else(|| {
                invalid("geometry", "limited-aperture mean needs the array geometry")
            })?;
            let g = geo.gram(basis);
            let mut mm = vec![0.0; n * n];
            for q in 0..n {
                for k in 0..n {
                    mm[q * n + k] = g[q * n + k] * beta[k] * beta[k];
                }
            }
            (mm, 0)
        }
        Functional::Km => unreachable!(),
    };
    let kappa = I * (0.5 * basis.omega * basis.omega * reflector.sigma_r);
    // Secondary shape s_j and illumination coefficients c'_m.
    let shape: Vec<Complex64> = (0..n)
        .map(|j| {
            Complex64::from_polar(
                basis.phi(j + 1, reflector.x_r) / beta[j],
                beta[j] * reflector.z_r,
            )
        })
        .collect();
    let illum: Vec<Complex64> = (0..n)
        .map(|j| {
            Complex64::from_polar(
                basis.phi(j + 1, reflector.x_r) / beta[j].sqrt(),
                beta[j] * reflector.z_r,
            )
        })
        .collect();
    let mapped_shape: Vec<Complex64> = (0..n)
        .map(|q| (0..n).map(|k| shape[k] * m[q * n + k]).sum())
        .collect();
    let coeff = coefficients(basis, xs, outer);
    let pairs = comps.pairs();
    let scale = 1.0 / (n * n) as f64;
    let mut out = Vec::with_capacity(xs.len() * zs.len());
    let inner = |f: &[Complex64], g: &[Complex64]| -> Complex64 {
        f.iter().zip(g).map(|(a, b)| a.conj() * b).sum()
    };
    for c in &coeff {
        for &z in zs {
            // Coefficient vectors over b for A and B of the primary and secondary fields.
            let mut vecs = [
                [vec![ZERO; n], vec![ZERO; n]],
                [vec![ZERO; n], vec![ZERO; n]],
            ];
            let mut sa = ZERO;
            let mut sb = ZERO;
            for q in 0..n {
                let e = Complex64::from_polar(c[q], z * beta[q]);
                for k in 0..n {
                    let t = m[q * n + k] / beta[k].sqrt();
                    vecs[0][0][k] += e * t;
                    vecs[0][1][k] += e.conj() * t;
                }
                sa += e * mapped_shape[q];
                sb += e.conj() * mapped_shape[q];
            }
            for k in 0..n {
                vecs[1][0][k] = sa * kappa * illum[k];
                vecs[1][1][k] = sb * kappa * illum[k];
            }
            let mut v = ZERO;
            for &(u, w) in &pairs {
                let (u, w) = (u as usize, w as usize);
                v += inner(&vecs[u][1], &vecs[w][0]) - inner(&vecs[u][0], &vecs[w][1]);
            }
            out.push(I * v * (cov * scale));
        }
    }
    Ok(ImageGrid::from_complex(functional, xs, zs, &out))
}

/// Closed-form mean of `I_FA = I_FA+ + I_FA-` in the equipartition limit:
/// the primary background `-+(i Phi_{-1} / 4N) (1/N) sum beta_j phi_j^2 e^{-+2i beta_j z}`
/// plus the `Psi^2` reflector terms with coefficient `omega0^2 sigma_r Phi_{-1}(x_s) / 8`.
pub fn expected_full_aperture_closed_form(
    basis: &ModeBasis,
    x_s: f64,
    reflector: &Reflector,
    xs: &[f64],
    zs: &[f64],
) -> ImageGrid {
    let n = basis.n() as f64;
    let phi_m1 = phi_kernel(-1, x_s, basis);
    let c = basis.omega * basis.omega * reflector.sigma_r * phi_m1 / 8.0;
    let (xr, zr) = (reflector.x_r, reflector.z_r);
    let mut out = Vec::with_capacity(xs.len() * zs.len());
    for &x in xs {
        for &z in zs {
            let mut bg = [ZERO; 2];
            for j in 1..=basis.n() {
                let w = basis.beta(j) * basis.phi(j, x).powi(2) / n;
                bg[0] += Complex64::from_polar(w, -2.0 * basis.beta(j) * z);
                bg[1] += Complex64::from_polar(w, 2.0 * basis.beta(j) * z);
            }
            let plus = -I * phi_m1 / (4.0 * n) * bg[0] + c * psi(x, z, xr, zr, basis).powi(2)
                - c * psi(x, z, xr, -zr, basis).powi(2);
            let minus = I * phi_m1 / (4.0 * n) * bg[1] - c * psi(x, -z, xr, zr, basis).powi(2)
                + c * psi(x, -z, xr, -zr, basis).powi(2);
            out.push(plus + minus);
        }
    }
    ImageGrid::from_complex(Functional::Fa, xs, zs, &out)
}

/// Leading-order mean peak `(omega0^2 sigma_r / 4) Phi_{-1}(x_s) Phi_0(x_r)^2`.
pub fn mean_peak_discrete(basis: &ModeBasis, x_s: f64, reflector: &Reflector) -> f64 {
    0.25 * basis.omega.powi(2)
        * reflector.sigma_r
        * phi_kernel(-1, x_s, basis)
        * phi_kernel(0, reflector.x_r, basis).powi(2)
}

/// Peak amplitude `pi omega0^2 sigma_r / (8 a^3)` of the mean full-aperture image.
pub fn peak_amplitude(omega0: f64, sigma_r: f64, a: f64) -> f64 {
    PI * omega0 * omega0 * sigma_r / (8.0 * a.powi(3))
}

/// `int_{-pi/2}^{pi/2} cos^p(theta) e^{i (eta cos + xi sin)} d theta`.
pub fn aperture_integral(power: i32, xi: f64, eta: f64) -> Complex64 {
    let panels = 32 + (xi.abs() + eta.abs()).ceil() as usize;
    let re = integrate_gl(
        |t| t.cos().powi(power) * (eta * t.cos() + xi * t.sin()).cos(),
        -0.5 * PI,
        0.5 * PI,
        panels,
        8,
    );
    let im = integrate_gl(
        |t| t.cos().powi(power) * (eta * t.cos() + xi * t.sin()).sin(),
        -0.5 * PI,
        0.5 * PI,
        panels,
        8,
    );
    Complex64::new(re, im)
}

/// Continuum mean of `I_FA`: `(pi omega0^2 sigma_r / 32 a^3) Re{[int cos e^{i(...)}]^2}`,
/// with `xi = k (x_r - x^S)` and `eta = k (z_r - z^S)`.
pub fn continuum_full_aperture(omega0: f64, sigma_r: f64, a: f64, xi: f64, eta: f64) -> f64 {
    PI * omega0 * omega0 * sigma_r / (32.0 * a.powi(3)) * aperture_integral(1, xi, eta).powi(2).re
}

/// Continuum mean of `I_LA` over an aperture of width `width`:
/// `(pi omega0^2 k^2 sigma_r width^2 / 32 a^5) Re{[int cos^2 e^{i(...)}]^2}`.
pub fn continuum_limited_aperture(
    omega0: f64,
    k: f64,
    sigma_r: f64,
    a: f64,
    width: f64,
    xi: f64,
    eta: f64,
) -> f64 {
    PI * omega0 * omega0 * k * k * sigma_r * width * width / (32.0 * a.powi(5))
        * aperture_integral(2, xi, eta).powi(2).re
}

pub fn bessel_j0(x: f64) -> f64 {
    libm::j0(x)
}

pub fn bessel_j1(x: f64) -> f64 {
    libm::j1(x)
}

/// `J_1'(x) = (J_0(x) - J_2(x)) / 2`.
pub fn bessel_j1_prime(x: f64) -> f64 {
    0.5 * (libm::j0(x) - libm::jn(2, x))
}

/// `J_n(x) = (1/pi) int_0^pi cos(n t - x sin t) dt` by the trapezoid rule on the
/// periodic integrand, which converges geometrically.
pub fn bessel_jn_trapezoid(order: i32, x: f64) -> f64 {
    let m = 64 + 2 * x.abs().ceil() as usize;
    let h = 2.0 * PI / m as f64;
    (0..m)
        .map(|i| {
            let t = i as f64 * h;
            (order as f64 * t - x * t.sin()).cos()
        })
        .sum::<f64>()
        / m as f64
}

/// `h(xi) = pi^2 J_1(xi)^2 / xi^2` with the limit `pi^2 / 4` at zero.
pub fn psf_h(xi: f64) -> f64 {
    if xi.abs() < 1e-6 {
        // J_1(x)/x = 1/2 - x^2/16 + ...
        let r = 0.5 - xi * xi / 16.0;
        return PI * PI * r * r;
    }
    let r = bessel_j1(xi) / xi;
    PI * PI * r * r
}

/// `g(eta) = pi^2 J_1'(eta)^2 - [int cos^2 sin(eta cos) d theta]^2`.
pub fn psf_g(eta: f64) -> f64 {
    let s = integrate_gl(
        |t| t.cos().powi(2) * (eta * t.cos()).sin(),
        -0.5 * PI,
        0.5 * PI,
        32 + eta.abs().ceil() as usize,
        8,
    );
    PI * PI * bessel_j1_prime(eta).powi(2) - s * s
}

/// `h` and `g` evaluated directly from `Re{[int cos^2 e^{i(...)}]^2}`.
pub fn psf_h_direct(xi: f64) -> f64 {
    aperture_integral(2, xi, 0.0).powi(2).re
}

pub fn psf_g_direct(eta: f64) -> f64 {
    aperture_integral(2, 0.0, eta).powi(2).re
}

/// First positive zero of `J_1` by bracketed bisection refined with secant steps.
pub fn first_j1_zero() -> f64 {
    let (mut lo, mut hi) = J1_BRACKET;
    let (mut flo, mut fhi) = (bessel_j1(lo), bessel_j1(hi));
    debug_assert!(flo * fhi < 0.0);
    for _ in 0..200 {
        let secant = hi - fhi * (hi - lo) / (fhi - flo);
        let mid = if secant > lo && secant < hi {
            0.5 * (secant + 0.5 * (lo + hi))
        } else {
            0.5 * (lo + hi)
        };
        let fm = bessel_j1(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Tabulates `h` and `g` on `[-max, max]`.
pub fn psf_table(max: f64, points: usize) -> Vec<(f64, f64, f64)> {
    GridSpec::axis(-max, max, points)
        .into_iter()
        .map(|s| (s, psf_h(s), psf_g(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_routes_agree() {
        for &x in &[0.0, 0.3, 1.0, 3.8, 7.5, 20.0, 45.0] {
            assert!(
                (bessel_j1(x) - bessel_jn_trapezoid(1, x)).abs() < 1e-13,
                "x={x}"
            );
            assert!((bessel_j0(x) - bessel_jn_trapezoid(0, x)).abs() < 1e-13);
            let d = 0.5 * (bessel_jn_trapezoid(0, x) - bessel_jn_trapezoid(2, x));
            assert!((bessel_j1_prime(x) - d).abs() < 1e-13);
        }
    }

    #[test]
    fn psf_closed_forms_match_direct_integrals() {
        for &s in &[0.0, 0.5, 1.7, 3.0, 6.2, 11.0] {
            assert!((psf_h(s) - psf_h_direct(s)).abs() < 1e-12, "h at {s}");
            assert!((psf_g(s) - psf_g_direct(s)).abs() < 1e-12, "g at {s}");
        }
    }

    #[test]
    fn first_zero_of_profile_is_found() {
        let axis: Vec<f64> = (0..81).map(|i| -4.0 + 0.1 * i as f64).collect();
        let cosine: Vec<f64> = axis.iter().map(|x| (x * PI / 4.0).cos()).collect();
        let (l, r) = first_zero_widths(&axis, &cosine, 40, 3).unwrap();
        assert!((l - 2.0).abs() < 1e-9 && (r - 2.0).abs() < 1e-9);
        let square: Vec<f64> = cosine.iter().map(|c| c * c).collect();
        let (l, r) = first_zero_widths(&axis, &square, 40, 3).unwrap();
        assert!((l - 2.0).abs() < 1e-3 && (r - 2.0).abs() < 1e-3, "{l} {r}");
    }
}
