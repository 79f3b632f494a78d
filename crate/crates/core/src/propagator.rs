//! Coupled-mode propagation through the random section.
//!
//! In the physical axial coordinate `z` the right-going amplitudes obey
//! `da/dz = eps H(z) a` with
//! `H_jl = (i k^2 / 2) C_jl(z) / sqrt(beta_j beta_l) e^{i (beta_l - beta_j) z}`.
//! Each step applies `exp(int H dz)` where the coupling is linear between
//! samples and the beat phase is integrated exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::medium::{CouplingProcess, MediumSpec};
use crate::waveguide::ModeBasis;

const UNITARITY_TOL: f64 = 1e-8;
const TAYLOR_TOL: f64 = 1e-17;
/// Largest row-sum norm handled by a single Taylor series.
const TAYLOR_THETA: f64 = 2.0;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
// Gauss-Legendre nodes on [0, 1] and the commutator-free fourth-order weights.
const GL_LO: f64 = 0.5 - 0.288_675_134_594_812_9;
const GL_HI: f64 = 0.5 + 0.288_675_134_594_812_9;
const CF_A1: f64 = 0.25 - 0.288_675_134_594_812_9;
const CF_A2: f64 = 0.25 + 0.288_675_134_594_812_9;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Two exponentials of Gauss-Legendre samples of the generator (fourth order).
    #[default]
    Magnus4,
    /// One exponential of the step-integrated generator (second order).
    ExponentialMidpoint,
}

/// Transmission matrix of the random section at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMatrix {
    pub omega: f64,
    pub matrix: DMatrix<Complex64>,
    /// Normalized propagation distance; the physical length is `l / epsilon^2`.
    pub l: f64,
    pub epsilon: f64,
}

impl PropagatorMatrix {
    pub fn identity(omega: f64, n: usize, epsilon: f64) -> Self {
        PropagatorMatrix {
            omega,
            matrix: DMatrix::identity(n, n),
            l: 0.0,
            epsilon,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |(T^dagger T - I)_jl|`.
    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.matrix)
    }

    /// Entry with 1-based indices.
    pub fn get(&self, j: usize, l: usize) -> Complex64 {
        self.matrix[(j - 1, l - 1)]
    }
}

pub fn unitarity_defect(t: &DMatrix<Complex64>) -> f64 {
    let g = t.adjoint() * t;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for k in 0..n {
            let target = if i == k { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, k)] - target).norm());
        }
    }
    worst
}

/// Temporal character of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    TimeHarmonic,
    /// Gaussian envelope `|f0(h)|^2` of standard deviation `width` in the
    /// baseband variable `h`, with `omega = omega0 + eps^alpha h`.
    Broadband { alpha: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub x_s: f64,
    #[serde(default)]
    pub kind: SourceKind,
}

impl SourceSpec {
    pub fn time_harmonic(x_s: f64) -> Self {
        SourceSpec {
            x_s,
            kind: SourceKind::TimeHarmonic,
        }
    }

    pub fn validate(&self, a: f64) -> Result<()> {
        if !(self.x_s > 0.0 && self.x_s < a) {
            return Err(invalid(
                "x_s",
                format!("must lie in (0, {a}), got {}", self.x_s),
            ));
        }
        if let SourceKind::Broadband { alpha, width } = self.kind {
            if !(alpha > 1.0 && alpha < 2.0) {
                return Err(invalid(
                    "alpha",
                    format!("broadband needs 1 < alpha < 2, got {alpha}"),
                ));
            }
            if !(width > 0.0) {
                return Err(invalid("width", "envelope width must be positive"));
            }
        }
        Ok(())
    }
}

/// `a_l(0) = f_hat phi_l(x_s) / (2 i sqrt(beta_l))`.
pub fn initial_amplitudes_with(x_s: f64, f_hat: Complex64, basis: &ModeBasis) -> Vec<Complex64> {
    (1..=basis.count)
        .map(|l| f_hat * basis.phi(l, x_s) / (2.0 * I * basis.beta(l).sqrt()))
        .collect()
}

/// Initial amplitudes with unit source spectrum at the basis frequency.
///
/// Broadband envelopes enter later as weights of the frequency integral.
pub fn initial_amplitudes(source: &SourceSpec, basis: &ModeBasis) -> Vec<Complex64> {
    initial_amplitudes_with(source.x_s, Complex64::new(1.0, 0.0), basis)
}

/// `T a0`.
pub fn transmitted_amplitudes(t: &PropagatorMatrix, a0: &[Complex64]) -> Result<Vec<Complex64>> {
    if a0.len() != t.n() {
        return Err(Error::Dimension {
            expected: t.n(),
            got: a0.len(),
        });
    }
    let v = &t.matrix * DVector::from_column_slice(a0);
    Ok(v.iter().copied().collect())
}

/// Stepping plan for one frequency.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    omega: f64,
    epsilon: f64,
    beta: Vec<f64>,
    /// `eps (i k^2 / 2) / sqrt(beta_j beta_l)`, row-major.
    prefactor: Vec<Complex64>,
    step: f64,
    scheme: Scheme,
}

impl Propagator {
    /// Validates `step` against `min(ell_z, 2 pi / max beat) / 8`.
    pub fn new(basis: &ModeBasis, epsilon: f64, ell_z: f64, step: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        let beat = basis.max_beat();
        let beat_len = if beat > 0.0 {
            2.0 * PI / beat
        } else {
            f64::INFINITY
        };
        let bound = ell_z.min(beat_len) / 8.0;
        if !(step > 0.0) || step > bound * (1.0 + 1e-12) {
            return Err(Error::Stability { step, bound });
        }
        let n = basis.count;
        let k2 = basis.k * basis.k;
        let mut prefactor = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            for l in 0..n {
                let s = (basis.wavenumbers[j] * basis.wavenumbers[l]).sqrt();
                prefactor[j * n + l] = I * (epsilon * 0.5 * k2 / s);
            }
        }
        Ok(Propagator {
            n,
            omega: basis.omega,
            epsilon,
            beta: basis.wavenumbers.clone(),
            prefactor,
            step,
            scheme: Scheme::default(),
        })
    }

    /// Plan using half the stability bound as step.
    pub fn with_default_step(basis: &ModeBasis, medium: &MediumSpec) -> Result<Self> {
        Self::new(
            basis,
            medium.epsilon,
            medium.ell_z,
            default_step(basis, medium.ell_z),
        )
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Full transmission matrix over normalized distance `l`.
    pub fn matrix(&self, coupling: &CouplingProcess, l: f64) -> Result<PropagatorMatrix> {
        let n = self.n;
        let mut x = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            x[j * n + j] = Complex64::new(1.0, 0.0);
        }
        self.run(coupling, l, &mut x, n)?;
        let matrix = DMatrix::from_row_slice(n, n, &x);
        let out = PropagatorMatrix {
            omega: self.omega,
            matrix,
            l,
            epsilon: self.epsilon,
        };
        let defect = out.unitarity_defect();
        if !(defect <= UNITARITY_TOL) {
            return Err(Error::Integration {
                defect,
                tolerance: UNITARITY_TOL,
            });
        }
        Ok(out)
    }

    /// `T a0` without forming `T`.
    pub fn vector(
        &self,
        coupling: &CouplingProcess,
        l: f64,
        a0: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        if a0.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: a0.len(),
            });
        }
        let mut x = a0.to_vec();
        self.run(coupling, l, &mut x, 1)?;
        let before: f64 = a0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let after: f64 = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let defect = (after - before).abs() / before.max(f64::MIN_POSITIVE);
        if !(defect <= UNITARITY_TOL) {
            return Err(Error::Integration {
                defect,
                tolerance: UNITARITY_TOL,
            });
        }
        Ok(x)
    }

    /// Several columns at once; `x` is row-major `N x cols`.
    pub fn columns(
        &self,
        coupling: &CouplingProcess,
        l: f64,
        x: &mut [Complex64],
        cols: usize,
    ) -> Result<()> {
        if x.len() != self.n * cols {
            return Err(Error::Dimension {
                expected: self.n * cols,
                got: x.len(),
            });
        }
        self.run(coupling, l, x, cols)
    }

    fn run(
        &self,
        coupling: &CouplingProcess,
        l: f64,
        x: &mut [Complex64],
        cols: usize,
    ) -> Result<()> {
        self.run_between(coupling, 0.0, l, x, cols)
    }

    /// Advances `x` from normalized distance `l_from` to `l_to`.
    fn run_between(
        &self,
        coupling: &CouplingProcess,
        l_from: f64,
        l_to: f64,
        x: &mut [Complex64],
        cols: usize,
    ) -> Result<()> {
        if !(l_from >= 0.0 && l_to >= l_from) {
            return Err(invalid(
                "l",
                "propagation distances must be non-negative and increasing",
            ));
        }
        if coupling.n != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: coupling.n,
            });
        }
        let scale = 1.0 / (self.epsilon * self.epsilon);
        let (z_a, z_b) = (l_from * scale, l_to * scale);
        if z_b == z_a {
            return Ok(());
        }
        if z_b > coupling.extent() * (1.0 + 1e-12) {
            return Err(invalid(
                "l",
                format!(
                    "physical length {z_b} exceeds coupling extent {}",
                    coupling.extent()
                ),
            ));
        }
        let n = self.n;
        let dz = coupling.dz;
        let sub = (dz / self.step - 1e-9).ceil().max(1.0) as usize;
        let h = dz / sub as f64;

        let mut ws = Workspace::new(n, cols);
        let mut om1 = vec![Complex64::new(0.0, 0.0); n * n];
        let mut om2 = vec![Complex64::new(0.0, 0.0); n * n];
        let mut first = vec![Complex64::new(0.0, 0.0); n * n];
        let mut second = vec![Complex64::new(0.0, 0.0); n * n];
        let mut c0 = vec![0.0; n * n];
        let mut c1 = vec![0.0; n * n];
        let (ta, tb) = match self.scheme {
            Scheme::ExponentialMidpoint => self.weights(h),
            Scheme::Magnus4 => (Vec::new(), Vec::new()),
        };
        // Steps are aligned to multiples of h so that no step straddles a
        // kink of the piecewise-linear coupling.
        let mut z = z_a;
        while z < z_b - 1e-12 * h {
            let next = (((z / h) + 1e-9).floor() + 1.0) * h;
            let end = next.min(z_b);
            let len = end - z;
            match self.scheme {
                Scheme::Magnus4 => {
                    let (t1, t2) = (len * GL_LO, len * GL_HI);
                    self.interpolate(coupling, z + t1, &mut c0);
                    self.interpolate(coupling, z + t2, &mut c1);
                    self.sampled(z + t1, &c0, &mut om1);
                    self.sampled(z + t2, &c1, &mut om2);
                    // exp(h (a2 H1 + a1 H2)) first, then exp(h (a1 H1 + a2 H2)).
                    for i in 0..n * n {
                        first[i] = (om1[i] * CF_A2 + om2[i] * CF_A1) * len;
                        second[i] = (om1[i] * CF_A1 + om2[i] * CF_A2) * len;
                    }
                    apply_exp(&first, x, cols, n, &mut ws);
                    apply_exp(&second, x, cols, n, &mut ws);
                }
                Scheme::ExponentialMidpoint => {
                    self.interpolate(coupling, z, &mut c0);
                    self.interpolate(coupling, end, &mut c1);
                    if (len - h).abs() <= 1e-12 * h {
                        self.generator(z, &c0, &c1, &ta, &tb, &mut om1);
                    } else {
                        let (ra, rb) = self.weights(len);
                        self.generator(z, &c0, &c1, &ra, &rb, &mut om1);
                    }
                    apply_exp(&om1, x, cols, n, &mut ws);
                }
            }
            z = end;
        }
        Ok(())
    }

    /// Transmission matrices at increasing normalized distances.
    pub fn matrices_at(
        &self,
        coupling: &CouplingProcess,
        distances: &[f64],
    ) -> Result<Vec<PropagatorMatrix>> {
        let n = self.n;
        let mut x = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            x[j * n + j] = Complex64::new(1.0, 0.0);
        }
        let mut out = Vec::with_capacity(distances.len());
        let mut at = 0.0;
        for &d in distances {
            self.run_between(coupling, at, d, &mut x, n)?;
            at = d;
            let m = PropagatorMatrix {
                omega: self.omega,
                matrix: DMatrix::from_row_slice(n, n, &x),
                l: d,
                epsilon: self.epsilon,
            };
            let defect = m.unitarity_defect();
            if !(defect <= UNITARITY_TOL) {
                return Err(Error::Integration {
                    defect,
                    tolerance: UNITARITY_TOL,
                });
            }
            out.push(m);
        }
        Ok(out)
    }

    /// `H(z)` with the beat phase evaluated exactly at `z`.
    fn sampled(&self, z: f64, c: &[f64], out: &mut [Complex64]) {
        let n = self.n;
        let e: Vec<Complex64> = self
            .beta
            .iter()
            .map(|&b| Complex64::from_polar(1.0, b * z))
            .collect();
        for j in 0..n {
            let ej = e[j].conj();
            for l in j..n {
                let idx = j * n + l;
                let v = ej * e[l] * self.prefactor[idx] * c[idx];
                out[idx] = v;
                if l != j {
                    out[l * n + j] = -v.conj();
                }
            }
        }
    }

    /// Linear interpolation of the coupling at physical position `z`.
    fn interpolate(&self, coupling: &CouplingProcess, z: f64, out: &mut [f64]) {
        let t = z / coupling.dz;
        let last = coupling.samples() - 1;
        let mut k = t.floor() as usize;
        let mut frac = t - k as f64;
        if k >= last {
            k = last.saturating_sub(1);
            frac = if last == 0 { 0.0 } else { 1.0 };
        }
        if frac < 1e-12 {
            out.copy_from_slice(coupling.at(k));
            return;
        }
        if frac > 1.0 - 1e-12 {
            out.copy_from_slice(coupling.at(k + 1));
            return;
        }
        let a = coupling.at(k);
        let b = coupling.at(k + 1);
        for ((o, &p), &q) in out.iter_mut().zip(a).zip(b) {
            *o = p + frac * (q - p);
        }
    }

    /// Weights `A = I0 - I1/h`, `B = I1/h` with `I0 = int_0^h e^{i d t} dt`
    /// and `I1 = int_0^h t e^{i d t} dt`, `d = beta_l - beta_j`.
    fn weights(&self, h: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let mut wa = vec![Complex64::new(0.0, 0.0); n * n];
        let mut wb = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            for l in 0..n {
                let d = self.beta[l] - self.beta[j];
                let (i0, i1) = phase_moments(d, h);
                wa[j * n + l] = self.prefactor[j * n + l] * (i0 - i1 / h);
                wb[j * n + l] = self.prefactor[j * n + l] * (i1 / h);
            }
        }
        (wa, wb)
    }

    fn generator(
        &self,
        z0: f64,
        c0: &[f64],
        c1: &[f64],
        wa: &[Complex64],
        wb: &[Complex64],
        out: &mut [Complex64],
    ) {
        let n = self.n;
        let e: Vec<Complex64> = self
            .beta
            .iter()
            .map(|&b| Complex64::from_polar(1.0, b * z0))
            .collect();
        for j in 0..n {
            let ej = e[j].conj();
            for l in j..n {
                let idx = j * n + l;
                let v = ej * e[l] * (wa[idx] * c0[idx] + wb[idx] * c1[idx]);
                out[idx] = v;
                if l != j {
                    out[l * n + j] = -v.conj();
                }
            }
        }
    }
}

/// `int_0^h e^{i d t} dt` and `int_0^h t e^{i d t} dt`, series near `d h = 0`.
fn phase_moments(d: f64, h: f64) -> (Complex64, Complex64) {
    let x = d * h;
    if x.abs() < 1e-3 {
        // Taylor expansion to avoid cancellation.
        let mut i0 = Complex64::new(0.0, 0.0);
        let mut i1 = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for m in 0..8 {
            let mf = m as f64;
            i0 += term / (mf + 1.0);
            i1 += term / (mf + 2.0);
            term *= I * x / (mf + 1.0);
        }
        (i0 * h, i1 * h * h)
    } else {
        let e = Complex64::from_polar(1.0, x);
        let i0 = (e - 1.0) / (I * d);
        let i1 = h * e / (I * d) + (e - 1.0) / (d * d);
        (i0, i1)
    }
}

struct Workspace {
    term: Vec<Complex64>,
    next: Vec<Complex64>,
}

impl Workspace {
    fn new(n: usize, cols: usize) -> Self {
        Workspace {
            term: vec![Complex64::new(0.0, 0.0); n * cols],
            next: vec![Complex64::new(0.0, 0.0); n * cols],
        }
    }
}

/// `x <- exp(omega) x` by scaled Taylor series; `x` is row-major `n x cols`.
/// The scaling uses the row-sum norm with `|re| + |im|` entry bounds.
fn apply_exp(omega: &[Complex64], x: &mut [Complex64], cols: usize, n: usize, ws: &mut Workspace) {
    let norm = (0..n)
        .map(|i| {
            omega[i * n..(i + 1) * n]
                .iter()
                .map(|c| c.re.abs() + c.im.abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return;
    }
    let squarings = if norm > TAYLOR_THETA {
        (norm / TAYLOR_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    for _ in 0..(1u64 << squarings) {
        ws.term.copy_from_slice(x);
        let mut k = 1.0;
        loop {
            matmul(omega, &ws.term, &mut ws.next, n, cols, scale / k);
            let mut biggest = 0.0f64;
            for (xi, t) in x.iter_mut().zip(&ws.next) {
                *xi += t;
                biggest = biggest.max(t.norm_sqr());
            }
            std::mem::swap(&mut ws.term, &mut ws.next);
            if (biggest < TAYLOR_TOL * TAYLOR_TOL && k >= norm * scale) || k > 60.0 {
                break;
            }
            k += 1.0;
        }
    }
}

fn matmul(
    a: &[Complex64],
    b: &[Complex64],
    out: &mut [Complex64],
    n: usize,
    cols: usize,
    factor: f64,
) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let o = &mut out[i * cols..(i + 1) * cols];
        o.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (k, &aik) in row.iter().enumerate() {
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let s = aik * factor;
            let brow = &b[k * cols..(k + 1) * cols];
            for (ov, bv) in o.iter_mut().zip(brow) {
                *ov += s * bv;
            }
        }
    }
}

/// `min(ell_z, 2 pi / max beat) / 16`.
pub fn default_step(basis: &ModeBasis, ell_z: f64) -> f64 {
    let beat = basis.max_beat();
    let beat_len = if beat > 0.0 {
        2.0 * PI / beat
    } else {
        f64::INFINITY
    };
    ell_z.min(beat_len) / 16.0
}

/// Convenience wrapper using `epsilon` and `ell_z` from the medium.
pub fn propagate(
    basis: &ModeBasis,
    coupling: &CouplingProcess,
    medium: &MediumSpec,
    l: f64,
    step: f64,
) -> Result<PropagatorMatrix> {
    Propagator::new(basis, medium.epsilon, medium.ell_z, step)?.matrix(coupling, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_moments_series_matches_closed_form() {
        for &d in &[1e-4, 2e-3, 0.3] {
            let h = 0.5;
            let (a0, a1) = phase_moments(d, h);
            let n = 20000;
            let dt = h / n as f64;
            let mut s0 = Complex64::new(0.0, 0.0);
            let mut s1 = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let t = (i as f64 + 0.5) * dt;
                let e = Complex64::from_polar(1.0, d * t);
                s0 += e * dt;
                s1 += e * t * dt;
            }
            assert!((a0 - s0).norm() < 1e-8);
            assert!((a1 - s1).norm() < 1e-8);
        }
    }

    #[test]
    fn exp_of_skew_hermitian_is_unitary() {
        let n = 3;
        let mut om = vec![Complex64::new(0.0, 0.0); 9];
        om[1] = Complex64::new(0.4, 0.7);
        om[3] = -om[1].conj();
        om[0] = Complex64::new(0.0, 1.3);
        om[8] = Complex64::new(0.0, -0.2);
        om[5] = Complex64::new(-0.9, 0.1);
        om[7] = -om[5].conj();
        let mut x = vec![Complex64::new(0.0, 0.0); 9];
        for j in 0..n {
            x[j * n + j] = Complex64::new(1.0, 0.0);
        }
        let mut ws = Workspace::new(n, n);
        apply_exp(&om, &mut x, n, n, &mut ws);
        let m = DMatrix::from_row_slice(n, n, &x);
        assert!(unitarity_defect(&m) < 1e-13);
    }
}
