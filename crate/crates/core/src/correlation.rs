//! Cross correlations of array recordings.
//!
//! Correlations are held in the frequency/mode domain: a list of frequency
//! samples, each carrying primary and secondary modal vectors and a
//! quadrature weight. Receiver-domain values and lag grids are materialized
//! on demand.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{synthesize, ArrayGeometry, ModalData, Reflector};
use crate::quadrature::gauss_legendre_on;
use crate::waveguide::ModeBasis;

const HERMITIAN_TOL: f64 = 1e-10;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `e^{-i omega0 tau} conj(p1) p2`.
pub fn correlation_timeharmonic(p1: Complex64, p2: Complex64, omega0: f64, tau: f64) -> Complex64 {
    Complex64::from_polar(1.0, -omega0 * tau) * p1.conj() * p2
}

/// Selection of the primary/secondary products entering a correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub pp: bool,
    pub ps: bool,
    pub sp: bool,
    pub ss: bool,
}

impl Components {
    /// `C_pp + C_ps + C_sp`; the secondary-secondary product is dropped.
    pub const RETAINED: Components = Components {
        pp: true,
        ps: true,
        sp: true,
        ss: false,
    };
    pub const ALL: Components = Components {
        pp: true,
        ps: true,
        sp: true,
        ss: true,
    };
    pub const PP: Components = Components {
        pp: true,
        ps: false,
        sp: false,
        ss: false,
    };
    pub const PS: Components = Components {
        pp: false,
        ps: true,
        sp: false,
        ss: false,
    };
    pub const SP: Components = Components {
        pp: false,
        ps: false,
        sp: true,
        ss: false,
    };
    pub const SS: Components = Components {
        pp: false,
        ps: false,
        sp: false,
        ss: true,
    };

    /// `(first, second)` pairs with `false = primary`, `true = secondary`.
    pub fn pairs(&self) -> Vec<(bool, bool)> {
        let mut out = Vec::with_capacity(4);
        if self.pp {
            out.push((false, false));
        }
        if self.ps {
            out.push((false, true));
        }
        if self.sp {
            out.push((true, false));
        }
        if self.ss {
            out.push((true, true));
        }
        out
    }
}

/// One frequency of modal data and its weight in the lag-domain integral.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    pub omega: f64,
    pub weight: f64,
    pub primary: Vec<Complex64>,
    pub secondary: Vec<Complex64>,
}

impl SpectralSample {
    pub fn field(&self, secondary: bool) -> &[Complex64] {
        if secondary {
            &self.secondary
        } else {
            &self.primary
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    TimeHarmonic,
    Broadband,
}

/// Correlation `C(tau, x1, x2) = sum_h w_h e^{-i omega_h tau} conj(p(omega_h, x1)) p(omega_h, x2)`
/// held as modal vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSpectrum {
    pub kind: CorrelationKind,
    pub samples: Vec<SpectralSample>,
}

impl ModalSpectrum {
    pub fn time_harmonic(primary: &ModalData, secondary: &ModalData) -> Result<Self> {
        if primary.values.len() != secondary.values.len() {
            return Err(Error::Dimension {
                expected: primary.values.len(),
                got: secondary.values.len(),
            });
        }
        Ok(ModalSpectrum {
            kind: CorrelationKind::TimeHarmonic,
            samples: vec![SpectralSample {
                omega: primary.omega,
                weight: 1.0,
                primary: primary.values.clone(),
                secondary: secondary.values.clone(),
            }],
        })
    }

    /// Samples the band of `spec`; `factory(omega)` returns primary and secondary data
    /// for a unit source spectrum at `omega`.
    pub fn broadband<F>(spec: &BroadbandSpec, mut factory: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<(ModalData, ModalData)>,
    {
        let weights = spec.weights();
        let mut samples = Vec::with_capacity(weights.len());
        for (&h, &w) in spec.h_grid.iter().zip(&weights) {
            let omega = spec.omega(h);
            let (p, s) = factory(omega)?;
            samples.push(SpectralSample {
                omega,
                weight: w,
                primary: p.values,
                secondary: s.values,
            });
        }
        Ok(ModalSpectrum {
            kind: CorrelationKind::Broadband,
            samples,
        })
    }

    /// Broadband spectrum from precomputed samples.
    pub fn from_samples(samples: Vec<SpectralSample>) -> Self {
        ModalSpectrum {
            kind: CorrelationKind::Broadband,
            samples,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.first().map_or(0, |s| s.primary.len())
    }

    /// `C^{jl}(tau)` for 1-based `j`, `l`.
    pub fn modal(&self, j: usize, l: usize, tau: f64, comps: Components) -> Complex64 {
        let pairs = comps.pairs();
        self.samples
            .iter()
            .map(|s| {
                let v: Complex64 = pairs
                    .iter()
                    .map(|&(u, w)| s.field(u)[j - 1].conj() * s.field(w)[l - 1])
                    .sum();
                v * Complex64::from_polar(s.weight, -s.omega * tau)
            })
            .sum()
    }

    pub fn modal_matrix(&self, tau: f64, comps: Components) -> DMatrix<Complex64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |j, l| self.modal(j + 1, l + 1, tau, comps))
    }

    /// `C(tau, x1, x2)`.
    pub fn at(
        &self,
        x1: f64,
        x2: f64,
        tau: f64,
        comps: Components,
        basis: &ModeBasis,
    ) -> Complex64 {
        let f1 = basis.phis(x1);
        let f2 = basis.phis(x2);
        let eval =
            |v: &[Complex64], f: &[f64]| -> Complex64 { v.iter().zip(f).map(|(a, b)| a * b).sum() };
        let pairs = comps.pairs();
        self.samples
            .iter()
            .map(|s| {
                let v: Complex64 = pairs
                    .iter()
                    .map(|&(u, w)| eval(s.field(u), &f1).conj() * eval(s.field(w), &f2))
                    .sum();
                v * Complex64::from_polar(s.weight, -s.omega * tau)
            })
            .sum()
    }

    /// Receiver-pair matrix `C(tau, x_a, x_b)`.
    pub fn on_receivers(
        &self,
        geometry: &ArrayGeometry,
        tau: f64,
        comps: Components,
        basis: &ModeBasis,
    ) -> DMatrix<Complex64> {
        let nr = geometry.receivers.len();
        let mut out = DMatrix::from_element(nr, nr, ZERO);
        let pairs = comps.pairs();
        for s in &self.samples {
            let rp = synthesize(&s.primary, &geometry.receivers, basis);
            let rs = synthesize(&s.secondary, &geometry.receivers, basis);
            let phase = Complex64::from_polar(s.weight, -s.omega * tau);
            for &(u, w) in &pairs {
                let a = if u { &rs } else { &rp };
                let b = if w { &rs } else { &rp };
                for i in 0..nr {
                    let ai = a[i].conj() * phase;
                    for k in 0..nr {
                        out[(i, k)] += ai * b[k];
                    }
                }
            }
        }
        out
    }

    /// Tabulates the correlation on a lag grid; the modal table is attached
    /// when the aperture is full.
    pub fn tabulate(
        &self,
        geometry: &ArrayGeometry,
        tau_grid: &[f64],
        comps: Components,
        basis: &ModeBasis,
    ) -> CorrelationData {
        let values = tau_grid
            .iter()
            .map(|&t| self.on_receivers(geometry, t, comps, basis))
            .collect();
        let modal = geometry.is_full().then(|| {
            tau_grid
                .iter()
                .map(|&t| self.modal_matrix(t, comps))
                .collect()
        });
        CorrelationData {
            kind: self.kind,
            tau_grid: tau_grid.to_vec(),
            receivers: geometry.receivers.clone(),
            values,
            modal,
        }
    }
}

/// Correlation sampled on a lag grid and receiver pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationData {
    pub kind: CorrelationKind,
    pub tau_grid: Vec<f64>,
    pub receivers: Vec<f64>,
    /// `values[t][(a, b)] = C(tau_t, x_a, x_b)`.
    pub values: Vec<DMatrix<Complex64>>,
    pub modal: Option<Vec<DMatrix<Complex64>>>,
}

impl CorrelationData {
    /// Largest violation of `C(tau, x1, x2) = conj(C(-tau, x2, x1))` relative to the largest entry.
    ///
    /// Lags without a mirrored partner on the grid are skipped.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self
            .values
            .iter()
            .flat_map(|m| m.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for (t, &tau) in self.tau_grid.iter().enumerate() {
            let Some(m) = self
                .tau_grid
                .iter()
                .position(|&s| (s + tau).abs() <= 1e-12 * (1.0 + tau.abs()))
            else {
                continue;
            };
            let a = &self.values[t];
            let b = &self.values[m];
            for i in 0..a.nrows() {
                for k in 0..a.ncols() {
                    worst = worst.max((a[(i, k)] - b[(k, i)].conj()).norm());
                }
            }
        }
        worst / scale
    }

    pub fn check_hermitian(&self) -> Result<()> {
        let d = self.hermitian_defect();
        if d > HERMITIAN_TOL {
            return Err(invalid(
                "correlation",
                format!("Hermitian lag symmetry violated by {d:e}"),
            ));
        }
        Ok(())
    }

    /// Writes `tau,j,l,real,imag` rows of the modal table.
    pub fn write_modal_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let modal = self
            .modal
            .as_ref()
            .ok_or_else(|| Error::UnsupportedModel("modal table needs a full aperture".into()))?;
        writeln!(w, "tau,j,l,real,imag")?;
        for (tau, m) in self.tau_grid.iter().zip(modal) {
            for j in 0..m.nrows() {
                for l in 0..m.ncols() {
                    let v = m[(j, l)];
                    writeln!(
                        w,
                        "{tau:.16e},{},{},{:.16e},{:.16e}",
                        j + 1,
                        l + 1,
                        v.re,
                        v.im
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Receiver-pair matrices of the three retained components at one lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMatrices {
    pub pp: DMatrix<Complex64>,
    pub ps: DMatrix<Complex64>,
    pub sp: DMatrix<Complex64>,
}

/// `C_pp`, `C_ps`, `C_sp` on the receivers at lag `tau` for time-harmonic data.
pub fn correlation_components(
    primary: &ModalData,
    secondary: &ModalData,
    geometry: &ArrayGeometry,
    basis: &ModeBasis,
    tau: f64,
) -> Result<ComponentMatrices> {
    let spec = ModalSpectrum::time_harmonic(primary, secondary)?;
    Ok(ComponentMatrices {
        pp: spec.on_receivers(geometry, tau, Components::PP, basis),
        ps: spec.on_receivers(geometry, tau, Components::PS, basis),
        sp: spec.on_receivers(geometry, tau, Components::SP, basis),
    })
}

/// `C^{jl} = int int C(x1, x2) phi_j(x1) phi_l(x2)` by tensorized Simpson quadrature.
pub fn modal_correlation(
    values: &DMatrix<Complex64>,
    geometry: &ArrayGeometry,
    basis: &ModeBasis,
) -> Result<DMatrix<Complex64>> {
    if !geometry.is_full() {
        return Err(Error::UnsupportedModel(
            "modal projection needs a full aperture; use the limited-aperture functional".into(),
        ));
    }
    let nr = geometry.receivers.len();
    if values.nrows() != nr || values.ncols() != nr {
        return Err(Error::Dimension {
            expected: nr,
            got: values.nrows(),
        });
    }
    let n = basis.n();
    let w = geometry.weights();
    let proj = DMatrix::from_fn(nr, n, |a, j| {
        Complex64::new(w[a] * basis.phi(j + 1, geometry.receivers[a]), 0.0)
    });
    Ok(proj.transpose() * values * &proj)
}

/// Baseband sampling of a broadband source `f(t) = f0(eps^alpha t) e^{-i omega0 t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadbandSpec {
    pub alpha: f64,
    pub epsilon: f64,
    pub omega0: f64,
    /// Quadrature nodes in the baseband variable `h`.
    pub h_grid: Vec<f64>,
    /// Quadrature weights for `h_grid`.
    pub gl_weights: Vec<f64>,
    /// `|f0_hat(h)|^2` at the nodes.
    pub f0_sq: Vec<f64>,
}

impl BroadbandSpec {
    /// Gaussian `|f0_hat(h)|^2` of standard deviation `width`, unit energy
    /// `(1 / 2 pi) int |f0_hat|^2 dh = 1`, sampled on `[-6 width, 6 width]`.
    pub fn gaussian(
        alpha: f64,
        epsilon: f64,
        omega0: f64,
        width: f64,
        nodes: usize,
    ) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("must lie in (1, 2), got {alpha}")));
        }
        if !(width > 0.0) {
            return Err(invalid("width", "must be positive"));
        }
        if nodes < 64 {
            return Err(invalid(
                "nodes",
                format!("need at least 64 nodes, got {nodes}"),
            ));
        }
        let (h_grid, gl_weights) = gauss_legendre_on(nodes, -6.0 * width, 6.0 * width);
        let norm = 2.0 * PI / ((2.0 * PI).sqrt() * width);
        let f0_sq = h_grid
            .iter()
            .map(|h| norm * (-0.5 * (h / width).powi(2)).exp())
            .collect();
        Ok(BroadbandSpec {
            alpha,
            epsilon,
            omega0,
            h_grid,
            gl_weights,
            f0_sq,
        })
    }

    /// Gaussian spectrum on `count` (odd) equispaced nodes `h = (i - (count - 1) / 2) spacing`
    /// with trapezoid weights. Bands of different widths built on the same
    /// nodes share the frequency samples.
    pub fn gaussian_uniform(
        alpha: f64,
        epsilon: f64,
        omega0: f64,
        width: f64,
        spacing: f64,
        count: usize,
    ) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("must lie in (1, 2), got {alpha}")));
        }
        if !(width > 0.0 && spacing > 0.0) {
            return Err(invalid("width", "width and spacing must be positive"));
        }
        if count % 2 == 0 || count < 3 {
            return Err(invalid("count", "need an odd node count of at least 3"));
        }
        let mid = (count / 2) as f64;
        let h_grid: Vec<f64> = (0..count).map(|i| (i as f64 - mid) * spacing).collect();
        let mut gl_weights = vec![spacing; count];
        gl_weights[0] *= 0.5;
        gl_weights[count - 1] *= 0.5;
        let norm = 2.0 * PI / ((2.0 * PI).sqrt() * width);
        let f0_sq = h_grid
            .iter()
            .map(|h| norm * (-0.5 * (h / width).powi(2)).exp())
            .collect();
        Ok(BroadbandSpec {
            alpha,
            epsilon,
            omega0,
            h_grid,
            gl_weights,
            f0_sq,
        })
    }

    /// Degenerate band: one sample at the carrier with unit weight.
    pub fn single(alpha: f64, epsilon: f64, omega0: f64) -> Self {
        BroadbandSpec {
            alpha,
            epsilon,
            omega0,
            h_grid: vec![0.0],
            gl_weights: vec![1.0],
            f0_sq: vec![2.0 * PI],
        }
    }

    pub fn omega(&self, h: f64) -> f64 {
        self.omega0 + self.epsilon.powf(self.alpha) * h
    }

    /// Weights `gl_h |f0_hat(h)|^2 / (2 pi)`, normalized to sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self
            .gl_weights
            .iter()
            .zip(&self.f0_sq)
            .map(|(g, f)| g * f / (2.0 * PI))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }

    /// Root-mean-square width of `|f0_hat|^2` in angular frequency.
    pub fn bandwidth(&self) -> f64 {
        let w = self.weights();
        let m2: f64 = self.h_grid.iter().zip(&w).map(|(h, wi)| h * h * wi).sum();
        self.epsilon.powf(self.alpha) * m2.sqrt()
    }

    /// Grid symmetry, weight positivity, and a constant mode count across the band.
    pub fn validate(&self, basis: &ModeBasis) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(invalid(
                "alpha",
                format!("must lie in (1, 2), got {}", self.alpha),
            ));
        }
        let n = self.h_grid.len();
        if n == 0 || self.gl_weights.len() != n || self.f0_sq.len() != n {
            return Err(invalid(
                "h_grid",
                "grid, weights and spectrum must have equal nonzero length",
            ));
        }
        for i in 0..n {
            let mirror = self.h_grid[n - 1 - i];
            if (self.h_grid[i] + mirror).abs() > 1e-9 * (1.0 + mirror.abs()) {
                return Err(invalid("h_grid", "must be symmetric about 0"));
            }
        }
        if self
            .f0_sq
            .iter()
            .chain(&self.gl_weights)
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(invalid("f0_sq", "weights must be finite and non-negative"));
        }
        for &h in [self.h_grid[0], self.h_grid[n - 1]].iter() {
            basis.at_frequency(self.omega(h))?;
        }
        Ok(())
    }
}

/// Broadband `C(tau, x1, x2)` with the retained components.
pub fn broadband_correlation<F>(
    spec: &BroadbandSpec,
    factory: F,
    tau: f64,
    x1: f64,
    x2: f64,
    basis: &ModeBasis,
) -> Result<Complex64>
where
    F: FnMut(f64) -> Result<(ModalData, ModalData)>,
{
    spec.validate(basis)?;
    let s = ModalSpectrum::broadband(spec, factory)?;
    Ok(s.at(x1, x2, tau, Components::RETAINED, basis))
}

/// `Phi_j(x) = (1/N) sum_n beta_n^j phi_n(x)^2`.
pub fn phi_kernel(power: i32, x: f64, basis: &ModeBasis) -> f64 {
    let n = basis.n();
    (1..=n)
        .map(|i| basis.beta(i).powi(power) * basis.phi(i, x).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Equipartition limits of the modal correlation components at lag `tau`:
/// `E[C^{jl}_pp] = Phi_{-1}(x_s) delta_jl e^{-i omega0 tau} / (4 beta_j)`,
/// `E[C^{jl}_ps] = (i omega0^2 sigma_r Phi_{-1}(x_s) / 8) phi_j(x_r) phi_l(x_r) e^{i (beta_j + beta_l) z_r} e^{-i omega0 tau} / (beta_j beta_l)`,
/// and `E[C^{jl}_sp]` with the opposite sign and conjugated range phase.
pub fn expected_modal_components(
    basis: &ModeBasis,
    x_s: f64,
    reflector: &Reflector,
    tau: f64,
) -> ComponentMatrices {
    let n = basis.n();
    let phi_m1 = phi_kernel(-1, x_s, basis);
    let w = basis.omega;
    let lag = Complex64::from_polar(1.0, -w * tau);
    let amp = w * w * reflector.sigma_r * phi_m1 / 8.0;
    let pr: Vec<f64> = basis.phis(reflector.x_r);
    let b = &basis.wavenumbers;
    let pp = DMatrix::from_fn(n, n, |j, l| {
        if j == l {
            lag * (phi_m1 / (4.0 * b[j]))
        } else {
            ZERO
        }
    });
    let ps = DMatrix::from_fn(n, n, |j, l| {
        I * amp * pr[j] * pr[l] / (b[j] * b[l])
            * Complex64::from_polar(1.0, (b[j] + b[l]) * reflector.z_r)
            * lag
    });
    let sp = DMatrix::from_fn(n, n, |j, l| {
        -I * amp * pr[j] * pr[l] / (b[j] * b[l])
            * Complex64::from_polar(1.0, -(b[j] + b[l]) * reflector.z_r)
            * lag
    });
    ComponentMatrices { pp, ps, sp }
}

/// Equipartition limits of `E[C_pp]`, `E[C_ps]`, `E[C_sp]` at receivers `x1`, `x2`.
pub fn expected_correlation_components(
    basis: &ModeBasis,
    x_s: f64,
    reflector: &Reflector,
    tau: f64,
    x1: f64,
    x2: f64,
) -> (Complex64, Complex64, Complex64) {
    let m = expected_modal_components(basis, x_s, reflector, tau);
    let f1 = basis.phis(x1);
    let f2 = basis.phis(x2);
    let contract = |c: &DMatrix<Complex64>| -> Complex64 {
        let mut s = ZERO;
        for j in 0..f1.len() {
            for l in 0..f2.len() {
                s += c[(j, l)] * (f1[j] * f2[l]);
            }
        }
        s
    };
    (contract(&m.pp), contract(&m.ps), contract(&m.sp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{primary_window, FieldKind};
    use crate::waveguide::WaveguideSpec;

    fn setup(n: usize) -> (ModeBasis, ModalData, ModalData) {
        let spec = WaveguideSpec::new((n as f64 + 0.5) * PI, 1.0, 1.0).unwrap();
        let basis = ModeBasis::carrier(&spec).unwrap();
        let p = ModalData {
            omega: 1.0,
            kind: primary_window(0.05),
            values: (0..n)
                .map(|i| Complex64::new(0.3 + 0.1 * i as f64, -0.2 * i as f64))
                .collect(),
        };
        let s = ModalData {
            omega: 1.0,
            kind: FieldKind::Secondary { z_r: 30.0 },
            values: (0..n)
                .map(|i| Complex64::new(-0.05 * i as f64, 0.02))
                .collect(),
        };
        (basis, p, s)
    }

    #[test]
    fn timeharmonic_basic_identities() {
        let p1 = Complex64::new(0.3, -1.2);
        let p2 = Complex64::new(-0.7, 0.4);
        let c = correlation_timeharmonic(p1, p1, 2.0, 0.0);
        assert!(c.im.abs() < 1e-15 && c.re >= 0.0);
        assert!(
            (correlation_timeharmonic(p1, p2, 2.0, 0.37).norm() - (p1 * p2).norm()).abs() < 1e-14
        );
        let a = correlation_timeharmonic(p1, p2, 2.0, 0.0);
        let b = correlation_timeharmonic(p2, p1, 2.0, 0.0);
        assert!((a - b.conj()).norm() < 1e-15);
    }

    #[test]
    fn tabulated_retained_correlation_is_hermitian() {
        let (basis, p, s) = setup(4);
        let geo = ArrayGeometry::full(&basis).unwrap();
        let spec = ModalSpectrum::time_harmonic(&p, &s).unwrap();
        let taus = [-1.5, -0.5, 0.0, 0.5, 1.5];
        let data = spec.tabulate(&geo, &taus, Components::RETAINED, &basis);
        assert!(data.hermitian_defect() < 1e-12);
        data.check_hermitian().unwrap();
        // ps alone is not Hermitian, but maps onto sp.
        let ps = spec.tabulate(&geo, &taus, Components::PS, &basis);
        let sp = spec.tabulate(&geo, &taus, Components::SP, &basis);
        for t in 0..taus.len() {
            let m = taus.len() - 1 - t;
            let d = (&sp.values[t] - ps.values[m].adjoint()).norm();
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn modal_projection_recovers_products() {
        let (basis, p, s) = setup(5);
        let geo = ArrayGeometry::full(&basis).unwrap();
        let spec = ModalSpectrum::time_harmonic(&p, &s).unwrap();
        let c = spec.on_receivers(&geo, 0.3, Components::RETAINED, &basis);
        let m = modal_correlation(&c, &geo, &basis).unwrap();
        let exact = spec.modal_matrix(0.3, Components::RETAINED);
        assert!((m - exact).norm() < 1e-10);
        let la = ArrayGeometry::new(
            crate::fields::Aperture::Interval { a1: 1.0, a2: 5.0 },
            basis.a,
            0.2,
        )
        .unwrap();
        assert!(modal_correlation(&c, &la, &basis).is_err());
    }

    #[test]
    fn gaussian_band_has_unit_weight_and_rms_width() {
        let b = BroadbandSpec::gaussian(1.5, 0.05, 1.0, 2.0, 64).unwrap();
        let w = b.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let raw: f64 = b
            .gl_weights
            .iter()
            .zip(&b.f0_sq)
            .map(|(g, f)| g * f)
            .sum::<f64>()
            / (2.0 * PI);
        assert!((raw - 1.0).abs() < 1e-7);
        assert!((b.bandwidth() / (0.05f64.powf(1.5) * 2.0) - 1.0).abs() < 1e-6);
        assert!(BroadbandSpec::gaussian(2.5, 0.05, 1.0, 1.0, 64).is_err());
        assert!(BroadbandSpec::gaussian(1.5, 0.05, 1.0, 1.0, 16).is_err());
    }
}
