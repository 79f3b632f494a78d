//! Primary and Born-scattered fields at the receiver plane `z = L/eps^2`.
//!
//! Modal data are the coefficients of `phi_j(x)` in the recorded field. The
//! propagator between the array plane and the reflector is the identity.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::propagator::{initial_amplitudes_with, PropagatorMatrix};
use crate::quadrature::simpson_weights;
use crate::waveguide::ModeBasis;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Point reflector in the Born approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub x_r: f64,
    /// Axial offset from the array plane.
    pub z_r: f64,
    /// Scattering strength `|Omega_r| / c_r^2`.
    pub sigma_r: f64,
}

impl Reflector {
    /// Hard errors for impossible geometry; soft regime issues come back as warnings.
    ///
    /// `l` is the normalized length of the random section when known.
    pub fn validate(&self, basis: &ModeBasis, epsilon: f64, l: Option<f64>) -> Result<Vec<String>> {
        if !(self.x_r > 0.0 && self.x_r < basis.a) {
            return Err(Error::OutOfRange {
                x: self.x_r,
                a: basis.a,
            });
        }
        if !(self.z_r > 0.0 && self.z_r.is_finite()) {
            return Err(invalid("z_r", "reflector must lie beyond the array plane"));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(invalid("sigma_r", "must be finite and non-negative"));
        }
        let mut warnings = Vec::new();
        let lambda = basis.wavelength();
        if self.z_r < 5.0 * lambda {
            warnings.push(format!("z_r = {} is less than five wavelengths", self.z_r));
        }
        if let Some(l) = l {
            if self.z_r * epsilon * epsilon > 0.1 * l {
                warnings.push(format!(
                    "z_r eps^2 = {} is not small against L = {l}",
                    self.z_r * epsilon * epsilon
                ));
            }
        }
        Ok(warnings)
    }
}

/// Receiver coverage of the transverse section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aperture {
    #[default]
    Full,
    Interval {
        a1: f64,
        a2: f64,
    },
}

/// Uniformly spaced receivers covering the aperture, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub aperture: Aperture,
    pub receivers: Vec<f64>,
}

impl ArrayGeometry {
    /// Receivers at spacing at most `max_spacing`, with an even number of
    /// intervals so that Simpson weights apply.
    pub fn new(aperture: Aperture, a: f64, max_spacing: f64) -> Result<Self> {
        let (lo, hi) = match aperture {
            Aperture::Full => (0.0, a),
            Aperture::Interval { a1, a2 } => (a1, a2),
        };
        if !(lo >= 0.0 && hi <= a && lo < hi) {
            return Err(invalid(
                "aperture",
                format!("need 0 <= a1 < a2 <= {a}, got [{lo}, {hi}]"),
            ));
        }
        if !(max_spacing > 0.0) {
            return Err(invalid("max_spacing", "must be positive"));
        }
        let mut intervals = ((hi - lo) / max_spacing).ceil().max(2.0) as usize;
        if intervals % 2 == 1 {
            intervals += 1;
        }
        let h = (hi - lo) / intervals as f64;
        let receivers = (0..=intervals).map(|i| lo + i as f64 * h).collect();
        Ok(ArrayGeometry {
            aperture,
            receivers,
        })
    }

    /// Full aperture at a default spacing of `lambda / 16`.
    pub fn full(basis: &ModeBasis) -> Result<Self> {
        Self::new(Aperture::Full, basis.a, basis.wavelength() / 16.0)
    }

    /// Aperture `[c - w/2, c + w/2]` at spacing `lambda / 16`; `w = a` gives the full section.
    pub fn centered(basis: &ModeBasis, center: f64, width: f64) -> Result<Self> {
        let spacing = basis.wavelength() / 16.0;
        if (width - basis.a).abs() <= 1e-12 * basis.a {
            return Self::new(Aperture::Full, basis.a, spacing);
        }
        let a1 = center - 0.5 * width;
        let a2 = center + 0.5 * width;
        Self::new(Aperture::Interval { a1, a2 }, basis.a, spacing)
    }

    pub fn bounds(&self, a: f64) -> (f64, f64) {
        match self.aperture {
            Aperture::Full => (0.0, a),
            Aperture::Interval { a1, a2 } => (a1, a2),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self.aperture, Aperture::Full)
    }

    pub fn spacing(&self) -> f64 {
        self.receivers[1] - self.receivers[0]
    }

    pub fn weights(&self) -> Vec<f64> {
        simpson_weights(self.receivers.len(), self.spacing())
    }

    /// Checks receiver spacing and the aperture width against the wavelength.
    pub fn validate(&self, basis: &ModeBasis) -> Result<Vec<String>> {
        let lambda = basis.wavelength();
        if self.receivers.len() < 3 || self.receivers.len() % 2 == 0 {
            return Err(invalid(
                "receivers",
                "need an odd number (at least 3) of receivers",
            ));
        }
        if self.spacing() > lambda / 4.0 * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "receiver spacing {} exceeds lambda/4 = {}",
                self.spacing(),
                lambda / 4.0
            )));
        }
        let (lo, hi) = self.bounds(basis.a);
        let mut warnings = Vec::new();
        if hi - lo < 2.0 * lambda {
            warnings.push(format!(
                "aperture {} is not large against lambda = {lambda}",
                hi - lo
            ));
        }
        Ok(warnings)
    }

    /// `G_qm = int_A phi_q phi_m dx` by Simpson quadrature on the receivers.
    pub fn gram(&self, basis: &ModeBasis) -> Vec<f64> {
        let n = basis.n();
        let w = self.weights();
        let rows: Vec<Vec<f64>> = self.receivers.iter().map(|&x| basis.phis(x)).collect();
        let mut g = vec![0.0; n * n];
        for (r, wi) in rows.iter().zip(&w) {
            for q in 0..n {
                let s = wi * r[q];
                for m in q..n {
                    g[q * n + m] += s * r[m];
                }
            }
        }
        for q in 0..n {
            for m in 0..q {
                g[q * n + m] = g[m * n + q];
            }
        }
        g
    }
}

/// Which wave a modal vector describes; fixes how its phase continues in `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldKind {
    /// Right-going field; valid for offsets up to `max_offset` past the array plane.
    Primary { max_offset: f64 },
    /// Left-going field scattered by a reflector at offset `z_r`.
    Secondary { z_r: f64 },
}

/// Modal coefficients of a field on the array plane at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalData {
    pub omega: f64,
    pub kind: FieldKind,
    pub values: Vec<Complex64>,
}

/// Right-going amplitudes at the array plane,
/// `b_j = e^{i beta_j L~} (T a(0))_j` with `a_l(0) = f_hat phi_l(x_s) / (2 i sqrt(beta_l))`.
pub fn arrival_amplitudes(
    t: &PropagatorMatrix,
    x_s: f64,
    f_hat: Complex64,
    basis: &ModeBasis,
) -> Result<Vec<Complex64>> {
    let n = basis.n();
    if t.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: t.n(),
        });
    }
    let a0 = initial_amplitudes_with(x_s, f_hat, basis);
    let l_tilde = t.l / (t.epsilon * t.epsilon);
    Ok((0..n)
        .map(|j| {
            let s: Complex64 = (0..n).map(|l| t.matrix[(j, l)] * a0[l]).sum();
            s * Complex64::from_polar(1.0, basis.wavenumbers[j] * l_tilde)
        })
        .collect())
}

/// Default window for the primary field: offsets up to `0.1 / eps^2`.
pub fn primary_window(epsilon: f64) -> FieldKind {
    FieldKind::Primary {
        max_offset: 0.1 / (epsilon * epsilon),
    }
}

/// `p_p,j = b_j / sqrt(beta_j)`.
pub fn primary_from_arrivals(b: &[Complex64], basis: &ModeBasis, kind: FieldKind) -> ModalData {
    ModalData {
        omega: basis.omega,
        kind,
        values: b
            .iter()
            .zip(&basis.wavenumbers)
            .map(|(bj, &beta)| bj / beta.sqrt())
            .collect(),
    }
}

/// Illumination of the reflector,
/// `q = (i omega^2 sigma_r / 2) sum_l phi_l(x_r) b_l e^{i beta_l z_r} / sqrt(beta_l)`.
pub fn illumination(b: &[Complex64], reflector: &Reflector, basis: &ModeBasis) -> Complex64 {
    let s: Complex64 = b
        .iter()
        .enumerate()
        .map(|(i, bl)| {
            let beta = basis.wavenumbers[i];
            bl * basis.phi(i + 1, reflector.x_r) * Complex64::from_polar(1.0, beta * reflector.z_r)
                / beta.sqrt()
        })
        .sum();
    I * (0.5 * basis.omega * basis.omega * reflector.sigma_r) * s
}

/// `p_s,j = phi_j(x_r) e^{i beta_j z_r} q / beta_j`.
pub fn secondary_from_arrivals(
    b: &[Complex64],
    reflector: &Reflector,
    basis: &ModeBasis,
) -> ModalData {
    let q = illumination(b, reflector, basis);
    let values = (0..basis.n())
        .map(|i| {
            let beta = basis.wavenumbers[i];
            q * basis.phi(i + 1, reflector.x_r)
                * Complex64::from_polar(1.0 / beta, beta * reflector.z_r)
        })
        .collect();
    ModalData {
        omega: basis.omega,
        kind: FieldKind::Secondary { z_r: reflector.z_r },
        values,
    }
}

/// Primary modal data for a unit time-harmonic source at `x_s`.
pub fn primary_modal_data(t: &PropagatorMatrix, x_s: f64, basis: &ModeBasis) -> Result<ModalData> {
    let b = arrival_amplitudes(t, x_s, Complex64::new(1.0, 0.0), basis)?;
    Ok(primary_from_arrivals(&b, basis, primary_window(t.epsilon)))
}

/// Born-scattered modal data for a unit time-harmonic source at `x_s`.
pub fn secondary_modal_data(
    t: &PropagatorMatrix,
    x_s: f64,
    reflector: &Reflector,
    basis: &ModeBasis,
) -> Result<ModalData> {
    let b = arrival_amplitudes(t, x_s, Complex64::new(1.0, 0.0), basis)?;
    Ok(secondary_from_arrivals(&b, reflector, basis))
}

/// Field at transverse position `x` and axial offset `offset = z - L~` from the array plane.
pub fn field_at(x: f64, offset: f64, data: &ModalData, basis: &ModeBasis) -> Result<Complex64> {
    if !(0.0..=basis.a).contains(&x) {
        return Err(Error::OutOfRange { x, a: basis.a });
    }
    let sign = match data.kind {
        FieldKind::Primary { max_offset } => {
            if !(offset >= 0.0 && offset <= max_offset) {
                return Err(Error::ValidityWindow {
                    z: offset,
                    lo: 0.0,
                    hi: max_offset,
                });
            }
            1.0
        }
        FieldKind::Secondary { z_r } => {
            if !(offset >= 0.0 && offset < z_r) {
                return Err(Error::ValidityWindow {
                    z: offset,
                    lo: 0.0,
                    hi: z_r,
                });
            }
            -1.0
        }
    };
    Ok(data
        .values
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p * basis.phi(i + 1, x)
                * Complex64::from_polar(1.0, sign * basis.wavenumbers[i] * offset)
        })
        .sum())
}

/// Field values on the receivers at the array plane.
pub fn recordings(data: &ModalData, geometry: &ArrayGeometry, basis: &ModeBasis) -> Vec<Complex64> {
    synthesize(&data.values, &geometry.receivers, basis)
}

/// `sum_j c_j phi_j(x)` at each `x`.
pub fn synthesize(coeffs: &[Complex64], xs: &[f64], basis: &ModeBasis) -> Vec<Complex64> {
    xs.iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, p)| p * basis.phi(i + 1, x))
                .sum()
        })
        .collect()
}

/// Projection `int_A u(x) phi_j(x) dx` of sampled values onto the modes.
pub fn project(
    values: &[Complex64],
    geometry: &ArrayGeometry,
    basis: &ModeBasis,
) -> Result<Vec<Complex64>> {
    if values.len() != geometry.receivers.len() {
        return Err(Error::Dimension {
            expected: geometry.receivers.len(),
            got: values.len(),
        });
    }
    let w = geometry.weights();
    Ok((1..=basis.n())
        .map(|j| {
            values
                .iter()
                .zip(&geometry.receivers)
                .zip(&w)
                .map(|((u, &x), wi)| u * (wi * basis.phi(j, x)))
                .sum()
        })
        .collect())
}

/// Energy ratio `sum |p_s|^2 / sum |p_p|^2` used for the Born smallness check.
pub fn born_ratio(primary: &ModalData, secondary: &ModalData) -> f64 {
    let e = |d: &ModalData| d.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let p = e(primary);
    if p == 0.0 {
        return f64::INFINITY;
    }
    e(secondary) / p
}

/// Writes `x,real,imag` rows.
pub fn write_recordings_csv<W: Write>(
    mut w: W,
    receivers: &[f64],
    values: &[Complex64],
) -> Result<()> {
    writeln!(w, "x,real,imag")?;
    for (x, v) in receivers.iter().zip(values) {
        writeln!(w, "{x:.16e},{:.16e},{:.16e}", v.re, v.im)?;
    }
    Ok(())
}

/// Continuum value `pi / (2 a)` approached by `Phi_{-1}` for large `N`.
pub fn phi_minus_one_continuum(a: f64) -> f64 {
    PI / (2.0 * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveguide::WaveguideSpec;

    fn basis(n: usize) -> ModeBasis {
        let spec = WaveguideSpec::new((n as f64 + 0.5) * PI, 1.0, 1.0).unwrap();
        ModeBasis::carrier(&spec).unwrap()
    }

    #[test]
    fn geometry_has_simpson_layout() {
        let b = basis(6);
        let g = ArrayGeometry::full(&b).unwrap();
        assert!(g.receivers.len() % 2 == 1);
        assert!(g.spacing() <= b.wavelength() / 16.0 + 1e-12);
        assert!((g.receivers[g.receivers.len() - 1] - b.a).abs() < 1e-12);
        let gram = g.gram(&b);
        for q in 0..6 {
            for m in 0..6 {
                let target = if q == m { 1.0 } else { 0.0 };
                assert!((gram[q * 6 + m] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_aperture_is_rejected() {
        let b = basis(4);
        assert!(ArrayGeometry::new(Aperture::Interval { a1: 3.0, a2: 3.0 }, b.a, 0.1).is_err());
        assert!(ArrayGeometry::new(Aperture::Interval { a1: -1.0, a2: 3.0 }, b.a, 0.1).is_err());
    }

    #[test]
    fn field_vanishes_on_walls() {
        let b = basis(5);
        let d = ModalData {
            omega: 1.0,
            kind: primary_window(0.05),
            values: vec![Complex64::new(1.0, 0.5); 5],
        };
        assert!(field_at(0.0, 1.0, &d, &b).unwrap().norm() < 1e-12);
        assert!(field_at(b.a, 1.0, &d, &b).unwrap().norm() < 1e-12);
        assert!(field_at(b.a + 1.0, 1.0, &d, &b).is_err());
        assert!(field_at(1.0, 1e6, &d, &b).is_err());
    }
}
