//! Ideal-waveguide mode basis and dispersion relations.
//!
//! The waveguide occupies `0 <= x <= a` with Dirichlet walls. Transverse modes
//! are `phi_j(x) = sqrt(2/a) sin(pi j x / a)` with eigenvalues `(pi j / a)^2`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quadrature;

/// Relative tolerance used to snap `omega a / (pi c0)` onto an integer.
const COUNT_SNAP: f64 = 1e-9;
/// Relative tolerance below which `k^2 - lambda_j` counts as zero.
const CUTOFF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideSpec {
    pub a: f64,
    pub c0: f64,
    pub omega0: f64,
}

impl WaveguideSpec {
    pub fn new(a: f64, c0: f64, omega0: f64) -> Result<Self> {
        let spec = WaveguideSpec { a, c0, omega0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("c0", self.c0), ("omega0", self.omega0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        self.mode_count(self.omega0)?;
        Ok(())
    }

    pub fn k(&self, omega: f64) -> f64 {
        omega / self.c0
    }

    /// Carrier wavelength `2 pi c0 / omega0`.
    pub fn wavelength(&self) -> f64 {
        2.0 * PI * self.c0 / self.omega0
    }

    /// `N(omega) = floor(omega a / (pi c0))`.
    pub fn mode_count(&self, omega: f64) -> Result<usize> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(invalid("omega", format!("must be positive, got {omega}")));
        }
        let r = omega * self.a / (PI * self.c0);
        let nearest = r.round();
        let n = if (r - nearest).abs() <= COUNT_SNAP * r.max(1.0) {
            nearest
        } else {
            r.floor()
        };
        if n < 1.0 {
            return Err(Error::NoPropagatingModes { omega });
        }
        Ok(n as usize)
    }

    /// `phi_j(x)`, checked.
    pub fn mode_eval(&self, j: usize, x: f64) -> Result<f64> {
        if j == 0 {
            return Err(invalid("j", "mode indices start at 1"));
        }
        if !(0.0..=self.a).contains(&x) {
            return Err(Error::OutOfRange { x, a: self.a });
        }
        Ok(phi(self.a, j, x))
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        let t = PI * j as f64 / self.a;
        t * t
    }

    /// Modal wavenumber `beta_j(omega) = sqrt(k^2 - lambda_j)`.
    pub fn wavenumber(&self, j: usize, omega: f64) -> Result<f64> {
        if j == 0 {
            return Err(invalid("j", "mode indices start at 1"));
        }
        let count = self.mode_count(omega)?;
        if j > count {
            return Err(Error::EvanescentMode { j, omega, count });
        }
        let k2 = self.k(omega).powi(2);
        let d = k2 - self.eigenvalue(j);
        if d <= CUTOFF_TOL * k2 {
            return Err(Error::CutoffMode { j, omega });
        }
        Ok(d.sqrt())
    }

    /// `d beta_j / d omega = omega / (c0^2 beta_j)`.
    pub fn beta_prime(&self, j: usize, omega: f64) -> Result<f64> {
        let b = self.wavenumber(j, omega)?;
        Ok(omega / (self.c0 * self.c0 * b))
    }
}

/// Unchecked `sqrt(2/a) sin(pi j x / a)`.
#[inline]
pub fn phi(a: f64, j: usize, x: f64) -> f64 {
    (2.0 / a).sqrt() * (PI * j as f64 * x / a).sin()
}

/// Propagating modes at one frequency. Vectors are indexed by `j - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeBasis {
    pub a: f64,
    pub c0: f64,
    pub omega: f64,
    pub k: f64,
    pub count: usize,
    pub eigenvalues: Vec<f64>,
    pub wavenumbers: Vec<f64>,
    pub group_derivatives: Vec<f64>,
}

impl ModeBasis {
    /// Collects every propagating mode, dropping a mode that sits exactly at cutoff.
    pub fn new(spec: &WaveguideSpec, omega: f64) -> Result<Self> {
        let n = spec.mode_count(omega)?;
        let mut eigenvalues = Vec::with_capacity(n);
        let mut wavenumbers = Vec::with_capacity(n);
        let mut group_derivatives = Vec::with_capacity(n);
        for j in 1..=n {
            match spec.wavenumber(j, omega) {
                Ok(b) => {
                    eigenvalues.push(spec.eigenvalue(j));
                    wavenumbers.push(b);
                    group_derivatives.push(omega / (spec.c0 * spec.c0 * b));
                }
                Err(Error::CutoffMode { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        if wavenumbers.is_empty() {
            return Err(Error::NoPropagatingModes { omega });
        }
        Ok(ModeBasis {
            a: spec.a,
            c0: spec.c0,
            omega,
            k: spec.k(omega),
            count: wavenumbers.len(),
            eigenvalues,
            wavenumbers,
            group_derivatives,
        })
    }

    /// Basis at the carrier frequency.
    pub fn carrier(spec: &WaveguideSpec) -> Result<Self> {
        Self::new(spec, spec.omega0)
    }

    /// Same modes evaluated at a nearby frequency; fails if the mode count changes.
    pub fn at_frequency(&self, omega: f64) -> Result<Self> {
        let spec = WaveguideSpec {
            a: self.a,
            c0: self.c0,
            omega0: omega,
        };
        let other = ModeBasis::new(&spec, omega)?;
        if other.count != self.count {
            return Err(Error::Regime(format!(
                "mode count changes from {} to {} at omega = {omega}",
                self.count, other.count
            )));
        }
        Ok(other)
    }

    pub fn n(&self) -> usize {
        self.count
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k
    }

    /// `phi_j(x)` with 1-based `j`.
    #[inline]
    pub fn phi(&self, j: usize, x: f64) -> f64 {
        phi(self.a, j, x)
    }

    /// All mode values at `x`, indexed by `j - 1`.
    pub fn phis(&self, x: f64) -> Vec<f64> {
        (1..=self.count).map(|j| phi(self.a, j, x)).collect()
    }

    pub fn beta(&self, j: usize) -> f64 {
        self.wavenumbers[j - 1]
    }

    /// Largest modal beat `max |beta_j - beta_l|`.
    pub fn max_beat(&self) -> f64 {
        let first = self.wavenumbers[0];
        let last = self.wavenumbers[self.count - 1];
        first - last
    }

    /// Transverse Simpson grid with spacing at most `min(lambda / 8, a / (20 N))`,
    /// fine enough to resolve the shortest mode product.
    pub fn transverse_grid(&self) -> (Vec<f64>, Vec<f64>) {
        let step = (self.wavelength() / 8.0).min(self.a / (20.0 * self.count as f64));
        quadrature::simpson_grid(0.0, self.a, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(omega: f64) -> WaveguideSpec {
        WaveguideSpec {
            a: 1.0,
            c0: 1.0,
            omega0: omega,
        }
    }

    #[test]
    fn counts() {
        assert_eq!(unit(1.0).mode_count(20.0 * PI).unwrap(), 20);
        assert_eq!(unit(1.0).mode_count(10.5 * PI).unwrap(), 10);
        assert!(matches!(
            unit(1.0).mode_count(0.5 * PI),
            Err(Error::NoPropagatingModes { .. })
        ));
    }

    #[test]
    fn eval_and_boundaries() {
        let s = unit(20.5 * PI);
        assert!((s.mode_eval(1, 0.5).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.mode_eval(3, 0.0).unwrap(), 0.0);
        assert!(s.mode_eval(1, 1.5).is_err());
        assert!(s.mode_eval(1, -0.1).is_err());
    }

    #[test]
    fn cutoff_mode_rejected() {
        let s = unit(20.0 * PI);
        assert!(matches!(
            s.wavenumber(20, 20.0 * PI),
            Err(Error::CutoffMode { j: 20, .. })
        ));
        let basis = ModeBasis::new(&s, 20.0 * PI).unwrap();
        assert_eq!(basis.count, 19);
        assert!(matches!(
            s.wavenumber(21, 20.0 * PI),
            Err(Error::EvanescentMode { .. })
        ));
    }

    #[test]
    fn closed_form_beta() {
        let w = 20.5 * PI;
        let b = unit(w).wavenumber(1, w).unwrap();
        assert!((b - PI * (20.5f64 * 20.5 - 1.0).sqrt()).abs() < 1e-12 * b);
    }

    #[test]
    fn beta_prime_matches_centered_difference() {
        let s = unit(20.5 * PI);
        let w = 20.5 * PI;
        let d = 1e-4;
        for j in [1, 7, 20] {
            let fd =
                (s.wavenumber(j, w + d).unwrap() - s.wavenumber(j, w - d).unwrap()) / (2.0 * d);
            let bp = s.beta_prime(j, w).unwrap();
            assert!((fd - bp).abs() < 1e-6 * bp, "j={j} fd={fd} bp={bp}");
        }
    }

    #[test]
    fn orthogonality_by_simpson() {
        let v = quadrature::simpson(|x| phi(1.0, 2, x) * phi(1.0, 5, x), 0.0, 1.0, 1e-3);
        assert!(v.abs() < 1e-10);
    }
}
