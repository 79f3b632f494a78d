//! Coupled-power theory for the transmission moments.
//!
//! Rates are expressed per unit normalized distance `L` (physical distance
//! `L / eps^2`). The mode-conversion rate is
//! `Gamma_jn = k^4 / (4 beta_j beta_n) * R_jn(beta_j - beta_n)` where `R_jn` is
//! the axial power spectrum of the coupling coefficient `C_jn`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::medium::{MediumSpec, TransverseKernel};
use crate::waveguide::ModeBasis;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentModel {
    pub n: usize,
    /// Off-diagonal conversion rates, row-major, zero diagonal.
    pub gamma: Vec<f64>,
    /// Damping rates of the mean amplitudes `E[T_jj]`.
    pub d: Vec<f64>,
    /// Decoherence rates of `E[T_jj conj(T_ll)]`, row-major.
    pub q: Vec<f64>,
    pub l_equip: f64,
}

/// `Gamma_jn` for all pairs; the diagonal holds the self-coupling rate
/// `k^4 R_jj(0) / (4 beta_j^2)`, which the power equations ignore.
pub fn gamma_matrix(medium: &MediumSpec, basis: &ModeBasis) -> DMatrix<f64> {
    let kernel = TransverseKernel::new(medium, basis);
    let x = kernel.pair_overlaps(basis);
    gamma_from_overlaps(medium, basis, &x)
}

fn gamma_from_overlaps(medium: &MediumSpec, basis: &ModeBasis, x: &[f64]) -> DMatrix<f64> {
    let n = basis.count;
    let k4 = basis.k.powi(4);
    let s2 = medium.sigma_nu * medium.sigma_nu;
    DMatrix::from_fn(n, n, |j, l| {
        let (bj, bl) = (basis.wavenumbers[j], basis.wavenumbers[l]);
        k4 / (4.0 * bj * bl) * s2 * x[j * n + l] * medium.rho_z_hat(bj - bl)
    })
}

impl MomentModel {
    pub fn new(medium: &MediumSpec, basis: &ModeBasis) -> Result<Self> {
        let n = basis.count;
        let kernel = TransverseKernel::new(medium, basis);
        let x = kernel.pair_overlaps(basis);
        let xi = kernel.intensity_overlaps(basis);
        let full = gamma_from_overlaps(medium, basis, &x);
        let mut model = Self::from_gamma(&full)?;
        let k4 = basis.k.powi(4);
        let s2 = medium.sigma_nu * medium.sigma_nu;
        let zero = medium.rho_z_hat(0.0);
        model.d = (0..n)
            .map(|j| 0.5 * (0..n).map(|m| full[(j, m)]).sum::<f64>())
            .collect();
        for j in 0..n {
            for l in 0..n {
                let cross = k4 / (4.0 * basis.wavenumbers[j] * basis.wavenumbers[l])
                    * s2
                    * xi[j * n + l]
                    * zero;
                model.q[j * n + l] = model.d[j] + model.d[l] - cross;
            }
        }
        Ok(model)
    }

    /// Model from a conversion-rate matrix alone; the diagonal is ignored.
    pub fn from_gamma(gamma: &DMatrix<f64>) -> Result<Self> {
        let n = gamma.nrows();
        let mut g = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                if j != l {
                    g[j * n + l] = gamma[(j, l)];
                }
            }
        }
        let mut model = MomentModel {
            n,
            d: (0..n)
                .map(|j| 0.5 * (0..n).map(|l| g[j * n + l]).sum::<f64>())
                .collect(),
            q: vec![0.0; n * n],
            gamma: g,
            l_equip: 0.0,
        };
        for j in 0..n {
            for l in 0..n {
                model.q[j * n + l] = model.d[j] + model.d[l];
            }
        }
        model.l_equip = equipartition_distance(&model)?;
        Ok(model)
    }

    /// Generator of the power equations, `dP/dL = G P`.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |j, l| {
            if j == l {
                -(0..n).map(|m| self.gamma[j * n + m]).sum::<f64>()
            } else {
                self.gamma[j * n + l]
            }
        })
    }

    pub fn gamma_at(&self, j: usize, l: usize) -> f64 {
        self.gamma[(j - 1) * self.n + (l - 1)]
    }
}

/// `1 / |Lambda_2|`, the inverse spectral gap of the power generator.
pub fn equipartition_distance(model: &MomentModel) -> Result<f64> {
    let n = model.n;
    if n == 1 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(model.generator());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = -vals[1];
    if scale == 0.0 || gap <= 1e-12 * scale {
        return Err(Error::NoEquipartition);
    }
    Ok(1.0 / gap)
}

/// Mean mode powers `T_j^(l)(L)` for launch mode `l` (1-based).
pub fn coupled_power_solve(model: &MomentModel, l_dist: f64, launch: usize) -> Vec<f64> {
    coupled_power_curves(model, &[l_dist], launch).remove(0)
}

/// Mean mode powers at several distances, sharing one eigendecomposition.
pub fn coupled_power_curves(
    model: &MomentModel,
    distances: &[f64],
    launch: usize,
) -> Vec<Vec<f64>> {
    let n = model.n;
    let eig = SymmetricEigen::new(model.generator());
    let v = &eig.eigenvectors;
    let coeff: Vec<f64> = (0..n).map(|m| v[(launch - 1, m)]).collect();
    distances
        .iter()
        .map(|&d| {
            let w = DVector::from_fn(n, |m, _| coeff[m] * (eig.eigenvalues[m] * d).exp());
            (v * w).iter().copied().collect()
        })
        .collect()
}

/// Limit of `E[T_jl conj(T_mn)]` beyond equipartition.
pub fn moment_limit_second(j: usize, l: usize, m: usize, n_idx: usize, n: usize) -> f64 {
    if (j, l) == (m, n_idx) {
        1.0 / n as f64
    } else {
        0.0
    }
}

/// Limit of `E[conj(T_p0) T_p1 conj(T_p2) T_p3]` at one frequency, `p_i = (row, col)`.
pub fn moment_limit_fourth(p: [(usize, usize); 4], n: usize) -> f64 {
    let nf = n as f64;
    let base = 1.0 / (nf * (nf + 1.0));
    if p[0] == p[1] && p[1] == p[2] && p[2] == p[3] {
        2.0 * base
    } else if (p[0] == p[1] && p[2] == p[3]) || (p[0] == p[3] && p[2] == p[1]) {
        base
    } else {
        0.0
    }
}

/// Two-frequency limit: `1 / N^2` when each frequency carries a matched pair.
pub fn moment_limit_fourth_two_freq(p: [(usize, usize); 4], n: usize) -> f64 {
    if p[0] == p[1] && p[2] == p[3] {
        1.0 / (n * n) as f64
    } else {
        0.0
    }
}

/// Exact `E[|U_jl|^2 |U_pq|^2]` for a Haar-distributed `N x N` unitary.
pub fn haar_intensity_correlation(a: (usize, usize), b: (usize, usize), n: usize) -> f64 {
    let nf = n as f64;
    if a == b {
        2.0 / (nf * (nf + 1.0))
    } else if a.0 == b.0 || a.1 == b.1 {
        1.0 / (nf * (nf + 1.0))
    } else {
        1.0 / (nf * nf - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_mode_gap() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let m = MomentModel::from_gamma(&g).unwrap();
        assert!((m.l_equip - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_gap() {
        for n in [3usize, 5, 8] {
            let g = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.7 });
            let m = MomentModel::from_gamma(&g).unwrap();
            assert!((m.l_equip - 1.0 / (n as f64 * 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn reducible_rejected() {
        let g = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(MomentModel::from_gamma(&g), Err(Error::NoEquipartition));
    }

    #[test]
    fn fourth_moment_table() {
        let n = 5;
        assert!((moment_limit_fourth([(1, 2); 4], n) - 2.0 / 30.0).abs() < 1e-15);
        assert!(
            (moment_limit_fourth([(1, 2), (1, 2), (3, 4), (3, 4)], n) - 1.0 / 30.0).abs() < 1e-15
        );
        assert!(
            (moment_limit_fourth([(1, 2), (3, 4), (3, 4), (1, 2)], n) - 1.0 / 30.0).abs() < 1e-15
        );
        assert_eq!(
            moment_limit_fourth([(1, 2), (3, 4), (1, 2), (3, 4)], n),
            0.0
        );
        assert!(
            (moment_limit_fourth_two_freq([(1, 2), (1, 2), (3, 4), (3, 4)], n) - 0.04).abs()
                < 1e-15
        );
        assert_eq!(
            moment_limit_fourth_two_freq([(1, 2), (3, 4), (3, 4), (1, 2)], n),
            0.0
        );
    }
}
