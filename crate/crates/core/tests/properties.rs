use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use wgimage::correlation::{BroadbandSpec, Components, ModalSpectrum, SpectralSample};
use wgimage::fields::{ArrayGeometry, Reflector};
use wgimage::imaging::{
    expected_full_aperture_closed_form, expected_image, full_aperture_image,
    full_aperture_image_generic, limited_aperture_image, modal_migration, phi_j, psf_g, psf_h, psi,
    Functional,
};
use wgimage::medium::{MediumSampler, MediumSpec, SamplingGrid};
use wgimage::moments::{gamma_matrix, haar_intensity_correlation, MomentModel};
use wgimage::montecarlo::{run_indexed, Welford};
use wgimage::propagator::Propagator;
use wgimage::waveguide::{ModeBasis, WaveguideSpec};

fn guide(n: usize) -> ModeBasis {
    let spec = WaveguideSpec::new((n as f64 + 0.5) * PI, 1.0, 1.0).unwrap();
    ModeBasis::carrier(&spec).unwrap()
}

fn medium(sigma_nu: f64, seed: u64) -> MediumSpec {
    MediumSpec::default_for(2.0 * PI, 0.05, sigma_nu, seed)
}

fn cplx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn modal_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(r, i)| cplx(r, i)),
        n,
    )
}

fn spectrum(n: usize) -> impl Strategy<Value = ModalSpectrum> {
    prop::collection::vec(
        (modal_vec(n), modal_vec(n), 0.0..1.0f64, -0.01..0.01f64),
        1..4,
    )
    .prop_map(|s| {
        ModalSpectrum::from_samples(
            s.into_iter()
                .map(|(p, q, w, dw)| SpectralSample {
                    omega: 1.0 + dw,
                    weight: w,
                    primary: p,
                    secondary: q,
                })
                .collect(),
        )
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wavenumbers_decrease_and_satisfy_dispersion(a in 0.5..40.0f64, omega in 1.0..12.0f64) {
        let Ok(spec) = WaveguideSpec::new(a, 1.0, omega) else {
            prop_assert!(omega * a / PI < 1.0);
            return Ok(());
        };
        if let Ok(basis) = ModeBasis::carrier(&spec) {
            let k2 = omega * omega;
            for j in 1..=basis.n() {
                let lam = basis.eigenvalues[j - 1];
                prop_assert!(((lam + basis.beta(j).powi(2)) - k2).abs() <= 1e-12 * k2);
                prop_assert!(basis.beta(j) > 0.0);
                if j > 1 {
                    prop_assert!(basis.beta(j) < basis.beta(j - 1));
                }
            }
            prop_assert!(omega * a / PI >= basis.n() as f64);
            prop_assert!(omega * a / PI < (basis.n() + 1) as f64);
        }
    }

    #[test]
    fn psi_on_diagonal_is_phi_zero(n in 1usize..25, x in 0.01..0.99f64, z in -50.0..50.0f64) {
        let basis = guide(n);
        let x = x * basis.a;
        let v = psi(x, z, x, z, &basis);
        prop_assert_eq!(v.im, 0.0);
        prop_assert!((v.re - phi_j(0, x, &basis)).abs() <= 1e-15 * v.re.abs().max(1e-300));
    }

    #[test]
    fn point_spread_functions_are_even(s in 0.0..20.0f64) {
        prop_assert!((psf_h(s) - psf_h(-s)).abs() <= 1e-12);
        prop_assert!((psf_g(s) - psf_g(-s)).abs() <= 1e-12);
    }

    #[test]
    fn correlation_is_hermitian(spec in spectrum(4), x1 in 0.05..0.95f64, x2 in 0.05..0.95f64, tau in -30.0..30.0f64) {
        let basis = guide(4);
        let (x1, x2) = (x1 * basis.a, x2 * basis.a);
        let c = spec.at(x1, x2, tau, Components::ALL, &basis);
        let d = spec.at(x2, x1, -tau, Components::ALL, &basis).conj();
        prop_assert!((c - d).norm() <= 1e-10 * (1.0 + c.norm()));
    }

    #[test]
    fn factorized_full_aperture_matches_generic_form(spec in spectrum(5)) {
        let basis = guide(5);
        let xs = [0.3 * basis.a, 0.5 * basis.a, 0.8 * basis.a];
        let zs = [-7.0, 0.5, 13.0, 40.0];
        let comps = Components::RETAINED;
        let fast = full_aperture_image(&spec, comps, &basis, &xs, &zs).unwrap();
        let slow = full_aperture_image_generic(|j, l, tau| spec.modal(j, l, tau, comps), &basis, &xs, &zs);
        let scale = 1.0 + max_abs(&slow.values) + max_abs(&slow.imag);
        prop_assert!(max_diff(&fast.values, &slow.values) <= 1e-12 * scale);
        prop_assert!(max_diff(&fast.imag, &slow.imag) <= 1e-12 * scale);
    }

    #[test]
    fn full_limited_aperture_is_beta_squared_migration(spec in spectrum(4)) {
        let basis = guide(4);
        let geo = ArrayGeometry::full(&basis).unwrap();
        let xs = [0.25 * basis.a, 0.6 * basis.a];
        let zs = [3.0, 11.0, 29.0];
        let comps = Components::RETAINED;
        let la = limited_aperture_image(&spec, comps, &geo, &basis, &xs, &zs).unwrap();
        let direct = modal_migration(|j, l, tau| spec.modal(j, l, tau, comps), &basis, &xs, &zs, 2);
        let re: Vec<f64> = direct.iter().map(|c| c.re).collect();
        let scale = 1.0 + max_abs(&re);
        // The full-aperture Gram matrix is the identity up to quadrature error.
        prop_assert!(max_diff(&la.values, &re) <= 1e-6 * scale);
    }

    #[test]
    fn expected_image_matches_closed_form(n in 3usize..12, xs_frac in 0.1..0.9f64, xr_frac in 0.2..0.8f64, zr in 20.0..80.0f64) {
        let basis = guide(n);
        let refl = Reflector { x_r: xr_frac * basis.a, z_r: zr, sigma_r: 0.1 };
        let x_s = xs_frac * basis.a;
        let xs: Vec<f64> = (0..5).map(|i| refl.x_r + (i as f64 - 2.0) * 0.7).collect();
        let zs: Vec<f64> = (0..5).map(|i| zr + (i as f64 - 2.0) * 0.9).collect();
        let e = expected_image(Functional::Fa, Components::RETAINED, &basis, x_s, &refl, None, &xs, &zs).unwrap();
        let c = expected_full_aperture_closed_form(&basis, x_s, &refl, &xs, &zs);
        let scale = max_abs(&c.values);
        prop_assert!(max_diff(&e.values, &c.values) <= 1e-9 * scale, "{}", max_diff(&e.values, &c.values) / scale);
    }

    #[test]
    fn gamma_is_symmetric_with_nonnegative_rates(n in 2usize..9, ell in 0.5..3.0f64, sigma in 0.5..4.0f64) {
        let basis = guide(n);
        let mut m = medium(sigma, 0);
        m.ell_x = ell * basis.wavelength();
        m.ell_z = ell * basis.wavelength();
        let g = gamma_matrix(&m, &basis);
        for j in 0..n {
            for l in 0..n {
                prop_assert_eq!(g[(j, l)], g[(l, j)]);
                if j != l {
                    prop_assert!(g[(j, l)] >= 0.0);
                }
            }
        }
        let model = MomentModel::new(&m, &basis).unwrap();
        prop_assert!(model.l_equip > 0.0);
        prop_assert!(model.d.iter().all(|&d| d > 0.0));
        for j in 0..n {
            for l in 0..n {
                if j != l {
                    prop_assert!(model.q[j * n + l] > 0.0);
                }
            }
        }
    }

    #[test]
    fn broadband_grid_is_symmetric_with_unit_weight(width in 0.2..3.0f64, spacing in 0.05..0.5f64, half in 3usize..40) {
        let b = BroadbandSpec::gaussian_uniform(1.5, 0.05, 1.0, width, spacing, 2 * half + 1).unwrap();
        let m = b.h_grid.len();
        for i in 0..m {
            prop_assert!((b.h_grid[i] + b.h_grid[m - 1 - i]).abs() <= 1e-12);
            prop_assert!(b.f0_sq[i] >= 0.0);
        }
        let w = b.weights();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn welford_variance_is_nonnegative(xs in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 2..40)) {
        let mut w = Welford::new(3);
        for x in &xs {
            w.push(x);
        }
        prop_assert!(w.variance().iter().all(|&v| v >= 0.0));
        for d in 0..3 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            prop_assert!((w.mean()[d] - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        }
    }

    #[test]
    fn ordered_reduction_ignores_worker_count(count in 1u64..40, workers in 0usize..5) {
        let collect = |w: usize| {
            let mut out = Vec::new();
            run_indexed(count, w, |i| Ok((i as f64 * 0.37).sin()), |i, v| {
                out.push((i, v));
                Ok(())
            })
            .unwrap();
            out
        };
        prop_assert_eq!(collect(workers), collect(1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coupling_is_symmetric_and_propagator_unitary(seed in any::<u64>(), index in 0u64..1000) {
        let basis = guide(4);
        let m = medium(2.0, seed);
        let l = 0.05;
        let grid = SamplingGrid::default_for(&m, basis.wavelength());
        let sampler = MediumSampler::new(&m, &basis, l / (m.epsilon * m.epsilon), grid).unwrap();
        let c = sampler.sample(index);
        for k in (0..c.samples()).step_by(97) {
            for j in 1..=4 {
                for q in 1..=4 {
                    prop_assert_eq!(c.get(k, j, q), c.get(k, q, j));
                }
            }
        }
        let prop = Propagator::with_default_step(&basis, &m).unwrap();
        let t0 = prop.matrix(&c, 0.0).unwrap();
        prop_assert_eq!(t0.matrix, DMatrix::identity(4, 4));
        let t = prop.matrix(&c, l).unwrap();
        prop_assert!(t.unitarity_defect() <= 1e-8);
        prop_assert_eq!(&t, &prop.matrix(&sampler.sample(index), l).unwrap());
    }
}

#[test]
fn zero_fluctuations_give_identity_transmission() {
    let basis = guide(5);
    let m = medium(0.0, 9);
    let grid = SamplingGrid::default_for(&m, basis.wavelength());
    let sampler = MediumSampler::new(&m, &basis, 40.0, grid).unwrap();
    let prop = Propagator::with_default_step(&basis, &m).unwrap();
    for i in 0..3 {
        let t = prop
            .matrix(&sampler.sample(i), 40.0 * m.epsilon * m.epsilon)
            .unwrap();
        for j in 0..5 {
            for l in 0..5 {
                let want = if j == l { 1.0 } else { 0.0 };
                assert!((t.matrix[(j, l)] - cplx(want, 0.0)).norm() < 1e-12);
            }
        }
    }
}

/// Haar unitary from the QR factorization of a complex Ginibre matrix with
/// the phases of `R` divided out.
fn haar(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        cplx(re, im)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        let d = r[(c, c)];
        let ph = d / d.norm();
        for row in 0..n {
            q[(row, c)] *= ph;
        }
    }
    q
}

#[test]
fn haar_intensity_correlations_match_sampling() {
    let n = 4;
    let draws = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs = [
        ((0, 0), (0, 0)),
        ((0, 0), (0, 2)),
        ((1, 0), (3, 0)),
        ((0, 0), (2, 3)),
    ];
    let mut sum = [0.0; 4];
    let mut sum2 = [0.0; 4];
    for _ in 0..draws {
        let u = haar(n, &mut rng);
        for (k, &(p, q)) in pairs.iter().enumerate() {
            let v = u[p].norm_sqr() * u[q].norm_sqr();
            sum[k] += v;
            sum2[k] += v * v;
        }
    }
    for (k, &(p, q)) in pairs.iter().enumerate() {
        let mean = sum[k] / draws as f64;
        let se = ((sum2[k] / draws as f64 - mean * mean) / draws as f64).sqrt();
        let want = haar_intensity_correlation(p, q, n);
        assert!(
            (mean - want).abs() < 4.0 * se,
            "{p:?} {q:?}: {mean} vs {want} (se {se})"
        );
    }
    assert_relative_eq!(
        haar_intensity_correlation((0, 0), (1, 1), n),
        1.0 / 15.0,
        max_relative = 1e-15
    );
}
