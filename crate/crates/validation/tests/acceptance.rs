//! Desk-scale acceptance suite. Each test prints one PASS/FAIL line to the
//! terminal, bypassing the harness capture, followed by its checks.

use std::io::Write;
use std::sync::{LazyLock, OnceLock};

use wgimage::montecarlo::{
    estimate_coherence_radius, run_broadband_ensemble, run_ensemble, run_transmission_ensemble,
    BroadbandStats, CoherenceEstimate, EnsembleStats, TransmissionStats,
};
use wgimage::validate::{self, CriterionReport, ValidationConfig};

const SEED: u64 = 1;

static CONFIG: LazyLock<ValidationConfig> = LazyLock::new(|| ValidationConfig::desk_scale(SEED));
static MOMENTS: OnceLock<TransmissionStats> = OnceLock::new();
static IMAGING: OnceLock<EnsembleStats> = OnceLock::new();
static BROADBAND: OnceLock<(BroadbandStats, CoherenceEstimate)> = OnceLock::new();

fn moments() -> &'static TransmissionStats {
    MOMENTS
        .get_or_init(|| run_transmission_ensemble(&CONFIG.moments).expect("transmission ensemble"))
}

fn imaging() -> &'static EnsembleStats {
    IMAGING.get_or_init(|| run_ensemble(&CONFIG.imaging).expect("imaging ensemble"))
}

fn broadband() -> &'static (BroadbandStats, CoherenceEstimate) {
    BROADBAND.get_or_init(|| {
        let stats = run_broadband_ensemble(&CONFIG.broadband).expect("broadband ensemble");
        let coherence = estimate_coherence_radius(&CONFIG.coherence).expect("coherence radius");
        (stats, coherence)
    })
}

fn conclude(r: CriterionReport) {
    let mut out = String::new();
    out.push_str(&r.line());
    out.push('\n');
    for c in &r.checks {
        let tag = if c.informational {
            "info"
        } else if c.pass {
            "ok"
        } else {
            "FAIL"
        };
        out.push_str(&format!(
            "    [{tag}] {} = {:.6e} (stderr {:.2e}, target {:.6e}, tol {:.2e})",
            c.quantity, c.estimate, c.stderr, c.target, c.tolerance
        ));
        if let Some(ci) = c.ci {
            out.push_str(&format!(" ci [{:.4e}, {:.4e}]", ci.lo, ci.hi));
        }
        if let Some(n) = &c.note {
            out.push_str(&format!(" -- {n}"));
        }
        out.push('\n');
    }
    let _ = std::io::stderr().lock().write_all(out.as_bytes());
    assert!(r.pass, "{}", r.line());
}

#[test]
fn config_is_consistent() {
    CONFIG.validate().unwrap();
}

#[test]
fn unitarity_defect_and_cost() {
    conclude(validate::unitarity(&CONFIG.unitarity).unwrap());
}

#[test]
fn transmission_moment_limits() {
    conclude(validate::moment_limits(moments(), CONFIG.moments.medium.epsilon).unwrap());
}

#[test]
fn coupled_power_matches_monte_carlo() {
    conclude(validate::coupled_power(moments()).unwrap());
}

#[test]
fn fourth_order_moments() {
    conclude(validate::fourth_moments(moments(), CONFIG.moments.medium.epsilon).unwrap());
}

#[test]
fn kirchhoff_mean_vanishes() {
    conclude(validate::kirchhoff_failure(imaging()));
}

#[test]
fn resolution_of_mean_images() {
    conclude(validate::resolution(imaging(), &CONFIG.imaging.scenario).unwrap());
}

#[test]
fn point_spread_constants() {
    conclude(validate::psf_constants());
}

#[test]
fn mean_peak_amplitude() {
    conclude(validate::peak_amplitude_check(imaging(), &CONFIG.imaging.scenario).unwrap());
}

#[test]
fn time_harmonic_peak_variance() {
    conclude(validate::instability(imaging(), &CONFIG.imaging.scenario, CONFIG.resamples).unwrap());
}

#[test]
fn bandwidth_stabilizes_peak() {
    let (stats, coherence) = broadband();
    conclude(
        validate::broadband(stats, coherence, CONFIG.resamples, &CONFIG.broadband.waive).unwrap(),
    );
}

#[test]
fn reruns_are_byte_identical() {
    conclude(validate::determinism(&CONFIG.determinism).unwrap());
}
