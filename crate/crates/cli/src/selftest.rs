//! Quick numerical health checks run by `risbc selftest`.

use crate::HarnessError;
use ris_bc::drivers::{predict_complexity, run_algorithm, Algorithm, ComplexityParams, DriverOptions, Instance};
use ris_bc::duality::{mac_to_bc, verify_duality};
use ris_bc::linalg::{hermitian_part, CMat, C64};
use ris_bc::model::{composite_channel, grad_covariances, grad_theta, mac_objective_nats, CovarianceSet, Domain, PhaseVector};
use ris_bc::projections::project_feasible_covariances;
use ris_bc::rng::SeededRng;
use ris_bc::scenario::{PlacementSpec, SystemConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn small_instance(seed: u64) -> Result<Instance, HarnessError> {
    let config = SystemConfig {
        users: 3,
        tx_antennas: 4,
        elements_per_surface: 9,
        ..SystemConfig::default()
    };
    Ok(Instance::random(&config, &PlacementSpec::default(), seed, 0)?)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn phase_gradient_error(inst: &Instance, rng: &mut SeededRng) -> Result<f64, HarnessError> {
    let ch = &inst.channels;
    let theta = &inst.theta0;
    let cov = &inst.cov0;
    let grad = grad_theta(ch, theta, cov)?;
    let phi: Vec<f64> = (0..theta.len()).map(|_| rng.uniform() - 0.5).collect();
    let rotated = |t: f64| -> Result<f64, HarnessError> {
        let v = theta
            .as_vector()
            .iter()
            .zip(&phi)
            .map(|(z, p)| z * C64::from_polar(1.0, t * p))
            .collect::<Vec<_>>();
        let pv = PhaseVector::new(ris_bc::linalg::CVec::from_vec(v))?;
        Ok(mac_objective_nats(&composite_channel(ch, &pv)?, cov)?)
    };
    let h = 1e-5;
    let fd = (rotated(h)? - rotated(-h)?) / (2.0 * h);
    let analytic: f64 = grad
        .iter()
        .zip(theta.as_vector().iter())
        .zip(&phi)
        .map(|((g, z), p)| 2.0 * (g.conj() * C64::new(0.0, *p) * z).re)
        .sum();
    Ok(rel_err(fd, analytic))
}

fn covariance_gradient_error(inst: &Instance, rng: &mut SeededRng) -> Result<f64, HarnessError> {
    let h = composite_channel(&inst.channels, &inst.theta0)?;
    let cov = &inst.cov0;
    let grads = grad_covariances(&h, cov)?;
    let dirs: Vec<CMat> = cov
        .matrices()
        .iter()
        .map(|m| hermitian_part(&rng.complex_normal_matrix(m.nrows(), m.nrows(), 1.0)))
        .collect();
    let shifted = |t: f64| -> Result<f64, HarnessError> {
        let mats = cov.matrices().iter().zip(&dirs).map(|(m, d)| m + d.scale(t)).collect();
        Ok(mac_objective_nats(&h, &CovarianceSet::new(Domain::Mac, mats)?)?)
    };
    let step = 1e-6;
    let fd = (shifted(step)? - shifted(-step)?) / (2.0 * step);
    let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| (g * d).trace().re).sum();
    Ok(rel_err(fd, analytic))
}

/// Runs every check; an `Err` means a check could not be evaluated at all.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>, HarnessError> {
    let mut out = Vec::new();
    let mut rng = SeededRng::new(seed, 1 << 48);
    let inst = small_instance(seed)?;

    let e = phase_gradient_error(&inst, &mut rng)?;
    out.push(check("phase gradient vs finite differences", e <= 1e-5, format!("relative error {e:.2e}")));
    let e = covariance_gradient_error(&inst, &mut rng)?;
    out.push(check("covariance gradient vs finite differences", e <= 1e-5, format!("relative error {e:.2e}")));

    let opts = DriverOptions::default();
    let mut worst_drop: f64 = 0.0;
    let mut finals = Vec::new();
    for algo in Algorithm::ALL {
        let trace = run_algorithm(algo, &inst, &opts)?;
        worst_drop = worst_drop.max(trace.max_decrease());
        finals.push(trace);
    }
    out.push(check("driver traces are monotone", worst_drop <= 1e-9, format!("largest drop {worst_drop:.2e} bits")));

    let h = composite_channel(&inst.channels, &finals[0].theta)?;
    let order: Vec<usize> = (0..inst.channels.users()).collect();
    let bc = mac_to_bc(&h, &finals[0].cov, &order)?;
    let report = verify_duality(&h, &finals[0].cov, &bc, &order)?;
    out.push(check(
        "MAC to BC conversion preserves rate and power",
        !report.violated,
        format!("rate gap {:.2e}, power gap {:.2e}", report.rate_gap, report.power_gap),
    ));

    let moved: Vec<CMat> = finals[2]
        .cov
        .matrices()
        .iter()
        .map(|m| m + hermitian_part(&rng.complex_normal_matrix(m.nrows(), m.nrows(), 1.0)))
        .collect();
    let once = project_feasible_covariances(&moved, inst.power)?;
    let twice = project_feasible_covariances(&once, inst.power)?;
    let drift = once.iter().zip(&twice).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.push(check("covariance projection is idempotent", drift <= 1e-12, format!("drift {drift:.2e}")));

    let p = ComplexityParams {
        k: 2,
        nt: 8,
        nr: 2,
        ns: 1,
        nris: 225,
        t: 24,
        i: 3,
        ..ComplexityParams::default()
    };
    let c = predict_complexity(Algorithm::Ao, &p)?;
    out.push(check("complexity model spot value", c == 211392, format!("{c}")));
    Ok(out)
}
