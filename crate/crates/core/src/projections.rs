//! Euclidean projections onto the PSD cone, the sum-power covariance set and
//! the unit-modulus set.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_drift, hermitian_part, CMat, CVec, HermitianEigen, C64};
use crate::model::{CovarianceSet, PhaseVector};

/// Largest Hermitian drift that is silently symmetrized away.
pub const SYMMETRIZE_TOL: f64 = 1e-8;

fn symmetrized(x: &CMat) -> Result<CMat> {
    let drift = hermitian_drift(x);
    if !(drift <= SYMMETRIZE_TOL) {
        return Err(Error::NotHermitian(drift));
    }
    Ok(hermitian_part(x))
}

/// Nearest PSD matrix in Frobenius norm: clip negative eigenvalues to zero.
pub fn project_psd(x: &CMat) -> Result<CMat> {
    let x = symmetrized(x)?;
    Ok(HermitianEigen::new(&x).reassemble_with(|v| v.max(0.0)))
}

/// Water level `eta >= 0` of the projection of eigenvalues `values` onto
/// `{e >= 0, sum e <= power}`: the projected eigenvalues are
/// `max(value - eta, 0)`.
///
/// Returns 0 when clipping alone satisfies the budget. Otherwise `eta` is
/// bracketed by bisection on `[0, max value]` and then fixed exactly from the
/// active set the bracket identifies.
pub fn water_level(values: &[f64], power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::InvalidParameter("power budget must be positive".into()));
    }
    let mass = |eta: f64| values.iter().map(|&v| (v - eta).max(0.0)).sum::<f64>();
    if mass(0.0) <= power {
        return Ok(0.0);
    }
    let tol = 1e-12 * power.max(1.0);
    let (mut lo, mut hi) = (0.0, values.iter().cloned().fold(0.0, f64::max));
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    let active: Vec<f64> = values.iter().copied().filter(|&v| v > eta).collect();
    if active.is_empty() {
        return Ok(eta);
    }
    let exact = (active.iter().sum::<f64>() - power) / active.len() as f64;
    // keep the exact level only if it reproduces the same active set
    let consistent = values
        .iter()
        .all(|&v| (v > exact) == (v > eta) || (v - exact).abs() <= tol);
    Ok(if consistent && exact >= 0.0 { exact } else { eta })
}

/// Projection onto `{S̄ : S̄_k PSD, sum_k tr S̄_k <= power}`.
///
/// Each matrix keeps its eigenvectors; the pooled eigenvalues of all users
/// are projected onto the capped simplex with a single water level.
pub fn project_feasible_covariances(cov: &[CMat], power: f64) -> Result<Vec<CMat>> {
    if !(power > 0.0) {
        return Err(Error::InvalidParameter("power budget must be positive".into()));
    }
    let eigs = cov
        .iter()
        .map(|m| symmetrized(m).map(|s| HermitianEigen::new(&s)))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<f64> = eigs.iter().flat_map(|e| e.values.iter().copied()).collect();
    let eta = water_level(&pooled, power)?;
    let out: Vec<CMat> = eigs
        .iter()
        .map(|e| e.reassemble_with(|v| (v - eta).max(0.0)))
        .collect();
    Ok(rescale_to_budget(out, power))
}

/// Guards against the trace landing a few ulps above the budget after
/// reassembly.
fn rescale_to_budget(mats: Vec<CMat>, power: f64) -> Vec<CMat> {
    let total: f64 = mats.iter().map(crate::linalg::trace_re).sum();
    if total > power {
        let f = power / total;
        mats.into_iter().map(|m| m.scale(f)).collect()
    } else {
        mats
    }
}

/// [`project_feasible_covariances`] for a typed covariance set.
pub fn project_covariance_set(cov: &CovarianceSet, power: f64) -> Result<CovarianceSet> {
    let mats = project_feasible_covariances(cov.matrices(), power)?;
    Ok(CovarianceSet::from_trusted(cov.domain(), mats))
}

/// Entry-wise `theta_l / |theta_l|`, mapping zero to `1 + 0j`.
pub fn project_unit_modulus(theta: &CVec) -> PhaseVector {
    let projected = theta.map(|z| {
        let r = z.norm();
        if r == 0.0 || !r.is_finite() {
            C64::new(1.0, 0.0)
        } else {
            z / r
        }
    });
    PhaseVector::new(projected).expect("normalized entries have unit modulus")
}
