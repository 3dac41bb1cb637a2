//! Phase-shift optimization for fixed covariances.
//!
//! Two strategies are offered. [`sequential_sweep`] maximizes the objective
//! exactly over one element at a time, keeping the composite channels in sync
//! with rank-one corrections. [`theta_gradient_step`] moves all elements at
//! once along the Euclidean gradient, projects back onto the unit circle and
//! backtracks until a quadratic minorant certifies ascent.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, ln_det_hpd, CMat, CVec, C64};
use crate::model::{
    composite_channel, grad_theta_cached, mac_objective_nats, CompositeChannels, CovarianceSet, PhaseVector,
};
use crate::projections::project_unit_modulus;
use crate::scenario::ChannelSet;
use nalgebra::Cholesky;

/// Below this magnitude of `sigma_l` the objective is treated as flat in `theta_l`.
pub const FLAT_TOL: f64 = 1e-14;
/// Backtracking gives up after this many reductions and keeps the iterate.
pub const MAX_BACKTRACKS: usize = 100;

/// Step-size state of the projected-gradient phase update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateParams {
    /// Current step `mu_n`; carried from one call to the next.
    pub mu: f64,
    pub mu0: f64,
    /// Backtracking factor in `(0, 1)`.
    pub rho: f64,
}

impl SurrogateParams {
    pub fn new(mu0: f64, rho: f64) -> Result<Self> {
        if !(mu0 > 0.0) || !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter("need mu0 > 0 and 0 < rho < 1".into()));
        }
        Ok(Self { mu: mu0, mu0, rho })
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            mu: 1e4,
            mu0: 1e4,
            rho: 0.5,
        }
    }
}

/// Per-element quantities shared by the closed form and the sweep.
struct ElementTerms {
    /// `A_l`, independent of `theta_l`.
    a: CMat,
    /// `x` with `B_l = x u_l`.
    x: CVec,
    /// Row `u_l` of `U` as a column vector `u_l^T`.
    u: CVec,
}

fn element_terms(l: usize, channels: &ChannelSet, h: &CompositeChannels, m: &CMat, theta_l: C64, cov: &CovarianceSet) -> ElementTerms {
    let nt = channels.tx_antennas();
    let u = channels.bs_ris.row(l).transpose();
    let mut x = CVec::zeros(nt);
    for ((g, hk), s) in channels.ris_user.iter().zip(&h.h).zip(cov.matrices()) {
        let gl = g.column(l);
        let sg = s * gl;
        // C_k^H S_k g = H_k^H S_k g - conj(theta_l) u^H (g^H S_k g)
        let gsg = gl.dotc(&sg);
        x += hk.adjoint() * &sg - u.conjugate() * (theta_l.conj() * gsg);
    }
    let b = &x * u.transpose();
    let a = hermitian_part(&(m - b.map(|z| z * theta_l) - b.adjoint().map(|z| z * theta_l.conj())));
    ElementTerms { a, x, u }
}

/// `sigma_l = u_l A_l^{-1} x`, the only non-zero eigenvalue of `A_l^{-1} B_l`.
fn sigma(terms: &ElementTerms) -> Result<C64> {
    let n = terms.a.nrows();
    let chol = Cholesky::new(terms.a.clone()).ok_or(Error::NotPsd(f64::NAN))?;
    let y = chol.solve(&terms.x);
    debug_assert_eq!(y.len(), n);
    Ok(terms.u.dot(&y))
}

fn optimal_phase(s: C64, current: C64) -> C64 {
    if s.norm() <= FLAT_TOL {
        current
    } else {
        C64::from_polar(1.0, -s.arg())
    }
}

/// Best value of element `l` with every other element and all covariances
/// fixed: `exp(-j arg(sigma_l))`, or the current value when the objective
/// does not depend on `theta_l`.
pub fn closed_form_element(l: usize, channels: &ChannelSet, theta: &PhaseVector, cov: &CovarianceSet) -> Result<C64> {
    if l >= theta.len() {
        return Err(Error::Dimension(format!("element {l} out of range")));
    }
    let h = composite_channel(channels, theta)?;
    let m = h.sum_matrix(cov)?;
    let current = theta.as_vector()[l];
    let terms = element_terms(l, channels, &h, &m, current, cov);
    Ok(optimal_phase(sigma(&terms)?, current))
}

/// Result of a full element-by-element sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub theta: PhaseVector,
    /// Natural-log objective before the sweep and after every element.
    pub objectives: Vec<f64>,
}

/// One pass of [`closed_form_element`] over all elements in index order.
pub fn sequential_sweep(channels: &ChannelSet, theta: &PhaseVector, cov: &CovarianceSet) -> Result<PhaseVector> {
    Ok(sequential_sweep_with(channels, theta, cov, false)?.theta)
}

/// Sweep with the objective trace. With `full_recompute` the composite
/// channels are rebuilt from scratch after each element instead of being
/// corrected by rank-one updates.
pub fn sequential_sweep_with(
    channels: &ChannelSet,
    theta: &PhaseVector,
    cov: &CovarianceSet,
    full_recompute: bool,
) -> Result<SweepOutcome> {
    let mut theta = theta.clone();
    let mut h = composite_channel(channels, &theta)?;
    let mut m = h.sum_matrix(cov)?;
    let mut objectives = Vec::with_capacity(theta.len() + 1);
    objectives.push(ln_det_hpd(&m)?);
    for l in 0..theta.len() {
        let old = theta.as_vector()[l];
        let terms = element_terms(l, channels, &h, &m, old, cov);
        let new = optimal_phase(sigma(&terms)?, old);
        if new != old {
            theta.set_unchecked(l, new);
            if full_recompute {
                h = composite_channel(channels, &theta)?;
                m = h.sum_matrix(cov)?;
            } else {
                let delta = new - old;
                let ut = terms.u.transpose();
                for (hk, g) in h.h.iter_mut().zip(&channels.ris_user) {
                    *hk += g.column(l) * &ut * delta;
                }
                let b = &terms.x * &ut;
                m = hermitian_part(&(&terms.a + b.map(|z| z * new) + b.adjoint().map(|z| z * new.conj())));
            }
        }
        objectives.push(ln_det_hpd(&m)?);
    }
    Ok(SweepOutcome { theta, objectives })
}

/// Outcome of one backtracking phase step.
#[derive(Debug, Clone)]
pub struct PhaseStep {
    pub theta: PhaseVector,
    /// Objective (nats) at the returned phases.
    pub objective: f64,
    /// Step size that was accepted (or the last one tried).
    pub mu: f64,
    /// Number of candidate points evaluated, at least 1.
    pub trials: usize,
    pub accepted: bool,
}

/// Quadratic model `f(theta_n) + 2 Re(g^H d) - ||d||^2 / mu` with
/// `d = theta - theta_n`; it touches `f` at `theta_n`.
pub fn phase_surrogate(f_n: f64, grad: &CVec, theta_n: &CVec, theta: &CVec, mu: f64) -> f64 {
    let d = theta - theta_n;
    f_n + 2.0 * grad.dotc(&d).re - d.norm_squared() / mu
}

/// Projected gradient ascent step on the phases with backtracking on the
/// surrogate. `params.mu` is shrunk in place and never reset.
pub fn theta_gradient_step(
    theta: &PhaseVector,
    cov: &CovarianceSet,
    channels: &ChannelSet,
    params: &mut SurrogateParams,
) -> Result<PhaseStep> {
    let h = composite_channel(channels, theta)?;
    let cache = h.cache(cov)?;
    let f_n = cache.ln_det;
    let grad = grad_theta_cached(channels, &h, cov, &cache);
    let base = theta.as_vector();
    if grad.iter().all(|g| g.norm() == 0.0) {
        return Ok(PhaseStep {
            theta: theta.clone(),
            objective: f_n,
            mu: params.mu,
            trials: 1,
            accepted: true,
        });
    }
    let mut trials = 0;
    loop {
        trials += 1;
        let candidate = project_unit_modulus(&(base + grad.scale(params.mu)));
        let f = mac_objective_nats(&composite_channel(channels, &candidate)?, cov)?;
        let q = phase_surrogate(f_n, &grad, base, candidate.as_vector(), params.mu);
        if f >= q && f >= f_n {
            return Ok(PhaseStep {
                theta: candidate,
                objective: f,
                mu: params.mu,
                trials,
                accepted: true,
            });
        }
        if trials > MAX_BACKTRACKS {
            return Ok(PhaseStep {
                theta: theta.clone(),
                objective: f_n,
                mu: params.mu,
                trials,
                accepted: false,
            });
        }
        params.mu *= params.rho;
    }
}

/// Tangent-space component of `g` at `theta`: `g - Re(conj(g) . theta) . theta`.
pub fn riemann_project(theta: &PhaseVector, g: &CVec) -> Result<CVec> {
    if g.len() != theta.len() {
        return Err(Error::Dimension("gradient and phase vector differ in length".into()));
    }
    Ok(CVec::from_iterator(
        g.len(),
        g.iter()
            .zip(theta.as_vector().iter())
            .map(|(gl, tl)| gl - tl * (gl.conj() * tl).re),
    ))
}
