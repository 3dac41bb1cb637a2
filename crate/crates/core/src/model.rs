//! Composite channels, the dual-MAC objective, downlink DPC rates, gradients
//! and the partial Lagrangian.
//!
//! Public rates are reported in bits. Everything that feeds an optimizer
//! (gradients, Lagrangian, surrogates) uses the natural logarithm; the two
//! differ by the constant factor `1 / ln 2`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_drift, hermitian_part, identity, inverse_hpd, lambda_max, ln_det_hpd, trace_re, CMat, CVec,
    HermitianEigen, C64,
};
use crate::rng::SeededRng;
use crate::scenario::ChannelSet;

/// Tolerance on `| |theta_l| - 1 |`.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;
/// Tolerance on the Hermitian drift of a covariance matrix.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a covariance matrix.
pub const PSD_TOL: f64 = 1e-10;
/// Slack on the sum-power budget.
pub const POWER_TOL: f64 = 1e-9;

/// Reflection coefficients of all surface elements.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(CVec);

impl PhaseVector {
    /// Wraps a vector whose entries all have unit modulus.
    pub fn new(theta: CVec) -> Result<Self> {
        if let Some((l, z)) = theta
            .iter()
            .enumerate()
            .find(|(_, z)| !((z.norm() - 1.0).abs() <= UNIT_MODULUS_TOL))
        {
            return Err(Error::Infeasible(format!("phase entry {l} has modulus {}", z.norm())));
        }
        Ok(Self(theta))
    }

    pub fn from_angles(phi: &[f64]) -> Self {
        Self(CVec::from_iterator(phi.len(), phi.iter().map(|&p| C64::from_polar(1.0, p))))
    }

    /// All-ones vector (zero phase shift).
    pub fn ones(n: usize) -> Self {
        Self(CVec::from_element(n, C64::new(1.0, 0.0)))
    }

    /// Independent phases uniform on `[0, 2 pi)`.
    pub fn random(n: usize, rng: &mut SeededRng) -> Self {
        let phi: Vec<f64> = (0..n).map(|_| rng.uniform() * std::f64::consts::TAU).collect();
        Self::from_angles(&phi)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &CVec {
        &self.0
    }

    pub fn into_vector(self) -> CVec {
        self.0
    }

    pub fn angles(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.arg()).collect()
    }

    /// Replaces element `l` by `e^{j arg(value)}`.
    pub(crate) fn set_unchecked(&mut self, l: usize, value: C64) {
        self.0[l] = value;
    }
}

/// Which side of the duality a covariance set lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Dual uplink covariances `S̄_k`, `n_k x n_k`.
    Mac,
    /// Downlink covariances `S_k`, `N_t x N_t`.
    Bc,
}

/// Per-user Hermitian positive semidefinite covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    domain: Domain,
    mats: Vec<CMat>,
    sum_trace: f64,
}

impl CovarianceSet {
    /// Validates and wraps the matrices. Tiny Hermitian drift is removed.
    pub fn new(domain: Domain, mats: Vec<CMat>) -> Result<Self> {
        let mut clean = Vec::with_capacity(mats.len());
        for m in mats {
            if !m.is_square() {
                return Err(Error::Dimension("covariance matrices must be square".into()));
            }
            let drift = hermitian_drift(&m);
            if !(drift <= HERMITIAN_TOL) {
                return Err(Error::NotHermitian(drift));
            }
            let m = hermitian_part(&m);
            let min = HermitianEigen::new(&m).min();
            if !(min >= -PSD_TOL) {
                return Err(Error::NotPsd(min));
            }
            clean.push(m);
        }
        let sum_trace = clean.iter().map(trace_re).sum();
        Ok(Self {
            domain,
            mats: clean,
            sum_trace,
        })
    }

    pub fn zeros(domain: Domain, dims: &[usize]) -> Self {
        Self {
            domain,
            mats: dims.iter().map(|&n| CMat::zeros(n, n)).collect(),
            sum_trace: 0.0,
        }
    }

    /// `power / (K n_k) * I` for every user: full rank and exactly on budget.
    pub fn uniform(domain: Domain, dims: &[usize], power: f64) -> Self {
        let k = dims.len() as f64;
        let mats = dims
            .iter()
            .map(|&n| identity(n).scale(power / (k * n as f64)))
            .collect();
        Self {
            domain,
            mats,
            sum_trace: if dims.is_empty() { 0.0 } else { power },
        }
    }

    /// Random full-rank PSD matrices rescaled to the power budget.
    pub fn random(domain: Domain, dims: &[usize], power: f64, rng: &mut SeededRng) -> Self {
        let mats: Vec<CMat> = dims
            .iter()
            .map(|&n| {
                let a = rng.complex_normal_matrix(n, n, 1.0);
                hermitian_part(&(&a * a.adjoint()))
            })
            .collect();
        let total: f64 = mats.iter().map(trace_re).sum();
        let scale = if total > 0.0 { power / total } else { 0.0 };
        let mats: Vec<CMat> = mats.into_iter().map(|m| m.scale(scale)).collect();
        let sum_trace = mats.iter().map(trace_re).sum();
        Self {
            domain,
            mats,
            sum_trace,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn matrices(&self) -> &[CMat] {
        &self.mats
    }

    pub fn get(&self, k: usize) -> &CMat {
        &self.mats[k]
    }

    pub fn into_matrices(self) -> Vec<CMat> {
        self.mats
    }

    pub fn users(&self) -> usize {
        self.mats.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.nrows()).collect()
    }

    /// `sum_k tr(S_k)`.
    pub fn sum_trace(&self) -> f64 {
        self.sum_trace
    }

    /// Errors unless the set satisfies the sum-power budget.
    pub fn check_budget(&self, power: f64) -> Result<()> {
        if self.sum_trace <= power + POWER_TOL {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "sum trace {:.6e} exceeds power budget {power:.6e}",
                self.sum_trace
            )))
        }
    }

    /// Replaces user `k`'s matrix, assumed Hermitian PSD by construction.
    pub(crate) fn replace(&mut self, k: usize, m: CMat) {
        self.sum_trace += trace_re(&m) - trace_re(&self.mats[k]);
        self.mats[k] = m;
    }

    /// Wraps matrices produced by a PSD-preserving operation.
    pub(crate) fn from_trusted(domain: Domain, mats: Vec<CMat>) -> Self {
        let sum_trace = mats.iter().map(trace_re).sum();
        Self {
            domain,
            mats,
            sum_trace,
        }
    }

    /// Multiplies every matrix by `factor >= 0`.
    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self::from_trusted(self.domain, self.mats.iter().map(|m| m.scale(factor)).collect())
    }
}

/// Effective channels `H_k = D_k + G_k diag(theta) U`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannels {
    pub h: Vec<CMat>,
}

impl CompositeChannels {
    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn tx_antennas(&self) -> usize {
        self.h.first().map_or(0, |h| h.ncols())
    }

    /// `I + sum_k H_k^H S̄_k H_k`.
    pub fn sum_matrix(&self, cov: &CovarianceSet) -> Result<CMat> {
        check_mac_dims(self, cov)?;
        let mut m = identity(self.tx_antennas());
        for (h, s) in self.h.iter().zip(cov.matrices()) {
            m += h.adjoint() * s * h;
        }
        Ok(hermitian_part(&m))
    }

    /// Evaluates and caches `H_sum` and its inverse for repeated use.
    pub fn cache(&self, cov: &CovarianceSet) -> Result<SumCache> {
        let h_sum = self.sum_matrix(cov)?;
        let h_sum_inv = inverse_hpd(&h_sum)?;
        let ln_det = ln_det_hpd(&h_sum)?;
        Ok(SumCache {
            h_sum,
            h_sum_inv,
            ln_det,
        })
    }
}

/// `H_sum = I + sum_k H_k^H S̄_k H_k` with its inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct SumCache {
    pub h_sum: CMat,
    pub h_sum_inv: CMat,
    /// Natural log-determinant of `h_sum`.
    pub ln_det: f64,
}

fn check_mac_dims(h: &CompositeChannels, cov: &CovarianceSet) -> Result<()> {
    if cov.domain() != Domain::Mac {
        return Err(Error::Dimension("expected dual-MAC covariances".into()));
    }
    if cov.users() != h.users() {
        return Err(Error::Dimension(format!("{} covariances for {} users", cov.users(), h.users())));
    }
    for (k, (hk, s)) in h.h.iter().zip(cov.matrices()).enumerate() {
        if s.nrows() != hk.nrows() {
            return Err(Error::Dimension(format!(
                "user {k}: covariance is {0}x{0}, channel has {1} rows",
                s.nrows(),
                hk.nrows()
            )));
        }
    }
    Ok(())
}

/// `diag(theta) U`, shared by every user's composite channel.
pub(crate) fn phased_bs_ris(channels: &ChannelSet, theta: &PhaseVector) -> CMat {
    let mut fu = channels.bs_ris.clone();
    for (l, t) in theta.as_vector().iter().enumerate() {
        for x in fu.row_mut(l).iter_mut() {
            *x *= *t;
        }
    }
    fu
}

/// Builds `H_k = D_k + G_k diag(theta) U` for every user.
pub fn composite_channel(channels: &ChannelSet, theta: &PhaseVector) -> Result<CompositeChannels> {
    if theta.len() != channels.elements() {
        return Err(Error::Dimension(format!(
            "phase vector has {} entries, channel has {} elements",
            theta.len(),
            channels.elements()
        )));
    }
    let fu = phased_bs_ris(channels, theta);
    let h = channels
        .direct
        .iter()
        .zip(&channels.ris_user)
        .map(|(d, g)| d + g * &fu)
        .collect();
    Ok(CompositeChannels { h })
}

/// Natural-log objective `ln det(I + sum_k H_k^H S̄_k H_k)`.
pub fn mac_objective_nats(h: &CompositeChannels, cov: &CovarianceSet) -> Result<f64> {
    ln_det_hpd(&h.sum_matrix(cov)?)
}

/// Dual-MAC sum rate `log2 det(I + sum_k H_k^H S̄_k H_k)` in bits/s/Hz.
pub fn mac_sum_rate(h: &CompositeChannels, cov: &CovarianceSet) -> Result<f64> {
    Ok(mac_objective_nats(h, cov)?.max(0.0) / LN_2)
}

/// Convenience wrapper: sum rate of `(theta, S̄)` on raw channels.
pub fn sum_rate(channels: &ChannelSet, theta: &PhaseVector, cov: &CovarianceSet) -> Result<f64> {
    mac_sum_rate(&composite_channel(channels, theta)?, cov)
}

/// Per-user DPC rates of the downlink for encoding order `order`.
///
/// `order[m]` is the user in position `m`; that user sees interference from
/// the users in positions `m + 1, ..., K - 1`. The returned vector is indexed
/// by user, in bits.
pub fn bc_user_rates(h: &CompositeChannels, cov: &CovarianceSet, order: &[usize]) -> Result<Vec<f64>> {
    if cov.domain() != Domain::Bc {
        return Err(Error::Dimension("expected broadcast covariances".into()));
    }
    let k = h.users();
    check_order(order, k)?;
    if cov.users() != k {
        return Err(Error::Dimension(format!("{} covariances for {} users", cov.users(), k)));
    }
    let nt = h.tx_antennas();
    if cov.dims().iter().any(|&n| n != nt) {
        return Err(Error::Dimension("broadcast covariances must be N_t x N_t".into()));
    }
    let mut rates = vec![0.0; k];
    // suffix[m] = sum_{j >= m} S_{order[j]}
    let mut suffix = CMat::zeros(nt, nt);
    for m in (0..k).rev() {
        let user = order[m];
        let hk = &h.h[user];
        let n = hk.nrows();
        let interference = identity(n) + hk * &suffix * hk.adjoint();
        suffix += cov.get(user);
        let total = identity(n) + hk * &suffix * hk.adjoint();
        rates[user] = (ln_det_hpd(&total)? - ln_det_hpd(&interference)?) / LN_2;
    }
    Ok(rates)
}

pub(crate) fn check_order(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k {
        return Err(Error::InvalidParameter(format!("ordering has {} entries for {k} users", order.len())));
    }
    for &u in order {
        if u >= k || seen[u] {
            return Err(Error::InvalidParameter("ordering must be a permutation of the users".into()));
        }
        seen[u] = true;
    }
    Ok(())
}

/// Complex gradient of the natural-log objective with respect to `theta`:
/// `vec_d( sum_k G_k^H S̄_k H_k M^{-1} U^H )`, `M = H_sum`.
///
/// The first-order change along a direction `d` is `2 Re(grad^H d)`.
pub fn grad_theta(channels: &ChannelSet, theta: &PhaseVector, cov: &CovarianceSet) -> Result<CVec> {
    let h = composite_channel(channels, theta)?;
    let cache = h.cache(cov)?;
    Ok(grad_theta_cached(channels, &h, cov, &cache))
}

pub(crate) fn grad_theta_cached(
    channels: &ChannelSet,
    h: &CompositeChannels,
    cov: &CovarianceSet,
    cache: &SumCache,
) -> CVec {
    let n = channels.elements();
    let mut grad = CVec::zeros(n);
    let u_adj = channels.bs_ris.adjoint();
    for ((g, hk), s) in channels.ris_user.iter().zip(&h.h).zip(cov.matrices()) {
        let w = s * hk * &cache.h_sum_inv * &u_adj;
        for l in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..g.nrows() {
                acc += g[(a, l)].conj() * w[(a, l)];
            }
            grad[l] += acc;
        }
    }
    grad
}

/// Gradient of the natural-log objective with respect to `S̄_k`:
/// `H_k M^{-1} H_k^H`. The first-order change along Hermitian `E` is
/// `tr(grad E)`.
pub fn grad_covariance(h: &CompositeChannels, cov: &CovarianceSet, k: usize) -> Result<CMat> {
    let cache = h.cache(cov)?;
    Ok(grad_covariance_cached(h, &cache, k))
}

pub(crate) fn grad_covariance_cached(h: &CompositeChannels, cache: &SumCache, k: usize) -> CMat {
    let hk = &h.h[k];
    hermitian_part(&(hk * &cache.h_sum_inv * hk.adjoint()))
}

/// Gradients for all users at once.
pub fn grad_covariances(h: &CompositeChannels, cov: &CovarianceSet) -> Result<Vec<CMat>> {
    let cache = h.cache(cov)?;
    Ok((0..h.users()).map(|k| grad_covariance_cached(h, &cache, k)).collect())
}

/// Partial Lagrangian `ln det(H_sum) - mu (sum_k tr S̄_k - P)` in nats.
pub fn lagrangian(mu: f64, cov: &CovarianceSet, h: &CompositeChannels, power: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter("multiplier must be non-negative".into()));
    }
    Ok(mac_objective_nats(h, cov)? - mu * (cov.sum_trace() - power))
}

/// `H_k (H̄_k + H_k^H S̄_k H_k)^{-1} H_k^H - mu I`, where
/// `H̄_k = H_sum - H_k^H S̄_k H_k` leaves out user `k`.
pub fn partial_grad_lagrangian(mu: f64, cov: &CovarianceSet, h: &CompositeChannels, k: usize) -> Result<CMat> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter("multiplier must be non-negative".into()));
    }
    let cache = h.cache(cov)?;
    Ok(partial_grad_lagrangian_cached(mu, h, &cache, k))
}

pub(crate) fn partial_grad_lagrangian_cached(mu: f64, h: &CompositeChannels, cache: &SumCache, k: usize) -> CMat {
    let g = grad_covariance_cached(h, cache, k);
    let n = g.nrows();
    g - identity(n).scale(mu)
}

/// Upper bound `lambda_max(H_k H_k^H)^2` on the Lipschitz constant of the
/// block gradient of the Lagrangian.
pub fn block_lipschitz_bound(h: &CompositeChannels, k: usize) -> f64 {
    let hk = &h.h[k];
    lambda_max(&(hk * hk.adjoint())).powi(2)
}
