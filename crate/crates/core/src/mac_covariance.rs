//! Fixed-phase covariance optimization in the dual MAC.
//!
//! The sum-power constraint is dualized with a multiplier `mu`. For fixed
//! `mu` the Lagrangian is maximized block by block, each block having a
//! water-filling solution, and `mu` itself is found by bisection.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, identity, inverse_hpd, ln_det_hpd, CMat, HermitianEigen};
use crate::model::{CompositeChannels, CovarianceSet, Domain};
use crate::projections::project_psd;

/// Default bisection accuracy on `mu`.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Stopping rule of the inner block-coordinate loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerStop {
    /// Relative Lagrangian improvement over `K` consecutive block updates.
    pub rel_tol: f64,
    pub max_updates: usize,
    /// Greedy rule only: stop once every candidate step length is below this.
    pub step_tol: f64,
}

impl Default for InnerStop {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_updates: 500,
            step_tol: 1e-9,
        }
    }
}

/// Result of a block-coordinate run at fixed `mu`.
#[derive(Debug, Clone)]
pub struct BcmOutcome {
    pub cov: CovarianceSet,
    /// Number of block updates performed.
    pub updates: usize,
    /// Lagrangian (nats) at the start and after every block update.
    pub lagrangian: Vec<f64>,
}

/// Bisection state and counters of [`dual_decomposition`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    /// Number of bisection steps.
    pub t: usize,
    /// Average number of block updates per bisection step.
    pub avg_inner: f64,
    /// Every multiplier tried, in order.
    pub mu_history: Vec<f64>,
}

/// Running `I + sum_k H_k^H S̄_k H_k` kept in sync with block updates.
struct Workspace<'a> {
    h: &'a CompositeChannels,
    cov: CovarianceSet,
    h_sum: CMat,
    mu: f64,
    power: f64,
}

impl<'a> Workspace<'a> {
    fn new(h: &'a CompositeChannels, cov: CovarianceSet, mu: f64, power: f64) -> Result<Self> {
        let h_sum = h.sum_matrix(&cov)?;
        Ok(Self {
            h,
            cov,
            h_sum,
            mu,
            power,
        })
    }

    fn lagrangian(&self) -> Result<f64> {
        Ok(ln_det_hpd(&self.h_sum)? - self.mu * (self.cov.sum_trace() - self.power))
    }

    fn leave_one_out(&self, k: usize) -> CMat {
        let hk = &self.h.h[k];
        hermitian_part(&(&self.h_sum - hk.adjoint() * self.cov.get(k) * hk))
    }

    fn update(&mut self, k: usize) -> Result<()> {
        let hbar = self.leave_one_out(k);
        let next = water_fill_block(&self.h.h[k], &hbar, self.mu)?;
        let hk = &self.h.h[k];
        self.h_sum = hermitian_part(&(hbar + hk.adjoint() * &next * hk));
        self.cov.replace(k, next);
        Ok(())
    }
}

/// `V diag((1/mu - 1/sigma_i)_+) V^H` for `H_k H̄_k^{-1} H_k^H = V diag(sigma) V^H`.
fn water_fill_block(hk: &CMat, hbar: &CMat, mu: f64) -> Result<CMat> {
    let hbar_inv = inverse_hpd(hbar)?;
    let z = hk * hbar_inv * hk.adjoint();
    let eig = HermitianEigen::new(&z);
    let floor = 1e-12 * eig.max().max(0.0);
    Ok(eig.reassemble_with(|sigma| {
        if sigma <= floor || sigma <= 0.0 {
            0.0
        } else {
            (1.0 / mu - 1.0 / sigma).max(0.0)
        }
    }))
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("multiplier must be positive, got {mu}")))
    }
}

/// Maximizer over `S̄_k >= 0` of the Lagrangian with every other block fixed.
pub fn block_update(k: usize, mu: f64, h: &CompositeChannels, cov: &CovarianceSet) -> Result<CMat> {
    check_mu(mu)?;
    if k >= h.users() {
        return Err(Error::Dimension(format!("user {k} out of range")));
    }
    let ws = Workspace::new(h, cov.clone(), mu, 0.0)?;
    water_fill_block(&h.h[k], &ws.leave_one_out(k), mu)
}

fn improvement_small(prev: f64, now: f64, tol: f64) -> bool {
    (now - prev) / prev.abs().max(1e-12) < tol
}

/// Cyclic block coordinate maximization of the Lagrangian at fixed `mu`.
pub fn cbcm(
    init: &CovarianceSet,
    mu: f64,
    h: &CompositeChannels,
    power: f64,
    stop: &InnerStop,
) -> Result<BcmOutcome> {
    check_mu(mu)?;
    let k = h.users();
    let mut ws = Workspace::new(h, init.clone(), mu, power)?;
    let mut history = vec![ws.lagrangian()?];
    let mut updates = 0;
    'outer: while updates < stop.max_updates {
        let before = *history.last().expect("history starts non-empty");
        for user in 0..k {
            if updates == stop.max_updates {
                break 'outer;
            }
            ws.update(user)?;
            updates += 1;
            history.push(ws.lagrangian()?);
        }
        if improvement_small(before, *history.last().expect("non-empty"), stop.rel_tol) {
            break;
        }
    }
    Ok(BcmOutcome {
        cov: ws.cov,
        updates,
        lagrangian: history,
    })
}

/// Greedy (Gauss-Southwell) block coordinate maximization at fixed `mu`:
/// each iteration updates only the user whose projected gradient step
/// `||S̄_i - [S̄_i + grad_i / lambda_max^2(H_i H_i^H)]^+||` is longest.
pub fn gbcm(
    init: &CovarianceSet,
    mu: f64,
    h: &CompositeChannels,
    power: f64,
    stop: &InnerStop,
) -> Result<BcmOutcome> {
    check_mu(mu)?;
    let k = h.users();
    let lipschitz: Vec<f64> = (0..k).map(|i| crate::model::block_lipschitz_bound(h, i)).collect();
    let mut ws = Workspace::new(h, init.clone(), mu, power)?;
    let mut history = vec![ws.lagrangian()?];
    let mut updates = 0;
    while updates < stop.max_updates {
        let (best, length) = greedy_choice(&ws, &lipschitz)?;
        if length <= stop.step_tol {
            break;
        }
        ws.update(best)?;
        updates += 1;
        history.push(ws.lagrangian()?);
        if updates >= k && updates % k == 0 {
            let n = history.len();
            if improvement_small(history[n - 1 - k], history[n - 1], stop.rel_tol) {
                break;
            }
        }
    }
    Ok(BcmOutcome {
        cov: ws.cov,
        updates,
        lagrangian: history,
    })
}

/// Candidate step lengths of the Gauss-Southwell rule for every user.
pub fn greedy_step_lengths(mu: f64, h: &CompositeChannels, cov: &CovarianceSet) -> Result<Vec<f64>> {
    let k = h.users();
    let lipschitz: Vec<f64> = (0..k).map(|i| crate::model::block_lipschitz_bound(h, i)).collect();
    let ws = Workspace::new(h, cov.clone(), mu, 0.0)?;
    step_lengths(&ws, &lipschitz)
}

fn step_lengths(ws: &Workspace<'_>, lipschitz: &[f64]) -> Result<Vec<f64>> {
    let inv = inverse_hpd(&ws.h_sum)?;
    (0..ws.h.users())
        .map(|i| {
            if lipschitz[i] <= 0.0 {
                return Ok(0.0);
            }
            let hi = &ws.h.h[i];
            let s = ws.cov.get(i);
            let grad = hi * &inv * hi.adjoint() - identity(s.nrows()).scale(ws.mu);
            let moved = project_psd(&hermitian_part(&(s + grad.unscale(lipschitz[i]))))?;
            Ok((s - moved).norm())
        })
        .collect()
}

fn greedy_choice(ws: &Workspace<'_>, lipschitz: &[f64]) -> Result<(usize, f64)> {
    let lengths = step_lengths(ws, lipschitz)?;
    Ok(lengths
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best }))
}

/// Number of bisection steps: the smallest `T` with `mu_max / 2^T <= epsilon`.
pub fn bisection_steps(mu_max: f64, epsilon: f64) -> usize {
    let mut t = 0;
    let mut width = mu_max;
    while width > epsilon {
        width *= 0.5;
        t += 1;
    }
    t
}

/// Solves the fixed-phase dual-MAC problem by bisection on `mu`, starting
/// with `mu_max = K N_t / P` and warm-starting every inner greedy run from
/// the previous covariances.
///
/// On exit the covariances are rescaled so the sum trace equals `power`
/// exactly (the objective is increasing along any positive scaling, so the
/// budget is always active unless every channel is zero).
pub fn dual_decomposition(
    h: &CompositeChannels,
    power: f64,
    epsilon: f64,
    init: &CovarianceSet,
) -> Result<(CovarianceSet, DualState)> {
    dual_decomposition_with(h, power, epsilon, init, &InnerStop::default())
}

pub fn dual_decomposition_with(
    h: &CompositeChannels,
    power: f64,
    epsilon: f64,
    init: &CovarianceSet,
    stop: &InnerStop,
) -> Result<(CovarianceSet, DualState)> {
    if !(power > 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("power and epsilon must be positive".into()));
    }
    if init.domain() != Domain::Mac {
        return Err(Error::Dimension("expected dual-MAC covariances".into()));
    }
    init.check_budget(power)?;
    let k = h.users() as f64;
    let mu_max0 = k * h.tx_antennas() as f64 / power;
    let t = bisection_steps(mu_max0, epsilon);
    let (mut mu_min, mut mu_max) = (0.0, mu_max0);
    let mut cov = init.clone();
    let mut mu = 0.5 * (mu_min + mu_max);
    let mut total_updates = 0;
    let mut mu_history = Vec::with_capacity(t);
    for _ in 0..t {
        mu = 0.5 * (mu_min + mu_max);
        mu_history.push(mu);
        let out = gbcm(&cov, mu, h, power, stop)?;
        total_updates += out.updates;
        cov = out.cov;
        if power < cov.sum_trace() {
            mu_min = mu;
        } else {
            mu_max = mu;
        }
    }
    let total = cov.sum_trace();
    if total > 0.0 {
        cov = cov.scaled(power / total);
    }
    let state = DualState {
        mu,
        mu_min,
        mu_max,
        epsilon,
        t,
        avg_inner: if t == 0 { 0.0 } else { total_updates as f64 / t as f64 },
        mu_history,
    };
    Ok((cov, state))
}

/// Right-hand side of the `O(1/n)` gap bound for cyclic block maximization,
/// `2 c M K^2 R^2 / n` with
/// `c = max(2 / (M K^2 R^2) - 2, 2, L* - L(S̄^(1)))`.
///
/// `radius` is the sublevel-set radius `R`, which must be supplied by the
/// caller; the bound is a diagnostic, not something the solvers rely on.
pub fn cbcm_gap_bound(h: &CompositeChannels, radius: f64, first_gap: f64, n: usize) -> f64 {
    let k = h.users() as f64;
    let m = (0..h.users())
        .map(|i| crate::model::block_lipschitz_bound(h, i))
        .fold(0.0, f64::max);
    let scale = m * k * k * radius * radius;
    let c = (2.0 / scale - 2.0).max(2.0).max(first_gap);
    2.0 * c * scale / n.max(1) as f64
}
