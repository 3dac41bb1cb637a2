//! Mapping dual-MAC covariances to broadcast covariances.
//!
//! Users are processed in the order `order`. The user processed first sees no
//! broadcast interference and is therefore encoded last. Every later user is
//! interfered by the broadcast signals of the users processed before it,
//! while in the MAC it is decoded against the users processed after it.
//! Under this pairing each user's rate is the same on both sides and the
//! total transmit power is unchanged.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, hpd_power, identity, ln_det_hpd, trace_re, CMat, HermitianEigen};
use crate::model::{bc_user_rates, check_order, mac_sum_rate, CompositeChannels, CovarianceSet, Domain};
use std::f64::consts::LN_2;

/// Relative tolerance on the rate and power gaps.
pub const DUALITY_TOL: f64 = 1e-8;

/// Converts MAC covariances into BC covariances processed in `order`.
///
/// Broadcast rates of the result are evaluated with [`bc_encoding_order`].
/// Rates are always preserved. Power is preserved when no MAC covariance puts
/// energy outside the row space of its channel, which holds for optimal
/// covariances and for any covariance once `N_r <= N_t` and `H_k` has full rank.
pub fn mac_to_bc(h: &CompositeChannels, mac: &CovarianceSet, order: &[usize]) -> Result<CovarianceSet> {
    if mac.domain() != Domain::Mac {
        return Err(Error::Dimension("expected dual-MAC covariances".into()));
    }
    let k = h.users();
    check_order(order, k)?;
    if mac.users() != k {
        return Err(Error::Dimension(format!("{} covariances for {k} users", mac.users())));
    }
    let nt = h.tx_antennas();
    let mut out = vec![CMat::zeros(nt, nt); k];
    // suffix[m] = I + sum over users processed after position m of H^H S̄ H
    let mut suffix = vec![identity(nt); k];
    for m in (0..k.saturating_sub(1)).rev() {
        let next = order[m + 1];
        let hn = &h.h[next];
        suffix[m] = &suffix[m + 1] + hn.adjoint() * mac.get(next) * hn;
    }
    let mut bc_sum = CMat::zeros(nt, nt);
    for (m, &user) in order.iter().enumerate() {
        let hk = &h.h[user];
        let sbar = mac.get(user);
        if sbar.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let a = identity(hk.nrows()) + hk * &bc_sum * hk.adjoint();
        let a_eig = floored_eigen(&a)?;
        let a_half = a_eig.reassemble_with(f64::sqrt);
        let a_inv_half = a_eig.reassemble_with(|v| 1.0 / v.sqrt());
        let b_inv_half = hpd_power(&suffix[m], -0.5)?;
        let x = &b_inv_half * hk.adjoint() * &a_inv_half;
        let svd = x.svd(true, true);
        let (f, gh) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Dimension("SVD did not return singular vectors".into())),
        };
        let t = &b_inv_half * f * gh * &a_half;
        let s = hermitian_part(&(&t * sbar * t.adjoint()));
        bc_sum += &s;
        out[user] = s;
    }
    CovarianceSet::new(Domain::Bc, out)
}

fn floored_eigen(m: &CMat) -> Result<HermitianEigen> {
    let eig = HermitianEigen::new(m);
    if eig.min() < 1.0 - 1e-9 {
        return Err(Error::NotPsd(eig.min() - 1.0));
    }
    Ok(eig)
}

/// Encoding order, for [`bc_user_rates`], of covariances converted in `order`.
pub fn bc_encoding_order(order: &[usize]) -> Vec<usize> {
    order.iter().rev().copied().collect()
}

/// Per-user MAC rates (bits) when users are decoded in `order`, the first
/// being decoded against all others.
pub fn mac_user_rates(h: &CompositeChannels, mac: &CovarianceSet, order: &[usize]) -> Result<Vec<f64>> {
    check_order(order, h.users())?;
    let nt = h.tx_antennas();
    let mut rates = vec![0.0; h.users()];
    let mut acc = identity(nt);
    for &user in order.iter().rev() {
        let before = ln_det_hpd(&acc)?;
        let hk = &h.h[user];
        acc += hk.adjoint() * mac.get(user) * hk;
        rates[user] = (ln_det_hpd(&acc)? - before) / LN_2;
    }
    Ok(rates)
}

/// Comparison of a MAC solution with its broadcast counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub mac_rate: f64,
    pub bc_rate: f64,
    /// `|bc_rate - mac_rate| / (1 + mac_rate)`.
    pub rate_gap: f64,
    /// `|sum tr S - sum tr S̄|`, relative to `sum tr S̄` when that is at least one.
    pub power_gap: f64,
    /// Broadcast rates, indexed by user.
    pub per_user_rates: Vec<f64>,
    pub violated: bool,
}

/// Evaluates both sides of the duality for covariances converted in `order`.
pub fn verify_duality(h: &CompositeChannels, mac: &CovarianceSet, bc: &CovarianceSet, order: &[usize]) -> Result<DualityReport> {
    let mac_rate = mac_sum_rate(h, mac)?;
    let per_user_rates = bc_user_rates(h, bc, &bc_encoding_order(order))?;
    let bc_rate: f64 = per_user_rates.iter().sum();
    let rate_gap = (bc_rate - mac_rate).abs() / (1.0 + mac_rate);
    let mac_power: f64 = mac.matrices().iter().map(trace_re).sum();
    let bc_power: f64 = bc.matrices().iter().map(trace_re).sum();
    let power_gap = (bc_power - mac_power).abs() / mac_power.max(1.0);
    Ok(DualityReport {
        mac_rate,
        bc_rate,
        rate_gap,
        power_gap,
        per_user_rates,
        violated: rate_gap > DUALITY_TOL || power_gap > DUALITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac_covariance::{dual_decomposition, DEFAULT_EPSILON};
    use crate::model::{composite_channel, PhaseVector};
    use crate::rng::SeededRng;
    use crate::scenario::ChannelSet;
    use proptest::prelude::*;

    fn channels(k: usize, nt: usize, nr: usize, seed: u64) -> CompositeChannels {
        let mut rng = SeededRng::new(seed, 0);
        CompositeChannels {
            h: (0..k).map(|_| rng.complex_normal_matrix(nr, nt, 1.0)).collect(),
        }
    }

    fn random_mac(h: &CompositeChannels, power: f64, seed: u64) -> CovarianceSet {
        let dims: Vec<usize> = h.h.iter().map(|m| m.nrows()).collect();
        CovarianceSet::random(Domain::Mac, &dims, power, &mut SeededRng::new(seed, 9))
    }

    fn permutation(k: usize, seed: u64) -> Vec<usize> {
        let mut rng = SeededRng::new(seed, 3);
        let mut p: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            p.swap(i, rng.index(i + 1));
        }
        p
    }

    #[test]
    fn zero_mac_gives_zero_bc() {
        let h = channels(3, 4, 2, 1);
        let zero = CovarianceSet::zeros(Domain::Mac, &[2, 2, 2]);
        let bc = mac_to_bc(&h, &zero, &[0, 1, 2]).unwrap();
        assert!(bc.matrices().iter().all(|s| s.norm() == 0.0));
        let report = verify_duality(&h, &zero, &bc, &[0, 1, 2]).unwrap();
        assert_eq!(report.rate_gap, 0.0);
        assert_eq!(report.power_gap, 0.0);
        assert!(!report.violated);
    }

    #[test]
    fn single_user_rates_agree() {
        let h = channels(1, 4, 2, 2);
        let mac = random_mac(&h, 3.0, 2);
        let bc = mac_to_bc(&h, &mac, &[0]).unwrap();
        let h0 = &h.h[0];
        let bc_rate = ln_det_hpd(&(identity(2) + h0 * bc.get(0) * h0.adjoint())).unwrap() / LN_2;
        let mac_rate = ln_det_hpd(&(identity(4) + h0.adjoint() * mac.get(0) * h0)).unwrap() / LN_2;
        assert!((bc_rate - mac_rate).abs() <= 1e-9);
    }

    #[test]
    fn converged_instance_preserves_rate_and_power() {
        let mut rng = SeededRng::new(11, 0);
        let ch = ChannelSet::from_matrices(
            (0..3).map(|_| rng.complex_normal_matrix(2, 4, 1.0)).collect(),
            rng.complex_normal_matrix(8, 4, 1.0),
            (0..3).map(|_| rng.complex_normal_matrix(2, 8, 1.0)).collect(),
        )
        .unwrap();
        let h = composite_channel(&ch, &PhaseVector::random(8, &mut rng)).unwrap();
        let init = CovarianceSet::uniform(Domain::Mac, &[2, 2, 2], 1.0);
        let (mac, _) = dual_decomposition(&h, 1.0, DEFAULT_EPSILON, &init).unwrap();
        let order = [2, 0, 1];
        let bc = mac_to_bc(&h, &mac, &order).unwrap();
        let report = verify_duality(&h, &mac, &bc, &order).unwrap();
        let rate = report.mac_rate;
        assert!((report.bc_rate - rate).abs() <= 1e-8 * (1.0 + rate));
        assert!(report.power_gap <= 1e-8);
        assert!(!report.violated);
    }

    #[test]
    fn per_user_rates_are_preserved() {
        for seed in 0..20 {
            let h = channels(4, 3, 2, 100 + seed);
            let mac = random_mac(&h, 2.0, seed);
            let order = permutation(4, seed);
            let bc = mac_to_bc(&h, &mac, &order).unwrap();
            let bc_rates = bc_user_rates(&h, &bc, &bc_encoding_order(&order)).unwrap();
            let mac_rates = mac_user_rates(&h, &mac, &order).unwrap();
            for (b, m) in bc_rates.iter().zip(&mac_rates) {
                assert!((b - m).abs() <= 1e-9 * (1.0 + m), "seed {seed}");
            }
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let h = channels(3, 4, 2, 5);
        let mac = random_mac(&h, 1.0, 5);
        let order = [0, 1, 2];
        let bc = mac_to_bc(&h, &mac, &order).unwrap();
        let mut rng = SeededRng::new(5, 5);
        let mut noise = hermitian_part(&rng.complex_normal_matrix(4, 4, 1.0));
        noise *= num_complex::Complex::new(0.1 / noise.norm(), 0.0);
        let mut mats = bc.into_matrices();
        let bumped = &mats[1] + noise;
        // keep the perturbed matrix PSD so only the detector is exercised
        let shift = HermitianEigen::new(&bumped).min().min(0.0);
        mats[1] = bumped - identity(4).scale(shift);
        let perturbed = CovarianceSet::new(Domain::Bc, mats).unwrap();
        let report = verify_duality(&h, &mac, &perturbed, &order).unwrap();
        assert!(report.rate_gap > 1e-6 || report.power_gap > 1e-6);
        assert!(report.violated);
    }

    #[test]
    fn wrong_domain_and_order_rejected() {
        let h = channels(2, 3, 2, 6);
        let bc_domain = CovarianceSet::zeros(Domain::Bc, &[3, 3]);
        assert!(mac_to_bc(&h, &bc_domain, &[0, 1]).is_err());
        let mac = CovarianceSet::zeros(Domain::Mac, &[2, 2]);
        assert!(mac_to_bc(&h, &mac, &[0, 0]).is_err());
        assert!(mac_to_bc(&h, &mac, &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conversion_invariants(seed in 0u64..10_000, k in 1usize..5, nt in 1usize..5, nr_pick in 0usize..4, power in 0.1f64..10.0) {
            let nr = 1 + nr_pick % nt;
            let h = channels(k, nt, nr, seed);
            let mac = random_mac(&h, power, seed);
            let first = permutation(k, seed);
            let second = permutation(k, seed + 1);
            let bc1 = mac_to_bc(&h, &mac, &first).unwrap();
            let bc2 = mac_to_bc(&h, &mac, &second).unwrap();
            for bc in [&bc1, &bc2] {
                for s in bc.matrices() {
                    prop_assert!(HermitianEigen::new(s).min() >= -1e-9 * power);
                }
            }
            let r1 = verify_duality(&h, &mac, &bc1, &first).unwrap();
            let r2 = verify_duality(&h, &mac, &bc2, &second).unwrap();
            prop_assert!(r1.rate_gap <= DUALITY_TOL && r2.rate_gap <= DUALITY_TOL);
            prop_assert!(r1.power_gap <= DUALITY_TOL && r2.power_gap <= DUALITY_TOL);
            prop_assert!((r1.bc_rate - r2.bc_rate).abs() <= 1e-8 * (1.0 + r1.bc_rate));
        }
    }
}
