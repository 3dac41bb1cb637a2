//! Problem instances: system parameters, 3-D placement, path losses and
//! random channel realizations.
//!
//! All channel matrices are stored noise-normalized: the direct link of user
//! `k` carries the factor `sqrt(1 / (beta_dir_k * N0))` and every RIS-to-user
//! block carries `sqrt(1 / (beta_ris_k(i) * N0))`, so the optimizer works
//! with identity noise covariance. The BS-to-RIS matrix `U` is left unscaled;
//! the full two-hop loss sits in `G_k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::rng::SeededRng;

/// Scalar parameters of one RIS-aided broadcast system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antennas `N_t`.
    pub tx_antennas: usize,
    /// Number of users `K`.
    pub users: usize,
    /// Antennas per user when uniform (`N_r`).
    pub rx_antennas: usize,
    /// Optional heterogeneous antenna counts; overrides `rx_antennas`.
    pub rx_antennas_per_user: Option<Vec<usize>>,
    /// Number of surfaces `N_s`.
    pub surfaces: usize,
    /// Elements per surface `N_ris`.
    pub elements_per_surface: usize,
    /// Total transmit power `P` in watts.
    pub power_w: f64,
    /// Noise power `N0` in watts.
    pub noise_w: f64,
    /// Carrier wavelength in meters.
    pub wavelength_m: f64,
    pub tx_spacing_m: f64,
    pub rx_spacing_m: f64,
    pub ris_spacing_m: f64,
    /// Path-loss exponent of the direct links.
    pub direct_exponent: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
    /// Rician factor; `f64::INFINITY` gives pure line of sight.
    pub rician_factor: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let wavelength = 0.15;
        Self {
            tx_antennas: 8,
            users: 2,
            rx_antennas: 2,
            rx_antennas_per_user: None,
            surfaces: 1,
            elements_per_surface: 225,
            power_w: 1.0,
            noise_w: 1e-11,
            wavelength_m: wavelength,
            tx_spacing_m: wavelength / 2.0,
            rx_spacing_m: wavelength / 2.0,
            ris_spacing_m: wavelength / 2.0,
            direct_exponent: 3.0,
            tx_gain: 2.0,
            rx_gain: 2.0,
            rician_factor: 1.0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.tx_antennas == 0 || self.users == 0 || self.surfaces == 0 || self.elements_per_surface == 0 {
            return bad("antenna, user, surface and element counts must be at least 1");
        }
        match &self.rx_antennas_per_user {
            Some(v) if v.len() != self.users => return bad("rx_antennas_per_user must have one entry per user"),
            Some(v) if v.contains(&0) => return bad("every user needs at least one antenna"),
            None if self.rx_antennas == 0 => return bad("rx_antennas must be at least 1"),
            _ => {}
        }
        if !(self.power_w > 0.0) || !(self.noise_w > 0.0) || !(self.wavelength_m > 0.0) {
            return bad("power, noise and wavelength must be positive");
        }
        if !(self.direct_exponent >= 2.0) {
            return bad("direct path-loss exponent must be at least 2");
        }
        if !(self.rician_factor >= 0.0) {
            return bad("rician factor must be non-negative");
        }
        Ok(())
    }

    /// Antenna count of every user.
    pub fn user_antennas(&self) -> Vec<usize> {
        self.rx_antennas_per_user
            .clone()
            .unwrap_or_else(|| vec![self.rx_antennas; self.users])
    }

    /// Total number of reflecting elements `N_s * N_ris`.
    pub fn total_elements(&self) -> usize {
        self.surfaces * self.elements_per_surface
    }

    /// Carrier frequency implied by the wavelength.
    pub fn carrier_hz(&self) -> f64 {
        299_792_458.0 / self.wavelength_m
    }
}

/// Discrete uniform grid `{min, min + step, ..., max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridRange {
    pub const fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn points(&self) -> usize {
        if self.step <= 0.0 || self.max <= self.min {
            1
        } else {
            ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        let idx = rng.index(self.points());
        self.min + idx as f64 * self.step
    }
}

/// Where the BS and surfaces sit, and where users may be dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSpec {
    /// Midpoint of the BS array `(0, l_t, h_t)`.
    pub bs: [f64; 3],
    /// Midpoints of the surfaces; each surface lies in a plane `y = const`.
    pub surfaces: Vec<[f64; 3]>,
    /// User x-coordinate `d_k`.
    pub user_x: GridRange,
    /// User y-coordinate `l_k`.
    pub user_y: GridRange,
    /// User height `h_k`.
    pub user_z: GridRange,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        Self {
            bs: [0.0, 20.0, 10.0],
            surfaces: vec![[30.0, 0.0, 5.0]],
            user_x: GridRange::new(200.0, 500.0, 2.0),
            user_y: GridRange::new(1.0, 70.0, 1.0),
            user_z: GridRange::new(1.5, 2.0, 0.01),
        }
    }
}

impl PlacementSpec {
    /// Four-surface layout for the placement experiments: the BS faces a
    /// 50 m x 50 m user area centered `distance` meters away, and the
    /// surfaces sit `ris_offset` meters from either end at `y = 0` and
    /// `y = 60`.
    pub fn four_surfaces(ris_offset: f64, distance: f64) -> Self {
        Self {
            bs: [0.0, 30.0, 10.0],
            surfaces: vec![
                [ris_offset, 0.0, 5.0],
                [distance - ris_offset, 0.0, 5.0],
                [ris_offset, 60.0, 5.0],
                [distance - ris_offset, 60.0, 5.0],
            ],
            user_x: GridRange::new(distance - 25.0, distance + 25.0, 1.0),
            user_y: GridRange::new(5.0, 55.0, 1.0),
            user_z: GridRange::new(1.5, 2.0, 0.01),
        }
    }

    /// Keeps only the listed surfaces (0-based indices).
    pub fn with_surfaces(mut self, keep: &[usize]) -> Self {
        self.surfaces = keep.iter().map(|&i| self.surfaces[i]).collect();
        self
    }
}

/// Node positions and the derived distances and incidence cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs: [f64; 3],
    pub surfaces: Vec<[f64; 3]>,
    pub users: Vec<[f64; 3]>,
    /// `d_{t,ris}(i)`.
    pub bs_ris: Vec<f64>,
    /// `d_{ris,k}(i, k)`, indexed `[i][k]`.
    pub ris_user: Vec<Vec<f64>>,
    /// `d_{t,k}`.
    pub bs_user: Vec<f64>,
    /// `cos gamma_t(i)`.
    pub cos_incidence: Vec<f64>,
    /// `cos gamma_r(i, k)`, indexed `[i][k]`; negative when the user is behind
    /// the surface.
    pub cos_reflection: Vec<Vec<f64>>,
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Geometry {
    /// Derives distances and cosines from explicit positions.
    ///
    /// Surfaces lie in `y = const` planes and face the half-space that holds
    /// the BS.
    pub fn from_positions(bs: [f64; 3], surfaces: Vec<[f64; 3]>, users: Vec<[f64; 3]>) -> Result<Self> {
        let bs_user: Vec<f64> = users.iter().map(|&u| distance(bs, u)).collect();
        let bs_ris: Vec<f64> = surfaces.iter().map(|&s| distance(bs, s)).collect();
        let ris_user: Vec<Vec<f64>> = surfaces
            .iter()
            .map(|&s| users.iter().map(|&u| distance(s, u)).collect())
            .collect();
        if let Some(k) = bs_user.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Geometry(format!("user {k} coincides with the BS")));
        }
        if let Some(i) = bs_ris.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Geometry(format!("surface {i} coincides with the BS")));
        }
        for (i, row) in ris_user.iter().enumerate() {
            if let Some(k) = row.iter().position(|&d| !(d > 0.0)) {
                return Err(Error::Geometry(format!("user {k} coincides with surface {i}")));
            }
        }
        let mut cos_incidence = Vec::with_capacity(surfaces.len());
        let mut cos_reflection = Vec::with_capacity(surfaces.len());
        for (i, &s) in surfaces.iter().enumerate() {
            let side = bs[1] - s[1];
            if side == 0.0 {
                return Err(Error::Geometry(format!("BS lies in the plane of surface {i}")));
            }
            let normal = side.signum();
            cos_incidence.push(normal * (bs[1] - s[1]) / bs_ris[i]);
            cos_reflection.push(
                users
                    .iter()
                    .zip(&ris_user[i])
                    .map(|(u, d)| normal * (u[1] - s[1]) / d)
                    .collect(),
            );
        }
        Ok(Self {
            bs,
            surfaces,
            users,
            bs_ris,
            ris_user,
            bs_user,
            cos_incidence,
            cos_reflection,
        })
    }
}

/// Draws user positions from the placement grids and derives the geometry.
pub fn build_geometry(config: &SystemConfig, placement: &PlacementSpec, rng: &mut SeededRng) -> Result<Geometry> {
    if placement.surfaces.len() != config.surfaces {
        return Err(Error::Config(format!(
            "placement lists {} surfaces but the system has {}",
            placement.surfaces.len(),
            config.surfaces
        )));
    }
    let users = (0..config.users)
        .map(|_| {
            let x = placement.user_x.sample(rng);
            let y = placement.user_y.sample(rng);
            let z = placement.user_z.sample(rng);
            [x, y, z]
        })
        .collect();
    Geometry::from_positions(placement.bs, placement.surfaces.clone(), users)
}

/// Direct-link path loss `beta_dir_k = (4 pi / lambda)^2 d^alpha`.
pub fn path_loss_direct(geometry: &Geometry, k: usize, config: &SystemConfig) -> f64 {
    (4.0 * PI / config.wavelength_m).powi(2) * geometry.bs_user[k].powf(config.direct_exponent)
}

/// Far-field gain of the RIS link, `1 / beta_ris`:
/// `G_t G_r lambda^4 cos(gamma_t) cos(gamma_r) / (256 pi^2 d1^2 d2^2)`.
///
/// Grazing incidence or reflection gives zero gain; a user or BS behind the
/// surface is an error.
pub fn ris_path_gain(geometry: &Geometry, i: usize, k: usize, config: &SystemConfig) -> Result<f64> {
    let cos_t = geometry.cos_incidence[i];
    let cos_r = geometry.cos_reflection[i][k];
    if cos_t < 0.0 || cos_r < 0.0 {
        return Err(Error::Geometry(format!("surface {i} is illuminated from behind for user {k}")));
    }
    let d1 = geometry.bs_ris[i];
    let d2 = geometry.ris_user[i][k];
    Ok(config.tx_gain * config.rx_gain * config.wavelength_m.powi(4) * cos_t * cos_r
        / (256.0 * PI * PI * d1 * d1 * d2 * d2))
}

/// `beta_ris`; infinite at grazing angles.
pub fn path_loss_ris(geometry: &Geometry, i: usize, k: usize, config: &SystemConfig) -> Result<f64> {
    Ok(1.0 / ris_path_gain(geometry, i, k, config)?)
}

/// Bookkeeping attached to a channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMeta {
    pub master_seed: u64,
    pub stream: u64,
    /// `true` where the direct link of the user is blocked.
    pub blocked: Vec<bool>,
    /// Variance of the CSI error added to this set (0 for true channels).
    pub csi_error_var: f64,
    /// Noise-normalized amplitude scale of each `D_k`.
    pub direct_scale: Vec<f64>,
    /// Noise-normalized amplitude scale of each `G_{i,k}`, indexed `[i][k]`.
    pub ris_scale: Vec<Vec<f64>>,
    pub elements_per_surface: usize,
}

/// Noise-normalized channels of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `D_k`, `n_k x N_t`.
    pub direct: Vec<CMat>,
    /// `U`, `(N_s N_ris) x N_t`.
    pub bs_ris: CMat,
    /// `G_k`, `n_k x (N_s N_ris)`.
    pub ris_user: Vec<CMat>,
    pub meta: ChannelMeta,
}

impl ChannelSet {
    /// Builds a channel set from raw matrices, checking dimensions.
    pub fn from_matrices(direct: Vec<CMat>, bs_ris: CMat, ris_user: Vec<CMat>) -> Result<Self> {
        let users = direct.len();
        let ch = Self {
            meta: ChannelMeta {
                master_seed: 0,
                stream: 0,
                blocked: vec![false; users],
                csi_error_var: 0.0,
                direct_scale: vec![1.0; users],
                ris_scale: vec![vec![1.0; users]],
                elements_per_surface: bs_ris.nrows(),
            },
            direct,
            bs_ris,
            ris_user,
        };
        ch.check()?;
        Ok(ch)
    }

    pub fn users(&self) -> usize {
        self.direct.len()
    }

    pub fn tx_antennas(&self) -> usize {
        self.bs_ris.ncols()
    }

    pub fn elements(&self) -> usize {
        self.bs_ris.nrows()
    }

    pub fn user_antennas(&self) -> Vec<usize> {
        self.direct.iter().map(|d| d.nrows()).collect()
    }

    /// Dimension and finiteness contract.
    pub fn check(&self) -> Result<()> {
        let nt = self.tx_antennas();
        let ne = self.elements();
        if self.ris_user.len() != self.users() {
            return Err(Error::Dimension("one G_k per user required".into()));
        }
        for (k, (d, g)) in self.direct.iter().zip(&self.ris_user).enumerate() {
            if d.ncols() != nt || g.ncols() != ne || g.nrows() != d.nrows() {
                return Err(Error::Dimension(format!(
                    "user {k}: D is {}x{}, G is {}x{}, expected n x {nt} and n x {ne}",
                    d.nrows(),
                    d.ncols(),
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
        let finite = |m: &CMat| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !(self.direct.iter().all(finite) && finite(&self.bs_ris) && self.ris_user.iter().all(finite)) {
            return Err(Error::InvalidParameter("channel entries must be finite".into()));
        }
        Ok(())
    }

    /// Same realization with the RIS path removed (`G_k = 0`).
    pub fn direct_only(&self) -> Self {
        let mut out = self.clone();
        for g in &mut out.ris_user {
            g.fill(C64::new(0.0, 0.0));
        }
        out
    }

    /// Same realization with every direct link removed (`D_k = 0`).
    pub fn ris_only(&self) -> Self {
        let mut out = self.clone();
        for d in &mut out.direct {
            d.fill(C64::new(0.0, 0.0));
        }
        out
    }
}

/// Positions of the antennas of a ULA parallel to the y-axis.
fn ula_positions(mid: [f64; 3], n: usize, spacing: f64) -> Vec<[f64; 3]> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|m| [mid[0], mid[1] + (m as f64 - c) * spacing, mid[2]])
        .collect()
}

/// Positions of the elements of a surface lying in a `y = const` plane,
/// filled row by row on a square-ish grid along x (columns) and z (rows).
fn ura_positions(mid: [f64; 3], n: usize, spacing: f64) -> Vec<[f64; 3]> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let cx = (cols as f64 - 1.0) / 2.0;
    let cz = (rows as f64 - 1.0) / 2.0;
    (0..n)
        .map(|e| {
            let (col, row) = (e % cols, e / cols);
            [mid[0] + (col as f64 - cx) * spacing, mid[1], mid[2] + (row as f64 - cz) * spacing]
        })
        .collect()
}

/// Far-field (planar-wave) line-of-sight matrix between two arrays.
///
/// Entry `(n, m)` is `exp(-j k (d + e . r_n - e . t_m))` where `e` is the unit
/// vector from the transmit midpoint to the receive midpoint and `r_n`, `t_m`
/// are element offsets from the respective midpoints.
pub fn los_matrix(rx_mid: [f64; 3], rx: &[[f64; 3]], tx_mid: [f64; 3], tx: &[[f64; 3]], wavelength: f64) -> CMat {
    let d = distance(rx_mid, tx_mid);
    let e = [
        (rx_mid[0] - tx_mid[0]) / d,
        (rx_mid[1] - tx_mid[1]) / d,
        (rx_mid[2] - tx_mid[2]) / d,
    ];
    let wavenumber = 2.0 * PI / wavelength;
    let proj = |p: &[f64; 3], mid: [f64; 3]| {
        e[0] * (p[0] - mid[0]) + e[1] * (p[1] - mid[1]) + e[2] * (p[2] - mid[2])
    };
    let rx_phase: Vec<f64> = rx.iter().map(|p| proj(p, rx_mid)).collect();
    let tx_phase: Vec<f64> = tx.iter().map(|p| proj(p, tx_mid)).collect();
    CMat::from_fn(rx.len(), tx.len(), |n, m| {
        C64::from_polar(1.0, -wavenumber * (d + rx_phase[n] - tx_phase[m]))
    })
}

fn rician_weights(factor: f64) -> (f64, f64) {
    if factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((factor / (1.0 + factor)).sqrt(), (1.0 / (1.0 + factor)).sqrt())
    }
}

fn rician(los: CMat, factor: f64, rng: &mut SeededRng) -> CMat {
    let (w_los, w_nlos) = rician_weights(factor);
    let (r, c) = los.shape();
    if w_nlos == 0.0 {
        return los;
    }
    let nlos = rng.complex_normal_matrix(r, c, 1.0);
    los.scale(w_los) + nlos.scale(w_nlos)
}

/// Draws one Rician channel realization for the given geometry.
///
/// Draw order is fixed (all `D_k`, then `U_i` per surface, then `G_{i,k}`
/// per surface and user), so the result is a pure function of the inputs and
/// the RNG stream.
pub fn sample_channels(config: &SystemConfig, geometry: &Geometry, rng: &mut SeededRng) -> Result<ChannelSet> {
    config.validate()?;
    if geometry.users.len() != config.users || geometry.surfaces.len() != config.surfaces {
        return Err(Error::Dimension("geometry does not match the system configuration".into()));
    }
    let antennas = config.user_antennas();
    let ne = config.elements_per_surface;
    let nt = config.tx_antennas;
    let bs_ant = ula_positions(geometry.bs, nt, config.tx_spacing_m);
    let user_ant: Vec<_> = geometry
        .users
        .iter()
        .zip(&antennas)
        .map(|(&u, &n)| ula_positions(u, n, config.rx_spacing_m))
        .collect();
    let ris_el: Vec<_> = geometry
        .surfaces
        .iter()
        .map(|&s| ura_positions(s, ne, config.ris_spacing_m))
        .collect();

    let mut direct = Vec::with_capacity(config.users);
    let mut direct_scale = Vec::with_capacity(config.users);
    for k in 0..config.users {
        let los = los_matrix(geometry.users[k], &user_ant[k], geometry.bs, &bs_ant, config.wavelength_m);
        let scale = (1.0 / (path_loss_direct(geometry, k, config) * config.noise_w)).sqrt();
        direct.push(rician(los, config.rician_factor, rng).scale(scale));
        direct_scale.push(scale);
    }

    let mut bs_ris = CMat::zeros(config.total_elements(), nt);
    for (i, &s) in geometry.surfaces.iter().enumerate() {
        let los = los_matrix(s, &ris_el[i], geometry.bs, &bs_ant, config.wavelength_m);
        bs_ris
            .rows_mut(i * ne, ne)
            .copy_from(&rician(los, config.rician_factor, rng));
    }

    let mut ris_user: Vec<CMat> = antennas.iter().map(|&n| CMat::zeros(n, config.total_elements())).collect();
    let mut ris_scale = vec![vec![0.0; config.users]; config.surfaces];
    for (i, &s) in geometry.surfaces.iter().enumerate() {
        for k in 0..config.users {
            let los = los_matrix(geometry.users[k], &user_ant[k], s, &ris_el[i], config.wavelength_m);
            let scale = (ris_path_gain(geometry, i, k, config)? / config.noise_w).sqrt();
            ris_user[k]
                .columns_mut(i * ne, ne)
                .copy_from(&rician(los, config.rician_factor, rng).scale(scale));
            ris_scale[i][k] = scale;
        }
    }

    let out = ChannelSet {
        direct,
        bs_ris,
        ris_user,
        meta: ChannelMeta {
            master_seed: rng.master(),
            stream: rng.stream(),
            blocked: vec![false; config.users],
            csi_error_var: 0.0,
            direct_scale,
            ris_scale,
            elements_per_surface: ne,
        },
    };
    out.check()?;
    Ok(out)
}

/// True channels paired with the estimates an optimizer would see.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiPair {
    pub truth: ChannelSet,
    pub estimate: ChannelSet,
}

/// Adds i.i.d. `CN(0, variance)` estimation errors to the small-scale fading
/// of every matrix. Path-loss scaling is applied on top of the error, so the
/// large-scale loss of the estimate equals that of the truth.
pub fn apply_csi_error(channels: &ChannelSet, variance: f64, rng: &mut SeededRng) -> Result<CsiPair> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidParameter("CSI error variance must be non-negative".into()));
    }
    let mut estimate = channels.clone();
    if variance > 0.0 {
        for (k, d) in estimate.direct.iter_mut().enumerate() {
            if channels.meta.blocked[k] {
                continue;
            }
            let scale = channels.meta.direct_scale[k];
            *d += rng.complex_normal_matrix(d.nrows(), d.ncols(), variance).scale(scale);
        }
        let (r, c) = estimate.bs_ris.shape();
        estimate.bs_ris += rng.complex_normal_matrix(r, c, variance);
        let ne = channels.meta.elements_per_surface;
        for (k, g) in estimate.ris_user.iter_mut().enumerate() {
            for (i, scales) in channels.meta.ris_scale.iter().enumerate() {
                let n = g.nrows();
                let err = rng.complex_normal_matrix(n, ne, variance).scale(scales[k]);
                let mut block = g.columns_mut(i * ne, ne);
                block += err;
            }
        }
        estimate.meta.csi_error_var = variance;
    }
    Ok(CsiPair {
        truth: channels.clone(),
        estimate,
    })
}

/// Independently blocks each user's direct link with probability `1 - p`.
pub fn apply_blockage(channels: &ChannelSet, p: f64, rng: &mut SeededRng) -> Result<ChannelSet> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter("non-blockage probability must lie in [0, 1]".into()));
    }
    let mut out = channels.clone();
    for (k, d) in out.direct.iter_mut().enumerate() {
        if !rng.bernoulli(p) {
            d.fill(C64::new(0.0, 0.0));
            out.meta.blocked[k] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_geometry(users: Vec<[f64; 3]>) -> Geometry {
        Geometry::from_positions([0.0, 20.0, 10.0], vec![[30.0, 0.0, 5.0]], users).unwrap()
    }

    #[test]
    fn distances_match_hand_values() {
        let g = default_geometry(vec![[300.0, 30.0, 2.0]]);
        assert!((g.bs_ris[0] - 1325f64.sqrt()).abs() < 1e-12);
        assert!((g.bs_ris[0] - 36.40055).abs() < 1e-5);
        assert!((g.bs_user[0] - 90164f64.sqrt()).abs() < 1e-12);
        assert!((g.bs_user[0] - 300.2732).abs() < 1e-4);
        assert!((g.cos_incidence[0] - 20.0 / 1325f64.sqrt()).abs() < 1e-15);
        assert!((g.cos_reflection[0][0] - 30.0 / g.ris_user[0][0]).abs() < 1e-15);
    }

    #[test]
    fn user_at_surface_foot_grazes() {
        let g = default_geometry(vec![[30.0, 1e-9, 2.0]]);
        assert!(g.cos_reflection[0][0] < 1e-9);
        let cfg = SystemConfig::default();
        let on_plane = default_geometry(vec![[30.0, 0.0, 2.0]]);
        assert_eq!(ris_path_gain(&on_plane, 0, 0, &cfg).unwrap(), 0.0);
        assert!(path_loss_ris(&on_plane, 0, 0, &cfg).unwrap().is_infinite());
    }

    #[test]
    fn zero_distance_is_rejected() {
        let err = Geometry::from_positions([0.0, 20.0, 10.0], vec![[30.0, 0.0, 5.0]], vec![[0.0, 20.0, 10.0]]);
        assert!(matches!(err, Err(Error::Geometry(_))));
        let err = Geometry::from_positions([0.0, 20.0, 10.0], vec![[30.0, 0.0, 5.0]], vec![[30.0, 0.0, 5.0]]);
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn user_behind_surface_is_an_error() {
        let g = default_geometry(vec![[300.0, -5.0, 2.0]]);
        let cfg = SystemConfig::default();
        assert!(ris_path_gain(&g, 0, 0, &cfg).is_err());
    }

    #[test]
    fn direct_path_loss_values() {
        let mut cfg = SystemConfig::default();
        let g = Geometry::from_positions([0.0, 0.0, 0.0], vec![[1.0, -1.0, 0.0]], vec![[300.0, 0.0, 0.0]]).unwrap();
        let beta = path_loss_direct(&g, 0, &cfg);
        // (4 pi / 0.15)^2 * 300^3 = 7018.385 * 2.7e7
        assert!((beta / 1.894964e11 - 1.0).abs() < 1e-6, "{beta}");

        cfg.direct_exponent = 2.0;
        let d0 = cfg.wavelength_m / (4.0 * PI);
        let g = Geometry::from_positions([0.0, 0.0, 0.0], vec![[1.0, -1.0, 0.0]], vec![[d0, 0.0, 0.0]]).unwrap();
        assert!((path_loss_direct(&g, 0, &cfg) - 1.0).abs() < 1e-12);

        cfg.direct_exponent = 3.0;
        let g2 = Geometry::from_positions([0.0, 0.0, 0.0], vec![[1.0, -1.0, 0.0]], vec![[2.0 * d0, 0.0, 0.0]]).unwrap();
        assert!((path_loss_direct(&g2, 0, &cfg) / path_loss_direct(&g, 0, &cfg) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn ris_gain_matches_independent_evaluation() {
        // lambda = 0.15, d1 = sqrt(1325), d2 = 270, cos_t = 20/d1, cos_r = 30/270,
        // evaluated term by term.
        let cfg = SystemConfig::default();
        let d1 = 1325f64.sqrt();
        let d2 = 270.0;
        let expected = 2.0 * 2.0 * 0.15f64.powi(4) * (20.0 / d1) * (30.0 / d2)
            / (256.0 * PI * PI * d1 * d1 * d2 * d2);
        // place a user so that d_ris,k = 270 and l_k = 30: dz chosen to close the triangle
        let dz = (270.0f64.powi(2) - 30.0f64.powi(2) - 260.0f64.powi(2)).sqrt();
        let g = default_geometry(vec![[290.0, 30.0, 5.0 - dz]]);
        assert!((g.ris_user[0][0] - 270.0).abs() < 1e-9);
        let gain = ris_path_gain(&g, 0, 0, &cfg).unwrap();
        assert!((gain / expected - 1.0).abs() < 1e-12);
        assert!((gain / 5.0655e-16 - 1.0).abs() < 1e-3, "{gain}");
    }

    #[test]
    fn ris_gain_scales_with_distances() {
        let cfg = SystemConfig::default();
        let near = Geometry::from_positions([0.0, 10.0, 0.0], vec![[0.0, 0.0, 0.0]], vec![[0.0, 40.0, 30.0]]).unwrap();
        let far = Geometry::from_positions([0.0, 20.0, 0.0], vec![[0.0, 0.0, 0.0]], vec![[0.0, 80.0, 60.0]]).unwrap();
        let ratio = ris_path_gain(&near, 0, 0, &cfg).unwrap() / ris_path_gain(&far, 0, 0, &cfg).unwrap();
        assert!((ratio - 16.0).abs() < 1e-9);
    }

    #[test]
    fn grid_sampling_stays_on_grid() {
        let mut rng = SeededRng::new(3, 0);
        let r = GridRange::new(1.5, 2.0, 0.01);
        assert_eq!(r.points(), 51);
        for _ in 0..1000 {
            let v = r.sample(&mut rng);
            assert!((1.5..=2.0 + 1e-12).contains(&v));
            let idx = (v - 1.5) / 0.01;
            assert!((idx - idx.round()).abs() < 1e-6);
        }
        assert_eq!(GridRange::new(200.0, 500.0, 2.0).points(), 151);
        assert_eq!(GridRange::new(1.0, 70.0, 1.0).points(), 70);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = SystemConfig {
            tx_antennas: 4,
            users: 3,
            elements_per_surface: 9,
            surfaces: 2,
            ..SystemConfig::default()
        };
        let placement = PlacementSpec {
            surfaces: vec![[30.0, 0.0, 5.0], [270.0, 0.0, 5.0]],
            ..PlacementSpec::default()
        };
        let mut rng = SeededRng::new(1, 1);
        let g = build_geometry(&cfg, &placement, &mut rng).unwrap();
        let ch = sample_channels(&cfg, &g, &mut rng).unwrap();
        assert_eq!(ch.bs_ris.shape(), (18, 4));
        for k in 0..3 {
            assert_eq!(ch.direct[k].shape(), (2, 4));
            assert_eq!(ch.ris_user[k].shape(), (2, 18));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SystemConfig {
            elements_per_surface: 16,
            ..SystemConfig::default()
        };
        let run = || {
            let mut rng = SeededRng::new(11, 4);
            let g = build_geometry(&cfg, &PlacementSpec::default(), &mut rng).unwrap();
            sample_channels(&cfg, &g, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn infinite_rician_factor_is_pure_los() {
        let cfg = SystemConfig {
            elements_per_surface: 4,
            rician_factor: f64::INFINITY,
            ..SystemConfig::default()
        };
        let g = default_geometry(vec![[300.0, 30.0, 2.0], [250.0, 10.0, 1.8]]);
        let a = sample_channels(&cfg, &g, &mut SeededRng::new(1, 0)).unwrap();
        let b = sample_channels(&cfg, &g, &mut SeededRng::new(2, 9)).unwrap();
        assert_eq!(a.direct, b.direct);
        assert_eq!(a.bs_ris, b.bs_ris);
        assert!(a.bs_ris.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rayleigh_second_moment_matches_path_loss() {
        let cfg = SystemConfig {
            tx_antennas: 1,
            users: 1,
            rx_antennas: 1,
            elements_per_surface: 1,
            rician_factor: 0.0,
            ..SystemConfig::default()
        };
        let g = default_geometry(vec![[300.0, 30.0, 2.0]]);
        let expected = 1.0 / (path_loss_direct(&g, 0, &cfg) * cfg.noise_w);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|s| {
                let ch = sample_channels(&cfg, &g, &mut SeededRng::new(99, s)).unwrap();
                ch.direct[0][(0, 0)].norm_sqr()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        // |CN(0, v)|^2 is exponential with standard deviation v
        let sigma = expected / (n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma, "{mean} vs {expected}");
    }

    #[test]
    fn csi_error_zero_variance_is_identity() {
        let cfg = SystemConfig {
            elements_per_surface: 4,
            ..SystemConfig::default()
        };
        let g = default_geometry(vec![[300.0, 30.0, 2.0]; 2]);
        let ch = sample_channels(&cfg, &g, &mut SeededRng::new(1, 0)).unwrap();
        let pair = apply_csi_error(&ch, 0.0, &mut SeededRng::new(1, 1)).unwrap();
        assert_eq!(pair.estimate, ch);
        assert_eq!(pair.truth, ch);
    }

    #[test]
    fn csi_error_variance_matches() {
        let cfg = SystemConfig {
            tx_antennas: 4,
            elements_per_surface: 25,
            ..SystemConfig::default()
        };
        let g = default_geometry(vec![[300.0, 30.0, 2.0]; 2]);
        let ch = sample_channels(&cfg, &g, &mut SeededRng::new(1, 0)).unwrap();
        let pair = apply_csi_error(&ch, 0.9, &mut SeededRng::new(1, 1)).unwrap();
        // U is unscaled, so its entries expose the raw error: 100 entries x 100 draws
        let mut errs = Vec::new();
        for s in 0..100 {
            let p = apply_csi_error(&ch, 0.9, &mut SeededRng::new(5, s)).unwrap();
            errs.extend((&p.estimate.bs_ris - &ch.bs_ris).iter().map(|z| z.norm_sqr()));
        }
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        assert!((mean - 0.9).abs() < 3.0 * 0.9 / n.sqrt(), "{mean}");
        // direct error carries the path-loss scale
        let e = &pair.estimate.direct[0] - &ch.direct[0];
        let rel = e.norm() / ch.meta.direct_scale[0];
        assert!(rel > 0.1 && rel < 10.0);
    }

    #[test]
    fn blockage_extremes_and_frequency() {
        let cfg = SystemConfig {
            elements_per_surface: 4,
            ..SystemConfig::default()
        };
        let g = default_geometry(vec![[300.0, 30.0, 2.0]; 2]);
        let ch = sample_channels(&cfg, &g, &mut SeededRng::new(1, 0)).unwrap();
        assert_eq!(apply_blockage(&ch, 1.0, &mut SeededRng::new(2, 0)).unwrap(), ch);
        let none = apply_blockage(&ch, 0.0, &mut SeededRng::new(2, 0)).unwrap();
        assert!(none.direct.iter().all(|d| d.iter().all(|z| *z == C64::new(0.0, 0.0))));
        assert_eq!(none.meta.blocked, vec![true, true]);

        let draws = 10_000;
        let mut open = 0usize;
        for s in 0..draws {
            let b = apply_blockage(&ch, 0.5, &mut SeededRng::new(3, s)).unwrap();
            open += b.meta.blocked.iter().filter(|x| !**x).count();
        }
        let n = 2.0 * draws as f64;
        let frac = open as f64 / n;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n).sqrt(), "{frac}");
    }
}
