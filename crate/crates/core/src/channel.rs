//! Cell-free channel generation and received-signal synthesis.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{crandn, CMat, C64};

/// Near breakpoint of the three-slope path loss, meters.
pub const D0_M: f64 = 10.0;
/// Far breakpoint, meters.
pub const D1_M: f64 = 50.0;
pub const CARRIER_MHZ: f64 = 1900.0;
pub const BANDWIDTH_HZ: f64 = 20e6;
pub const NOISE_FIGURE_DB: f64 = 9.0;
pub const TX_POWER_W: f64 = 0.1;
const BOLTZMANN: f64 = 1.380649e-23;
const NOISE_TEMP_K: f64 = 290.0;

/// Deterministic stream for one Monte-Carlo trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    pub area_side: f64,
    pub ap_height: f64,
    pub ue_height: f64,
}

impl Geometry {
    /// 3-D AP-UE distance in meters.
    pub fn distance(&self, b: usize, u: usize) -> f64 {
        let [xa, ya] = self.ap_positions[b];
        let [xu, yu] = self.ue_positions[u];
        let dh = self.ap_height - self.ue_height;
        ((xa - xu).powi(2) + (ya - yu).powi(2) + dh * dh).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Large-scale gains, linear.
    pub beta: Array2<f64>,
    pub g: CMat,
    pub lambda: Array1<f64>,
    pub h: CMat,
    pub rho_u: f64,
}

/// Uniform i.i.d. placement of APs and UEs on the square.
pub fn place_nodes<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Geometry> {
    place_nodes_raw(cfg.b, cfg.u, cfg.area_m, cfg.ap_height_m, cfg.ue_height_m, rng)
}

pub fn place_nodes_raw<R: Rng + ?Sized>(
    b: usize,
    u: usize,
    area_side: f64,
    ap_height: f64,
    ue_height: f64,
    rng: &mut R,
) -> Result<Geometry> {
    if !(area_side > 0.0) {
        return Err(Error::InvalidParameter(format!("area side {area_side} must be positive")));
    }
    let mut draw = |n: usize| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [rng.random::<f64>() * area_side, rng.random::<f64>() * area_side])
            .collect()
    };
    let ap_positions = draw(b);
    let ue_positions = draw(u);
    Ok(Geometry { ap_positions, ue_positions, area_side, ap_height, ue_height })
}

/// Hata-COST231 constant for the given carrier and antenna heights, dB.
pub fn hata_cost231_l(f_mhz: f64, h_ap: f64, h_ue: f64) -> f64 {
    let lf = f_mhz.log10();
    46.3 + 33.9 * lf - 13.82 * h_ap.log10() - (1.1 * lf - 0.7) * h_ue + (1.56 * lf - 0.8)
}

/// Three-slope path loss in dB (negative) at 3-D distance `d_m`.
pub fn path_loss_db(d_m: f64, l_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::InvalidParameter(format!("distance {d_m} must be positive")));
    }
    let km = |m: f64| m / 1000.0;
    Ok(if d_m > D1_M {
        -l_db - 35.0 * km(d_m).log10()
    } else if d_m > D0_M {
        -l_db - 15.0 * km(D1_M).log10() - 20.0 * km(d_m).log10()
    } else {
        -l_db - 15.0 * km(D1_M).log10() - 20.0 * km(D0_M).log10()
    })
}

/// Large-scale gains `PL * 10^(sigma z / 10)` with `z ~ N(0, 1)`.
pub fn large_scale<R: Rng + ?Sized>(
    geometry: &Geometry,
    sigma_sh_db: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let l_db = hata_cost231_l(CARRIER_MHZ, geometry.ap_height, geometry.ue_height);
    let (b, u) = (geometry.ap_positions.len(), geometry.ue_positions.len());
    let mut beta = Array2::zeros((b, u));
    for i in 0..b {
        for j in 0..u {
            let pl = path_loss_db(geometry.distance(i, j), l_db)?;
            let z: f64 = if sigma_sh_db > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            beta[[i, j]] = 10f64.powf((pl + sigma_sh_db * z) / 10.0);
        }
    }
    Ok(beta)
}

/// `G = sqrt(beta) * theta` with `theta ~ CN(0, 1)`.
pub fn small_scale<R: Rng + ?Sized>(beta: &ArrayView2<f64>, rng: &mut R) -> CMat {
    let theta = crandn(beta.nrows(), beta.ncols(), 1.0, rng);
    ndarray::Zip::from(&theta).and(beta).map_collect(|t, b| t * b.sqrt())
}

/// Per-UE power control capping the received-power dynamic range at `P` dB.
pub fn power_control(g: &ArrayView2<C64>, p_db: f64) -> Result<Array1<f64>> {
    if p_db < 0.0 {
        return Err(Error::InvalidParameter(format!("P = {p_db} dB must be nonnegative")));
    }
    let norms: Vec<f64> = g.axis_iter(Axis(1)).map(|c| c.iter().map(|v| v.norm_sqr()).sum()).collect();
    if let Some(u) = norms.iter().position(|&n| n <= 0.0) {
        return Err(Error::ZeroColumn(u));
    }
    let cap = 10f64.powf(p_db / 10.0) * norms.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(norms.iter().map(|&n| (n.min(cap) / n).sqrt()).collect())
}

/// Uplink SNR normalization: transmit power over thermal noise, so that the
/// noise variance becomes 1.
pub fn uplink_snr(tx_power_w: f64, bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    tx_power_w / (BOLTZMANN * NOISE_TEMP_K * bandwidth_hz * 10f64.powf(noise_figure_db / 10.0))
}

/// `H = sqrt(rho) G diag(lambda)`.
pub fn effective_channel(g: &ArrayView2<C64>, lambda: &Array1<f64>, rho_u: f64) -> CMat {
    let s = rho_u.sqrt();
    let mut h = g.to_owned();
    for (mut col, &l) in h.axis_iter_mut(Axis(1)).zip(lambda.iter()) {
        col.mapv_inplace(|v| v * (s * l));
    }
    h
}

/// One full realization: positions, fading, power control, effective channel.
pub fn realize<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<(Geometry, ChannelRealization)> {
    let geometry = place_nodes(cfg, rng)?;
    let beta = large_scale(&geometry, cfg.sigma_sh_db, rng)?;
    let g = small_scale(&beta.view(), rng);
    let lambda = power_control(&g.view(), cfg.p_db)?;
    let rho_u = uplink_snr(TX_POWER_W, BANDWIDTH_HZ, NOISE_FIGURE_DB);
    let h = effective_channel(&g.view(), &lambda, rho_u);
    Ok((geometry, ChannelRealization { beta, g, lambda, h, rho_u }))
}

/// `Y = H S + N` with `N ~ CN(0, n0)` entrywise.
pub fn transmit<R: Rng + ?Sized>(
    h: &ArrayView2<C64>,
    s: &ArrayView2<C64>,
    n0: f64,
    rng: &mut R,
) -> Result<CMat> {
    if h.ncols() != s.nrows() {
        return Err(Error::Dimension(format!("H is {:?} but S is {:?}", h.dim(), s.dim())));
    }
    let mut y = h.dot(s);
    if n0 > 0.0 {
        y += &crandn(h.nrows(), s.ncols(), n0, rng);
    }
    Ok(y)
}
