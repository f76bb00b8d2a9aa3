//! Cell geometry and channel sampling.
//!
//! One BS sits at the origin, `M` relays on a ring of radius `d_r * R` at
//! evenly spaced angles, and UEs uniformly over the disc. Each UE is served by
//! the relay of its angular sector. Gains combine log-distance path loss with
//! independent Rayleigh fading per link and subcarrier.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::model::RadioConfig;
use crate::scalar::Real;

const STREAM_UE_POSITIONS: u64 = 0;
const STREAM_BS_UE: u64 = 1;
const STREAM_RN_UE: u64 = 2;
const STREAM_BS_RN: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub cell_radius_m: f64,
    pub rn_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    /// Serving relay of each UE; `None` without relays.
    pub sector_of_ue: Option<Vec<usize>>,
}

impl Topology {
    pub fn n_users(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn n_relays(&self) -> usize {
        self.rn_positions.len()
    }
}

fn norm(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Relay serving a UE at polar angle `ue_angle` when `n_relays` relays sit at
/// angles `2πm/M`. Sectors are centred on the relay angles.
pub fn assign_sector(ue_angle: f64, n_relays: usize) -> Result<usize> {
    if n_relays == 0 {
        return Err(Error::invalid("sector assignment needs at least one relay"));
    }
    let width = TAU / n_relays as f64;
    let shifted = (ue_angle + 0.5 * width).rem_euclid(TAU);
    Ok(((shifted / width) as usize).min(n_relays - 1))
}

pub fn build_topology(cfg: &SystemConfig, seed: u64) -> Result<Topology> {
    let radius = cfg.geometry.cell_radius_km * 1e3;
    if !(radius > 0.0) {
        return Err(Error::invalid("cell radius must be > 0"));
    }
    let m = cfg.radio.n_relays;
    let d_r = cfg.geometry.d_r;
    if m > 0 && !(d_r > 0.0 && d_r < 1.0) {
        return Err(Error::invalid(format!(
            "d_r must lie in (0, 1) with relays, got {d_r}"
        )));
    }

    let rn_positions: Vec<[f64; 2]> = (0..m)
        .map(|i| {
            let a = TAU * i as f64 / m as f64;
            [d_r * radius * a.cos(), d_r * radius * a.sin()]
        })
        .collect();

    let mut rng = stream(seed, STREAM_UE_POSITIONS);
    let mut angles = Vec::with_capacity(cfg.radio.n_users);
    let ue_positions: Vec<[f64; 2]> = (0..cfg.radio.n_users)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let r = radius * u.sqrt();
            let a = TAU * v;
            angles.push(a);
            [r * a.cos(), r * a.sin()]
        })
        .collect();

    let sector_of_ue = if m > 0 {
        Some(
            angles
                .iter()
                .map(|&a| assign_sector(a, m))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    Ok(Topology {
        cell_radius_m: radius,
        rn_positions,
        ue_positions,
        sector_of_ue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    BsRnLos,
    BsUeNlos,
    RnUeNlos,
}

/// `intercept_db + slope_db * log10(d_km)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossCurve {
    pub intercept_db: f64,
    pub slope_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossModel {
    pub bs_rn_los: PathLossCurve,
    pub bs_ue_nlos: PathLossCurve,
    pub rn_ue_nlos: PathLossCurve,
    /// Lower clamp on any path loss.
    pub min_coupling_loss_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            bs_rn_los: PathLossCurve {
                intercept_db: 100.7,
                slope_db: 23.5,
            },
            bs_ue_nlos: PathLossCurve {
                intercept_db: 131.1,
                slope_db: 42.8,
            },
            rn_ue_nlos: PathLossCurve {
                intercept_db: 145.4,
                slope_db: 37.5,
            },
            min_coupling_loss_db: 40.0,
        }
    }
}

impl PathLossModel {
    pub fn curve(&self, class: LinkClass) -> PathLossCurve {
        match class {
            LinkClass::BsRnLos => self.bs_rn_los,
            LinkClass::BsUeNlos => self.bs_ue_nlos,
            LinkClass::RnUeNlos => self.rn_ue_nlos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("pathloss.bs_rn_los.slope_db", self.bs_rn_los),
            ("pathloss.bs_ue_nlos.slope_db", self.bs_ue_nlos),
            ("pathloss.rn_ue_nlos.slope_db", self.rn_ue_nlos),
        ] {
            if !(c.slope_db > 0.0) {
                return Err(Error::validation(name, "slope must be > 0"));
            }
        }
        Ok(())
    }
}

pub fn path_loss_db(distance_m: f64, class: LinkClass, plm: &PathLossModel) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::invalid(format!(
            "distance must be > 0, got {distance_m}"
        )));
    }
    let c = plm.curve(class);
    let pl = c.intercept_db + c.slope_db * (distance_m / 1e3).log10();
    Ok(pl.max(plm.min_coupling_loss_db))
}

/// Small-scale fading applied on top of path loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fading {
    #[default]
    Rayleigh,
    /// Gains equal the mean path gain; used to isolate geometry effects.
    Disabled,
}

/// `|h|^2` for `h ~ CN(0, 1)`.
fn rayleigh_power(rng: &mut ChaCha8Rng) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    0.5 * (x * x + y * y)
}

/// Channel gains for every link the allocation can use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    n_users: usize,
    n_subcarriers: usize,
    n_relays: usize,
    /// BS→UE gains, row-major `K × N`.
    pub g_bs_ue: Vec<T>,
    /// BS→RN gains, row-major `M × N`.
    pub g_bs_rn: Vec<T>,
    /// Serving RN→UE gains, row-major `K × N`; empty without relays.
    pub g_rn_ue: Vec<T>,
    pub relay_of_user: Option<Vec<usize>>,
    /// Noise power per subcarrier times the SNR gap, watts.
    pub noise_gap: T,
    pub seed: u64,
}

impl<T: Real> ChannelRealization<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_users: usize,
        n_subcarriers: usize,
        g_bs_ue: Vec<T>,
        g_bs_rn: Vec<T>,
        g_rn_ue: Vec<T>,
        relay_of_user: Option<Vec<usize>>,
        noise_gap: T,
        seed: u64,
    ) -> Result<Self> {
        if n_subcarriers == 0 || n_users == 0 {
            return Err(Error::invalid(
                "channel needs at least one user and subcarrier",
            ));
        }
        if g_bs_ue.len() != n_users * n_subcarriers {
            return Err(Error::invalid("g_bs_ue must be K x N"));
        }
        if !g_bs_rn.len().is_multiple_of(n_subcarriers) {
            return Err(Error::invalid("g_bs_rn must be M x N"));
        }
        let n_relays = g_bs_rn.len() / n_subcarriers;
        match &relay_of_user {
            Some(map) => {
                if map.len() != n_users || map.iter().any(|&m| m >= n_relays) {
                    return Err(Error::invalid("relay map does not match the relay count"));
                }
                if g_rn_ue.len() != n_users * n_subcarriers {
                    return Err(Error::invalid("g_rn_ue must be K x N"));
                }
            }
            None if n_relays > 0 => return Err(Error::invalid("relays present but no relay map")),
            None => {}
        }
        let all = g_bs_ue.iter().chain(&g_bs_rn).chain(&g_rn_ue);
        if all.into_iter().any(|g| !(*g > T::zero()) || !g.is_finite()) {
            return Err(Error::invalid("channel gains must be positive and finite"));
        }
        if !(noise_gap > T::zero()) {
            return Err(Error::invalid("noise gap must be > 0"));
        }
        Ok(ChannelRealization {
            n_users,
            n_subcarriers,
            n_relays,
            g_bs_ue,
            g_bs_rn,
            g_rn_ue,
            relay_of_user,
            noise_gap,
            seed,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_relays(&self) -> usize {
        self.n_relays
    }

    pub fn g_bs_ue(&self, k: usize, n: usize) -> T {
        self.g_bs_ue[k * self.n_subcarriers + n]
    }

    /// `(BS→RN, RN→UE)` gains of user `k`'s relayed path on subcarrier `n`.
    pub fn af_gains(&self, k: usize, n: usize) -> Option<(T, T)> {
        let m = self.relay_of_user.as_ref()?[k];
        Some((
            self.g_bs_rn[m * self.n_subcarriers + n],
            self.g_rn_ue[k * self.n_subcarriers + n],
        ))
    }

    /// Same realization in another scalar type.
    pub fn cast<U: Real>(&self) -> ChannelRealization<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        ChannelRealization {
            n_users: self.n_users,
            n_subcarriers: self.n_subcarriers,
            n_relays: self.n_relays,
            g_bs_ue: conv(&self.g_bs_ue),
            g_bs_rn: conv(&self.g_bs_rn),
            g_rn_ue: conv(&self.g_rn_ue),
            relay_of_user: self.relay_of_user.clone(),
            noise_gap: U::lit(self.noise_gap.to_f64_lossy()),
            seed: self.seed,
        }
    }
}

fn mean_gain(distance_m: f64, class: LinkClass, plm: &PathLossModel) -> f64 {
    // Coincident points fall back to the coupling-loss floor.
    let pl = path_loss_db(distance_m, class, plm).unwrap_or(plm.min_coupling_loss_db);
    10f64.powf(-pl / 10.0)
}

pub fn sample_channel<T: Real>(
    topo: &Topology,
    radio: &RadioConfig<T>,
    plm: &PathLossModel,
    seed: u64,
) -> Result<ChannelRealization<T>> {
    sample_channel_with(topo, radio, plm, seed, Fading::Rayleigh)
}

pub fn sample_channel_with<T: Real>(
    topo: &Topology,
    radio: &RadioConfig<T>,
    plm: &PathLossModel,
    seed: u64,
    fading: Fading,
) -> Result<ChannelRealization<T>> {
    let k_users = topo.n_users();
    let n_sc = radio.n_subcarriers;
    let m = topo.n_relays();

    let draw = |rng: &mut ChaCha8Rng, mean: f64| -> T {
        let e = match fading {
            Fading::Rayleigh => rayleigh_power(rng),
            Fading::Disabled => 1.0,
        };
        // |h|^2 can underflow to exactly zero with negligible probability.
        T::lit((mean * e).max(f64::MIN_POSITIVE))
    };

    let mut rng = stream(seed, STREAM_BS_UE);
    let mut g_bs_ue = Vec::with_capacity(k_users * n_sc);
    for ue in &topo.ue_positions {
        let mean = mean_gain(norm(*ue), LinkClass::BsUeNlos, plm);
        for _ in 0..n_sc {
            g_bs_ue.push(draw(&mut rng, mean));
        }
    }

    let mut g_rn_ue = Vec::new();
    if let Some(sectors) = &topo.sector_of_ue {
        let mut rng = stream(seed, STREAM_RN_UE);
        g_rn_ue.reserve(k_users * n_sc);
        for (ue, &s) in topo.ue_positions.iter().zip(sectors) {
            let mean = mean_gain(dist(*ue, topo.rn_positions[s]), LinkClass::RnUeNlos, plm);
            for _ in 0..n_sc {
                g_rn_ue.push(draw(&mut rng, mean));
            }
        }
    }

    let mut rng = stream(seed, STREAM_BS_RN);
    let mut g_bs_rn = Vec::with_capacity(m * n_sc);
    for rn in &topo.rn_positions {
        let mean = mean_gain(norm(*rn), LinkClass::BsRnLos, plm);
        for _ in 0..n_sc {
            g_bs_rn.push(draw(&mut rng, mean));
        }
    }

    ChannelRealization::from_parts(
        k_users,
        n_sc,
        g_bs_ue,
        g_bs_rn,
        g_rn_ue,
        topo.sector_of_ue.clone(),
        radio.noise_gap(),
        seed,
    )
}

/// Topology and channel for one Monte-Carlo sample of `cfg`.
pub fn realize<T: Real>(
    cfg: &SystemConfig,
    seed: u64,
) -> Result<(Topology, ChannelRealization<T>)> {
    let topo = build_topology(cfg, seed)?;
    let chan = sample_channel(&topo, &cfg.radio_config::<T>(), &cfg.pathloss, seed)?;
    Ok((topo, chan))
}

/// Smallest angular distance between two angles, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d).min(PI)
}
