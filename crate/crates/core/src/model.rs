//! Link-level and system-level metrics: SNR, spectral efficiency, power
//! consumption and energy efficiency, plus feasibility checks on allocations.
//!
//! Rates are in bits/s/Hz, powers in watts. `system_rate` returns the
//! un-normalized sum over subcarriers; divide by `N` for the per-subcarrier
//! average.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative slack applied to the transmit power budget.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts<T: Real>(dbm: T) -> T {
    T::lit(10.0).powf((dbm - T::lit(30.0)) / T::lit(10.0))
}

pub fn db_to_linear<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// Fixed and load-dependent power consumption of the BS and relays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel<T> {
    /// Fixed BS consumption, watts.
    pub p_c_bs: T,
    /// Fixed consumption per relay, watts.
    pub p_c_rn: T,
    /// Reciprocal drain efficiency of the BS amplifier.
    pub xi_bs: T,
    /// Reciprocal drain efficiency of the relay amplifiers.
    pub xi_rn: T,
    /// Total instantaneous transmit budget, watts.
    pub p_max: T,
}

impl<T: Real> PowerModel<T> {
    pub fn new(p_c_bs: T, p_c_rn: T, xi_bs: T, xi_rn: T, p_max: T) -> Result<Self> {
        let pm = PowerModel {
            p_c_bs,
            p_c_rn,
            xi_bs,
            xi_rn,
            p_max,
        };
        pm.validate()?;
        Ok(pm)
    }

    /// Reference consumption figures (60 W / 20 W fixed, 2.6 / 5 amplifier factors).
    pub fn reference(p_max: T) -> Self {
        PowerModel {
            p_c_bs: T::lit(60.0),
            p_c_rn: T::lit(20.0),
            xi_bs: T::lit(2.6),
            xi_rn: T::lit(5.0),
            p_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi_bs > T::one()) {
            return Err(Error::invalid(format!(
                "xi_bs must be > 1, got {}",
                self.xi_bs
            )));
        }
        if !(self.xi_rn > T::one()) {
            return Err(Error::invalid(format!(
                "xi_rn must be > 1, got {}",
                self.xi_rn
            )));
        }
        if !(self.p_c_bs >= T::zero()) || !(self.p_c_rn >= T::zero()) {
            return Err(Error::invalid("fixed consumption must be non-negative"));
        }
        if !(self.p_max > T::zero()) {
            return Err(Error::invalid(format!(
                "p_max must be > 0, got {}",
                self.p_max
            )));
        }
        Ok(())
    }

    /// Consumption that does not depend on the transmit powers.
    pub fn fixed_consumption(&self, n_relays: usize) -> T {
        self.p_c_bs + T::lit(n_relays as f64) * self.p_c_rn
    }
}

/// OFDMA dimensions and receiver noise parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig<T> {
    pub n_subcarriers: usize,
    pub n_users: usize,
    pub n_relays: usize,
    pub subcarrier_bw_hz: T,
    pub noise_psd_dbm_hz: T,
    pub snr_gap_db: T,
    /// Per-user rate weights; all ones in every shipped scenario.
    pub weights: Vec<T>,
}

impl<T: Real> RadioConfig<T> {
    /// Equal-weight configuration with 12 kHz subcarriers, -174 dBm/Hz noise
    /// and ideal transceivers.
    pub fn new(n_users: usize, n_subcarriers: usize, n_relays: usize) -> Self {
        RadioConfig {
            n_subcarriers,
            n_users,
            n_relays,
            subcarrier_bw_hz: T::lit(12e3),
            noise_psd_dbm_hz: T::lit(-174.0),
            snr_gap_db: T::zero(),
            weights: vec![T::one(); n_users],
        }
    }

    /// Noise power per subcarrier multiplied by the SNR gap, watts.
    pub fn noise_gap(&self) -> T {
        db_to_linear(self.snr_gap_db) * dbm_to_watts(self.noise_psd_dbm_hz) * self.subcarrier_bw_hz
    }

    pub fn weight(&self, k: usize) -> T {
        self.weights.get(k).copied().unwrap_or_else(T::one)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 {
            return Err(Error::invalid("n_subcarriers must be >= 1"));
        }
        if self.n_users == 0 {
            return Err(Error::invalid("n_users must be >= 1"));
        }
        if self.weights.len() != self.n_users {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.n_users,
                self.weights.len()
            )));
        }
        let ng = self.noise_gap();
        if !(ng > T::zero()) || !ng.is_finite() {
            return Err(Error::invalid(format!(
                "noise gap product must be > 0, got {ng}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Direct,
    Af,
}

/// Resource assigned to one (user, subcarrier) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum Entry<T> {
    #[default]
    Idle,
    Direct {
        p_d: T,
    },
    Af {
        p_bs: T,
        p_rn: T,
    },
}

impl<T: Real> Entry<T> {
    pub fn is_idle(&self) -> bool {
        matches!(self, Entry::Idle)
    }

    pub fn protocol(&self) -> Option<Protocol> {
        match self {
            Entry::Idle => None,
            Entry::Direct { .. } => Some(Protocol::Direct),
            Entry::Af { .. } => Some(Protocol::Af),
        }
    }

    /// Radiated power counted against the budget.
    pub fn tx_power(&self) -> T {
        match *self {
            Entry::Idle => T::zero(),
            Entry::Direct { p_d } => p_d,
            Entry::Af { p_bs, p_rn } => p_bs + p_rn,
        }
    }

    /// Power drawn by the amplifiers; AF pays half because each hop is
    /// active for one of two slots.
    pub fn consumed_power(&self, pm: &PowerModel<T>) -> T {
        match *self {
            Entry::Idle => T::zero(),
            Entry::Direct { p_d } => pm.xi_bs * p_d,
            Entry::Af { p_bs, p_rn } => T::lit(0.5) * (pm.xi_bs * p_bs + pm.xi_rn * p_rn),
        }
    }

    fn scaled(&self, c: T) -> Self {
        match *self {
            Entry::Idle => Entry::Idle,
            Entry::Direct { p_d } => Entry::Direct { p_d: p_d * c },
            Entry::Af { p_bs, p_rn } => Entry::Af {
                p_bs: p_bs * c,
                p_rn: p_rn * c,
            },
        }
    }
}

/// Joint power and subcarrier allocation, one entry per (user, subcarrier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation<T> {
    n_users: usize,
    n_subcarriers: usize,
    entries: Vec<Entry<T>>,
}

impl<T: Real> Allocation<T> {
    pub fn idle(n_users: usize, n_subcarriers: usize) -> Self {
        Allocation {
            n_users,
            n_subcarriers,
            entries: vec![Entry::Idle; n_users * n_subcarriers],
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn get(&self, k: usize, n: usize) -> Entry<T> {
        self.entries[k * self.n_subcarriers + n]
    }

    pub fn set(&mut self, k: usize, n: usize, e: Entry<T>) {
        self.entries[k * self.n_subcarriers + n] = e;
    }

    /// Non-idle entries as `(user, subcarrier, entry)`.
    pub fn active(&self) -> impl Iterator<Item = (usize, usize, Entry<T>)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_idle())
            .map(move |(i, e)| (i / self.n_subcarriers, i % self.n_subcarriers, *e))
    }

    /// The user and entry occupying subcarrier `n`, if any (first match).
    pub fn occupant(&self, n: usize) -> Option<(usize, Entry<T>)> {
        (0..self.n_users)
            .map(|k| (k, self.get(k, n)))
            .find(|(_, e)| !e.is_idle())
    }

    pub fn tx_power(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |acc, e| acc + e.tx_power())
    }

    /// Copy with every power multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Allocation {
            n_users: self.n_users,
            n_subcarriers: self.n_subcarriers,
            entries: self.entries.iter().map(|e| e.scaled(c)).collect(),
        }
    }
}

/// How AF end-to-end SNR is evaluated when reporting rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrModel {
    /// High-SNR harmonic form; what the solver optimizes.
    #[default]
    Approx,
    /// Exact two-hop AF SNR.
    Exact,
}

pub fn snr_direct<T: Real>(power: T, gain: T, noise_gap: T) -> Result<T> {
    if !(noise_gap > T::zero()) {
        return Err(Error::invalid(format!(
            "noise_gap must be > 0, got {noise_gap}"
        )));
    }
    Ok(power * gain / noise_gap)
}

/// Exact end-to-end SNR of a two-hop AF link from its per-hop SNRs.
pub fn snr_af_exact<T: Real>(g1: T, g2: T) -> T {
    g1 * g2 / (g1 + g2 + T::one())
}

/// High-SNR approximation of [`snr_af_exact`].
pub fn snr_af_approx<T: Real>(g1: T, g2: T) -> Result<T> {
    let s = g1 + g2;
    if !(s > T::zero()) {
        return Err(Error::invalid("snr_af_approx needs g1 + g2 > 0"));
    }
    Ok(g1 * g2 / s)
}

pub fn link_rate_direct<T: Real>(snr: T) -> T {
    snr.ln_1p() / T::LN_2()
}

/// AF rate; the two-slot relay cycle halves it.
pub fn link_rate_af<T: Real>(snr: T) -> T {
    T::lit(0.5) * link_rate_direct(snr)
}

fn entry_rate<T: Real>(
    e: &Entry<T>,
    k: usize,
    n: usize,
    chan: &ChannelRealization<T>,
    snr_model: SnrModel,
) -> Result<T> {
    let c = chan.noise_gap;
    Ok(match *e {
        Entry::Idle => T::zero(),
        Entry::Direct { p_d } => link_rate_direct(snr_direct(p_d, chan.g_bs_ue(k, n), c)?),
        Entry::Af { p_bs, p_rn } => {
            let (g1, g2) = chan
                .af_gains(k, n)
                .ok_or_else(|| Error::invalid(format!("user {k} has no serving relay")))?;
            let y1 = snr_direct(p_bs, g1, c)?;
            let y2 = snr_direct(p_rn, g2, c)?;
            let snr = match snr_model {
                SnrModel::Approx if y1 + y2 > T::zero() => snr_af_approx(y1, y2)?,
                SnrModel::Approx => T::zero(),
                SnrModel::Exact => snr_af_exact(y1, y2),
            };
            link_rate_af(snr)
        }
    })
}

/// Weighted sum rate over all allocated (user, subcarrier) pairs.
pub fn system_rate<T: Real>(
    alloc: &Allocation<T>,
    chan: &ChannelRealization<T>,
    cfg: &RadioConfig<T>,
) -> Result<T> {
    system_rate_with(alloc, chan, cfg, SnrModel::Approx)
}

pub fn system_rate_with<T: Real>(
    alloc: &Allocation<T>,
    chan: &ChannelRealization<T>,
    cfg: &RadioConfig<T>,
    snr_model: SnrModel,
) -> Result<T> {
    let structural: Vec<_> = structural_violations(alloc);
    if !structural.is_empty() {
        return Err(Error::Infeasible(structural));
    }
    let mut total = T::zero();
    for (k, n, e) in alloc.active() {
        total = total + cfg.weight(k) * entry_rate(&e, k, n, chan, snr_model)?;
    }
    Ok(total)
}

/// Total consumed power: fixed part plus amplifier-scaled transmit powers.
pub fn system_power<T: Real>(alloc: &Allocation<T>, pm: &PowerModel<T>, n_relays: usize) -> T {
    alloc
        .active()
        .fold(pm.fixed_consumption(n_relays), |acc, (_, _, e)| {
            acc + e.consumed_power(pm)
        })
}

pub fn energy_efficiency<T: Real>(rate: T, power: T) -> Result<T> {
    if !(power > T::zero()) {
        return Err(Error::invalid(format!("power must be > 0, got {power}")));
    }
    Ok(rate / power)
}

/// Fraction of subcarriers carrying an AF transmission.
pub fn af_fraction<T: Real>(alloc: &Allocation<T>) -> T {
    let n = alloc.n_subcarriers();
    if n == 0 {
        return T::zero();
    }
    let af = (0..n)
        .filter(|&s| (0..alloc.n_users()).any(|k| matches!(alloc.get(k, s), Entry::Af { .. })))
        .count();
    T::lit(af as f64) / T::lit(n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Total radiated power must stay within the budget.
    PowerBudget,
    /// At most one user (and one protocol) per subcarrier.
    SingleUserPerSubcarrier,
    /// Powers must be non-negative.
    NonNegativePower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.constraint, self.detail)
    }
}

fn structural_violations<T: Real>(alloc: &Allocation<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    for n in 0..alloc.n_subcarriers() {
        let users: Vec<usize> = (0..alloc.n_users())
            .filter(|&k| !alloc.get(k, n).is_idle())
            .collect();
        if users.len() > 1 {
            out.push(Violation {
                constraint: Constraint::SingleUserPerSubcarrier,
                detail: format!("subcarrier {n} carries users {users:?}"),
            });
        }
    }
    for (k, n, e) in alloc.active() {
        let neg = match e {
            Entry::Idle => false,
            Entry::Direct { p_d } => !(p_d >= T::zero()),
            Entry::Af { p_bs, p_rn } => !(p_bs >= T::zero()) || !(p_rn >= T::zero()),
        };
        if neg {
            out.push(Violation {
                constraint: Constraint::NonNegativePower,
                detail: format!("user {k} subcarrier {n} has a negative power"),
            });
        }
    }
    out
}

/// Every constraint the allocation breaks; empty when feasible.
pub fn check_feasibility<T: Real>(
    alloc: &Allocation<T>,
    _cfg: &RadioConfig<T>,
    pm: &PowerModel<T>,
) -> Vec<Violation> {
    let mut out = structural_violations(alloc);
    let used = alloc.tx_power();
    if used > pm.p_max * (T::one() + T::lit(BUDGET_TOLERANCE)) {
        out.push(Violation {
            constraint: Constraint::PowerBudget,
            detail: format!("transmit power {used} exceeds budget {}", pm.p_max),
        });
    }
    out
}

/// Achieved figures of merit of an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    /// Sum rate over subcarriers, bits/s/Hz.
    pub rate_total: T,
    /// `rate_total / N`.
    pub rate_per_subcarrier: T,
    /// Total consumed power, watts.
    pub power_total: T,
    /// `rate_total / power_total`; the quantity the solver maximizes.
    pub ee: T,
    /// `rate_per_subcarrier / power_total`; the per-subcarrier reporting unit.
    pub ee_per_subcarrier: T,
    pub rho: T,
    /// Radiated power counted against the budget.
    pub tx_power_used: T,
}

impl<T: Real> Metrics<T> {
    pub fn evaluate(
        alloc: &Allocation<T>,
        chan: &ChannelRealization<T>,
        cfg: &RadioConfig<T>,
        pm: &PowerModel<T>,
        snr_model: SnrModel,
    ) -> Result<Self> {
        let violations = check_feasibility(alloc, cfg, pm);
        if !violations.is_empty() {
            return Err(Error::Infeasible(violations));
        }
        let rate_total = system_rate_with(alloc, chan, cfg, snr_model)?;
        let power_total = system_power(alloc, pm, cfg.n_relays);
        let n = T::lit(cfg.n_subcarriers as f64);
        Ok(Metrics {
            rate_total,
            rate_per_subcarrier: rate_total / n,
            power_total,
            ee: energy_efficiency(rate_total, power_total)?,
            ee_per_subcarrier: energy_efficiency(rate_total / n, power_total)?,
            rho: af_fraction(alloc),
            tx_power_used: alloc.tx_power(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelRealization;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn dbm_conversion_anchors() {
        assert_eq!(dbm_to_watts(30.0_f64), 1.0);
        assert!(rel(dbm_to_watts(0.0_f64), 1.0e-3) < 1e-15);
        // 10^(-20.4) evaluated to 20 digits: 3.9810717055349725077e-21
        assert!(rel(dbm_to_watts(-174.0_f64), 3.981_071_705_534_972e-21) < 1e-14);
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr_direct(2.0, 3.0, 6.0).unwrap(), 1.0);
        assert_eq!(snr_direct(0.0, 5.0, 1.0).unwrap(), 0.0);
        let s = snr_direct(1.0, 1e-10, 4.7776e-17).unwrap();
        assert!(rel(s, 2.093_102_8e6) < 1e-6);
        assert!(matches!(
            snr_direct(1.0, 1.0, 0.0),
            Err(Error::InvalidParameter(_))
        ));

        assert!(rel(snr_af_exact(1.0, 1.0), 1.0 / 3.0) < 1e-15);
        assert_eq!(snr_af_exact(0.0, 7.0), 0.0);
        let e = snr_af_exact(1e6, 1e6);
        assert!(rel(e, 1e12 / 2_000_001.0) < 1e-15);
        assert!((e - 499_999.75).abs() < 1e-3 && e < 1e6);

        assert_eq!(snr_af_approx(1.0, 1.0).unwrap(), 0.5);
        assert_eq!(snr_af_approx(3.0, 6.0).unwrap(), 2.0);
        let a = snr_af_approx(1e6, 1e6).unwrap();
        assert_eq!(a, 5e5);
        assert!(rel(a, e) <= 1e-6);
        assert!(snr_af_approx(0.0, 0.0).is_err());
    }

    #[test]
    fn link_rates() {
        assert_eq!(link_rate_direct(1.0_f64), 1.0);
        assert_eq!(link_rate_af(1.0_f64), 0.5);
        assert!((link_rate_direct(3.0_f64) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn system_power_reference_values() {
        let pm = PowerModel::reference(1.0_f64);
        let idle = Allocation::<f64>::idle(2, 2);
        assert_eq!(system_power(&idle, &pm, 3), 120.0);

        let mut a = Allocation::idle(1, 1);
        a.set(0, 0, Entry::Direct { p_d: 1.0 });
        assert!((system_power(&a, &pm, 0) - 62.6).abs() < 1e-12);

        let mut b = Allocation::idle(1, 1);
        b.set(
            0,
            0,
            Entry::Af {
                p_bs: 2.0,
                p_rn: 2.0,
            },
        );
        assert!((system_power(&b, &pm, 1) - 87.6).abs() < 1e-12);
    }

    #[test]
    fn ee_and_rho() {
        assert_eq!(energy_efficiency(0.0, 120.0).unwrap(), 0.0);
        assert_eq!(energy_efficiency(2.0, 100.0).unwrap(), 0.02);
        assert!(energy_efficiency(1.0, 0.0).is_err());

        let mut a = Allocation::<f64>::idle(2, 4);
        assert_eq!(af_fraction(&a), 0.0);
        a.set(
            1,
            2,
            Entry::Af {
                p_bs: 0.1,
                p_rn: 0.1,
            },
        );
        assert_eq!(af_fraction(&a), 0.25);
        for n in 0..4 {
            a.set(
                n % 2,
                n,
                Entry::Af {
                    p_bs: 0.1,
                    p_rn: 0.1,
                },
            );
        }
        a.set(1, 2, Entry::Idle);
        a.set(
            0,
            2,
            Entry::Af {
                p_bs: 0.1,
                p_rn: 0.1,
            },
        );
        assert_eq!(af_fraction(&a), 1.0);
    }

    #[test]
    fn feasibility_cases() {
        let cfg = RadioConfig::<f64>::new(2, 2, 1);
        let pm = PowerModel::reference(1.0);
        let mut a = Allocation::idle(2, 2);
        assert!(check_feasibility(&a, &cfg, &pm).is_empty());

        a.set(0, 1, Entry::Direct { p_d: 0.5 });
        a.set(
            1,
            0,
            Entry::Af {
                p_bs: 0.25,
                p_rn: 0.25,
            },
        );
        assert!(
            check_feasibility(&a, &cfg, &pm).is_empty(),
            "exact budget is feasible"
        );

        a.set(1, 1, Entry::Direct { p_d: 0.0 });
        let v = check_feasibility(&a, &cfg, &pm);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, Constraint::SingleUserPerSubcarrier);

        let mut b = Allocation::idle(1, 1);
        b.set(0, 0, Entry::Direct { p_d: 1.01 });
        let v = check_feasibility(&b, &cfg, &pm);
        assert_eq!(v[0].constraint, Constraint::PowerBudget);

        b.set(0, 0, Entry::Direct { p_d: -0.1 });
        let v = check_feasibility(&b, &cfg, &pm);
        assert_eq!(v[0].constraint, Constraint::NonNegativePower);
    }

    fn tiny_channel() -> ChannelRealization<f64> {
        // K=2, N=2, one relay serving both users.
        ChannelRealization::from_parts(
            2,
            2,
            vec![2e-13, 5e-14, 1e-13, 3e-13],
            vec![4e-11, 7e-11],
            vec![6e-13, 2e-13, 9e-14, 1.5e-12],
            Some(vec![0, 0]),
            4.7776e-17,
            0,
        )
        .unwrap()
    }

    #[test]
    fn system_rate_matches_hand_sum() {
        let chan = tiny_channel();
        let cfg = RadioConfig::<f64>::new(2, 2, 1);
        let idle = Allocation::idle(2, 2);
        assert_eq!(system_rate(&idle, &chan, &cfg).unwrap(), 0.0);

        let mut a = Allocation::idle(2, 2);
        a.set(0, 0, Entry::Direct { p_d: 1e-3 });
        a.set(
            1,
            1,
            Entry::Af {
                p_bs: 2e-4,
                p_rn: 3e-4,
            },
        );
        // hand evaluation, term by term
        let c: f64 = 4.7776e-17;
        let t1 = (1.0 + 1e-3 * 2e-13 / c).log2();
        let y1: f64 = 2e-4 * 7e-11 / c;
        let y2 = 3e-4 * 1.5e-12 / c;
        let t2 = 0.5 * (1.0 + y1 * y2 / (y1 + y2)).log2();
        let r = system_rate(&a, &chan, &cfg).unwrap();
        assert!(rel(r, t1 + t2) < 1e-13);

        let exact = system_rate_with(&a, &chan, &cfg, SnrModel::Exact).unwrap();
        assert!(exact < r);
    }

    #[test]
    fn single_direct_entry_unit_snr() {
        let chan = ChannelRealization::from_parts(1, 1, vec![2.0], vec![], vec![1.0], None, 1.0, 0)
            .unwrap();
        let cfg = RadioConfig::<f64>::new(1, 1, 0);
        let mut a = Allocation::idle(1, 1);
        a.set(0, 0, Entry::Direct { p_d: 0.5 });
        assert_eq!(system_rate(&a, &chan, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn metrics_self_consistent() {
        let chan = tiny_channel();
        let cfg = RadioConfig::<f64>::new(2, 2, 1);
        let pm = PowerModel::reference(1e-3);
        let mut a = Allocation::idle(2, 2);
        a.set(1, 0, Entry::Direct { p_d: 4e-4 });
        a.set(
            0,
            1,
            Entry::Af {
                p_bs: 1e-4,
                p_rn: 5e-4,
            },
        );
        let m = Metrics::evaluate(&a, &chan, &cfg, &pm, SnrModel::Approx).unwrap();
        assert!(rel(m.ee * m.power_total, m.rate_total) < 1e-12);
        assert!(rel(m.ee_per_subcarrier * 2.0, m.ee) < 1e-12);
        assert_eq!(m.rho, 0.5);
        assert!(rel(m.tx_power_used, 1e-3) < 1e-12);
    }

    proptest! {
        #[test]
        fn af_exact_below_approx_and_min(g1 in 0.0..1e7_f64, g2 in 0.0..1e7_f64) {
            let e = snr_af_exact(g1, g2);
            prop_assert!(e <= g1.min(g2));
            if g1 + g2 > 0.0 {
                prop_assert!(e <= snr_af_approx(g1, g2).unwrap());
            }
        }

        #[test]
        fn af_approx_high_snr_error(g1 in 10.0..1e8_f64, g2 in 10.0..1e8_f64) {
            let e = snr_af_exact(g1, g2);
            let a = snr_af_approx(g1, g2).unwrap();
            prop_assert!((a - e) / e <= 2.0 / g1.min(g2));
        }

        #[test]
        fn power_is_affine(pd in 0.0..10.0_f64, pb in 0.0..10.0_f64, pr in 0.0..10.0_f64) {
            let pm = PowerModel::reference(100.0);
            let mut a = Allocation::idle(2, 2);
            a.set(0, 0, Entry::Direct { p_d: pd });
            a.set(1, 1, Entry::Af { p_bs: pb, p_rn: pr });
            let fixed = pm.fixed_consumption(2);
            let v1 = system_power(&a, &pm, 2) - fixed;
            let v2 = system_power(&a.scaled(2.0), &pm, 2) - fixed;
            prop_assert!((v2 - 2.0 * v1).abs() <= 1e-12 * v1.abs().max(1.0));
        }

        #[test]
        fn ee_ratio_scaling(r in 0.0..100.0_f64, p in 1.0..500.0_f64, c in 1e-3..1e3_f64) {
            let a = energy_efficiency(r * c, p).unwrap();
            let b = c * energy_efficiency(r, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }

        #[test]
        fn af_rate_concave_in_split(p in 1e-4..1.0_f64, g1 in 1e-14..1e-10_f64, g2 in 1e-14..1e-10_f64) {
            let c = 4.7776e-17;
            let rate = |beta: f64| {
                let y1 = beta * p * g1 / c;
                let y2 = (1.0 - beta) * p * g2 / c;
                link_rate_af(snr_af_approx(y1, y2).unwrap())
            };
            let h = 1e-3;
            for i in 1..999 {
                let b = i as f64 * h;
                let d2 = rate(b + h) - 2.0 * rate(b) + rate(b - h);
                prop_assert!(d2 <= 1e-9 * rate(b).abs().max(1e-12));
            }
        }
    }
}
