//! Per-subcarrier closed forms: water-filling powers, the AF power split and
//! the marginal Lagrangian gain that decides who gets each subcarrier.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Entry, Protocol};
use crate::scalar::Real;

/// Best power choice of one (user, protocol) on one subcarrier for fixed
/// price `q` and multiplier `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub user: usize,
    pub protocol: Protocol,
    /// `Direct { p_d }` or `Af { p_bs, p_rn }`; powers may be zero.
    pub entry: Entry<T>,
    /// Gain in the Lagrangian from assigning the subcarrier to this candidate.
    pub marginal: T,
    /// Water-filling effective gain, 1/W.
    pub effective_gain: T,
    /// Share of AF power on the first hop; `None` for direct candidates.
    pub beta: Option<T>,
}

impl<T: Real> Candidate<T> {
    pub fn total_power(&self) -> T {
        self.entry.tx_power()
    }

    pub fn with_user(mut self, user: usize) -> Self {
        self.user = user;
        self
    }
}

fn check_prices<T: Real>(q: T, lambda: T) -> Result<()> {
    if !(q >= T::zero()) || !(lambda >= T::zero()) {
        return Err(Error::invalid("q and lambda must be non-negative"));
    }
    if !(q + lambda > T::zero()) {
        return Err(Error::invalid(
            "q and lambda are both zero: water level is unbounded",
        ));
    }
    Ok(())
}

/// `log2(1+x) - x / (ln2 (1+x))` scaled by `scale`.
fn marginal_gain<T: Real>(x: T, scale: T) -> T {
    if x > T::zero() {
        scale * (x.ln_1p() - x / (T::one() + x)) / T::LN_2()
    } else {
        T::zero()
    }
}

pub fn direct_candidate<T: Real>(
    q: T,
    lambda: T,
    gain: T,
    noise_gap: T,
    xi_bs: T,
) -> Result<Candidate<T>> {
    check_prices(q, lambda)?;
    if !(noise_gap > T::zero()) {
        return Err(Error::invalid("noise_gap must be > 0"));
    }
    if !(gain >= T::zero()) {
        return Err(Error::invalid("gain must be >= 0"));
    }
    let alpha = gain / noise_gap;
    let level = T::one() / (T::LN_2() * (q * xi_bs + lambda));
    let p = if alpha > T::zero() {
        (level - alpha.recip()).max(T::zero())
    } else {
        T::zero()
    };
    Ok(Candidate {
        user: 0,
        protocol: Protocol::Direct,
        entry: Entry::Direct { p_d: p },
        marginal: marginal_gain(alpha * p, T::one()),
        effective_gain: alpha,
        beta: None,
    })
}

/// Fraction of AF power spent on the BS→RN hop.
///
/// Written as `√(g2 b) / (√(g1 a) + √(g2 b))`, which stays finite when
/// `g1 a = g2 b`.
pub fn af_beta<T: Real>(q: T, lambda: T, g1: T, g2: T, xi_bs: T, xi_rn: T) -> Result<T> {
    check_prices(q, lambda)?;
    if !(g1 > T::zero()) || !(g2 > T::zero()) {
        return Err(Error::invalid("AF gains must be > 0"));
    }
    let two = T::lit(2.0);
    let a = q * xi_bs + two * lambda;
    let b = q * xi_rn + two * lambda;
    let x = (g1 * a).sqrt();
    let y = (g2 * b).sqrt();
    Ok(y / (x + y))
}

pub fn af_candidate<T: Real>(
    q: T,
    lambda: T,
    g1: T,
    g2: T,
    noise_gap: T,
    xi_bs: T,
    xi_rn: T,
) -> Result<Candidate<T>> {
    let beta = af_beta(q, lambda, g1, g2, xi_bs, xi_rn)?;
    if !(noise_gap > T::zero()) {
        return Err(Error::invalid("noise_gap must be > 0"));
    }
    let one = T::one();
    let two = T::lit(2.0);
    let nb = one - beta;
    let alpha = beta * nb * g1 * g2 / ((beta * g1 + nb * g2) * noise_gap);
    let cost = beta * (q * xi_bs + two * lambda) + nb * (q * xi_rn + two * lambda);
    let p = if alpha > T::zero() {
        (one / (T::LN_2() * cost) - alpha.recip()).max(T::zero())
    } else {
        T::zero()
    };
    let p_bs = beta * p;
    Ok(Candidate {
        user: 0,
        protocol: Protocol::Af,
        entry: Entry::Af {
            p_bs,
            p_rn: p - p_bs,
        },
        marginal: marginal_gain(alpha * p, T::lit(0.5)),
        effective_gain: alpha,
        beta: Some(beta),
    })
}

/// How equal marginals are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    SeededRandom,
}

/// Runtime state behind a [`TieBreak`] policy.
pub enum TieBreaker {
    LowestIndex,
    Random(Box<ChaCha8Rng>),
}

impl TieBreaker {
    pub fn new(policy: TieBreak, seed: u64) -> Self {
        use rand::SeedableRng;
        match policy {
            TieBreak::LowestIndex => TieBreaker::LowestIndex,
            TieBreak::SeededRandom => TieBreaker::Random(Box::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }
}

/// Index of the candidate with the largest marginal, or `None` when every
/// marginal is negative.
pub fn assign_subcarriers<T: Real>(
    candidates: &[Candidate<T>],
    tie: &mut TieBreaker,
) -> Option<usize> {
    let best = candidates
        .iter()
        .map(|c| c.marginal)
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if candidates.is_empty() || best < T::zero() {
        return None;
    }
    match tie {
        TieBreaker::LowestIndex => candidates.iter().position(|c| c.marginal == best),
        TieBreaker::Random(rng) => {
            let ties: Vec<usize> = (0..candidates.len())
                .filter(|&i| candidates[i].marginal == best)
                .collect();
            Some(ties[rng.random_range(0..ties.len())])
        }
    }
}

/// Relative KKT stationarity residual of a powered candidate at `(q, lambda)`.
pub fn stationarity_residual<T: Real>(c: &Candidate<T>, q: T, lambda: T, xi_bs: T, xi_rn: T) -> T {
    let a = c.effective_gain;
    let p = c.total_power();
    let slope = a / (T::LN_2() * (T::one() + a * p));
    let price = match (c.protocol, c.beta) {
        (Protocol::Af, Some(beta)) => {
            let two = T::lit(2.0);
            beta * (q * xi_bs + two * lambda) + (T::one() - beta) * (q * xi_rn + two * lambda)
        }
        _ => q * xi_bs + lambda,
    };
    ((slope - price) / price).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn quotient_form(q: f64, l: f64, g1: f64, g2: f64, xb: f64, xr: f64) -> f64 {
        let a = q * xb + 2.0 * l;
        let b = q * xr + 2.0 * l;
        (-g2 * b + (g1 * g2 * a * b).sqrt()) / (g1 * a - g2 * b)
    }

    #[test]
    fn direct_worked_example() {
        let c = direct_candidate(0.0, 1.0 / LN_2, 2.0, 1.0, 2.6).unwrap();
        match c.entry {
            Entry::Direct { p_d } => assert!((p_d - 0.5).abs() < 1e-15),
            _ => unreachable!(),
        }
        let expected = 1.0 - 1.0 / (2.0 * LN_2);
        assert!((c.marginal - expected).abs() < 1e-15);
        assert!((c.marginal - 0.27865).abs() < 1e-5);
    }

    #[test]
    fn direct_clamps() {
        let c = direct_candidate(0.0, 1.0, 0.0, 1.0, 2.6).unwrap();
        assert_eq!(c.total_power(), 0.0);
        assert_eq!(c.marginal, 0.0);
        // water level 1/(ln2 * lambda) equal to 1/alpha
        let alpha = 3.0;
        let c = direct_candidate(0.0, alpha / LN_2, alpha, 1.0, 2.6).unwrap();
        assert!(c.total_power().abs() < 1e-15);
        assert!(c.marginal.abs() < 1e-15);
        assert!(direct_candidate(0.0, 0.0, 1.0, 1.0, 2.6).is_err());
    }

    #[test]
    fn beta_symmetric_and_quarter() {
        let b = af_beta(0.0, 0.3, 2.0, 2.0, 2.6, 2.6).unwrap();
        assert_eq!(b, 0.5);
        // g1 a = 4 g2 b  ->  1/3
        let lambda = 0.25;
        let b: f64 = af_beta(0.0, lambda, 4.0, 1.0, 2.6, 5.0).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 1e-15);
        assert!((quotient_form(0.0, lambda, 4.0, 1.0, 2.6, 5.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!(af_beta(0.0, 0.1, 0.0, 1.0, 2.6, 5.0).is_err());
    }

    #[test]
    fn af_symmetric_example() {
        let g = 1e-12;
        let c_noise = 4.7776e-17;
        let lambda = 1.0 / (2.0 * LN_2);
        let c = af_candidate(0.0, lambda, g, g, c_noise, 3.0, 3.0).unwrap();
        assert_eq!(c.beta, Some(0.5));
        assert!((c.effective_gain / (g / (4.0 * c_noise)) - 1.0).abs() < 1e-14);
        let expected = 1.0 - 4.0 * c_noise / g;
        assert!((c.total_power() - expected).abs() < 1e-12);
        match c.entry {
            Entry::Af { p_bs, p_rn } => assert_eq!(p_bs, p_rn),
            _ => unreachable!(),
        }
    }

    #[test]
    fn af_clamps_below_water() {
        let c = af_candidate(0.0, 1e9, 1e-14, 1e-14, 4.7776e-17, 2.6, 5.0).unwrap();
        assert_eq!(c.total_power(), 0.0);
        assert_eq!(c.marginal, 0.0);
        assert_eq!(
            c.entry,
            Entry::Af {
                p_bs: 0.0,
                p_rn: 0.0
            }
        );
    }

    fn with_marginal(user: usize, protocol: Protocol, m: f64) -> Candidate<f64> {
        Candidate {
            user,
            protocol,
            entry: Entry::Direct { p_d: 0.0 },
            marginal: m,
            effective_gain: 1.0,
            beta: None,
        }
    }

    #[test]
    fn assignment_examples() {
        let mut tb = TieBreaker::LowestIndex;
        let zeros: Vec<_> = (0..4)
            .map(|i| with_marginal(i / 2, Protocol::Direct, 0.0))
            .collect();
        assert_eq!(assign_subcarriers(&zeros, &mut tb), Some(0));

        let cands = vec![
            with_marginal(0, Protocol::Direct, 0.1),
            with_marginal(0, Protocol::Af, 0.2),
            with_marginal(1, Protocol::Direct, 0.3),
            with_marginal(1, Protocol::Af, 0.1),
            with_marginal(2, Protocol::Direct, 0.05),
            with_marginal(2, Protocol::Af, 0.5),
        ];
        let w = assign_subcarriers(&cands, &mut tb).unwrap();
        assert_eq!((cands[w].user, cands[w].protocol), (2, Protocol::Af));

        let neg = vec![with_marginal(0, Protocol::Direct, -1e-18)];
        assert_eq!(assign_subcarriers(&neg, &mut tb), None);
    }

    #[test]
    fn random_tie_break_picks_from_maximal_set() {
        let cands = vec![
            with_marginal(0, Protocol::Direct, 0.4),
            with_marginal(1, Protocol::Direct, 0.1),
            with_marginal(2, Protocol::Direct, 0.4),
        ];
        let mut tb = TieBreaker::new(TieBreak::SeededRandom, 5);
        let mut seen = [false; 3];
        for _ in 0..64 {
            seen[assign_subcarriers(&cands, &mut tb).unwrap()] = true;
        }
        assert_eq!(seen, [true, false, true]);
    }

    #[test]
    fn beta_maximizes_af_lagrangian() {
        // brute-force scan over the split at the candidate's total power
        let (q, l, g1, g2, c, xb, xr) = (0.02, 300.0, 3e-11, 2e-13, 4.7776e-17, 2.6, 5.0);
        let cand = af_candidate(q, l, g1, g2, c, xb, xr).unwrap();
        let p = cand.total_power();
        assert!(p > 0.0);
        let value = |b: f64| {
            let y1 = b * p * g1 / c;
            let y2 = (1.0 - b) * p * g2 / c;
            0.5 * (1.0 + y1 * y2 / (y1 + y2)).log2()
                - q * 0.5 * (xb * b + xr * (1.0 - b)) * p
                - l * p
        };
        let beta = cand.beta.unwrap();
        let best = (1..10_000)
            .map(|i| value(i as f64 / 10_000.0))
            .fold(f64::MIN, f64::max);
        assert!(value(beta) >= best - 1e-12);
    }

    proptest! {
        #[test]
        fn beta_matches_quotient(
            q in 0.0..1.0_f64, l in 1e-3..1e3_f64,
            lg1 in -15.0..-9.0_f64, lg2 in -15.0..-9.0_f64,
            xb in 1.01..10.0_f64, xr in 1.01..10.0_f64,
        ) {
            let (g1, g2) = (10f64.powf(lg1), 10f64.powf(lg2));
            let a = q * xb + 2.0 * l;
            let b = q * xr + 2.0 * l;
            let den = g1 * a - g2 * b;
            prop_assume!(den.abs() > 1e-6 * (g1 * a).max(g2 * b));
            let stable = af_beta(q, l, g1, g2, xb, xr).unwrap();
            let quotient = quotient_form(q, l, g1, g2, xb, xr);
            prop_assert!(stable > 0.0 && stable < 1.0);
            prop_assert!(((stable - quotient) / quotient).abs() <= 1e-9);
        }

        #[test]
        fn af_split_identity(q in 0.0..1.0_f64, l in 1e-2..1e4_f64, lg1 in -14.0..-9.0_f64, lg2 in -14.0..-9.0_f64) {
            let c = af_candidate(q, l, 10f64.powf(lg1), 10f64.powf(lg2), 4.7776e-17, 2.6, 5.0).unwrap();
            let beta = c.beta.unwrap();
            prop_assert!(beta > 0.0 && beta < 1.0);
            match c.entry {
                Entry::Af { p_bs, p_rn } => {
                    prop_assert!(p_bs >= 0.0 && p_rn >= 0.0);
                    prop_assert!((p_bs + p_rn - c.total_power()).abs() <= 1e-15 * c.total_power().max(1e-300));
                }
                _ => prop_assert!(false),
            }
            prop_assert!(c.marginal >= 0.0);
        }

        #[test]
        fn direct_kkt_holds(q in 0.0..1.0_f64, l in 1e-2..1e4_f64, lg in -14.0..-9.0_f64) {
            let c = direct_candidate(q, l, 10f64.powf(lg), 4.7776e-17, 2.6).unwrap();
            if c.total_power() > 0.0 {
                prop_assert!(stationarity_residual(&c, q, l, 2.6, 5.0) <= 1e-9);
            }
        }
    }
}
