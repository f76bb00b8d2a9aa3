//! Exhaustive search for tiny instances.
//!
//! Every subcarrier assignment is enumerated. For each one the transmit powers
//! (and the AF split) are optimized on grids, with the shared budget enforced
//! exactly over all active subcarriers. The result is a feasible lower bound
//! on the true optimum that tightens as the grids are refined.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::model::{
    check_feasibility, Allocation, Entry, Metrics, PowerModel, Protocol, RadioConfig, SnrModel,
};
use crate::scalar::Real;
use crate::solver::Solution;

/// Upper bound on the number of enumerated assignments.
pub const MAX_ASSIGNMENTS: usize = 1_000_000;
/// Upper bound on simultaneously powered subcarriers.
pub const MAX_ACTIVE: usize = 3;
/// Lowest grid power relative to the budget.
const GRID_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Log-spaced levels per subcarrier power.
    pub power_points: usize,
    /// Uniform levels of the AF split on `[0, 1]`.
    pub beta_points: usize,
    /// Local refinements, each shrinking the bracket 10x around the incumbent.
    pub refine_rounds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            power_points: 200,
            beta_points: 101,
            refine_rounds: 2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.power_points < 2 || self.beta_points < 2 {
            return Err(Error::invalid("grid point counts must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "lowercase")]
pub enum Slot {
    Idle,
    Used { user: usize, protocol: Protocol },
}

pub type Assignment = Vec<Slot>;

/// Number of assignments for `K` users, `N` subcarriers and `M` relays.
pub fn assignment_count(k: usize, n: usize, m: usize) -> Option<usize> {
    let per = if m > 0 { 2 * k + 1 } else { k + 1 };
    per.checked_pow(u32::try_from(n).ok()?)
}

/// Lazily enumerates assignments in lexicographic order, subcarrier 0 most
/// significant, with `Idle < (0, Direct) < (0, AF) < (1, Direct) < ...`.
#[derive(Debug, Clone)]
pub struct Assignments {
    k: usize,
    n: usize,
    relays: bool,
    next: usize,
    total: usize,
}

impl Assignments {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// The assignment at lexicographic position `index`.
    pub fn nth_assignment(&self, mut index: usize) -> Assignment {
        let per = if self.relays {
            2 * self.k + 1
        } else {
            self.k + 1
        };
        let mut out = vec![Slot::Idle; self.n];
        for slot in out.iter_mut().rev() {
            let d = index % per;
            index /= per;
            *slot = match d {
                0 => Slot::Idle,
                d if self.relays => Slot::Used {
                    user: (d - 1) / 2,
                    protocol: if (d - 1) % 2 == 0 {
                        Protocol::Direct
                    } else {
                        Protocol::Af
                    },
                },
                d => Slot::Used {
                    user: d - 1,
                    protocol: Protocol::Direct,
                },
            };
        }
        out
    }
}

impl Iterator for Assignments {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        if self.next >= self.total {
            return None;
        }
        let a = self.nth_assignment(self.next);
        self.next += 1;
        Some(a)
    }
}

pub fn enumerate_assignments(k: usize, n: usize, m: usize) -> Result<Assignments> {
    match assignment_count(k, n, m) {
        Some(total) if total <= MAX_ASSIGNMENTS => Ok(Assignments {
            k,
            n,
            relays: m > 0,
            next: 0,
            total,
        }),
        _ => Err(Error::InstanceTooLarge(format!(
            "K={k}, N={n}, M={m} exceeds {MAX_ASSIGNMENTS} assignments"
        ))),
    }
}

/// Best grid point found for one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub allocation: Allocation<f64>,
    pub rate: f64,
    pub power: f64,
    pub ee: f64,
}

/// One powered subcarrier of an assignment, as a link of gains already
/// divided by the noise gap.
#[derive(Debug, Clone, Copy)]
enum Link {
    Direct {
        n: usize,
        user: usize,
        a: f64,
    },
    Af {
        n: usize,
        user: usize,
        a1: f64,
        a2: f64,
    },
}

impl Link {
    fn rate(&self, t: f64, beta: f64) -> f64 {
        match *self {
            Link::Direct { a, .. } => (t * a).ln_1p() / std::f64::consts::LN_2,
            Link::Af { a1, a2, .. } => {
                let y1 = beta * t * a1;
                let y2 = (1.0 - beta) * t * a2;
                if y1 + y2 <= 0.0 {
                    return 0.0;
                }
                0.5 * (y1 * y2 / (y1 + y2)).ln_1p() / std::f64::consts::LN_2
            }
        }
    }

    fn consumption(&self, t: f64, beta: f64, pm: &PowerModel<f64>) -> f64 {
        match self {
            Link::Direct { .. } => pm.xi_bs * t,
            Link::Af { .. } => 0.5 * (pm.xi_bs * beta * t + pm.xi_rn * (1.0 - beta) * t),
        }
    }

    fn is_af(&self) -> bool {
        matches!(self, Link::Af { .. })
    }

    fn entry(&self, t: f64, beta: f64) -> (usize, usize, Entry<f64>) {
        match *self {
            Link::Direct { n, user, .. } => (user, n, Entry::Direct { p_d: t }),
            Link::Af { n, user, .. } => {
                let p_bs = beta * t;
                (
                    user,
                    n,
                    Entry::Af {
                        p_bs,
                        p_rn: t - p_bs,
                    },
                )
            }
        }
    }
}

/// Candidate levels of one link: powers ascending, AF splits per link.
#[derive(Debug, Clone)]
struct Levels {
    powers: Vec<f64>,
    betas: Vec<f64>,
}

/// `h(t) = max over beta of rate - q * consumption` at every power level.
#[derive(Debug, Clone)]
struct Profile {
    powers: Vec<f64>,
    value: Vec<f64>,
    beta: Vec<f64>,
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

fn lin_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

fn with_point(mut v: Vec<f64>, x: f64) -> Vec<f64> {
    v.push(x);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn profile(link: &Link, levels: &Levels, q: f64, pm: &PowerModel<f64>) -> Profile {
    let mut value = Vec::with_capacity(levels.powers.len());
    let mut beta = Vec::with_capacity(levels.powers.len());
    for &t in &levels.powers {
        let mut best = (f64::NEG_INFINITY, 0.5);
        if link.is_af() {
            for &b in &levels.betas {
                let v = link.rate(t, b) - q * link.consumption(t, b, pm);
                if v > best.0 {
                    best = (v, b);
                }
            }
        } else {
            best = (link.rate(t, 0.0) - q * link.consumption(t, 0.0, pm), 0.0);
        }
        value.push(best.0);
        beta.push(best.1);
    }
    Profile {
        powers: levels.powers.clone(),
        value,
        beta,
    }
}

/// Running argmax of `value` over a prefix of the ascending power list.
fn prefix_argmax(p: &Profile) -> Vec<usize> {
    let mut out = Vec::with_capacity(p.value.len());
    let mut best = 0;
    for i in 0..p.value.len() {
        if p.value[i] > p.value[best] {
            best = i;
        }
        out.push(best);
    }
    out
}

/// Index of the best level of `p` with power at most `room`.
fn best_within(p: &Profile, pre: &[usize], room: f64) -> Option<usize> {
    let cut = p.powers.partition_point(|&t| t <= room);
    (cut > 0).then(|| pre[cut - 1])
}

/// Maximizes the sum of profile values subject to the total power budget.
/// Returns the chosen level index per link.
fn couple(profiles: &[Profile], budget: f64) -> Option<Vec<usize>> {
    match profiles {
        [] => Some(vec![]),
        [a] => {
            let cut = a.powers.partition_point(|&t| t <= budget);
            (cut > 0)
                .then(|| prefix_argmax(a)[cut - 1])
                .map(|i| vec![i])
        }
        [a, b] => {
            let pre = prefix_argmax(b);
            let mut best: Option<(f64, Vec<usize>)> = None;
            for i in 0..a.powers.len() {
                let Some(j) = best_within(b, &pre, budget - a.powers[i]) else {
                    continue;
                };
                let v = a.value[i] + b.value[j];
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, vec![i, j]));
                }
            }
            best.map(|x| x.1)
        }
        [a, b, c] => {
            let pre = prefix_argmax(c);
            let mut best: Option<(f64, Vec<usize>)> = None;
            for i in 0..a.powers.len() {
                for j in 0..b.powers.len() {
                    let Some(l) = best_within(c, &pre, budget - a.powers[i] - b.powers[j]) else {
                        continue;
                    };
                    let v = a.value[i] + b.value[j] + c.value[l];
                    if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                        best = Some((v, vec![i, j, l]));
                    }
                }
            }
            best.map(|x| x.1)
        }
        _ => None,
    }
}

/// A chosen grid point: power and split per link.
type Point = Vec<(f64, f64)>;

fn totals(links: &[Link], point: &Point, pm: &PowerModel<f64>, n_relays: usize) -> (f64, f64) {
    let mut rate = 0.0;
    let mut power = pm.fixed_consumption(n_relays);
    for (l, &(t, b)) in links.iter().zip(point) {
        rate += l.rate(t, b);
        power += l.consumption(t, b, pm);
    }
    (rate, power)
}

/// Best point on fixed levels. `eem` selects ratio maximization by discrete
/// Dinkelbach; otherwise the sum rate is maximized.
fn best_on_levels(
    links: &[Link],
    levels: &[Levels],
    pm: &PowerModel<f64>,
    n_relays: usize,
    eem: bool,
) -> Option<Point> {
    let pick = |q: f64| -> Option<Point> {
        let profiles: Vec<Profile> = links
            .iter()
            .zip(levels)
            .map(|(l, lv)| profile(l, lv, q, pm))
            .collect();
        let idx = couple(&profiles, pm.p_max)?;
        Some(
            profiles
                .iter()
                .zip(idx)
                .map(|(p, i)| (p.powers[i], p.beta[i]))
                .collect(),
        )
    };
    if !eem {
        return pick(0.0);
    }
    let mut point = pick(0.0)?;
    let (r, p) = totals(links, &point, pm, n_relays);
    let mut q = r / p;
    // Finitely many points: the ratio strictly increases until it stalls.
    for _ in 0..200 {
        let next = pick(q)?;
        let (r, p) = totals(links, &next, pm, n_relays);
        if r / p <= q * (1.0 + 1e-15) {
            break;
        }
        q = r / p;
        point = next;
    }
    Some(point)
}

fn refined_levels(
    link: &Link,
    at: (f64, f64),
    round: usize,
    grid: &GridSpec,
    p_max: f64,
) -> Levels {
    let shrink = 10f64.powi(round as i32);
    let half = 0.5 * (1.0 / GRID_FLOOR).ln() / shrink;
    let lo = (at.0.ln() - half).exp().max(p_max * GRID_FLOOR);
    let hi = (at.0.ln() + half).exp().min(p_max);
    let powers = with_point(log_grid(lo, hi, grid.power_points), at.0);
    let betas = if link.is_af() {
        let w = 0.5 / shrink;
        with_point(
            lin_grid((at.1 - w).max(0.0), (at.1 + w).min(1.0), grid.beta_points),
            at.1,
        )
    } else {
        vec![0.0]
    };
    Levels { powers, betas }
}

fn links_of<T: Real>(assignment: &[Slot], chan: &ChannelRealization<T>) -> Result<Vec<Link>> {
    let c = chan.noise_gap.to_f64_lossy();
    let mut links = Vec::new();
    for (n, slot) in assignment.iter().enumerate() {
        let Slot::Used { user, protocol } = *slot else {
            continue;
        };
        if user >= chan.n_users() {
            return Err(Error::invalid(format!(
                "assignment names user {user} of {}",
                chan.n_users()
            )));
        }
        links.push(match protocol {
            Protocol::Direct => Link::Direct {
                n,
                user,
                a: chan.g_bs_ue(user, n).to_f64_lossy() / c,
            },
            Protocol::Af => {
                let (g1, g2) = chan
                    .af_gains(user, n)
                    .ok_or_else(|| Error::invalid("AF slot in a relay-free channel"))?;
                Link::Af {
                    n,
                    user,
                    a1: g1.to_f64_lossy() / c,
                    a2: g2.to_f64_lossy() / c,
                }
            }
        });
    }
    Ok(links)
}

fn optimize(
    assignment: &[Slot],
    links: &[Link],
    n_users: usize,
    pm: &PowerModel<f64>,
    n_relays: usize,
    grid: &GridSpec,
    eem: bool,
) -> Option<GridOptimum> {
    let allocation_of = |point: &Point| {
        let mut a = Allocation::idle(n_users, assignment.len());
        for (l, &(t, b)) in links.iter().zip(point) {
            let (k, n, e) = l.entry(t, b);
            a.set(k, n, e);
        }
        a
    };
    if links.is_empty() {
        let power = pm.fixed_consumption(n_relays);
        return Some(GridOptimum {
            allocation: allocation_of(&vec![]),
            rate: 0.0,
            power,
            ee: 0.0,
        });
    }
    if links.len() > MAX_ACTIVE || !(pm.p_max > 0.0) {
        return None;
    }
    let base: Vec<Levels> = links
        .iter()
        .map(|l| Levels {
            powers: log_grid(pm.p_max * GRID_FLOOR, pm.p_max, grid.power_points),
            betas: if l.is_af() {
                lin_grid(0.0, 1.0, grid.beta_points)
            } else {
                vec![0.0]
            },
        })
        .collect();
    let mut point = best_on_levels(links, &base, pm, n_relays, eem)?;
    for round in 1..=grid.refine_rounds {
        let levels: Vec<Levels> = links
            .iter()
            .zip(&point)
            .map(|(l, &at)| refined_levels(l, at, round, grid, pm.p_max))
            .collect();
        point = best_on_levels(links, &levels, pm, n_relays, eem)?;
    }
    let (rate, power) = totals(links, &point, pm, n_relays);
    Some(GridOptimum {
        allocation: allocation_of(&point),
        rate,
        power,
        ee: rate / power,
    })
}

/// EE-maximizing powers for a fixed assignment. `None` when the assignment
/// powers more than [`MAX_ACTIVE`] subcarriers or the budget is zero.
pub fn optimize_powers_on_grid<T: Real>(
    assignment: &[Slot],
    chan: &ChannelRealization<T>,
    pm: &PowerModel<f64>,
    grid: &GridSpec,
) -> Result<Option<GridOptimum>> {
    grid.validate()?;
    let links = links_of(assignment, chan)?;
    Ok(optimize(
        assignment,
        &links,
        chan.n_users(),
        pm,
        chan.n_relays(),
        grid,
        true,
    ))
}

/// Sum-rate-maximizing powers for a fixed assignment.
pub fn optimize_rate_on_grid<T: Real>(
    assignment: &[Slot],
    chan: &ChannelRealization<T>,
    pm: &PowerModel<f64>,
    grid: &GridSpec,
) -> Result<Option<GridOptimum>> {
    grid.validate()?;
    let links = links_of(assignment, chan)?;
    Ok(optimize(
        assignment,
        &links,
        chan.n_users(),
        pm,
        chan.n_relays(),
        grid,
        false,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub eem: GridOptimum,
    pub eem_assignment: Assignment,
    pub sem: GridOptimum,
    pub sem_assignment: Assignment,
    pub assignments_evaluated: usize,
}

/// Exhaustive EE (and SE) optimum over all assignments.
pub fn brute_force_eem<T: Real>(
    chan: &ChannelRealization<T>,
    pm: &PowerModel<f64>,
    grid: &GridSpec,
) -> Result<OracleResult> {
    grid.validate()?;
    pm.validate()?;
    let all = enumerate_assignments(chan.n_users(), chan.n_subcarriers(), chan.n_relays())?;
    let per: Vec<Option<(GridOptimum, GridOptimum)>> = (0..all.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let a = all.nth_assignment(i);
            let links = links_of(&a, chan)?;
            let (k, m) = (chan.n_users(), chan.n_relays());
            let ee = optimize(&a, &links, k, pm, m, grid, true);
            let se = optimize(&a, &links, k, pm, m, grid, false);
            Ok(ee.zip(se))
        })
        .collect::<Result<_>>()?;

    // In index order, strict improvement only: ties go to the smallest assignment.
    let mut best_ee: Option<(usize, &GridOptimum)> = None;
    let mut best_se: Option<(usize, &GridOptimum)> = None;
    for (i, r) in per.iter().enumerate() {
        let Some((ee, se)) = r else { continue };
        if best_ee.is_none_or(|(_, b)| ee.ee > b.ee) {
            best_ee = Some((i, ee));
        }
        if best_se.is_none_or(|(_, b)| se.rate > b.rate) {
            best_se = Some((i, se));
        }
    }
    let (ie, eem) = best_ee.expect("the all-idle assignment is always evaluated");
    let (is, sem) = best_se.expect("the all-idle assignment is always evaluated");
    for opt in [eem, sem] {
        let radio = RadioConfig::new(chan.n_users(), chan.n_subcarriers(), chan.n_relays());
        let v = check_feasibility(&opt.allocation, &radio, pm);
        if !v.is_empty() {
            return Err(Error::Infeasible(v));
        }
    }
    Ok(OracleResult {
        eem: eem.clone(),
        eem_assignment: all.nth_assignment(ie),
        sem: sem.clone(),
        sem_assignment: all.nth_assignment(is),
        assignments_evaluated: all.len(),
    })
}

/// The assignment an allocation realizes.
pub fn assignment_of<T: Real>(alloc: &Allocation<T>) -> Assignment {
    (0..alloc.n_subcarriers())
        .map(|n| match alloc.occupant(n) {
            Some((user, e)) if e.tx_power() > T::zero() => Slot::Used {
                user,
                protocol: e.protocol().expect("occupied entries carry a protocol"),
            },
            _ => Slot::Idle,
        })
        .collect()
}

/// Solver-versus-oracle comparison for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub solver_ee: f64,
    pub oracle_ee: f64,
    /// `(solver_ee - oracle_ee) / oracle_ee`; negative when the solver falls short.
    pub relative_gap: f64,
    pub assignment_match: bool,
    pub solver_converged: bool,
}

pub fn compare<T: Real>(solution: &Solution<T>, oracle: &OracleResult, seed: u64) -> OracleReport {
    let solver_ee = solution.metrics.ee.to_f64_lossy();
    let oracle_ee = oracle.eem.ee;
    let relative_gap = if oracle_ee > 0.0 {
        (solver_ee - oracle_ee) / oracle_ee
    } else {
        0.0
    };
    OracleReport {
        seed,
        solver_ee,
        oracle_ee,
        relative_gap,
        assignment_match: assignment_of(&solution.allocation) == oracle.eem_assignment,
        solver_converged: solution.converged(),
    }
}

/// Metrics of an oracle allocation under the model's own evaluation.
pub fn oracle_metrics(
    opt: &GridOptimum,
    chan: &ChannelRealization<f64>,
    radio: &RadioConfig<f64>,
    pm: &PowerModel<f64>,
) -> Result<Metrics<f64>> {
    Metrics::evaluate(&opt.allocation, chan, radio, pm, SnrModel::Approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::realize;
    use crate::config::SystemConfig;
    use crate::solver::solve_eem;

    fn small(k: usize, n: usize, m: usize, seed: u64) -> (ChannelRealization<f64>, SystemConfig) {
        let mut cfg = SystemConfig::default();
        cfg.radio.n_users = k;
        cfg.radio.n_subcarriers = n;
        cfg.radio.n_relays = m;
        let (_, chan) = realize::<f64>(&cfg, seed).unwrap();
        (chan, cfg)
    }

    /// Golden-section maximization of a unimodal function on `[lo, hi]`.
    fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) < f(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn assignment_counts() {
        assert_eq!(enumerate_assignments(1, 1, 0).unwrap().count(), 2);
        assert_eq!(enumerate_assignments(2, 1, 1).unwrap().count(), 5);
        assert_eq!(enumerate_assignments(2, 2, 1).unwrap().count(), 25);
        assert!(matches!(
            enumerate_assignments(8, 8, 1),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn enumeration_is_exhaustive_and_distinct() {
        let all: Vec<_> = enumerate_assignments(2, 2, 1).unwrap().collect();
        let set: std::collections::HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 25);
        assert_eq!(all[0], vec![Slot::Idle, Slot::Idle]);
        assert!(all.iter().flatten().any(|s| matches!(
            s,
            Slot::Used {
                user: 1,
                protocol: Protocol::Af
            }
        )));
        let direct_only: Vec<_> = enumerate_assignments(2, 2, 0).unwrap().collect();
        assert_eq!(direct_only.len(), 9);
        assert!(direct_only.iter().flatten().all(|s| !matches!(
            s,
            Slot::Used {
                protocol: Protocol::Af,
                ..
            }
        )));
    }

    #[test]
    fn empty_assignment_has_zero_ee() {
        let (chan, cfg) = small(2, 2, 1, 0);
        let pm = cfg.power_model::<f64>();
        let o =
            optimize_powers_on_grid(&[Slot::Idle, Slot::Idle], &chan, &pm, &GridSpec::default())
                .unwrap()
                .unwrap();
        assert_eq!(o.ee, 0.0);
        assert_eq!(o.rate, 0.0);
        assert_eq!(o.power, pm.fixed_consumption(1));
    }

    #[test]
    fn single_direct_link_matches_golden_section() {
        for seed in 0..5 {
            let (chan, mut cfg) = small(1, 1, 0, seed);
            cfg.power.p_max_dbm = 40.0;
            let pm = cfg.power_model::<f64>();
            let a = chan.g_bs_ue(0, 0) / chan.noise_gap;
            let ee = |p: f64| (1.0 + a * p).log2() / (pm.p_c_bs + pm.xi_bs * p);
            let reference = golden(ee, 0.0, pm.p_max);
            let r = brute_force_eem(&chan, &pm, &GridSpec::default()).unwrap();
            assert!(
                (r.eem.ee - reference).abs() <= 0.01 * reference,
                "seed {seed}"
            );
            assert!(r.eem.ee <= reference * (1.0 + 1e-12));
        }
    }

    #[test]
    fn symmetric_af_split_is_half() {
        let chan = ChannelRealization::from_parts(
            1,
            1,
            vec![1e-16],
            vec![1e-12],
            vec![1e-12],
            Some(vec![0]),
            4.7776e-17,
            0,
        )
        .unwrap();
        let pm = PowerModel::reference(1.0);
        let grid = GridSpec {
            refine_rounds: 0,
            ..GridSpec::default()
        };
        let slot = Slot::Used {
            user: 0,
            protocol: Protocol::Af,
        };
        let o = optimize_powers_on_grid(&[slot], &chan, &pm, &grid)
            .unwrap()
            .unwrap();
        let Entry::Af { p_bs, p_rn } = o.allocation.get(0, 0) else {
            panic!("expected an AF entry");
        };
        // equal relay cost would give exactly 0.5; cheaper BS power tilts it slightly
        let beta = p_bs / (p_bs + p_rn);
        assert!((beta - 0.5).abs() <= 0.25, "beta {beta}");
        let pm_sym = PowerModel::new(60.0, 20.0, 3.0, 3.0, 1.0).unwrap();
        let o = optimize_powers_on_grid(&[slot], &chan, &pm_sym, &grid)
            .unwrap()
            .unwrap();
        let Entry::Af { p_bs, p_rn } = o.allocation.get(0, 0) else {
            panic!("expected an AF entry");
        };
        assert!((p_bs / (p_bs + p_rn) - 0.5).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn vanishing_budget_gives_vanishing_ee() {
        let (chan, cfg) = small(2, 2, 1, 4);
        let mut pm = cfg.power_model::<f64>();
        pm.p_max = 1e-21;
        let r = brute_force_eem(&chan, &pm, &GridSpec::default()).unwrap();
        let sol = solve_eem(&chan, &cfg.radio_config(), &pm, &cfg.solver).unwrap();
        for (ee, tx) in [
            (r.eem.ee, r.eem.allocation.tx_power()),
            (sol.metrics.ee, sol.metrics.tx_power_used),
        ] {
            assert!(ee < 1e-6, "ee {ee}");
            assert!(tx <= pm.p_max * (1.0 + 1e-9));
        }
    }

    #[test]
    fn finer_grid_never_worse() {
        let coarse = GridSpec {
            power_points: 100,
            beta_points: 21,
            refine_rounds: 0,
        };
        // 198 intervals contain every node of the 99-interval grid
        let fine = GridSpec {
            power_points: 199,
            beta_points: 41,
            refine_rounds: 0,
        };
        for seed in 0..4 {
            let (chan, cfg) = small(2, 2, 1, seed);
            let pm = cfg.power_model::<f64>();
            let a = brute_force_eem(&chan, &pm, &coarse).unwrap();
            let b = brute_force_eem(&chan, &pm, &fine).unwrap();
            assert!(b.eem.ee >= a.eem.ee * (1.0 - 1e-12), "seed {seed}");
            assert!(b.sem.rate >= a.sem.rate * (1.0 - 1e-12), "seed {seed}");
        }
    }

    #[test]
    fn oracle_allocations_feasible_and_sem_uses_budget() {
        let (chan, cfg) = small(2, 2, 1, 9);
        let pm = cfg.power_model::<f64>();
        let radio = cfg.radio_config::<f64>();
        let r = brute_force_eem(&chan, &pm, &GridSpec::default()).unwrap();
        assert!(check_feasibility(&r.eem.allocation, &radio, &pm).is_empty());
        assert!(check_feasibility(&r.sem.allocation, &radio, &pm).is_empty());
        let m = oracle_metrics(&r.eem, &chan, &radio, &pm).unwrap();
        assert!((m.ee - r.eem.ee).abs() <= 1e-12 * r.eem.ee);
        assert!(r.sem.rate >= r.eem.rate * (1.0 - 1e-12));
    }

    #[test]
    fn solver_is_not_beaten() {
        for seed in 0..5 {
            let (chan, cfg) = small(2, 2, 1, seed);
            let pm = cfg.power_model::<f64>();
            let sol = solve_eem(&chan, &cfg.radio_config(), &pm, &cfg.solver).unwrap();
            let r = brute_force_eem(&chan, &pm, &GridSpec::default()).unwrap();
            let rep = compare(&sol, &r, seed);
            assert!(rep.relative_gap >= -0.01, "{rep:?}");
        }
    }
}
