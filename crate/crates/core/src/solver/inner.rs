//! Inner loop: maximize `R_T - q P_T` under the transmit budget by dual
//! decomposition over subcarriers and a search on the budget multiplier.

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::model::{system_power, system_rate, Allocation, PowerModel, Protocol, RadioConfig};
use crate::scalar::Real;

use super::candidate::{af_candidate, assign_subcarriers, direct_candidate, Candidate, TieBreaker};
use super::{LambdaMode, SolverParams, Termination};

/// Relative accuracy on the budget at which the multiplier search stops,
/// floored at a few ulps of the scalar type.
pub const BUDGET_MATCH: f64 = 1e-12;

/// Projected gradient step on the budget multiplier.
pub fn update_lambda_subgradient<T: Real>(lambda: T, step: T, p_max: T, p_used: T) -> T {
    (lambda - step * (p_max - p_used)).max(T::zero())
}

/// Allocation produced by one pass over all subcarriers at fixed `(q, lambda)`.
#[derive(Debug, Clone)]
pub struct Sweep<T> {
    pub lambda: T,
    pub allocation: Allocation<T>,
    pub winners: Vec<Option<Candidate<T>>>,
    pub p_used: T,
}

/// All candidates competing for subcarrier `n`, ordered (user, direct then AF).
pub fn subcarrier_candidates<T: Real>(
    q: T,
    lambda: T,
    n: usize,
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
) -> Result<Vec<Candidate<T>>> {
    let mut out = Vec::with_capacity(2 * chan.n_users());
    for k in 0..chan.n_users() {
        out.push(
            direct_candidate(q, lambda, chan.g_bs_ue(k, n), chan.noise_gap, pm.xi_bs)?.with_user(k),
        );
        if let Some((g1, g2)) = chan.af_gains(k, n) {
            out.push(
                af_candidate(q, lambda, g1, g2, chan.noise_gap, pm.xi_bs, pm.xi_rn)?.with_user(k),
            );
        }
    }
    Ok(out)
}

/// Solves the per-subcarrier subproblems for one multiplier value.
pub fn sweep<T: Real>(
    q: T,
    lambda: T,
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
    tie: &mut TieBreaker,
) -> Result<Sweep<T>> {
    let mut allocation = Allocation::idle(chan.n_users(), chan.n_subcarriers());
    let mut winners = Vec::with_capacity(chan.n_subcarriers());
    let mut p_used = T::zero();
    for n in 0..chan.n_subcarriers() {
        let cands = subcarrier_candidates(q, lambda, n, chan, pm)?;
        let win = assign_subcarriers(&cands, tie).map(|i| cands[i]);
        if let Some(c) = &win {
            // zero-power winners leave the subcarrier idle
            if c.total_power() > T::zero() {
                allocation.set(c.user, n, c.entry);
                p_used = p_used + c.total_power();
            }
        }
        winners.push(win);
    }
    Ok(Sweep {
        lambda,
        allocation,
        winners,
        p_used,
    })
}

/// Per-subcarrier `(user, protocol)` choice.
pub type Picks = Vec<Option<(usize, Protocol)>>;

fn picks_of<T: Real>(s: &Sweep<T>) -> Picks {
    s.winners
        .iter()
        .map(|w| {
            w.filter(|c| c.total_power() > T::zero())
                .map(|c| (c.user, c.protocol))
        })
        .collect()
}

/// Like [`sweep`], but each subcarrier only evaluates its picked candidate.
pub fn fixed_sweep<T: Real>(
    q: T,
    lambda: T,
    picks: &[Option<(usize, Protocol)>],
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
) -> Result<Sweep<T>> {
    let mut allocation = Allocation::idle(chan.n_users(), chan.n_subcarriers());
    let mut winners = Vec::with_capacity(picks.len());
    let mut p_used = T::zero();
    for (n, pick) in picks.iter().enumerate() {
        let c = match *pick {
            None => None,
            Some((k, Protocol::Direct)) => Some(
                direct_candidate(q, lambda, chan.g_bs_ue(k, n), chan.noise_gap, pm.xi_bs)?
                    .with_user(k),
            ),
            Some((k, Protocol::Af)) => {
                let (g1, g2) = chan
                    .af_gains(k, n)
                    .ok_or_else(|| Error::invalid("AF pick in a relay-free channel"))?;
                Some(
                    af_candidate(q, lambda, g1, g2, chan.noise_gap, pm.xi_bs, pm.xi_rn)?
                        .with_user(k),
                )
            }
        };
        if let Some(c) = &c {
            if c.total_power() > T::zero() {
                allocation.set(c.user, n, c.entry);
                p_used = p_used + c.total_power();
            }
        }
        winners.push(c);
    }
    Ok(Sweep {
        lambda,
        allocation,
        winners,
        p_used,
    })
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerSolution<T> {
    pub q: T,
    /// Multiplier the returned powers are water-filled at.
    pub lambda: T,
    /// Multiplier whose full sweep chose the assignment. Differs from
    /// `lambda` only after primal recovery.
    pub dual_lambda: T,
    pub allocation: Allocation<T>,
    pub winners: Vec<Option<Candidate<T>>>,
    pub p_used: T,
    pub iterations: usize,
    pub termination: Termination,
    /// `R_T - q P_T` of the returned allocation.
    pub objective: T,
}

fn finish<T: Real>(
    q: T,
    s: Sweep<T>,
    iterations: usize,
    termination: Termination,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
) -> Result<InnerSolution<T>> {
    let objective = system_rate(&s.allocation, chan, radio)?
        - q * system_power(&s.allocation, pm, radio.n_relays);
    Ok(InnerSolution {
        q,
        lambda: s.lambda,
        dual_lambda: s.lambda,
        allocation: s.allocation,
        winners: s.winners,
        p_used: s.p_used,
        iterations,
        termination,
        objective,
    })
}

fn check_inputs<T: Real>(
    q: T,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
) -> Result<()> {
    if !(q >= T::zero()) || !q.is_finite() {
        return Err(Error::invalid(format!(
            "q must be finite and >= 0, got {q}"
        )));
    }
    radio.validate()?;
    pm.validate()?;
    if radio.weights.iter().any(|w| *w != T::one()) {
        return Err(Error::invalid("the solver supports unit user weights only"));
    }
    if chan.n_users() != radio.n_users || chan.n_subcarriers() != radio.n_subcarriers {
        return Err(Error::invalid(
            "channel dimensions do not match the radio config",
        ));
    }
    if chan.n_relays() != radio.n_relays {
        return Err(Error::invalid(
            "channel relay count does not match the radio config",
        ));
    }
    Ok(())
}

/// Maximizes `R_T - q P_T` subject to the budget, one-user-per-subcarrier and
/// non-negative powers. The returned allocation is integral and feasible.
pub fn solve_inner<T: Real>(
    q: T,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
) -> Result<InnerSolution<T>> {
    check_inputs(q, chan, radio, pm)?;
    let mut tie = TieBreaker::new(params.tie_break, params.tie_seed ^ chan.seed);
    match params.lambda_mode {
        LambdaMode::Bisection => bisection(q, chan, radio, pm, params, &mut tie),
        LambdaMode::Subgradient => subgradient(q, chan, radio, pm, params, &mut tie),
    }
}

fn bisection<T: Real>(
    q: T,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
    tie: &mut TieBreaker,
) -> Result<InnerSolution<T>> {
    let p_max = pm.p_max;
    let limit = params.i_inner_max;
    let ulps = T::lit(8.0) * T::epsilon();
    let tol = T::lit(BUDGET_MATCH).max(ulps);
    let matched = |p: T| (p - p_max).abs() <= tol * p_max;
    let mut iters = 0;

    // With a positive price the unconstrained optimum may already fit.
    if q > T::zero() {
        let s = sweep(q, T::zero(), chan, pm, tie)?;
        iters += 1;
        if s.p_used <= p_max {
            return finish(q, s, iters, Termination::Converged, chan, radio, pm);
        }
    }

    // Bracket: `lo` overshoots the budget, `hi` fits.
    let mut lambda = T::lit(params.lambda_init);
    let mut s = sweep(q, lambda, chan, pm, tie)?;
    iters += 1;
    let (mut lo, mut hi): (Option<Sweep<T>>, Sweep<T>) = if s.p_used > p_max {
        loop {
            if iters >= limit {
                return fallback(q, s, iters, chan, radio, pm);
            }
            lambda = lambda * T::lit(2.0);
            let t = sweep(q, lambda, chan, pm, tie)?;
            iters += 1;
            if t.p_used <= p_max {
                break (Some(s), t);
            }
            s = t;
        }
    } else {
        let mut hi = s;
        let floor = T::min_positive_value();
        loop {
            if matched(hi.p_used) {
                return finish(q, hi, iters, Termination::Converged, chan, radio, pm);
            }
            if iters >= limit {
                return finish(q, hi, iters, Termination::InnerLimit, chan, radio, pm);
            }
            let next = lambda * T::lit(0.5);
            if next < floor {
                // only reachable for q > 0, where lambda = 0 was already tried
                break (None, hi);
            }
            lambda = next;
            let t = sweep(q, lambda, chan, pm, tie)?;
            iters += 1;
            if t.p_used > p_max {
                break (Some(t), hi);
            }
            hi = t;
        }
    };

    loop {
        if matched(hi.p_used) {
            return finish(q, hi, iters, Termination::Converged, chan, radio, pm);
        }
        let lo_lambda = lo.as_ref().map_or(T::zero(), |s| s.lambda);
        if hi.lambda - lo_lambda <= ulps * hi.lambda {
            // Total power jumps across the budget here: a winner switch at the
            // dual optimum. Keep the feasible side, or refill it.
            let base = finish(
                q,
                hi.clone(),
                iters,
                Termination::Converged,
                chan,
                radio,
                pm,
            )?;
            if !params.primal_recovery {
                return Ok(base);
            }
            return recover(q, base, &hi, lo.as_ref(), chan, radio, pm);
        }
        if iters >= limit {
            return finish(q, hi, iters, Termination::InnerLimit, chan, radio, pm);
        }
        let mid = if lo_lambda > T::zero() {
            (lo_lambda * hi.lambda).sqrt()
        } else {
            T::lit(0.5) * hi.lambda
        };
        let t = sweep(q, mid, chan, pm, tie)?;
        iters += 1;
        if t.p_used > p_max {
            lo = Some(t);
        } else {
            hi = t;
        }
    }
}

/// Cap on the fixed-assignment searches of primal recovery.
const RECOVERY_SWEEPS: usize = 200;

/// Water-fills a fixed assignment onto the budget, starting from `start`.
/// Returns the fitted sweep and the number of sweeps spent.
fn fill_fixed<T: Real>(
    q: T,
    start: T,
    picks: &[Option<(usize, Protocol)>],
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
) -> Result<(Option<Sweep<T>>, usize)> {
    let p_max = pm.p_max;
    let ulps = T::lit(8.0) * T::epsilon();
    let tol = T::lit(BUDGET_MATCH).max(ulps);
    let mut n = 0;
    let eval = |l: T, n: &mut usize| {
        *n += 1;
        fixed_sweep(q, l, picks, chan, pm)
    };
    let first = eval(start, &mut n)?;
    let (mut lo, mut hi) = if first.p_used > p_max {
        let mut lo = start;
        let mut l = start;
        loop {
            l = l * T::lit(2.0);
            let t = eval(l, &mut n)?;
            if t.p_used <= p_max {
                break (lo, t);
            }
            lo = l;
            if !l.is_finite() {
                return Ok((None, n));
            }
        }
    } else {
        if q > T::zero() {
            let t = eval(T::zero(), &mut n)?;
            if t.p_used <= p_max {
                return Ok((Some(t), n));
            }
        }
        let mut hi = first;
        let mut l = start;
        loop {
            if (hi.p_used - p_max).abs() <= tol * p_max {
                return Ok((Some(hi), n));
            }
            l = l * T::lit(0.5);
            if l < T::min_positive_value() {
                return Ok((Some(hi), n));
            }
            let t = eval(l, &mut n)?;
            if t.p_used > p_max {
                break (l, hi);
            }
            hi = t;
        }
    };
    while n < RECOVERY_SWEEPS {
        if (hi.p_used - p_max).abs() <= tol * p_max || hi.lambda - lo <= ulps * hi.lambda {
            break;
        }
        let mid = (lo * hi.lambda).sqrt();
        let t = eval(mid, &mut n)?;
        if t.p_used > p_max {
            lo = mid;
        } else {
            hi = t;
        }
    }
    Ok((Some(hi), n))
}

/// At a jump of total power across the budget, the two sides' assignments
/// are each refilled onto the budget with their winners held fixed; the best
/// of these and the unfilled feasible side is returned.
fn recover<T: Real>(
    q: T,
    base: InnerSolution<T>,
    hi: &Sweep<T>,
    lo: Option<&Sweep<T>>,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
) -> Result<InnerSolution<T>> {
    let mut best = base;
    let mut spent = 0;
    for side in std::iter::once(hi).chain(lo) {
        let (filled, n) = fill_fixed(q, side.lambda, &picks_of(side), chan, pm)?;
        spent += n;
        let Some(f) = filled else { continue };
        let value = system_rate(&f.allocation, chan, radio)?
            - q * system_power(&f.allocation, pm, radio.n_relays);
        if value > best.objective {
            best = InnerSolution {
                q,
                lambda: f.lambda,
                dual_lambda: side.lambda,
                p_used: f.p_used,
                allocation: f.allocation,
                winners: f.winners,
                iterations: best.iterations,
                termination: best.termination,
                objective: value,
            };
        }
    }
    best.iterations += spent;
    Ok(best)
}

/// Scales an over-budget sweep onto the budget so a feasible point is
/// always returned.
fn fallback<T: Real>(
    q: T,
    mut s: Sweep<T>,
    iters: usize,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
) -> Result<InnerSolution<T>> {
    if s.p_used > pm.p_max {
        let c = pm.p_max / s.p_used;
        s.allocation = s.allocation.scaled(c);
        s.p_used = s.allocation.tx_power();
    }
    finish(q, s, iters, Termination::InnerLimit, chan, radio, pm)
}

fn subgradient<T: Real>(
    q: T,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
    tie: &mut TieBreaker,
) -> Result<InnerSolution<T>> {
    let p_max = pm.p_max;
    let step = T::lit(params.step_for(p_max.to_f64_lossy()));
    let eps = T::lit(params.eps_inner);
    // q = 0 needs a strictly positive multiplier
    let floor = if q > T::zero() {
        T::zero()
    } else {
        T::lit(params.lambda_init * 1e-12)
    };
    let mut lambda = T::lit(params.lambda_init);
    let mut best: Option<(T, Sweep<T>)> = None;
    let mut last = None;
    let mut converged = false;
    let mut iters = 0;
    while iters < params.i_inner_max {
        let s = sweep(q, lambda, chan, pm, tie)?;
        iters += 1;
        if s.p_used <= p_max {
            let value = system_rate(&s.allocation, chan, radio)?
                - q * system_power(&s.allocation, pm, radio.n_relays);
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, s.clone()));
            }
        }
        let next = update_lambda_subgradient(lambda, step, p_max, s.p_used).max(floor);
        let delta = (next - lambda).abs();
        last = Some(s);
        lambda = next;
        if delta <= eps {
            converged = true;
            break;
        }
    }
    let last = last.expect("at least one inner iteration");
    let termination = if converged {
        Termination::Converged
    } else {
        Termination::InnerLimit
    };
    let chosen = if converged && last.p_used <= p_max {
        last
    } else if let Some((_, s)) = best {
        s
    } else {
        let mut r = fallback(q, last, iters, chan, radio, pm)?;
        r.termination = termination;
        return Ok(r);
    };
    finish(q, chosen, iters, termination, chan, radio, pm)
}
