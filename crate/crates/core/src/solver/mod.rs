//! Energy-efficiency maximization by Dinkelbach's method.
//!
//! The outer loop prices power at `q` (the current efficiency) and asks the
//! inner loop for the allocation maximizing `R_T - q P_T`; `q` is then reset
//! to the efficiency of that allocation. The sequence of `q` values is
//! non-decreasing and stops at the root of `F(q) = max R_T - q P_T`.
//!
//! Spectral-efficiency maximization is the first outer iteration (`q = 0`).

mod candidate;
mod inner;

pub use candidate::{
    af_beta, af_candidate, assign_subcarriers, direct_candidate, stationarity_residual, Candidate,
    TieBreak, TieBreaker,
};
pub use inner::{
    fixed_sweep, solve_inner, subcarrier_candidates, sweep, update_lambda_subgradient,
    InnerSolution, Sweep, BUDGET_MATCH,
};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::model::{Allocation, Entry, Metrics, PowerModel, Protocol, RadioConfig, SnrModel};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// Search the multiplier on the monotone map from multiplier to total power.
    #[default]
    Bisection,
    /// Constant-step projected subgradient.
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub i_outer_max: usize,
    pub i_inner_max: usize,
    pub eps_outer: f64,
    pub eps_inner: f64,
    pub lambda_mode: LambdaMode,
    /// Subgradient step; `0.05 / p_max` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_step: Option<f64>,
    pub lambda_init: f64,
    pub tie_break: TieBreak,
    pub tie_seed: u64,
    /// Refill the budget with the assignment held fixed when total power
    /// jumps across it at the dual optimum.
    pub primal_recovery: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            i_outer_max: 10,
            i_inner_max: 100,
            eps_outer: 1e-8,
            eps_inner: 1e-8,
            lambda_mode: LambdaMode::Bisection,
            lambda_step: None,
            lambda_init: 1.0,
            tie_break: TieBreak::LowestIndex,
            tie_seed: 0,
            primal_recovery: true,
        }
    }
}

impl SolverParams {
    pub fn step_for(&self, p_max: f64) -> f64 {
        self.lambda_step.unwrap_or(0.05 / p_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    OuterLimit,
    InnerLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Eem,
    Sem,
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord<T> {
    pub iteration: usize,
    /// Power price handed to the inner solve.
    pub q: T,
    /// Efficiency of the allocation the inner solve returned.
    pub q_next: T,
    pub inner_iters: usize,
    pub cumulative_inner_iters: usize,
    pub lambda: T,
    /// `R_T - q P_T` of that allocation.
    pub f_residual: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace<T> {
    /// Accepted efficiency values, starting from `q_0 = 0`.
    pub q_sequence: Vec<T>,
    pub inner_iterations_per_outer: Vec<usize>,
    pub lambda_final: Vec<T>,
    pub outer: Vec<OuterRecord<T>>,
    pub termination: Termination,
    /// `F` at the final price, evaluated on the last inner solution.
    pub f_residual: T,
}

impl<T: Real> SolverTrace<T> {
    pub fn outer_iterations(&self) -> usize {
        self.outer.len()
    }

    pub fn inner_iterations_total(&self) -> usize {
        self.inner_iterations_per_outer.iter().sum()
    }
}

/// Allocation with its metrics and the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution<T> {
    pub algorithm: Algorithm,
    pub allocation: Allocation<T>,
    pub metrics: Metrics<T>,
    pub trace: SolverTrace<T>,
    /// Power price of the inner solve that produced `allocation`.
    pub price: T,
    /// Budget multiplier the powers are water-filled at.
    pub lambda: T,
    /// Multiplier at which the assignment wins every subcarrier; equal to
    /// `lambda` unless primal recovery refilled the budget.
    pub dual_lambda: T,
    /// Per-subcarrier winning candidate at `(price, lambda)`.
    pub winners: Vec<Option<Candidate<T>>>,
}

impl<T: Real> Solution<T> {
    pub fn converged(&self) -> bool {
        self.trace.termination == Termination::Converged
    }

    /// Metrics re-evaluated under another AF SNR model.
    pub fn metrics_with(
        &self,
        chan: &ChannelRealization<T>,
        radio: &RadioConfig<T>,
        pm: &PowerModel<T>,
        snr: SnrModel,
    ) -> Result<Metrics<T>> {
        Metrics::evaluate(&self.allocation, chan, radio, pm, snr)
    }
}

fn record<T: Real>(
    iteration: usize,
    inner: &InnerSolution<T>,
    q_next: T,
    cumulative: usize,
) -> OuterRecord<T> {
    OuterRecord {
        iteration,
        q: inner.q,
        q_next,
        inner_iters: inner.iterations,
        cumulative_inner_iters: cumulative,
        lambda: inner.lambda,
        f_residual: inner.objective,
    }
}

/// EE-maximizing allocation.
pub fn solve_eem<T: Real>(
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
) -> Result<Solution<T>> {
    let eps = T::lit(params.eps_outer);
    let mut q = T::zero();
    let mut q_sequence = vec![q];
    let mut per_outer = Vec::new();
    let mut lambdas = Vec::new();
    let mut outer = Vec::new();
    let mut inner_limited = false;
    let mut cumulative = 0;
    let mut best: Option<(InnerSolution<T>, Metrics<T>)> = None;
    let mut f_residual = T::zero();
    let mut termination = Termination::OuterLimit;

    for i in 1..=params.i_outer_max {
        let inner = solve_inner(q, chan, radio, pm, params)?;
        let metrics = Metrics::evaluate(&inner.allocation, chan, radio, pm, SnrModel::Approx)?;
        let q_next = metrics.ee;
        cumulative += inner.iterations;
        per_outer.push(inner.iterations);
        lambdas.push(inner.lambda);
        inner_limited |= inner.termination == Termination::InnerLimit;
        outer.push(record(i, &inner, q_next, cumulative));
        f_residual = inner.objective;

        if best.is_some() && q_next < q {
            // The integral inner solution fell short of the incumbent; keep it.
            termination = Termination::Converged;
            break;
        }
        q_sequence.push(q_next);
        let gain = q_next - q;
        best = Some((inner, metrics));
        if gain <= eps {
            termination = Termination::Converged;
            break;
        }
        q = q_next;
    }

    if inner_limited {
        termination = Termination::InnerLimit;
    }
    let (inner, metrics) = best.expect("the first outer iteration is always accepted");
    Ok(Solution {
        algorithm: Algorithm::Eem,
        allocation: inner.allocation,
        metrics,
        trace: SolverTrace {
            q_sequence,
            inner_iterations_per_outer: per_outer,
            lambda_final: lambdas,
            outer,
            termination,
            f_residual,
        },
        price: inner.q,
        lambda: inner.lambda,
        dual_lambda: inner.dual_lambda,
        winners: inner.winners,
    })
}

/// SE-maximizing allocation: the inner solve at zero power price.
pub fn solve_sem<T: Real>(
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
) -> Result<Solution<T>> {
    let inner = solve_inner(T::zero(), chan, radio, pm, params)?;
    let metrics = Metrics::evaluate(&inner.allocation, chan, radio, pm, SnrModel::Approx)?;
    let termination = match inner.termination {
        Termination::InnerLimit => Termination::InnerLimit,
        _ => Termination::Converged,
    };
    Ok(Solution {
        algorithm: Algorithm::Sem,
        trace: SolverTrace {
            q_sequence: vec![T::zero(), metrics.ee],
            inner_iterations_per_outer: vec![inner.iterations],
            lambda_final: vec![inner.lambda],
            outer: vec![record(1, &inner, metrics.ee, inner.iterations)],
            termination,
            f_residual: inner.objective,
        },
        allocation: inner.allocation,
        metrics,
        price: T::zero(),
        lambda: inner.lambda,
        dual_lambda: inner.dual_lambda,
        winners: inner.winners,
    })
}

pub fn solve<T: Real>(
    algorithm: Algorithm,
    chan: &ChannelRealization<T>,
    radio: &RadioConfig<T>,
    pm: &PowerModel<T>,
    params: &SolverParams,
) -> Result<Solution<T>> {
    match algorithm {
        Algorithm::Eem => solve_eem(chan, radio, pm, params),
        Algorithm::Sem => solve_sem(chan, radio, pm, params),
    }
}

/// Relative stationarity residuals of every powered subcarrier of the
/// returned allocation at the solution's `(price, lambda)`. AF entries
/// report the larger of the power and split residuals.
pub fn kkt_residuals<T: Real>(
    sol: &Solution<T>,
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
) -> Result<Vec<T>> {
    let (q, lambda, c) = (sol.price, sol.lambda, chan.noise_gap);
    let mut out = Vec::new();
    for (k, n, e) in sol.allocation.active() {
        let p = e.tx_power();
        if !(p > T::zero()) {
            continue;
        }
        let r = match e {
            Entry::Direct { .. } => {
                let cand = Candidate {
                    user: k,
                    protocol: Protocol::Direct,
                    entry: e,
                    marginal: T::zero(),
                    effective_gain: chan.g_bs_ue(k, n) / c,
                    beta: None,
                };
                stationarity_residual(&cand, q, lambda, pm.xi_bs, pm.xi_rn)
            }
            Entry::Af { p_bs, .. } => {
                let (g1, g2) = chan
                    .af_gains(k, n)
                    .ok_or_else(|| crate::Error::invalid("AF entry in a relay-free channel"))?;
                let beta = p_bs / p;
                let nb = T::one() - beta;
                let cand = Candidate {
                    user: k,
                    protocol: Protocol::Af,
                    entry: e,
                    marginal: T::zero(),
                    effective_gain: beta * nb * g1 * g2 / ((beta * g1 + nb * g2) * c),
                    beta: Some(beta),
                };
                let split = (beta - af_beta(q, lambda, g1, g2, pm.xi_bs, pm.xi_rn)?).abs() / beta;
                stationarity_residual(&cand, q, lambda, pm.xi_bs, pm.xi_rn).max(split)
            }
            Entry::Idle => continue,
        };
        out.push(r);
    }
    Ok(out)
}

/// Subcarriers whose allocated `(user, protocol)` does not have the largest
/// marginal among all candidates at the solution's `(price, dual_lambda)`.
pub fn dominance_violations<T: Real>(
    sol: &Solution<T>,
    chan: &ChannelRealization<T>,
    pm: &PowerModel<T>,
) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    for n in 0..chan.n_subcarriers() {
        let cands = subcarrier_candidates(sol.price, sol.dual_lambda, n, chan, pm)?;
        let Some((k, e)) = sol.allocation.occupant(n) else {
            continue;
        };
        let own = cands
            .iter()
            .find(|c| c.user == k && Some(c.protocol) == e.protocol())
            .map(|c| c.marginal);
        let top = cands
            .iter()
            .map(|c| c.marginal)
            .fold(T::neg_infinity(), T::max);
        if own.is_none_or(|m| m < top) {
            bad.push(n);
        }
    }
    Ok(bad)
}
