//! Dual-decomposition solver run as synchronous rounds of local updates.
//!
//! Every link (i, j) carries a price μ_ij for its delay constraint, held by the
//! receiver j. In each round:
//!
//! 1. every node broadcasts the prices of its in-links to its neighbors;
//! 2. transmitters set rates from their own link prices;
//! 3. each node solves a scalar quadratic for its total probability P_i and
//!    splits it over its out-links;
//! 4. receivers move their prices along the constraint residual measured at
//!    the new operating point.

use serde::Serialize;

use crate::central::SolveReport;
use crate::error::{Error, Result};
use crate::feasibility::min_delay_constraint;
use crate::perf_model::{
    delay_residual, energy, link_throughput, scalar_cost, utility, PrimalState,
};
use crate::scalar::{clamp, Scalar};
use crate::topology::NetworkTopology;

/// Probabilities are kept inside [ε_p, 1 − ε_p].
pub const PROB_EPS: f64 = 1e-6;

/// Price step used for a link whose throughput collapsed to zero.
pub const DEAD_LINK_RESIDUAL: f64 = 100.0;

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct DistConfig<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub dc: T,
    /// Constant subgradient step.
    pub alpha: T,
    /// Initial per-link probability.
    pub p0: T,
    /// Initial price; `None` means 2·λ2.
    pub mu0: Option<T>,
    pub max_iter: usize,
    /// Relative cost error against the reference that counts as converged.
    pub threshold: T,
    /// Stop as soon as the reference error drops below `threshold`.
    pub stop_at_threshold: bool,
    /// Stop once no price moves by more than this (strict; 0 disables).
    pub dual_tol: T,
    pub rate_floor: T,
    /// Abort when |cost| exceeds this multiple of the initial |cost|.
    pub divergence_factor: T,
}

impl<T: Scalar> DistConfig<T> {
    pub fn new(lambda1: T, lambda2: T, dc: T) -> Self {
        Self {
            lambda1,
            lambda2,
            dc,
            alpha: T::lit(0.01),
            p0: T::lit(0.1),
            mu0: None,
            max_iter: 500,
            threshold: T::lit(0.01),
            stop_at_threshold: true,
            dual_tol: T::zero(),
            rate_floor: T::lit(1e-9),
            divergence_factor: T::lit(10.0),
        }
    }

    pub fn initial_mu(&self) -> T {
        self.mu0.unwrap_or(self.lambda2 * T::lit(2.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= T::zero() && self.lambda2 >= T::zero())
            || !(self.lambda1 + self.lambda2 > T::zero())
        {
            return Err(Error::Validation(
                "weights must be nonnegative and not both zero".into(),
            ));
        }
        if !(self.dc > T::one()) || !self.dc.is_finite() {
            return Err(Error::Validation(format!(
                "delay bound {} must exceed one slot",
                self.dc
            )));
        }
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(Error::Validation(format!(
                "step size {} must be nonnegative",
                self.alpha
            )));
        }
        if !(self.p0 > T::zero() && self.p0 < T::one()) {
            return Err(Error::Validation(format!(
                "initial probability {} outside (0, 1)",
                self.p0
            )));
        }
        let mu0 = self.initial_mu();
        let ok = if self.lambda2 > T::zero() {
            mu0 > self.lambda2
        } else {
            mu0 >= T::zero()
        };
        if !ok || !mu0.is_finite() {
            return Err(Error::Validation(format!(
                "initial price {mu0} must exceed lambda2 = {}",
                self.lambda2
            )));
        }
        if !(self.threshold > T::zero()
            && self.rate_floor > T::zero()
            && self.divergence_factor > T::one())
        {
            return Err(Error::Validation(
                "threshold, rate floor and divergence factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solution a run is measured against.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct Reference<T> {
    pub cost: T,
    pub probabilities: Vec<T>,
}

impl<T: Scalar> From<&SolveReport<T>> for Reference<T> {
    fn from(report: &SolveReport<T>) -> Self {
        Self {
            cost: report.cost,
            probabilities: report.state.probabilities().to_vec(),
        }
    }
}

/// Delay-constraint prices after `iteration` rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct DualState<T> {
    pub mu: Vec<T>,
    pub iteration: usize,
}

/// One round of the trace. Round 0 is the initial operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct Round<T> {
    pub iter: usize,
    pub cost: T,
    /// |cost − reference| / |reference|, when a reference is given.
    pub cost_err: Option<T>,
    pub max_violation: T,
    pub p: Vec<T>,
    pub r: Vec<T>,
    /// Prices after this round's update.
    pub mu: Vec<T>,
    pub residuals: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Threshold,
    DualTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct Trace<T> {
    pub rounds: Vec<Round<T>>,
    /// First round whose cost error is below the threshold.
    pub reached_threshold: Option<usize>,
    pub stop: StopReason,
    /// Price values sent per round.
    pub messages_per_round: usize,
    pub reference_cost: Option<T>,
    pub reference_p: Option<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn last(&self) -> &Round<T> {
        self.rounds
            .last()
            .expect("trace always holds the initial round")
    }

    pub fn dual_state(&self) -> DualState<T> {
        let last = self.last();
        DualState {
            mu: last.mu.clone(),
            iteration: last.iter,
        }
    }

    /// Operating point of the final round.
    pub fn state(&self, topo: &NetworkTopology<T>) -> Result<PrimalState<T>> {
        let last = self.last();
        PrimalState::from_rates(topo, last.p.clone(), last.r.clone())
    }
}

/// r = λ2 / ((μ − λ2)(D_c − 1/2)), capped at the link capacity when the price
/// is too low to bound the rate, floored at `floor`.
pub fn rate_update<T: Scalar>(mu: T, lambda2: T, dc: T, capacity: T, floor: T) -> T {
    let r = if lambda2 == T::zero() {
        T::zero()
    } else if mu > lambda2 {
        (lambda2 / ((mu - lambda2) * (dc - T::lit(0.5)))).min(capacity)
    } else {
        capacity
    };
    r.max(floor)
}

/// Smaller root of λ1e P² − (λ1e + S + M) P + M = 0, clamped to [0, 1 − ε_p].
///
/// `m` is the price sum over the node's out-links, `s` over the links its
/// transmissions interfere with.
pub fn node_prob_update<T: Scalar>(m: T, s: T, lambda1: T, energy: T) -> T {
    let a = lambda1 * energy;
    let b = a + s + m;
    if !(b > T::zero()) {
        return T::zero();
    }
    let disc = (b * b - T::lit(4.0) * a * m).max(T::zero());
    // 2c / (b + √disc) is the smaller root without cancellation, and P = c/b when a = 0.
    let root = T::lit(2.0) * m / (b + disc.sqrt());
    clamp(root, T::zero(), T::one() - T::lit(PROB_EPS))
}

/// p_ij = μ_ij / (λ1e + S/(1 − P_i)), clamped to [ε_p, 1 − ε_p].
pub fn link_prob_update<T: Scalar>(mu: T, lambda1: T, energy: T, s: T, p_node: T) -> T {
    let eps = T::lit(PROB_EPS);
    let denom = lambda1 * energy + s / (T::one() - p_node);
    let p = if denom > T::zero() {
        mu / denom
    } else {
        T::one()
    };
    clamp(p, eps, T::one() - eps)
}

/// μ' = [μ + α (log((1 − 1/(2D_c)) r + 1/D_c) − log x)]⁺
pub fn dual_update<T: Scalar>(mu: T, r: T, x: T, dc: T, alpha: T) -> T {
    let g = if x > T::zero() {
        delay_residual(r.ln(), x, dc)
    } else {
        T::lit(DEAD_LINK_RESIDUAL)
    };
    (mu + alpha * g).max(T::zero())
}

/// Price values exchanged per round: every node sends its in-link prices to
/// each neighbor, Σ_i |I_i|·|N_i|.
pub fn messages_per_round<T: Scalar>(topo: &NetworkTopology<T>) -> usize {
    (0..topo.num_nodes())
        .map(|i| topo.in_links(i).len() * topo.neighbors(i).len())
        .sum()
}

/// Per-round message counts of a trace (constant, one entry per executed round).
pub fn message_stats<T: Scalar>(trace: &Trace<T>) -> Vec<usize> {
    vec![trace.messages_per_round; trace.rounds.len().saturating_sub(1)]
}

/// Price sums a node assembles from its own in-links and its neighbors' broadcasts.
#[derive(Debug, Clone, Copy)]
struct LocalPrices<T> {
    out_sum: T,
    interference_sum: T,
}

/// Simulated lossless exchange: returns the (M_i, S_i) each node can compute
/// from the messages it received, plus the number of values sent.
fn exchange<T: Scalar>(topo: &NetworkTopology<T>, mu: &[T]) -> (Vec<LocalPrices<T>>, usize) {
    let n = topo.num_nodes();
    let mut inbox: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    let mut sent = 0;
    for l in 0..n {
        for &m in topo.neighbors(l) {
            for &k in topo.in_links(l) {
                inbox[m].push((k, mu[k]));
                sent += 1;
            }
        }
    }
    let links = topo.links();
    let prices = (0..n)
        .map(|i| {
            let mut out_sum = T::zero();
            let mut interference_sum = T::zero();
            for &k in topo.in_links(i) {
                interference_sum += mu[k];
            }
            for &(k, v) in &inbox[i] {
                if links[k].from == i {
                    out_sum += v;
                } else {
                    interference_sum += v;
                }
            }
            LocalPrices {
                out_sum,
                interference_sum,
            }
        })
        .collect();
    (prices, sent)
}

/// Primal response of all nodes to the published prices.
fn primal_step<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &DistConfig<T>,
    mu: &[T],
) -> (Vec<T>, Vec<T>, usize) {
    let (prices, sent) = exchange(topo, mu);
    let links = topo.links();
    let r = links
        .iter()
        .zip(mu)
        .map(|(link, &m)| rate_update(m, cfg.lambda2, cfg.dc, link.capacity, cfg.rate_floor))
        .collect();
    let mut p = vec![T::zero(); links.len()];
    for (i, lp) in prices.iter().enumerate() {
        let out = topo.out_links(i);
        if out.is_empty() {
            continue;
        }
        let e = topo.nodes()[i].energy;
        let total = node_prob_update(lp.out_sum, lp.interference_sum, cfg.lambda1, e);
        for &k in out {
            p[k] = link_prob_update(mu[k], cfg.lambda1, e, lp.interference_sum, total);
        }
        cap_node_total(&mut p, out);
    }
    (p, r, sent)
}

/// Clamping can push Σ_j p_ij past 1 − ε_p; scale back so P_i < 1.
fn cap_node_total<T: Scalar>(p: &mut [T], out: &[usize]) {
    let limit = T::one() - T::lit(PROB_EPS);
    let total: T = out.iter().map(|&k| p[k]).sum();
    if total > limit {
        let s = limit / total;
        for &k in out {
            p[k] *= s;
        }
    }
}

fn initial_probabilities<T: Scalar>(topo: &NetworkTopology<T>, p0: T) -> Vec<T> {
    let mut p = vec![p0; topo.num_links()];
    for i in 0..topo.num_nodes() {
        cap_node_total(&mut p, topo.out_links(i));
    }
    p
}

fn evaluate<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &DistConfig<T>,
    iter: usize,
    p: Vec<T>,
    r: Vec<T>,
    mu: Vec<T>,
    reference: Option<T>,
) -> Result<(Round<T>, Vec<T>)> {
    let state = PrimalState::from_rates(topo, p, r)?;
    let x = link_throughput(topo, &state);
    let residuals: Vec<T> = state
        .log_rates()
        .iter()
        .zip(&x)
        .map(|(&z, &xk)| delay_residual(z, xk, cfg.dc))
        .collect();
    let cost = scalar_cost(
        cfg.lambda1,
        cfg.lambda2,
        energy(topo, &state),
        utility(&state),
    );
    let round = Round {
        iter,
        cost,
        cost_err: reference.map(|c| (cost - c).abs() / c.abs()),
        max_violation: residuals.iter().fold(T::zero(), |acc, &g| acc.max(g)),
        p: state.probabilities().to_vec(),
        r: state.rates().to_vec(),
        mu,
        residuals,
    };
    Ok((round, x))
}

/// Runs synchronous rounds until the reference error, the price change or
/// the iteration budget says stop.
pub fn run<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &DistConfig<T>,
    reference: Option<&Reference<T>>,
) -> Result<Trace<T>> {
    cfg.validate()?;
    if topo.num_links() == 0 {
        return Err(Error::Validation("topology has no links".into()));
    }
    let min_dc = min_delay_constraint(topo)?;
    if !(cfg.dc > min_dc) {
        return Err(Error::Infeasible {
            dc: cfg.dc.as_f64(),
            min_dc: min_dc.as_f64(),
        });
    }
    let l = topo.num_links();
    if let Some(r) = reference {
        if r.probabilities.len() != l {
            return Err(Error::Validation(format!(
                "reference has {} probabilities for {l} links",
                r.probabilities.len()
            )));
        }
    }
    let ref_cost = reference.map(|r| r.cost);

    let mut mu = vec![cfg.initial_mu(); l];
    let r0 = topo
        .links()
        .iter()
        .zip(&mu)
        .map(|(link, &m)| rate_update(m, cfg.lambda2, cfg.dc, link.capacity, cfg.rate_floor))
        .collect();
    let (first, _) = evaluate(
        topo,
        cfg,
        0,
        initial_probabilities(topo, cfg.p0),
        r0,
        mu.clone(),
        ref_cost,
    )?;
    let bound = cfg.divergence_factor * first.cost.abs();
    let mut reached = first.cost_err.filter(|&e| e < cfg.threshold).map(|_| 0);
    let mut rounds = vec![first];
    let mut stop = StopReason::MaxIterations;
    let mut messages = messages_per_round(topo);

    for iter in 1..=cfg.max_iter {
        let (p, r, sent) = primal_step(topo, cfg, &mu);
        messages = sent;
        let state = PrimalState::from_rates(topo, p.clone(), r.clone())?;
        let x = link_throughput(topo, &state);
        let mut change = T::zero();
        let next: Vec<T> = (0..l)
            .map(|k| {
                let v = dual_update(mu[k], r[k], x[k], cfg.dc, cfg.alpha);
                change = change.max((v - mu[k]).abs());
                v
            })
            .collect();
        let (round, _) = evaluate(topo, cfg, iter, p, r, next.clone(), ref_cost)?;
        mu = next;
        if !round.cost.is_finite() || round.cost.abs() > bound {
            return Err(Error::Diverged {
                iteration: iter,
                cost: round.cost.as_f64(),
            });
        }
        let below = round.cost_err.is_some_and(|e| e < cfg.threshold);
        rounds.push(round);
        if below && reached.is_none() {
            reached = Some(iter);
        }
        if below && cfg.stop_at_threshold {
            stop = StopReason::Threshold;
            break;
        }
        if change < cfg.dual_tol {
            stop = StopReason::DualTolerance;
            break;
        }
    }

    Ok(Trace {
        rounds,
        reached_threshold: reached,
        stop,
        messages_per_round: messages,
        reference_cost: ref_cost,
        reference_p: reference.map(|r| r.probabilities.clone()),
    })
}
