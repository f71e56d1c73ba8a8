//! Centralized solution of the scalarized energy/utility problem in the
//! variables (z, p), z = log r:
//!
//! ```text
//! minimize    λ1 Σ e_i P_i − λ2 Σ z_ij
//! subject to  log(1/D + e^{z_ij} (1 − 1/(2D))) − log x_ij(p) ≤ −ε
//!             p_ij ≥ p_min,  P_i ≤ 1,  z_min ≤ z_ij ≤ log max c
//! ```
//!
//! The problem is convex after the log transform; it is solved with a log
//! barrier and the result is certified through its KKT residuals.

use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::{solve_spd, Constraint, LogExp, Problem, Settings};
use crate::error::{Error, Result};
use crate::feasibility::{
    even_split, maxmin_throughput, neg_log_success, node_sum_constraints, DEFAULT_TOL,
};
use crate::perf_model::{
    delay_residual, energy, link_throughput, node_totals, scalar_cost,
    throughput_from_probabilities, utility, PrimalState,
};
use crate::scalar::Scalar;
use crate::topology::NetworkTopology;

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct SolverConfig<T> {
    pub lambda1: T,
    pub lambda2: T,
    /// Delay bound in slots.
    pub dc: T,
    /// Delay constraints are enforced as residual ≤ −margin.
    pub margin: T,
    pub kkt_tol: T,
    /// Target per-constraint complementarity 1/t of the barrier.
    pub complementarity_tol: T,
    pub max_newton: usize,
    pub p_floor: T,
    pub rate_floor: T,
    /// Distance to a bound under which a box constraint counts as active in [`kkt_residual`].
    pub activity_tol: T,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(lambda1: T, lambda2: T, dc: T) -> Self {
        Self {
            lambda1,
            lambda2,
            dc,
            margin: T::lit(1e-9),
            kkt_tol: T::lit(1e-6),
            complementarity_tol: T::lit(1e-9),
            max_newton: 5000,
            p_floor: T::lit(1e-9),
            rate_floor: T::lit(1e-9),
            activity_tol: T::lit(1e-6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= T::zero() && self.lambda2 >= T::zero()) {
            return Err(Error::Validation(
                "scalarization weights must be nonnegative".into(),
            ));
        }
        if !(self.lambda1 + self.lambda2 > T::zero()) {
            return Err(Error::Validation(
                "lambda1 and lambda2 cannot both be zero".into(),
            ));
        }
        if !(self.dc > T::one()) || !self.dc.is_finite() {
            return Err(Error::Validation(format!(
                "delay bound {} must exceed one slot",
                self.dc
            )));
        }
        if !(self.margin >= T::zero() && self.p_floor > T::zero() && self.rate_floor > T::zero()) {
            return Err(Error::Validation(
                "margin and floors must be positive".into(),
            ));
        }
        Ok(())
    }

    fn alpha(&self) -> T {
        self.dc.recip()
    }

    fn beta(&self) -> T {
        T::one() - self.dc.recip() / T::lit(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual<T> {
    /// Largest Lagrangian gradient component after accounting for active bounds.
    pub stationarity: T,
    /// Largest violation of any constraint (primal) or sign condition (dual).
    pub feasibility: T,
    /// Largest |μ · residual| over the delay constraints.
    pub complementarity: T,
}

impl<T: Scalar> KktResidual<T> {
    pub fn max(&self) -> T {
        self.stationarity
            .max(self.feasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct SolveReport<T> {
    pub state: PrimalState<T>,
    pub energy: T,
    pub utility: T,
    pub cost: T,
    pub throughput: Vec<T>,
    /// Delay residual per link (≤ −margin on success).
    pub residuals: Vec<T>,
    /// Delay-constraint multipliers per link.
    pub multipliers: Vec<T>,
    pub kkt: KktResidual<T>,
    pub iterations: usize,
}

/// Layout of the barrier variables: z first, then p. Without a utility
/// weight the rates carry no cost and the delay constraint only tightens as
/// they grow, so z is pinned at its floor and only p is optimized.
struct Layout {
    links: usize,
    fixed_z: bool,
}

impl Layout {
    fn of<T: Scalar>(topo: &NetworkTopology<T>, cfg: &SolverConfig<T>) -> Self {
        Self {
            links: topo.num_links(),
            fixed_z: cfg.lambda2 == T::zero(),
        }
    }
    fn z(&self, k: usize) -> usize {
        k
    }
    fn p(&self, k: usize) -> usize {
        if self.fixed_z {
            k
        } else {
            self.links + k
        }
    }
    fn dim(&self) -> usize {
        self.p(self.links)
    }
}

fn build_problem<T: Scalar>(topo: &NetworkTopology<T>, cfg: &SolverConfig<T>) -> Problem<T> {
    let l = topo.num_links();
    let lay = Layout::of(topo, cfg);
    let z_min = cfg.rate_floor.ln();
    let z_max = topo.max_capacity().ln();
    let floor_term = (cfg.alpha() + cfg.beta() * cfg.rate_floor).ln();

    let mut constraints: Vec<Constraint<T>> = topo
        .links()
        .iter()
        .enumerate()
        .map(|(k, link)| {
            let (constant, log_exp) = if lay.fixed_z {
                (floor_term, None)
            } else {
                let le = LogExp {
                    var: lay.z(k),
                    alpha: cfg.alpha(),
                    beta: cfg.beta(),
                };
                (T::zero(), Some(le))
            };
            Constraint {
                constant: constant + cfg.margin - link.capacity.ln(),
                linear: Vec::new(),
                log_exp,
                neg_logs: neg_log_success(topo, k, lay.p(0)),
            }
        })
        .collect();
    constraints
        .extend((0..l).map(|k| Constraint::linear(cfg.p_floor, vec![(lay.p(k), -T::one())])));
    constraints.extend(node_sum_constraints(topo, lay.p(0)));
    if !lay.fixed_z {
        constraints.extend((0..l).map(|k| Constraint::linear(z_min, vec![(lay.z(k), -T::one())])));
        constraints.extend((0..l).map(|k| Constraint::linear(-z_max, vec![(lay.z(k), T::one())])));
    }

    let mut cost = vec![T::zero(); lay.dim()];
    for (k, link) in topo.links().iter().enumerate() {
        if !lay.fixed_z {
            cost[lay.z(k)] = -cfg.lambda2;
        }
        cost[lay.p(k)] = cfg.lambda1 * topo.nodes()[link.from].energy;
    }
    Problem {
        dim: lay.dim(),
        cost,
        constraints,
    }
}

/// Largest rate the delay constraint admits at throughput `x` (with margin), if any.
fn max_rate<T: Scalar>(x: T, cfg: &SolverConfig<T>) -> T {
    (x * (-cfg.margin).exp() - cfg.alpha()) / cfg.beta()
}

/// Interior point from probabilities: rates halfway into the admissible range.
fn interior_from_probabilities<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    p: &[T],
) -> Option<Vec<T>> {
    let x = throughput_from_probabilities(topo, p);
    let cap = topo.max_capacity();
    let mut v = Vec::with_capacity(2 * p.len());
    for &xk in &x {
        let hi = max_rate(xk, cfg).min(cap);
        if !(hi > cfg.rate_floor * T::lit(1.0 + 1e-6)) {
            return None;
        }
        if !Layout::of(topo, cfg).fixed_z {
            v.push((cfg.rate_floor + (hi - cfg.rate_floor) / T::lit(2.0)).ln());
        }
    }
    v.extend_from_slice(p);
    Some(v)
}

fn starting_point<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    problem: &Problem<T>,
) -> Result<Vec<T>> {
    if let Some(v) = interior_from_probabilities(topo, cfg, &even_split(topo)) {
        if problem.is_strictly_feasible(&v) {
            return Ok(v);
        }
    }
    // Fall back on the max-min solution, shrunk off the P_i = 1 boundary.
    let feas = maxmin_throughput(topo, T::lit(DEFAULT_TOL))?;
    if !(cfg.dc > feas.min_dc) {
        return Err(Error::Infeasible {
            dc: cfg.dc.as_f64(),
            min_dc: feas.min_dc.as_f64(),
        });
    }
    for shrink in [0.99, 0.999, 0.9999, 0.99999, 0.999999] {
        let p: Vec<T> = feas
            .probabilities
            .iter()
            .map(|&q| (q * T::lit(shrink)).max(cfg.p_floor * T::lit(2.0)))
            .collect();
        if let Some(v) = interior_from_probabilities(topo, cfg, &p) {
            if problem.is_strictly_feasible(&v) {
                return Ok(v);
            }
        }
    }
    Err(Error::Infeasible {
        dc: cfg.dc.as_f64(),
        min_dc: feas.min_dc.as_f64(),
    })
}

/// Solves the scalarized problem and certifies the result.
pub fn solve<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    if topo.num_links() == 0 {
        return Err(Error::Validation("topology has no links".into()));
    }
    let problem = build_problem(topo, cfg);
    let x0 = starting_point(topo, cfg, &problem)?;
    run(topo, cfg, &problem, x0)
}

/// Like [`solve`] but starting the barrier from a caller-supplied strictly feasible state.
pub fn solve_from<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    start: &PrimalState<T>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    let problem = build_problem(topo, cfg);
    let mut x0 = if Layout::of(topo, cfg).fixed_z {
        Vec::new()
    } else {
        start.log_rates().to_vec()
    };
    x0.extend_from_slice(start.probabilities());
    if !problem.is_strictly_feasible(&x0) {
        return Err(Error::Validation(
            "start point is not strictly feasible".into(),
        ));
    }
    run(topo, cfg, &problem, x0)
}

fn run<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    problem: &Problem<T>,
    x0: Vec<T>,
) -> Result<SolveReport<T>> {
    let l = topo.num_links();
    let m = T::from_usize(problem.constraints.len()).unwrap();
    let settings = Settings {
        gap_tol: m * cfg.complementarity_tol,
        max_newton: cfg.max_newton,
        ..Settings::default()
    };
    let out = problem.solve(x0, &settings)?;
    let lay = Layout::of(topo, cfg);
    let z = if lay.fixed_z {
        vec![cfg.rate_floor.ln(); l]
    } else {
        out.x[..l].to_vec()
    };
    let p = out.x[lay.p(0)..].iter().map(|&v| v.min(T::one())).collect();
    let state = PrimalState::new(topo, p, z)?;
    let multipliers = refine_multipliers(topo, cfg, &state, &out.multipliers[..l]);
    let kkt = kkt_residual(topo, &state, &multipliers, cfg);

    let throughput = link_throughput(topo, &state);
    let residuals: Vec<T> = throughput
        .iter()
        .zip(state.log_rates())
        .map(|(&x, &z)| delay_residual(z, x, cfg.dc))
        .collect();
    if !(kkt.max() <= cfg.kkt_tol) {
        return Err(Error::Numerical(format!(
            "KKT certificate failed: stationarity {}, feasibility {}, complementarity {}",
            kkt.stationarity, kkt.feasibility, kkt.complementarity
        )));
    }
    let worst = residuals.iter().copied().fold(T::neg_infinity(), T::max);
    if worst > -cfg.margin * T::lit(0.5) {
        return Err(Error::Numerical(format!(
            "delay constraint violated: residual {worst}"
        )));
    }

    let e = energy(topo, &state);
    let u = utility(&state);
    Ok(SolveReport {
        cost: scalar_cost(cfg.lambda1, cfg.lambda2, e, u),
        energy: e,
        utility: u,
        throughput,
        residuals,
        multipliers,
        kkt,
        iterations: out.newton_iterations,
        state,
    })
}

/// Barrier multipliers 1/(t·slack) lose relative precision as the slack
/// shrinks, so they are recomputed from stationarity at the final point.
///
/// Where z_k is strictly inside its box and λ2 > 0, stationarity in z_k pins
/// the multiplier exactly: μ_k = λ2 / σ(z_k). The remaining multipliers (and
/// the prices of saturated nodes) are fitted by regularized least squares on
/// the stationarity rows of the free probabilities, starting from the
/// barrier estimate.
fn refine_multipliers<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    state: &PrimalState<T>,
    barrier: &[T],
) -> Vec<T> {
    let l = topo.num_links();
    let z_min = cfg.rate_floor.ln();
    let z_max = topo.max_capacity().ln();
    let tol = cfg.activity_tol;
    let mut mu = barrier.to_vec();
    let mut free = Vec::new();
    for (k, &z) in state.log_rates().iter().enumerate() {
        let interior = z - z_min > tol && z_max - z > tol;
        if cfg.lambda2 > T::zero() && interior {
            let e = cfg.beta() * z.exp();
            mu[k] = cfg.lambda2 * (cfg.alpha() + e) / e;
        } else {
            free.push(k);
        }
    }
    if free.is_empty() {
        return mu;
    }

    let p = state.probabilities();
    let totals = state.node_totals();
    let saturated: Vec<usize> = (0..topo.num_nodes())
        .filter(|&i| !topo.out_links(i).is_empty() && T::one() - totals[i] <= tol)
        .collect();
    let rows: Vec<usize> = (0..l).filter(|&q| p[q] - cfg.p_floor > tol).collect();
    let row_of = |q: usize| rows.iter().position(|&r| r == q);
    let cols = free.len() + saturated.len();
    let mut col_of_link = vec![None; l];
    for (c, &k) in free.iter().enumerate() {
        col_of_link[k] = Some(c);
    }

    // Residual at the starting multipliers and the Jacobian in the unknowns.
    let mut a = vec![T::zero(); rows.len() * cols];
    let mut resid: Vec<T> = rows
        .iter()
        .map(|&q| cfg.lambda1 * topo.nodes()[topo.links()[q].from].energy)
        .collect();
    for k in 0..l {
        let mut add = |q: usize, v: T| {
            if let Some(r) = row_of(q) {
                resid[r] += mu[k] * v;
                if let Some(c) = col_of_link[k] {
                    a[r * cols + c] += v;
                }
            }
        };
        add(k, -p[k].recip());
        for &m in topo.blockers(k) {
            let w = (T::one() - totals[m]).recip();
            for &q in topo.out_links(m) {
                add(q, w);
            }
        }
    }
    for (s, &i) in saturated.iter().enumerate() {
        for &q in topo.out_links(i) {
            if let Some(r) = row_of(q) {
                a[r * cols + free.len() + s] = T::one();
            }
        }
    }

    // (AᵀA + δI) Δ = −Aᵀ resid
    let mut normal = vec![T::zero(); cols * cols];
    let mut rhs = vec![T::zero(); cols];
    for r in 0..rows.len() {
        for i in 0..cols {
            let ai = a[r * cols + i];
            if ai == T::zero() {
                continue;
            }
            rhs[i] -= ai * resid[r];
            for j in 0..cols {
                normal[i * cols + j] += ai * a[r * cols + j];
            }
        }
    }
    let scale = (0..cols)
        .map(|i| normal[i * cols + i])
        .fold(T::zero(), T::max);
    for i in 0..cols {
        normal[i * cols + i] += scale * T::lit(1e-14);
    }
    if solve_spd(&mut normal, cols, &mut rhs) {
        for (c, &k) in free.iter().enumerate() {
            mu[k] = (mu[k] + rhs[c]).max(T::zero());
        }
    }
    mu
}

/// KKT residuals of a candidate point with delay-constraint multipliers `mu`.
///
/// Multipliers of the box and node-sum constraints are not supplied; they are
/// fitted for every bound that is active within `cfg.activity_tol`.
pub fn kkt_residual<T: Scalar>(
    topo: &NetworkTopology<T>,
    state: &PrimalState<T>,
    mu: &[T],
    cfg: &SolverConfig<T>,
) -> KktResidual<T> {
    let l = topo.num_links();
    let p = state.probabilities();
    let z = state.log_rates();
    let totals = node_totals(topo, p);
    let (alpha, beta) = (cfg.alpha(), cfg.beta());

    let mut gz = vec![-cfg.lambda2; l];
    let mut gp: Vec<T> = topo
        .links()
        .iter()
        .map(|link| cfg.lambda1 * topo.nodes()[link.from].energy)
        .collect();
    for k in 0..l {
        let e = beta * z[k].exp();
        gz[k] += mu[k] * e / (alpha + e);
        gp[k] -= mu[k] / p[k];
        for &m in topo.blockers(k) {
            let w = mu[k] / (T::one() - totals[m]);
            for &q in topo.out_links(m) {
                gp[q] += w;
            }
        }
    }

    let tol = cfg.activity_tol;
    let z_min = cfg.rate_floor.ln();
    let z_max = topo.max_capacity().ln();
    let mut stationarity = T::zero();
    for k in 0..l {
        let r = if z[k] - z_min <= tol {
            (-gz[k]).max(T::zero())
        } else if z_max - z[k] <= tol {
            gz[k].max(T::zero())
        } else {
            gz[k].abs()
        };
        stationarity = stationarity.max(r);
    }
    for (i, &total) in totals.iter().enumerate() {
        let out = topo.out_links(i);
        if out.is_empty() {
            continue;
        }
        let free: Vec<usize> = out
            .iter()
            .copied()
            .filter(|&q| p[q] - cfg.p_floor > tol)
            .collect();
        let nu = if T::one() - total <= tol {
            if free.is_empty() {
                out.iter().map(|&q| -gp[q]).fold(T::zero(), T::max)
            } else {
                let hi = free.iter().map(|&q| gp[q]).fold(T::neg_infinity(), T::max);
                let lo = free.iter().map(|&q| gp[q]).fold(T::infinity(), T::min);
                (-(hi + lo) / T::lit(2.0)).max(T::zero())
            }
        } else {
            T::zero()
        };
        for &q in out {
            let g = gp[q] + nu;
            let r = if free.contains(&q) {
                g.abs()
            } else {
                (-g).max(T::zero())
            };
            stationarity = stationarity.max(r);
        }
    }

    let throughput = throughput_from_probabilities(topo, p);
    let mut feasibility = T::zero();
    let mut complementarity = T::zero();
    for k in 0..l {
        let g = delay_residual(z[k], throughput[k], cfg.dc);
        feasibility = feasibility
            .max(g)
            .max(cfg.p_floor - p[k])
            .max(z_min - z[k])
            .max(z[k] - z_max)
            .max(-mu[k]);
        complementarity = complementarity.max((mu[k] * g).abs());
    }
    for &total in &totals {
        feasibility = feasibility.max(total - T::one());
    }

    KktResidual {
        stationarity,
        feasibility,
        complementarity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PointStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct TradeoffPoint<T> {
    pub dc: T,
    pub lambda1: T,
    pub lambda2: T,
    pub energy: T,
    pub utility: T,
    pub cost: T,
    pub iterations: usize,
    pub status: PointStatus,
}

/// Solves every (D_c, λ1, λ2) combination. Points of one delay bound are
/// ordered by λ1/λ2; failures are recorded and the sweep continues.
pub fn sweep<T: Scalar>(
    topo: &NetworkTopology<T>,
    dcs: &[T],
    lambdas: &[(T, T)],
    template: &SolverConfig<T>,
) -> Vec<TradeoffPoint<T>> {
    let mut order: Vec<(T, T)> = lambdas.to_vec();
    let ratio = |&(l1, l2): &(T, T)| {
        if l2 > T::zero() {
            l1 / l2
        } else {
            T::infinity()
        }
    };
    order.sort_by(|a, b| {
        ratio(a)
            .partial_cmp(&ratio(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let jobs: Vec<(T, T, T)> = dcs
        .iter()
        .flat_map(|&dc| order.iter().map(move |&(l1, l2)| (dc, l1, l2)))
        .collect();
    jobs.par_iter()
        .map(|&(dc, lambda1, lambda2)| {
            let cfg = SolverConfig {
                lambda1,
                lambda2,
                dc,
                ..template.clone()
            };
            match solve(topo, &cfg) {
                Ok(rep) => TradeoffPoint {
                    dc,
                    lambda1,
                    lambda2,
                    energy: rep.energy,
                    utility: rep.utility,
                    cost: rep.cost,
                    iterations: rep.iterations,
                    status: PointStatus::Ok,
                },
                Err(e) => TradeoffPoint {
                    dc,
                    lambda1,
                    lambda2,
                    energy: T::nan(),
                    utility: T::nan(),
                    cost: T::nan(),
                    iterations: 0,
                    status: PointStatus::Failed(e.to_string()),
                },
            }
        })
        .collect()
}

/// Largest number of links [`brute_force_cost`] will enumerate.
pub const BRUTE_FORCE_COST_MAX_LINKS: usize = 3;

/// Cost at fixed probabilities with every rate as large as its delay bound
/// allows (λ2 > 0) or at the floor (λ2 = 0); `None` when infeasible.
fn cost_at_probabilities<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    p: &[T],
) -> Option<T> {
    if p.iter().any(|&v| v < cfg.p_floor) {
        return None;
    }
    let totals = node_totals(topo, p);
    if totals.iter().any(|&t| t > T::one()) {
        return None;
    }
    let cap = topo.max_capacity();
    let mut utility = T::zero();
    for &x in &throughput_from_probabilities(topo, p) {
        let hi = max_rate(x, cfg).min(cap);
        if hi < cfg.rate_floor {
            return None;
        }
        utility += if cfg.lambda2 > T::zero() {
            hi.ln()
        } else {
            cfg.rate_floor.ln()
        };
    }
    let energy = totals
        .iter()
        .zip(topo.nodes())
        .fold(T::zero(), |acc, (&t, node)| acc + node.energy * t);
    Some(scalar_cost(cfg.lambda1, cfg.lambda2, energy, utility))
}

/// Testing oracle: exhaustive grid over the link probabilities with step
/// 1/`steps`, refined by pattern search and a final pass that tries each
/// probability at its floor.
pub fn brute_force_cost<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SolverConfig<T>,
    steps: usize,
) -> Result<T> {
    cfg.validate()?;
    let d = topo.num_links();
    if d == 0 || d > BRUTE_FORCE_COST_MAX_LINKS {
        return Err(Error::Validation(format!(
            "brute-force cost supports 1 to {BRUTE_FORCE_COST_MAX_LINKS} links, topology has {d}"
        )));
    }
    if steps == 0 {
        return Err(Error::Validation("grid needs at least one step".into()));
    }
    let h = T::one() / T::from_usize(steps).unwrap();
    let mut idx = vec![1usize; d];
    let mut best: Option<(T, Vec<T>)> = None;
    loop {
        let p: Vec<T> = idx.iter().map(|&i| T::from_usize(i).unwrap() * h).collect();
        if let Some(c) = cost_at_probabilities(topo, cfg, &p) {
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                best = Some((c, p));
            }
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = 1;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let Some((mut cost, mut p)) = best else {
        return Err(Error::Infeasible {
            dc: cfg.dc.as_f64(),
            min_dc: f64::NAN,
        });
    };

    let mut step = h;
    let directions = 3usize.pow(d as u32);
    while step > T::lit(1e-10) {
        let mut improved = false;
        for dir in 0..directions {
            let mut trial = p.clone();
            let mut code = dir;
            for v in trial.iter_mut() {
                *v += T::from_usize(code % 3).unwrap() * step - step;
                code /= 3;
            }
            if let Some(c) = cost_at_probabilities(topo, cfg, &trial) {
                if c < cost {
                    cost = c;
                    p = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= T::lit(2.0);
        }
    }
    for k in 0..d {
        let mut trial = p.clone();
        trial[k] = cfg.p_floor;
        if let Some(c) = cost_at_probabilities(topo, cfg, &trial) {
            if c < cost {
                cost = c;
                p = trial;
            }
        }
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Node;

    type Topo = NetworkTopology<f64>;

    fn single() -> Topo {
        let nodes = vec![Node { id: 1, energy: 1.0 }, Node { id: 2, energy: 1.0 }];
        Topo::build(nodes, &[(1, 2)], &[(1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn single_link_pure_utility() {
        let rep = solve(&single(), &SolverConfig::new(0.0, 1.0, 2.0)).unwrap();
        let p = rep.state.probabilities()[0];
        let r = rep.state.rates()[0];
        assert!((p - 1.0).abs() < 1e-6, "p = {p}");
        assert!((r - 2.0 / 3.0).abs() < 1e-6, "r = {r}");
        assert!(rep.kkt.max() <= 1e-6);
    }

    #[test]
    fn single_link_pure_energy() {
        let cfg = SolverConfig::new(1.0, 0.0, 2.0);
        let rep = solve(&single(), &cfg).unwrap();
        // lowest energy: p just large enough to carry the smallest admissible rate
        let p_min = (0.5 + 1e-9 * 0.75) * 1e-9f64.exp();
        assert!(
            (rep.state.probabilities()[0] - p_min).abs() < 1e-6,
            "{:?}",
            rep.state
        );
        assert!(rep.energy < 0.5 + 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(solve(&single(), &SolverConfig::new(0.0, 0.0, 2.0)).is_err());
        assert!(solve(&single(), &SolverConfig::new(1.0, 1.0, 0.5)).is_err());
        assert!(solve(&single(), &SolverConfig::new(-1.0, 1.0, 5.0)).is_err());
    }

    #[test]
    fn infeasible_bound_reported() {
        let star = Topo::gen_star(3).unwrap();
        let err = solve(&star, &SolverConfig::new(5.0, 0.1, 3.9)).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }), "{err}");
    }

    #[test]
    fn star3_symmetric_and_active() {
        let star = Topo::gen_star(3).unwrap();
        let cfg = SolverConfig::new(5.0, 0.1, 16.0);
        let rep = solve(&star, &cfg).unwrap();
        let p = rep.state.probabilities();
        assert!((p[0] - p[1]).abs() < 1e-6);
        for &g in &rep.residuals {
            assert!(g <= -cfg.margin && g >= -cfg.margin - 1e-4, "residual {g}");
        }
    }

    #[test]
    fn kkt_flags_perturbed_points() {
        let star = Topo::gen_star(3).unwrap();
        let cfg = SolverConfig::new(5.0, 0.1, 16.0);
        let rep = solve(&star, &cfg).unwrap();
        assert!(rep.kkt.max() <= 1e-6);

        let mut p = rep.state.probabilities().to_vec();
        p[0] += 0.05;
        let moved = PrimalState::new(&star, p, rep.state.log_rates().to_vec()).unwrap();
        let k = kkt_residual(&star, &moved, &rep.multipliers, &cfg);
        assert!(k.stationarity > 1e-6);

        let zero = vec![0.0; 2];
        let k = kkt_residual(&star, &rep.state, &zero, &cfg);
        assert!(k.stationarity > 1e-6);
    }

    #[test]
    fn sweep_orders_and_repeats() {
        let star = Topo::gen_star(3).unwrap();
        let cfg = SolverConfig::new(1.0, 0.1, 16.0);
        let pts = sweep(&star, &[16.0], &[(5.0, 0.1), (0.5, 0.1), (5.0, 0.1)], &cfg);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].lambda1, 0.5);
        assert_eq!(pts[1].cost, pts[2].cost);
        assert!(pts.iter().all(|p| p.status == PointStatus::Ok));

        let bad = sweep(&star, &[2.0], &[(1.0, 0.1)], &cfg);
        assert!(matches!(bad[0].status, PointStatus::Failed(_)));
    }
}
