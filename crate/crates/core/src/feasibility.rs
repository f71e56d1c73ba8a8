//! Max-min link throughput and the smallest delay bound that keeps the
//! delay-constrained problem feasible.
//!
//! As the arrival rate goes to zero the delay constraint reduces to
//! `1/D < x`, so the smallest usable bound is the reciprocal of the best
//! achievable minimum link throughput.

use serde::Serialize;

use crate::barrier::{Affine, Constraint, Problem, Settings};
use crate::error::{Error, Result};
use crate::perf_model::{node_totals, throughput_from_probabilities};
use crate::scalar::Scalar;
use crate::topology::NetworkTopology;

/// Default optimality tolerance on log x* for [`maxmin_throughput`].
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest number of link probabilities [`brute_force_maxmin`] will enumerate.
pub const BRUTE_FORCE_MAX_VARS: usize = 6;

const BRUTE_FORCE_BUDGET: f64 = 4.0e6;

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct FeasibilityReport<T> {
    /// p* per link.
    pub probabilities: Vec<T>,
    /// Throughput of every link at p*.
    pub throughput: Vec<T>,
    /// x* = min over links of the throughput at p*.
    pub min_throughput: T,
    /// z* = log x*.
    pub log_min_throughput: T,
    /// 1 / x*.
    pub min_dc: T,
    pub iterations: usize,
    /// Duality gap bound for the barrier solver, final grid step for the brute-force search.
    pub gap: T,
}

impl<T: Scalar> FeasibilityReport<T> {
    fn from_probabilities(topo: &NetworkTopology<T>, p: Vec<T>, iterations: usize, gap: T) -> Self {
        let throughput = throughput_from_probabilities(topo, &p);
        let min_throughput = throughput.iter().copied().fold(T::infinity(), T::min);
        Self {
            probabilities: p,
            throughput,
            min_throughput,
            log_min_throughput: min_throughput.ln(),
            min_dc: min_throughput.recip(),
            iterations,
            gap,
        }
    }
}

fn check_links<T: Scalar>(topo: &NetworkTopology<T>) -> Result<()> {
    if topo.num_links() == 0 {
        return Err(Error::Validation("topology has no links".into()));
    }
    Ok(())
}

/// `−log(1 − P_m)` as an affine argument over the link probabilities of node m.
pub(crate) fn silence_term<T: Scalar>(
    topo: &NetworkTopology<T>,
    node: usize,
    offset: usize,
) -> Affine<T> {
    Affine {
        constant: T::one(),
        terms: topo
            .out_links(node)
            .iter()
            .map(|&q| (offset + q, -T::one()))
            .collect(),
    }
}

/// `−log p_k − Σ_{m ∈ blockers} log(1 − P_m)`, i.e. `−log(x_k / c_k)`.
pub(crate) fn neg_log_success<T: Scalar>(
    topo: &NetworkTopology<T>,
    link: usize,
    offset: usize,
) -> Vec<Affine<T>> {
    let mut terms = vec![Affine {
        constant: T::zero(),
        terms: vec![(offset + link, T::one())],
    }];
    terms.extend(
        topo.blockers(link)
            .iter()
            .filter(|&&m| !topo.out_links(m).is_empty())
            .map(|&m| silence_term(topo, m, offset)),
    );
    terms
}

/// `P_i − 1 < 0` for every transmitting node.
pub(crate) fn node_sum_constraints<T: Scalar>(
    topo: &NetworkTopology<T>,
    offset: usize,
) -> Vec<Constraint<T>> {
    (0..topo.num_nodes())
        .filter(|&i| !topo.out_links(i).is_empty())
        .map(|i| {
            Constraint::linear(
                -T::one(),
                topo.out_links(i)
                    .iter()
                    .map(|&q| (offset + q, T::one()))
                    .collect(),
            )
        })
        .collect()
}

/// Interior start with every node transmitting half the time, split evenly over its links.
pub(crate) fn even_split<T: Scalar>(topo: &NetworkTopology<T>) -> Vec<T> {
    topo.links()
        .iter()
        .map(|l| T::lit(0.5) / T::from_usize(topo.out_links(l.from).len()).unwrap())
        .collect()
}

/// Maximizes the smallest link throughput over all persistence probabilities
/// (epigraph form in log space, solved by the barrier method).
pub fn maxmin_throughput<T: Scalar>(
    topo: &NetworkTopology<T>,
    tol: T,
) -> Result<FeasibilityReport<T>> {
    check_links(topo)?;
    let l = topo.num_links();
    let w = l;
    let mut constraints: Vec<Constraint<T>> = topo
        .links()
        .iter()
        .enumerate()
        .map(|(k, link)| Constraint {
            constant: -link.capacity.ln(),
            linear: vec![(w, T::one())],
            log_exp: None,
            neg_logs: neg_log_success(topo, k, 0),
        })
        .collect();
    constraints.extend(node_sum_constraints(topo, 0));

    let mut cost = vec![T::zero(); l + 1];
    cost[w] = -T::one();
    let problem = Problem {
        dim: l + 1,
        cost,
        constraints,
    };

    let mut x0 = even_split(topo);
    let start = throughput_from_probabilities(topo, &x0)
        .into_iter()
        .fold(T::infinity(), T::min);
    x0.push(start.ln() - T::one());

    let settings = Settings {
        gap_tol: tol,
        ..Settings::default()
    };
    let out = problem.solve(x0, &settings)?;
    let mut p = out.x[..l].to_vec();
    snap_saturated_nodes(topo, &mut p);
    Ok(FeasibilityReport::from_probabilities(
        topo,
        p,
        out.newton_iterations,
        out.gap,
    ))
}

/// Nodes the barrier leaves a hair below P_i = 1 are pushed onto the
/// boundary when that does not lower the minimum throughput.
fn snap_saturated_nodes<T: Scalar>(topo: &NetworkTopology<T>, p: &mut [T]) {
    let min_of = |p: &[T]| {
        throughput_from_probabilities(topo, p)
            .into_iter()
            .fold(T::infinity(), T::min)
    };
    let totals = node_totals(topo, p);
    let mut candidate = p.to_vec();
    let mut changed = false;
    for (i, &total) in totals.iter().enumerate() {
        if total > T::zero() && T::one() - total < T::lit(1e-6) {
            for &q in topo.out_links(i) {
                candidate[q] /= total;
            }
            changed = true;
        }
    }
    if changed && min_of(&candidate) >= min_of(p) {
        p.copy_from_slice(&candidate);
    }
}

/// Smallest feasible delay bound, 1 / x*.
pub fn min_delay_constraint<T: Scalar>(topo: &NetworkTopology<T>) -> Result<T> {
    Ok(maxmin_throughput(topo, T::lit(DEFAULT_TOL))?.min_dc)
}

/// Exhaustive grid search over link probabilities (with local grid
/// refinement when the full grid at `resolution` is too large).
///
/// Independent of the barrier solver; used to certify it on small networks.
pub fn brute_force_maxmin<T: Scalar>(
    topo: &NetworkTopology<T>,
    resolution: T,
) -> Result<FeasibilityReport<T>> {
    check_links(topo)?;
    let d = topo.num_links();
    if d > BRUTE_FORCE_MAX_VARS {
        return Err(Error::Validation(format!(
            "brute force supports at most {BRUTE_FORCE_MAX_VARS} links, topology has {d}"
        )));
    }
    let res = resolution.as_f64();
    if !(res > 0.0 && res <= 0.5) {
        return Err(Error::Validation(format!(
            "grid resolution {res} outside (0, 0.5]"
        )));
    }

    let score = |p: &[f64]| -> Option<f64> {
        let pt: Vec<T> = p.iter().map(|&v| T::lit(v)).collect();
        let totals = node_totals(topo, &pt);
        if totals.iter().any(|&s| s.as_f64() > 1.0 + 1e-12) {
            return None;
        }
        Some(
            throughput_from_probabilities(topo, &pt)
                .into_iter()
                .map(Scalar::as_f64)
                .fold(f64::INFINITY, f64::min),
        )
    };

    let fine_steps = (1.0 / res).round() as usize;
    let full = ((fine_steps + 1) as f64).powi(d as i32);
    let mut evaluations = 0usize;
    let mut best = vec![0.0; d];
    let mut best_val = f64::NEG_INFINITY;

    // coarse (or full) grid
    let steps = if full <= BRUTE_FORCE_BUDGET {
        fine_steps
    } else {
        ((BRUTE_FORCE_BUDGET.powf(1.0 / d as f64) - 1.0).floor() as usize).max(2)
    };
    let h = 1.0 / steps as f64;
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    loop {
        for (v, &i) in p.iter_mut().zip(&idx) {
            *v = i as f64 * h;
        }
        evaluations += 1;
        if let Some(v) = score(&p) {
            if v > best_val {
                best_val = v;
                best.copy_from_slice(&p);
            }
        }
        if !odometer(&mut idx, steps + 1) {
            break;
        }
    }

    // local refinement down to the requested resolution
    let mut h = h;
    while h > res * (1.0 + 1e-9) {
        h = (h / 2.0).max(res);
        loop {
            let mut improved = false;
            let center = best.clone();
            let mut offs = vec![0usize; d];
            loop {
                for ((v, &c), &o) in p.iter_mut().zip(&center).zip(&offs) {
                    *v = c + (o as f64 - 2.0) * h;
                }
                if p.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    evaluations += 1;
                    if let Some(v) = score(&p) {
                        if v > best_val * (1.0 + 1e-12) {
                            best_val = v;
                            best.copy_from_slice(&p);
                            improved = true;
                        }
                    }
                }
                if !odometer(&mut offs, 5) {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
    }

    let p: Vec<T> = best.iter().map(|&v| T::lit(v)).collect();
    Ok(FeasibilityReport::from_probabilities(
        topo,
        p,
        evaluations,
        T::lit(h),
    ))
}

fn odometer(idx: &mut [usize], base: usize) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < base {
            return true;
        }
        *v = 0;
    }
    false
}
