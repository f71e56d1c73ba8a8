//! Analytic link model: geometric service times, Pollaczek-Khinchin delay,
//! collision-limited throughput and the energy/utility objectives.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::NetworkTopology;

/// Per-link persistence probabilities and rates of a network operating point.
///
/// Rates are kept together with their logarithms since the convex solvers work in log-rate space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct PrimalState<T> {
    #[serde(rename = "probabilities")]
    p: Vec<T>,
    #[serde(rename = "log_rates")]
    z: Vec<T>,
    #[serde(rename = "rates")]
    r: Vec<T>,
    node_totals: Vec<T>,
}

impl<T: Scalar> PrimalState<T> {
    /// Builds a state from probabilities and log-rates.
    pub fn new(topo: &NetworkTopology<T>, p: Vec<T>, z: Vec<T>) -> Result<Self> {
        let r = z.iter().map(|z| z.exp()).collect();
        Self::assemble(topo, p, z, r)
    }

    pub fn from_rates(topo: &NetworkTopology<T>, p: Vec<T>, r: Vec<T>) -> Result<Self> {
        let z = r.iter().map(|r| r.ln()).collect();
        Self::assemble(topo, p, z, r)
    }

    fn assemble(topo: &NetworkTopology<T>, p: Vec<T>, z: Vec<T>, r: Vec<T>) -> Result<Self> {
        let l = topo.num_links();
        if p.len() != l || r.len() != l {
            return Err(Error::Validation(format!(
                "state has {} probabilities and {} rates for {l} links",
                p.len(),
                r.len()
            )));
        }
        for (k, (&pk, &rk)) in p.iter().zip(&r).enumerate() {
            if !(pk >= T::zero() && pk <= T::one()) {
                return Err(Error::Validation(format!(
                    "probability {pk} of link {} outside [0, 1]",
                    topo.link_label(k)
                )));
            }
            if !(rk > T::zero()) || !rk.is_finite() {
                return Err(Error::Validation(format!(
                    "rate {rk} of link {} is not positive",
                    topo.link_label(k)
                )));
            }
        }
        let node_totals = node_totals(topo, &p);
        let slack = T::epsilon() * T::lit(16.0);
        for (i, &total) in node_totals.iter().enumerate() {
            if total > T::one() + slack {
                return Err(Error::Validation(format!(
                    "node {} transmits with total probability {total} > 1",
                    topo.node_id(i)
                )));
            }
        }
        Ok(Self {
            p,
            z,
            r,
            node_totals,
        })
    }

    /// p_ij per link.
    pub fn probabilities(&self) -> &[T] {
        &self.p
    }

    /// z_ij = log r_ij per link.
    pub fn log_rates(&self) -> &[T] {
        &self.z
    }

    /// r_ij per link.
    pub fn rates(&self) -> &[T] {
        &self.r
    }

    /// P_i per node.
    pub fn node_totals(&self) -> &[T] {
        &self.node_totals
    }
}

/// P_i = Σ_{j ∈ O_i} p_ij for every node.
pub fn node_totals<T: Scalar>(topo: &NetworkTopology<T>, p: &[T]) -> Vec<T> {
    (0..topo.num_nodes())
        .map(|i| topo.out_links(i).iter().map(|&k| p[k]).sum())
        .collect()
}

/// Probability that a transmission on `link` is not collided: receiver and
/// the receiver's other neighbors all silent.
pub fn success_probability<T: Scalar>(
    topo: &NetworkTopology<T>,
    node_totals: &[T],
    link: usize,
) -> T {
    topo.blockers(link)
        .iter()
        .fold(T::one(), |acc, &m| acc * (T::one() - node_totals[m]))
}

/// x_ij = c_ij p_ij (1 − P_j) Π_{l ∈ N_j \ {i}} (1 − P_l) from raw probabilities.
pub fn throughput_from_probabilities<T: Scalar>(topo: &NetworkTopology<T>, p: &[T]) -> Vec<T> {
    let totals = node_totals(topo, p);
    topo.links()
        .iter()
        .enumerate()
        .map(|(k, l)| l.capacity * p[k] * success_probability(topo, &totals, k))
        .collect()
}

pub fn link_throughput<T: Scalar>(topo: &NetworkTopology<T>, state: &PrimalState<T>) -> Vec<T> {
    topo.links()
        .iter()
        .enumerate()
        .map(|(k, l)| l.capacity * state.p[k] * success_probability(topo, &state.node_totals, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceMoments<T> {
    pub mean: T,
    pub variance: T,
    pub second_moment: T,
}

/// Moments of the geometric number of slots until the first success when
/// each slot succeeds independently with probability `x`.
pub fn service_moments<T: Scalar>(x: T) -> Result<ServiceMoments<T>> {
    if !(x > T::zero() && x <= T::one()) {
        return Err(Error::Validation(format!(
            "success probability {x} outside (0, 1]"
        )));
    }
    let mean = x.recip();
    let variance = (T::one() - x) / (x * x);
    Ok(ServiceMoments {
        mean,
        variance,
        second_moment: variance + mean * mean,
    })
}

/// Mean sojourn time of an M/G/1 queue: S̄ + r E[S²] / (2 (1 − r S̄)).
pub fn pk_delay<T: Scalar>(rate: T, mean: T, second_moment: T) -> Result<T> {
    if !(rate >= T::zero()) {
        return Err(Error::Validation(format!(
            "arrival rate {rate} is negative"
        )));
    }
    let rho = rate * mean;
    if !(rho < T::one()) {
        return Err(Error::Validation(format!(
            "unstable queue: load {rho} >= 1"
        )));
    }
    Ok(mean + rate * second_moment / (T::lit(2.0) * (T::one() - rho)))
}

/// Closed-form delay (1 − r/2) / (x − r) of a link with arrival rate `r` and
/// per-slot success probability `x`.
pub fn link_delay<T: Scalar>(rate: T, x: T) -> Result<T> {
    if !(x > T::zero() && x <= T::one()) {
        return Err(Error::Validation(format!(
            "success probability {x} outside (0, 1]"
        )));
    }
    if !(rate >= T::zero()) {
        return Err(Error::Validation(format!(
            "arrival rate {rate} is negative"
        )));
    }
    if !(rate < x) {
        return Err(Error::Validation(format!(
            "unstable link: rate {rate} >= throughput {x}"
        )));
    }
    Ok((T::one() - rate / T::lit(2.0)) / (x - rate))
}

/// Convex form of the delay constraint,
/// `log(1/D + e^z (1 − 1/(2D))) − log x`; nonpositive iff `r + (1 − r/2)/D ≤ x`.
///
/// A dead link (`x ≤ 0`) reports `+∞`.
pub fn delay_residual<T: Scalar>(z: T, x: T, dc: T) -> T {
    if !(x > T::zero()) {
        return T::infinity();
    }
    let inv = dc.recip();
    (inv + z.exp() * (T::one() - inv / T::lit(2.0))).ln() - x.ln()
}

/// [`delay_residual`] for every link of a state.
pub fn delay_residuals<T: Scalar>(
    topo: &NetworkTopology<T>,
    state: &PrimalState<T>,
    dc: T,
) -> Vec<T> {
    link_throughput(topo, state)
        .into_iter()
        .zip(state.log_rates())
        .map(|(x, &z)| delay_residual(z, x, dc))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics<T> {
    pub throughput: Vec<T>,
    /// Analytic delay in slots; `None` where the link is unstable (r ≥ x).
    pub delay: Vec<Option<T>>,
    pub residual: Vec<T>,
}

pub fn link_metrics<T: Scalar>(
    topo: &NetworkTopology<T>,
    state: &PrimalState<T>,
    dc: T,
) -> LinkMetrics<T> {
    let throughput = link_throughput(topo, state);
    let delay = throughput
        .iter()
        .zip(state.rates())
        .map(|(&x, &r)| link_delay(r, x).ok())
        .collect();
    let residual = throughput
        .iter()
        .zip(state.log_rates())
        .map(|(&x, &z)| delay_residual(z, x, dc))
        .collect();
    LinkMetrics {
        throughput,
        delay,
        residual,
    }
}

/// U = Σ log r_ij.
pub fn utility<T: Scalar>(state: &PrimalState<T>) -> T {
    state.z.iter().copied().sum()
}

/// E = Σ_i e_i P_i.
pub fn energy<T: Scalar>(topo: &NetworkTopology<T>, state: &PrimalState<T>) -> T {
    topo.nodes()
        .iter()
        .zip(&state.node_totals)
        .map(|(n, &total)| n.energy * total)
        .sum()
}

/// λ1 E − λ2 U.
pub fn scalar_cost<T: Scalar>(lambda1: T, lambda2: T, energy: T, utility: T) -> T {
    lambda1 * energy - lambda2 * utility
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type Topo = NetworkTopology<f64>;

    fn single() -> Topo {
        Topo::gen_linear(2).unwrap()
    }

    fn one_way() -> Topo {
        use crate::topology::Node;
        let nodes = vec![Node { id: 1, energy: 1.0 }, Node { id: 2, energy: 1.0 }];
        Topo::build(nodes, &[(1, 2)], &[(1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn moments_examples() {
        let m = service_moments(1.0).unwrap();
        assert_eq!((m.mean, m.variance, m.second_moment), (1.0, 0.0, 1.0));
        let m = service_moments(0.5).unwrap();
        assert_eq!((m.mean, m.variance, m.second_moment), (2.0, 2.0, 6.0));
        let m = service_moments(0.25).unwrap();
        assert_eq!((m.mean, m.variance, m.second_moment), (4.0, 12.0, 28.0));
        assert!(service_moments(0.0).is_err());
        assert!(service_moments(1.5).is_err());
    }

    #[test]
    fn pk_examples() {
        assert_eq!(pk_delay(0.0, 2.0, 6.0).unwrap(), 2.0);
        assert_relative_eq!(pk_delay(0.25, 2.0, 6.0).unwrap(), 3.5, max_relative = 1e-15);
        assert!(pk_delay(0.5, 2.0, 6.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(link_delay(0.0, 0.5).unwrap(), 2.0);
        assert_relative_eq!(link_delay(0.25, 0.5).unwrap(), 3.5, max_relative = 1e-15);
        assert_relative_eq!(link_delay(0.1, 0.5).unwrap(), 2.375, max_relative = 1e-15);
        assert!(link_delay(0.5, 0.5).is_err());
        assert!(link_delay(0.6, 0.5).is_err());
    }

    #[test]
    fn delay_limit_is_mean_service_time() {
        for &x in &[0.1, 0.37, 0.9, 1.0] {
            let d = link_delay(1e-12, x).unwrap();
            assert_relative_eq!(d, 1.0 / x, max_relative = 1e-9);
        }
    }

    #[test]
    fn delay_monotone_on_grid() {
        for a in 1..40 {
            let x = a as f64 / 40.0;
            for b in 0..39 {
                let r = x * b as f64 / 40.0;
                let h = 1e-6 * x;
                let d = link_delay(r, x).unwrap();
                assert!(link_delay(r + h, x).unwrap() > d);
                if x + h <= 1.0 {
                    assert!(link_delay(r, x + h).unwrap() < d);
                }
            }
        }
    }

    #[test]
    fn throughput_examples() {
        let t = one_way();
        let s = PrimalState::from_rates(&t, vec![0.7], vec![0.1]).unwrap();
        assert_relative_eq!(link_throughput(&t, &s)[0], 0.7);

        let star = Topo::gen_star(3).unwrap();
        let s = PrimalState::from_rates(&star, vec![0.5, 0.5], vec![0.1, 0.1]).unwrap();
        assert_relative_eq!(link_throughput(&star, &s)[0], 0.25);

        let line = Topo::gen_linear(4).unwrap();
        let mut p = vec![0.2; 6];
        p[3] = 0.0;
        let s = PrimalState::from_rates(&line, p, vec![0.01; 6]).unwrap();
        assert_eq!(link_throughput(&line, &s)[3], 0.0);
    }

    #[test]
    fn state_validation() {
        let t = single();
        assert!(PrimalState::from_rates(&t, vec![0.6, 0.6], vec![0.1, 0.1]).is_ok());
        let star = Topo::gen_star(3).unwrap();
        assert!(PrimalState::from_rates(&star, vec![1.2, 0.1], vec![0.1, 0.1]).is_err());
        assert!(PrimalState::from_rates(&star, vec![0.1, 0.1], vec![0.0, 0.1]).is_err());
        assert!(PrimalState::from_rates(&star, vec![0.1], vec![0.1]).is_err());
        let line = Topo::gen_linear(3).unwrap();
        // node 2 sends on two links
        let k21 = line.link_index(2, 1).unwrap();
        let k23 = line.link_index(2, 3).unwrap();
        let mut p = vec![0.1; 4];
        p[k21] = 0.6;
        p[k23] = 0.6;
        assert!(PrimalState::from_rates(&line, p, vec![0.1; 4]).is_err());
    }

    #[test]
    fn residual_examples() {
        let res = delay_residual(0.01f64.ln(), 0.5, 100.0);
        let arg: f64 = 0.01 + 0.01 * (1.0 - 1.0 / 200.0);
        assert_relative_eq!(res, arg.ln() - 0.5f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(arg, 0.01995, max_relative = 1e-12);
        assert!(res < 0.0);
        // r approaching x from below crosses zero
        let near = delay_residual(0.4999f64.ln(), 0.5, 100.0);
        assert!(near > 0.0);
        assert_eq!(delay_residual(0.0, 0.0, 10.0), f64::INFINITY);
    }

    #[test]
    fn objective_examples() {
        let line = Topo::gen_linear(3).unwrap();
        let s = PrimalState::from_rates(&line, vec![0.25; 4], vec![1.0; 4]).unwrap();
        assert_eq!(utility(&s), 0.0);
        // two nodes at P = 0.5: node 2 sends on both its links
        let t = single();
        let s = PrimalState::from_rates(&t, vec![0.5, 0.5], vec![0.2, 0.2]).unwrap();
        assert_relative_eq!(energy(&t, &s), 1.0);
        assert_relative_eq!(scalar_cost(5.0, 0.1, 1.0, -10.0), 6.0);
    }

    #[test]
    fn single_precision_model() {
        let d: f32 = link_delay(0.25f32, 0.5).unwrap();
        assert!((d - 3.5).abs() < 1e-6);
        let m = service_moments(0.25f32).unwrap();
        assert!((m.second_moment - 28.0).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn pk_composition_matches_closed_form(x in 1e-3f64..=1.0, frac in 0.0f64..0.999) {
            let r = frac * x;
            let m = service_moments(x).unwrap();
            let pk = pk_delay(r, m.mean, m.second_moment).unwrap();
            let closed = link_delay(r, x).unwrap();
            prop_assert!(((pk - closed) / closed).abs() <= 1e-12);
        }

        #[test]
        fn residual_sign_matches_linear_form(r in 1e-6f64..1.0, x in 1e-6f64..1.0, dc in 1.01f64..1e4) {
            let lin = r + (1.0 - r / 2.0) / dc - x;
            prop_assume!(lin.abs() > 1e-12);
            let res = delay_residual(r.ln(), x, dc);
            prop_assert_eq!(res < 0.0, lin < 0.0);
        }

        #[test]
        fn throughput_bounded_by_attempt_rate(ps in proptest::collection::vec(0.0f64..0.5, 6)) {
            let t = Topo::gen_linear(4).unwrap().with_scaled_capacities(0.8).unwrap();
            let s = PrimalState::from_rates(&t, ps.clone(), vec![0.1; 6]).unwrap();
            for (k, x) in link_throughput(&t, &s).into_iter().enumerate() {
                prop_assert!(x >= 0.0 && x <= 0.8 * ps[k] + 1e-15);
            }
        }
    }
}
