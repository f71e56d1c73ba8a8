//! Packet-level slotted random-access simulator.
//!
//! Each slot: Poisson arrivals join the link queues, every node draws one
//! action (one of its links with probability p_ij, idle otherwise) and a
//! transmission on (i, j) succeeds iff j and every other neighbor of j stay
//! silent. Failed packets stay at the head of their queue.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::perf_model::{link_delay, link_throughput, PrimalState};
use crate::scalar::Scalar;
use crate::topology::NetworkTopology;

/// Batches used for the batch-means standard error of the mean delay.
pub const DELAY_BATCHES: u64 = 32;

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct SimConfig<T> {
    pub slots: u64,
    /// Leading slots excluded from every statistic.
    pub warmup: u64,
    pub seed: u64,
    /// Arrival rate per link, packets per slot.
    pub rates: Vec<T>,
    pub probabilities: Vec<T>,
    /// Queues never run empty and no packets are tracked.
    pub saturated: bool,
}

impl<T: Scalar> SimConfig<T> {
    /// Stable-queue run at the rates and probabilities of `state`.
    pub fn from_state(state: &PrimalState<T>, slots: u64, seed: u64) -> Self {
        Self {
            slots,
            warmup: slots / 100,
            seed,
            rates: state.rates().to_vec(),
            probabilities: state.probabilities().to_vec(),
            saturated: false,
        }
    }

    /// Saturated run at the given probabilities.
    pub fn saturated(probabilities: Vec<T>, slots: u64, seed: u64) -> Self {
        Self {
            slots,
            warmup: 0,
            seed,
            rates: vec![T::zero(); probabilities.len()],
            probabilities,
            saturated: true,
        }
    }

    pub fn validate(&self, topo: &NetworkTopology<T>) -> Result<()> {
        let l = topo.num_links();
        if self.rates.len() != l || self.probabilities.len() != l {
            return Err(Error::Validation(format!(
                "simulation needs {l} rates and probabilities, got {} and {}",
                self.rates.len(),
                self.probabilities.len()
            )));
        }
        if self.slots <= self.warmup {
            return Err(Error::Validation(format!(
                "slot count {} must exceed warmup {}",
                self.slots, self.warmup
            )));
        }
        if self
            .rates
            .iter()
            .any(|&r| !(r >= T::zero()) || !r.is_finite())
        {
            return Err(Error::Validation(
                "arrival rates must be finite and nonnegative".into(),
            ));
        }
        if self
            .probabilities
            .iter()
            .any(|&p| !(p >= T::zero() && p <= T::one()))
        {
            return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
        }
        let slack = T::epsilon() * T::lit(16.0);
        for i in 0..topo.num_nodes() {
            let total: T = topo
                .out_links(i)
                .iter()
                .map(|&k| self.probabilities[k])
                .sum();
            if total > T::one() + slack {
                return Err(Error::Validation(format!(
                    "node {} transmits with total probability {total} > 1",
                    topo.node_id(i)
                )));
            }
        }
        Ok(())
    }
}

/// Per-link statistics over the measured (post-warmup) slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkStats {
    /// Mean delay of packets that arrived after warmup and departed before the end.
    pub mean_delay: Option<f64>,
    /// Batch-means standard error of `mean_delay`.
    pub delay_se: Option<f64>,
    pub delivered: u64,
    pub throughput: f64,
    pub attempts: u64,
    pub successes: u64,
    pub collisions: u64,
    /// Time-averaged queue content, sampled after arrivals and before departures.
    pub mean_queue: f64,
    /// Whole-run packet counts, warmup included.
    pub total_arrivals: u64,
    pub total_departures: u64,
    pub final_queue: u64,
}

impl LinkStats {
    /// successes / attempts, with its binomial standard error.
    pub fn success_rate(&self) -> Option<(f64, f64)> {
        if self.attempts == 0 {
            return None;
        }
        let n = self.attempts as f64;
        let q = self.successes as f64 / n;
        Some((q, (q * (1.0 - q) / n).sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub measured_slots: u64,
    pub links: Vec<LinkStats>,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    queue: VecDeque<u64>,
    delay_sum: f64,
    delivered: u64,
    batch_sum: Vec<f64>,
    batch_count: Vec<u64>,
    attempts: u64,
    successes: u64,
    queue_area: f64,
    arrivals: u64,
    departures: u64,
}

/// One deterministic stream per (seed, node).
fn node_streams(seed: u64, nodes: usize) -> Vec<ChaCha8Rng> {
    (0..nodes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

pub fn simulate<T: Scalar>(topo: &NetworkTopology<T>, cfg: &SimConfig<T>) -> Result<SimReport> {
    cfg.validate(topo)?;
    let n = topo.num_nodes();
    let l = topo.num_links();
    let p: Vec<f64> = cfg.probabilities.iter().map(|v| v.as_f64()).collect();
    let arrivals: Vec<Option<Poisson<f64>>> = cfg
        .rates
        .iter()
        .map(|r| {
            let r = r.as_f64();
            (r > 0.0 && !cfg.saturated).then(|| Poisson::new(r).expect("positive finite mean"))
        })
        .collect();
    let measured = cfg.slots - cfg.warmup;
    let batch_len = measured.div_ceil(DELAY_BATCHES).max(1);

    let mut rngs = node_streams(cfg.seed, n);
    let mut acc = vec![
        Accumulator {
            batch_sum: vec![0.0; DELAY_BATCHES as usize],
            batch_count: vec![0; DELAY_BATCHES as usize],
            ..Accumulator::default()
        };
        l
    ];
    let mut action: Vec<Option<usize>> = vec![None; n];

    for slot in 0..cfg.slots {
        let counting = slot >= cfg.warmup;
        for (i, rng) in rngs.iter_mut().enumerate() {
            let out = topo.out_links(i);
            for &k in out {
                if let Some(dist) = &arrivals[k] {
                    let count = dist.sample(rng) as u64;
                    acc[k].arrivals += count;
                    acc[k]
                        .queue
                        .extend(std::iter::repeat_n(slot, count as usize));
                }
            }
            action[i] = None;
            if out.is_empty() {
                continue;
            }
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            for &k in out {
                cum += p[k];
                if u < cum {
                    if cfg.saturated || !acc[k].queue.is_empty() {
                        action[i] = Some(k);
                    }
                    break;
                }
            }
        }
        if counting {
            for a in acc.iter_mut() {
                a.queue_area += a.queue.len() as f64;
            }
        }
        for i in 0..n {
            let Some(k) = action[i] else { continue };
            let success = topo.blockers(k).iter().all(|&m| action[m].is_none());
            let a = &mut acc[k];
            if counting {
                a.attempts += 1;
                if success {
                    a.successes += 1;
                }
            }
            if !success || cfg.saturated {
                continue;
            }
            let arrived = a
                .queue
                .pop_front()
                .expect("transmitting queue is non-empty");
            a.departures += 1;
            if arrived >= cfg.warmup {
                let delay = (slot - arrived + 1) as f64;
                a.delay_sum += delay;
                a.delivered += 1;
                let b = ((arrived - cfg.warmup) / batch_len) as usize;
                a.batch_sum[b] += delay;
                a.batch_count[b] += 1;
            }
        }
    }

    let links = acc
        .into_iter()
        .map(|a| {
            let (mean_delay, delay_se) = delay_summary(&a);
            LinkStats {
                mean_delay,
                delay_se,
                delivered: a.delivered,
                throughput: a.successes as f64 / measured as f64,
                attempts: a.attempts,
                successes: a.successes,
                collisions: a.attempts - a.successes,
                mean_queue: a.queue_area / measured as f64,
                total_arrivals: a.arrivals,
                total_departures: a.departures,
                final_queue: a.queue.len() as u64,
            }
        })
        .collect();
    Ok(SimReport {
        measured_slots: measured,
        links,
    })
}

fn delay_summary(a: &Accumulator) -> (Option<f64>, Option<f64>) {
    if a.delivered == 0 {
        return (None, None);
    }
    let mean = a.delay_sum / a.delivered as f64;
    let batches: Vec<f64> = a
        .batch_sum
        .iter()
        .zip(&a.batch_count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    if batches.len() < 2 {
        return (Some(mean), None);
    }
    let b = batches.len() as f64;
    let bm = batches.iter().sum::<f64>() / b;
    let var = batches.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (b - 1.0);
    (Some(mean), Some((var / b).sqrt()))
}

/// Independent replications with seeds `seed, seed + 1, …`, in seed order.
pub fn replicate<T: Scalar>(
    topo: &NetworkTopology<T>,
    cfg: &SimConfig<T>,
    count: usize,
) -> Result<Vec<SimReport>> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(r);
            simulate(topo, &c)
        })
        .collect()
}

/// Empirical value, model value and their relative deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub empirical: f64,
    pub analytic: f64,
    /// (empirical − analytic) / analytic
    pub relative: f64,
    /// Half-width of the 95% interval on `relative`.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkComparison {
    pub link: usize,
    /// Against the product-form throughput (meaningful for saturated runs).
    pub throughput: Deviation,
    /// Against the P-K delay; `None` when r ≥ x or nothing was delivered.
    pub delay: Option<Deviation>,
    pub delay_undefined: bool,
}

/// Per-link deviations of a simulation from the analytic model at `state`.
pub fn compare_to_model<T: Scalar>(
    report: &SimReport,
    topo: &NetworkTopology<T>,
    state: &PrimalState<T>,
) -> Result<Vec<LinkComparison>> {
    if report.links.len() != topo.num_links() {
        return Err(Error::Validation(format!(
            "report has {} links, topology {}",
            report.links.len(),
            topo.num_links()
        )));
    }
    let x = link_throughput(topo, state);
    let n = report.measured_slots as f64;
    Ok(report
        .links
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let xa = x[k].as_f64();
            let se = (xa * (1.0 - xa) / n).sqrt();
            let throughput = Deviation {
                empirical: s.throughput,
                analytic: xa,
                relative: (s.throughput - xa) / xa,
                ci95: 1.96 * se / xa,
            };
            let analytic_delay = link_delay(state.rates()[k], x[k]).ok().map(|d| d.as_f64());
            let delay = match (analytic_delay, s.mean_delay) {
                (Some(t), Some(d)) => Some(Deviation {
                    empirical: d,
                    analytic: t,
                    relative: (d - t) / t,
                    ci95: 1.96 * s.delay_se.unwrap_or(f64::NAN) / t,
                }),
                _ => None,
            };
            LinkComparison {
                link: k,
                throughput,
                delay,
                delay_undefined: analytic_delay.is_none(),
            }
        })
        .collect())
}
