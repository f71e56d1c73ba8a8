mod common;

use ramac_core::central::{kkt_residual, solve, SolverConfig};
use ramac_core::distributed::{
    messages_per_round, run, DistConfig, Reference, StopReason, PROB_EPS,
};
use ramac_core::{Error, Topology};

fn reference_config() -> DistConfig<f64> {
    DistConfig::new(5.0, 0.1, 100.0)
}

#[test]
fn reaches_one_percent_on_linear_networks() {
    let mut counts = Vec::new();
    for n in [4, 8, 16, 32] {
        let topo = Topology::gen_linear(n).unwrap();
        let central = solve(&topo, &SolverConfig::new(5.0, 0.1, 100.0)).unwrap();
        let trace = run(&topo, &reference_config(), Some(&Reference::from(&central))).unwrap();
        assert_eq!(trace.stop, StopReason::Threshold, "n={n}");
        let reached = trace.reached_threshold.unwrap();
        assert!(reached <= 500);
        assert!(trace.last().cost_err.unwrap() < 0.01);
        counts.push(reached);
    }
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(*hi <= 3 * *lo, "{counts:?}");
}

#[test]
fn agrees_with_central_on_stars() {
    for n in [4, 8] {
        let topo = Topology::gen_star(n).unwrap();
        let central = solve(&topo, &SolverConfig::new(5.0, 0.1, 100.0)).unwrap();
        let mut cfg = reference_config();
        cfg.stop_at_threshold = false;
        cfg.max_iter = 400;
        let trace = run(&topo, &cfg, Some(&Reference::from(&central))).unwrap();
        assert!(trace.last().cost_err.unwrap() < 0.01, "n={n}");
    }
}

#[test]
fn fixed_point_passes_kkt_check() {
    for topo in [Topology::gen_linear(8).unwrap(), common::three_link_path()] {
        let mut cfg = reference_config();
        cfg.max_iter = 20_000;
        cfg.dual_tol = 1e-12;
        let trace = run(&topo, &cfg, None).unwrap();
        assert_eq!(trace.stop, StopReason::DualTolerance);
        let state = trace.state(&topo).unwrap();
        let kkt = kkt_residual(
            &topo,
            &state,
            &trace.dual_state().mu,
            &SolverConfig::new(5.0, 0.1, 100.0),
        );
        assert!(kkt.max() <= 1e-5, "{kkt:?}");
    }
}

#[test]
fn converged_point_as_reference_ends_below_threshold() {
    let topo = Topology::gen_linear(4).unwrap();
    let mut cfg = reference_config();
    cfg.max_iter = 20_000;
    cfg.dual_tol = 1e-12;
    let fixed = run(&topo, &cfg, None).unwrap();
    let reference = Reference {
        cost: fixed.last().cost,
        probabilities: fixed.last().p.clone(),
    };
    let mut short = reference_config();
    short.stop_at_threshold = false;
    short.max_iter = 200;
    let trace = run(&topo, &short, Some(&reference)).unwrap();
    assert!(trace.rounds.iter().all(|r| r.cost_err.unwrap() >= 0.0));
    assert!(trace.last().cost_err.unwrap() < short.threshold);
}

#[test]
fn invariants_hold_every_round() {
    let topo = Topology::gen_star(6).unwrap();
    let mut cfg = reference_config();
    cfg.max_iter = 300;
    let trace = run(&topo, &cfg, None).unwrap();
    assert_eq!(trace.rounds.len(), 301);
    for round in &trace.rounds {
        assert!(round.mu.iter().all(|&m| m >= 0.0));
        assert!(round
            .p
            .iter()
            .all(|&p| (PROB_EPS..=1.0 - PROB_EPS).contains(&p)));
        let state = ramac_core::State::from_rates(&topo, round.p.clone(), round.r.clone()).unwrap();
        assert!(state.node_totals().iter().all(|&t| t < 1.0));
    }
}

#[test]
fn identical_configs_give_identical_traces() {
    let topo = Topology::gen_geometric(8, 0.6, 42).unwrap();
    let mut cfg = reference_config();
    cfg.max_iter = 100;
    let a = run(&topo, &cfg, None).unwrap();
    let b = run(&topo, &cfg, None).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.messages_per_round, messages_per_round(&topo));
}

#[test]
fn divergence_is_detected() {
    // Initial rate 1/(D − 1/2) = 1 gives zero utility, so the initial cost is tiny.
    let topo = common::single_link();
    let mut cfg = DistConfig::new(0.01, 1.0, 1.5);
    cfg.alpha = 50.0;
    cfg.max_iter = 200;
    let err = run(&topo, &cfg, None).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
}
