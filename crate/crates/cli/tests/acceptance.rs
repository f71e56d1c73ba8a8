//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` print their real outcome but do not fail
//! the process; everything else must pass.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ramac_core::central::{
    brute_force_cost, kkt_residual, solve, sweep, PointStatus, SolverConfig,
};
use ramac_core::distributed::{run, DistConfig, Reference, StopReason};
use ramac_core::feasibility::{brute_force_maxmin, maxmin_throughput, min_delay_constraint};
use ramac_core::perf_model::{
    link_delay, node_totals, pk_delay, service_moments, success_probability,
};
use ramac_core::sim::{simulate, SimConfig};
use ramac_core::topology::Node;
use ramac_core::Topology;
use sha2::{Digest, Sha256};

/// Criteria whose failure is documented and expected.
const KNOWN_RED: &[usize] = &[3];

type Check = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn delay_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let x = (i as f64 + 1.0) / 100.0;
        for j in 0..100 {
            let r = x * j as f64 / 100.0;
            let m = service_moments(x).unwrap();
            let pk = pk_delay(r, m.mean, m.second_moment).unwrap();
            let closed = link_delay(r, x).unwrap();
            worst = worst.max((closed - pk).abs() / pk.abs());
        }
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.3e}"))
}

fn feasibility_oracle() -> Outcome {
    let star = Topology::gen_star(3).unwrap();
    let solver = min_delay_constraint(&star).unwrap();
    let grid = brute_force_maxmin(&star, 1e-3).unwrap().min_dc;
    let star_ok = (solver - grid).abs() <= 1e-2 && (solver - 4.0).abs() <= 1e-2;

    let single = Topology::build(
        vec![Node::new(1, 1.0), Node::new(2, 1.0)],
        &[(1, 2)],
        &[(1, 2, 1.0)],
    )
    .unwrap();
    let single_dc = min_delay_constraint(&single).unwrap();

    let linear = Topology::gen_linear(4).unwrap();
    let res = 0.01;
    let lin_solver = maxmin_throughput(&linear, 1e-12).unwrap();
    let lin_grid = brute_force_maxmin(&linear, res).unwrap();
    // The grid maximum can trail the true maximum by one step in each coordinate.
    let lin_ok = lin_grid.min_throughput <= lin_solver.min_throughput + 1e-12
        && lin_solver.min_throughput - lin_grid.min_throughput <= res;
    outcome(
        star_ok && single_dc == 1.0 && lin_ok,
        format!(
            "star3 {solver:.6} vs grid {grid:.6}; single {single_dc}; linear4 x* {:.6} vs grid {:.6}",
            lin_solver.min_throughput, lin_grid.min_throughput
        ),
    )
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn min_dc_scaling() -> Outcome {
    let sizes = [4usize, 8, 16, 32];
    let star: Vec<f64> = sizes
        .iter()
        .map(|&n| min_delay_constraint(&Topology::gen_star(n).unwrap()).unwrap())
        .collect();
    let linear: Vec<f64> = sizes
        .iter()
        .map(|&n| min_delay_constraint(&Topology::gen_linear(n).unwrap()).unwrap())
        .collect();
    let increasing = star.windows(2).all(|w| w[1] > w[0]);
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&xs, &star);
    let ratio = linear.iter().copied().fold(f64::MIN, f64::max)
        / linear.iter().copied().fold(f64::MAX, f64::min);
    outcome(
        increasing && r2 >= 0.98 && ratio <= 1.2,
        format!(
            "star {star:.2?} (R² {r2:.4}); linear {linear:.2?} (max/min {ratio:.3}, limit 1.2)"
        ),
    )
}

fn central_certification() -> Outcome {
    let cfg = SolverConfig::new(5.0, 0.1, 100.0);
    let mut worst_kkt = 0.0f64;
    let mut worst_slack = 0.0f64;
    let mut active = true;
    for topo in [
        Topology::gen_star(3).unwrap(),
        Topology::gen_linear(8).unwrap(),
    ] {
        let report = solve(&topo, &cfg).unwrap();
        worst_kkt = worst_kkt.max(report.kkt.max());
        for &g in &report.residuals {
            worst_slack = worst_slack.max(-g);
            active &= (-1e-4..=0.0).contains(&g);
        }
    }

    let path = Topology::build(
        vec![Node::new(1, 1.0), Node::new(2, 2.0), Node::new(3, 1.0)],
        &[(1, 2), (2, 3)],
        &[(1, 2, 1.0), (3, 2, 1.0), (2, 3, 1.0)],
    )
    .unwrap();
    let mut worst_gap = 0.0f64;
    for topo in [
        Topology::gen_linear(2).unwrap(),
        Topology::gen_star(3).unwrap(),
        path,
    ] {
        let report = solve(&topo, &cfg).unwrap();
        let steps = if topo.num_links() == 3 { 60 } else { 400 };
        let oracle = brute_force_cost(&topo, &cfg, steps).unwrap();
        worst_gap = worst_gap.max((report.cost - oracle).abs() / oracle.abs().max(1.0));
    }
    outcome(
        worst_kkt <= 1e-6 && worst_gap <= 1e-3 && active,
        format!(
            "max KKT {worst_kkt:.2e}; max oracle gap {worst_gap:.2e}; max slack {worst_slack:.2e}"
        ),
    )
}

fn pareto_monotonicity() -> Outcome {
    let topo = Topology::gen_linear(8).unwrap();
    let min_dc = min_delay_constraint(&topo).unwrap();
    let dcs: Vec<f64> = [4.0, 10.0, 100.0].iter().map(|f| f * min_dc).collect();
    let lambdas: Vec<(f64, f64)> = (0..10)
        .map(|k| (10f64.powf(-1.0 + 0.3 * k as f64), 0.1))
        .collect();
    let points = sweep(&topo, &dcs, &lambdas, &SolverConfig::new(1.0, 1.0, dcs[0]));
    let all_ok = points.iter().all(|p| p.status == PointStatus::Ok);
    let tol = 1e-7;
    let mut frontier = true;
    for curve in points.chunks(lambdas.len()) {
        for w in curve.windows(2) {
            frontier &= w[1].energy <= w[0].energy + tol && w[1].utility <= w[0].utility + tol;
        }
    }
    let mut in_dc = true;
    for k in 0..lambdas.len() {
        for d in 1..dcs.len() {
            let (a, b) = (
                &points[(d - 1) * lambdas.len() + k],
                &points[d * lambdas.len() + k],
            );
            in_dc &= b.cost <= a.cost + tol * a.cost.abs().max(1.0);
        }
    }
    outcome(
        all_ok && frontier && in_dc,
        format!("{} points, all solved: {all_ok}; E/U monotone: {frontier}; cost monotone in D_c: {in_dc}", points.len()),
    )
}

fn distributed_convergence() -> Outcome {
    let mut counts = Vec::new();
    let mut ok = true;
    for n in [4, 8, 16, 32] {
        let topo = Topology::gen_linear(n).unwrap();
        let central = solve(&topo, &SolverConfig::new(5.0, 0.1, 100.0)).unwrap();
        let trace = run(
            &topo,
            &DistConfig::new(5.0, 0.1, 100.0),
            Some(&Reference::from(&central)),
        )
        .unwrap();
        match trace.reached_threshold {
            Some(k) if k <= 500 => counts.push(k),
            _ => ok = false,
        }
    }
    let spread = match (counts.iter().min(), counts.iter().max()) {
        (Some(&lo), Some(&hi)) if lo > 0 => hi as f64 / lo as f64,
        _ => f64::INFINITY,
    };
    outcome(
        ok && spread <= 3.0,
        format!("iterations to 1% for n=4,8,16,32: {counts:?} (spread {spread:.2})"),
    )
}

fn fixed_point_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut converged = true;
    for topo in [
        Topology::gen_linear(8).unwrap(),
        Topology::gen_star(4).unwrap(),
    ] {
        let mut cfg = DistConfig::new(5.0, 0.1, 100.0);
        cfg.max_iter = 20_000;
        cfg.dual_tol = 1e-12;
        let trace = run(&topo, &cfg, None).unwrap();
        converged &= trace.stop == StopReason::DualTolerance;
        let state = trace.state(&topo).unwrap();
        let kkt = kkt_residual(
            &topo,
            &state,
            &trace.dual_state().mu,
            &SolverConfig::new(5.0, 0.1, 100.0),
        );
        worst = worst.max(kkt.max());
    }
    outcome(
        converged && worst <= 1e-5,
        format!("max KKT {worst:.2e}; dual fixed point reached: {converged}"),
    )
}

fn simulator_vs_model() -> Outcome {
    let star = Topology::gen_star(3).unwrap();
    let p = vec![0.5, 0.5];
    let sat = simulate(&star, &SimConfig::saturated(p.clone(), 1_000_000, 7)).unwrap();
    let totals = node_totals(&star, &p);
    let mut worst_sigma = 0.0f64;
    for (k, s) in sat.links.iter().enumerate() {
        let (emp, se) = s.success_rate().unwrap();
        worst_sigma = worst_sigma.max((emp - success_probability(&star, &totals, k)).abs() / se);
    }

    let single = Topology::gen_linear(2).unwrap();
    let mut worst_delay = 0.0f64;
    let mut worst_little = 0.0f64;
    for (i, p) in [0.3, 0.5, 0.9].into_iter().enumerate() {
        let r = 0.5 * p;
        // Only the first link carries traffic; the reverse link is silent.
        let cfg = SimConfig {
            slots: 1_000_000,
            warmup: 10_000,
            seed: 11 + i as u64,
            rates: vec![r, 0.0],
            probabilities: vec![p, 0.0],
            saturated: false,
        };
        let s = &simulate(&single, &cfg).unwrap().links[0];
        let d = s.mean_delay.unwrap();
        worst_delay =
            worst_delay.max((d - link_delay(r, p).unwrap()).abs() / link_delay(r, p).unwrap());
        worst_little = worst_little.max((s.mean_queue / (r * d) - 1.0).abs());
    }
    outcome(
        worst_sigma <= 3.0 && worst_delay <= 0.10 && worst_little <= 0.05,
        format!(
            "success rate {worst_sigma:.2}σ; delay error {:.2}%; Little's law error {:.2}%",
            100.0 * worst_delay,
            100.0 * worst_little
        ),
    )
}

fn ramac(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ramac"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("launching ramac")
}

const SESSION: &[&[&str]] = &[
    &[
        "gen",
        "--shape",
        "linear",
        "--n",
        "4",
        "--out",
        "linear4.json",
    ],
    &["gen", "--shape", "star", "--n", "3", "--out", "star3.json"],
    &[
        "gen",
        "--shape",
        "geometric",
        "--n",
        "6",
        "--factor",
        "0.6",
        "--seed",
        "3",
        "--out",
        "geo6.json",
    ],
    &["mindc", "--topo", "linear4.json", "--out", "mindc.json"],
    &[
        "mindc",
        "--topo",
        "star3.json",
        "--method",
        "bruteforce",
        "--resolution",
        "0.01",
        "--out",
        "mindc_bf.json",
    ],
    &[
        "solve",
        "--topo",
        "linear4.json",
        "--lambda1",
        "5",
        "--lambda2",
        "0.1",
        "--dc",
        "100",
        "--out",
        "solve.json",
    ],
    &[
        "sweep",
        "--topo",
        "linear4.json",
        "--dc-factor",
        "4,10",
        "--lambda1",
        "0.5,5",
        "--lambda2",
        "0.1",
        "--out",
        "sweep.csv",
    ],
    &[
        "distributed",
        "--topo",
        "linear4.json",
        "--lambda1",
        "5",
        "--lambda2",
        "0.1",
        "--dc",
        "100",
        "--reference",
        "solve.json",
        "--trace-out",
        "trace.csv",
        "--out",
        "dist.json",
    ],
    &[
        "simulate",
        "--topo",
        "linear4.json",
        "--solution",
        "solve.json",
        "--slots",
        "50000",
        "--seed",
        "4",
        "--out",
        "sim.csv",
        "--report",
        "sim.json",
    ],
];

fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
    }
    out
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        for args in SESSION {
            let out = ramac(dir.path(), args);
            if !out.status.success() {
                return outcome(
                    false,
                    format!(
                        "`ramac {}` failed: {}",
                        args.join(" "),
                        String::from_utf8_lossy(&out.stderr).trim()
                    ),
                );
            }
        }
    }
    let (a, b) = (digests(dirs[0].path()), digests(dirs[1].path()));
    let manifests: Vec<String> = a
        .keys()
        .filter(|k| k.ends_with(".manifest.json"))
        .cloned()
        .collect();
    let identical = a == b;

    let mut replay_failures = Vec::new();
    for m in &manifests {
        let out = ramac(dirs[0].path(), &["replay", m, "--check"]);
        if !out.status.success() {
            replay_failures.push(m.clone());
        }
    }
    let after = digests(dirs[0].path());
    outcome(
        identical && replay_failures.is_empty() && after == a && manifests.len() == SESSION.len(),
        format!(
            "{} files identical across runs: {identical}; {} manifests replayed, failures {replay_failures:?}",
            a.len(),
            manifests.len()
        ),
    )
}

fn main() {
    let criteria: [Check; 9] = [
        (
            "delay model identity",
            Duration::from_secs(1),
            delay_identity,
        ),
        (
            "feasibility oracle agreement",
            Duration::from_secs(30),
            feasibility_oracle,
        ),
        ("MinDc scaling", Duration::from_secs(300), min_dc_scaling),
        (
            "central solver certification",
            Duration::MAX,
            central_certification,
        ),
        (
            "Pareto monotonicity",
            Duration::from_secs(300),
            pareto_monotonicity,
        ),
        (
            "distributed convergence",
            Duration::from_secs(300),
            distributed_convergence,
        ),
        (
            "distributed/central fixed point",
            Duration::MAX,
            fixed_point_equivalence,
        ),
        (
            "simulator vs model",
            Duration::from_secs(120),
            simulator_vs_model,
        ),
        ("determinism", Duration::MAX, determinism),
    ];
    let mut unexpected = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if elapsed > *budget {
            result.pass = false;
            result
                .detail
                .push_str(&format!("; over time budget {budget:?}"));
        }
        let known = KNOWN_RED.contains(&id);
        let tag = if result.pass { "PASS" } else { "FAIL" };
        let note = if known && !result.pass {
            " (known)"
        } else {
            ""
        };
        println!(
            "[{tag}]{note} {id}. {name} ({:.2}s): {}",
            elapsed.as_secs_f64(),
            result.detail
        );
        if !result.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
