use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use ramac_core::central::{self, kkt_residual, PointStatus};
use ramac_core::distributed::{self, Reference};
use ramac_core::feasibility::{
    brute_force_maxmin, maxmin_throughput, min_delay_constraint, DEFAULT_TOL,
};
use ramac_core::sim::{compare_to_model, simulate};
use ramac_core::{Config, DistConfig, Error, SimConfig, Topology};
use serde_json::json;

use crate::cli::{
    Cli, Command, DistributedArgs, GenArgs, Method, MindcArgs, ReplayArgs, Shape, SimulateArgs,
    SolveArgs, SweepArgs,
};
use crate::io::{self, num, opt, FileDigest, RunManifest, RunRecord};

/// Delay bounds below this multiple of MinDc leave little room to trade energy for utility.
const COMFORTABLE_DC_FACTOR: f64 = 4.0;

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    let record = match command {
        Command::Gen(args) => gen(args)?,
        Command::Mindc(args) => mindc(args)?,
        Command::Solve(args) => solve(args)?,
        Command::Sweep(args) => sweep(args)?,
        Command::Distributed(args) => distributed(args)?,
        Command::Simulate(args) => simulate_cmd(args)?,
        Command::Replay(args) => return replay(args),
    };
    if let Some(path) = io::write_manifest(argv, record)? {
        eprintln!("manifest: {}", path.display());
    }
    Ok(())
}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

fn warn_if_tight(dc: f64, min_dc: f64) {
    if dc < COMFORTABLE_DC_FACTOR * min_dc {
        eprintln!(
            "warning: delay bound {dc} is below {COMFORTABLE_DC_FACTOR}×MinDc = {}; the feasible region is narrow",
            COMFORTABLE_DC_FACTOR * min_dc
        );
    }
}

fn gen(args: GenArgs) -> Result<RunRecord> {
    if args.shape != Shape::Geometric && (args.factor.is_some() || args.seed.is_some()) {
        return Err(validation(
            "--factor and --seed apply to geometric topologies only",
        ));
    }
    let topo = match args.shape {
        Shape::Linear => Topology::gen_linear(args.n)?,
        Shape::Star => Topology::gen_star(args.n)?,
        Shape::Geometric => {
            let factor = args
                .factor
                .ok_or_else(|| validation("geometric topologies need --factor"))?;
            Topology::gen_geometric(args.n, factor, args.seed.unwrap_or(0))?
        }
    };
    topo.save(&args.out)?;
    println!("nodes={} links={}", topo.num_nodes(), topo.num_links());
    Ok(RunRecord {
        subcommand: "gen",
        config: json!({
            "shape": format!("{:?}", args.shape).to_lowercase(),
            "n": args.n,
            "factor": args.factor,
            "seed": args.seed,
        }),
        inputs: vec![],
        outputs: vec![args.out],
        seed: args.seed,
    })
}

fn mindc(args: MindcArgs) -> Result<RunRecord> {
    let topo = io::load_topology(&args.topo)?;
    let report = match args.method {
        Method::Barrier => maxmin_throughput(&topo, DEFAULT_TOL)?,
        Method::Bruteforce => brute_force_maxmin(&topo, args.resolution)?,
    };
    println!(
        "min_dc={} min_throughput={} iterations={}",
        num(report.min_dc),
        num(report.min_throughput),
        report.iterations
    );
    let mut outputs = vec![];
    if let Some(out) = &args.out {
        io::write_json(out, &report)?;
        outputs.push(out.clone());
    }
    Ok(RunRecord {
        subcommand: "mindc",
        config: json!({
            "method": format!("{:?}", args.method).to_lowercase(),
            "resolution": args.resolution,
            "tol": DEFAULT_TOL,
        }),
        inputs: vec![args.topo],
        outputs,
        seed: None,
    })
}

fn solve(args: SolveArgs) -> Result<RunRecord> {
    let topo = io::load_topology(&args.topo)?;
    let cfg = Config::new(args.lambda1, args.lambda2, args.dc);
    cfg.validate()?;
    warn_if_tight(args.dc, min_delay_constraint(&topo)?);
    let report = central::solve(&topo, &cfg)?;
    io::write_json(&args.out, &report)?;
    println!(
        "cost={} energy={} utility={} iterations={} kkt={}",
        num(report.cost),
        num(report.energy),
        num(report.utility),
        report.iterations,
        num(report.kkt.max())
    );
    Ok(RunRecord {
        subcommand: "solve",
        config: serde_json::to_value(&cfg)?,
        inputs: vec![args.topo],
        outputs: vec![args.out],
        seed: None,
    })
}

fn sweep(args: SweepArgs) -> Result<RunRecord> {
    let topo = io::load_topology(&args.topo)?;
    let lambdas: Vec<(f64, f64)> = args
        .lambda1
        .iter()
        .flat_map(|&l1| args.lambda2.iter().map(move |&l2| (l1, l2)))
        .collect();
    for &(l1, l2) in &lambdas {
        Config::new(l1, l2, 2.0).validate()?;
    }
    let min_dc = min_delay_constraint(&topo)?;
    let dcs: Vec<f64> = if args.dc_factor.is_empty() {
        args.dc.clone()
    } else {
        args.dc_factor.iter().map(|f| f * min_dc).collect()
    };
    for &dc in &dcs {
        if dc.is_nan() || dc <= 1.0 || !dc.is_finite() {
            return Err(validation(format!("delay bound {dc} must exceed one slot")));
        }
        warn_if_tight(dc, min_dc);
    }
    let template = Config::new(1.0, 1.0, 2.0);
    let points = central::sweep(&topo, &dcs, &lambdas, &template);

    let header: Vec<String> = [
        "dc",
        "lambda1",
        "lambda2",
        "energy",
        "utility",
        "cost",
        "iterations",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut failed = 0;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let (values, status) = match &p.status {
                PointStatus::Ok => (
                    [num(p.energy), num(p.utility), num(p.cost)],
                    "ok".to_string(),
                ),
                PointStatus::Failed(msg) => {
                    failed += 1;
                    (Default::default(), format!("failed: {msg}"))
                }
            };
            let [e, u, c] = values;
            vec![
                num(p.dc),
                num(p.lambda1),
                num(p.lambda2),
                e,
                u,
                c,
                p.iterations.to_string(),
                status,
            ]
        })
        .collect();
    io::write_csv(&args.out, &header, &rows)?;
    println!(
        "points={} failed={failed} min_dc={}",
        points.len(),
        num(min_dc)
    );
    Ok(RunRecord {
        subcommand: "sweep",
        config: json!({
            "dc": dcs,
            "lambdas": lambdas,
            "solver": template,
        }),
        inputs: vec![args.topo],
        outputs: vec![args.out],
        seed: None,
    })
}

fn parse_watch(topo: &Topology, specs: &[String]) -> Result<Vec<usize>> {
    if specs.is_empty() {
        return Ok(vec![0]);
    }
    specs
        .iter()
        .map(|s| {
            let (a, b) = s
                .split_once('-')
                .ok_or_else(|| validation(format!("watched link '{s}' is not FROM-TO")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<u32>()
                    .map_err(|_| validation(format!("bad node id '{v}' in '{s}'")))
            };
            topo.link_index(parse(a)?, parse(b)?)
                .ok_or_else(|| validation(format!("no link {s} in the topology")))
        })
        .collect()
}

fn distributed(args: DistributedArgs) -> Result<RunRecord> {
    let topo = io::load_topology(&args.topo)?;
    let watch = parse_watch(&topo, &args.watch)?;
    let mut cfg = DistConfig::new(args.lambda1, args.lambda2, args.dc);
    cfg.alpha = args.alpha;
    cfg.max_iter = args.iters;
    cfg.p0 = args.p0;
    cfg.mu0 = args.mu0;
    cfg.threshold = args.threshold;
    cfg.stop_at_threshold = !args.no_early_stop;
    cfg.dual_tol = args.dual_tol;
    cfg.validate()?;
    let reference = match &args.reference {
        Some(path) => {
            let sol = io::load_solution(path, &topo)?;
            Some(Reference {
                cost: sol.cost,
                probabilities: sol.state.probabilities().to_vec(),
            })
        }
        None => None,
    };
    warn_if_tight(args.dc, min_delay_constraint(&topo)?);
    let trace = distributed::run(&topo, &cfg, reference.as_ref())?;

    let mut header: Vec<String> = ["iter", "cost", "cost_err_pct", "max_constraint_violation"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for &k in &watch {
        let link = &topo.links()[k];
        let tag = format!("{}_{}", topo.node_id(link.from), topo.node_id(link.to));
        for field in ["p", "r", "mu", "err_pct"] {
            header.push(format!("{field}_{tag}"));
        }
    }
    let rows: Vec<Vec<String>> = trace
        .rounds
        .iter()
        .map(|round| {
            let mut row = vec![
                round.iter.to_string(),
                num(round.cost),
                opt(round.cost_err.map(|e| 100.0 * e)),
                num(round.max_violation),
            ];
            for &k in &watch {
                let err = reference
                    .as_ref()
                    .map(|r| 100.0 * (round.p[k] - r.probabilities[k]).abs() / r.probabilities[k]);
                row.extend([num(round.p[k]), num(round.r[k]), num(round.mu[k]), opt(err)]);
            }
            row
        })
        .collect();
    io::write_csv(&args.trace_out, &header, &rows)?;

    let last = trace.last();
    let state = trace.state(&topo)?;
    let kkt = kkt_residual(
        &topo,
        &state,
        &last.mu,
        &Config::new(args.lambda1, args.lambda2, args.dc),
    );
    println!(
        "iterations={} cost={} cost_err_pct={} reached_threshold={} stop={:?}",
        last.iter,
        num(last.cost),
        opt(last.cost_err.map(|e| 100.0 * e)),
        trace
            .reached_threshold
            .map(|i| i.to_string())
            .unwrap_or_else(|| "none".into()),
        trace.stop
    );
    let mut outputs = vec![args.trace_out.clone()];
    if let Some(out) = &args.out {
        io::write_json(
            out,
            &json!({
                "stop": trace.stop,
                "iterations": last.iter,
                "reached_threshold": trace.reached_threshold,
                "cost": last.cost,
                "cost_err": last.cost_err,
                "reference_cost": trace.reference_cost,
                "messages_per_round": trace.messages_per_round,
                "state": state,
                "mu": last.mu,
                "residuals": last.residuals,
                "kkt": kkt,
            }),
        )?;
        outputs.push(out.clone());
    }
    let mut inputs = vec![args.topo];
    inputs.extend(args.reference);
    Ok(RunRecord {
        subcommand: "distributed",
        config: json!({ "solver": cfg, "watch": watch }),
        inputs,
        outputs,
        seed: None,
    })
}

fn simulate_cmd(args: SimulateArgs) -> Result<RunRecord> {
    let topo = io::load_topology(&args.topo)?;
    let sol = io::load_solution(&args.solution, &topo)?;
    let cfg = SimConfig {
        slots: args.slots,
        warmup: args.warmup.unwrap_or(args.slots / 100),
        seed: args.seed,
        rates: sol.state.rates().to_vec(),
        probabilities: sol.state.probabilities().to_vec(),
        saturated: args.saturated,
    };
    cfg.validate(&topo)?;
    let report = simulate(&topo, &cfg)?;
    let comparison = compare_to_model(&report, &topo, &sol.state)?;

    let header: Vec<String> = [
        "link_from",
        "link_to",
        "emp_delay",
        "emp_delay_se",
        "analytic_delay",
        "emp_throughput",
        "analytic_throughput",
        "attempts",
        "successes",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .links
        .iter()
        .zip(&comparison)
        .enumerate()
        .map(|(k, (s, c))| {
            let link = &topo.links()[k];
            vec![
                topo.node_id(link.from).to_string(),
                topo.node_id(link.to).to_string(),
                opt(s.mean_delay),
                opt(s.delay_se),
                opt(c.delay.as_ref().map(|d| d.analytic)),
                num(s.throughput),
                num(c.throughput.analytic),
                s.attempts.to_string(),
                s.successes.to_string(),
            ]
        })
        .collect();
    io::write_csv(&args.out, &header, &rows)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(path) = &args.report {
        io::write_json(path, &json!({ "report": report, "comparison": comparison }))?;
        outputs.push(path.clone());
    }
    let unstable = comparison.iter().filter(|c| c.delay_undefined).count();
    println!(
        "links={} measured_slots={} unstable_links={unstable}",
        rows.len(),
        report.measured_slots
    );
    Ok(RunRecord {
        subcommand: "simulate",
        config: serde_json::to_value(&cfg)?,
        inputs: vec![args.topo, args.solution],
        outputs,
        seed: Some(args.seed),
    })
}

fn replay(args: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let argv = &manifest.argv;
    let cli = Cli::try_parse_from(std::iter::once("ramac".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| validation(format!("manifest command line does not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(validation("a manifest cannot record a replay"));
    }
    for input in &manifest.inputs {
        let now = FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            bail!(validation(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    run(cli.command, argv)?;
    if args.check {
        let mut mismatched: Vec<PathBuf> = vec![];
        for out in &manifest.outputs {
            let now = FileDigest::of(&out.path).context("re-reading output")?;
            if now.sha256 != out.sha256 {
                mismatched.push(out.path.clone());
            }
        }
        if !mismatched.is_empty() {
            return Err(validation(format!(
                "outputs differ from the manifest: {mismatched:?}"
            )));
        }
        println!(
            "replay matches {} recorded output(s)",
            manifest.outputs.len()
        );
    }
    Ok(())
}
