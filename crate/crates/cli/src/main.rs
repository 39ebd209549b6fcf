use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use popproto::broadcast::{PushPull, Rumor};
use popproto::fourstate::{FourStateProtocol, Votes};
use popproto::harness::{
    emit, render, run_experiment, ExperimentSpec, Format, Imbalance, Metadata, OutputSpec, ProtocolName,
};
use popproto::leader::LeaderElection;
use popproto::majority::PhasedMajority;
use popproto::oracle::{explore, mc_probability, Event, CLASS_CAP};
use popproto::params::{LeaderConstants, ProtocolParams, DEFAULT_C_BIG, DEFAULT_C_SMALL};
use popproto::protocol::{check_symmetry, Protocol, SymmetryMode, EXHAUSTIVE_PAIR_CAP};

#[derive(Parser)]
#[command(name = "popproto", version, about = "Population protocol simulations and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials over a list of population sizes.
    Sweep(SweepArgs),
    /// Exhaustively explore the configuration classes of a tiny population.
    Explore(ExploreArgs),
    /// Estimate the probability of a named event by Monte Carlo.
    Estimate(EstimateArgs),
    /// Check transition symmetry and run short invariant-checked sweeps.
    Selftest,
}

#[derive(Args)]
struct ConstantArgs {
    /// Small clock constant of the majority protocol.
    #[arg(long = "c")]
    c: Option<u32>,
    /// Large clock constant of the majority protocol.
    #[arg(long = "C")]
    big_c: Option<u32>,
    /// Use the miniature leader constants.
    #[arg(long)]
    mini_constants: bool,
}

impl ConstantArgs {
    fn leader(&self) -> Option<LeaderConstants> {
        self.mini_constants.then(LeaderConstants::miniature)
    }

    fn params(&self, n: usize) -> Result<ProtocolParams> {
        Ok(ProtocolParams::with_constants(
            n,
            self.c.unwrap_or(DEFAULT_C_SMALL),
            self.big_c.unwrap_or(DEFAULT_C_BIG),
            self.leader().unwrap_or_default(),
        )?)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec file (JSON); flags given alongside override its fields.
    spec: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<ProtocolName>,
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `minimal`, an integer margin, or a fraction such as `0.5`.
    #[arg(long)]
    imbalance: Option<Imbalance>,
    #[command(flatten)]
    constants: ConstantArgs,
    #[arg(long)]
    horizon_factor: Option<f64>,
    #[arg(long)]
    reference_n: Option<usize>,
    /// bcer-majority: agents without a vote count as undecided.
    #[arg(long)]
    strict_output: bool,
    /// Output file; results go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    /// Also write one JSON line per trial to this file.
    #[arg(long)]
    trials_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    protocol: ProtocolName,
    #[arg(long)]
    n: usize,
    /// Majority margin; every feasible split is explored when absent.
    #[arg(long)]
    imbalance: Option<Imbalance>,
    #[command(flatten)]
    constants: ConstantArgs,
    #[arg(long, default_value_t = CLASS_CAP)]
    cap: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    event: Event,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value = "bcer-leader")]
    protocol: ProtocolName,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "minimal")]
    imbalance: Imbalance,
    #[command(flatten)]
    constants: ConstantArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Explore(args) => explore_cmd(args),
        Command::Estimate(args) => estimate(args),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let mut spec = match &args.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => {
            let Some(protocol) = args.protocol else { bail!("either a spec file or --protocol is required") };
            ExperimentSpec::new(protocol, vec![], 30, 1)
        }
    };
    if let Some(p) = args.protocol {
        spec.protocol = p;
    }
    if !args.n.is_empty() {
        spec.n_values = args.n;
    }
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.seed_base = s;
    }
    if let Some(i) = args.imbalance {
        spec.imbalance = i;
    }
    if args.constants.c.is_some() {
        spec.constants.c = args.constants.c;
    }
    if args.constants.big_c.is_some() {
        spec.constants.big_c = args.constants.big_c;
    }
    if let Some(k) = args.constants.leader() {
        spec.constants.leader = Some(k);
    }
    if let Some(h) = args.horizon_factor {
        spec.horizon_factor = h;
    }
    if args.strict_output {
        spec.strict_output = true;
    }
    if args.reference_n.is_some() {
        spec.reference_n = args.reference_n;
    }
    if let Some(path) = args.out {
        let format = args.format.or(spec.output.as_ref().map(|o| o.format)).unwrap_or_default();
        spec.output = Some(OutputSpec { path, format });
    } else if let (Some(format), Some(out)) = (args.format, spec.output.as_mut()) {
        out.format = format;
    }

    let sweep = run_experiment(&spec)?;
    let metadata = Metadata::of(&spec);
    match &spec.output {
        Some(out) => emit(&sweep.rows, &metadata, out.format, &out.path)?,
        None => print!("{}", render(&sweep.rows, &metadata, args.format.unwrap_or_default())),
    }
    if let Some(path) = &args.trials_out {
        let mut lines = String::new();
        for t in &sweep.trials {
            lines.push_str(&serde_json::to_string(t)?);
            lines.push('\n');
        }
        std::fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = sweep.trials.iter().filter(|t| !t.succeeded()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed or tripped an invariant", sweep.trials.len());
    }
    Ok(failed == 0)
}

fn print_report<P: Protocol>(
    protocol: &P,
    scenario: &P::Scenario,
    n: usize,
    cap: usize,
    label: serde_json::Value,
) -> Result<bool>
where
    P::Output: serde::Serialize,
{
    let report = explore(protocol, scenario, n, cap)?;
    let ok = report.converges_with_probability_one();
    println!("{}", json!({ "instance": label, "report": report }));
    Ok(ok)
}

fn explore_cmd(args: ExploreArgs) -> Result<bool> {
    let n = args.n;
    let splits: Vec<Votes> = match args.imbalance {
        Some(i) => vec![i.votes(n)?],
        None => (0..=n).filter_map(|a| Votes::new(a, n - a).ok()).collect(),
    };
    let mut ok = true;
    match args.protocol {
        ProtocolName::Fourstate => {
            for v in &splits {
                ok &= print_report(&FourStateProtocol, v, n, args.cap, json!({ "n": n, "a": v.a(), "b": v.b() }))?;
            }
        }
        ProtocolName::BcerMajority => {
            let p = PhasedMajority::new(args.constants.params(n)?)?;
            for v in &splits {
                ok &= print_report(&p, v, n, args.cap, json!({ "n": n, "a": v.a(), "b": v.b() }))?;
            }
        }
        ProtocolName::BcerLeader => {
            let p = LeaderElection::new(args.constants.params(n)?)?;
            ok &= print_report(&p, &(), n, args.cap, json!({ "n": n, "states": p.state_count() }))?;
        }
        ProtocolName::Pushpull => {
            ok &= print_report(&PushPull, &Rumor { n, source: 0 }, n, args.cap, json!({ "n": n }))?;
        }
    }
    Ok(ok)
}

fn estimate(args: EstimateArgs) -> Result<bool> {
    let n = args.n;
    let est = match args.protocol {
        ProtocolName::Fourstate => {
            let votes = args.imbalance.votes(n)?;
            let horizon = popproto::fourstate::fourstate_horizon(n);
            mc_probability(&FourStateProtocol, &votes, n, horizon, args.event, args.trials, args.seed)?
        }
        ProtocolName::BcerMajority => {
            let votes = args.imbalance.votes(n)?;
            let p = PhasedMajority::new(args.constants.params(n)?)?;
            mc_probability(&p, &votes, n, p.horizon(), args.event, args.trials, args.seed)?
        }
        ProtocolName::BcerLeader => {
            let p = LeaderElection::new(args.constants.params(n)?)?;
            mc_probability(&p, &(), n, p.horizon(), args.event, args.trials, args.seed)?
        }
        ProtocolName::Pushpull => {
            let horizon = popproto::broadcast::pushpull_horizon(n);
            mc_probability(&PushPull, &Rumor { n, source: 0 }, n, horizon, args.event, args.trials, args.seed)?
        }
    };
    println!("{}", serde_json::to_string(&est)?);
    Ok(true)
}

fn symmetry<P: Protocol>(label: &str, protocol: &P, mode: SymmetryMode, budget: u64) -> Result<bool> {
    let verdict = check_symmetry(protocol, mode, budget).with_context(|| format!("symmetry check of {label}"))?;
    let ok = verdict.is_symmetric();
    println!("{} symmetry {label}: {} pairs", if ok { "PASS" } else { "FAIL" }, verdict.pairs_checked);
    if let Some((a, b)) = verdict.counterexample {
        println!("  counterexample: {a:?} / {b:?}");
    }
    Ok(ok)
}

fn selftest() -> Result<bool> {
    let mut ok = true;
    let exhaustive = SymmetryMode::Exhaustive;
    let sampled = SymmetryMode::Sampled { seed: 1 };
    ok &= symmetry("fourstate", &FourStateProtocol, exhaustive, EXHAUSTIVE_PAIR_CAP)?;
    ok &= symmetry("pushpull", &PushPull, exhaustive, EXHAUSTIVE_PAIR_CAP)?;
    let tiny = ProtocolParams::with_constants(2, 1, 16, LeaderConstants::miniature())?;
    ok &= symmetry("bcer-majority n=2 c=1 C=16", &PhasedMajority::new(tiny)?, exhaustive, EXHAUSTIVE_PAIR_CAP)?;
    let tiny = ProtocolParams::with_constants(3, 1, 16, LeaderConstants::miniature())?;
    ok &= symmetry("bcer-leader n=3 miniature", &LeaderElection::new(tiny)?, exhaustive, EXHAUSTIVE_PAIR_CAP)?;
    let full = ProtocolParams::new(1024)?;
    ok &= symmetry("bcer-majority n=1024", &PhasedMajority::new(full)?, sampled, 1_000_000)?;
    ok &= symmetry("bcer-leader n=1024", &LeaderElection::new(full)?, sampled, 1_000_000)?;

    let suites = [
        (ProtocolName::Fourstate, 101, 20),
        (ProtocolName::BcerMajority, 64, 4),
        (ProtocolName::BcerLeader, 64, 4),
        (ProtocolName::Pushpull, 1024, 20),
    ];
    for (protocol, n, trials) in suites {
        let sweep = run_experiment(&ExperimentSpec::new(protocol, vec![n], trials, 7))?;
        let good = sweep.all_succeeded();
        println!("{} invariants {protocol} n={n}: {trials} runs", if good { "PASS" } else { "FAIL" });
        ok &= good;
    }
    Ok(ok)
}
