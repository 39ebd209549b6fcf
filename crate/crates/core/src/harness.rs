//! Experiment sweeps: seeded trials per population size, aggregate
//! statistics, and CSV/JSON output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadcast::{pushpull_horizon, PushPull, Rumor};
use crate::engine::{run, Configuration, EngineError, Outcome};
use crate::fourstate::{fourstate_horizon, FourStateProtocol, Votes};
use crate::leader::LeaderElection;
use crate::majority::{PhasedMajority, StrictMajority};
use crate::params::{LeaderConstants, ParamsError, ProtocolParams, DEFAULT_C_BIG, DEFAULT_C_SMALL};
use crate::protocol::Protocol;
use crate::rng::{trial_seed, GENERATOR_ID};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown protocol `{0}` (expected fourstate, bcer-majority, bcer-leader or pushpull)")]
    UnknownProtocol(String),
    #[error("imbalance infeasible for n={n}: {reason}")]
    Imbalance { n: usize, reason: String },
    #[error("invalid imbalance `{0}` (expected `minimal`, an integer margin, or a fraction in (0,1])")]
    ImbalanceSyntax(String),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("reference n={0} is not among the swept n values")]
    ReferenceMissing(usize),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    SpecFormat { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Fourstate,
    BcerMajority,
    BcerLeader,
    Pushpull,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 4] =
        [ProtocolName::Fourstate, ProtocolName::BcerMajority, ProtocolName::BcerLeader, ProtocolName::Pushpull];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolName::Fourstate => "fourstate",
            ProtocolName::BcerMajority => "bcer-majority",
            ProtocolName::BcerLeader => "bcer-leader",
            ProtocolName::Pushpull => "pushpull",
        }
    }

    pub fn is_majority(self) -> bool {
        matches!(self, ProtocolName::Fourstate | ProtocolName::BcerMajority)
    }
}

impl FromStr for ProtocolName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| HarnessError::UnknownProtocol(s.to_string()))
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Initial margin `|a₀ - b₀|` of a majority run; the majority always votes A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Imbalance {
    /// `a₀ = ⌊n/2⌋ + 1`: margin 1 for odd `n`, 2 for even `n`.
    #[default]
    Minimal,
    Absolute(usize),
    /// Margin `⌈ε n⌉`, rounded up to the parity of `n`.
    Fraction(f64),
}

impl Imbalance {
    pub fn votes(self, n: usize) -> Result<Votes, HarnessError> {
        let infeasible = |reason: String| HarnessError::Imbalance { n, reason };
        let margin = match self {
            Imbalance::Minimal => 2 - n % 2,
            Imbalance::Absolute(k) => {
                if k % 2 != n % 2 {
                    return Err(infeasible(format!("margin {k} and n have different parity")));
                }
                k
            }
            Imbalance::Fraction(eps) => {
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(infeasible(format!("fraction {eps} outside (0,1]")));
                }
                let k = (eps * n as f64).ceil() as usize;
                k + (k % 2 != n % 2) as usize
            }
        };
        if margin == 0 || margin > n {
            return Err(infeasible(format!("margin {margin} outside 1..={n}")));
        }
        Ok(Votes::new((n + margin) / 2, (n - margin) / 2)?)
    }
}

impl FromStr for Imbalance {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::ImbalanceSyntax(s.to_string());
        if s == "minimal" {
            Ok(Imbalance::Minimal)
        } else if s.contains('.') {
            s.parse().map(Imbalance::Fraction).map_err(|_| bad())
        } else {
            s.parse().map(Imbalance::Absolute).map_err(|_| bad())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(HarnessError::InvalidSpec(format!("unknown format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<u32>,
    #[serde(default, rename = "C", skip_serializing_if = "Option::is_none")]
    pub big_c: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: ProtocolName,
    pub n_values: Vec<usize>,
    pub trials: u64,
    pub seed_base: u64,
    #[serde(default)]
    pub imbalance: Imbalance,
    #[serde(default)]
    pub constants: ConstantOverrides,
    /// Multiplies each protocol's default interaction budget.
    #[serde(default = "one")]
    pub horizon_factor: f64,
    /// Defaults to the smallest swept `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_n: Option<usize>,
    /// bcer-majority only: agents without a vote count as undecided instead
    /// of answering with their backup (see [`StrictMajority`]).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub strict_output: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

fn one() -> f64 {
    1.0
}

impl ExperimentSpec {
    pub fn new(protocol: ProtocolName, n_values: Vec<usize>, trials: u64, seed_base: u64) -> Self {
        ExperimentSpec {
            protocol,
            n_values,
            trials,
            seed_base,
            imbalance: Imbalance::Minimal,
            constants: ConstantOverrides::default(),
            horizon_factor: 1.0,
            reference_n: None,
            strict_output: false,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::SpecFormat { path: path.into(), source })
    }

    pub fn small_c(&self) -> u32 {
        self.constants.c.unwrap_or(DEFAULT_C_SMALL)
    }

    pub fn big_c(&self) -> u32 {
        self.constants.big_c.unwrap_or(DEFAULT_C_BIG)
    }

    pub fn leader_constants(&self) -> LeaderConstants {
        self.constants.leader.unwrap_or_default()
    }

    fn params(&self, n: usize) -> Result<ProtocolParams, HarnessError> {
        Ok(ProtocolParams::with_constants(n, self.small_c(), self.big_c(), self.leader_constants())?)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::InvalidSpec("trials must be positive".into()));
        }
        if !(self.horizon_factor > 0.0 && self.horizon_factor.is_finite()) {
            return Err(HarnessError::InvalidSpec(format!("horizon_factor {} must be positive", self.horizon_factor)));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < 2) {
            return Err(EngineError::InvalidPopulation(n).into());
        }
        if self.strict_output && self.protocol != ProtocolName::BcerMajority {
            return Err(HarnessError::InvalidSpec("strict_output applies to bcer-majority only".into()));
        }
        if let Some(r) = self.reference_n {
            if !self.n_values.contains(&r) {
                return Err(HarnessError::ReferenceMissing(r));
            }
        }
        Ok(())
    }

    fn horizon(&self, base: u64) -> u64 {
        ((base as f64 * self.horizon_factor).ceil() as u64).max(1)
    }
}

/// Aux keys that count invariant violations; any nonzero value fails a run.
pub const INVARIANT_KEYS: [&str; 5] = [
    "conservation_violations",
    "vote_accounting_violations",
    "margin_check_failures",
    "best_decreases",
    "informed_decreases",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: u64,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: u64,
    pub convergence_step: Option<u64>,
    pub parallel_time: Option<f64>,
    pub aux: BTreeMap<&'static str, u64>,
}

impl TrialRecord {
    pub fn violations(&self) -> u64 {
        INVARIANT_KEYS.iter().filter_map(|k| self.aux.get(k)).sum()
    }

    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::ConvergedCorrect && self.violations() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub protocol: String,
    pub n: usize,
    pub trials: u64,
    pub success_rate: f64,
    pub mean_time: Option<f64>,
    pub median_time: Option<f64>,
    pub p95_time: Option<f64>,
    pub mean_restarts: Option<f64>,
    pub normalized_time: Option<f64>,
}

pub const CSV_HEADER: &str =
    "protocol,n,trials,success_rate,mean_time,median_time,p95_time,mean_restarts,normalized_time";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub trials: Vec<TrialRecord>,
    pub rows: Vec<StatsRow>,
}

impl Sweep {
    pub fn all_succeeded(&self) -> bool {
        self.trials.iter().all(TrialRecord::succeeded)
    }

    pub fn trials_for(&self, n: usize) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |t| t.n == n)
    }
}

fn run_trials<P: Protocol>(
    protocol: &P,
    scenario: &P::Scenario,
    n: usize,
    horizon: u64,
    spec: &ExperimentSpec,
) -> Result<Vec<TrialRecord>, HarnessError> {
    let target = protocol.target(scenario);
    (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(spec.seed_base, n as u64, trial);
            let mut config = Configuration::from_protocol(protocol, n, scenario, seed)?;
            let r = run(&mut config, protocol, target, horizon)?;
            Ok(TrialRecord {
                n,
                trial,
                seed,
                outcome: r.outcome,
                steps: r.steps,
                convergence_step: r.convergence_step,
                parallel_time: r.parallel_time_f64(),
                aux: r.aux,
            })
        })
        .collect()
}

fn trials_for_n(spec: &ExperimentSpec, n: usize) -> Result<Vec<TrialRecord>, HarnessError> {
    match spec.protocol {
        ProtocolName::Fourstate => {
            let votes = spec.imbalance.votes(n)?;
            run_trials(&FourStateProtocol, &votes, n, spec.horizon(fourstate_horizon(n)), spec)
        }
        ProtocolName::BcerMajority => {
            let votes = spec.imbalance.votes(n)?;
            let p = PhasedMajority::new(spec.params(n)?)?;
            let horizon = spec.horizon(p.horizon());
            if spec.strict_output {
                run_trials(&StrictMajority(p), &votes, n, horizon, spec)
            } else {
                run_trials(&p, &votes, n, horizon, spec)
            }
        }
        ProtocolName::BcerLeader => {
            let p = LeaderElection::new(spec.params(n)?)?;
            run_trials(&p, &(), n, spec.horizon(p.horizon()), spec)
        }
        ProtocolName::Pushpull => {
            let rumor = Rumor { n, source: 0 };
            run_trials(&PushPull, &rumor, n, spec.horizon(pushpull_horizon(n)), spec)
        }
    }
}

/// Runs every trial of `spec`. Trial `k` at size `n` uses seed
/// `trial_seed(seed_base, n, k)`; results are ordered by `(n, k)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Sweep, HarnessError> {
    spec.validate()?;
    let mut trials = Vec::new();
    for &n in &spec.n_values {
        log::info!("{} n={} trials={}", spec.protocol, n, spec.trials);
        trials.extend(trials_for_n(spec, n)?);
    }
    let rows = aggregate(spec, &trials);
    Ok(Sweep { trials, rows })
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<StatsRow>, HarnessError> {
    Ok(run_experiment(spec)?.rows)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Middle value, or the mean of the two middle values; `xs` sorted.
fn median(xs: &[f64]) -> Option<f64> {
    let k = xs.len();
    match k {
        0 => None,
        _ if k % 2 == 1 => Some(xs[k / 2]),
        _ => Some((xs[k / 2 - 1] + xs[k / 2]) / 2.0),
    }
}

/// Nearest-rank 95th percentile; `xs` sorted.
fn p95(xs: &[f64]) -> Option<f64> {
    let k = xs.len();
    (k > 0).then(|| xs[((0.95 * k as f64).ceil() as usize).clamp(1, k) - 1])
}

/// One row per swept `n`. Times are parallel times of successful runs only.
pub fn aggregate(spec: &ExperimentSpec, trials: &[TrialRecord]) -> Vec<StatsRow> {
    let mut rows: Vec<StatsRow> = spec
        .n_values
        .iter()
        .map(|&n| {
            let runs: Vec<&TrialRecord> = trials.iter().filter(|t| t.n == n).collect();
            let mut times: Vec<f64> = runs.iter().filter(|t| t.succeeded()).filter_map(|t| t.parallel_time).collect();
            times.sort_by(f64::total_cmp);
            let successes = runs.iter().filter(|t| t.succeeded()).count();
            let restarts: Vec<f64> = runs.iter().filter_map(|t| t.aux.get("restarts")).map(|&r| r as f64).collect();
            StatsRow {
                protocol: spec.protocol.to_string(),
                n,
                trials: runs.len() as u64,
                success_rate: successes as f64 / runs.len().max(1) as f64,
                mean_time: mean(&times),
                median_time: median(&times),
                p95_time: p95(&times),
                mean_restarts: mean(&restarts),
                normalized_time: None,
            }
        })
        .collect();
    let reference = spec.reference_n.or_else(|| spec.n_values.iter().copied().min());
    let base = reference.and_then(|r| rows.iter().find(|row| row.n == r)).and_then(|row| row.mean_time);
    if let Some(base) = base {
        for row in &mut rows {
            row.normalized_time = row.mean_time.map(|t| t / base);
        }
    }
    rows
}

/// Provenance written alongside every result file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub protocol: ProtocolName,
    pub seed_base: u64,
    pub trials: u64,
    pub n_values: Vec<usize>,
    pub imbalance: Option<Imbalance>,
    pub c: u32,
    #[serde(rename = "C")]
    pub big_c: u32,
    pub leader_constants: LeaderConstants,
    pub horizon_factor: f64,
    pub reference_n: Option<usize>,
    pub strict_output: bool,
    pub generator: &'static str,
    pub version: &'static str,
}

impl Metadata {
    pub fn of(spec: &ExperimentSpec) -> Metadata {
        Metadata {
            protocol: spec.protocol,
            seed_base: spec.seed_base,
            trials: spec.trials,
            n_values: spec.n_values.clone(),
            imbalance: spec.protocol.is_majority().then_some(spec.imbalance),
            c: spec.small_c(),
            big_c: spec.big_c(),
            leader_constants: spec.leader_constants(),
            horizon_factor: spec.horizon_factor,
            reference_n: spec.reference_n.or_else(|| spec.n_values.iter().copied().min()),
            strict_output: spec.strict_output,
            generator: GENERATOR_ID,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

fn csv_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// File contents for `rows`. CSV starts with a `# {metadata json}` line
/// followed by [`CSV_HEADER`]; JSON is `{"metadata": ..., "rows": [...]}`.
pub fn render(rows: &[StatsRow], metadata: &Metadata, format: Format) -> String {
    let meta = serde_json::to_string(metadata).expect("metadata serializes");
    match format {
        Format::Csv => {
            let mut out = format!("# {meta}\n{CSV_HEADER}\n");
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.protocol,
                    r.n,
                    r.trials,
                    r.success_rate,
                    csv_field(r.mean_time),
                    csv_field(r.median_time),
                    csv_field(r.p95_time),
                    csv_field(r.mean_restarts),
                    csv_field(r.normalized_time),
                )
                .expect("writing to a String");
            }
            out
        }
        Format::Json => {
            let doc = serde_json::json!({ "metadata": metadata, "rows": rows });
            let mut out = serde_json::to_string_pretty(&doc).expect("rows serialize");
            out.push('\n');
            out
        }
    }
}

pub fn emit(rows: &[StatsRow], metadata: &Metadata, format: Format, path: &Path) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, render(rows, metadata, format)).map_err(io)
}
