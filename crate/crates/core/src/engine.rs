//! Uniform random pairwise scheduler and run loop on the complete graph.

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::protocol::{Aux, Protocol, Target, Tracker};
use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("population needs at least 2 agents, got {0}")]
    InvalidPopulation(usize),
    #[error("run horizon must be positive")]
    ZeroHorizon,
}

/// Draws an unordered pair of distinct agents, uniformly over all `n(n-1)/2`
/// pairs: two uniform indices, redrawing the second while it equals the first.
#[inline]
pub fn select_pair(n: usize, rng: &mut SimRng) -> Result<(usize, usize), EngineError> {
    if n < 2 {
        return Err(EngineError::InvalidPopulation(n));
    }
    Ok(draw_pair(n as u64, rng))
}

#[inline]
fn draw_pair(n: u64, rng: &mut SimRng) -> (usize, usize) {
    let i = rng.below(n);
    let mut j = rng.below(n);
    while j == i {
        j = rng.below(n);
    }
    (i as usize, j as usize)
}

/// Interactions divided by `n/2`, kept exact.
pub fn parallel_time(steps: u64, n: usize) -> Result<Ratio<u64>, EngineError> {
    if n < 2 {
        return Err(EngineError::InvalidPopulation(n));
    }
    Ok(Ratio::new(2 * steps, n as u64))
}

/// Population state plus the scheduler's randomness.
#[derive(Debug, Clone)]
pub struct Configuration<S> {
    states: Vec<S>,
    steps: u64,
    rng: SimRng,
}

impl<S: Copy> Configuration<S> {
    pub fn new(states: Vec<S>, seed: u64) -> Result<Self, EngineError> {
        if states.len() < 2 {
            return Err(EngineError::InvalidPopulation(states.len()));
        }
        Ok(Configuration { states, steps: 0, rng: SimRng::seed_from(seed) })
    }

    pub fn from_protocol<P: Protocol<State = S>>(
        protocol: &P,
        n: usize,
        scenario: &P::Scenario,
        seed: u64,
    ) -> Result<Self, EngineError> {
        Self::new(crate::protocol::initial_states(protocol, n, scenario), seed)
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn into_states(self) -> Vec<S> {
        self.states
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord<S> {
    /// Zero-based index of this interaction.
    pub step: u64,
    pub agents: (usize, usize),
    pub before: (S, S),
    pub after: (S, S),
}

/// One interaction: a uniformly random pair updates by `delta`.
#[inline]
pub fn step<P: Protocol>(config: &mut Configuration<P::State>, protocol: &P) -> InteractionRecord<P::State> {
    let (i, j) = draw_pair(config.states.len() as u64, &mut config.rng);
    let before = (config.states[i], config.states[j]);
    let after = protocol.delta(before.0, before.1);
    config.states[i] = after.0;
    config.states[j] = after.1;
    let record = InteractionRecord { step: config.steps, agents: (i, j), before, after };
    config.steps += 1;
    record
}

/// Distinct states present in a population, with multiplicities, in `Ord` order.
pub fn state_multiset<S: Copy + Ord>(states: &[S]) -> Vec<(S, usize)> {
    let mut sorted = states.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(S, usize)> = Vec::new();
    for s in sorted {
        match out.last_mut() {
            Some((last, count)) if *last == s => *count += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

/// True iff no single interaction can change any agent's output.
pub fn output_quiescent<P: Protocol>(config: &Configuration<P::State>, protocol: &P) -> bool {
    multiset_output_quiescent(&state_multiset(&config.states), protocol)
}

pub(crate) fn multiset_output_quiescent<P: Protocol>(classes: &[(P::State, usize)], protocol: &P) -> bool {
    for (x, &(a, count_a)) in classes.iter().enumerate() {
        let out_a = protocol.output(a);
        for &(b, _) in &classes[x..] {
            if a == b && count_a < 2 {
                continue;
            }
            let (a2, b2) = protocol.delta(a, b);
            if protocol.output(a2) != out_a || protocol.output(b2) != protocol.output(b) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    ConvergedCorrect,
    ConvergedIncorrect,
    HorizonExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub n: usize,
    /// Interactions executed before the run stopped.
    pub steps: u64,
    /// Number of interactions after which the outputs matched the target for good.
    pub convergence_step: Option<u64>,
    #[serde(skip)]
    pub parallel_time: Option<Ratio<u64>>,
    pub outcome: Outcome,
    pub aux: Aux,
}

impl RunResult {
    pub fn parallel_time_f64(&self) -> Option<f64> {
        self.parallel_time.map(|t| *t.numer() as f64 / *t.denom() as f64)
    }

    pub fn is_correct(&self) -> bool {
        self.outcome == Outcome::ConvergedCorrect
    }
}

/// Steps the configuration until the outputs match `target` and no single
/// interaction can change an output, or until `horizon` more interactions
/// have run.
///
/// Convergence is measured retrospectively: the reported step is the one
/// after the last interaction that left the outputs off target. Quiescence is
/// only tested while the outputs are on target, with exponentially spaced
/// checks, so the stopping point may trail convergence.
pub fn run<P: Protocol>(
    config: &mut Configuration<P::State>,
    protocol: &P,
    target: Target<P::Output>,
    horizon: u64,
) -> Result<RunResult, EngineError> {
    if horizon == 0 {
        return Err(EngineError::ZeroHorizon);
    }
    let n = config.n();
    let mut tracker = protocol.tracker(&config.states);
    let hits_of = |s: P::State| usize::from(protocol.output(s) == target.symbol);
    let mut hits: usize = config.states.iter().map(|&s| hits_of(s)).sum();
    let mut correct_since = (hits == target.count).then_some(config.steps);

    let base_gap = (n as u64 / 2).max(1);
    let mut gap = base_gap;
    let mut next_check = config.steps;
    let deadline = config.steps.saturating_add(horizon);

    let outcome = loop {
        if correct_since.is_some() && config.steps >= next_check {
            if output_quiescent(config, protocol) {
                break Outcome::ConvergedCorrect;
            }
            next_check = config.steps + gap;
            gap = gap.saturating_mul(2);
        }
        if config.steps >= deadline {
            break if correct_since.is_none() && output_quiescent(config, protocol) {
                Outcome::ConvergedIncorrect
            } else {
                Outcome::HorizonExhausted
            };
        }
        let record = step(config, protocol);
        tracker.observe(&record, &config.states);
        hits = hits + hits_of(record.after.0) + hits_of(record.after.1)
            - hits_of(record.before.0)
            - hits_of(record.before.1);
        if hits == target.count {
            if correct_since.is_none() {
                correct_since = Some(config.steps);
                next_check = config.steps;
                gap = base_gap;
            }
        } else {
            correct_since = None;
        }
    };

    let convergence_step = match outcome {
        Outcome::ConvergedCorrect => correct_since,
        _ => None,
    };
    Ok(RunResult {
        n,
        steps: config.steps,
        convergence_step,
        parallel_time: convergence_step.map(|s| Ratio::new(2 * s, n as u64)),
        outcome,
        aux: tracker.finish(),
    })
}
