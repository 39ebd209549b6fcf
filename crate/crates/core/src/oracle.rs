//! Exhaustive checks on tiny populations and Monte Carlo event estimates.
//!
//! Agents are exchangeable under the uniform scheduler on the complete graph,
//! so a configuration is explored as a multiset of encoded states (a class).
//! A class is output-stable when every class reachable from it has the same
//! output multiset; the stable set is the greatest fixpoint of "all
//! successors are stable with my output multiset".

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, Configuration, EngineError, RunResult};
use crate::protocol::{initial_states, Protocol};
use crate::rng::trial_seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("exhaustive exploration needs at least 2 agents, got {0}")]
    Population(usize),
    #[error("class count exceeds the cap of {cap} (discovered {discovered}, multiset bound {estimate})")]
    Infeasible { discovered: usize, estimate: u128, cap: usize },
    #[error("unknown event `{0}` (expected one of: {known})", known = Event::NAMES.join(", "))]
    UnknownEvent(String),
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Default limit on explored classes.
pub const CLASS_CAP: usize = 10_000_000;

/// Sorted encoded states of one configuration.
pub type Class = Vec<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReachabilityReport<O> {
    pub classes: usize,
    pub transitions: usize,
    pub output_stable: usize,
    /// Distinct output multisets (sorted) among output-stable classes.
    pub stable_outputs: Vec<Vec<O>>,
    pub correct_stable: usize,
    /// Classes with no path to a correct output-stable class.
    pub doomed: usize,
    /// Shortest path of classes from the initial class to the first doomed class.
    pub witness: Option<Vec<Class>>,
}

impl<O> ReachabilityReport<O> {
    pub fn converges_with_probability_one(&self) -> bool {
        self.doomed == 0
    }
}

/// Number of multisets of size `n` over `states` symbols, saturating.
pub fn multiset_bound(states: u64, n: usize) -> u128 {
    // C(states + n - 1, n), built incrementally so each step stays integral.
    let mut acc: u128 = 1;
    for k in 1..=n as u128 {
        acc = match acc.checked_mul(u128::from(states) + k - 1) {
            Some(v) => v / k,
            None => return u128::MAX,
        };
    }
    acc
}

/// Explores every class reachable from the initial configuration of `n`
/// agents under `scenario`.
pub fn explore<P: Protocol>(
    protocol: &P,
    scenario: &P::Scenario,
    n: usize,
    cap: usize,
) -> Result<ReachabilityReport<P::Output>, OracleError> {
    if n < 2 {
        return Err(OracleError::Population(n));
    }
    let estimate = multiset_bound(protocol.state_count(), n);
    let decode = |code: u64| protocol.decode(code).expect("reachable codes decode");

    let mut start: Class = initial_states(protocol, n, scenario).into_iter().map(|s| protocol.encode(s)).collect();
    start.sort_unstable();

    let mut index: HashMap<Class, u32> = HashMap::new();
    let mut classes: Vec<Class> = vec![start.clone()];
    let mut parent: Vec<u32> = vec![0];
    let mut successors: Vec<Vec<u32>> = Vec::new();
    index.insert(start, 0);

    let mut next = 0;
    while next < classes.len() {
        let class = classes[next].clone();
        let mut out: Vec<u32> = Vec::new();
        let distinct = distinct_with_counts(&class);
        for (x, &(a_code, count)) in distinct.iter().enumerate() {
            for &(b_code, _) in &distinct[x..] {
                if a_code == b_code && count < 2 {
                    continue;
                }
                let (a2, b2) = protocol.delta(decode(a_code), decode(b_code));
                let mut succ = class.clone();
                remove_one(&mut succ, a_code);
                remove_one(&mut succ, b_code);
                succ.push(protocol.encode(a2));
                succ.push(protocol.encode(b2));
                succ.sort_unstable();
                let id = match index.get(&succ) {
                    Some(&id) => id,
                    None => {
                        if classes.len() >= cap {
                            return Err(OracleError::Infeasible { discovered: classes.len(), estimate, cap });
                        }
                        let id = classes.len() as u32;
                        index.insert(succ.clone(), id);
                        classes.push(succ);
                        parent.push(next as u32);
                        id
                    }
                };
                out.push(id);
            }
        }
        out.sort_unstable();
        out.dedup();
        successors.push(out);
        next += 1;
    }
    drop(index);

    let m = classes.len();
    let mut predecessors: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (i, out) in successors.iter().enumerate() {
        for &j in out {
            predecessors[j as usize].push(i as u32);
        }
    }

    let mut signatures: HashMap<Vec<P::Output>, u32> = HashMap::new();
    let mut signature_of: Vec<u32> = Vec::with_capacity(m);
    let mut outputs_of: Vec<Vec<P::Output>> = Vec::new();
    for class in &classes {
        let mut outs: Vec<P::Output> = class.iter().map(|&c| protocol.output(decode(c))).collect();
        outs.sort_unstable();
        let fresh = signatures.len() as u32;
        let id = *signatures.entry(outs.clone()).or_insert_with(|| {
            outputs_of.push(outs);
            fresh
        });
        signature_of.push(id);
    }

    // Greatest fixpoint: knock out classes with a successor of a different
    // output multiset, then everything that can reach a knocked-out class.
    let mut stable = vec![true; m];
    let mut work: Vec<usize> =
        (0..m).filter(|&i| successors[i].iter().any(|&j| signature_of[j as usize] != signature_of[i])).collect();
    for &i in &work {
        stable[i] = false;
    }
    while let Some(j) = work.pop() {
        for &i in &predecessors[j] {
            if stable[i as usize] {
                stable[i as usize] = false;
                work.push(i as usize);
            }
        }
    }

    let target = protocol.target(scenario);
    let good: Vec<bool> =
        (0..m).map(|i| stable[i] && target.holds(outputs_of[signature_of[i] as usize].iter().copied())).collect();

    let mut reaches_good = good.clone();
    let mut queue: VecDeque<usize> = (0..m).filter(|&i| good[i]).collect();
    while let Some(j) = queue.pop_front() {
        for &i in &predecessors[j] {
            if !reaches_good[i as usize] {
                reaches_good[i as usize] = true;
                queue.push_back(i as usize);
            }
        }
    }

    let mut stable_outputs: Vec<Vec<P::Output>> =
        (0..m).filter(|&i| stable[i]).map(|i| outputs_of[signature_of[i] as usize].clone()).collect();
    stable_outputs.sort();
    stable_outputs.dedup();

    let witness = (0..m).find(|&i| !reaches_good[i]).map(|mut i| {
        let mut path = vec![classes[i].clone()];
        while i != 0 {
            i = parent[i] as usize;
            path.push(classes[i].clone());
        }
        path.reverse();
        path
    });

    Ok(ReachabilityReport {
        classes: m,
        transitions: successors.iter().map(Vec::len).sum(),
        output_stable: stable.iter().filter(|&&s| s).count(),
        stable_outputs,
        correct_stable: good.iter().filter(|&&g| g).count(),
        doomed: reaches_good.iter().filter(|&&r| !r).count(),
        witness,
    })
}

fn distinct_with_counts(class: &[u64]) -> Vec<(u64, usize)> {
    let mut out: Vec<(u64, usize)> = Vec::new();
    for &c in class {
        match out.last_mut() {
            Some((last, k)) if *last == c => *k += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

fn remove_one(class: &mut Class, code: u64) {
    let at = class.iter().position(|&c| c == code).expect("code present in class");
    class.remove(at);
}

/// Named predicates over a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    Always,
    Never,
    ConvergedCorrect,
    /// Exactly one contender held the largest success count.
    UniqueCandidate,
    /// A lone candidate appeared with every other agent still a follower.
    WhpStop,
    SingleLeader,
}

impl Event {
    pub const ALL: [Event; 6] = [
        Event::Always,
        Event::Never,
        Event::ConvergedCorrect,
        Event::UniqueCandidate,
        Event::WhpStop,
        Event::SingleLeader,
    ];
    pub const NAMES: [&'static str; 6] =
        ["always", "never", "converged-correct", "unique-candidate", "whp-stop", "single-leader"];

    pub fn name(self) -> &'static str {
        Self::NAMES[Self::ALL.iter().position(|&e| e == self).expect("listed")]
    }

    pub fn holds(self, r: &RunResult) -> bool {
        match self {
            Event::Always => true,
            Event::Never => false,
            Event::ConvergedCorrect => r.is_correct(),
            Event::UniqueCandidate => r.aux.get("vmax_size") == Some(&1),
            Event::WhpStop => r.aux.contains_key("whp_stop_step"),
            Event::SingleLeader => r.is_correct() && r.aux.get("leaders") == Some(&1),
        }
    }
}

impl FromStr for Event {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::NAMES
            .iter()
            .position(|&name| name == s)
            .map(|k| Self::ALL[k])
            .ok_or_else(|| OracleError::UnknownEvent(s.to_string()))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub event: String,
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    /// 95% Wilson score interval.
    pub lower: f64,
    pub upper: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let t = trials as f64;
    let p = successes as f64 / t;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / t;
    let center = (p + z2 / (2.0 * t)) / denom;
    let half = Z95 * (p * (1.0 - p) / t + z2 / (4.0 * t * t)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Fraction of seeded runs in which `event` holds. Trial `k` uses seed
/// `trial_seed(seed, n, k)`, so the estimate does not depend on scheduling.
pub fn mc_probability<P: Protocol>(
    protocol: &P,
    scenario: &P::Scenario,
    n: usize,
    horizon: u64,
    event: Event,
    trials: u64,
    seed: u64,
) -> Result<Estimate, OracleError> {
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let target = protocol.target(scenario);
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut config = Configuration::from_protocol(protocol, n, scenario, trial_seed(seed, n as u64, k))?;
            let result = run(&mut config, protocol, target, horizon)?;
            Ok(event.holds(&result))
        })
        .collect::<Result<_, EngineError>>()?;
    let successes = hits.iter().filter(|&&h| h).count() as u64;
    let (lower, upper) = wilson_interval(successes, trials);
    Ok(Estimate {
        event: event.name().to_string(),
        trials,
        successes,
        estimate: successes as f64 / trials as f64,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast::{PushPull, Rumor};
    use crate::fourstate::{FourStateProtocol, Opinion, Votes};

    #[test]
    fn multiset_bound_values() {
        assert_eq!(multiset_bound(4, 3), 20);
        assert_eq!(multiset_bound(2, 5), 6);
        assert_eq!(multiset_bound(1, 7), 1);
        assert_eq!(multiset_bound(u64::MAX, 40), u128::MAX);
    }

    #[test]
    fn fourstate_three_agents() {
        let p = FourStateProtocol;
        let r = explore(&p, &Votes::new(2, 1).unwrap(), 3, CLASS_CAP).unwrap();
        assert!(r.converges_with_probability_one());
        assert!(r.witness.is_none());
        assert!(r.classes <= 20);
        assert_eq!(r.stable_outputs, vec![vec![Opinion::A; 3]]);
        // {X, x, x} is reachable and stable.
        assert!(r.correct_stable >= 1);
    }

    #[test]
    fn pushpull_has_one_stable_class() {
        let r = explore(&PushPull, &Rumor { n: 4, source: 0 }, 4, CLASS_CAP).unwrap();
        assert_eq!(r.classes, 4);
        assert_eq!(r.output_stable, 1);
        assert_eq!(r.doomed, 0);
    }

    #[test]
    fn doomed_classes_come_with_a_witness() {
        // Nobody informed: the all-uninformed class can never reach the target.
        let r = explore(&PushPull, &Rumor { n: 3, source: 7 }, 3, CLASS_CAP).unwrap();
        assert_eq!(r.classes, 1);
        assert_eq!(r.doomed, 1);
        assert_eq!(r.witness, Some(vec![vec![0, 0, 0]]));
        assert_eq!(r.stable_outputs, vec![vec![false; 3]]);
    }

    #[test]
    fn rejects_single_agent_and_tiny_cap() {
        assert_eq!(explore(&PushPull, &Rumor { n: 1, source: 0 }, 1, CLASS_CAP), Err(OracleError::Population(1)));
        let err = explore(&FourStateProtocol, &Votes::new(5, 4).unwrap(), 9, 3).unwrap_err();
        assert!(matches!(err, OracleError::Infeasible { cap: 3, estimate: 220, .. }));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_532).abs() < 1e-5);
        let (lo, hi) = wilson_interval(10, 10);
        assert!((lo - 0.722_467).abs() < 1e-5);
        assert!(hi <= 1.0 && hi > 0.9999);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_168).abs() < 1e-5);
    }

    #[test]
    fn event_names_round_trip() {
        for e in Event::ALL {
            assert_eq!(e.name().parse::<Event>().unwrap(), e);
        }
        assert_eq!("bogus".parse::<Event>(), Err(OracleError::UnknownEvent("bogus".into())));
    }

    #[test]
    fn trivial_events() {
        let v = Votes::new(3, 2).unwrap();
        let p = FourStateProtocol;
        let always = mc_probability(&p, &v, 5, 10_000, Event::Always, 20, 1).unwrap();
        assert_eq!((always.estimate, always.successes), (1.0, 20));
        let never = mc_probability(&p, &v, 5, 10_000, Event::Never, 20, 1).unwrap();
        assert_eq!(never.estimate, 0.0);
        assert_eq!(mc_probability(&p, &v, 5, 10, Event::Always, 0, 1), Err(OracleError::NoTrials));
    }
}
