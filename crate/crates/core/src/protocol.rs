//! The contract every population protocol implements.
//!
//! A protocol is a finite state domain with a dense integer encoding, a
//! symmetric deterministic transition `delta`, an output map, and a target
//! describing the correct output configuration for a scenario.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::Hash;

use thiserror::Error;

use crate::engine::InteractionRecord;
use crate::rng::SimRng;

/// Protocol-specific counters reported with a run (restarts, phases reached, ...).
pub type Aux = BTreeMap<&'static str, u64>;

/// The correct output configuration: exactly `count` agents output `symbol`
/// and every other agent outputs something else. All shipped protocols have
/// binary output alphabets, so this pins the whole output multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target<O> {
    pub symbol: O,
    pub count: usize,
}

impl<O: PartialEq> Target<O> {
    pub fn unanimous(symbol: O, n: usize) -> Self {
        Target { symbol, count: n }
    }

    pub fn unique(symbol: O) -> Self {
        Target { symbol, count: 1 }
    }

    pub fn holds<I: IntoIterator<Item = O>>(&self, outputs: I) -> bool {
        outputs.into_iter().filter(|o| *o == self.symbol).count() == self.count
    }
}

/// Per-run observer fed with every interaction. Used for instrumentation
/// (invariant checks, restart counting) without slowing the transition itself.
pub trait Tracker<S>: Send {
    fn observe(&mut self, record: &InteractionRecord<S>, states: &[S]);
    fn finish(self) -> Aux;
}

impl<S> Tracker<S> for () {
    #[inline]
    fn observe(&mut self, _: &InteractionRecord<S>, _: &[S]) {}
    fn finish(self) -> Aux {
        Aux::new()
    }
}

pub trait Protocol: Send + Sync {
    type State: Copy + Eq + Ord + Hash + Debug + Send + Sync;
    type Output: Copy + Eq + Ord + Hash + Debug + Send + Sync;
    /// Input assignment (initial opinions, informed agent, ...).
    type Scenario: Clone + Debug + Send + Sync;
    type Tracker: Tracker<Self::State>;

    fn name(&self) -> &'static str;
    fn init(&self, agent: usize, scenario: &Self::Scenario) -> Self::State;
    /// Symmetric transition: `delta(a, b) = (a', b')` iff `delta(b, a) = (b', a')`.
    fn delta(&self, a: Self::State, b: Self::State) -> (Self::State, Self::State);
    fn output(&self, s: Self::State) -> Self::Output;
    fn target(&self, scenario: &Self::Scenario) -> Target<Self::Output>;

    /// Size of the encoded state domain; codes are `0..state_count()`.
    fn state_count(&self) -> u64;
    fn encode(&self, s: Self::State) -> u64;
    /// Inverse of [`Protocol::encode`]; `None` outside `0..state_count()`.
    fn decode(&self, code: u64) -> Option<Self::State>;

    fn tracker(&self, states: &[Self::State]) -> Self::Tracker;
}

/// Initial states of agents `0..n` under `scenario`.
pub fn initial_states<P: Protocol>(protocol: &P, n: usize, scenario: &P::Scenario) -> Vec<P::State> {
    (0..n).map(|agent| protocol.init(agent, scenario)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryMode {
    Exhaustive,
    Sampled { seed: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SymmetryError {
    #[error("exhaustive check needs {pairs} pairs, above the cap of {cap}; use sampled mode")]
    Infeasible { pairs: u128, cap: u64 },
    #[error("protocol has an empty state domain")]
    EmptyDomain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryVerdict<S> {
    pub pairs_checked: u64,
    /// First ordered pair `(a, b)` with `delta(b, a) != swap(delta(a, b))`.
    pub counterexample: Option<(S, S)>,
}

impl<S> SymmetryVerdict<S> {
    pub fn is_symmetric(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Default cap on exhaustively checked ordered pairs.
pub const EXHAUSTIVE_PAIR_CAP: u64 = 50_000_000;

pub fn check_symmetry<P: Protocol>(
    protocol: &P,
    mode: SymmetryMode,
    budget: u64,
) -> Result<SymmetryVerdict<P::State>, SymmetryError> {
    let count = protocol.state_count();
    if count == 0 {
        return Err(SymmetryError::EmptyDomain);
    }
    let swapped_ok = |a: P::State, b: P::State| {
        let (a1, b1) = protocol.delta(a, b);
        let (b2, a2) = protocol.delta(b, a);
        a1 == a2 && b1 == b2
    };
    let state = |code: u64| protocol.decode(code).expect("codes below state_count decode");
    let mut checked = 0;
    match mode {
        SymmetryMode::Exhaustive => {
            let pairs = u128::from(count) * u128::from(count);
            if pairs > u128::from(budget) {
                return Err(SymmetryError::Infeasible { pairs, cap: budget });
            }
            // (a, b) and (b, a) are the same test, so only a <= b is needed.
            for x in 0..count {
                let a = state(x);
                for y in x..count {
                    let b = state(y);
                    checked += 1;
                    if !swapped_ok(a, b) {
                        return Ok(SymmetryVerdict { pairs_checked: checked, counterexample: Some((a, b)) });
                    }
                }
            }
        }
        SymmetryMode::Sampled { seed } => {
            let mut rng = SimRng::seed_from(seed);
            for _ in 0..budget {
                let a = state(rng.below(count));
                let b = state(rng.below(count));
                checked += 1;
                if !swapped_ok(a, b) {
                    return Ok(SymmetryVerdict { pairs_checked: checked, counterexample: Some((a, b)) });
                }
            }
        }
    }
    Ok(SymmetryVerdict { pairs_checked: checked, counterexample: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_holds_counts_symbol() {
        let t = Target::unique('L');
        assert!(t.holds("FLF".chars()));
        assert!(!t.holds("FLL".chars()));
        assert!(!t.holds("FFF".chars()));
        assert!(Target::unanimous('A', 3).holds("AAA".chars()));
    }
}
