//! Four-state exact-majority protocol.
//!
//! Strong tokens cancel pairwise and convert weak tokens of the other opinion;
//! the strong-token difference never changes, so the initial majority wins.
//! The same machine runs as the backup substate of the fast majority protocol.

use serde::{Deserialize, Serialize};

use crate::engine::InteractionRecord;
use crate::params::{ceil_log2, ParamsError};
use crate::protocol::{Aux, Protocol, Target, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opinion {
    A,
    B,
}

impl Opinion {
    pub fn other(self) -> Opinion {
        match self {
            Opinion::A => Opinion::B,
            Opinion::B => Opinion::A,
        }
    }
}

/// Initial opinion counts. The first `a` agents vote A, the rest vote B;
/// agent identity carries no meaning under the uniform scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Votes {
    a: usize,
    b: usize,
}

impl Votes {
    pub fn new(a: usize, b: usize) -> Result<Votes, ParamsError> {
        if a + b < 2 {
            return Err(ParamsError::Population(a + b));
        }
        if a == b {
            return Err(ParamsError::Tie(a));
        }
        Ok(Votes { a, b })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.a + self.b
    }

    pub fn majority(&self) -> Opinion {
        if self.a > self.b {
            Opinion::A
        } else {
            Opinion::B
        }
    }

    pub fn opinion_of(&self, agent: usize) -> Opinion {
        if agent < self.a {
            Opinion::A
        } else {
            Opinion::B
        }
    }
}

/// `X`/`Y` are the strong tokens, `x`/`y` the weak ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FourState {
    StrongA,
    WeakA,
    StrongB,
    WeakB,
}

use FourState::{StrongA, StrongB, WeakA, WeakB};

impl FourState {
    pub const ALL: [FourState; 4] = [StrongA, WeakA, StrongB, WeakB];

    pub fn strong(opinion: Opinion) -> FourState {
        match opinion {
            Opinion::A => StrongA,
            Opinion::B => StrongB,
        }
    }

    pub fn opinion(self) -> Opinion {
        match self {
            StrongA | WeakA => Opinion::A,
            StrongB | WeakB => Opinion::B,
        }
    }

    pub fn is_strong(self) -> bool {
        matches!(self, StrongA | StrongB)
    }

    /// `+1` for X, `-1` for Y, `0` for weak tokens.
    pub fn strong_weight(self) -> i64 {
        match self {
            StrongA => 1,
            StrongB => -1,
            WeakA | WeakB => 0,
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn from_index(code: u64) -> Option<FourState> {
        FourState::ALL.get(code as usize).copied()
    }
}

/// The cancelling variant: `(X,Y) -> (x,y)`, `(X,y) -> (x,X)`, everything
/// else unchanged, extended symmetrically.
#[inline]
pub fn fourstate_transition(p: FourState, q: FourState) -> (FourState, FourState) {
    match (p, q) {
        (StrongA, StrongB) => (WeakA, WeakB),
        (StrongB, StrongA) => (WeakB, WeakA),
        (StrongA, WeakB) => (WeakA, StrongA),
        (WeakB, StrongA) => (StrongA, WeakA),
        (StrongB, WeakA) => (WeakB, StrongB),
        (WeakA, StrongB) => (StrongB, WeakB),
        _ => (p, q),
    }
}

#[inline]
pub fn fourstate_output(s: FourState) -> Opinion {
    s.opinion()
}

/// Interaction budget comfortably above the `O(n log n)` parallel time of a
/// margin-one run: `20 n² ⌈log₂ n⌉` interactions.
pub fn fourstate_horizon(n: usize) -> u64 {
    20 * (n as u64) * (n as u64) * u64::from(ceil_log2(n))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FourStateProtocol;

impl Protocol for FourStateProtocol {
    type State = FourState;
    type Output = Opinion;
    type Scenario = Votes;
    type Tracker = ConservationTracker;

    fn name(&self) -> &'static str {
        "fourstate"
    }

    fn init(&self, agent: usize, votes: &Votes) -> FourState {
        FourState::strong(votes.opinion_of(agent))
    }

    fn delta(&self, a: FourState, b: FourState) -> (FourState, FourState) {
        fourstate_transition(a, b)
    }

    fn output(&self, s: FourState) -> Opinion {
        fourstate_output(s)
    }

    fn target(&self, votes: &Votes) -> Target<Opinion> {
        Target::unanimous(votes.majority(), votes.n())
    }

    fn state_count(&self) -> u64 {
        4
    }

    fn encode(&self, s: FourState) -> u64 {
        s.index()
    }

    fn decode(&self, code: u64) -> Option<FourState> {
        FourState::from_index(code)
    }

    fn tracker(&self, _: &[FourState]) -> ConservationTracker {
        ConservationTracker::default()
    }
}

/// Checks on every interaction that `#X - #Y` is unchanged.
#[derive(Debug, Clone, Default)]
pub struct ConservationTracker {
    violations: u64,
}

impl Tracker<FourState> for ConservationTracker {
    #[inline]
    fn observe(&mut self, r: &InteractionRecord<FourState>, _: &[FourState]) {
        let before = r.before.0.strong_weight() + r.before.1.strong_weight();
        let after = r.after.0.strong_weight() + r.after.1.strong_weight();
        if before != after {
            self.violations += 1;
        }
    }

    fn finish(self) -> Aux {
        Aux::from([("conservation_violations", self.violations)])
    }
}
