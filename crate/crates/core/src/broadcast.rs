//! Asynchronous push-pull broadcast: whenever an informed agent meets an
//! uninformed one, both end up informed.

use serde::Serialize;

use crate::engine::{run, Configuration, EngineError, InteractionRecord};
use crate::params::ceil_log2;
use crate::protocol::{Aux, Protocol, Target, Tracker};

/// Two-state rumor protocol; the state is "informed".
#[derive(Debug, Clone, Copy, Default)]
pub struct PushPull;

/// Population size and the index of the initially informed agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rumor {
    pub n: usize,
    pub source: usize,
}

impl Protocol for PushPull {
    type State = bool;
    type Output = bool;
    type Scenario = Rumor;
    type Tracker = InformedTracker;

    fn name(&self) -> &'static str {
        "pushpull"
    }

    fn init(&self, agent: usize, rumor: &Rumor) -> bool {
        agent == rumor.source
    }

    fn delta(&self, a: bool, b: bool) -> (bool, bool) {
        (a || b, a || b)
    }

    fn output(&self, s: bool) -> bool {
        s
    }

    fn target(&self, rumor: &Rumor) -> Target<bool> {
        Target::unanimous(true, rumor.n)
    }

    fn state_count(&self) -> u64 {
        2
    }

    fn encode(&self, s: bool) -> u64 {
        u64::from(s)
    }

    fn decode(&self, code: u64) -> Option<bool> {
        match code {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }
    }

    fn tracker(&self, _: &[bool]) -> InformedTracker {
        InformedTracker::default()
    }
}

/// Counts interactions that shrink the informed set.
#[derive(Debug, Clone, Default)]
pub struct InformedTracker {
    decreases: u64,
}

impl Tracker<bool> for InformedTracker {
    #[inline]
    fn observe(&mut self, r: &InteractionRecord<bool>, _: &[bool]) {
        let before = usize::from(r.before.0) + usize::from(r.before.1);
        let after = usize::from(r.after.0) + usize::from(r.after.1);
        if after < before {
            self.decreases += 1;
        }
    }

    fn finish(self) -> Aux {
        Aux::from([("informed_decreases", self.decreases)])
    }
}

/// A period is `n` consecutive interactions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadcastRun {
    pub n: usize,
    pub informed: Vec<bool>,
    pub steps_to_completion: u64,
    pub periods_to_completion: f64,
}

/// Interaction budget for a broadcast: `100 n ⌈log₂ n⌉`.
pub fn pushpull_horizon(n: usize) -> u64 {
    100 * n as u64 * u64::from(ceil_log2(n))
}

/// Runs push-pull from agent 0 until everyone is informed.
pub fn run_pushpull(n: usize, seed: u64) -> Result<BroadcastRun, EngineError> {
    let protocol = PushPull;
    let rumor = Rumor { n, source: 0 };
    let mut config = Configuration::from_protocol(&protocol, n, &rumor, seed)?;
    // Completion happens with probability 1, so the budget is unbounded.
    let result = run(&mut config, &protocol, protocol.target(&rumor), u64::MAX)?;
    let steps = result.convergence_step.unwrap_or(result.steps);
    Ok(BroadcastRun {
        n,
        informed: config.into_states(),
        steps_to_completion: steps,
        periods_to_completion: steps as f64 / n as f64,
    })
}
