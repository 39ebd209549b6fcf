//! Population size, logarithm and protocol constants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("population must have at least 2 agents, got {0}")]
    Population(usize),
    #[error("constant `{0}` must be a positive integer")]
    NonPositive(&'static str),
    #[error("need 0 < c < C, got c={c}, C={big_c}")]
    SmallNotBelowBig { c: u32, big_c: u32 },
    #[error("phase parts are not strictly increasing for c={c}, C={big_c} (need C > 14c)")]
    EmptyPhasePart { c: u32, big_c: u32 },
    #[error("initial opinions are tied at {0} each; exact majority needs a0 != b0")]
    Tie(usize),
    #[error("leader constants out of order: {0}")]
    LeaderOrdering(&'static str),
}

/// `⌈log₂ n⌉`, the single integer logarithm used everywhere a protocol needs `log n`.
pub fn ceil_log2(n: usize) -> u32 {
    assert!(n >= 2, "ceil_log2 needs n >= 2");
    usize::BITS - (n - 1).leading_zeros()
}

/// Per-stage multipliers of `Ln` for the leader election protocol.
///
/// Every counter bound in the protocol is `multiplier · Ln`, except the idle
/// follower timeout which is `idle_q7 · Ln²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderConstants {
    /// Interactions an undecided agent waits before joining set A.
    pub wait_q0: u32,
    /// Interactions before the coin `G` is drawn.
    pub wait_q1: u32,
    /// Interactions spent waiting after the coin is drawn.
    pub wait_q2: u32,
    /// Number of Bernoulli trials.
    pub trials_q4: u32,
    /// Interactions a potential candidate waits for a larger success count.
    pub wait_q5: u32,
    /// Interactions per test phase of a candidate.
    pub phase_len_q6: u32,
    /// Number of test phases before a candidate declares itself leader.
    pub phases_q6: u32,
    /// A follower passes a message on while its counter is below this cutoff.
    pub spread_q7: u32,
    /// A follower forgets its message when its counter reaches this cutoff.
    pub keep_q7: u32,
    /// Interactions a max-broadcast follower waits before it starts listening.
    pub wait_q3: u32,
    /// Idle listening interactions (times `Ln²`) before a follower forces a restart.
    pub idle_q7: u32,
}

impl Default for LeaderConstants {
    fn default() -> Self {
        LeaderConstants {
            wait_q0: 2,
            wait_q1: 4,
            wait_q2: 8,
            trials_q4: 8,
            wait_q5: 20,
            phase_len_q6: 48,
            phases_q6: 4,
            spread_q7: 2,
            keep_q7: 33,
            wait_q3: 40,
            idle_q7: 384,
        }
    }
}

impl LeaderConstants {
    /// Smallest constants that keep the ordering invariants; used for
    /// exhaustive exploration of tiny populations.
    pub fn miniature() -> Self {
        LeaderConstants {
            wait_q0: 1,
            wait_q1: 1,
            wait_q2: 1,
            trials_q4: 1,
            wait_q5: 1,
            phase_len_q6: 3,
            phases_q6: 1,
            spread_q7: 1,
            keep_q7: 2,
            wait_q3: 1,
            idle_q7: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let named = [
            ("wait_q0", self.wait_q0),
            ("wait_q1", self.wait_q1),
            ("wait_q2", self.wait_q2),
            ("trials_q4", self.trials_q4),
            ("wait_q5", self.wait_q5),
            ("phase_len_q6", self.phase_len_q6),
            ("phases_q6", self.phases_q6),
            ("spread_q7", self.spread_q7),
            ("keep_q7", self.keep_q7),
            ("wait_q3", self.wait_q3),
            ("idle_q7", self.idle_q7),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(ParamsError::NonPositive(name));
        }
        if self.spread_q7 >= self.keep_q7 {
            return Err(ParamsError::LeaderOrdering("spread_q7 must be below keep_q7"));
        }
        if self.phase_len_q6 <= self.keep_q7 {
            return Err(ParamsError::LeaderOrdering("phase_len_q6 must exceed keep_q7"));
        }
        Ok(())
    }
}

/// Everything a protocol instance is parameterised by. Agents know `n` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtocolParams {
    pub n: usize,
    /// `⌈log₂ n⌉`.
    pub ln: u32,
    /// Small constant `c` of the majority clock.
    pub c: u32,
    /// Large constant `C` of the majority clock.
    #[serde(rename = "C")]
    pub big_c: u32,
    pub leader: LeaderConstants,
}

pub const DEFAULT_C_SMALL: u32 = 10;
pub const DEFAULT_C_BIG: u32 = 200;

impl ProtocolParams {
    pub fn new(n: usize) -> Result<Self, ParamsError> {
        Self::with_constants(n, DEFAULT_C_SMALL, DEFAULT_C_BIG, LeaderConstants::default())
    }

    pub fn with_constants(n: usize, c: u32, big_c: u32, leader: LeaderConstants) -> Result<Self, ParamsError> {
        if n < 2 {
            return Err(ParamsError::Population(n));
        }
        if c == 0 {
            return Err(ParamsError::NonPositive("c"));
        }
        if big_c == 0 {
            return Err(ParamsError::NonPositive("C"));
        }
        if c >= big_c {
            return Err(ParamsError::SmallNotBelowBig { c, big_c });
        }
        leader.validate()?;
        Ok(ProtocolParams { n, ln: ceil_log2(n), c, big_c, leader })
    }
}
