//! Leader election in `O(log² n)` parallel time with `O(log² n)` states.
//!
//! The protocol runs in two parts. Candidate selection: every agent joins set
//! A or B, flips a coin `G`, then B agents run Bernoulli trials against A
//! agents (success = meeting an A agent with coin 1). The largest success
//! count is broadcast; agents that never see a larger count become
//! candidates. Candidate testing: in each test phase every candidate picks
//! message 1 or 2 at random and floods it through the followers. Two
//! candidates are eventually caught by colliding messages, which sends the
//! population back to the start. A candidate that survives all test phases
//! declares itself leader, and leader duels remove any duplicates.
//!
//! Transition rules are stated per agent: [`LeaderElection::successor`]
//! gives the next state of `me` after meeting `other`, and both sides of an
//! interaction are computed from the pre-interaction states.

use serde::Serialize;

use crate::engine::InteractionRecord;
use crate::params::{ParamsError, ProtocolParams};
use crate::protocol::{Aux, Protocol, Target, Tracker};

/// Set membership `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Side {
    A,
    B,
    N,
}

/// Coin `G` used as the Bernoulli success bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Coin {
    Zero,
    One,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Message {
    One,
    Two,
}

/// Stage of an agent with its counters. The stage index used in logs and
/// instrumentation is given by [`Role::stage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Role {
    /// Stage 0: has not joined A or B yet.
    Undecided { count: u32 },
    /// Stage 1: joined a set, waiting to draw the coin.
    Sided { count: u32 },
    /// Stage 2: coin drawn, waiting for everyone else to draw theirs.
    Waiting { count: u32 },
    /// Stage 3: lost the maximum comparison; relays the largest count seen.
    Follower { best: u32, count: u32 },
    /// Stage 4: running Bernoulli trials.
    Trials { successes: u32, trials: u32 },
    /// Stage 5: finished trials, waiting to see a larger count.
    Contender { best: u32, count: u32 },
    /// Stage 6: leader candidate in test phase `phase`, broadcasting `message`.
    Candidate { message: Option<Message>, count: u32, phase: u32 },
    /// Stage 7: follower during testing, carrying a message or listening.
    Listener { message: Option<Message>, count: u32 },
    /// Stage 8: detected a second candidate; triggers a restart.
    Restart,
    /// Stage 9: leader, with the duel bit.
    Leader { bit: bool },
    /// Stage 10: final non-leader.
    NonLeader,
}

impl Role {
    pub fn stage(&self) -> usize {
        match self {
            Role::Undecided { .. } => 0,
            Role::Sided { .. } => 1,
            Role::Waiting { .. } => 2,
            Role::Follower { .. } => 3,
            Role::Trials { .. } => 4,
            Role::Contender { .. } => 5,
            Role::Candidate { .. } => 6,
            Role::Listener { .. } => 7,
            Role::Restart => 8,
            Role::Leader { .. } => 9,
            Role::NonLeader => 10,
        }
    }

    /// Largest success count carried by contenders and followers.
    fn best(&self) -> Option<u32> {
        match *self {
            Role::Contender { best, .. } | Role::Follower { best, .. } => Some(best),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LeaderState {
    pub role: Role,
    pub side: Side,
    pub coin: Coin,
}

impl LeaderState {
    pub const INITIAL: LeaderState = LeaderState::bare(Role::Undecided { count: 0 });

    /// A state whose role carries no set or coin.
    pub const fn bare(role: Role) -> LeaderState {
        LeaderState { role, side: Side::N, coin: Coin::N }
    }

    fn with_role(self, role: Role) -> LeaderState {
        LeaderState { role, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LeaderOutput {
    Leader,
    Follower,
}

/// Counter limits for one population size: each is a constant times `Ln`
/// (the idle listening limit is a constant times `Ln²`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageBounds {
    pub undecided: u32,
    pub sided: u32,
    pub waiting: u32,
    pub trials: u32,
    pub contender: u32,
    pub follower: u32,
    pub phase_len: u32,
    pub phases: u32,
    pub spread: u32,
    pub keep: u32,
    pub idle: u32,
}

impl StageBounds {
    pub fn new(params: &ProtocolParams) -> StageBounds {
        let k = &params.leader;
        let ln = params.ln;
        StageBounds {
            undecided: k.wait_q0 * ln,
            sided: k.wait_q1 * ln,
            waiting: k.wait_q2 * ln,
            trials: k.trials_q4 * ln,
            contender: k.wait_q5 * ln,
            follower: k.wait_q3 * ln,
            phase_len: k.phase_len_q6 * ln,
            phases: k.phases_q6 * ln,
            spread: k.spread_q7 * ln,
            keep: k.keep_q7 * ln,
            idle: k.idle_q7 * ln * ln,
        }
    }

    /// Largest success count a contender can carry (B agents add `trials`).
    pub fn max_best(&self) -> u32 {
        2 * self.trials
    }
}

#[derive(Debug, Clone)]
pub struct LeaderElection {
    params: ProtocolParams,
    bounds: StageBounds,
    layout: Layout,
}

impl LeaderElection {
    pub fn new(params: ProtocolParams) -> Result<Self, ParamsError> {
        params.leader.validate()?;
        let bounds = StageBounds::new(&params);
        Ok(LeaderElection { params, bounds, layout: Layout::new(&bounds) })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn bounds(&self) -> &StageBounds {
        &self.bounds
    }

    /// Next state of `me` after meeting `other`.
    pub fn successor(&self, me: LeaderState, other: LeaderState) -> LeaderState {
        use Role::*;
        let b = &self.bounds;

        // Endgame and restart rules take precedence over everything else.
        match (me.role, other.role) {
            (Leader { bit }, Leader { bit: theirs }) => {
                return match (bit, theirs) {
                    (false, true) => LeaderState::bare(Leader { bit: true }),
                    (true, false) => LeaderState::bare(NonLeader),
                    _ => me,
                };
            }
            (Leader { bit }, _) => return LeaderState::bare(Leader { bit: !bit }),
            (NonLeader, _) => return me,
            (_, Leader { .. }) | (_, NonLeader) => return LeaderState::bare(NonLeader),
            (Restart, _) | (_, Restart) => return LeaderState::INITIAL,
            (Undecided { .. }, _) | (Sided { .. }, _) => {}
            (_, Undecided { .. }) => return LeaderState::INITIAL,
            _ => {}
        }

        match me.role {
            Undecided { count } => match (other.role, other.side) {
                (Sided { .. }, Side::A) => LeaderState { role: Sided { count: 0 }, side: Side::B, coin: Coin::N },
                (Sided { .. }, Side::B) => LeaderState { role: Sided { count: 0 }, side: Side::A, coin: Coin::N },
                _ if count < b.undecided => me.with_role(Undecided { count: count + 1 }),
                _ => LeaderState { role: Sided { count: 0 }, side: Side::A, coin: Coin::N },
            },
            Sided { count } => {
                if count < b.sided {
                    me.with_role(Sided { count: count + 1 })
                } else {
                    let coin = if other.side == Side::B { Coin::One } else { Coin::Zero };
                    LeaderState { role: Waiting { count: 0 }, side: me.side, coin }
                }
            }
            Waiting { count } => {
                if count < b.waiting {
                    me.with_role(Waiting { count: count + 1 })
                } else {
                    me.with_role(Trials { successes: 0, trials: 0 })
                }
            }
            Trials { successes, trials } => {
                if trials == b.trials {
                    let bonus = if me.side == Side::B { b.trials } else { 0 };
                    me.with_role(Contender { best: successes + bonus, count: 0 })
                } else if other.side == Side::A {
                    match other.coin {
                        Coin::One => me.with_role(Trials { successes: successes + 1, trials: trials + 1 }),
                        Coin::Zero => me.with_role(Trials { successes, trials: trials + 1 }),
                        Coin::N => me,
                    }
                } else {
                    me
                }
            }
            Contender { best, count } => match other.role.best() {
                Some(theirs) if theirs > best => me.with_role(Follower { best: theirs, count: 0 }),
                _ if count == b.contender => me.with_role(Candidate { message: None, count: 0, phase: 0 }),
                _ => me.with_role(Contender { best, count: count + 1 }),
            },
            // A follower also acts as an idle listener.
            Follower { best, count } => {
                if let Some(message) = self.incoming_message(other.role) {
                    me.with_role(Listener { message: Some(message), count: 1 })
                } else if matches!(other.role, Listener { message: None, .. }) || count == b.follower {
                    me.with_role(Listener { message: None, count: 0 })
                } else {
                    let best = other.role.best().map_or(best, |theirs| theirs.max(best));
                    me.with_role(Follower { best, count: count + 1 })
                }
            }
            Candidate { message: None, phase, .. } => {
                let message = if other.side == Side::A { Message::One } else { Message::Two };
                me.with_role(Candidate { message: Some(message), count: 1, phase })
            }
            Candidate { message: Some(mine), count, phase } => {
                let conflict = match other.role {
                    Candidate { .. } | Contender { .. } => true,
                    Listener { message: Some(theirs), .. } => count == 1 || theirs != mine,
                    _ => false,
                };
                if conflict {
                    LeaderState::bare(Restart)
                } else if count >= b.phase_len {
                    if phase < b.phases {
                        me.with_role(Candidate { message: None, count: 0, phase: phase + 1 })
                    } else {
                        LeaderState::bare(Leader { bit: false })
                    }
                } else {
                    me.with_role(Candidate { message: Some(mine), count: count + 1, phase })
                }
            }
            Listener { message: Some(mine), count } => match other.role {
                Listener { message: Some(theirs), .. } if theirs != mine => LeaderState::bare(Restart),
                Contender { .. } => LeaderState::bare(Restart),
                _ if count >= b.keep => me.with_role(Listener { message: None, count: 0 }),
                _ => me.with_role(Listener { message: Some(mine), count: count + 1 }),
            },
            Listener { message: None, count } => {
                if let Some(message) = self.incoming_message(other.role) {
                    me.with_role(Listener { message: Some(message), count: 1 })
                } else if count >= b.idle {
                    LeaderState::bare(Restart)
                } else {
                    me.with_role(Listener { message: None, count: count + 1 })
                }
            }
            Restart | Leader { .. } | NonLeader => unreachable!("handled by the endgame rules"),
        }
    }

    /// Message handed to an idle listener by `other`: a candidate on the
    /// first interaction of its phase, or a listener still spreading.
    fn incoming_message(&self, other: Role) -> Option<Message> {
        match other {
            Role::Candidate { message: Some(m), count: 1, .. } => Some(m),
            Role::Listener { message: Some(m), count } if count > 0 && count < self.bounds.spread => Some(m),
            _ => None,
        }
    }

    /// Interaction budget: 20 times the per-attempt interaction count of an
    /// agent (selection plus every test phase), times `n/2`.
    pub fn horizon(&self) -> u64 {
        let b = &self.bounds;
        let selection = u64::from(b.undecided + b.sided + b.waiting + 2 * b.trials + b.contender + b.follower);
        let testing = u64::from(b.phase_len + 1) * u64::from(b.phases + 1);
        let n = self.params.n as u64;
        let ln = u64::from(self.params.ln);
        (10 * n * (selection + testing)).max(20 * n * ln * ln)
    }
}

pub fn leader_output(s: &LeaderState) -> LeaderOutput {
    match s.role {
        Role::Leader { .. } => LeaderOutput::Leader,
        _ => LeaderOutput::Follower,
    }
}

/// Agents still in contention: candidates plus contenders not yet converted.
pub fn count_candidates(states: &[LeaderState]) -> usize {
    states.iter().filter(|s| matches!(s.role, Role::Candidate { .. } | Role::Contender { .. })).count()
}

/// Dense encoding: stage families laid out one after another, each a mixed
/// radix product of its counters and its (set, coin) pair.
#[derive(Debug, Clone)]
struct Layout {
    bounds: StageBounds,
    /// Start code of each stage family, plus the total at the end.
    offsets: [u64; 12],
}

const SIDE_COIN: u64 = 4;

impl Layout {
    fn new(b: &StageBounds) -> Layout {
        let w = |x: u32| u64::from(x) + 1;
        let sizes = [
            w(b.undecided),
            w(b.sided) * 2,
            w(b.waiting) * SIDE_COIN,
            w(b.max_best()) * w(b.follower) * SIDE_COIN,
            w(b.trials) * w(b.trials) * SIDE_COIN,
            w(b.max_best()) * w(b.contender) * SIDE_COIN,
            3 * w(b.phase_len) * w(b.phases) * SIDE_COIN,
            (2 * w(b.keep) + w(b.idle)) * SIDE_COIN,
            1,
            2,
            1,
        ];
        let mut offsets = [0u64; 12];
        for (k, size) in sizes.iter().enumerate() {
            offsets[k + 1] = offsets[k] + size;
        }
        Layout { bounds: *b, offsets }
    }

    fn total(&self) -> u64 {
        self.offsets[11]
    }

    fn side_coin(s: &LeaderState) -> u64 {
        let side = u64::from(s.side == Side::B);
        let coin = u64::from(s.coin == Coin::One);
        side * 2 + coin
    }

    fn unpack_side_coin(code: u64) -> (Side, Coin) {
        let side = if code / 2 == 1 { Side::B } else { Side::A };
        let coin = if code % 2 == 1 { Coin::One } else { Coin::Zero };
        (side, coin)
    }

    fn encode(&self, s: &LeaderState) -> u64 {
        let b = &self.bounds;
        let w = |x: u32| u64::from(x) + 1;
        let sc = Self::side_coin(s);
        let local = match s.role {
            Role::Undecided { count } => u64::from(count),
            Role::Sided { count } => u64::from(count) * 2 + u64::from(s.side == Side::B),
            Role::Waiting { count } => u64::from(count) * SIDE_COIN + sc,
            Role::Follower { best, count } => (u64::from(best) * w(b.follower) + u64::from(count)) * SIDE_COIN + sc,
            Role::Trials { successes, trials } => {
                (u64::from(successes) * w(b.trials) + u64::from(trials)) * SIDE_COIN + sc
            }
            Role::Contender { best, count } => (u64::from(best) * w(b.contender) + u64::from(count)) * SIDE_COIN + sc,
            Role::Candidate { message, count, phase } => {
                let m = match message {
                    None => 0,
                    Some(Message::One) => 1,
                    Some(Message::Two) => 2,
                };
                ((m * w(b.phase_len) + u64::from(count)) * w(b.phases) + u64::from(phase)) * SIDE_COIN + sc
            }
            Role::Listener { message, count } => {
                let slot = match message {
                    Some(Message::One) => u64::from(count),
                    Some(Message::Two) => w(b.keep) + u64::from(count),
                    None => 2 * w(b.keep) + u64::from(count),
                };
                slot * SIDE_COIN + sc
            }
            Role::Restart | Role::NonLeader => 0,
            Role::Leader { bit } => u64::from(bit),
        };
        self.offsets[s.role.stage()] + local
    }

    fn decode(&self, code: u64) -> Option<LeaderState> {
        if code >= self.total() {
            return None;
        }
        let b = &self.bounds;
        let w = |x: u32| u64::from(x) + 1;
        let stage = self.offsets.iter().rposition(|&o| o <= code)?;
        let local = code - self.offsets[stage];
        let (side, coin) = Self::unpack_side_coin(local % SIDE_COIN);
        let rest = local / SIDE_COIN;
        let full = |role| LeaderState { role, side, coin };
        let state = match stage {
            0 => LeaderState::bare(Role::Undecided { count: local as u32 }),
            1 => LeaderState {
                role: Role::Sided { count: (local / 2) as u32 },
                side: if local % 2 == 1 { Side::B } else { Side::A },
                coin: Coin::N,
            },
            2 => full(Role::Waiting { count: rest as u32 }),
            3 => full(Role::Follower { best: (rest / w(b.follower)) as u32, count: (rest % w(b.follower)) as u32 }),
            4 => full(Role::Trials { successes: (rest / w(b.trials)) as u32, trials: (rest % w(b.trials)) as u32 }),
            5 => full(Role::Contender { best: (rest / w(b.contender)) as u32, count: (rest % w(b.contender)) as u32 }),
            6 => {
                let phase = (rest % w(b.phases)) as u32;
                let rest = rest / w(b.phases);
                let count = (rest % w(b.phase_len)) as u32;
                let message = match rest / w(b.phase_len) {
                    0 => None,
                    1 => Some(Message::One),
                    _ => Some(Message::Two),
                };
                full(Role::Candidate { message, count, phase })
            }
            7 => {
                let (message, count) = if rest < w(b.keep) {
                    (Some(Message::One), rest)
                } else if rest < 2 * w(b.keep) {
                    (Some(Message::Two), rest - w(b.keep))
                } else {
                    (None, rest - 2 * w(b.keep))
                };
                full(Role::Listener { message, count: count as u32 })
            }
            8 => LeaderState::bare(Role::Restart),
            9 => LeaderState::bare(Role::Leader { bit: local == 1 }),
            _ => LeaderState::bare(Role::NonLeader),
        };
        Some(state)
    }
}

impl Protocol for LeaderElection {
    type State = LeaderState;
    type Output = LeaderOutput;
    type Scenario = ();
    type Tracker = LeaderTracker;

    fn name(&self) -> &'static str {
        "bcer-leader"
    }

    fn init(&self, _: usize, _: &()) -> LeaderState {
        LeaderState::INITIAL
    }

    fn delta(&self, a: LeaderState, b: LeaderState) -> (LeaderState, LeaderState) {
        (self.successor(a, b), self.successor(b, a))
    }

    fn output(&self, s: LeaderState) -> LeaderOutput {
        leader_output(&s)
    }

    fn target(&self, _: &()) -> Target<LeaderOutput> {
        Target::unique(LeaderOutput::Leader)
    }

    fn state_count(&self) -> u64 {
        self.layout.total()
    }

    fn encode(&self, s: LeaderState) -> u64 {
        self.layout.encode(&s)
    }

    fn decode(&self, code: u64) -> Option<LeaderState> {
        self.layout.decode(code)
    }

    fn tracker(&self, states: &[LeaderState]) -> LeaderTracker {
        LeaderTracker::new(states)
    }
}

/// Instrumentation for leader election runs.
///
/// Restart episodes are counted when an agent enters the restart stage while
/// no agent is undecided or restarting (a fresh wave). `vmax_size` is the
/// number of contenders holding the largest success count at the first
/// moment the trials stage empties, before any restart.
#[derive(Debug, Clone)]
pub struct LeaderTracker {
    n: usize,
    stage_counts: [usize; 11],
    restarts: u64,
    resets: u64,
    vmax_size: Option<u64>,
    seen_trials: bool,
    first_candidate_step: Option<u64>,
    trials_at_first_candidate: u64,
    first_selection_candidates: u64,
    whp_stop_step: Option<u64>,
    best_decreases: u64,
    max_test_phase: u64,
}

impl LeaderTracker {
    fn new(states: &[LeaderState]) -> Self {
        let mut stage_counts = [0; 11];
        for s in states {
            stage_counts[s.role.stage()] += 1;
        }
        LeaderTracker {
            n: states.len(),
            stage_counts,
            restarts: 0,
            resets: 0,
            vmax_size: None,
            seen_trials: stage_counts[4] > 0,
            first_candidate_step: None,
            trials_at_first_candidate: 0,
            first_selection_candidates: 0,
            whp_stop_step: None,
            best_decreases: 0,
            max_test_phase: 0,
        }
    }

    fn agent(&mut self, before: LeaderState, after: LeaderState, step: u64) {
        let (s0, s1) = (before.role.stage(), after.role.stage());
        if let (Some(b0), Some(b1)) = (before.role.best(), after.role.best()) {
            if b1 < b0 {
                self.best_decreases += 1;
            }
        }
        if s1 == 0 && s0 != 0 {
            self.resets += 1;
        }
        if let Role::Candidate { phase, .. } = after.role {
            self.max_test_phase = self.max_test_phase.max(u64::from(phase));
        }
        if s0 == s1 {
            return;
        }
        if s1 == 8 && self.stage_counts[0] == 0 && self.stage_counts[8] == 0 {
            self.restarts += 1;
        }
        self.stage_counts[s0] -= 1;
        self.stage_counts[s1] += 1;
        if s1 == 6 {
            if self.restarts == 0 && self.stage_counts[9] == 0 {
                self.first_selection_candidates += 1;
            }
            if self.first_candidate_step.is_none() {
                self.first_candidate_step = Some(step + 1);
                self.trials_at_first_candidate = self.stage_counts[4] as u64;
            }
            if self.whp_stop_step.is_none() && self.stage_counts[6] == 1 && self.stage_counts[3] == self.n - 1 {
                self.whp_stop_step = Some(step + 1);
            }
        }
    }
}

impl Tracker<LeaderState> for LeaderTracker {
    fn observe(&mut self, r: &InteractionRecord<LeaderState>, states: &[LeaderState]) {
        self.agent(r.before.0, r.after.0, r.step);
        self.agent(r.before.1, r.after.1, r.step);
        if self.stage_counts[4] > 0 {
            self.seen_trials = true;
        } else if self.seen_trials && self.vmax_size.is_none() && self.restarts == 0 {
            let best = states.iter().filter_map(|s| s.role.best()).max();
            let holders =
                states.iter().filter(|s| matches!(s.role, Role::Contender { best: b, .. } if Some(b) == best)).count();
            self.vmax_size = Some(holders as u64);
        }
    }

    fn finish(self) -> Aux {
        let mut aux = Aux::from([
            ("restarts", self.restarts),
            ("restart_resets", self.resets),
            ("best_decreases", self.best_decreases),
            ("max_test_phase", self.max_test_phase),
            ("first_selection_candidates", self.first_selection_candidates),
            ("trials_at_first_candidate", self.trials_at_first_candidate),
            ("leaders", self.stage_counts[9] as u64),
        ]);
        if let Some(v) = self.vmax_size {
            aux.insert("vmax_size", v);
        }
        if let Some(s) = self.first_candidate_step {
            aux.insert("first_candidate_step", s);
        }
        if let Some(s) = self.whp_stop_step {
            aux.insert("whp_stop_step", s);
        }
        aux
    }
}
