//! Exact majority in `O(log² n)` parallel time with `O(log² n)` states.
//!
//! Every agent carries a phase clock of `P = Ln + 1` phases of `τ = C·Ln`
//! steps each. Within a phase opposite votes cancel in the canceling stage and
//! surviving votes duplicate into empty agents in the doubling stage, so the
//! vote margin doubles every phase until the minority is gone. An agent whose
//! vote found no empty partner to duplicate into becomes `done`; anything that
//! looks inconsistent drives the population into `fail`, where the embedded
//! four-state protocol (run on every interaction) supplies the answer.

use std::cmp::Ordering;

use serde::Serialize;

use crate::engine::InteractionRecord;
use crate::fourstate::{fourstate_horizon, fourstate_output, fourstate_transition, FourState, Opinion, Votes};
use crate::params::{ParamsError, ProtocolParams};
use crate::protocol::{Aux, Protocol, Target, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Clock {
    pub phase: u32,
    pub step: u32,
}

impl Clock {
    pub const ZERO: Clock = Clock { phase: 0, step: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PhasePart {
    Beginning,
    Canceling,
    Middle,
    Doubling,
    End,
}

impl PhasePart {
    pub fn ordinal(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MajorityState {
    /// `None` is the empty vote.
    pub vote: Option<Opinion>,
    pub clock: Clock,
    pub doubled: bool,
    pub done: bool,
    pub fail: bool,
    pub backup: FourState,
}

impl MajorityState {
    pub fn initial(opinion: Opinion) -> Self {
        MajorityState {
            vote: Some(opinion),
            clock: Clock::ZERO,
            doubled: false,
            done: false,
            fail: false,
            backup: FourState::strong(opinion),
        }
    }

    /// Neither done nor failed.
    pub fn is_normal(&self) -> bool {
        !self.done && !self.fail
    }
}

#[derive(Debug, Clone)]
pub struct PhasedMajority {
    params: ProtocolParams,
    phases: u32,
    tau: u32,
    /// Part of every step in `0..τ`.
    parts: Vec<PhasePart>,
}

impl PhasedMajority {
    pub fn new(params: ProtocolParams) -> Result<Self, ParamsError> {
        let ln = params.ln;
        let (c, big_c) = (params.c, params.big_c);
        let tau = big_c * ln;
        let half = tau / 2;
        let starts = [c * ln, half.saturating_sub(c * ln), half + 2 * c * ln, tau.saturating_sub(5 * c * ln)];
        let increasing =
            0 < starts[0] && starts[0] < starts[1] && starts[1] < starts[2] && starts[2] < starts[3] && starts[3] < tau;
        if !increasing {
            return Err(ParamsError::EmptyPhasePart { c, big_c });
        }
        if big_c < 64 * c {
            log::debug!("C = {big_c} is below 64c = {}; synchronization is not guaranteed", 64 * c);
        }
        let parts = (0..tau)
            .map(|step| match starts.iter().position(|&s| step < s) {
                Some(0) => PhasePart::Beginning,
                Some(1) => PhasePart::Canceling,
                Some(2) => PhasePart::Middle,
                Some(3) => PhasePart::Doubling,
                _ => PhasePart::End,
            })
            .collect();
        Ok(PhasedMajority { params, phases: ln + 1, tau, parts })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    /// `P = Ln + 1`.
    pub fn phases(&self) -> u32 {
        self.phases
    }

    /// `τ = C·Ln`.
    pub fn tau(&self) -> u32 {
        self.tau
    }

    /// Panics if `step >= τ`.
    #[inline]
    pub fn part_of(&self, step: u32) -> PhasePart {
        match self.parts.get(step as usize) {
            Some(&part) => part,
            None => panic!("step {step} outside [0, {})", self.tau),
        }
    }

    /// `5·phase + part ordinal`.
    #[inline]
    pub fn global_part(&self, clock: Clock) -> u32 {
        5 * clock.phase + self.part_of(clock.step).ordinal()
    }

    /// Same part, or adjacent parts (possibly across a phase boundary).
    #[inline]
    pub fn consistent(&self, a: Clock, b: Clock) -> bool {
        self.global_part(a).abs_diff(self.global_part(b)) <= 1
    }

    /// Advances one step, wrapping into the next phase; saturates at `(P-1, τ-1)`.
    #[inline]
    pub fn next_clock(&self, t: Clock) -> Clock {
        if t.step + 1 < self.tau {
            Clock { phase: t.phase, step: t.step + 1 }
        } else if t.phase + 1 < self.phases {
            Clock { phase: t.phase + 1, step: 0 }
        } else {
            t
        }
    }

    pub fn transition(&self, a: MajorityState, b: MajorityState) -> (MajorityState, MajorityState) {
        let (mut v, mut u) = (a, b);
        if v.fail || u.fail || !self.consistent(v.clock, u.clock) {
            v.fail = true;
            u.fail = true;
        } else if v.done && !u.done {
            absorb_done(&mut v, &mut u);
        } else if u.done && !v.done {
            absorb_done(&mut u, &mut v);
        } else if v.done && u.done {
            if v.vote != u.vote {
                v.fail = true;
                u.fail = true;
            }
        } else {
            let part_v = self.part_of(v.clock.step);
            let part_u = self.part_of(u.clock.step);
            let opposite =
                matches!((v.vote, u.vote), (Some(Opinion::A), Some(Opinion::B)) | (Some(Opinion::B), Some(Opinion::A)));
            if part_v == PhasePart::Canceling && part_u == PhasePart::Canceling && opposite {
                v.vote = None;
                u.vote = None;
            } else if part_v == PhasePart::Doubling
                && part_u == PhasePart::Doubling
                && v.vote.is_some() != u.vote.is_some()
            {
                let (holder, empty) = if v.vote.is_some() { (&mut v, &mut u) } else { (&mut u, &mut v) };
                if !holder.doubled {
                    empty.vote = holder.vote;
                    holder.doubled = true;
                    empty.doubled = true;
                }
            }
        }

        // Clock synchronization: the agent in the earlier phase jumps to the end of it.
        match v.clock.phase.cmp(&u.clock.phase) {
            Ordering::Less => v.clock.step = self.tau - 1,
            Ordering::Greater => u.clock.step = self.tau - 1,
            Ordering::Equal => {}
        }
        self.advance(&mut v);
        self.advance(&mut u);

        let (bv, bu) = fourstate_transition(v.backup, u.backup);
        v.backup = bv;
        u.backup = bu;
        (v, u)
    }

    fn advance(&self, x: &mut MajorityState) {
        x.clock = self.next_clock(x.clock);
        if x.clock.step == 0 && x.vote.is_some() && x.is_normal() {
            if !x.doubled {
                x.done = true;
            } else if x.clock.phase < self.phases {
                x.doubled = false;
            }
        }
    }

    /// Interaction budget: enough for every clock to saturate twice over,
    /// plus a full four-state run for the backup path.
    pub fn horizon(&self) -> u64 {
        let n = self.params.n as u64;
        let ln = u64::from(self.params.ln);
        let clocks = n * u64::from(self.phases) * u64::from(self.tau);
        (20 * n * ln * ln).max(clocks) + fourstate_horizon(self.params.n)
    }
}

fn absorb_done(done: &mut MajorityState, other: &mut MajorityState) {
    match other.vote {
        None => {
            other.vote = done.vote;
            other.done = true;
        }
        Some(vote) if Some(vote) != done.vote => {
            done.fail = true;
            other.fail = true;
        }
        Some(_) => {}
    }
}

/// Failed agents answer with the backup; otherwise the vote, falling back to
/// the backup while the vote is empty.
pub fn majority_output(s: &MajorityState) -> Opinion {
    match s.vote {
        Some(vote) if !s.fail => vote,
        _ => fourstate_output(s.backup),
    }
}

fn vote_index(v: Option<Opinion>) -> u64 {
    match v {
        Some(Opinion::A) => 0,
        Some(Opinion::B) => 1,
        None => 2,
    }
}

impl Protocol for PhasedMajority {
    type State = MajorityState;
    type Output = Opinion;
    type Scenario = Votes;
    type Tracker = MajorityTracker;

    fn name(&self) -> &'static str {
        "bcer-majority"
    }

    fn init(&self, agent: usize, votes: &Votes) -> MajorityState {
        MajorityState::initial(votes.opinion_of(agent))
    }

    fn delta(&self, a: MajorityState, b: MajorityState) -> (MajorityState, MajorityState) {
        self.transition(a, b)
    }

    fn output(&self, s: MajorityState) -> Opinion {
        majority_output(&s)
    }

    fn target(&self, votes: &Votes) -> Target<Opinion> {
        Target::unanimous(votes.majority(), votes.n())
    }

    /// `3 votes · P·τ clocks · 2³ flags · 4 backup states`.
    fn state_count(&self) -> u64 {
        3 * u64::from(self.phases) * u64::from(self.tau) * 8 * 4
    }

    fn encode(&self, s: MajorityState) -> u64 {
        let clock = u64::from(s.clock.phase) * u64::from(self.tau) + u64::from(s.clock.step);
        let mut code = vote_index(s.vote);
        code = code * u64::from(self.phases) * u64::from(self.tau) + clock;
        code = code * 2 + u64::from(s.doubled);
        code = code * 2 + u64::from(s.done);
        code = code * 2 + u64::from(s.fail);
        code * 4 + s.backup.index()
    }

    fn decode(&self, code: u64) -> Option<MajorityState> {
        if code >= self.state_count() {
            return None;
        }
        let backup = FourState::from_index(code % 4)?;
        let mut rest = code / 4;
        let fail = rest % 2 == 1;
        rest /= 2;
        let done = rest % 2 == 1;
        rest /= 2;
        let doubled = rest % 2 == 1;
        rest /= 2;
        let clocks = u64::from(self.phases) * u64::from(self.tau);
        let clock = rest % clocks;
        let vote = match rest / clocks {
            0 => Some(Opinion::A),
            1 => Some(Opinion::B),
            _ => None,
        };
        let clock = Clock { phase: (clock / u64::from(self.tau)) as u32, step: (clock % u64::from(self.tau)) as u32 };
        Some(MajorityState { vote, clock, doubled, done, fail, backup })
    }

    fn tracker(&self, states: &[MajorityState]) -> MajorityTracker {
        MajorityTracker::new(self, states)
    }
}

/// Output of [`StrictMajority`]: `None` for a normal agent without a vote.
pub fn strict_output(s: &MajorityState) -> Option<Opinion> {
    match s.vote {
        _ if s.fail => Some(fourstate_output(s.backup)),
        vote => vote,
    }
}

/// The same protocol read through the partial output map: only votes and
/// failed agents' backups count, so convergence means the phase protocol
/// itself has finished (every agent holds the majority vote) or has failed
/// over to the backup.
#[derive(Debug, Clone)]
pub struct StrictMajority(pub PhasedMajority);

impl Protocol for StrictMajority {
    type State = MajorityState;
    type Output = Option<Opinion>;
    type Scenario = Votes;
    type Tracker = MajorityTracker;

    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn init(&self, agent: usize, votes: &Votes) -> MajorityState {
        self.0.init(agent, votes)
    }

    fn delta(&self, a: MajorityState, b: MajorityState) -> (MajorityState, MajorityState) {
        self.0.transition(a, b)
    }

    fn output(&self, s: MajorityState) -> Option<Opinion> {
        strict_output(&s)
    }

    fn target(&self, votes: &Votes) -> Target<Option<Opinion>> {
        Target::unanimous(Some(votes.majority()), votes.n())
    }

    fn state_count(&self) -> u64 {
        self.0.state_count()
    }

    fn encode(&self, s: MajorityState) -> u64 {
        self.0.encode(s)
    }

    fn decode(&self, code: u64) -> Option<MajorityState> {
        self.0.decode(code)
    }

    fn tracker(&self, states: &[MajorityState]) -> MajorityTracker {
        self.0.tracker(states)
    }
}

/// Instrumentation for majority runs.
///
/// * vote accounting: every interaction changes `(#A, #B)` votes by
///   `(0,0)`, `(-1,-1)`, `(+1,0)` or `(0,+1)`;
/// * clock spread: the widest gap between the smallest and largest global
///   part index, and how many interactions left a gap above 1;
/// * margin doubling: whenever every agent is normal and in the beginning
///   part of phase `p` (first time per phase), the margin must be `2^p` times
///   the initial one.
#[derive(Debug, Clone)]
pub struct MajorityTracker {
    protocol: PhasedMajority,
    n: usize,
    votes_a: i64,
    votes_b: i64,
    initial_margin: i64,
    flagged: usize,
    part_counts: Vec<usize>,
    min_part: usize,
    max_part: usize,
    accounting_violations: u64,
    cancellations: u64,
    duplications: u64,
    adoptions: u64,
    max_gap: u64,
    wide_gap_steps: u64,
    fail_step: Option<u64>,
    next_margin_phase: u32,
    margin_checks: u64,
    margin_failures: u64,
}

impl MajorityTracker {
    fn new(protocol: &PhasedMajority, states: &[MajorityState]) -> Self {
        let mut part_counts = vec![0; 5 * protocol.phases as usize];
        let mut t = MajorityTracker {
            protocol: protocol.clone(),
            n: states.len(),
            votes_a: 0,
            votes_b: 0,
            initial_margin: 0,
            flagged: 0,
            part_counts: Vec::new(),
            min_part: usize::MAX,
            max_part: 0,
            accounting_violations: 0,
            cancellations: 0,
            duplications: 0,
            adoptions: 0,
            max_gap: 0,
            wide_gap_steps: 0,
            fail_step: None,
            next_margin_phase: 0,
            margin_checks: 0,
            margin_failures: 0,
        };
        for s in states {
            let g = protocol.global_part(s.clock) as usize;
            part_counts[g] += 1;
            t.min_part = t.min_part.min(g);
            t.max_part = t.max_part.max(g);
            let (a, b) = vote_weights(s);
            t.votes_a += a;
            t.votes_b += b;
            t.flagged += usize::from(!s.is_normal());
        }
        t.part_counts = part_counts;
        t.initial_margin = (t.votes_a - t.votes_b).abs();
        t.max_gap = (t.max_part - t.min_part) as u64;
        t.check_margin();
        t
    }

    fn check_margin(&mut self) {
        let phase = self.next_margin_phase;
        if phase >= self.protocol.phases || self.flagged > 0 {
            return;
        }
        let g = 5 * phase as usize;
        if self.part_counts[g] == self.n {
            self.margin_checks += 1;
            let expected = self.initial_margin.checked_shl(phase).unwrap_or(i64::MAX);
            if (self.votes_a - self.votes_b).abs() != expected {
                self.margin_failures += 1;
            }
            self.next_margin_phase += 1;
        }
    }
}

fn vote_weights(s: &MajorityState) -> (i64, i64) {
    match s.vote {
        Some(Opinion::A) => (1, 0),
        Some(Opinion::B) => (0, 1),
        None => (0, 0),
    }
}

impl Tracker<MajorityState> for MajorityTracker {
    fn observe(&mut self, r: &InteractionRecord<MajorityState>, _: &[MajorityState]) {
        let (ba0, bb0) = vote_weights(&r.before.0);
        let (ba1, bb1) = vote_weights(&r.before.1);
        let (aa0, ab0) = vote_weights(&r.after.0);
        let (aa1, ab1) = vote_weights(&r.after.1);
        let delta = (aa0 + aa1 - ba0 - ba1, ab0 + ab1 - bb0 - bb1);
        match delta {
            (0, 0) => {}
            (-1, -1) => self.cancellations += 1,
            (1, 0) | (0, 1) => {
                if r.after.0.done && r.after.1.done && !(r.before.0.done && r.before.1.done) {
                    self.adoptions += 1;
                } else {
                    self.duplications += 1;
                }
            }
            _ => self.accounting_violations += 1,
        }
        self.votes_a += delta.0;
        self.votes_b += delta.1;

        for (before, after) in [(r.before.0, r.after.0), (r.before.1, r.after.1)] {
            self.flagged = self.flagged + usize::from(!after.is_normal()) - usize::from(!before.is_normal());
            if after.fail && !before.fail && self.fail_step.is_none() {
                self.fail_step = Some(r.step);
            }
            let g0 = self.protocol.global_part(before.clock) as usize;
            let g1 = self.protocol.global_part(after.clock) as usize;
            if g0 != g1 {
                self.part_counts[g0] -= 1;
                self.part_counts[g1] += 1;
                self.max_part = self.max_part.max(g1);
            }
        }
        while self.part_counts[self.min_part] == 0 {
            self.min_part += 1;
        }
        let gap = (self.max_part - self.min_part) as u64;
        self.max_gap = self.max_gap.max(gap);
        if gap > 1 {
            self.wide_gap_steps += 1;
        }
        self.check_margin();
    }

    fn finish(self) -> Aux {
        Aux::from([
            ("vote_accounting_violations", self.accounting_violations),
            ("cancellations", self.cancellations),
            ("duplications", self.duplications),
            ("done_adoptions", self.adoptions),
            ("max_clock_gap", self.max_gap),
            ("wide_clock_gap_steps", self.wide_gap_steps),
            ("failed", u64::from(self.fail_step.is_some())),
            ("first_fail_step", self.fail_step.unwrap_or(0)),
            ("max_phase", (self.max_part / 5) as u64),
            ("margin_checks", self.margin_checks),
            ("margin_check_failures", self.margin_failures),
        ])
    }
}
