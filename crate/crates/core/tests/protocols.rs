use std::collections::HashSet;

use proptest::prelude::*;

use popproto::broadcast::run_pushpull;
use popproto::engine::{run, Configuration, Outcome};
use popproto::fourstate::{FourState, FourStateProtocol, Opinion};
use popproto::leader::{Coin, LeaderElection, LeaderOutput, LeaderState, Message, Role, Side, StageBounds};
use popproto::majority::{MajorityState, PhasedMajority};
use popproto::params::{LeaderConstants, ProtocolParams};
use popproto::protocol::{check_symmetry, Protocol, SymmetryMode, Target};

fn majority(n: usize) -> PhasedMajority {
    PhasedMajority::new(ProtocolParams::new(n).unwrap()).unwrap()
}

fn leader(n: usize) -> LeaderElection {
    LeaderElection::new(ProtocolParams::new(n).unwrap()).unwrap()
}

fn mini_leader() -> LeaderElection {
    LeaderElection::new(ProtocolParams::with_constants(3, 1, 16, LeaderConstants::miniature()).unwrap()).unwrap()
}

fn votes(s: &MajorityState) -> (i64, i64) {
    match s.vote {
        Some(Opinion::A) => (1, 0),
        Some(Opinion::B) => (0, 1),
        None => (0, 0),
    }
}

fn roundtrip<P: Protocol>(p: &P, code: u64) -> Result<(), TestCaseError> {
    let s = p.decode(code).expect("code in range");
    prop_assert_eq!(p.encode(s), code);
    Ok(())
}

fn symmetric<P: Protocol>(p: &P, a: u64, b: u64) -> Result<(), TestCaseError> {
    let (a, b) = (p.decode(a).unwrap(), p.decode(b).unwrap());
    let (a1, b1) = p.delta(a, b);
    let (b2, a2) = p.delta(b, a);
    prop_assert_eq!((a1, b1), (a2, b2));
    Ok(())
}

proptest! {
    #[test]
    fn majority_codes_round_trip(k in 6u32..15, code: u64) {
        let p = majority(1 << k);
        roundtrip(&p, code % p.state_count())?;
    }

    #[test]
    fn leader_codes_round_trip(k in 2u32..15, code: u64) {
        let p = leader(1 << k);
        roundtrip(&p, code % p.state_count())?;
    }

    #[test]
    fn majority_delta_is_symmetric(k in 6u32..15, a: u64, b: u64) {
        let p = majority(1 << k);
        symmetric(&p, a % p.state_count(), b % p.state_count())?;
    }

    #[test]
    fn leader_delta_is_symmetric(k in 2u32..15, a: u64, b: u64) {
        let p = leader(1 << k);
        symmetric(&p, a % p.state_count(), b % p.state_count())?;
    }

    /// Each interaction changes the (A, B) vote tally by one of
    /// (0,0), (-1,-1), (+1,0) or (0,+1).
    #[test]
    fn majority_vote_accounting(k in 6u32..13, a: u64, b: u64) {
        let p = majority(1 << k);
        let (s, t) = (p.decode(a % p.state_count()).unwrap(), p.decode(b % p.state_count()).unwrap());
        let (s1, t1) = p.delta(s, t);
        let before = (votes(&s).0 + votes(&t).0, votes(&s).1 + votes(&t).1);
        let after = (votes(&s1).0 + votes(&t1).0, votes(&s1).1 + votes(&t1).1);
        let d = (after.0 - before.0, after.1 - before.1);
        prop_assert!(matches!(d, (0, 0) | (-1, -1) | (1, 0) | (0, 1)), "{:?} {:?} -> {:?}", s, t, d);
    }

    /// The four-state backup always evolves by the four-state table.
    #[test]
    fn majority_backup_follows_fourstate(k in 6u32..13, a: u64, b: u64) {
        let p = majority(1 << k);
        let (s, t) = (p.decode(a % p.state_count()).unwrap(), p.decode(b % p.state_count()).unwrap());
        let (s1, t1) = p.delta(s, t);
        prop_assert_eq!((s1.backup, t1.backup), FourStateProtocol.delta(s.backup, t.backup));
    }

    /// Followers and contenders only ever adopt larger success counts.
    #[test]
    fn carried_maximum_never_decreases(k in 4u32..13, a: u64, b: u64) {
        let p = leader(1 << k);
        let (s, t) = (p.decode(a % p.state_count()).unwrap(), p.decode(b % p.state_count()).unwrap());
        let best = |r: &Role| match *r {
            Role::Follower { best, .. } | Role::Contender { best, .. } => Some(best),
            _ => None,
        };
        let after = p.successor(s, t);
        if let (Some(x), Some(y)) = (best(&s.role), best(&after.role)) {
            prop_assert!(y >= x, "{:?} meeting {:?} became {:?}", s, t, after);
        }
    }
}

#[test]
fn fourstate_symmetry_is_exhaustive() {
    let v = check_symmetry(&FourStateProtocol, SymmetryMode::Exhaustive, u64::MAX).unwrap();
    assert_eq!(v.pairs_checked, 4 * 5 / 2);
    assert!(v.is_symmetric());
}

#[test]
fn miniature_leader_symmetry_is_exhaustive() {
    let p = mini_leader();
    let v = check_symmetry(&p, SymmetryMode::Exhaustive, u64::MAX).unwrap();
    let k = p.state_count();
    assert_eq!(v.pairs_checked, k * (k + 1) / 2);
    assert!(v.is_symmetric());
}

#[test]
fn sampled_symmetry_at_scale() {
    let v = check_symmetry(&majority(1 << 12), SymmetryMode::Sampled { seed: 3 }, 1_000_000).unwrap();
    assert!(v.is_symmetric());
    let v = check_symmetry(&leader(1 << 12), SymmetryMode::Sampled { seed: 4 }, 1_000_000).unwrap();
    assert!(v.is_symmetric());
}

/// Every field of the majority state ranges independently.
#[test]
fn majority_state_count_is_product_of_field_domains() {
    for k in [8u32, 10, 12, 14] {
        let n = 1usize << k;
        let p = majority(n);
        let ln = u64::from(k);
        let (phases, tau) = (ln + 1, 200 * ln);
        let votes = 3;
        let flags = 2 * 2 * 2;
        assert_eq!(p.state_count(), votes * phases * tau * flags * 4, "n={n}");
        assert!(p.state_count() <= 3 * 2 * 200 * 32 * ln * ln);
    }
    assert_eq!(FourStateProtocol.state_count(), 4);
}

fn sides() -> [(Side, Coin); 4] {
    [(Side::A, Coin::Zero), (Side::A, Coin::One), (Side::B, Coin::Zero), (Side::B, Coin::One)]
}

/// Lists the leader state domain family by family, straight from the bounds.
fn enumerate_leader_states(b: &StageBounds) -> Vec<LeaderState> {
    let mut all = Vec::new();
    let with = |role, (side, coin)| LeaderState { role, side, coin };
    for count in 0..=b.undecided {
        all.push(LeaderState::bare(Role::Undecided { count }));
    }
    for count in 0..=b.sided {
        for side in [Side::A, Side::B] {
            all.push(LeaderState { role: Role::Sided { count }, side, coin: Coin::N });
        }
    }
    for sc in sides() {
        for count in 0..=b.waiting {
            all.push(with(Role::Waiting { count }, sc));
        }
        for best in 0..=2 * b.trials {
            for count in 0..=b.follower {
                all.push(with(Role::Follower { best, count }, sc));
            }
            for count in 0..=b.contender {
                all.push(with(Role::Contender { best, count }, sc));
            }
        }
        for successes in 0..=b.trials {
            for trials in 0..=b.trials {
                all.push(with(Role::Trials { successes, trials }, sc));
            }
        }
        for message in [None, Some(Message::One), Some(Message::Two)] {
            for count in 0..=b.phase_len {
                for phase in 0..=b.phases {
                    all.push(with(Role::Candidate { message, count, phase }, sc));
                }
            }
            let limit = if message.is_some() { b.keep } else { b.idle };
            for count in 0..=limit {
                all.push(with(Role::Listener { message, count }, sc));
            }
        }
    }
    all.push(LeaderState::bare(Role::Restart));
    all.push(LeaderState::bare(Role::Leader { bit: false }));
    all.push(LeaderState::bare(Role::Leader { bit: true }));
    all.push(LeaderState::bare(Role::NonLeader));
    all
}

#[test]
fn leader_state_count_matches_enumeration() {
    for p in [mini_leader(), leader(16), leader(256)] {
        let states = enumerate_leader_states(p.bounds());
        let distinct: HashSet<_> = states.iter().copied().collect();
        assert_eq!(distinct.len(), states.len());
        assert_eq!(p.state_count(), states.len() as u64);
        let codes: HashSet<u64> = states.iter().map(|&s| p.encode(s)).collect();
        assert_eq!(codes.len(), states.len());
        assert!(codes.iter().all(|&c| c < p.state_count()));
    }
}

#[test]
fn leader_state_count_is_quadratic_in_log_n() {
    let k = LeaderConstants::default();
    let bound = u64::from(
        (k.wait_q0 + 1)
            + 2 * (k.wait_q1 + 1)
            + 4 * (k.wait_q2 + 1)
            + 4 * (2 * k.trials_q4 + 1) * (k.wait_q3 + 1)
            + 4 * (k.trials_q4 + 1).pow(2)
            + 4 * (2 * k.trials_q4 + 1) * (k.wait_q5 + 1)
            + 12 * (k.phase_len_q6 + 1) * (k.phases_q6 + 1)
            + 4 * (2 * (k.keep_q7 + 1) + k.idle_q7 + 1)
            + 4,
    );
    for e in [8u32, 10, 12, 14] {
        let ln = u64::from(e);
        assert!(leader(1 << e).state_count() <= bound * ln * ln, "n=2^{e}");
    }
}

#[test]
fn leader_outputs() {
    assert_eq!(leader_output_of(Role::Leader { bit: false }), LeaderOutput::Leader);
    assert_eq!(leader_output_of(Role::NonLeader), LeaderOutput::Follower);
    assert_eq!(
        leader_output_of(Role::Candidate { message: Some(Message::One), count: 3, phase: 2 }),
        LeaderOutput::Follower
    );
}

fn leader_output_of(role: Role) -> LeaderOutput {
    leader(64).output(LeaderState::bare(role))
}

#[test]
fn duels_leave_exactly_one_leader() {
    for n in [8usize, 16, 64] {
        let p = leader(n);
        for leaders in 2..=5 {
            for seed in 0..20 {
                let mut states = vec![LeaderState::bare(Role::NonLeader); n];
                for (k, s) in states.iter_mut().take(leaders).enumerate() {
                    *s = LeaderState::bare(Role::Leader { bit: k % 2 == 0 });
                }
                let mut config = Configuration::new(states, seed).unwrap();
                let r = run(&mut config, &p, Target::unique(LeaderOutput::Leader), 50_000_000).unwrap();
                assert_eq!(r.outcome, Outcome::ConvergedCorrect, "n={n} k={leaders} seed={seed}");
                let left = config.states().iter().filter(|s| matches!(s.role, Role::Leader { .. })).count();
                assert_eq!(left, 1);
            }
        }
    }
}

#[test]
fn candidate_selection_statistics() {
    let n = 256;
    let p = leader(n);
    let runs: Vec<_> = (0..200u64)
        .map(|seed| {
            let mut config = Configuration::from_protocol(&p, n, &(), 1000 + seed).unwrap();
            run(&mut config, &p, p.target(&()), p.horizon()).unwrap()
        })
        .collect();
    assert!(runs.iter().all(|r| r.is_correct()));
    assert!(runs.iter().all(|r| r.aux["best_decreases"] == 0));
    let unique = runs.iter().filter(|r| r.aux.get("vmax_size") == Some(&1)).count();
    assert!(unique >= 20, "unique maximum in {unique}/200 runs");
    let drained = runs.iter().filter(|r| r.aux["trials_at_first_candidate"] == 0).count();
    assert!(drained >= 198, "trials stage empty at first candidate in {drained}/200 runs");
}

#[test]
fn phased_majority_small_runs_are_exact() {
    let n = 128;
    let p = majority(n);
    let votes = popproto::fourstate::Votes::new(65, 63).unwrap();
    for seed in 0..20 {
        let mut config = Configuration::from_protocol(&p, n, &votes, seed).unwrap();
        let r = run(&mut config, &p, p.target(&votes), p.horizon()).unwrap();
        assert_eq!(r.outcome, Outcome::ConvergedCorrect, "seed {seed}");
        assert_eq!(r.aux["vote_accounting_violations"], 0);
        assert_eq!(r.aux["margin_check_failures"], 0);
    }
}

#[test]
fn pushpull_completes_within_bound() {
    let n = 1 << 10;
    for seed in 0..100 {
        let b = run_pushpull(n, seed).unwrap();
        assert!(b.informed.iter().all(|&x| x));
        assert!(b.periods_to_completion <= 30.0 * 10.0, "seed {seed}: {}", b.periods_to_completion);
        assert_eq!(b.periods_to_completion, b.steps_to_completion as f64 / n as f64);
    }
}

#[test]
fn fourstate_quiescent_state_is_kept() {
    let (a, b) = FourStateProtocol.delta(FourState::StrongA, FourState::WeakA);
    assert_eq!((a, b), (FourState::StrongA, FourState::WeakA));
}
