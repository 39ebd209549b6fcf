use num_rational::Ratio;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use popproto::engine::{parallel_time, run, select_pair, step, Configuration, EngineError, Outcome};
use popproto::fourstate::{FourState, FourStateProtocol, Opinion, Votes};
use popproto::leader::LeaderElection;
use popproto::majority::PhasedMajority;
use popproto::params::ProtocolParams;
use popproto::protocol::{Protocol, Target};
use popproto::rng::SimRng;

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (lo, hi) = (i.min(j), i.max(j));
    lo * n - lo * (lo + 1) / 2 + (hi - lo - 1)
}

fn chi_square(n: usize, draws_per_pair: u64, seed: u64) -> (f64, usize) {
    let pairs = n * (n - 1) / 2;
    let mut counts = vec![0u64; pairs];
    let mut rng = SimRng::seed_from(seed);
    for _ in 0..draws_per_pair * pairs as u64 {
        let (i, j) = select_pair(n, &mut rng).unwrap();
        counts[pair_index(n, i, j)] += 1;
    }
    let expected = draws_per_pair as f64;
    let stat = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    (stat, pairs - 1)
}

#[test]
fn scheduler_passes_chi_square_at_0_001() {
    for (n, seed) in [(3, 11), (5, 12), (10, 13)] {
        let (stat, df) = chi_square(n, 100_000, seed);
        let critical = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "n={n}: chi-square {stat:.2} above {critical:.2} (df {df})");
    }
}

#[test]
fn three_agents_hit_each_pair_evenly() {
    let mut counts = [0u64; 3];
    let mut rng = SimRng::seed_from(99);
    for _ in 0..300_000 {
        let (i, j) = select_pair(3, &mut rng).unwrap();
        counts[pair_index(3, i, j)] += 1;
    }
    for c in counts {
        assert!((98_000..=102_000).contains(&c), "{counts:?}");
    }
}

#[test]
fn tiny_populations_are_rejected() {
    let mut rng = SimRng::seed_from(0);
    assert_eq!(select_pair(1, &mut rng), Err(EngineError::InvalidPopulation(1)));
    assert!(parallel_time(5, 1).is_err());
    assert!(Configuration::new(vec![FourState::StrongA], 0).is_err());
}

#[test]
fn parallel_time_examples() {
    assert_eq!(parallel_time(0, 7).unwrap(), Ratio::from_integer(0));
    assert_eq!(parallel_time(6, 4).unwrap(), Ratio::from_integer(3));
    assert_eq!(parallel_time(500_000, 1000).unwrap(), Ratio::from_integer(1000));
}

#[test]
fn two_agents_already_converged() {
    let mut config = Configuration::new(vec![FourState::StrongA, FourState::WeakA], 1).unwrap();
    let r = run(&mut config, &FourStateProtocol, Target::unanimous(Opinion::A, 2), 100).unwrap();
    assert_eq!(r.outcome, Outcome::ConvergedCorrect);
    assert_eq!(r.convergence_step, Some(0));
    assert_eq!(r.parallel_time, Some(Ratio::from_integer(0)));
}

#[test]
fn two_agents_converge_after_one_interaction() {
    let mut config = Configuration::new(vec![FourState::StrongA, FourState::WeakB], 1).unwrap();
    let r = run(&mut config, &FourStateProtocol, Target::unanimous(Opinion::A, 2), 100).unwrap();
    assert_eq!(r.convergence_step, Some(1));
    let mut finals = config.into_states();
    finals.sort();
    assert_eq!(finals, vec![FourState::StrongA, FourState::WeakA]);
}

#[test]
fn five_agents_three_to_two_always_pick_a() {
    let votes = Votes::new(3, 2).unwrap();
    let p = FourStateProtocol;
    for seed in 0..100 {
        let mut config = Configuration::from_protocol(&p, 5, &votes, seed).unwrap();
        let r = run(&mut config, &p, p.target(&votes), 1_000_000).unwrap();
        assert_eq!(r.outcome, Outcome::ConvergedCorrect, "seed {seed}");
        assert!(config.states().iter().all(|&s| p.output(s) == Opinion::A));
    }
}

#[test]
fn identity_transition_only_advances_the_counter() {
    let states = vec![FourState::StrongA; 4];
    let mut config = Configuration::new(states.clone(), 5).unwrap();
    let record = step(&mut config, &FourStateProtocol);
    assert_eq!(record.before, record.after);
    assert_eq!(config.states(), &states[..]);
    assert_eq!(config.steps(), 1);
}

#[test]
fn runs_are_reproducible() {
    let p = PhasedMajority::new(ProtocolParams::new(128).unwrap()).unwrap();
    let votes = Votes::new(65, 63).unwrap();
    let once = |seed| {
        let mut config = Configuration::from_protocol(&p, 128, &votes, seed).unwrap();
        let r = run(&mut config, &p, p.target(&votes), p.horizon()).unwrap();
        (r, config.into_states())
    };
    assert_eq!(once(17), once(17));
    assert_ne!(once(17).0.steps, once(18).0.steps);
}

fn leader_states(n: usize) -> impl Strategy<Value = (LeaderElection, Vec<u64>)> {
    let p = LeaderElection::new(ProtocolParams::new(n).unwrap()).unwrap();
    let count = p.state_count();
    proptest::collection::vec(0..count, n).prop_map(move |codes| (p.clone(), codes))
}

proptest! {
    #[test]
    fn parallel_time_times_half_n_is_steps(steps in 0u64..1 << 40, n in 2usize..1 << 20) {
        let t = parallel_time(steps, n).unwrap();
        prop_assert_eq!(t * Ratio::new(n as u64, 2), Ratio::from_integer(steps));
    }

    #[test]
    fn pairs_are_distinct_and_in_range(n in 2usize..10_000, seed: u64) {
        let mut rng = SimRng::seed_from(seed);
        for _ in 0..64 {
            let (i, j) = select_pair(n, &mut rng).unwrap();
            prop_assert!(i != j && i < n && j < n);
        }
    }

    #[test]
    fn a_step_touches_only_the_selected_pair((p, codes) in leader_states(12), seed: u64) {
        let states: Vec<_> = codes.iter().map(|&c| p.decode(c).unwrap()).collect();
        let mut config = Configuration::new(states.clone(), seed).unwrap();
        let record = step(&mut config, &p);
        let (i, j) = record.agents;
        prop_assert_eq!(record.before, (states[i], states[j]));
        prop_assert_eq!(record.after, p.delta(states[i], states[j]));
        prop_assert_eq!(config.steps(), 1);
        for (k, (old, new)) in states.iter().zip(config.states()).enumerate() {
            if k != i && k != j {
                prop_assert_eq!(old, new);
            }
        }
        prop_assert_eq!(config.states().len(), 12);
    }
}
