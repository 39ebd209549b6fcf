use popproto::fourstate::{FourStateProtocol, Opinion, Votes};
use popproto::leader::{LeaderElection, LeaderOutput};
use popproto::oracle::{explore, CLASS_CAP};
use popproto::params::{LeaderConstants, ProtocolParams};

#[test]
fn fourstate_all_imbalances_converge() {
    for n in 3..=4usize {
        for a in 0..=n {
            let Ok(votes) = Votes::new(a, n - a) else { continue };
            let r = explore(&FourStateProtocol, &votes, n, CLASS_CAP).unwrap();
            assert_eq!(r.doomed, 0, "n={n} a={a}: {:?}", r.witness);
            assert_eq!(r.stable_outputs, vec![vec![votes.majority(); n]], "n={n} a={a}");
        }
    }
}

#[test]
fn fourstate_minority_never_stabilises() {
    let r = explore(&FourStateProtocol, &Votes::new(2, 1).unwrap(), 3, CLASS_CAP).unwrap();
    assert!(r.stable_outputs.iter().all(|outs| !outs.contains(&Opinion::B)));
}

#[test]
fn leader_miniature_three_agents() {
    let params = ProtocolParams::with_constants(3, 1, 16, LeaderConstants::miniature()).unwrap();
    let p = LeaderElection::new(params).unwrap();
    let r = explore(&p, &(), 3, CLASS_CAP).unwrap();
    eprintln!("classes={} stable={} correct={} doomed={}", r.classes, r.output_stable, r.correct_stable, r.doomed);
    assert_eq!(r.doomed, 0, "witness: {:?}", r.witness.map(|w| w.len()));
    let expected = vec![LeaderOutput::Leader, LeaderOutput::Follower, LeaderOutput::Follower];
    assert_eq!(r.stable_outputs, vec![expected]);
}
