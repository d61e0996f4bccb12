mod common;

use std::collections::BTreeMap;

use saloha::dynamics::{
    belief_other_csi, feedback_kernel_asymmetric, feedback_kernel_symmetric, local_state_kernel, propagate_belief,
    queue_kernel, LocalState,
};
use saloha::policy::{asymmetric_policy, lcsihp_policy, PolicyMode};
use saloha::{Error, Feedback, FsmcChannel, Network, ThresholdPolicy, TransmissionEvent};

fn event(tx: bool) -> TransmissionEvent {
    if tx {
        TransmissionEvent::Transmitted
    } else {
        TransmissionEvent::Silent
    }
}

/// Every (common state, z_prev, own events) combination where the joint
/// chain gives a non-null conditioning event must agree with the kernel.
fn check_against_joint(net: &Network, policy: &ThresholdPolicy, k: usize) -> usize {
    let mut compared = 0;
    for c in 0..policy.len() {
        for z in Feedback::ALL {
            let c_cur = policy.next(c, z);
            for bp in [false, true] {
                for bc in [false, true] {
                    let oracle = common::joint_feedback(
                        &net.channels,
                        k,
                        policy.thresholds(c),
                        policy.thresholds(c_cur),
                        z,
                        bp,
                        bc,
                    );
                    let Some(want) = oracle else { continue };
                    let got = net.feedback_kernel(k, policy, c, z, event(bp), event(bc)).unwrap();
                    for i in 0..3 {
                        assert!(
                            (got[i] - want[i]).abs() < 1e-10,
                            "c={c} z={z} bp={bp} bc={bc}: {got:?} vs {want:?}"
                        );
                    }
                    compared += 1;
                }
            }
        }
    }
    compared
}

#[test]
fn symmetric_kernel_matches_joint_chain() {
    for users in [1, 2, 3] {
        let ch = common::user1();
        let policy = lcsihp_policy(users, &ch).unwrap();
        let net = Network::symmetric(common::params(users, 3, 1.0), ch).unwrap();
        assert!(check_against_joint(&net, &policy, 0) > 0);
    }
}

#[test]
fn symmetric_kernel_matches_joint_chain_for_every_threshold_pair() {
    let ch = common::user2();
    let users = 3;
    let j = ch.len();
    let states: Vec<Vec<usize>> = (0..j).map(|g| vec![g; users]).collect();
    // each state moves to a different one per feedback so all pairs show up
    let next: Vec<[usize; 3]> = (0..j).map(|g| [g, (g + 3) % j, (g + 7) % j]).collect();
    let policy = ThresholdPolicy::new(PolicyMode::Symmetric, users, states, next, 0).unwrap();
    let net = Network::symmetric(common::params(users, 3, 1.0), ch).unwrap();
    assert!(check_against_joint(&net, &policy, 0) > 60);
}

#[test]
fn asymmetric_kernel_matches_joint_chain() {
    let channels = vec![common::user1(), common::user2()];
    let policy = asymmetric_policy(&channels).unwrap();
    let net = Network::new(common::params(2, 3, 1.0), channels).unwrap();
    for k in 0..2 {
        assert!(check_against_joint(&net, &policy, k) > 0);
    }
}

#[test]
fn asymmetric_kernel_matches_joint_chain_with_three_users() {
    let channels = vec![common::user1(), common::user2(), common::two_state()];
    let states = vec![vec![3, 5, 1], vec![0, 8, 0], vec![9, 2, 1]];
    let next = vec![[1, 2, 0], [2, 0, 1], [0, 1, 2]];
    let policy = ThresholdPolicy::new(PolicyMode::Asymmetric, 3, states, next, 0).unwrap();
    let net = Network::new(common::params(3, 3, 1.0), channels).unwrap();
    for k in 0..3 {
        assert!(check_against_joint(&net, &policy, k) > 0);
    }
}

#[test]
fn asymmetric_kernel_reduces_to_symmetric_on_identical_users() {
    let ch = common::user1();
    let channels = vec![ch.clone(); 4];
    for gp in 1..ch.len() {
        for gc in 0..ch.len() {
            for z in Feedback::ALL {
                for bp in [TransmissionEvent::Silent, TransmissionEvent::Transmitted] {
                    for bc in [TransmissionEvent::Silent, TransmissionEvent::Transmitted] {
                        let s = feedback_kernel_symmetric(z, bp, bc, gp, gc, 4, &ch);
                        let a = feedback_kernel_asymmetric(z, bp, bc, &[gp; 4], &[gc; 4], &channels, 2);
                        match (s, a) {
                            (Ok(s), Ok(a)) => {
                                for i in 0..3 {
                                    assert!((s[i] - a[i]).abs() < 1e-12, "{s:?} vs {a:?}");
                                }
                            }
                            (Err(_), Err(_)) => {}
                            (s, a) => panic!("gp={gp} gc={gc} z={z}: {s:?} vs {a:?}"),
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn kernel_after_ack_own_transmit_equals_nak() {
    // Own ACK means the others were all silent, exactly like a NAK.
    let ch = common::user2();
    for gp in 1..ch.len() {
        for gc in 0..ch.len() {
            for bc in [TransmissionEvent::Silent, TransmissionEvent::Transmitted] {
                let ack = feedback_kernel_symmetric(Feedback::Ack, TransmissionEvent::Transmitted, bc, gp, gc, 5, &ch).unwrap();
                let nak = feedback_kernel_symmetric(Feedback::Nak, TransmissionEvent::Silent, bc, gp, gc, 5, &ch).unwrap();
                assert_eq!(ack, nak);
            }
        }
    }
}

#[test]
fn transmitting_shifts_silent_counts() {
    // Pr{ACK | transmit} = Pr{NAK | silent}: both mean no other transmitter.
    let ch = common::user1();
    for gp in 1..ch.len() {
        for gc in 0..ch.len() {
            for z in [Feedback::Ack, Feedback::Collision] {
                let tx = feedback_kernel_symmetric(z, TransmissionEvent::Silent, TransmissionEvent::Transmitted, gp, gc, 4, &ch).unwrap();
                let idle = feedback_kernel_symmetric(z, TransmissionEvent::Silent, TransmissionEvent::Silent, gp, gc, 4, &ch).unwrap();
                assert_eq!(tx[Feedback::Nak.index()], 0.0);
                assert!((tx[Feedback::Ack.index()] - idle[Feedback::Nak.index()]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn iid_kernel_ignores_history() {
    let ch = FsmcChannel::iid(vec![0.5, 1.0, 2.0, 4.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    for gp in 1..4 {
        for gc in 0..4 {
            let base = feedback_kernel_symmetric(Feedback::Nak, TransmissionEvent::Silent, TransmissionEvent::Silent, gp, gc, 3, &ch).unwrap();
            for (z, b) in [
                (Feedback::Ack, TransmissionEvent::Silent),
                (Feedback::Ack, TransmissionEvent::Transmitted),
                (Feedback::Collision, TransmissionEvent::Silent),
                (Feedback::Collision, TransmissionEvent::Transmitted),
            ] {
                let k = feedback_kernel_symmetric(z, b, TransmissionEvent::Silent, gp, gc, 3, &ch).unwrap();
                for i in 0..3 {
                    assert!((k[i] - base[i]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn impossible_histories_are_null_events() {
    let ch = common::user1();
    let r = feedback_kernel_symmetric(Feedback::Nak, TransmissionEvent::Transmitted, TransmissionEvent::Silent, 3, 3, 3, &ch);
    assert!(matches!(r, Err(Error::NullEvent(_))));
    let r = feedback_kernel_symmetric(Feedback::Ack, TransmissionEvent::Silent, TransmissionEvent::Silent, 3, 3, 1, &ch);
    assert!(matches!(r, Err(Error::NullEvent(_))));
    let r = feedback_kernel_symmetric(Feedback::Collision, TransmissionEvent::Silent, TransmissionEvent::Silent, 3, 3, 2, &ch);
    assert!(matches!(r, Err(Error::NullEvent(_))));
}

#[test]
fn local_kernel_matches_joint_construction() {
    let ch = common::user1();
    let users = 2;
    let params = common::params(users, 3, 1.0);
    let policy = lcsihp_policy(users, &ch).unwrap();
    let net = Network::symmetric(params.clone(), ch.clone()).unwrap();
    let mut compared = 0;
    for q in 0..=3 {
        for h_prev in 0..ch.len() {
            for c in policy.reachable() {
                for z_prev in Feedback::ALL {
                    for h_cur in 0..ch.len() {
                        let s = LocalState { q, h_prev, common: c, z_prev, h_cur };
                        let power = 0.4 * params.max_power(ch.gain(h_cur));
                        let Some(want) = common::joint_local_kernel(&net.channels, &policy, &params, 0, &s, power) else {
                            continue;
                        };
                        let mut got: BTreeMap<LocalState, f64> = BTreeMap::new();
                        for (t, p) in local_state_kernel(&s, power, &policy, &net, 0).unwrap() {
                            *got.entry(t).or_insert(0.0) += p;
                        }
                        got.retain(|_, p| *p > 0.0);
                        assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>(), "{s:?}");
                        for (t, p) in &want {
                            assert!((got[t] - p).abs() < 1e-10, "{s:?} -> {t:?}");
                        }
                        compared += 1;
                    }
                }
            }
        }
    }
    assert!(compared > 100);
}

#[test]
fn queue_kernel_is_a_birth_death_step() {
    let params = common::params(1, 4, 200.0);
    let up = params.arrival_prob();
    for q in 0..=4 {
        for mu in [0.0, 100.0, 800.0] {
            let k = queue_kernel(q, mu, &params).unwrap();
            let total: f64 = k.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-15);
            assert!(k.iter().all(|&(t, _)| t.abs_diff(q) <= 1 && t <= 4));
            let p_up: f64 = k.iter().filter(|x| x.0 > q).map(|x| x.1).sum();
            if q < 4 {
                assert!((p_up - up).abs() < 1e-15);
            }
        }
    }
    assert!(matches!(queue_kernel(1, 900.0, &params), Err(Error::TimeScaleViolation { .. })));
    assert!(queue_kernel(5, 0.0, &params).is_err());
}

#[test]
fn feedback_from_counts() {
    assert_eq!(Feedback::from_transmitters(0), Feedback::Nak);
    assert_eq!(Feedback::from_transmitters(1), Feedback::Ack);
    assert_eq!(Feedback::from_transmitters(7), Feedback::Collision);
    for z in Feedback::ALL {
        assert_eq!(Feedback::from_index(z.index()), Some(z));
        assert_eq!(Feedback::parse(z.label()), Some(z));
    }
}

#[test]
fn belief_is_stationary_and_invariant() {
    let channels = vec![common::user1(), common::user2(), common::two_state()];
    let b = belief_other_csi(4, &[2, 3, 1], Feedback::Collision, &channels, 1).unwrap();
    assert_eq!(b.users, vec![0, 2]);
    assert!((b.total() - 1.0).abs() < 1e-12);
    let next = propagate_belief(&b, &channels);
    for &u in &b.users {
        let m = next.marginal(u, &channels).unwrap();
        for (a, p) in m.iter().zip(channels[u].stationary()) {
            assert!((a - p).abs() < 1e-12);
        }
    }
    assert!(next.marginal(1, &channels).is_none());
}
