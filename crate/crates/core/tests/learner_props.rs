use ldp_online::gradient_memory::{EngineKind, GradientEngine};
use ldp_online::learner::{inbox, LearnerState, Message, ProjectionSet};
use ldp_online::objectives::{ProblemSpec, Sample};
use ldp_online::privacy::{NoiseSchedule, PrivacyLedger};
use ldp_online::rng::Streams;
use ldp_online::topology::{build_weight_matrix, Graph, Scale, WeightMatrix, WeightScheme};
use ldp_online::Error;
use proptest::collection::vec;
use proptest::prelude::*;

const DIM: usize = 3;

fn domain() -> impl Strategy<Value = ProjectionSet> {
    prop_oneof![
        (vec(-1.0f64..1.0, DIM), 0.2f64..3.0).prop_map(|(c, r)| ProjectionSet::ball(c, r).unwrap()),
        (vec(-2.0f64..0.0, DIM), vec(0.1f64..2.0, DIM)).prop_map(|(lo, hi)| ProjectionSet::boxed(lo, hi).unwrap()),
    ]
}

fn learner(id: usize, theta: Vec<f64>, p: &ProblemSpec, w: &WeightMatrix) -> LearnerState {
    let noise = NoiseSchedule::new(0.5, 0.1).unwrap();
    let ledger = PrivacyLedger::new(w.wbar(), p.l1_clip, p.sample_lipschitz, DIM, noise).unwrap();
    let engine = GradientEngine::new(EngineKind::Affine, p.loss, DIM).unwrap();
    LearnerState::new(id, theta, engine, noise, ledger, &p.domain).unwrap()
}

fn ring() -> WeightMatrix {
    build_weight_matrix(&Graph::ring(4).unwrap(), WeightScheme::Metropolis, Scale::Auto).unwrap()
}

fn sample(x: &[f64], y: f64) -> Sample {
    Sample::new(x.to_vec(), y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn updates_stay_in_the_domain(
        dom in domain(),
        payloads in vec(vec(-50.0f64..50.0, DIM), 4),
        xs in vec((vec(-1.0f64..1.0, DIM), -3.0f64..3.0), 1..6),
        gamma in 0.0f64..0.5,
        lambda in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let w = ring();
        let p = ProblemSpec::ridge(0.1, 2.0, 3.0, dom.clone()).unwrap();
        let start = dom.sample_uniform(&mut Streams::new(seed, 0).stream(0, 0, ldp_online::rng::Purpose::Init));
        let mut l = learner(0, start, &p, &w);
        let msgs: Vec<Message> = payloads.iter().enumerate().map(|(j, pl)| Message { from: j, round: 0, payload: pl.clone() }).collect();
        let samples: Vec<Sample> = xs.iter().map(|(x, y)| sample(x, *y)).collect();
        l.observe(&samples).unwrap();
        l.local_update(&inbox(&w, 0, &msgs), &w, gamma, lambda, &p, Some(p.l1_clip)).unwrap();
        prop_assert!(dom.contains(l.theta(), 1e-9), "{:?} left {:?}", l.theta(), dom);
        prop_assert_eq!(l.round(), 1);
    }

    #[test]
    fn stale_or_missing_messages_are_rejected(round in 1usize..100, drop_one in any::<bool>()) {
        let w = ring();
        let p = ProblemSpec::ridge(0.1, 2.0, 3.0, ProjectionSet::cube(DIM, -1.0, 1.0).unwrap()).unwrap();
        let mut l = learner(0, vec![0.0; DIM], &p, &w);
        l.observe(&[sample(&[0.1, 0.2, 0.3], 1.0)]).unwrap();
        let r = if drop_one { 0 } else { round };
        let msgs: Vec<Message> = (0..4).map(|j| Message { from: j, round: r, payload: vec![0.0; DIM] }).collect();
        let mut ib = inbox(&w, 0, &msgs);
        if drop_one {
            ib.pop();
        }
        let before = l.theta().to_vec();
        let e = l.local_update(&ib, &w, 0.1, 0.1, &p, None);
        prop_assert!(matches!(e, Err(Error::Protocol(_))));
        prop_assert_eq!(l.theta(), before.as_slice());
        prop_assert_eq!(l.round(), 0);
    }

    /// Neighbours' clean parameters never reach a learner: replacing them
    /// with sentinels while keeping the broadcasts leaves the update unchanged.
    #[test]
    fn only_broadcasts_reach_a_learner(
        thetas in vec(vec(-1.0f64..1.0, DIM), 4),
        data in vec(vec((vec(-1.0f64..1.0, DIM), -2.0f64..2.0), 4), 1..20),
        seed in any::<u64>(),
    ) {
        let w = ring();
        let p = ProblemSpec::ridge(0.2, 2.0, 3.0, ProjectionSet::cube(DIM, -1.0, 1.0).unwrap()).unwrap();
        let streams = Streams::new(seed, 0);
        let mut honest: Vec<LearnerState> = thetas.iter().enumerate().map(|(i, t)| learner(i, t.clone(), &p, &w)).collect();
        let mut probe = learner(0, thetas[0].clone(), &p, &w);
        for (t, round) in data.iter().enumerate() {
            let msgs: Vec<Message> = honest.iter().map(|l| l.make_broadcast(&streams, true).unwrap()).collect();
            // sentinels sit on a corner of the domain and are never consulted
            let sentinels: Vec<LearnerState> = (0..4).map(|i| learner(i, vec![1.0; DIM], &p, &w)).collect();
            prop_assert_eq!(sentinels.len(), 4);
            let (g, lam) = (0.3 / (t + 1) as f64, 0.05);
            for (i, l) in honest.iter_mut().enumerate() {
                l.observe(&[sample(&round[i].0, round[i].1)]).unwrap();
                l.local_update(&inbox(&w, i, &msgs), &w, g, lam, &p, None).unwrap();
            }
            probe.observe(&[sample(&round[0].0, round[0].1)]).unwrap();
            probe.local_update(&inbox(&w, 0, &msgs), &w, g, lam, &p, None).unwrap();
            prop_assert_eq!(probe.theta(), honest[0].theta());
        }
    }
}
