use std::collections::BTreeMap;

use ldp_online::config::{parse_config, StreamConfig};
use ldp_online::learner::{inbox, LearnerState, Message};
use ldp_online::gradient_memory::GradientEngine;
use ldp_online::privacy::{sample_laplace, PrivacyLedger};
use ldp_online::report::trace_csv;
use ldp_online::rng::{Purpose, Streams};
use ldp_online::simulator::{parse_svmlight, Experiment, StreamSource};
use ldp_online::objectives::Sample;
use proptest::collection::vec;
use proptest::prelude::*;

const RING: &str = r#"
seed = 3
horizon = 300
replicates = 3
checkpoints_per_octave = 2

[topology]
generator = "ring"
m = 4

[problem]
loss = "ridge"
alpha = 0.1

[domain]
kind = "box"
lo = [-2.0, -2.0]
hi = [2.0, 2.0]

[schedules]
regime = "theorem1"
u = 0.7
v = 0.8

[noise]
sigma = 0.5
varsigma = 0.1

[stream]
kind = "synthetic_linear"
theta_true = [0.5, -0.3]
feature_bound = 1.0
label_noise = 0.3
"#;

fn ring(overrides: &[&str]) -> Experiment {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Experiment::build(parse_config(RING, &o).unwrap()).unwrap()
}

#[test]
fn runs_replay_bit_for_bit() {
    let e = ring(&[]);
    let a = e.run().unwrap();
    let b = ring(&[]).run().unwrap();
    assert_eq!(a, b);
    assert_eq!(trace_csv(&a).unwrap(), trace_csv(&b).unwrap());
    // a replicate on its own matches its slot in the parallel run
    let alone = e.run_replicate(2).unwrap();
    for (row, cp) in alone.iter().zip(&a.checkpoints) {
        assert_eq!(row.theta, cp.theta[2]);
    }
    let other = ring(&["seed=4"]).run().unwrap();
    assert_ne!(a.last().theta, other.last().theta);
}

#[test]
fn replicate_noise_is_uncorrelated() {
    let n = 50_000;
    for (r1, r2) in [(0u64, 1u64), (1, 2), (0, 17)] {
        let a = sample_laplace(1.0, n, &mut Streams::new(9, r1).stream(0, 5, Purpose::Noise)).unwrap();
        let b = sample_laplace(1.0, n, &mut Streams::new(9, r2).stream(0, 5, Purpose::Noise)).unwrap();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.02, "replicates {r1},{r2}: correlation {corr}");
    }
}

#[test]
fn lone_learner_without_noise_finds_the_optimum() {
    let e = ring(&[
        "topology.generator=\"complete\"",
        "topology.m=1",
        "horizon=100000",
        "replicates=1",
        "noise.enabled=false",
        "schedules.gamma0=0.1",
        "schedules.lambda0=0.5",
    ]);
    let tr = e.run().unwrap();
    let v = tr.last().tracking_error;
    assert!(v < 1e-3, "tracking error {v}");
}

#[test]
fn two_learners_contract_at_the_mixing_rate() {
    let e = ring(&[
        "topology.generator=\"explicit\"",
        "topology.matrix=[[-0.4, 0.4], [0.4, -0.4]]",
        "topology.m=2",
        "disable_gradient=true",
        "noise.enabled=false",
        "horizon=40",
        "replicates=1",
        "checkpoints_per_octave=64",
        "init.theta0_per_learner=[[-1.0, 1.5], [1.0, -0.5]]",
    ]);
    let tr = e.run().unwrap();
    let cps = &tr.checkpoints;
    let gap = |k: usize| -> Vec<f64> {
        let th = &cps[k].theta[0];
        th[0].iter().zip(&th[1]).map(|(a, b)| a - b).collect()
    };
    let mut checked = 0;
    for k in 0..cps.len() - 1 {
        let (t, t1) = (cps[k].t, cps[k + 1].t);
        if t1 != t + 1 {
            continue;
        }
        let factor = 1.0 - 2.0 * e.schedules.gamma(t) * 0.4;
        for (a, b) in gap(k).iter().zip(gap(k + 1)) {
            assert!((a * factor - b).abs() <= 1e-12, "round {t}: {a} * {factor} vs {b}");
        }
        checked += 1;
    }
    assert!(checked >= 30);
    let g0 = gap(0);
    assert_eq!(g0, vec![-2.0, 2.0]);
}

/// The same protocol written out by hand: every learner broadcasts, then all
/// update from the broadcasts of that round.
#[test]
fn rounds_are_synchronous() {
    let e = ring(&["replicates=1", "horizon=50", "checkpoints_per_octave=64"]);
    let streams = Streams::new(e.config.seed, 0);
    let m = e.w.m();
    let dim = e.problem.dim();
    let mut ls: Vec<LearnerState> = e
        .initial_points(&streams)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, th)| {
            let ledger = PrivacyLedger::new(e.w.wbar(), e.problem.l1_clip, e.problem.sample_lipschitz, dim, e.noise[i]).unwrap();
            let engine = GradientEngine::new(e.engine, e.problem.loss, dim).unwrap();
            LearnerState::new(i, th, engine, e.noise[i], ledger, &e.problem.domain).unwrap()
        })
        .collect();
    let mut manual = vec![ls.iter().map(|l| l.theta().to_vec()).collect::<Vec<_>>()];
    for t in 0..50 {
        let msgs: Vec<Message> = ls.iter().map(|l| l.make_broadcast(&streams, true).unwrap()).collect();
        assert!(msgs.iter().all(|msg| msg.round == t));
        for i in (0..m).rev() {
            let l = &mut ls[i];
            l.observe(&e.source.draw(&streams, i, t, 1, Purpose::Data)).unwrap();
            l.local_update(&inbox(&e.w, i, &msgs), &e.w, e.schedules.gamma(t), e.schedules.lambda(t), &e.problem, Some(e.problem.l1_clip))
                .unwrap();
        }
        manual.push(ls.iter().map(|l| l.theta().to_vec()).collect());
    }
    let tr = e.run().unwrap();
    for cp in &tr.checkpoints {
        assert_eq!(cp.theta[0], manual[cp.t], "round {}", cp.t);
    }
}

#[test]
fn synthetic_features_have_the_uniform_second_moment() {
    let b = 1.5;
    let src = StreamSource::from_config(
        &StreamConfig::SyntheticLinear { theta_true: vec![0.1, 0.2, 0.3], feature_bound: b, label_noise: 0.0 },
        1,
    )
    .unwrap();
    let streams = Streams::new(1, 0);
    let xs: Vec<Sample> = (0..200).flat_map(|t| src.draw(&streams, 0, t, 1000, Purpose::Data)).collect();
    let n = xs.len() as f64;
    let target = b * b / 3.0;
    for j in 0..3 {
        for k in 0..3 {
            let e = xs.iter().map(|s| s.x[j] * s.x[k]).sum::<f64>() / n;
            let want = if j == k { target } else { 0.0 };
            assert!((e - want).abs() <= 0.02 * target, "E[x{j} x{k}] = {e}");
        }
    }
}

fn labels() -> BTreeMap<String, f64> {
    [("+1".to_string(), 1.0), ("-1".to_string(), 0.0)].into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn svmlight_round_trip(rows in vec((vec(prop_oneof![Just(0.0), -1e3f64..1e3], 6), any::<bool>()), 100)) {
        let mut text = String::new();
        for (x, y) in &rows {
            text.push_str(if *y { "+1" } else { "-1" });
            for (j, v) in x.iter().enumerate() {
                if *v != 0.0 {
                    text.push_str(&format!(" {}:{v:e}", j + 1));
                }
            }
            text.push('\n');
        }
        let parsed = parse_svmlight(&text, &labels(), Some(6), "gen").unwrap();
        prop_assert_eq!(parsed.len(), 100);
        for (s, (x, y)) in parsed.iter().zip(&rows) {
            prop_assert_eq!(s.y, *y as u8 as f64);
            for (a, b) in s.x.iter().zip(x) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
