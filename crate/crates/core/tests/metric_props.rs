use ldp_online::learner::ProjectionSet;
use ldp_online::metrics::{
    drift_check, drift_constant, dynamic_regret, erm_optimum, instantaneous_regret, projected_gradient, rate_fit, tracking_error,
    ErmOracle, OracleMethod, RidgeStats,
};
use ldp_online::objectives::{Loss, ProblemSpec, Sample};
use proptest::collection::vec;
use proptest::prelude::*;

/// Samples with `|x|_2 <= 1` and `|y| <= 2`.
fn bounded_samples(n: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Sample>> {
    vec((vec(-1.0f64..1.0, n), -2.0f64..2.0), len).prop_map(move |rows| {
        rows.into_iter()
            .map(|(x, y)| {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                Sample::new(x.iter().map(|v| v / norm).collect(), y)
            })
            .collect()
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

const PG: OracleMethod = OracleMethod::ProjectedGradient { tol: 1e-12, max_iters: 200_000 };

/// One replicate's pooled risk, its minimizer, and learners' parameters.
fn replicate(n: usize) -> impl Strategy<Value = (Vec<Sample>, Vec<Vec<f64>>)> {
    (bounded_samples(n, 1..30), vec(vec(-1.0f64..1.0, n), 1..5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interior_ridge_solution_satisfies_normal_equations(xs in (1usize..6).prop_flat_map(|n| bounded_samples(n, 1..40)), alpha in 0.01f64..2.0) {
        let n = xs[0].dim();
        let mut st = RidgeStats::new(n, alpha);
        xs.iter().for_each(|s| st.add(s).unwrap());
        let x = st.solve(&ProjectionSet::cube(n, -1e3, 1e3).unwrap(), OracleMethod::ClosedFormRidge).unwrap();
        prop_assert!(st.normal_residual(&x) <= 1e-10, "residual {}", st.normal_residual(&x));
    }

    #[test]
    fn closed_form_agrees_with_projected_gradient(
        xs in (1usize..5).prop_flat_map(|n| bounded_samples(n, 1..40)),
        alpha in 0.05f64..2.0,
        half in 0.05f64..2.0,
        ball in any::<bool>(),
    ) {
        let n = xs[0].dim();
        let domain = if ball { ProjectionSet::ball(vec![0.0; n], half).unwrap() } else { ProjectionSet::cube(n, -half, half).unwrap() };
        let spec = ProblemSpec::ridge(alpha, 1.0, 2.0, domain).unwrap();
        let a = erm_optimum(&xs, &spec, OracleMethod::ClosedFormRidge).unwrap();
        let mut st = RidgeStats::new(n, alpha);
        xs.iter().for_each(|s| st.add(s).unwrap());
        // plain projected gradient on the averaged objective, independent of the solver's own polish
        let lip = 2.0 * (1.0 + alpha);
        let b = projected_gradient(|t| st.gradient(t), lip, &spec.domain, &vec![0.0; n], 1e-13, 500_000).unwrap();
        prop_assert!(dist2(&a, &b.x).sqrt() <= 1e-7, "{a:?} vs {:?}", b.x);
        let c = erm_optimum(&xs, &spec, PG).unwrap();
        prop_assert!(dist2(&a, &c).sqrt() <= 1e-7);
    }

    #[test]
    fn tracking_and_regret_bounds(
        reps in (1usize..4).prop_flat_map(|n| vec(replicate(n), 1..5)),
        alpha in 0.05f64..1.0,
    ) {
        let n = reps[0].0[0].dim();
        let m = reps.iter().map(|r| r.1.len()).min().unwrap();
        let spec = ProblemSpec::ridge(alpha, 1.0, 2.0, ProjectionSet::ball(vec![0.0; n], 1.0).unwrap()).unwrap();
        let mut oracles = Vec::new();
        let mut optima = Vec::new();
        for (xs, _) in &reps {
            let mut o = ErmOracle::new(&spec);
            xs.iter().for_each(|s| o.add(s).unwrap());
            optima.push(o.optimum().unwrap());
            oracles.push(o);
        }
        let theta: Vec<Vec<Vec<f64>>> = reps.iter().map(|r| r.1[..m].iter().map(|t| spec.domain.project(t).unwrap()).collect()).collect();
        let v = tracking_error(&theta, &optima).unwrap();
        let r = instantaneous_regret(&theta, &optima, |k, t| oracles[k].objective(t)).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(r >= -1e-12);
        // gradient norm bound turns the gap into a distance bound
        prop_assert!(r <= spec.grad_bound * v.sqrt() + 1e-10, "R {r} V {v}");
        // strong convexity around a constrained minimizer
        prop_assert!(r >= spec.mu / 2.0 * v - 1e-10, "R {r} V {v}");
        // recompute V from the raw trace
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let mean = theta.iter().zip(&optima).map(|(th, o)| dist2(&th[i], o)).sum::<f64>() / theta.len() as f64;
            worst = worst.max(mean);
        }
        prop_assert!((worst - v).abs() <= 1e-12 * worst.max(1.0));
    }

    #[test]
    fn optimum_drift_respects_its_bound(xs in (1usize..4).prop_flat_map(|n| bounded_samples(n, 10..120)), alpha in 0.05f64..1.0, half in 0.2f64..3.0) {
        let n = xs[0].dim();
        let spec = ProblemSpec::ridge(alpha, 1.0, 2.0, ProjectionSet::cube(n, -half, half).unwrap()).unwrap();
        let mut o = ErmOracle::new(&spec);
        let mut seq = Vec::new();
        for (t, s) in xs.iter().enumerate() {
            o.add(s).unwrap();
            seq.push((t, o.optimum().unwrap()));
        }
        let rep = drift_check(&seq, (0.0, f64::INFINITY));
        prop_assert!(rep.sup_scaled <= 2.0 * drift_constant(&spec), "{} vs {}", rep.sup_scaled, drift_constant(&spec));
    }

    #[test]
    fn fitted_slope_recovers_a_noisy_power_law(slope in -2.5f64..0.5, scale in 1e-3f64..1e3, noise in vec(-0.1f64..0.1, 60)) {
        let series: Vec<(f64, f64)> = (0..60)
            .map(|k| {
                let t = 100.0 * 1000f64.powf(k as f64 / 59.0);
                (t, scale * t.powf(slope) * noise[k].exp())
            })
            .collect();
        let fit = rate_fit(&series, (100.0, 1e5)).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 0.05, "{} vs {slope}", fit.slope);
        prop_assert_eq!(fit.points, 60);
    }

    #[test]
    fn dynamic_regret_matches_direct_sum(
        rounds in (1usize..4, 1usize..4).prop_flat_map(|(n, m)| vec((vec(vec(-1.0f64..1.0, n), m), vec(-1.0f64..1.0, n), bounded_samples(n, m..m + 1)), 1..20)),
        alpha in 0.01f64..1.0,
    ) {
        let loss = Loss::Ridge { alpha };
        let theta: Vec<Vec<Vec<f64>>> = rounds.iter().map(|r| r.0.clone()).collect();
        let opt: Vec<Vec<f64>> = rounds.iter().map(|r| r.1.clone()).collect();
        let samples: Vec<Vec<Sample>> = rounds.iter().map(|r| r.2.clone()).collect();
        let got = dynamic_regret(&loss, &theta, &opt, &samples).unwrap();
        let f = |th: &[f64], s: &Sample| {
            let r = s.y - th.iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>();
            r * r + alpha * th.iter().map(|v| v * v).sum::<f64>()
        };
        let mut total = 0.0;
        for t in 0..rounds.len() {
            for i in 0..theta[t].len() {
                total += f(&theta[t][i], &samples[t][i]) - f(&opt[t], &samples[t][i]);
            }
            prop_assert!((got[t] - total).abs() <= 1e-10 * total.abs().max(1.0));
        }
    }
}
