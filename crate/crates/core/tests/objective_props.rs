use ldp_online::objectives::{clip_l1, l1_norm, Loss, Sample};
use proptest::collection::vec;
use proptest::prelude::*;

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-3.0f64..3.0, n)
}

fn finite_difference(loss: &Loss, theta: &[f64], s: &Sample) -> Vec<f64> {
    let h = 1e-6;
    (0..theta.len())
        .map(|j| {
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[j] += h;
            b[j] -= h;
            (loss.value(&a, s).unwrap() - loss.value(&b, s).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ridge_gradient_matches_finite_difference((th, x) in (1usize..6).prop_flat_map(|n| (point(n), point(n))), y in -3.0f64..3.0, alpha in 0.01f64..2.0) {
        let loss = Loss::Ridge { alpha };
        let s = Sample::new(x, y);
        prop_assert!(rel_err(&loss.gradient(&th, &s).unwrap(), &finite_difference(&loss, &th, &s)) <= 1e-5);
    }

    #[test]
    fn logistic_gradient_matches_finite_difference((th, x) in (1usize..6).prop_flat_map(|n| (point(n), point(n))), label in any::<bool>(), r in 0.0f64..1.0) {
        let loss = Loss::Logistic { r };
        let s = Sample::new(x, label as u8 as f64);
        prop_assert!(rel_err(&loss.gradient(&th, &s).unwrap(), &finite_difference(&loss, &th, &s)) <= 1e-5);
    }

    #[test]
    fn ridge_quadratic_lower_bound((a, b, x) in (1usize..6).prop_flat_map(|n| (point(n), point(n), point(n))), y in -3.0f64..3.0, alpha in 0.01f64..2.0) {
        let loss = Loss::Ridge { alpha };
        let s = Sample::new(x, y);
        let g = loss.gradient(&a, &s).unwrap();
        let lin: f64 = g.iter().zip(b.iter().zip(&a)).map(|(g, (bi, ai))| g * (bi - ai)).sum();
        let sq: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
        let lower = loss.value(&a, &s).unwrap() + lin + alpha * sq;
        prop_assert!(loss.value(&b, &s).unwrap() >= lower - 1e-9 * lower.abs().max(1.0));
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(g in vec(-50.0f64..50.0, 1..8), c in 0.01f64..40.0) {
        let once = clip_l1(&g, c);
        prop_assert!(l1_norm(&once) <= c * (1.0 + 1e-12));
        let twice = clip_l1(&once, c);
        for (p, q) in once.iter().zip(&twice) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
        if l1_norm(&g) <= c {
            prop_assert_eq!(&once, &g);
        } else {
            // direction is kept
            let k = once[0] / g[0];
            for (p, q) in once.iter().zip(&g) {
                prop_assert!((p - k * q).abs() <= 1e-9 * c);
            }
        }
    }
}
