use penalized_reflection::brownian::TimeGrid;
use penalized_reflection::geometry::ConvexDomain;
use penalized_reflection::path::StatePath;
use penalized_reflection::rates::{fit_rate, lp_sup_error, ErrorRow, ErrorTable, Regressor};
use penalized_reflection::reflected::{minimal_regulator_brute_force, skorokhod_map_halfline};
use proptest::prelude::*;

fn domains() -> Vec<ConvexDomain> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        ConvexDomain::half_line(-0.5).unwrap(),
        ConvexDomain::boxed(vec![-1.0, 0.0], vec![1.0, f64::INFINITY]).unwrap(),
        ConvexDomain::polyhedron(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![s, s]],
            vec![0.0, 0.0, 1.0],
        )
        .unwrap(),
        ConvexDomain::ball(vec![1.0, -1.0], 0.5).unwrap(),
    ]
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn pair() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (0usize..4).prop_flat_map(|i| {
        let d = domains()[i].dim();
        (Just(i), point(d), point(d))
    })
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_nonexpansive((i, x, y) in pair()) {
        let d = &domains()[i];
        let (px, py) = (d.project(&x).unwrap(), d.project(&y).unwrap());
        prop_assert!(dist(&d.project(&px).unwrap(), &px) <= 1e-10);
        prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-10);
        prop_assert!(d.contains(&px, 1e-10).unwrap());
    }

    #[test]
    fn projection_satisfies_variational_inequality((i, x, y) in pair()) {
        let d = &domains()[i];
        let px = d.project(&x).unwrap();
        let inside = d.project(&y).unwrap();
        let v: f64 = inside.iter().zip(&px).zip(&x).map(|((q, p), z)| (q - p) * (z - p)).sum();
        prop_assert!(v <= 1e-9, "{v}");
        prop_assert!((d.dist(&x).unwrap() - dist(&x, &px)).abs() == 0.0);
    }

    #[test]
    fn lp_sup_error_is_symmetric_with_triangle_inequality(
        a in prop::collection::vec(-3.0f64..3.0, 17),
        b in prop::collection::vec(-3.0f64..3.0, 17),
        c in prop::collection::vec(-3.0f64..3.0, 17),
    ) {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let path = |v: &Vec<f64>| StatePath::new(g, 1, v.clone()).unwrap();
        let (pa, pb, pc) = (path(&a), path(&b), path(&c));
        let ab = lp_sup_error(&pa, &pb, 1.0).unwrap();
        prop_assert_eq!(ab, lp_sup_error(&pb, &pa, 1.0).unwrap());
        let ac = lp_sup_error(&pa, &pc, 1.0).unwrap();
        let cb = lp_sup_error(&pc, &pb, 1.0).unwrap();
        prop_assert!(ab <= ac + cb + 1e-15);
        prop_assert!((lp_sup_error(&pa, &pb, 3.0).unwrap() - ab.powi(3)).abs() <= 1e-12 * (1.0 + ab.powi(3)));
    }

    #[test]
    fn fit_recovers_power_laws(beta in 0.05f64..1.5, scale in 0.01f64..100.0, inv in any::<bool>()) {
        let regressor = if inv { Regressor::InvN } else { Regressor::LnNOverN };
        let rows = (4..=12)
            .map(|k| {
                let n = f64::from(1u32 << k);
                let base = if inv { 1.0 / n } else { n.ln() / n };
                ErrorRow { n, num_paths: 1, h_fine: 1.0, p: 2.0, error: scale * base.powf(beta), stderr: 0.0 }
            })
            .collect();
        let r = fit_rate(&ErrorTable::new(rows).unwrap(), regressor).unwrap();
        prop_assert!((r.slope - beta).abs() < 1e-12, "{} vs {beta}", r.slope);
        prop_assert!((r.intercept - scale.ln()).abs() < 1e-10);
    }

    #[test]
    fn running_max_regulator_is_minimal(steps in prop::collection::vec(-1.0f64..1.0, 64), start in 0.0f64..0.5) {
        let g = TimeGrid::new(1.0, 6).unwrap();
        let mut y = vec![start];
        for s in &steps {
            y.push(y.last().unwrap() + s);
        }
        let t = skorokhod_map_halfline(g, &y, 0.0).unwrap();
        let brute = minimal_regulator_brute_force(&y, 0.0);
        for (k, b) in t.regulator.iter().zip(&brute) {
            prop_assert_eq!(*k, *b);
        }
        prop_assert!(t.states.values().iter().all(|x| *x >= 0.0));
    }
}
