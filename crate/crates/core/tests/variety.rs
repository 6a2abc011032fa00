use portvar::variety::{
    degree_compute, dimension_estimate, expected_degree, fiber_n2, sample_variety,
    write_samples_csv, PortfolioMap,
};
use portvar::{CumulantMatrix, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signed(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.random_range(0.2..2.0);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn random_map(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PortfolioMap {
    let rows = (0..n)
        .map(|_| (0..d).map(|_| signed(rng)).collect())
        .collect();
    PortfolioMap::new(CumulantMatrix::from_rows(rows).unwrap())
}

fn curve() -> PortfolioMap {
    PortfolioMap::new(
        CumulantMatrix::from_rows(vec![vec![2.0, 1.0, 7.0], vec![5.0, 2.0, 1.0]]).unwrap(),
    )
}

#[test]
fn map_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for (n, d) in [(2, 3), (3, 3), (3, 5), (4, 4), (5, 6)] {
        let pm = random_map(&mut rng, n, d);
        for _ in 0..100 {
            let x: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jac = pm.map_jacobian(&x).unwrap();
            let h = 1e-5;
            let scale = jac.amax().max(1.0);
            for i in 0..n - 1 {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = pm.map_point(&up).unwrap();
                let fd = pm.map_point(&dn).unwrap();
                for j in 0..d {
                    let diff = (fu[j] - fd[j]) / (2.0 * h);
                    worst = worst.max((diff - jac[(i, j)]).abs() / scale);
                }
            }
        }
    }
    assert!(worst < 1e-6, "worst {worst:e}");
}

#[test]
fn generic_dimension_is_n_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (n, d) in [(2, 1), (2, 3), (3, 3), (3, 5), (4, 4), (5, 4)] {
        let pm = random_map(&mut rng, n, d);
        let rep = dimension_estimate(&pm, 30, 7).unwrap();
        assert_eq!(rep.claimed_dimension, n - 1, "({n},{d})");
        assert!(rep.uniform());
    }
}

#[test]
fn degree_formula_over_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for (n, d) in [(2, 2), (2, 3), (2, 5), (3, 3), (3, 4), (4, 4)] {
        let want = expected_degree(n, d);
        for seed in 0..20u64 {
            let pm = random_map(&mut rng, n, d);
            let rep = degree_compute(&pm, &TrackerConfig::with_seed(seed), 1000 + seed).unwrap();
            assert_eq!(
                rep.claimed_degree,
                Some(want),
                "({n},{d}) seed {seed}: {:?}",
                rep.warnings
            );
            assert_eq!(rep.start_count, want);
            assert!(
                rep.reslice_residual < 1e-9,
                "({n},{d}) reslice {:e}",
                rep.reslice_residual
            );
        }
    }
}

#[test]
fn degree_does_not_depend_on_the_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for (n, d) in [(2, 4), (3, 4), (4, 5)] {
        let pm = random_map(&mut rng, n, d);
        let cfg = TrackerConfig::with_seed(3);
        let a = degree_compute(&pm, &cfg, 1).unwrap();
        let b = degree_compute(&pm, &cfg, 2).unwrap();
        assert_ne!(a.slice.c, b.slice.c);
        assert_eq!(a.claimed_degree, b.claimed_degree);
        assert_eq!(a.claimed_degree, Some(expected_degree(n, d)));
    }
}

#[test]
fn curve_witnesses_lie_in_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for trial in 0..5 {
        let pm = if trial == 0 {
            curve()
        } else {
            random_map(&mut rng, 2, 3 + trial % 3)
        };
        let cfg = TrackerConfig::with_seed(trial as u64);
        let rep = degree_compute(&pm, &cfg, 77 + trial as u64).unwrap();
        for w in &rep.witness_points {
            let fiber = fiber_n2(&pm, &w.y(), &cfg).unwrap();
            assert!(!fiber.is_empty(), "trial {trial}: witness without preimage");
            let x = w.x();
            assert!(fiber
                .iter()
                .any(|f| (f[0] - x[0]).norm() < 1e-6 * x[0].norm().max(1.0)));
        }
    }
}

#[test]
fn printed_curve_equations_hold() {
    let rows = sample_variety(&curve(), 201).unwrap();
    assert_eq!(rows.len(), 200);
    for r in &rows {
        let [y1, y2, y3] = [r.y[0], r.y[1], r.y[2]];
        let e1 = y1 * y1 - 6.0 * y1 - 3.0 * y2 + 11.0;
        let e2 = 6.0 * y1 * y2 + 23.0 * y1 - 63.0 * y2 + 9.0 * y3 - 58.0;
        let e3 = 36.0 * y2 * y2 + 18.0 * y1 * y3 + 367.0 * y1 - 561.0 * y2 + 81.0 * y3 - 1028.0;
        assert!(
            e1.abs() < 1e-9 && e2.abs() < 1e-9 && e3.abs() < 1e-9,
            "{e1:e} {e2:e} {e3:e}"
        );
    }
}

#[test]
fn curve_degree_and_csv_export() {
    let rep = degree_compute(&curve(), &TrackerConfig::default(), 0).unwrap();
    assert_eq!(rep.claimed_degree, Some(3));
    let rows = sample_variety(&curve(), 11).unwrap();
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,y1,y2,y3"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn surface_sample_grid() {
    let pm = PortfolioMap::new(
        CumulantMatrix::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 1.5, 0.5],
            vec![0.7, 0.2, -2.0],
        ])
        .unwrap(),
    );
    let rows = sample_variety(&pm, 10).unwrap();
    // positive compositions of 10 into 3 parts
    assert_eq!(rows.len(), 36);
    assert!(rows
        .iter()
        .all(|r| r.x.len() == 2 && r.x.iter().sum::<f64>() < 1.0));
}
