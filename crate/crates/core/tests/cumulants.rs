use portvar::cumulants::{
    cumulants_to_moments, estimate_matrix, moments_to_cumulants, raw_moments, read_returns_csv,
};
use portvar::{CumulantMatrix, ReturnSeries};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cumulants_of(samples: &[f64], d: usize) -> Vec<f64> {
    let s = ReturnSeries::new("a", samples.to_vec());
    moments_to_cumulants(&raw_moments(&s, d).unwrap()).unwrap()
}

fn close(a: f64, b: f64, rtol: f64, scale: f64) -> bool {
    (a - b).abs() <= rtol * scale.max(a.abs()).max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn reverse_recursion_inverts(kappa in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let m = cumulants_to_moments(&kappa);
        let back = moments_to_cumulants(&m).unwrap();
        let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (a, b) in kappa.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn shift_moves_only_the_mean(
        samples in prop::collection::vec(-1.0f64..1.0, 8..40),
        c in -1.0f64..1.0,
    ) {
        let d = 4;
        let base = cumulants_of(&samples, d);
        let shifted: Vec<f64> = samples.iter().map(|v| v + c).collect();
        let moved = cumulants_of(&shifted, d);
        prop_assert!(close(moved[0], base[0] + c, 1e-10, 1.0));
        for j in 1..d {
            prop_assert!(close(moved[j], base[j], 1e-10, 1.0), "order {}: {} vs {}", j + 1, moved[j], base[j]);
        }
    }

    #[test]
    fn scaling_is_homogeneous(
        samples in prop::collection::vec(-1.0f64..1.0, 8..40),
        a in 0.2f64..3.0,
    ) {
        let d = 5;
        let base = cumulants_of(&samples, d);
        let scaled: Vec<f64> = samples.iter().map(|v| a * v).collect();
        let got = cumulants_of(&scaled, d);
        for j in 0..d {
            let want = base[j] * a.powi(j as i32 + 1);
            prop_assert!(close(got[j], want, 1e-10, a.powi(j as i32 + 1)), "order {}: {} vs {want}", j + 1, got[j]);
        }
    }

    #[test]
    fn variance_is_second_cumulant(samples in prop::collection::vec(-2.0f64..2.0, 2..30)) {
        let s = ReturnSeries::new("a", samples);
        let m = raw_moments(&s, 2).unwrap();
        let k = moments_to_cumulants(&m).unwrap();
        prop_assert!((k[1] - (m[1] - m[0] * m[0])).abs() < 1e-14);
    }
}

#[test]
fn gaussian_samples_have_small_higher_cumulants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let series: Vec<ReturnSeries> = (0..2)
        .map(|i| {
            let xs: Vec<f64> = (0..200_000)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.05 + 0.2 * z
                })
                .collect();
            ReturnSeries::new(format!("g{i}"), xs)
        })
        .collect();
    let est = estimate_matrix(&series, 4).unwrap();
    assert_eq!((est.cumulants.n(), est.cumulants.d()), (2, 4));
    for i in 1..=2 {
        assert!((est.cumulants.get(i, 1) - 0.05).abs() < 5e-3);
        assert!((est.cumulants.get(i, 2) - 0.04).abs() < 2e-3);
        // standard errors are about 4e-5 and 2e-5 at this sample size
        assert!(est.cumulants.get(i, 3).abs() < 3e-4);
        assert!(est.cumulants.get(i, 4).abs() < 3e-4);
    }
}

#[test]
fn csv_to_matrix_to_json() {
    let csv = "A,B\n0.1,0.3\n0.2,-0.1\n0.3,0.2\n";
    let series = read_returns_csv(csv.as_bytes()).unwrap();
    let est = estimate_matrix(&series, 2).unwrap();
    assert_eq!(est.assets, vec!["A", "B"]);
    assert!((est.cumulants.get(1, 1) - 0.2).abs() < 1e-15);
    assert!((est.cumulants.get(1, 2) - (0.14 / 3.0 - 0.04)).abs() < 1e-15);
    let json = est.cumulants.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["n"], 2);
    assert_eq!(v["d"], 2);
    assert_eq!(v["entries"].as_array().unwrap().len(), 2);
    assert_eq!(CumulantMatrix::from_json(&json).unwrap(), est.cumulants);
}
