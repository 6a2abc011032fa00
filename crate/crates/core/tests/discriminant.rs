use portvar::discriminant::{
    disc_eval, disc_poly_check_n2_d4, find_collision, SegmentSearch, Verdict, TOL_DISC,
};
use portvar::{solve_critical, CumulantMatrix, TrackerConfig, UtilityModel, WeightVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signed(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.random_range(0.3..2.0);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Coefficients `(c0, c1, c2)` of `P_1(x) − P_2(1 − x)` for two assets of order three.
fn reduced_quadratic(k: &[Vec<f64>], w: &[f64]) -> [f64; 3] {
    [
        w[0] * (k[0][0] - k[1][0]) - 2.0 * w[1] * k[1][1] - 3.0 * w[2] * k[1][2],
        2.0 * w[1] * (k[0][1] + k[1][1]) + 6.0 * w[2] * k[1][2],
        3.0 * w[2] * (k[0][2] - k[1][2]),
    ]
}

/// Real zeros of `s ↦ c1(s)² − 4 c0(s) c2(s)` along `w + s·dir`.
fn discriminant_zeros(k: &[Vec<f64>], w: &[f64], dir: &[f64]) -> Vec<f64> {
    let a = reduced_quadratic(k, w);
    let w1: Vec<f64> = w.iter().zip(dir).map(|(x, d)| x + d).collect();
    let b1 = reduced_quadratic(k, &w1);
    // coefficients are affine in s: c_i(s) = a_i + s·b_i
    let b = [b1[0] - a[0], b1[1] - a[1], b1[2] - a[2]];
    let qa = b[1] * b[1] - 4.0 * b[0] * b[2];
    let qb = 2.0 * a[1] * b[1] - 4.0 * (a[0] * b[2] + b[0] * a[2]);
    let qc = a[1] * a[1] - 4.0 * a[0] * a[2];
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 || qa == 0.0 {
        return vec![];
    }
    let r = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * r);
    let mut z = vec![q / qa, qc / q];
    z.sort_by(f64::total_cmp);
    z
}

#[test]
fn crossing_matches_closed_form_discriminant() {
    let mut found = 0;
    let mut seed = 0u64;
    while found < 4 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| signed(&mut rng)).collect())
            .collect();
        let w: Vec<f64> = (0..3).map(|_| signed(&mut rng)).collect();
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let zeros = discriminant_zeros(&k, &w, &dir);
        let Some(&z) = zeros.iter().find(|z| z.abs() < 1.5) else {
            continue;
        };
        let gap = zeros
            .iter()
            .filter(|&&o| o != z)
            .map(|o| (o - z).abs())
            .fold(f64::INFINITY, f64::min);
        // keep the other zero and any degree drop away from the segment
        let half = 0.4_f64.min(0.4 * gap);
        let (lo, hi) = (z - 0.9 * half, z + 1.1 * half);
        let w3_min = [lo, hi]
            .iter()
            .map(|s| w[2] + s * dir[2])
            .fold(f64::INFINITY, |a, b| a.min(b.abs()));
        if w3_min < 0.2 || (w[2] + z * dir[2]).signum() != (w[2] + lo * dir[2]).signum() {
            continue;
        }
        let m = UtilityModel::from_rows(k.clone(), w.clone()).unwrap();
        let mut search = SegmentSearch::new(dir.clone(), lo, hi);
        search.grid = 9;
        let rep = find_collision(&m, &search, &TrackerConfig::with_seed(seed))
            .unwrap()
            .expect("crossing inside the segment");
        assert!(
            (rep.s_star - z).abs() < 1e-6,
            "seed {seed}: s* {} vs {z}",
            rep.s_star
        );
        assert!(rep.diagnostic.disc_ratio() < TOL_DISC);
        assert_eq!(rep.verdict, Verdict::Multiple);
        found += 1;
    }
}

#[test]
fn generic_points_are_simple_and_full_rank() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 2 + (seed as usize % 3);
        let d = 3 + (seed as usize % 2);
        let k: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| signed(&mut rng)).collect())
            .collect();
        let w: Vec<f64> = (0..d).map(|_| signed(&mut rng)).collect();
        let m = UtilityModel::from_rows(k, w).unwrap();
        let rep = solve_critical(&m, &TrackerConfig::with_seed(seed)).unwrap();
        for c in &rep.points {
            let diag = disc_eval(&m, &c.point).unwrap();
            assert_eq!(diag.verdict, Verdict::Simple);
            assert!(diag.min_singular_value > 1e-6);
            assert!(!diag.rank_deficient());
        }
    }
}

#[test]
fn permuting_assets_permutes_nothing_in_the_diagnostic() {
    let m = UtilityModel::from_rows(
        vec![
            vec![0.5, 1.2, -0.7],
            vec![1.1, -0.4, 0.9],
            vec![-0.8, 0.6, 1.3],
        ],
        vec![1.0, 0.5, -0.8],
    )
    .unwrap();
    let perm = [2, 0, 1];
    let pm = UtilityModel::new(m.k().permuted(&perm).unwrap(), m.w().clone()).unwrap();
    let rep = solve_critical(&m, &TrackerConfig::default()).unwrap();
    for c in &rep.points {
        let a = disc_eval(&m, &c.point).unwrap();
        let mut q = c.point.clone();
        q.x = perm.iter().map(|&p| c.point.x[p]).collect();
        let b = disc_eval(&pm, &q).unwrap();
        assert!((a.disc_value - b.disc_value).norm() < 1e-9 * a.scale);
        assert_eq!(a.verdict, b.verdict);
    }
}

#[test]
fn order_four_consistency() {
    let k = CumulantMatrix::from_rows(vec![vec![0.4, 1.3, -0.6, 0.9], vec![-0.2, 0.8, 1.1, -1.4]])
        .unwrap();
    let generic = WeightVector::new(vec![1.0, -0.7, 0.45, 0.8]).unwrap();
    let rep = disc_poly_check_n2_d4(&k, &generic, &TrackerConfig::default()).unwrap();
    assert!(rep.agree);
    assert_eq!(rep.disc_verdict, Verdict::Simple);

    // only the first and top weights switched on
    let sparse = WeightVector::new(vec![0.6, 0.0, 0.0, -1.2]).unwrap();
    let rep = disc_poly_check_n2_d4(&k, &sparse, &TrackerConfig::default()).unwrap();
    assert!(rep.agree);
    assert_eq!(rep.disc_verdict, Verdict::Simple);
}

#[test]
fn order_four_on_the_locus() {
    let k = CumulantMatrix::from_rows(vec![vec![0.4, 1.3, -0.6, 0.9], vec![-0.2, 0.8, 1.1, -1.4]])
        .unwrap();
    let m = UtilityModel::new(
        k.clone(),
        WeightVector::new(vec![1.0, -0.7, 0.45, 0.8]).unwrap(),
    )
    .unwrap();
    let mut found = None;
    for dir in [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.3, -1.0, 0.5, 0.0],
    ] {
        let search = SegmentSearch::new(dir.to_vec(), -3.0, 3.0);
        if let Some(rep) = find_collision(&m, &search, &TrackerConfig::default()).unwrap() {
            found = Some(rep);
            break;
        }
    }
    let rep = found.expect("some axis crosses the locus");
    let w = WeightVector::new(rep.weights.clone()).unwrap();
    let check = disc_poly_check_n2_d4(&k, &w, &TrackerConfig::default()).unwrap();
    assert_eq!(check.disc_verdict, Verdict::Multiple);
    assert_eq!(check.cluster_verdict, Verdict::Multiple);
    assert!(check.agree);
}
