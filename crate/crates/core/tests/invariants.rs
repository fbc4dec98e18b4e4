use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transformer_approx::mixing::MixingProcess;
use transformer_approx::nn::{truncation_layer, Matrix};

#[test]
fn truncation_layer_is_the_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &bound in &[0.3, 1.0, 7.5, 1e4] {
        let layer = truncation_layer(bound, 4).unwrap();
        let near = Matrix::from_shape_fn((4, 2500), |_| rng.random_range(-2.0 * bound..=2.0 * bound));
        let out = layer.forward(&near).unwrap();
        for (x, y) in near.iter().zip(out.iter()) {
            assert_eq!(*y, x.clamp(-bound, bound), "x = {x}, B = {bound}");
        }

        // Far from the interval the subtraction x − (x − B) rounds.
        let far = Matrix::from_shape_fn((4, 250), |_| rng.random_range(-1e6 * bound..=1e6 * bound));
        let out = layer.forward(&far).unwrap();
        for (x, y) in far.iter().zip(out.iter()) {
            let want = x.clamp(-bound, bound);
            assert!((y - want).abs() <= x.abs() * f64::EPSILON, "x = {x}, B = {bound}");
        }
    }
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// The marginal at a late offset matches the marginal at the start, on
/// disjoint sets of independent paths (two-sample KS at the 1% level).
#[test]
fn paths_start_in_the_stationary_law() {
    const PATHS: usize = 2000;
    const OFFSET: usize = 40;
    let critical = 1.628 * (2.0 / PATHS as f64).sqrt();
    let processes = [
        MixingProcess::geometric(0.1, 0.3, 1).unwrap(),
        MixingProcess::algebraic(1.5, 1).unwrap(),
        MixingProcess::iid(1).unwrap(),
    ];
    for (p, process) in processes.iter().enumerate() {
        let column = |seed: u64, t: usize| process.generate(OFFSET + 1, seed).unwrap()[[0, t]];
        let base = 1000 * p as u64;
        let early: Vec<f64> = (0..PATHS as u64).map(|s| column(base + s, 0)).collect();
        let late: Vec<f64> = (0..PATHS as u64).map(|s| column(base + 500_000 + s, OFFSET)).collect();
        let d = ks_statistic(early, late);
        assert!(d < critical, "{:?}: KS {d:.4} ≥ {critical:.4}", process.kind);
    }
}
