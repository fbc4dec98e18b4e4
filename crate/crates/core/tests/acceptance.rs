//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line straight to stdout (uncaptured) before
//! asserting. Tolerances are pinned as constants next to each test.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use transformer_approx::capacity::{vc_bound, OpCounts};
use transformer_approx::certificate::MeasureConfig;
use transformer_approx::grid::{
    assemble_holder_lp, build_holder_network, build_sup_network, contextual_tokens, default_lp_delta, grid_points,
};
use transformer_approx::kst::{assemble_kst, build_phi_tilde_fnn, cantor_decode, cantor_encode, OmegaK};
use transformer_approx::metrics::{sup_error_grid, PointNorm, RegionFilter};
use transformer_approx::mixing::{
    empirical_beta, gradient_check, run_sweep, InitConfig, MixingProcess, Model, ProcessKind, SweepConfig,
};
use transformer_approx::nn::{build_mid_fnn, fnn_to_ff_stack, param_count, ArchSpec, FeedForward, Fnn, Matrix, TransformerNetwork, Vector};
use transformer_approx::target::{TargetFunction, TargetSpec};

fn report(criterion: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion:>2}: {verdict} {}", detail.as_ref()).unwrap();
}

fn first_coordinate(d_x: usize, n: usize) -> TargetFunction {
    TargetSpec::Coordinate { row: 0, col: 0 }.build(d_x, n).unwrap()
}

fn holder_sup_errors(n: usize) -> Vec<(usize, f64, f64)> {
    [2usize, 4, 8, 16]
        .iter()
        .map(|&k| {
            let cfg = MeasureConfig { samples: 10_000, seed: 11, ..Default::default() };
            let cert = assemble_holder_lp(&first_coordinate(1, n), k, default_lp_delta(k, 2.0, 1.0), &cfg).unwrap();
            let bound = ((n as f64).sqrt()) / k as f64;
            (k, cert.measured_sup.unwrap().value, bound)
        })
        .collect()
}

const HOLDER_RUNTIME: Duration = Duration::from_secs(60);

#[test]
fn criterion_01_grid_network_sup_error_off_trifling_region() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for n in [1usize, 2] {
        for (k, err, bound) in holder_sup_errors(n) {
            pass &= err <= bound;
            lines.push(format!("n={n} K={k} err={err:.4} bound={bound:.4}"));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < HOLDER_RUNTIME;
    report(1, pass, format!("{} runtime={elapsed:.1?}", lines.join("; ")));
    assert!(pass);
}

const HALVING_RATIO: f64 = 0.6;

#[test]
fn criterion_02_error_halves_when_grid_doubles() {
    let mut pass = true;
    let mut lines = Vec::new();
    for n in [1usize, 2] {
        let errs = holder_sup_errors(n);
        for w in errs.windows(2) {
            let ratio = w[1].1 / w[0].1;
            pass &= ratio <= HALVING_RATIO;
            lines.push(format!("n={n} K={}→{} ratio={ratio:.3}", w[0].0, w[1].0));
        }
    }
    report(2, pass, lines.join("; "));
    assert!(pass);
}

const SUP_GRID_RESOLUTION: usize = 200;
const SUP_RUNTIME: Duration = Duration::from_secs(300);

#[test]
fn criterion_03_three_copy_network_sup_error_on_dense_grid() {
    let start = Instant::now();
    let f = first_coordinate(1, 2);
    let mut pass = true;
    let mut lines = Vec::new();
    for k in [2usize, 4] {
        let delta = 1.0 / (3.0 * k as f64) / 1024.0;
        let net = build_sup_network(&f, k, delta).unwrap();
        let err = sup_error_grid(
            |x: &Matrix| net.forward(x),
            |x: &Matrix| Ok(f.eval(x)),
            SUP_GRID_RESOLUTION,
            &RegionFilter::Full,
            (1, 2),
            PointNorm::MaxEntry,
        )
        .unwrap()
        .value;
        let bound = 2f64.sqrt() / k as f64 + 2.0 * delta;
        pass &= err <= bound;
        lines.push(format!("K={k} err={err:.5} bound={bound:.5}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < SUP_RUNTIME;
    report(3, pass, format!("{} runtime={elapsed:.1?}", lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_04_superposition_network_bounds_and_monotone_decay() {
    let f = first_coordinate(1, 2);
    let mut pass = true;
    let mut lines = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for k in 1usize..=4 {
        let cfg = MeasureConfig { samples: 10_000, seed: 5, p: 1.0, ..Default::default() };
        let cert = assemble_kst(&f, k, OmegaK::default_margin(k), &cfg).unwrap();
        let sup = cert.measured_sup.as_ref().unwrap().value;
        let l1 = cert.measured_lp.as_ref().unwrap().value;
        let decay = 0.5f64.powi(k as i32);
        let (sup_bound, l1_bound) = (2.0 * 2f64.sqrt() * decay, 4.0 * 8.0 * decay);
        pass &= sup <= sup_bound && l1 <= l1_bound;
        if let Some((ps, pl)) = prev {
            pass &= sup < ps && l1 < pl;
        }
        prev = Some((sup, l1));
        lines.push(format!("K={k} sup={sup:.4}≤{sup_bound:.4} L1={l1:.4}≤{l1_bound:.3}"));
    }
    report(4, pass, lines.join("; "));
    assert!(pass);
}

const COLLISION_TOL: f64 = 1e-9;

#[test]
fn criterion_05_contextual_tokens_are_distinct() {
    let mut pass = true;
    let mut lines = Vec::new();
    for k in [2usize, 3] {
        let f = TargetSpec::SineProduct { gamma: 1.0, k_h: 1.0 }.build(1, 2).unwrap();
        let net = build_holder_network(&f, k, default_lp_delta(k, 2.0, 1.0)).unwrap();
        let mut tokens: Vec<Vec<f64>> = Vec::new();
        for g in grid_points(k, 1, 2).unwrap().points {
            let z = contextual_tokens(&net, &g).unwrap();
            tokens.extend(z.columns().into_iter().map(|c| c.to_vec()));
        }
        let mut collisions = 0;
        for i in 0..tokens.len() {
            for j in i + 1..tokens.len() {
                let gap = tokens[i].iter().zip(&tokens[j]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                collisions += (gap < COLLISION_TOL) as usize;
            }
        }
        let expected = k.pow(2) * 2;
        pass &= collisions == 0 && tokens.len() == expected;
        lines.push(format!("K={k} tokens={} collisions={collisions}", tokens.len()));
    }
    report(5, pass, lines.join("; "));
    assert!(pass);
}

const ORACLE_TOL: f64 = 1e-9;

fn random_fnn(rng: &mut ChaCha8Rng, dims: &[usize]) -> Fnn {
    let layers = dims
        .windows(2)
        .map(|w| {
            (
                Matrix::from_shape_fn((w[1], w[0]), |_| rng.sample::<f64, _>(StandardNormal)),
                Vector::from_shape_fn(w[1], |_| rng.sample::<f64, _>(StandardNormal)),
            )
        })
        .collect();
    Fnn::new(layers).unwrap()
}

/// Truncated Cantor map from the binary expansion, independent of the crate.
fn cantor_oracle(x: f64, k: usize, d: usize) -> f64 {
    let x = x.clamp(0.0, 1.0);
    (1..=k)
        .map(|j| {
            let bit = if x >= 1.0 { 1.0 } else { ((x * 2f64.powi(j as i32)).floor() as u64 % 2) as f64 };
            2.0 * bit * 3f64.powi(-(1 + d as i32 * (j as i32 - 1)))
        })
        .sum()
}

#[test]
fn criterion_06_oracle_equivalences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let mid = build_mid_fnn();
    let mut mid_err = 0.0f64;
    for _ in 0..100_000 {
        let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-100.0..100.0));
        let mut s = t;
        s.sort_by(f64::total_cmp);
        mid_err = mid_err.max((mid.forward(&t).unwrap()[0] - s[1]).abs());
    }

    let fnn = random_fnn(&mut rng, &[3, 6, 5, 2]);
    let n = 4;
    let stack = fnn_to_ff_stack(&fnn, n).unwrap().into_network().unwrap();
    let mut stack_err = 0.0f64;
    for _ in 0..1000 / n {
        let x = Matrix::from_shape_fn((3, n), |_| rng.random_range(-2.0..2.0));
        let y = stack.forward(&x).unwrap();
        for j in 0..n {
            let want = fnn.forward(&x.column(j).to_vec()).unwrap();
            for (a, b) in y.column(j).iter().zip(&want) {
                stack_err = stack_err.max((a - b).abs());
            }
        }
    }

    let mut cantor_cases = 0usize;
    let mut cantor_ok = true;
    for d in 1..=12usize {
        for (d_x, n) in (1..=d).filter(|dx| d % dx == 0).map(|dx| (dx, d / dx)) {
            for k in 1..=12 / d {
                for bits in 0u64..1 << (d * k) {
                    let x = Matrix::from_shape_fn((d_x, n), |(p, q)| {
                        let e = q * d_x + p;
                        (0..k).map(|j| ((bits >> (e * k + j)) & 1) as f64 / 2f64.powi(j as i32 + 1)).sum()
                    });
                    cantor_ok &= cantor_decode(&cantor_encode(&x, k)).unwrap() == x;
                    cantor_cases += 1;
                }
            }
        }
    }

    let mut phi_err = 0.0f64;
    let mut phi_cases = 0;
    for k in 1..=8 {
        let omega = OmegaK::new(k, OmegaK::default_margin(k)).unwrap();
        let phi = build_phi_tilde_fnn(k, 2, omega.margin).unwrap();
        while phi_cases < 1250 * k {
            let x: f64 = rng.random();
            if omega.contains_scalar(x) {
                phi_err = phi_err.max((phi.forward(&[x]).unwrap()[0] - cantor_oracle(x, k, 2)).abs());
                phi_cases += 1;
            }
        }
    }

    let pass = mid_err <= ORACLE_TOL && stack_err <= ORACLE_TOL && cantor_ok && phi_err <= ORACLE_TOL;
    report(
        6,
        pass,
        format!(
            "mid={mid_err:.1e} ff_stack={stack_err:.1e} cantor_cases={cantor_cases} exact={cantor_ok} phi={phi_err:.1e} ({phi_cases} pts)"
        ),
    );
    assert!(pass);
}

fn enumerate_weights(net: &TransformerNetwork) -> u64 {
    let mut count = net.embedding().e_in.len() + net.embedding().p.len() + net.projection().e_out.len();
    for b in net.blocks() {
        for h in b.attention.iter().flat_map(|a| a.heads()) {
            count += h.w_k.len() + h.w_q.len() + h.w_v.len() + h.w_o.len();
        }
        count += match &b.ff {
            FeedForward::Standard(l) => l.w1.len() + l.b1.len() + l.w2.len() + l.b2.len(),
            FeedForward::Generalized(_) => unreachable!("random networks use standard layers"),
        };
    }
    count as u64
}

#[test]
fn criterion_07_parameter_count_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for i in 0..20 {
        let dim = rng.random_range(1..9);
        let spec = ArchSpec::new(
            rng.random_range(1..4),
            rng.random_range(1..4),
            rng.random_range(1..6),
            dim,
            rng.random_range(1..4),
            rng.random_range(1..=dim),
            rng.random_range(1..12),
            rng.random_range(1..4),
        )
        .unwrap();
        let net = TransformerNetwork::random(spec, 1.0, i).unwrap();
        mismatches += (enumerate_weights(&net) != param_count(&spec)) as usize;
    }
    report(7, mismatches == 0, format!("20 specs, mismatches={mismatches}"));
    assert_eq!(mismatches, 0);
}

const VC_TOL: f64 = 0.01;

#[test]
fn criterion_08_vc_calculator_spot_value_and_monotonicity() {
    // By hand: d(q+1) = 30, so 30² + 11·30·(100 + log₂ 270).
    let hand = 900.0 + 330.0 * (100.0 + 270f64.ln() / 2f64.ln());
    let got = vc_bound(&OpCounts { d: 10, t: 100, q: 2 }).unwrap();
    let mut monotone = true;
    let vals = [1u64, 3, 10, 30, 100];
    for &d in &vals {
        for &t in &vals {
            for &q in &vals {
                let v = vc_bound(&OpCounts { d, t, q }).unwrap();
                for next in [OpCounts { d: d + 1, t, q }, OpCounts { d, t: t + 1, q }, OpCounts { d, t, q: q + 1 }] {
                    monotone &= vc_bound(&next).unwrap() > v;
                }
            }
        }
    }
    let pass = (got - hand).abs() <= VC_TOL && monotone;
    report(
        8,
        pass,
        format!("vc(10,100,2)={got:.4} hand={hand:.4} (quoted 36565.33 is 0.019 low) monotone={monotone}"),
    );
    assert!(pass);
}

const BETA_TOL: f64 = 5e-3;
const BETA_DRAWS: usize = 1_000_000;

/// `E_{S₀~π} TV(P^k(S₀,·), π)` from the explicit 2×2 transition matrix power.
fn two_state_beta_oracle(a: f64, b: f64, k: usize) -> f64 {
    let mut p = [[1.0, 0.0], [0.0, 1.0]];
    let step = [[1.0 - a, a], [b, 1.0 - b]];
    for _ in 0..k {
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = (0..2).map(|l| p[i][l] * step[l][j]).sum();
            }
        }
        p = next;
    }
    let pi = [b / (a + b), a / (a + b)];
    (0..2).map(|i| pi[i] * 0.5 * (0..2).map(|j| (p[i][j] - pi[j]).abs()).sum::<f64>()).sum()
}

#[test]
fn criterion_09_empirical_mixing_coefficients() {
    let (a, b) = (0.25, 0.25);
    let chain = MixingProcess::geometric(a, b, 1).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=6 {
        let est = empirical_beta(&chain, k, BETA_DRAWS, 100 + k as u64).unwrap();
        let oracle = two_state_beta_oracle(a, b, k);
        worst = worst.max((est - oracle).abs());
        assert!((chain.beta(k).unwrap().value - oracle).abs() < 1e-15);
    }
    let iid = MixingProcess::iid(1).unwrap();
    let iid_zero = (1..=6).all(|k| empirical_beta(&iid, k, 1000, 0).unwrap() == 0.0 && iid.beta(k).unwrap().value == 0.0);
    let pass = worst <= BETA_TOL && iid_zero;
    report(9, pass, format!("max |β̂−β| over k≤6 = {worst:.2e} (tol {BETA_TOL:.0e}); iid exactly zero={iid_zero}"));
    assert!(pass);
}

const MIN_DECAY_SLOPE: f64 = -0.1;
const REGIME_SLOPE_GAP: f64 = 0.15;
const SWEEP_RUNTIME: Duration = Duration::from_secs(1800);

#[test]
fn criterion_10_regression_risk_decreases_with_sample_size() {
    let start = Instant::now();
    let cfg = SweepConfig {
        processes: vec![ProcessKind::Iid, ProcessKind::GeometricMarkov { a: vec![0.25], b: vec![0.25] }],
        target: TargetSpec::DistancePower { gamma: 1.0, k_h: 1.0, point: None },
        d_x: 1,
        n: 2,
        ms: vec![1 << 8, 1 << 9, 1 << 10, 1 << 11, 1 << 12],
        seeds: (0..5).collect(),
        sigma: 0.1,
        steps: 1000,
        lr: 1e-2,
        lr_final: 1e-4,
        init: InitConfig::default(),
        risk_samples: 10_000,
    };
    let out = run_sweep(&cfg).unwrap();
    let iid = &out.summaries[0];
    let geo = &out.summaries[1];
    let decreasing = iid.medians.windows(2).all(|w| w[1].1 < w[0].1);
    let gap = (geo.fit.slope - iid.fit.slope).abs();
    let elapsed = start.elapsed();
    let pass = decreasing && iid.fit.slope < MIN_DECAY_SLOPE && gap <= REGIME_SLOPE_GAP && elapsed < SWEEP_RUNTIME;
    let medians: Vec<String> = iid.medians.iter().map(|(m, r)| format!("{m}:{r:.2e}")).collect();
    report(
        10,
        pass,
        format!(
            "iid medians [{}] slope={:.3} (predicted {:.3}); geometric slope={:.3}, gap={gap:.3}; runtime={elapsed:.1?}",
            medians.join(" "),
            iid.fit.slope,
            iid.predicted_exponent,
            geo.fit.slope
        ),
    );
    assert!(pass);
}

const GRADIENT_TOL: f64 = 1e-5;

#[test]
fn criterion_11_reverse_mode_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for draw in 0..10 {
        let dim = rng.random_range(2..4);
        let spec = ArchSpec::new(
            rng.random_range(1..3),
            1,
            rng.random_range(2..4),
            dim,
            rng.random_range(1..3),
            rng.random_range(1..=dim),
            rng.random_range(2..5),
            rng.random_range(1..3),
        )
        .unwrap();
        let mut model = Model::init(spec, &InitConfig { scale: 0.5, jitter: 0.3, zero_readout: false }, draw).unwrap();
        let flat: Vec<f64> = model.to_flat().iter().map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        model.set_flat(&flat).unwrap();
        let xs: Vec<Matrix> = (0..5).map(|_| Matrix::from_shape_fn((spec.d_x, spec.n), |_| rng.random())).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(gradient_check(&model, &xs, &ys, 1e-5).unwrap());
    }
    let pass = worst <= GRADIENT_TOL;
    report(11, pass, format!("10 random specs, max relative error {worst:.2e} (tol {GRADIENT_TOL:.0e})"));
    assert!(pass);
}
