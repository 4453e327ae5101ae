use std::sync::OnceLock;

use cocycle_core::chain::{estimate_sigma2, log_norm_direct, simulate_walk, SigmaMethod, SigmaOptions};
use cocycle_core::exits::{harmonic_v, kolmogorov_pvalue, ks_statistic, tail_curve, EmpiricalCDF};
use cocycle_core::laws::{estimate_lyapunov, recenter_to_zero_lyapunov, MatrixLaw};
use cocycle_core::matgroup::{make_group_element, ChainState, Mat, ProjectivePoint};
use cocycle_core::reference::{normal_cdf, srw_exit_dp, LatticeWalkSpec};
use cocycle_core::rng::Streams;
use cocycle_core::spectral::{discretize_operator, spectral_gap};
use cocycle_core::stats::binomial_stderr;
use proptest::prelude::*;
use rayon::prelude::*;

fn ln2() -> f64 {
    2f64.ln()
}

fn drifted() -> MatrixLaw {
    MatrixLaw::smooth_exponential(2, 1.0, 0.0).unwrap().with_drift(Mat::diag(&[1.0, -1.0])).unwrap()
}

/// The drifted Gaussian law rescaled to γ̂ = 0 from 2·10⁷ steps.
fn recentered() -> &'static MatrixLaw {
    static LAW: OnceLock<MatrixLaw> = OnceLock::new();
    LAW.get_or_init(|| {
        let base = drifted();
        let g = estimate_lyapunov(&base, &ProjectivePoint::axis(2, 0), 1_000_000, 1000, 20, Streams::new(71)).unwrap();
        recenter_to_zero_lyapunov(&base, g.value).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn walk_and_direct_log_norm_agree(seed in any::<u64>(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let n = 400;
        let laws = [
            drifted(),
            MatrixLaw::scaled_mixture(0.3, 1.5, MatrixLaw::coin()).unwrap(),
            MatrixLaw::smooth_exponential(3, 0.5, 0.1).unwrap(),
        ];
        for law in &laws {
            let d = law.dim();
            let mut m = Mat::identity(d);
            m.set(0, d - 1, a);
            m.set(d - 1, 0, b);
            m.set(0, 0, 1.5);
            let g0 = make_group_element(m).unwrap();
            let mut v = vec![0.3; d];
            v[0] = 1.0;
            let x0 = ChainState::new(g0.clone(), ProjectivePoint::new(&v).unwrap()).unwrap();
            let gv = g0.matrix().mul_vec(&v);
            let y = gv.iter().map(|c| c * c).sum::<f64>().sqrt().ln();
            let path = simulate_walk(law, &x0, 1e9, n, &mut Streams::new(seed).stream(0)).unwrap();
            let direct = log_norm_direct(law, &g0, &v, n, &mut Streams::new(seed).stream(0)).unwrap();
            let walk = y + path.s_values[n - 1];
            prop_assert!((direct - walk).abs() <= 1e-8 * n as f64, "{} vs {}", direct, walk);
        }
    }
}

#[test]
fn normalized_sums_are_gaussian() {
    let law = recentered();
    let x0 = ChainState::standard(2);
    let sigma =
        estimate_sigma2(law, &x0, 1000, 4000, SigmaMethod::BatchVariance, SigmaOptions::default(), Streams::new(72))
            .unwrap()
            .sigma();
    let n = 4096;
    let streams = Streams::new(73);
    let z: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_walk(law, &x0, 1e9, n, &mut streams.stream(i)).unwrap();
            path.s_values[n - 1] / (sigma * (n as f64).sqrt())
        })
        .collect();
    let cdf = EmpiricalCDF::new(z).unwrap();
    let d = ks_statistic(&cdf, normal_cdf);
    let p = kolmogorov_pvalue(d, cdf.n());
    assert!(p >= 0.01, "KS {d}, p = {p}, sigma = {sigma}");
}

#[test]
fn coin_tail_matches_exact_recursion_on_every_step() {
    let horizon = 128;
    let grid: Vec<usize> = (1..=horizon).collect();
    let y = 3.0 * ln2();
    let mc = tail_curve(&MatrixLaw::coin(), &ChainState::standard(2), y, &grid, 100_000, Streams::new(74)).unwrap();
    let exact = srw_exit_dp(&LatticeWalkSpec { start_level: 3, step_log: ln2(), horizon }).unwrap();
    for p in &mc.points {
        let want = exact.tail[p.n];
        let se = binomial_stderr(want, mc.n_paths);
        assert!((p.p_hat - want).abs() <= 3.0 * se, "n = {}: {} vs {want}", p.n, p.p_hat);
    }
}

#[test]
fn harmonic_function_bounds_and_monotonicity() {
    let ys = [1.0, 2.0, 5.0, 10.0];
    let x0 = ChainState::standard(2);
    for (law, horizon) in [(MatrixLaw::coin(), 2000), (recentered().clone(), 1000)] {
        let est: Vec<_> =
            ys.iter().map(|&y| harmonic_v(&law, &x0, y, horizon, 10_000, Streams::new(75)).unwrap()).collect();
        for e in &est {
            // lower bound 0 ∨ (y − a) with a = 1
            assert!(e.v_hat >= (e.y - 1.0).max(0.0) - 3.0 * e.stderr, "{}: {e:?}", law.label());
            assert!(e.v_hat / (1.0 + e.y) <= 1.5, "{}: {e:?}", law.label());
        }
        for w in est.windows(2) {
            let joint = w[0].stderr.hypot(w[1].stderr);
            assert!(w[0].v_hat <= w[1].v_hat + 3.0 * joint, "{}: {:?} vs {:?}", law.label(), w[0], w[1]);
        }
    }
}

#[test]
fn second_eigenvalue_is_stable_under_grid_refinement() {
    let law = recentered();
    let coarse = spectral_gap(&discretize_operator(law, 0.0, 256, 4000, 0.5, Streams::new(76)).unwrap()).unwrap();
    let fine = spectral_gap(&discretize_operator(law, 0.0, 512, 4000, 0.5, Streams::new(76)).unwrap()).unwrap();
    assert!(coarse.second_modulus < 1.0);
    let rel = (coarse.second_modulus - fine.second_modulus).abs() / fine.second_modulus;
    assert!(rel < 0.05, "{} vs {}", coarse.second_modulus, fine.second_modulus);
}
