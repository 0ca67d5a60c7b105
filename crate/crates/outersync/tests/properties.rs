//! Randomized property suites: norm axioms, scaling invariance of the
//! contraction coefficients, solver re-verification, and the activation
//! secant bound.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use outersync::analysis::{
    mu_component, solve_xi, weighted_norm, FeasibilityStatus, NormKind, Weights,
};
use outersync::model::{ActivationSpec, Mode, SwitchSchedule, SwitchingSystem};

const KINDS: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::LInf];

/// Norm axioms over 10^4 random vector/weight draws per norm: positivity,
/// absolute homogeneity, and the triangle inequality.
#[test]
fn norm_axioms_hold_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10_000 {
        let n = rng.random_range(1..=6);
        let xi = Weights::new((0..n).map(|_| rng.random_range(1e-3..1e3)).collect()).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let c: f64 = rng.random_range(-100.0..100.0);

        for kind in KINDS {
            let nx = weighted_norm(&x, &xi, kind).unwrap();
            let ny = weighted_norm(&y, &xi, kind).unwrap();

            // positivity and definiteness
            assert!(nx >= 0.0, "case {case}: negative norm");
            assert_eq!(weighted_norm(&vec![0.0; n], &xi, kind).unwrap(), 0.0);
            if x.iter().any(|v| *v != 0.0) {
                assert!(nx > 0.0, "case {case}: zero norm for nonzero vector");
            }

            // absolute homogeneity
            let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
            let ncx = weighted_norm(&cx, &xi, kind).unwrap();
            let expect = c.abs() * nx;
            assert!(
                (ncx - expect).abs() <= 1e-12 * expect.max(1e-300),
                "case {case} {kind:?}: |c| homogeneity: {ncx} vs {expect}"
            );

            // triangle inequality
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let nxy = weighted_norm(&xy, &xi, kind).unwrap();
            assert!(
                nxy <= (nx + ny) * (1.0 + 1e-12),
                "case {case} {kind:?}: triangle: {nxy} > {nx} + {ny}"
            );
        }
    }
}

/// The activation secant bound |g(u) - g(u-w)| <= G |w| on 10^4 pairs for
/// both shipped families, together with monotonicity of the difference.
#[test]
fn activation_secant_bound_holds() {
    let sigmoid = ActivationSpec::sigmoid(1);
    let pw = ActivationSpec::piecewise_linear(vec![1.3], 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..10_000 {
        let u = rng.random_range(-30.0..30.0);
        let w = rng.random_range(-10.0..10.0);
        for (act, g) in [(&sigmoid, 0.25), (&pw, 1.3)] {
            let d = act.eval_diff(0, u, w);
            assert!(
                d.abs() <= g * w.abs() * (1.0 + 1e-12),
                "case {case}: secant bound violated: |{d}| > {g}*|{w}|"
            );
            // the difference never points against the increment
            assert!(d * w >= 0.0, "case {case}: sign flip: d = {d} for w = {w}");
            // and matches the straightforward subtraction where that is
            // numerically trustworthy
            let direct = act.eval(0, u) - act.eval(0, u - w);
            assert!((d - direct).abs() <= 1e-12, "case {case}: {d} vs {direct}");
        }
    }
}

proptest! {
    /// Scaling every weight by the same power of two leaves each mu
    /// component bit-for-bit unchanged (the coefficients depend only on
    /// weight ratios, and binary scaling is exact).
    #[test]
    fn mu_is_scale_invariant_in_xi(
        gamma in proptest::collection::vec(0.5f64..3.0, 2..=4),
        seed in any::<u64>(),
        k in -20i32..=20,
    ) {
        let n = gamma.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mode = Mode::new(gamma, a, vec![0.0; n]).unwrap();
        let xi_raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-2..1e2)).collect();
        let gains = vec![0.25; n];

        let xi = Weights::new(xi_raw.clone()).unwrap();
        let c = (2.0f64).powi(k);
        let xi_scaled = Weights::new(xi_raw.iter().map(|x| c * x).collect()).unwrap();

        for kind in KINDS {
            for j in 0..n {
                let m = mu_component(&mode, &gains, &xi, kind, j);
                let ms = mu_component(&mode, &gains, &xi_scaled, kind, j);
                prop_assert_eq!(
                    m.to_bits(),
                    ms.to_bits(),
                    "kind {:?} j {} not scale-invariant: {} vs {}", kind, j, m, ms
                );
            }
        }
    }

    /// Whatever the solver reports, a feasible answer must re-verify: every
    /// mu component across all modes clears the requested floor.
    #[test]
    fn solve_xi_outputs_reverify(
        n in 2usize..=4,
        n_modes in 1usize..=3,
        seed in any::<u64>(),
        target_exp in -4i32..=-2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for _ in 0..n_modes {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            modes.push(Mode::new(gamma, a, vec![0.0; n]).unwrap());
        }
        let schedule = SwitchSchedule::new(vec![0.0], vec![0], 1.0).unwrap();
        let system = SwitchingSystem::new(modes, schedule, ActivationSpec::sigmoid(n)).unwrap();
        let eps0 = 10f64.powi(target_exp);

        for kind in KINDS {
            let report = solve_xi(&system, kind, eps0).unwrap();
            match report.status {
                FeasibilityStatus::Feasible => {
                    let xi = report.xi.as_ref().expect("feasible without weights");
                    prop_assert!(xi.xi().iter().all(|x| *x > 0.0));
                    let gains = system.activation.gains();
                    for mode in &system.modes {
                        for j in 0..n {
                            let m = mu_component(mode, gains, xi, kind, j);
                            prop_assert!(
                                m >= eps0 - 1e-12,
                                "reverify failed: mu = {} < {} under {:?}", m, eps0, kind
                            );
                        }
                    }
                    // residuals are the per-neuron worst margins and must
                    // all clear zero
                    prop_assert!(report.residuals.iter().all(|r| *r >= -1e-12));
                }
                FeasibilityStatus::Infeasible | FeasibilityStatus::Undecided => {
                    prop_assert!(report.xi.is_none());
                    prop_assert!(!report.certificate.is_empty());
                }
            }
        }
    }

    /// The weighted norms agree with their textbook definitions on random
    /// data (an independent re-implementation as the oracle).
    #[test]
    fn weighted_norm_matches_definition(
        x in proptest::collection::vec(-1e3f64..1e3, 1..=6),
        seed in any::<u64>(),
    ) {
        let n = x.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi_raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1e3)).collect();
        let xi = Weights::new(xi_raw.clone()).unwrap();

        let l1: f64 = x.iter().zip(&xi_raw).map(|(v, w)| w * v.abs()).sum();
        let l2: f64 = x.iter().zip(&xi_raw).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        let linf: f64 = x
            .iter()
            .zip(&xi_raw)
            .map(|(v, w)| v.abs() / w)
            .fold(0.0, f64::max);

        let got1 = weighted_norm(&x, &xi, NormKind::L1).unwrap();
        let got2 = weighted_norm(&x, &xi, NormKind::L2).unwrap();
        let goti = weighted_norm(&x, &xi, NormKind::LInf).unwrap();
        prop_assert!((got1 - l1).abs() <= 1e-12 * l1.max(1.0));
        prop_assert!((got2 - l2).abs() <= 1e-12 * l2.max(1.0));
        prop_assert!((goti - linf).abs() <= 1e-12 * linf.max(1.0));
    }
}
