//! Trigger rules: threshold curves, rule constructors and preconditions,
//! the closed-form centralized trigger solver, the push monitor, and the
//! state-error checks.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use outersync::analysis::{mu_component, BoundSet, NormKind, Weights};
use outersync::model::{ActivationSpec, Mode, SwitchSchedule, SwitchingSystem};
use outersync::presets::{builtin_preset, sec6_global_threshold, sec6_per_neuron_thresholds};
use outersync::triggers::{
    adaptive_delta, arm_decentralized_structure, check_state_centralized,
    check_state_decentralized, next_trigger_centralized_structure, push_nbr_rate, push_own_rate,
    Protocol, StateCheck, ThresholdFn, ThresholdSpec, TriggerRule,
};

#[test]
fn protocol_round_trips() {
    for (s, p) in [
        ("centralized-structure", Protocol::CentralizedStructure),
        ("decentralized-structure", Protocol::DecentralizedStructure),
        ("centralized-state", Protocol::CentralizedState),
        ("decentralized-state", Protocol::DecentralizedState),
    ] {
        assert_eq!(s.parse::<Protocol>().unwrap(), p);
        assert_eq!(p.as_str(), s);
    }
    assert!("central".parse::<Protocol>().is_err());
    assert!(Protocol::CentralizedStructure.is_structure());
    assert!(!Protocol::CentralizedStructure.is_decentralized());
    assert!(Protocol::DecentralizedState.is_decentralized());
    assert!(!Protocol::DecentralizedState.is_structure());
}

#[test]
fn shipped_threshold_curves_evaluate_correctly() {
    // global curve 8000/(0.0065 t + 6.5)^5
    let phi = sec6_global_threshold();
    assert_relative_eq!(phi.eval(0.0), 8000.0 / 6.5f64.powi(5), max_relative = 1e-12);
    assert!((phi.eval(0.0) - 0.6895).abs() < 1e-4);
    // decreasing, positive at the end of the standard horizon
    assert!(phi.eval(100.0) < phi.eval(0.0));
    assert!(phi.eval(500.0) > 0.0);

    let psi = sec6_per_neuron_thresholds();
    assert_eq!(psi.len(), 5);
    for f in &psi {
        assert!(f.validate().is_ok());
        assert!(f.eval(0.0) > 0.0 && f.eval(500.0) > 0.0);
        assert!(f.eval(500.0) < f.eval(0.0));
    }
    // the fourth neuron's curve is the exp-gamma family member
    // (t + 100) e^{-0.01 t - 1} / 700
    assert_relative_eq!(psi[3].eval(0.0), 100.0 * (-1.0f64).exp() / 700.0, max_relative = 1e-12);
    assert!((psi[3].eval(0.0) - 0.05255).abs() < 1e-5);
}

#[test]
fn threshold_validation_rejects_bad_parameters() {
    assert!(ThresholdFn::RationalDecay { c: 0.0, a: 1.0, b: 1.0, p: 1.0 }.validate().is_err());
    assert!(ThresholdFn::RationalDecay { c: 1.0, a: -1.0, b: 1.0, p: 1.0 }.validate().is_err());
    assert!(ThresholdFn::RationalDecay { c: 1.0, a: 1.0, b: 0.0, p: 1.0 }.validate().is_err());
    assert!(ThresholdFn::RationalDecay { c: 1.0, a: 1.0, b: 1.0, p: 0.0 }.validate().is_err());
    // exp-gamma must not be increasing at t = 0: requires r*s >= 1
    assert!(ThresholdFn::ExpGamma { s: 10.0, r: 0.01, q: 1.0, d: 1.0 }.validate().is_err());
    // r*s exactly 1 is the boundary case and is allowed (the shipped curve)
    assert!(ThresholdFn::ExpGamma { s: 100.0, r: 0.01, q: 1.0, d: 700.0 }.validate().is_ok());

    // per-neuron spec checks the count
    let spec = ThresholdSpec::PerNeuron(sec6_per_neuron_thresholds());
    assert!(spec.validate(5).is_ok());
    assert!(spec.validate(4).is_err());

    // adaptive spec: alpha in (0,1), positive betas, positive window
    let ok = ThresholdSpec::AdaptiveDelta { alpha: 0.2, beta: vec![1.0; 3], t_window: 100.0 };
    assert!(ok.validate(3).is_ok());
    let bad_alpha = ThresholdSpec::AdaptiveDelta { alpha: 1.0, beta: vec![1.0; 3], t_window: 100.0 };
    assert!(bad_alpha.validate(3).is_err());
    let bad_beta = ThresholdSpec::AdaptiveDelta { alpha: 0.2, beta: vec![0.0; 3], t_window: 100.0 };
    assert!(bad_beta.validate(3).is_err());
}

#[test]
fn rule_constructors_enforce_margins() {
    assert!(TriggerRule::centralized_structure(NormKind::L1, 0.0, 0.01).is_err());
    assert!(TriggerRule::centralized_structure(NormKind::L1, 1.0, 0.01).is_err());
    assert!(TriggerRule::centralized_structure(NormKind::L1, 0.01, 0.0).is_err());
    assert!(TriggerRule::decentralized_structure(NormKind::L1, -0.1, 0.01).is_err());
    // the decentralized-state constructor refuses a single global curve
    assert!(TriggerRule::decentralized_state(
        NormKind::L1,
        ThresholdSpec::Global(sec6_global_threshold())
    )
    .is_err());
}

#[test]
fn validate_against_bounds() {
    let rule = TriggerRule::centralized_structure(NormKind::L1, 0.01, 0.01).unwrap();
    let good = BoundSet { nu_max: 1.47, mu_max: 0.75, mu_min: 0.071, lambda: 1.64 };
    assert!(rule.validate_against(&good, 5).is_ok());

    // mu not uniformly positive: nothing applies
    let bad = BoundSet { mu_min: -0.01, ..good };
    assert!(rule.validate_against(&bad, 5).is_err());

    // margin too large for the hold coefficients: M * eps_c > eps0
    let wide = TriggerRule::centralized_structure(NormKind::L1, 0.2, 0.01).unwrap();
    assert!(wide.validate_against(&good, 5).is_err());

    // state rule with the wrong threshold count
    let state = TriggerRule::decentralized_state(
        NormKind::L1,
        ThresholdSpec::PerNeuron(sec6_per_neuron_thresholds()),
    )
    .unwrap();
    assert!(state.validate_against(&good, 5).is_ok());
    assert!(state.validate_against(&good, 3).is_err());
}

/// Dense oracle for the centralized structure rule: evaluate the running
/// integral of each neuron's mu by walking the schedule analytically, scan
/// for the first time min_j A_j(t) reaches eps_c, and bisect.
fn dense_next_trigger(
    rule: &TriggerRule,
    xi: &Weights,
    system: &SwitchingSystem,
    t_k: f64,
) -> Option<f64> {
    let gains = system.activation.gains();
    let acc_at = |j: usize, t: f64| -> f64 {
        // integral of the piecewise-constant mu_j over [t_k, t]
        let mut acc = 0.0;
        let mut s = t_k;
        while s < t {
            let mode = system.eval_coefficients(s).unwrap();
            let seg_end = system
                .schedule
                .next_breakpoint_after(s)
                .unwrap_or(system.horizon())
                .min(t);
            acc += mu_component(mode, gains, xi, rule.norm, j) * (seg_end - s);
            s = seg_end;
        }
        acc
    };
    let min_acc = |t: f64| (0..system.n).map(|j| acc_at(j, t)).fold(f64::INFINITY, f64::min);

    // bracket by scanning, then bisect to 1e-12
    let horizon = system.horizon();
    let step = 1e-3;
    let mut lo = t_k;
    let mut hi = None;
    let mut t = t_k + step;
    while t < horizon + step {
        let tc = t.min(horizon);
        if min_acc(tc) >= rule.eps_c {
            hi = Some(tc);
            break;
        }
        lo = tc;
        t += step;
    }
    let mut hi = hi?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if min_acc(mid) >= rule.eps_c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[test]
fn closed_form_trigger_matches_dense_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..25 {
        let n = rng.random_range(2..=4);
        // diagonally dominated random modes so mu stays positive under
        // uniform weights
        let n_modes = rng.random_range(1..=3);
        let mut modes = Vec::new();
        for _ in 0..n_modes {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(1.5..3.0)).collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-0.3..0.3)).collect())
                .collect();
            modes.push(Mode::new(gamma, a, vec![0.0; n]).unwrap());
        }
        let mut breakpoints = vec![0.0];
        let mut idx = vec![rng.random_range(0..n_modes)];
        let mut t = 0.0;
        for _ in 0..rng.random_range(0..4) {
            t += rng.random_range(0.05..0.5);
            breakpoints.push(t);
            idx.push(rng.random_range(0..n_modes));
        }
        let schedule = SwitchSchedule::new(breakpoints, idx, 10.0).unwrap();
        let system =
            SwitchingSystem::new(modes, schedule, ActivationSpec::sigmoid(n)).unwrap();
        let xi = Weights::uniform(n);
        let eps_c = rng.random_range(0.005..0.05);
        let rule = TriggerRule::centralized_structure(NormKind::L1, eps_c, 0.01).unwrap();
        let t_k = rng.random_range(0.0..2.0);

        let (t_closed, fired) = next_trigger_centralized_structure(&rule, &xi, &system, t_k).unwrap();
        assert!(fired, "case {case}: rule failed to fire before the horizon");
        let t_dense = dense_next_trigger(&rule, &xi, &system, t_k).unwrap();
        assert!(
            (t_closed - t_dense).abs() < 1e-9,
            "case {case}: closed form {t_closed} vs dense {t_dense}"
        );
    }
}

#[test]
fn closed_form_trigger_respects_domain_and_horizon() {
    let system = builtin_preset("sec31-2neuron").unwrap().system(3).unwrap();
    let xi = Weights::new(vec![0.8902, 0.3562]).unwrap();
    let rule = TriggerRule::centralized_structure(NormKind::L1, 0.01, 0.01).unwrap();
    assert!(next_trigger_centralized_structure(&rule, &xi, &system, -1.0).is_err());
    assert!(next_trigger_centralized_structure(&rule, &xi, &system, 1e9).is_err());
    // from the horizon itself nothing can fire
    let (t, fired) =
        next_trigger_centralized_structure(&rule, &xi, &system, system.horizon()).unwrap();
    assert_eq!(t, system.horizon());
    assert!(!fired);
}

#[test]
fn push_monitor_accumulates_and_jumps() {
    let system = builtin_preset("sec31-2neuron").unwrap().system(3).unwrap();
    let mode = &system.modes[0];
    let gains = system.activation.gains();
    let xi = Weights::new(vec![0.8902, 0.3562]).unwrap();
    let rule = TriggerRule::decentralized_structure(NormKind::L1, 0.02, 0.01).unwrap();

    let mut mon = arm_decentralized_structure(&rule, 2).unwrap();
    // freshly armed: all integrals empty
    assert_eq!(mon.d(0), 0.0);
    assert_eq!(mon.d(1), 0.0);

    // D_j grows at exactly mu_j while nothing fires
    for j in 0..2 {
        assert_relative_eq!(
            mon.d_rate(mode, gains, &xi, j),
            mu_component(mode, gains, &xi, NormKind::L1, j),
            max_relative = 1e-12
        );
    }
    mon.advance(mode, gains, &xi, 0.05);
    for j in 0..2 {
        assert_relative_eq!(
            mon.d(j),
            0.05 * mu_component(mode, gains, &xi, NormKind::L1, j),
            max_relative = 1e-12
        );
    }

    // neuron 0 fires: its own integral restarts, but the coupling terms it
    // holds against neuron 1 persist (their clocks follow neuron 1), so D_0
    // lands below zero by exactly those terms — while D_1 jumps up by the
    // forgiven coupling against neuron 0
    let d1_before = mon.d(1);
    mon.fire(0);
    assert_relative_eq!(
        mon.d(0),
        -0.05 * push_nbr_rate(mode, gains, &xi, NormKind::L1, 0, 1),
        max_relative = 1e-12
    );
    assert_relative_eq!(
        mon.d(1),
        d1_before + 0.05 * push_nbr_rate(mode, gains, &xi, NormKind::L1, 1, 0),
        max_relative = 1e-12
    );
    // and the reset monitor keeps accumulating at the mu rate from there
    let d0_after_fire = mon.d(0);
    mon.advance(mode, gains, &xi, 0.01);
    assert_relative_eq!(
        mon.d(0),
        d0_after_fire + 0.01 * mu_component(mode, gains, &xi, NormKind::L1, 0),
        max_relative = 1e-12
    );

    // the structure monitor only arms for the push rule
    let wrong = TriggerRule::centralized_structure(NormKind::L1, 0.01, 0.01).unwrap();
    assert!(arm_decentralized_structure(&wrong, 2).is_err());
}

#[test]
fn state_checks_fire_on_crossing() {
    let xi = Weights::new(vec![0.5, 0.5]).unwrap();
    let phi = ThresholdFn::RationalDecay { c: 1.0, a: 1.0, b: 1.0, p: 1.0 };
    let rule = TriggerRule::centralized_state(NormKind::L1, phi).unwrap();

    // Phi(1) = 0.5; weighted error 0.5*|0.6| + 0.5*|0.6| = 0.6 crosses it
    let held = [0.6, 0.6];
    let now = [0.0, 0.0];
    assert_eq!(
        check_state_centralized(&rule, &xi, &now, &held, 1.0).unwrap(),
        StateCheck::Crossing
    );
    // smaller error stays below
    let held = [0.3, 0.3];
    assert_eq!(
        check_state_centralized(&rule, &xi, &now, &held, 1.0).unwrap(),
        StateCheck::Below
    );
    // zero error never fires even above threshold-zero boundary times
    assert_eq!(
        check_state_centralized(&rule, &xi, &[0.2, 0.2], &[0.2, 0.2], 1.0).unwrap(),
        StateCheck::Below
    );
    // the decentralized check is per component against its own curve
    let rule_d = TriggerRule::decentralized_state(
        NormKind::L1,
        ThresholdSpec::PerNeuron(vec![
            ThresholdFn::RationalDecay { c: 1.0, a: 1.0, b: 1.0, p: 1.0 },
            ThresholdFn::RationalDecay { c: 2.0, a: 1.0, b: 1.0, p: 1.0 },
        ]),
    )
    .unwrap();
    assert_eq!(check_state_decentralized(&rule_d, 0, 0.0, 0.6, 1.0).unwrap(), StateCheck::Crossing);
    assert_eq!(check_state_decentralized(&rule_d, 1, 0.0, 0.6, 1.0).unwrap(), StateCheck::Below);

    // a state check against the wrong threshold shape is rejected
    assert!(check_state_centralized(&rule_d, &xi, &now, &held, 1.0).is_err());
}

#[test]
fn adaptive_delta_scales_with_the_difference_norm() {
    let xi = Weights::new(vec![0.4, 0.35, 0.25]).unwrap();
    let beta = [0.5, 1.0, 2.0];
    let w = [0.4, -0.2, 0.1];
    let t = 3.0;
    let last = [2.0, 2.5, 3.0];
    let alpha = 0.2;
    let d = adaptive_delta(alpha, &beta, 100.0, &w, &xi, NormKind::L1, t, &last).unwrap();
    assert_eq!(d.len(), 3);
    assert!(d.iter().all(|x| *x > 0.0));

    // by construction the plain sum of the thresholds equals alpha ||w||
    let norm = outersync::analysis::weighted_norm(&w, &xi, NormKind::L1).unwrap();
    assert_relative_eq!(d.iter().sum::<f64>(), alpha * norm, max_relative = 1e-12);
    // and the xi-weighted sum stays strictly below it for normalized weights
    let weighted: f64 = d.iter().zip(xi.xi()).map(|(di, x)| di * x).sum();
    assert!(weighted < alpha * norm);

    // stale trigger times (outside the window) are a domain error
    assert!(adaptive_delta(alpha, &beta, 0.5, &w, &xi, NormKind::L1, t, &last).is_err());
    // future trigger times are rejected too
    assert!(adaptive_delta(alpha, &beta, 100.0, &w, &xi, NormKind::L1, 1.0, &last).is_err());
}
