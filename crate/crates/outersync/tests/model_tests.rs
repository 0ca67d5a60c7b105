//! System description layer: modes, schedules, activations, presets.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use outersync::model::{
    poisson_schedule, seeded_initial_pair, ActivationSpec, Mode, SwitchSchedule,
};
use outersync::presets::{builtin_preset, PRESET_NAMES};

#[test]
fn mode_rejects_bad_data() {
    // non-positive decay rate
    assert!(Mode::new(vec![0.0, 1.0], vec![vec![0.0; 2]; 2], vec![0.0; 2]).is_err());
    assert!(Mode::new(vec![-1.0, 1.0], vec![vec![0.0; 2]; 2], vec![0.0; 2]).is_err());
    // ragged / mismatched shapes
    assert!(Mode::new(vec![1.0, 1.0], vec![vec![0.0; 3]; 2], vec![0.0; 2]).is_err());
    assert!(Mode::new(vec![1.0, 1.0], vec![vec![0.0; 2]; 2], vec![0.0; 3]).is_err());
    // non-finite entries
    assert!(Mode::new(vec![1.0, f64::NAN], vec![vec![0.0; 2]; 2], vec![0.0; 2]).is_err());
    let m = Mode::new(vec![1.0, 2.0], vec![vec![0.5, -0.25], vec![0.0, 1.0]], vec![0.1, 0.2]);
    assert_eq!(m.unwrap().n(), 2);
}

#[test]
fn schedule_lookup_is_right_continuous() {
    let s = SwitchSchedule::new(vec![0.0, 1.0, 3.0], vec![0, 1, 0], 5.0).unwrap();
    assert_eq!(s.mode_index_at(0.0).unwrap(), 0);
    assert_eq!(s.mode_index_at(0.999).unwrap(), 0);
    // at a breakpoint the new mode is already active
    assert_eq!(s.mode_index_at(1.0).unwrap(), 1);
    assert_eq!(s.mode_index_at(2.9).unwrap(), 1);
    assert_eq!(s.mode_index_at(3.0).unwrap(), 0);
    assert_eq!(s.mode_index_at(5.0).unwrap(), 0);
    assert!(s.mode_index_at(-0.1).is_err());
    assert!(s.mode_index_at(5.1).is_err());

    assert_eq!(s.next_breakpoint_after(0.0), Some(1.0));
    assert_eq!(s.next_breakpoint_after(1.0), Some(3.0));
    assert_eq!(s.next_breakpoint_after(3.0), None);
    assert_eq!(s.next_breakpoint_after(4.5), None);
}

#[test]
fn schedule_rejects_malformed_sequences() {
    // must start at zero
    assert!(SwitchSchedule::new(vec![0.5], vec![0], 5.0).is_err());
    // strictly increasing
    assert!(SwitchSchedule::new(vec![0.0, 2.0, 2.0], vec![0, 0, 0], 5.0).is_err());
    // last breakpoint inside the horizon
    assert!(SwitchSchedule::new(vec![0.0, 5.0], vec![0, 0], 5.0).is_err());
    // index list length
    assert!(SwitchSchedule::new(vec![0.0, 1.0], vec![0], 5.0).is_err());
}

#[test]
fn poisson_schedule_is_seeded_and_plausible() {
    let a = poisson_schedule(1.0, 500.0, 6, 7).unwrap();
    let b = poisson_schedule(1.0, 500.0, 6, 7).unwrap();
    assert_eq!(a.breakpoints, b.breakpoints);
    assert_eq!(a.mode_index, b.mode_index);

    let c = poisson_schedule(1.0, 500.0, 6, 8).unwrap();
    assert_ne!(a.breakpoints, c.breakpoints);

    assert!(a.mode_index.iter().all(|m| *m < 6));
    assert!(a.breakpoints.windows(2).all(|p| p[0] < p[1]));
    assert_eq!(a.breakpoints[0], 0.0);

    // over a long horizon the mean inter-switch gap approaches 1/lambda;
    // +-10% is ~6 sigma at this sample size
    let long = poisson_schedule(1.0, 5000.0, 3, 11).unwrap();
    let n_gaps = long.breakpoints.len() - 1;
    let mean = (long.breakpoints[n_gaps] - long.breakpoints[0]) / n_gaps as f64;
    assert!(n_gaps > 3000, "expected thousands of segments, got {n_gaps}");
    assert!((mean - 1.0).abs() < 0.1, "mean gap {mean} too far from 1/lambda");

    assert!(poisson_schedule(0.0, 1.0, 2, 0).is_err());
    assert!(poisson_schedule(1.0, -1.0, 2, 0).is_err());
    assert!(poisson_schedule(1.0, 1.0, 0, 0).is_err());
}

#[test]
fn seeded_initial_pair_is_deterministic_and_in_range() {
    let (u, v) = seeded_initial_pair(5, 7);
    let (u2, v2) = seeded_initial_pair(5, 7);
    assert_eq!(u, u2);
    assert_eq!(v, v2);
    assert_ne!(u, v);
    assert!(u.iter().chain(&v).all(|x| (-1.0..1.0).contains(x)));
    let (u3, _) = seeded_initial_pair(5, 8);
    assert_ne!(u, u3);
}

#[test]
fn sigmoid_activation_basics() {
    let act = ActivationSpec::sigmoid(3);
    assert_eq!(act.n(), 3);
    assert_relative_eq!(act.eval(0, 0.0), 0.5, max_relative = 1e-15);
    assert_relative_eq!(act.eval(1, 2.0), 1.0 / (1.0 + (-2.0f64).exp()), max_relative = 1e-15);
    // slope bound of the logistic function is exactly 1/4
    assert_eq!(act.gain_bound(0), 0.25);
    assert_eq!(act.gains(), &[0.25; 3]);
}

#[test]
fn sigmoid_eval_diff_is_cancellation_free() {
    // eval_diff must agree with the naive difference where the latter is
    // accurate, and must stay proportional to w when w underflows the naive
    // subtraction entirely
    let act = ActivationSpec::sigmoid(1);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10_000 {
        let u = rng.random_range(-20.0..20.0);
        let w = rng.random_range(-5.0..5.0);
        let direct = act.eval(0, u) - act.eval(0, u - w);
        let diff = act.eval_diff(0, u, w);
        assert!(
            (diff - direct).abs() <= 1e-12,
            "eval_diff {diff} vs direct {direct} at u={u}, w={w}"
        );
    }
    // tiny increments: the secant of the logistic at 0 is ~1/4, and the
    // naive difference would return exactly 0 long before w reaches 1e-300
    let w = 1e-300;
    let diff = act.eval_diff(0, 0.0, w);
    assert_relative_eq!(diff, 0.25 * w, max_relative = 1e-9);
    assert_eq!(act.eval(0, 0.0) - act.eval(0, -w), 0.0);
}

#[test]
fn piecewise_linear_saturates_at_the_limit() {
    let act = ActivationSpec::piecewise_linear(vec![1.0017, 0.9984], 5.0).unwrap();
    assert_eq!(act.gains(), &[1.0017, 0.9984]);
    assert_relative_eq!(act.eval(0, 2.0), 2.0034, max_relative = 1e-12);
    assert_eq!(act.eval(0, 100.0), 5.0);
    assert_eq!(act.eval(0, -100.0), -5.0);
    // secant bound still holds across the saturation knee
    let d = act.eval_diff(0, 4.9, 0.3);
    assert!(d > 0.0 && d <= 1.0017 * 0.3 + 1e-15);
    assert!(ActivationSpec::piecewise_linear(vec![0.0], 1.0).is_err());
    assert!(ActivationSpec::piecewise_linear(vec![1.0], 0.0).is_err());
}

#[test]
fn preset_names_and_checksums() {
    assert_eq!(PRESET_NAMES, ["sec6-5neuron", "sec31-2neuron"]);
    assert!(builtin_preset("no-such-preset").is_err());

    // five-neuron benchmark: 6 modes, sigmoid activation, fingerprints of
    // the coefficient tables so silent data edits fail loudly
    let p6 = builtin_preset("sec6-5neuron").unwrap();
    assert_eq!(p6.n, 5);
    assert_eq!(p6.modes.len(), 6);
    assert_eq!(p6.horizon, 500.0);
    assert_eq!(p6.modes[0].gamma[0], 0.885);
    assert_eq!(p6.modes[0].a[0][0], -1.7919);
    let sum_a: f64 = p6.modes.iter().flat_map(|m| m.a.iter().flatten()).map(|x| x.abs()).sum();
    let sum_g: f64 = p6.modes.iter().flat_map(|m| m.gamma.iter()).sum();
    let sum_i: f64 = p6.modes.iter().flat_map(|m| m.input.iter()).sum();
    assert_relative_eq!(sum_a, 84.422, max_relative = 1e-12);
    assert_relative_eq!(sum_g, 24.5491, max_relative = 1e-12);
    assert_relative_eq!(sum_i, 0.9975, max_relative = 1e-12);
    assert_eq!(p6.activation.gains(), &[0.25; 5]);

    // two-neuron example: 2 modes, unit-slope-ish piecewise-linear gains
    let p31 = builtin_preset("sec31-2neuron").unwrap();
    assert_eq!(p31.n, 2);
    assert_eq!(p31.modes.len(), 2);
    assert_eq!(p31.modes[0].gamma, vec![2.1048, 0.9234]);
    assert_eq!(p31.modes[0].a[0], vec![1.0235, 0.2538]);
    assert_eq!(p31.modes[1].a[0], vec![-0.3253, 0.4384]);
    assert_eq!(p31.activation.gains(), &[1.0017, 0.9984]);
}

#[test]
fn preset_systems_replay_their_schedule() {
    let p = builtin_preset("sec6-5neuron").unwrap();
    let sys_a = p.system(7).unwrap();
    let sys_b = p.system(7).unwrap();
    assert_eq!(sys_a.schedule.breakpoints, sys_b.schedule.breakpoints);
    assert_eq!(sys_a.horizon(), 500.0);

    // eval_coefficients resolves through the schedule to the right mode
    let k = sys_a.schedule.mode_index_at(250.0).unwrap();
    let mode = sys_a.eval_coefficients(250.0).unwrap();
    assert_eq!(mode.gamma, sys_a.modes[k].gamma);
    assert!(sys_a.eval_coefficients(500.5).is_err());
}
