//! The plant: switched coefficient modes, switching schedules, activation
//! functions with slope bounds, and the paired trajectory state.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::{Error, Result};

/// One constant coefficient triple (gamma, A, I) active on a switching
/// interval. `a[i][j]` couples neuron j's activation into neuron i's equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mode {
    pub gamma: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Mode {
    pub fn new(gamma: Vec<f64>, a: Vec<Vec<f64>>, input: Vec<f64>) -> Result<Self> {
        let n = gamma.len();
        if n == 0 {
            return Err(Error::Validation("mode has zero neurons".into()));
        }
        if let Some(i) = gamma.iter().position(|g| !(*g > 0.0)) {
            return Err(Error::Validation(format!(
                "gamma[{i}] = {} must be positive",
                gamma[i]
            )));
        }
        if a.len() != n {
            return Err(Error::Dimension { expected: n, got: a.len() });
        }
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "a[{i}] has {} columns, expected {n}",
                    row.len()
                )));
            }
        }
        if input.len() != n {
            return Err(Error::Dimension { expected: n, got: input.len() });
        }
        let finite = gamma.iter().chain(input.iter()).chain(a.iter().flatten());
        if finite.clone().any(|x| !x.is_finite()) {
            return Err(Error::Validation("mode coefficients must be finite".into()));
        }
        Ok(Mode { gamma, a, input })
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }
}

/// Realization of the switching signal: `mode_index[k]` is active on
/// `[breakpoints[k], breakpoints[k+1])` and the last interval runs to the
/// horizon. The signal is right-continuous at breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchSchedule {
    pub breakpoints: Vec<f64>,
    pub mode_index: Vec<usize>,
    pub horizon: f64,
}

impl SwitchSchedule {
    pub fn new(breakpoints: Vec<f64>, mode_index: Vec<usize>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Validation(format!("horizon {horizon} must be positive")));
        }
        if breakpoints.first() != Some(&0.0) {
            return Err(Error::Validation("breakpoints must start at 0".into()));
        }
        if breakpoints.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Validation("breakpoints must be strictly increasing".into()));
        }
        if *breakpoints.last().unwrap() >= horizon {
            return Err(Error::Validation("last breakpoint must lie before the horizon".into()));
        }
        if mode_index.len() != breakpoints.len() {
            return Err(Error::Dimension {
                expected: breakpoints.len(),
                got: mode_index.len(),
            });
        }
        Ok(SwitchSchedule { breakpoints, mode_index, horizon })
    }

    /// Index of the mode active at `t` (right-continuous at breakpoints).
    pub fn mode_index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        // partition_point returns the number of breakpoints <= t, so the
        // active interval is the one just before it.
        let k = self.breakpoints.partition_point(|b| *b <= t);
        Ok(self.mode_index[k - 1])
    }

    /// First breakpoint strictly after `t`, if any.
    pub fn next_breakpoint_after(&self, t: f64) -> Option<f64> {
        let k = self.breakpoints.partition_point(|b| *b <= t);
        self.breakpoints.get(k).copied()
    }
}

/// Draws a schedule whose inter-switch gaps are i.i.d. exponential(lambda)
/// and whose mode at each switch is uniform over the mode set, independent
/// of the gaps. Deterministic for a fixed seed.
pub fn poisson_schedule(lambda: f64, horizon: f64, n_modes: usize, seed: u64) -> Result<SwitchSchedule> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be positive")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon = {horizon} must be positive")));
    }
    if n_modes == 0 {
        return Err(Error::Domain("need at least one mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(lambda).expect("lambda checked positive");
    let mut breakpoints = vec![0.0];
    let mut mode_index = vec![rng.random_range(0..n_modes)];
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= horizon {
            break;
        }
        breakpoints.push(t);
        mode_index.push(rng.random_range(0..n_modes));
    }
    SwitchSchedule::new(breakpoints, mode_index, horizon)
}

/// Deterministic initial pair for reproduction runs: both trajectories
/// drawn i.i.d. uniform on [-1, 1]^n. The stream is decoupled from the
/// schedule stream (which consumes `seed` directly) by a fixed xor.
pub fn seeded_initial_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let u0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (u0, v0)
}

/// Activation family. Every variant carries enough to evaluate g_i and a
/// per-neuron slope bound G_i with 0 <= (g_i(x)-g_i(y))/(x-y) <= G_i.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ActivationKind {
    /// Logistic 1/(1+e^-x) for every neuron; slope bound 1/4.
    Sigmoid,
    /// g_i(x) = clamp(slope_i * x, -limit, limit); slope bound slope_i.
    PiecewiseLinear { slope: Vec<f64>, limit: f64 },
    /// Per-neuron linear interpolation over shared sample points `xs`,
    /// clamped outside; the declared gains are validated statistically.
    CustomTable { xs: Vec<f64>, ys: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    gains: Vec<f64>,
}

/// Numerically stable logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationSpec {
    pub fn sigmoid(n: usize) -> Self {
        ActivationSpec { kind: ActivationKind::Sigmoid, gains: vec![0.25; n] }
    }

    pub fn piecewise_linear(slope: Vec<f64>, limit: f64) -> Result<Self> {
        if slope.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Validation("slopes must be positive".into()));
        }
        if !(limit > 0.0) {
            return Err(Error::Validation("saturation limit must be positive".into()));
        }
        let gains = slope.clone();
        Ok(ActivationSpec { kind: ActivationKind::PiecewiseLinear { slope, limit }, gains })
    }

    /// Table activations must declare their gain bounds; the declaration is
    /// checked by randomized secant sampling, not symbolically.
    pub fn custom_table(xs: Vec<f64>, ys: Vec<Vec<f64>>, declared_gains: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Validation(
                "table needs at least two strictly increasing sample points".into(),
            ));
        }
        if ys.len() != declared_gains.len() || ys.iter().any(|row| row.len() != xs.len()) {
            return Err(Error::Dimension { expected: xs.len(), got: 0 });
        }
        if declared_gains.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Validation("declared gains must be positive".into()));
        }
        let spec = ActivationSpec {
            kind: ActivationKind::CustomTable { xs, ys },
            gains: declared_gains,
        };
        spec.validate_secants(10_000, 0xC0FFEE)?;
        Ok(spec)
    }

    /// Randomized secant audit: draws pairs across the table span and checks
    /// 0 <= secant <= G_i + 1e-12 for every neuron.
    fn validate_secants(&self, samples: usize, seed: u64) -> Result<()> {
        let (lo, hi) = match &self.kind {
            ActivationKind::CustomTable { xs, .. } => {
                (xs[0] - 1.0, *xs.last().unwrap() + 1.0)
            }
            _ => (-50.0, 50.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..self.n() {
            let bound = self.gains[i];
            for _ in 0..samples {
                let x = rng.random_range(lo..hi);
                let y = rng.random_range(lo..hi);
                if x == y {
                    continue;
                }
                let secant = (self.eval(i, x) - self.eval(i, y)) / (x - y);
                if !(-1e-12..=bound + 1e-12).contains(&secant) {
                    return Err(Error::Validation(format!(
                        "declared gain {bound} violated for neuron {i}: secant {secant} on ({x}, {y})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.gains.len()
    }

    pub fn eval(&self, i: usize, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::PiecewiseLinear { slope, limit } => {
                (slope[i] * x).clamp(-*limit, *limit)
            }
            ActivationKind::CustomTable { xs, ys } => {
                let row = &ys[i];
                if x <= xs[0] {
                    return row[0];
                }
                if x >= *xs.last().unwrap() {
                    return *row.last().unwrap();
                }
                let k = xs.partition_point(|p| *p <= x);
                let (x0, x1) = (xs[k - 1], xs[k]);
                let (y0, y1) = (row[k - 1], row[k]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// g_i(u) - g_i(u - w), evaluated without catastrophic cancellation for
    /// the sigmoid. The difference trajectory decays through hundreds of
    /// orders of magnitude, so the naive two-call difference (noise floor
    /// ~1e-16 absolute) would destroy it; the product form below is exact to
    /// relative rounding in w.
    pub fn eval_diff(&self, i: usize, u: f64, w: f64) -> f64 {
        match &self.kind {
            ActivationKind::Sigmoid => w.exp_m1() * sigmoid(-u) * sigmoid(u - w),
            _ => self.eval(i, u) - self.eval(i, u - w),
        }
    }

    /// The slope bound G_i.
    pub fn gain_bound(&self, i: usize) -> f64 {
        self.gains[i]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

/// The full plant both trajectories obey.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchingSystem {
    pub modes: Vec<Mode>,
    pub schedule: SwitchSchedule,
    pub activation: ActivationSpec,
    pub n: usize,
}

impl SwitchingSystem {
    pub fn new(modes: Vec<Mode>, schedule: SwitchSchedule, activation: ActivationSpec) -> Result<Self> {
        let n = match modes.first() {
            Some(m) => m.n(),
            None => return Err(Error::Validation("need at least one mode".into())),
        };
        for (k, m) in modes.iter().enumerate() {
            if m.n() != n {
                return Err(Error::Validation(format!(
                    "modes[{k}] has {} neurons, expected {n}",
                    m.n()
                )));
            }
        }
        if activation.n() != n {
            return Err(Error::Dimension { expected: n, got: activation.n() });
        }
        if let Some(bad) = schedule.mode_index.iter().find(|k| **k >= modes.len()) {
            return Err(Error::Validation(format!(
                "schedule references mode {bad}, only {} modes defined",
                modes.len()
            )));
        }
        Ok(SwitchingSystem { modes, schedule, activation, n })
    }

    /// The coefficient triple active at `t` (right-continuous at breakpoints).
    pub fn eval_coefficients(&self, t: f64) -> Result<&Mode> {
        Ok(&self.modes[self.schedule.mode_index_at(t)?])
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon
    }
}

/// State of the trajectory pair at time `t`. The difference w = u - v is
/// the integrated quantity; v is derived on demand. Integrating w directly
/// (rather than u and v separately) keeps it meaningful far below the
/// absolute floor where u - v would be pure rounding noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl TrajectoryState {
    pub fn from_pair(t: f64, u: Vec<f64>, v: &[f64]) -> Result<Self> {
        if v.len() != u.len() {
            return Err(Error::Dimension { expected: u.len(), got: v.len() });
        }
        let w = u.iter().zip(v).map(|(a, b)| a - b).collect();
        Ok(TrajectoryState { t, u, w })
    }

    /// The second trajectory, v = u - w.
    pub fn v(&self) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| u - w).collect()
    }
}
