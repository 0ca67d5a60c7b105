//! The four trigger-rule families (x three norms where applicable) and the
//! threshold-function library for the state-dependent rules.

use serde::Serialize;

use crate::analysis::{weighted_norm, BoundSet, NormKind, Weights};
use crate::model::{Mode, SwitchingSystem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Protocol {
    CentralizedStructure,
    DecentralizedStructure,
    CentralizedState,
    DecentralizedState,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::CentralizedStructure => "centralized-structure",
            Protocol::DecentralizedStructure => "decentralized-structure",
            Protocol::CentralizedState => "centralized-state",
            Protocol::DecentralizedState => "decentralized-state",
        }
    }

    pub fn is_structure(self) -> bool {
        matches!(self, Protocol::CentralizedStructure | Protocol::DecentralizedStructure)
    }

    pub fn is_decentralized(self) -> bool {
        matches!(self, Protocol::DecentralizedStructure | Protocol::DecentralizedState)
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized-structure" => Ok(Protocol::CentralizedStructure),
            "decentralized-structure" => Ok(Protocol::DecentralizedStructure),
            "centralized-state" => Ok(Protocol::CentralizedState),
            "decentralized-state" => Ok(Protocol::DecentralizedState),
            other => Err(Error::Validation(format!("unknown protocol {other:?}"))),
        }
    }
}

/// A positive, strictly decreasing threshold function with limit zero.
/// Both families are checked by parameter signs at construction; the
/// exp-gamma family additionally needs r*s >= 1 so the derivative never
/// turns positive on [0, inf).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ThresholdFn {
    /// c / (a*t + b)^p
    RationalDecay { c: f64, a: f64, b: f64, p: f64 },
    /// (t + s) * exp(-r*t - q) / d
    ExpGamma { s: f64, r: f64, q: f64, d: f64 },
}

impl ThresholdFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdFn::RationalDecay { c, a, b, p } => {
                if c > 0.0 && a > 0.0 && b > 0.0 && p > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Validation(format!(
                        "rational-decay parameters must all be positive: c={c} a={a} b={b} p={p}"
                    )))
                }
            }
            ThresholdFn::ExpGamma { s, r, q, d } => {
                if !(s > 0.0 && r > 0.0 && q > 0.0 && d > 0.0) {
                    return Err(Error::Validation(format!(
                        "exp-gamma parameters must all be positive: s={s} r={r} q={q} d={d}"
                    )));
                }
                if r * s < 1.0 {
                    return Err(Error::Validation(format!(
                        "exp-gamma with r*s = {} < 1 is increasing near t = 0",
                        r * s
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ThresholdFn::RationalDecay { c, a, b, p } => c / (a * t + b).powf(p),
            ThresholdFn::ExpGamma { s, r, q, d } => (t + s) * (-r * t - q).exp() / d,
        }
    }
}

/// Threshold configuration of a state-dependent rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ThresholdSpec {
    /// One common Phi(t) for the centralized rule.
    Global(ThresholdFn),
    /// Per-neuron Psi_i(t) for the decentralized rule.
    PerNeuron(Vec<ThresholdFn>),
    /// Per-neuron thresholds delta(t) * exp(-beta_i (t - t_k^i)) where
    /// delta is scaled from the current global difference norm. Requires
    /// global state information, so it is a centralized-information variant
    /// of the decentralized rule.
    AdaptiveDelta { alpha: f64, beta: Vec<f64>, t_window: f64 },
}

impl ThresholdSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ThresholdSpec::Global(f) => f.validate(),
            ThresholdSpec::PerNeuron(fs) => {
                if fs.len() != n {
                    return Err(Error::Dimension { expected: n, got: fs.len() });
                }
                fs.iter().try_for_each(|f| f.validate())
            }
            ThresholdSpec::AdaptiveDelta { alpha, beta, t_window } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::Validation(format!("alpha = {alpha} must lie in (0,1)")));
                }
                if beta.len() != n {
                    return Err(Error::Dimension { expected: n, got: beta.len() });
                }
                if beta.iter().any(|b| !(*b > 0.0)) {
                    return Err(Error::Validation("beta must be positive".into()));
                }
                if !(*t_window > 0.0) {
                    return Err(Error::Validation("t_window must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Selects one of the four protocols with its margins. eps_c / eps_d are the
/// contraction margins of the structure rules; eps0 is the positivity floor
/// the rules were validated against; state rules carry their thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerRule {
    pub protocol: Protocol,
    pub norm: NormKind,
    pub eps_c: f64,
    pub eps_d: f64,
    pub eps0: f64,
    pub thresholds: Option<ThresholdSpec>,
}

impl TriggerRule {
    pub fn centralized_structure(norm: NormKind, eps_c: f64, eps0: f64) -> Result<Self> {
        if !(eps_c > 0.0 && eps_c < 1.0) {
            return Err(Error::Validation(format!("eps_c = {eps_c} must lie in (0,1)")));
        }
        if !(eps0 > 0.0) {
            return Err(Error::Validation(format!("eps0 = {eps0} must be positive")));
        }
        Ok(TriggerRule {
            protocol: Protocol::CentralizedStructure,
            norm,
            eps_c,
            eps_d: 0.0,
            eps0,
            thresholds: None,
        })
    }

    pub fn decentralized_structure(norm: NormKind, eps_d: f64, eps0: f64) -> Result<Self> {
        if !(eps_d > 0.0 && eps_d < 1.0) {
            return Err(Error::Validation(format!("eps_d = {eps_d} must lie in (0,1)")));
        }
        if !(eps0 > 0.0) {
            return Err(Error::Validation(format!("eps0 = {eps0} must be positive")));
        }
        Ok(TriggerRule {
            protocol: Protocol::DecentralizedStructure,
            norm,
            eps_d,
            eps_c: 0.0,
            eps0,
            thresholds: None,
        })
    }

    pub fn centralized_state(norm: NormKind, phi: ThresholdFn) -> Result<Self> {
        phi.validate()?;
        Ok(TriggerRule {
            protocol: Protocol::CentralizedState,
            norm,
            eps_c: 0.0,
            eps_d: 0.0,
            eps0: 0.0,
            thresholds: Some(ThresholdSpec::Global(phi)),
        })
    }

    pub fn decentralized_state(norm: NormKind, thresholds: ThresholdSpec) -> Result<Self> {
        if matches!(thresholds, ThresholdSpec::Global(_)) {
            return Err(Error::Validation(
                "decentralized-state needs per-neuron or adaptive thresholds".into(),
            ));
        }
        Ok(TriggerRule {
            protocol: Protocol::DecentralizedState,
            norm,
            eps_c: 0.0,
            eps_d: 0.0,
            eps0: 0.0,
            thresholds: Some(thresholds),
        })
    }

    /// Precondition check against the computed bounds: the structure rules
    /// need mu uniformly positive, and the centralized one additionally
    /// needs its margin small enough that the held coefficients stay
    /// nonnegative over one inter-event interval.
    pub fn validate_against(&self, bounds: &BoundSet, n: usize) -> Result<()> {
        if !bounds.condition_ok() {
            return Err(Error::RuleRejected(format!(
                "mu is not uniformly positive (min {:.6}); no rule applies",
                bounds.mu_min
            )));
        }
        match self.protocol {
            Protocol::CentralizedStructure => {
                if bounds.nu_max * self.eps_c > bounds.mu_min {
                    return Err(Error::RuleRejected(format!(
                        "M*eps_c = {:.6} exceeds eps0 = {:.6}",
                        bounds.nu_max * self.eps_c,
                        bounds.mu_min
                    )));
                }
                if bounds.mu_max * self.eps_c > bounds.mu_min * (2.0 - self.eps_c) {
                    return Err(Error::RuleRejected(format!(
                        "N*eps_c = {:.6} exceeds eps0*(2-eps_c) = {:.6}",
                        bounds.mu_max * self.eps_c,
                        bounds.mu_min * (2.0 - self.eps_c)
                    )));
                }
                Ok(())
            }
            Protocol::DecentralizedStructure => Ok(()),
            Protocol::CentralizedState | Protocol::DecentralizedState => {
                match &self.thresholds {
                    Some(spec) => spec.validate(n),
                    None => Err(Error::RuleRejected("state rule without thresholds".into())),
                }
            }
        }
    }
}

/// First t > t_k at which min_j of the accumulated integral of mu_{m,j}
/// reaches eps_c, i.e. the largest of the per-neuron crossing times. The
/// integrands are piecewise constant, so each crossing is a closed-form
/// segment walk. Returns (horizon, false) if some neuron cannot accumulate
/// eps_c before the horizon.
pub fn next_trigger_centralized_structure(
    rule: &TriggerRule,
    xi: &Weights,
    system: &SwitchingSystem,
    t_k: f64,
) -> Result<(f64, bool)> {
    let horizon = system.horizon();
    if !(0.0..=horizon).contains(&t_k) {
        return Err(Error::Domain(format!("t_k = {t_k} outside [0, {horizon}]")));
    }
    let gains = system.activation.gains();
    let mut worst = t_k;
    for j in 0..system.n {
        let mut acc = 0.0;
        let mut t = t_k;
        let crossed = loop {
            if t >= horizon {
                break None;
            }
            let mode = system.eval_coefficients(t)?;
            let seg_end = system
                .schedule
                .next_breakpoint_after(t)
                .unwrap_or(horizon)
                .min(horizon);
            let rate = crate::analysis::mu_component(mode, gains, xi, rule.norm, j);
            if rate > 0.0 && acc + rate * (seg_end - t) >= rule.eps_c {
                break Some(t + (rule.eps_c - acc) / rate);
            }
            acc += rate * (seg_end - t);
            t = seg_end;
        };
        match crossed {
            Some(tj) => worst = worst.max(tj),
            None => return Ok((horizon, false)),
        }
    }
    Ok((worst.min(horizon), worst < horizon))
}

/// Running monitor for the decentralized (push) structure rule. For each
/// neuron j it tracks
///
///   D_j(t) = int_{t_k^j}^t own_j(s) ds - sum_{i!=j} int_{t_last^i}^t coeff_ji(s) ds
///
/// where own_j = gamma_j - G_j a_jj+ (minus the row half-sum for L2) and
/// coeff_ji couples neighbor i's last broadcast. Neuron j fires at the
/// first D_j >= eps_d. A neighbor's fire zeroes its integral and makes
/// D_j jump up, which can push other neurons across the margin at the same
/// instant; the engine drains those cascades in index order.
#[derive(Debug, Clone)]
pub struct PushMonitor {
    norm: NormKind,
    own: Vec<f64>,
    /// nbr[j][i]: accumulated coeff_ji integral since neighbor i last fired.
    nbr: Vec<Vec<f64>>,
}

/// Rate of the own-integral of neuron j under `mode`.
pub fn push_own_rate(mode: &Mode, gains: &[f64], norm: NormKind, j: usize) -> f64 {
    let base = mode.gamma[j] - gains[j] * mode.a[j][j].max(0.0);
    match norm {
        NormKind::L1 | NormKind::LInf => base,
        NormKind::L2 => {
            let row_half: f64 = (0..mode.n())
                .filter(|i| *i != j)
                .map(|i| 0.5 * gains[i] * mode.a[j][i].abs())
                .sum();
            base - row_half
        }
    }
}

/// Rate of the neighbor term coeff_ji under `mode`.
pub fn push_nbr_rate(mode: &Mode, gains: &[f64], xi: &Weights, norm: NormKind, j: usize, i: usize) -> f64 {
    let ratio = xi[i] / xi[j];
    match norm {
        NormKind::L1 => gains[j] * ratio * mode.a[i][j].abs(),
        NormKind::L2 => 0.5 * gains[j] * ratio * mode.a[i][j].abs(),
        NormKind::LInf => gains[j] * ratio * mode.a[j][i].abs(),
    }
}

/// Arms the push-rule condition for every neuron at t = 0 (all integrals
/// empty, all last-trigger times zero).
pub fn arm_decentralized_structure(rule: &TriggerRule, n: usize) -> Result<PushMonitor> {
    if rule.protocol != Protocol::DecentralizedStructure {
        return Err(Error::RuleRejected(format!(
            "{} is not the push structure rule",
            rule.protocol.as_str()
        )));
    }
    Ok(PushMonitor {
        norm: rule.norm,
        own: vec![0.0; n],
        nbr: vec![vec![0.0; n]; n],
    })
}

impl PushMonitor {
    /// Accumulate all integrals over a step of width `dt` inside one mode.
    pub fn advance(&mut self, mode: &Mode, gains: &[f64], xi: &Weights, dt: f64) {
        let n = self.own.len();
        for j in 0..n {
            self.own[j] += push_own_rate(mode, gains, self.norm, j) * dt;
            for i in 0..n {
                if i != j {
                    self.nbr[j][i] += push_nbr_rate(mode, gains, xi, self.norm, j, i) * dt;
                }
            }
        }
    }

    /// Current monitored value D_j.
    pub fn d(&self, j: usize) -> f64 {
        self.own[j] - self.nbr[j].iter().sum::<f64>()
    }

    /// Growth rate of D_j under `mode` (equals mu_{m,j} by construction).
    pub fn d_rate(&self, mode: &Mode, gains: &[f64], xi: &Weights, j: usize) -> f64 {
        let n = self.own.len();
        let nbr_sum: f64 = (0..n)
            .filter(|i| *i != j)
            .map(|i| push_nbr_rate(mode, gains, xi, self.norm, j, i))
            .sum();
        push_own_rate(mode, gains, self.norm, j) - nbr_sum
    }

    /// Neuron j fires: its own integral restarts and every other neuron's
    /// accumulated term for neighbor j is zeroed (the broadcast advances
    /// the neighbor integral's lower limit to now).
    pub fn fire(&mut self, j: usize) {
        self.own[j] = 0.0;
        let n = self.own.len();
        for q in 0..n {
            if q != j {
                self.nbr[q][j] = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateCheck {
    Below,
    Crossing,
}

/// Centralized state rule: compare the weighted norm of the sampling error
/// e(t) = w(t_k) - w(t) against Phi(t). A crossing resamples every neuron.
pub fn check_state_centralized(
    rule: &TriggerRule,
    xi: &Weights,
    w_now: &[f64],
    w_held: &[f64],
    t: f64,
) -> Result<StateCheck> {
    let phi = match &rule.thresholds {
        Some(ThresholdSpec::Global(f)) => f.eval(t),
        _ => {
            return Err(Error::RuleRejected(
                "centralized state check needs a global threshold".into(),
            ))
        }
    };
    if !(phi > 0.0) {
        return Err(Error::Validation(format!("threshold evaluated to {phi} at t = {t}")));
    }
    let e: Vec<f64> = w_held.iter().zip(w_now).map(|(h, w)| h - w).collect();
    let err = weighted_norm(&e, xi, rule.norm)?;
    if err >= phi && err > 0.0 {
        Ok(StateCheck::Crossing)
    } else {
        Ok(StateCheck::Below)
    }
}

/// Decentralized state rule with prescribed per-neuron thresholds: compare
/// |e_i(t)| against Psi_i(t). A crossing resamples only neuron i.
pub fn check_state_decentralized(
    rule: &TriggerRule,
    i: usize,
    w_i_now: f64,
    w_i_held: f64,
    t: f64,
) -> Result<StateCheck> {
    let psi = match &rule.thresholds {
        Some(ThresholdSpec::PerNeuron(fs)) => fs[i].eval(t),
        _ => {
            return Err(Error::RuleRejected(
                "decentralized state check needs per-neuron thresholds".into(),
            ))
        }
    };
    if !(psi > 0.0) {
        return Err(Error::Validation(format!("threshold evaluated to {psi} at t = {t}")));
    }
    let err = (w_i_held - w_i_now).abs();
    if err >= psi && err > 0.0 {
        Ok(StateCheck::Crossing)
    } else {
        Ok(StateCheck::Below)
    }
}

/// Adaptive per-neuron thresholds Psi_i(t) = delta(t) exp(-beta_i (t-t_k^i))
/// with delta(t) = alpha ||w(t)|| / sum_q exp(-beta_q (t - t_k^q)),
/// evaluated lazily at the current time. By construction the xi-weighted
/// sum of the thresholds stays below alpha ||w(t)|| in the L1 case.
pub fn adaptive_delta(
    alpha: f64,
    beta: &[f64],
    t_window: f64,
    w_now: &[f64],
    xi: &Weights,
    kind: NormKind,
    t: f64,
    last_triggers: &[f64],
) -> Result<Vec<f64>> {
    let n = w_now.len();
    if beta.len() != n || last_triggers.len() != n {
        return Err(Error::Dimension { expected: n, got: beta.len().min(last_triggers.len()) });
    }
    if last_triggers.iter().any(|tk| t - tk > t_window || *tk > t) {
        return Err(Error::Domain(format!(
            "a last-trigger time is outside the window [t - {t_window}, t]"
        )));
    }
    let norm = weighted_norm(w_now, xi, kind)?;
    let den: f64 = beta
        .iter()
        .zip(last_triggers)
        .map(|(b, tk)| (-b * (t - tk)).exp())
        .sum();
    let delta = alpha * norm / den;
    Ok(beta
        .iter()
        .zip(last_triggers)
        .map(|(b, tk)| delta * (-b * (t - tk)).exp())
        .collect())
}
