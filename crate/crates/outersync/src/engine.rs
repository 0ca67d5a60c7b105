//! Exact event-driven integration of the sampled-data pair dynamics.
//!
//! Between trigger events and mode switches every right-hand side is frozen
//! (coefficients are piecewise constant and the feedback uses held samples),
//! so the state moves along straight lines and integration is a single
//! multiply-add per neuron. All event times are located either in closed
//! form (structure rules, whose monitored integrals are piecewise linear in
//! t) or by micro-step scanning plus bisection (state rules).

use std::collections::VecDeque;
use std::io::Write as IoWrite;

use serde::Serialize;

use crate::analysis::{global_bounds, weighted_norm, BoundSet, NormKind, Weights};
use crate::model::{Mode, SwitchingSystem, TrajectoryState};
use crate::triggers::{
    adaptive_delta, arm_decentralized_structure, check_state_centralized,
    next_trigger_centralized_structure, Protocol, PushMonitor, StateCheck, ThresholdSpec,
    TriggerRule,
};
use crate::{Error, Result};

/// Sampled copies of the pair state frozen at the trigger times. Centralized
/// rules keep all sample times equal; decentralized rules let them drift
/// apart. As in [`TrajectoryState`], the difference w is held directly.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldSamples {
    pub sample_time: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl HeldSamples {
    pub fn from_state(state: &TrajectoryState) -> Self {
        HeldSamples {
            sample_time: vec![state.t; state.u.len()],
            u: state.u.clone(),
            w: state.w.clone(),
        }
    }

    /// Held copy of the second trajectory, v = u - w.
    pub fn v(&self) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| u - w).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EventKind {
    TriggerCentralized,
    TriggerNeuron(usize),
    ModeSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    /// Rule-norm of w just before and just after the event. w is continuous
    /// across events (only held samples jump), so these agree; they are both
    /// recorded to keep the trace self-describing.
    pub norm_before: f64,
    pub norm_after: f64,
    /// Monitored quantity at the crossing: the accumulated integral for
    /// structure rules, the error norm for state rules, zero for switches.
    pub rule_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Monitoring grid for the state-dependent rules.
    pub micro_step: f64,
    /// Bisection tolerance on refined event times.
    pub crossing_tol: f64,
    /// Cross-check every committed integration step against a fine
    /// Runge-Kutta sweep (slow; for tests).
    pub oracle_mode: bool,
    /// Output snapshot grid, decoupled from event times.
    pub snapshot_dt: f64,
    /// Run even if the rule fails its precondition check against the bounds.
    pub allow_unvalidated: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            micro_step: 1e-3,
            crossing_tol: 1e-10,
            oracle_mode: false,
            snapshot_dt: 0.1,
            allow_unvalidated: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.micro_step > self.crossing_tol && self.crossing_tol > 0.0) {
            return Err(Error::Validation(format!(
                "need micro_step > crossing_tol > 0 (got {} and {})",
                self.micro_step, self.crossing_tol
            )));
        }
        if !(self.snapshot_dt > 0.0) {
            return Err(Error::Validation("snapshot_dt must be positive".into()));
        }
        Ok(())
    }
}

/// Constant derivatives (du/dt, dw/dt) of the held system under `mode`:
///
///   du_i/dt = -gamma_i u_i(held) + sum_j a_ij g_j(u_j(held)) + I_i
///   dw_i/dt = -gamma_i w_i(held) + sum_j a_ij [g_j(u_j) - g_j(u_j - w_j)](held)
///
/// The activation difference is evaluated in its cancellation-free form.
pub fn held_derivatives(
    mode: &Mode,
    activation: &crate::model::ActivationSpec,
    held: &HeldSamples,
) -> (Vec<f64>, Vec<f64>) {
    let n = mode.n();
    let mut cu = vec![0.0; n];
    let mut cw = vec![0.0; n];
    let g: Vec<f64> = (0..n).map(|j| activation.eval(j, held.u[j])).collect();
    let h: Vec<f64> = (0..n)
        .map(|j| activation.eval_diff(j, held.u[j], held.w[j]))
        .collect();
    for i in 0..n {
        let row = &mode.a[i];
        let mut su = 0.0;
        let mut sw = 0.0;
        for j in 0..n {
            su += row[j] * g[j];
            sw += row[j] * h[j];
        }
        cu[i] = -mode.gamma[i] * held.u[i] + su + mode.input[i];
        cw[i] = -mode.gamma[i] * held.w[i] + sw;
    }
    (cu, cw)
}

fn step_in_place(state: &mut TrajectoryState, cu: &[f64], cw: &[f64], t_to: f64) {
    let dt = t_to - state.t;
    for i in 0..state.u.len() {
        state.u[i] += cu[i] * dt;
        state.w[i] += cw[i] * dt;
    }
    state.t = t_to;
}

/// Exact update of the held system over [t_from, t_to]: the derivative is
/// constant there, so the result is a single multiply-add (exact to
/// floating-point rounding). The caller guarantees no breakpoint or trigger
/// lies inside the interval.
pub fn hold_integrate(
    state: &TrajectoryState,
    held: &HeldSamples,
    mode: &Mode,
    activation: &crate::model::ActivationSpec,
    t_from: f64,
    t_to: f64,
) -> Result<TrajectoryState> {
    if t_from != state.t {
        return Err(Error::Contract(format!(
            "state is at t = {}, not t_from = {t_from}",
            state.t
        )));
    }
    if t_to < t_from {
        return Err(Error::Contract(format!("t_to = {t_to} < t_from = {t_from}")));
    }
    let (cu, cw) = held_derivatives(mode, activation, held);
    let mut next = state.clone();
    step_in_place(&mut next, &cu, &cw, t_to);
    Ok(next)
}

/// Bisection refinement: returns t* in [t_lo, t_hi] with f(t*) resolved to
/// `threshold` within a bracket of width <= tol. Requires f - threshold to
/// change sign over the bracket; the returned point is the endpoint of the
/// final bracket on the crossed side, so the condition holds there.
pub fn refine_crossing(
    f: impl Fn(f64) -> f64,
    threshold: f64,
    t_lo: f64,
    t_hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(t_lo < t_hi) {
        return Err(Error::Contract(format!("bad bracket [{t_lo}, {t_hi}]")));
    }
    let mut lo = t_lo;
    let mut hi = t_hi;
    let f_lo = f(lo) - threshold;
    let f_hi = f(hi) - threshold;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Contract(format!(
            "no sign change over [{t_lo}, {t_hi}]: f-threshold is {f_lo} and {f_hi}"
        )));
    }
    // keep the invariant: sign(lo) == sign(f_lo), opposite at hi
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket at floating-point resolution
        }
        let fm = f(mid) - threshold;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// One stored trace row. `held_w` is the held difference sample active at
/// this time, kept so state-rule containment can be audited after the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub held_w: Vec<f64>,
}

impl Snapshot {
    pub fn v(&self) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| u - w).collect()
    }
}

/// Time-stamped record of a run: snapshot rows on the output grid plus one
/// row per event time, the event list, per-neuron sample-time history, and
/// enough provenance to re-derive every diagnostic.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<EventRecord>,
    pub held_history: Vec<Vec<f64>>,
    pub config_echo: String,
    pub rule: TriggerRule,
    pub xi: Weights,
    pub bounds: BoundSet,
    pub horizon: f64,
    /// Largest per-neuron integral of (gamma_j - G_j a_jj+) accumulated
    /// between consecutive resamples of that neuron. The structure-rule
    /// analysis needs this to stay <= 1.
    pub max_hold_integral: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub protocol: String,
    pub norm: String,
    pub n: usize,
    pub horizon: f64,
    pub trigger_count: usize,
    pub mode_switch_count: usize,
    pub per_neuron_trigger_counts: Vec<usize>,
    /// Gap statistics over consecutive triggers (per neuron, pooled, for
    /// the decentralized rules). Null when fewer than two triggers fired.
    pub min_gap: Option<f64>,
    pub mean_gap: Option<f64>,
    pub max_gap: Option<f64>,
    pub initial_w_norm_l1: f64,
    pub final_w_norm_l1: f64,
    pub final_w_norm_l2: f64,
    pub final_w_norm_linf: f64,
    pub config_echo: serde_json::Value,
}

fn unweighted(x: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => x.iter().map(|v| v.abs()).sum(),
        NormKind::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::LInf => x.iter().map(|v| v.abs()).fold(0.0, f64::max),
    }
}

impl SimulationTrace {
    pub fn n(&self) -> usize {
        self.held_history.len()
    }

    /// Snapshot row at exactly time `t`, if one was stored.
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        let k = self.snapshots.partition_point(|s| s.t < t);
        self.snapshots.get(k).filter(|s| s.t == t)
    }

    pub fn trigger_events(&self) -> impl Iterator<Item = &EventRecord> {
        self.events
            .iter()
            .filter(|e| !matches!(e.kind, EventKind::ModeSwitch))
    }

    /// Per-neuron trigger times (centralized triggers count for every
    /// neuron, matching the resampling they cause).
    pub fn trigger_times_per_neuron(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n()];
        for e in self.trigger_events() {
            match e.kind {
                EventKind::TriggerCentralized => {
                    for v in out.iter_mut() {
                        v.push(e.t);
                    }
                }
                EventKind::TriggerNeuron(i) => out[i].push(e.t),
                EventKind::ModeSwitch => {}
            }
        }
        out
    }

    /// CSV export: one row per stored snapshot, with unweighted norms of w
    /// and the events that fired at that instant.
    /// Columns: t, u_1..u_n, v_1..v_n, w_norm_l1, w_norm_l2, w_norm_linf,
    /// event_flag (0 none, 1 trigger, 2 mode switch, 3 both), event_neuron
    /// (1-based, ';'-joined for same-instant cascades, empty for
    /// centralized/none).
    pub fn write_csv<W: IoWrite>(&self, out: W) -> Result<()> {
        let n = self.n();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("u_{i}")));
        header.extend((1..=n).map(|i| format!("v_{i}")));
        header.extend(
            ["w_norm_l1", "w_norm_l2", "w_norm_linf", "event_flag", "event_neuron"]
                .iter()
                .map(|s| s.to_string()),
        );
        wtr.write_record(&header).map_err(io_err)?;

        let mut ev = self.events.iter().peekable();
        for snap in &self.snapshots {
            let mut flag = 0u8;
            let mut neurons: Vec<usize> = Vec::new();
            while let Some(e) = ev.peek() {
                if e.t < snap.t {
                    ev.next(); // event predates the first stored row at its time; skip
                } else if e.t == snap.t {
                    match e.kind {
                        EventKind::ModeSwitch => flag |= 2,
                        EventKind::TriggerCentralized => flag |= 1,
                        EventKind::TriggerNeuron(i) => {
                            flag |= 1;
                            neurons.push(i + 1);
                        }
                    }
                    ev.next();
                } else {
                    break;
                }
            }
            let mut row = vec![format!("{}", snap.t)];
            row.extend(snap.u.iter().map(|v| format!("{v}")));
            row.extend(snap.v().iter().map(|v| format!("{v}")));
            for kind in [NormKind::L1, NormKind::L2, NormKind::LInf] {
                row.push(format!("{}", unweighted(&snap.w, kind)));
            }
            row.push(format!("{flag}"));
            row.push(
                neurons
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            wtr.write_record(&row).map_err(io_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let n = self.n();
        let per_times = self.trigger_times_per_neuron();
        let per_counts: Vec<usize> = per_times.iter().map(|v| v.len()).collect();
        let mut gaps: Vec<f64> = Vec::new();
        if self.rule.protocol.is_decentralized() {
            for v in &per_times {
                gaps.extend(v.windows(2).map(|p| p[1] - p[0]));
            }
        } else if let Some(first) = per_times.first() {
            gaps.extend(first.windows(2).map(|p| p[1] - p[0]));
        }
        let trigger_count = self.trigger_events().count();
        let mode_switch_count = self.events.len() - trigger_count;
        let first = self.snapshots.first();
        let last = self.snapshots.last();
        RunSummary {
            protocol: self.rule.protocol.as_str().to_string(),
            norm: self.rule.norm.as_str().to_string(),
            n,
            horizon: self.horizon,
            trigger_count,
            mode_switch_count,
            per_neuron_trigger_counts: per_counts,
            min_gap: gaps.iter().copied().reduce(f64::min),
            mean_gap: if gaps.is_empty() {
                None
            } else {
                Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
            },
            max_gap: gaps.iter().copied().reduce(f64::max),
            initial_w_norm_l1: first.map_or(0.0, |s| unweighted(&s.w, NormKind::L1)),
            final_w_norm_l1: last.map_or(0.0, |s| unweighted(&s.w, NormKind::L1)),
            final_w_norm_l2: last.map_or(0.0, |s| unweighted(&s.w, NormKind::L2)),
            final_w_norm_linf: last.map_or(0.0, |s| unweighted(&s.w, NormKind::LInf)),
            config_echo: serde_json::from_str(&self.config_echo)
                .unwrap_or(serde_json::Value::String(self.config_echo.clone())),
        }
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Everything the four protocol loops share: committed state, held samples,
/// output bookkeeping, and the inter-resample hold-coefficient audit.
struct Driver<'a> {
    system: &'a SwitchingSystem,
    rule: &'a TriggerRule,
    xi: &'a Weights,
    cfg: &'a IntegratorConfig,
    state: TrajectoryState,
    held: HeldSamples,
    snapshots: Vec<Snapshot>,
    events: Vec<EventRecord>,
    held_history: Vec<Vec<f64>>,
    snap_k: usize,
    hold_acc: Vec<f64>,
    max_hold_integral: f64,
}

impl<'a> Driver<'a> {
    fn new(
        system: &'a SwitchingSystem,
        rule: &'a TriggerRule,
        xi: &'a Weights,
        cfg: &'a IntegratorConfig,
        u0: Vec<f64>,
        v0: &[f64],
    ) -> Result<Self> {
        let state = TrajectoryState::from_pair(0.0, u0, v0)?;
        let held = HeldSamples::from_state(&state);
        let n = state.u.len();
        let mut d = Driver {
            system,
            rule,
            xi,
            cfg,
            state,
            held,
            snapshots: Vec::new(),
            events: Vec::new(),
            held_history: vec![vec![0.0]; n],
            snap_k: 1,
            hold_acc: vec![0.0; n],
            max_hold_integral: 0.0,
        };
        d.push_snapshot();
        Ok(d)
    }

    fn n(&self) -> usize {
        self.state.u.len()
    }

    fn horizon(&self) -> f64 {
        self.system.horizon()
    }

    fn mode_now(&self) -> Result<&'a Mode> {
        self.system.eval_coefficients(self.state.t)
    }

    fn seg_end(&self) -> f64 {
        self.system
            .schedule
            .next_breakpoint_after(self.state.t)
            .unwrap_or(self.horizon())
            .min(self.horizon())
    }

    fn push_snapshot(&mut self) {
        if self.snapshots.last().map(|s| s.t) == Some(self.state.t) {
            return;
        }
        self.snapshots.push(Snapshot {
            t: self.state.t,
            u: self.state.u.clone(),
            w: self.state.w.clone(),
            held_w: self.held.w.clone(),
        });
    }

    /// Advance inside the current mode segment to `t_to`, emitting grid
    /// snapshots strictly inside the interval. The caller is responsible for
    /// a snapshot at `t_to` itself (events do this; plain advances don't
    /// need one).
    fn advance_within_mode(&mut self, t_to: f64) -> Result<()> {
        if t_to < self.state.t {
            return Err(Error::Contract(format!(
                "advance to t = {t_to} behind current t = {}",
                self.state.t
            )));
        }
        if t_to == self.state.t {
            return Ok(());
        }
        let mode = self.mode_now()?;
        let (cu, cw) = held_derivatives(mode, &self.system.activation, &self.held);
        let gains = self.system.activation.gains();
        let dt_total = t_to - self.state.t;
        for j in 0..self.n() {
            self.hold_acc[j] += (mode.gamma[j] - gains[j] * mode.a[j][j].max(0.0)) * dt_total;
        }
        if self.cfg.oracle_mode {
            rk4_cross_check(mode, &self.system.activation, &self.state, &self.held, t_to)?;
        }
        loop {
            let tg = self.snap_k as f64 * self.cfg.snapshot_dt;
            if tg <= self.state.t {
                self.snap_k += 1;
                continue;
            }
            if tg < t_to {
                step_in_place(&mut self.state, &cu, &cw, tg);
                self.push_snapshot();
                self.snap_k += 1;
            } else {
                step_in_place(&mut self.state, &cu, &cw, t_to);
                return Ok(());
            }
        }
    }

    /// Record an event at the current time (with its snapshot row) after a
    /// finiteness check of the state.
    fn push_event(&mut self, kind: EventKind, rule_value: f64) -> Result<()> {
        if self.state.u.iter().chain(self.state.w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: self.state.t });
        }
        let norm = weighted_norm(&self.state.w, self.xi, self.rule.norm)?;
        self.events.push(EventRecord {
            t: self.state.t,
            kind,
            norm_before: norm,
            norm_after: norm,
            rule_value,
        });
        self.push_snapshot();
        Ok(())
    }

    fn audit_and_reset_hold(&mut self, j: usize) {
        if self.hold_acc[j] > self.max_hold_integral {
            self.max_hold_integral = self.hold_acc[j];
        }
        self.hold_acc[j] = 0.0;
    }

    fn resample_all(&mut self) {
        for j in 0..self.n() {
            self.held.sample_time[j] = self.state.t;
            self.held.u[j] = self.state.u[j];
            self.held.w[j] = self.state.w[j];
            self.held_history[j].push(self.state.t);
            self.audit_and_reset_hold(j);
        }
    }

    fn resample_one(&mut self, j: usize) {
        self.held.sample_time[j] = self.state.t;
        self.held.u[j] = self.state.u[j];
        self.held.w[j] = self.state.w[j];
        self.held_history[j].push(self.state.t);
        self.audit_and_reset_hold(j);
    }

    /// Advance across the breakpoint at the current segment end (the switch
    /// is processed before any trigger that shares its instant).
    fn cross_breakpoint(&mut self, bp: f64) -> Result<()> {
        self.advance_within_mode(bp)?;
        self.push_event(EventKind::ModeSwitch, 0.0)
    }
}

/// Fine fixed-step classical Runge-Kutta sweep of the held dynamics,
/// compared against the closed-form endpoint. The held right-hand side is
/// constant, so any disagreement beyond rounding means the closed form and
/// the derivative disagree.
fn rk4_cross_check(
    mode: &Mode,
    activation: &crate::model::ActivationSpec,
    state: &TrajectoryState,
    held: &HeldSamples,
    t_to: f64,
) -> Result<()> {
    let (cu, cw) = held_derivatives(mode, activation, held);
    let dt = t_to - state.t;
    let steps = ((dt / 1e-5).ceil() as usize).clamp(10, 2_000_000);
    let h = dt / steps as f64;
    let mut u = state.u.clone();
    let mut w = state.w.clone();
    for _ in 0..steps {
        // derivative independent of (u, w): all four RK stages coincide
        for i in 0..u.len() {
            u[i] += h * cu[i];
            w[i] += h * cw[i];
        }
    }
    let mut exact = state.clone();
    step_in_place(&mut exact, &cu, &cw, t_to);
    let worst = u
        .iter()
        .zip(&exact.u)
        .chain(w.iter().zip(&exact.w))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(Error::Contract(format!(
            "oracle mismatch {worst:.3e} over [{}, {t_to}]",
            state.t
        )));
    }
    Ok(())
}

/// Closed-loop simulation of one rule over the system's horizon.
///
/// The trace is deterministic for fixed inputs (the only randomness lives in
/// the schedule, fixed before this call). Trigger rules are validated
/// against the computed bounds before anything runs, unless
/// `cfg.allow_unvalidated` is set.
pub fn simulate(
    system: &SwitchingSystem,
    rule: &TriggerRule,
    xi: &Weights,
    u0: &[f64],
    v0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<SimulationTrace> {
    cfg.validate()?;
    if u0.len() != system.n || v0.len() != system.n {
        return Err(Error::Dimension { expected: system.n, got: u0.len().min(v0.len()) });
    }
    if u0.iter().chain(v0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("initial states must be finite".into()));
    }
    if xi.n() != system.n {
        return Err(Error::Dimension { expected: system.n, got: xi.n() });
    }
    let bounds = global_bounds(system, xi, rule.norm)?;
    if !cfg.allow_unvalidated {
        rule.validate_against(&bounds, system.n)?;
    }
    if let Some(ThresholdSpec::AdaptiveDelta { t_window, .. }) = &rule.thresholds {
        if *t_window < system.horizon() {
            return Err(Error::Validation(format!(
                "adaptive window {t_window} does not cover the horizon {}",
                system.horizon()
            )));
        }
    }

    let mut driver = Driver::new(system, rule, xi, cfg, u0.to_vec(), v0)?;
    match rule.protocol {
        Protocol::CentralizedStructure => run_centralized_structure(&mut driver)?,
        Protocol::DecentralizedStructure => run_decentralized_structure(&mut driver)?,
        Protocol::CentralizedState | Protocol::DecentralizedState => run_state(&mut driver)?,
    }
    driver.advance_within_mode(driver.seg_end().max(driver.state.t))?;
    driver.push_snapshot(); // final row at the horizon

    let echo = serde_json::json!({
        "protocol": rule.protocol.as_str(),
        "norm": rule.norm.as_str(),
        "eps_c": rule.eps_c,
        "eps_d": rule.eps_d,
        "eps0": rule.eps0,
        "xi": xi.xi(),
        "u0": u0,
        "v0": v0,
        "horizon": system.horizon(),
        "micro_step": cfg.micro_step,
        "crossing_tol": cfg.crossing_tol,
        "snapshot_dt": cfg.snapshot_dt,
        "modes": system.modes.len(),
    });
    Ok(SimulationTrace {
        snapshots: std::mem::take(&mut driver.snapshots),
        events: std::mem::take(&mut driver.events),
        held_history: std::mem::take(&mut driver.held_history),
        config_echo: echo.to_string(),
        rule: rule.clone(),
        xi: xi.clone(),
        bounds,
        horizon: system.horizon(),
        max_hold_integral: driver.max_hold_integral,
    })
}

fn run_centralized_structure(d: &mut Driver) -> Result<()> {
    let horizon = d.horizon();
    let mut t_k = 0.0;
    loop {
        let (t_next, reached) =
            next_trigger_centralized_structure(d.rule, d.xi, d.system, t_k)?;
        // walk through any breakpoints up to the trigger (switch first on ties)
        while let Some(bp) = d.system.schedule.next_breakpoint_after(d.state.t) {
            if bp > t_next {
                break;
            }
            d.cross_breakpoint(bp)?;
        }
        d.advance_within_mode(t_next)?;
        if !reached {
            return Ok(());
        }
        d.push_event(EventKind::TriggerCentralized, d.rule.eps_c)?;
        d.resample_all();
        t_k = t_next;
        if t_k >= horizon {
            return Ok(());
        }
    }
}

fn run_decentralized_structure(d: &mut Driver) -> Result<()> {
    let horizon = d.horizon();
    let n = d.n();
    let gains = d.system.activation.gains();
    let mut monitor = arm_decentralized_structure(d.rule, n)?;
    let eps_d = d.rule.eps_d;
    while d.state.t < horizon {
        let t = d.state.t;
        let mode = d.mode_now()?;
        let seg_end = d.seg_end();
        // earliest closed-form crossing of D_j = eps_d inside this segment
        let mut t_fire = f64::INFINITY;
        let mut j_star = 0;
        for j in 0..n {
            let rate = monitor.d_rate(mode, gains, d.xi, j);
            if rate > 0.0 {
                let tc = t + (eps_d - monitor.d(j)).max(0.0) / rate;
                if tc < t_fire {
                    t_fire = tc;
                    j_star = j;
                }
            }
        }
        if t_fire < seg_end {
            monitor.advance(mode, gains, d.xi, t_fire - t);
            d.advance_within_mode(t_fire)?;
            fire_push_cascade(d, &mut monitor, j_star)?;
        } else if seg_end < horizon {
            monitor.advance(mode, gains, d.xi, seg_end - t);
            d.cross_breakpoint(seg_end)?;
        } else {
            monitor.advance(mode, gains, d.xi, horizon - t);
            d.advance_within_mode(horizon)?;
            break;
        }
    }
    Ok(())
}

/// Fire neuron `first`, then drain the same-instant cascade: zeroing a
/// broadcaster's neighbor integrals makes other neurons' D jump up, which
/// can cross the margin at the same time instant. Each fire re-evaluates
/// all conditions; a neuron fires at most once per instant because its own
/// D restarts at or below zero.
fn fire_push_cascade(d: &mut Driver, monitor: &mut PushMonitor, first: usize) -> Result<()> {
    let n = d.n();
    let eps_d = d.rule.eps_d;
    let mut fired = vec![false; n];
    let mut queue = VecDeque::from([first]);
    while let Some(j) = queue.pop_front() {
        if fired[j] {
            continue;
        }
        fired[j] = true;
        d.push_event(EventKind::TriggerNeuron(j), monitor.d(j))?;
        monitor.fire(j);
        d.resample_one(j);
        for q in 0..n {
            if !fired[q] && !queue.contains(&q) && monitor.d(q) >= eps_d {
                queue.push_back(q);
            }
        }
    }
    Ok(())
}

/// Shared loop for the two state-dependent rules: march on the micro-step
/// grid, compare the sampling error against the thresholds at each
/// candidate point, and bisect the crossing when one appears. Triggers may
/// be detected up to one micro step late; the reported containment slack
/// accounts for that.
fn run_state(d: &mut Driver) -> Result<()> {
    let horizon = d.horizon();
    let centralized = d.rule.protocol == Protocol::CentralizedState;
    while d.state.t < horizon {
        let seg_end = d.seg_end();
        while d.state.t < seg_end {
            fire_already_crossed(d, centralized)?;
            let t1 = d.state.t;
            let t2 = (t1 + d.cfg.micro_step).min(seg_end);
            if t2 == t1 {
                break;
            }
            let mode = d.mode_now()?;
            let (_, cw) = held_derivatives(mode, &d.system.activation, &d.held);
            let w_at = |tau: f64| -> Vec<f64> {
                d.state
                    .w
                    .iter()
                    .zip(&cw)
                    .map(|(w, c)| w + c * (tau - t1))
                    .collect()
            };
            match earliest_state_crossing(d, centralized, &w_at, t1, t2)? {
                None => d.advance_within_mode(t2)?,
                Some((t_star, neuron, err)) => {
                    d.advance_within_mode(t_star)?;
                    if centralized {
                        d.push_event(EventKind::TriggerCentralized, err)?;
                        d.resample_all();
                    } else {
                        d.push_event(EventKind::TriggerNeuron(neuron), err)?;
                        d.resample_one(neuron);
                    }
                }
            }
        }
        if seg_end < horizon {
            d.cross_breakpoint(seg_end)?;
        } else {
            break;
        }
    }
    Ok(())
}

/// Threshold values for the decentralized state rule at time `t` given the
/// difference vector there.
fn state_thresholds(d: &Driver, t: f64, w_now: &[f64]) -> Result<Vec<f64>> {
    match d.rule.thresholds.as_ref() {
        Some(ThresholdSpec::PerNeuron(fs)) => Ok(fs.iter().map(|f| f.eval(t)).collect()),
        Some(ThresholdSpec::AdaptiveDelta { alpha, beta, t_window }) => adaptive_delta(
            *alpha,
            beta,
            *t_window,
            w_now,
            d.xi,
            d.rule.norm,
            t,
            &d.held.sample_time,
        ),
        _ => Err(Error::RuleRejected(
            "decentralized-state rule without per-neuron thresholds".into(),
        )),
    }
}

/// Fire every neuron whose condition already holds at the current instant
/// (this happens right after another neuron's fire shrinks the adaptive
/// thresholds, or when two crossings coincide within the bisection
/// tolerance). Loops until everything is strictly below threshold.
fn fire_already_crossed(d: &mut Driver, centralized: bool) -> Result<()> {
    loop {
        let t = d.state.t;
        if centralized {
            match check_state_centralized(d.rule, d.xi, &d.state.w, &d.held.w, t)? {
                StateCheck::Crossing => {
                    let e: Vec<f64> =
                        d.held.w.iter().zip(&d.state.w).map(|(h, w)| h - w).collect();
                    let err = weighted_norm(&e, d.xi, d.rule.norm)?;
                    d.push_event(EventKind::TriggerCentralized, err)?;
                    d.resample_all();
                    continue;
                }
                StateCheck::Below => return Ok(()),
            }
        }
        let thr = state_thresholds(d, t, &d.state.w)?;
        let crossed = (0..d.n()).find(|i| {
            let err = (d.held.w[*i] - d.state.w[*i]).abs();
            err >= thr[*i] && err > 0.0
        });
        match crossed {
            Some(i) => {
                let err = (d.held.w[i] - d.state.w[i]).abs();
                d.push_event(EventKind::TriggerNeuron(i), err)?;
                d.resample_one(i);
            }
            None => return Ok(()),
        }
    }
}

/// Detect a crossing in (t1, t2] on the candidate step and refine it. For
/// the decentralized rule every crossed neuron is bisected and the earliest
/// wins. Returns (t*, neuron, error value at t*).
fn earliest_state_crossing(
    d: &Driver,
    centralized: bool,
    w_at: &impl Fn(f64) -> Vec<f64>,
    t1: f64,
    t2: f64,
) -> Result<Option<(f64, usize, f64)>> {
    let tol = d.cfg.crossing_tol;
    if centralized {
        let err_at = |tau: f64| -> f64 {
            let w = w_at(tau);
            let e: Vec<f64> = d.held.w.iter().zip(&w).map(|(h, w)| h - w).collect();
            weighted_norm(&e, d.xi, d.rule.norm).expect("dimensions fixed")
        };
        let phi = match d.rule.thresholds.as_ref() {
            Some(ThresholdSpec::Global(f)) => f.clone(),
            _ => {
                return Err(Error::RuleRejected(
                    "centralized-state rule without a global threshold".into(),
                ))
            }
        };
        let e2 = err_at(t2);
        if !(e2 >= phi.eval(t2) && e2 > 0.0) {
            return Ok(None);
        }
        let t_star = refine_crossing(|tau| err_at(tau) - phi.eval(tau), 0.0, t1, t2, tol)?;
        return Ok(Some((t_star, usize::MAX, err_at(t_star))));
    }
    let w2 = w_at(t2);
    let thr2 = state_thresholds(d, t2, &w2)?;
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..d.n() {
        let err2 = (d.held.w[i] - w2[i]).abs();
        if !(err2 >= thr2[i] && err2 > 0.0) {
            continue;
        }
        let f = |tau: f64| -> f64 {
            let w = w_at(tau);
            let err = (d.held.w[i] - w[i]).abs();
            let thr = state_thresholds(d, tau, &w).expect("thresholds fixed");
            err - thr[i]
        };
        let t_star = refine_crossing(f, 0.0, t1, t2, tol)?;
        if best.is_none() || t_star < best.unwrap().0 {
            let err = (d.held.w[i] - w_at(t_star)[i]).abs();
            best = Some((t_star, i, err));
        }
    }
    Ok(best)
}
