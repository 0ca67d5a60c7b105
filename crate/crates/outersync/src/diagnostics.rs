//! Post-run audits of simulation traces: error decay, per-trigger
//! contraction, inter-event (Zeno) statistics, exponential-rate fits, and
//! the Gronwall envelope for the state-dependent rules.
//!
//! Everything here is a pure function of the trace, so reports are
//! reproducible bit-for-bit from a stored run.

use serde::Serialize;

use crate::analysis::{weighted_norm, BoundSet, NormKind, Weights};
use crate::engine::SimulationTrace;
use crate::triggers::{Protocol, ThresholdSpec, TriggerRule};
use crate::{Error, Result};

/// Weighted synchronization-error norm at every stored snapshot.
pub fn sync_error_series(
    trace: &SimulationTrace,
    xi: &Weights,
    kind: NormKind,
) -> Result<Vec<(f64, f64)>> {
    if trace.snapshots.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    trace
        .snapshots
        .iter()
        .map(|s| Ok((s.t, weighted_norm(&s.w, xi, kind)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Checked,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub status: CheckStatus,
    /// Ratio bound being enforced, 1 - eps.
    pub threshold: f64,
    /// Time of each compared pair's right endpoint.
    pub times: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: Option<f64>,
    pub pass: bool,
}

fn norm_at_event(trace: &SimulationTrace, t: f64, xi: &Weights, kind: NormKind) -> Result<f64> {
    let snap = trace
        .snapshot_at(t)
        .ok_or_else(|| Error::Trace(format!("no snapshot stored at event time {t}")))?;
    weighted_norm(&snap.w, xi, kind)
}

/// Per-trigger contraction audit for the structure rules.
///
/// Centralized traces compare the weighted difference norm at consecutive
/// trigger instants directly: the rule design forces each such ratio to at
/// most 1 - eps. Decentralized triggers are per-neuron and can sit
/// microseconds apart with the norm still in transient growth, so
/// consecutive-event ratios are meaningless there; instead the events are
/// grouped into rounds of width 2*eps_d/eps0 (the worst-case span in which
/// every neuron must refresh) and the round anchors are compared. A
/// state-rule trace gets `NotApplicable`.
pub fn contraction_check(
    trace: &SimulationTrace,
    xi: &Weights,
    kind: NormKind,
    eps: f64,
) -> Result<ContractionReport> {
    let threshold = 1.0 - eps;
    if !trace.rule.protocol.is_structure() {
        return Ok(ContractionReport {
            status: CheckStatus::NotApplicable,
            threshold,
            times: Vec::new(),
            ratios: Vec::new(),
            max_ratio: None,
            pass: true,
        });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps = {eps} outside (0, 1)")));
    }
    let mut anchors: Vec<f64> = Vec::new();
    match trace.rule.protocol {
        Protocol::CentralizedStructure => {
            anchors.extend(trace.trigger_events().map(|e| e.t));
        }
        Protocol::DecentralizedStructure => {
            let span = 2.0 * trace.rule.eps_d / trace.rule.eps0;
            if !(span > 0.0) {
                return Err(Error::Domain(
                    "decentralized round span needs eps_d > 0 and eps0 > 0".into(),
                ));
            }
            for e in trace.trigger_events() {
                if anchors.last().map_or(true, |last| e.t >= last + span) {
                    anchors.push(e.t);
                }
            }
        }
        _ => unreachable!(),
    }
    let mut times = Vec::new();
    let mut ratios = Vec::new();
    for pair in anchors.windows(2) {
        let before = norm_at_event(trace, pair[0], xi, kind)?;
        let after = norm_at_event(trace, pair[1], xi, kind)?;
        if before == 0.0 {
            continue; // identical trajectories; nothing to contract
        }
        times.push(pair[1]);
        ratios.push(after / before);
    }
    let max_ratio = ratios.iter().copied().reduce(f64::max);
    let pass = max_ratio.map_or(true, |m| m <= threshold * (1.0 + 1e-9));
    Ok(ContractionReport {
        status: CheckStatus::Checked,
        threshold,
        times,
        ratios,
        max_ratio,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EventStats {
    pub per_neuron_counts: Vec<usize>,
    pub min_gap: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    /// Positive for structure rules (eps_c/N or eps_d/Lambda); zero for the
    /// state rules, where only strict positivity is asserted.
    pub theoretical_lower_bound: f64,
}

/// Inter-event statistics and the Zeno lower-bound audit. Gaps are taken
/// between consecutive triggers of the same neuron (centralized triggers
/// resample everyone, so all neurons share the global gap list there).
pub fn zeno_check(
    trace: &SimulationTrace,
    bounds: &BoundSet,
    rule: &TriggerRule,
) -> Result<EventStats> {
    let per_times = trace.trigger_times_per_neuron();
    let per_counts: Vec<usize> = per_times.iter().map(|v| v.len()).collect();
    let mut gaps: Vec<f64> = Vec::new();
    if rule.protocol.is_decentralized() {
        // Per-neuron gaps. Prescribed state thresholds can sit far above a
        // neuron's error for the whole horizon, so neurons with fewer than
        // two triggers simply contribute no gaps.
        for v in &per_times {
            gaps.extend(v.windows(2).map(|p| p[1] - p[0]));
        }
        if gaps.is_empty() {
            return Err(Error::Trace(
                "no neuron triggered twice; gap statistics are undefined".into(),
            ));
        }
    } else {
        let first = per_times.first().cloned().unwrap_or_default();
        if first.len() < 2 {
            return Err(Error::Trace(format!(
                "{} trigger(s) in trace; need at least 2 for gap statistics",
                first.len()
            )));
        }
        gaps.extend(first.windows(2).map(|p| p[1] - p[0]));
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if min_gap <= 0.0 {
        return Err(Error::Trace(format!(
            "non-positive inter-event gap {min_gap}; trace is corrupt"
        )));
    }
    let theoretical_lower_bound = match rule.protocol {
        // per-neuron integrands are bounded by N = sup mu, so accumulating
        // eps_c takes at least eps_c/N; the push rule's monitored integral
        // grows no faster than the amplification bound Lambda
        Protocol::CentralizedStructure => rule.eps_c / bounds.mu_max,
        Protocol::DecentralizedStructure => rule.eps_d / bounds.lambda,
        Protocol::CentralizedState | Protocol::DecentralizedState => 0.0,
    };
    if min_gap < theoretical_lower_bound * (1.0 - 1e-12) {
        return Err(Error::Trace(format!(
            "min gap {min_gap} fell below the guaranteed bound {theoretical_lower_bound}"
        )));
    }
    Ok(EventStats {
        per_neuron_counts: per_counts,
        min_gap,
        mean_gap,
        max_gap,
        theoretical_lower_bound,
    })
}

/// Least-squares fit of log(value) against t over [t_lo, t_hi]. Returns
/// (slope, r_squared). Non-positive values (floating-point floor at the
/// tail of a decay) are dropped; at least 3 usable points are required.
pub fn rate_fit_window(series: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Result<(f64, f64)> {
    // trim the trailing underflow plateau, then keep positive points in window
    let mut end = series.len();
    while end > 0 && series[end - 1].1 <= 0.0 {
        end -= 1;
    }
    let pts: Vec<(f64, f64)> = series[..end]
        .iter()
        .filter(|(t, v)| *t >= t_lo && *t <= t_hi && *v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Domain(format!(
            "only {} usable points in [{t_lo}, {t_hi}]; need at least 3 for a rate fit",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::Domain("all points share one time; cannot fit".into()));
    }
    let slope = sxy / sxx;
    let sst = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
    let sse = pts
        .iter()
        .map(|p| (p.1 - (my + slope * (p.0 - mt))).powi(2))
        .sum::<f64>();
    let r2 = if sst == 0.0 { 1.0 } else { 1.0 - sse / sst };
    Ok((slope, r2))
}

/// [`rate_fit_window`] over the middle 80% of the series span, skipping the
/// initial transient and the floating-point floor at the end.
pub fn rate_fit(series: &[(f64, f64)]) -> Result<(f64, f64)> {
    let (t0, t1) = match (series.first(), series.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::Domain("empty series".into())),
    };
    let span = t1 - t0;
    rate_fit_window(series, t0 + 0.1 * span, t1 - 0.1 * span)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub status: CheckStatus,
    pub slack: f64,
    /// Worst value of ||w(t)|| - envelope(t) - slack over the grid
    /// (negative numbers mean margin everywhere).
    pub max_violation: f64,
    pub violations: usize,
}

/// Aggregate the per-neuron thresholds into a bound on the weighted error
/// norm: |e_i| <= psi_i pointwise implies these norm bounds.
fn aggregate_thresholds(psi: &[f64], xi: &Weights, kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => psi.iter().enumerate().map(|(i, p)| xi[i] * p).sum(),
        NormKind::L2 => psi
            .iter()
            .enumerate()
            .map(|(i, p)| xi[i] * p * p)
            .sum::<f64>()
            .sqrt(),
        NormKind::LInf => psi
            .iter()
            .enumerate()
            .map(|(i, p)| p / xi[i])
            .fold(0.0, f64::max),
    }
}

/// Adaptive Simpson quadrature to (tight) relative tolerance; integrands
/// here are smooth threshold-family curves times an exponential.
fn simpson_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (left, flm) = simpson(f, a, fa, m, fm);
        let (right, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, frm, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, fm) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    recurse(f, a, fa, b, fb, whole, fm, tol, 40)
}

/// Gronwall-type decay envelope for the state-dependent rules:
///
///   ||w(t)|| <= e^{-mu t} ||w(0)|| + Lambda * int_0^t e^{-mu (t-s)} Phi(s) ds
///
/// checked pointwise on the snapshot grid with absolute slack. `mu` is the
/// uniform rate bounds.mu_min — a lower bound on the active mode's rate at
/// every time, so the envelope stays valid without needing the switching
/// schedule; the integral accumulates segment-by-segment in rescaled form
/// (no large exponentials are ever formed). Adaptive-delta thresholds have
/// no fixed threshold curve and report `NotApplicable`.
pub fn envelope_check(
    trace: &SimulationTrace,
    xi: &Weights,
    kind: NormKind,
    threshold: &ThresholdSpec,
    bounds: &BoundSet,
) -> Result<EnvelopeReport> {
    if trace.rule.protocol.is_structure() {
        return Err(Error::RuleRejected(
            "envelope check applies to state-rule traces only".into(),
        ));
    }
    let slack = 1e-6;
    let phi_of: Box<dyn Fn(f64) -> f64> = match threshold {
        ThresholdSpec::Global(f) => {
            let f = f.clone();
            Box::new(move |t| f.eval(t))
        }
        ThresholdSpec::PerNeuron(fs) => {
            let fs = fs.clone();
            let xi = xi.clone();
            Box::new(move |t| {
                let psi: Vec<f64> = fs.iter().map(|f| f.eval(t)).collect();
                aggregate_thresholds(&psi, &xi, kind)
            })
        }
        ThresholdSpec::AdaptiveDelta { .. } => {
            return Ok(EnvelopeReport {
                status: CheckStatus::NotApplicable,
                slack,
                max_violation: f64::NEG_INFINITY,
                violations: 0,
            })
        }
    };
    if trace.snapshots.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    let mu = bounds.mu_min;
    if !(mu > 0.0) {
        return Err(Error::Domain(format!(
            "envelope needs a positive contraction rate, got mu_min = {mu}"
        )));
    }
    let lambda = bounds.lambda;
    let mut envelope = weighted_norm(&trace.snapshots[0].w, xi, kind)?;
    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for pair in trace.snapshots.windows(2) {
        let (t0, t1) = (pair[0].t, pair[1].t);
        // envelope(t1) = e^{-mu dt} envelope(t0)
        //             + Lambda * int_{t0}^{t1} e^{-mu (t1-s)} Phi(s) ds
        let local = simpson_adaptive(&|s| (-mu * (t1 - s)).exp() * phi_of(s), t0, t1, 1e-10);
        envelope = (-mu * (t1 - t0)).exp() * envelope + lambda * local;
        let value = weighted_norm(&pair[1].w, xi, kind)?;
        let viol = value - envelope - slack;
        if viol > max_violation {
            max_violation = viol;
        }
        if viol > 0.0 {
            violations += 1;
        }
    }
    Ok(EnvelopeReport {
        status: CheckStatus::Checked,
        slack,
        max_violation,
        violations,
    })
}

/// Containment audit for criterion-style checks: worst value of
/// ||held_w - w||(t) - Phi(t) over the snapshot grid, where Phi is the
/// aggregated threshold. Detection lag can leave the error above the
/// threshold for at most one micro step, so callers compare against a
/// micro-step-sized slack.
pub fn containment_audit(
    trace: &SimulationTrace,
    xi: &Weights,
    kind: NormKind,
    threshold: &ThresholdSpec,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for s in &trace.snapshots {
        let e: Vec<f64> = s.held_w.iter().zip(&s.w).map(|(h, w)| h - w).collect();
        let err = weighted_norm(&e, xi, kind)?;
        let phi = match threshold {
            ThresholdSpec::Global(f) => f.eval(s.t),
            ThresholdSpec::PerNeuron(fs) => {
                let psi: Vec<f64> = fs.iter().map(|f| f.eval(s.t)).collect();
                aggregate_thresholds(&psi, xi, kind)
            }
            ThresholdSpec::AdaptiveDelta { .. } => {
                return Err(Error::RuleRejected(
                    "containment audit needs a fixed threshold curve".into(),
                ))
            }
        };
        let v = err - phi;
        if v > worst {
            worst = v;
        }
    }
    Ok(worst)
}
