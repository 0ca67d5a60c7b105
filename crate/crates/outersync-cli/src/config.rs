//! Run configuration: a JSON file (or CLI flags merged over one) describing
//! the system, the trigger rule, the norm weights, and the integrator.
//!
//! The schema is documented in the repository README. Validation happens
//! eagerly at load time with field-path error messages ("modes[0].gamma[1]")
//! so a bad config fails before any simulation starts.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use outersync::analysis::{solve_xi, FeasibilityReport, FeasibilityStatus, NormKind, Weights};
use outersync::engine::IntegratorConfig;
use outersync::model::{
    poisson_schedule, seeded_initial_pair, ActivationSpec, Mode, SwitchSchedule, SwitchingSystem,
};
use outersync::presets::{builtin_preset, Preset};
use outersync::triggers::{Protocol, ThresholdFn, ThresholdSpec, TriggerRule};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Built-in preset name; mutually exclusive with inline `modes`.
    pub preset: Option<String>,
    pub modes: Option<Vec<ModeCfg>>,
    pub activation: Option<ActivationCfg>,
    pub schedule: Option<ScheduleCfg>,
    pub rule: RuleCfg,
    /// Explicit norm weights; exactly one of `xi` / `solve_xi` may be set.
    pub xi: Option<Vec<f64>>,
    /// Solve for feasible weights with this eps0 target.
    pub solve_xi: Option<f64>,
    pub u0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub integrator: IntegratorCfg,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCfg {
    pub gamma: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationCfg {
    pub kind: String,
    #[serde(default)]
    pub slope: Option<Vec<f64>>,
    #[serde(default)]
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleCfg {
    /// Poisson switching rate (draws a schedule from the seed) ...
    pub lambda: Option<f64>,
    /// ... or an explicit schedule.
    pub breakpoints: Option<Vec<f64>>,
    pub mode_index: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleCfg {
    pub protocol: String,
    pub norm: String,
    pub eps_c: Option<f64>,
    pub eps_d: Option<f64>,
    pub eps0: Option<f64>,
    pub thresholds: Option<ThresholdCfg>,
}

impl Default for RuleCfg {
    fn default() -> Self {
        RuleCfg {
            protocol: "centralized-structure".into(),
            norm: "l1".into(),
            eps_c: None,
            eps_d: None,
            eps0: None,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdCfg {
    /// A named bundle, e.g. "sec6-thresholds" or "adaptive".
    Named(String),
    /// One global curve (centralized rule).
    Single(ThresholdFamilyCfg),
    /// One curve per neuron (decentralized rule).
    PerNeuron(Vec<ThresholdFamilyCfg>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum ThresholdFamilyCfg {
    #[serde(rename = "rational-decay")]
    RationalDecay { c: f64, a: f64, b: f64, p: f64 },
    #[serde(rename = "exp-gamma")]
    ExpGamma { s: f64, r: f64, q: f64, d: f64 },
    #[serde(rename = "adaptive-delta")]
    AdaptiveDelta { alpha: f64, beta: Vec<f64>, t_window: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorCfg {
    pub micro_step: f64,
    pub crossing_tol: f64,
    pub oracle_mode: bool,
    pub snapshot_dt: f64,
}

impl Default for IntegratorCfg {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        IntegratorCfg {
            micro_step: d.micro_step,
            crossing_tol: d.crossing_tol,
            oracle_mode: d.oracle_mode,
            snapshot_dt: d.snapshot_dt,
        }
    }
}

impl IntegratorCfg {
    pub fn to_engine(self) -> IntegratorConfig {
        IntegratorConfig {
            micro_step: self.micro_step,
            crossing_tol: self.crossing_tol,
            oracle_mode: self.oracle_mode,
            snapshot_dt: self.snapshot_dt,
            allow_unvalidated: false,
        }
    }
}

/// Parse and validate a config file. Parse failures carry the line/column
/// from the JSON reader; semantic failures carry the offending field path.
pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
        anyhow!(
            "config parse error in {} at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        )
    })?;
    validate_config(&cfg)?;
    Ok(cfg)
}

/// Field-path validation of everything checkable without building the
/// system. Construction performs its own (redundant) invariant checks.
pub fn validate_config(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.preset.is_some() && cfg.modes.is_some() {
        bail!("set either `preset` or inline `modes`, not both");
    }
    if cfg.preset.is_none() && cfg.modes.is_none() {
        bail!("one of `preset` or `modes` is required");
    }
    if cfg.xi.is_some() && cfg.solve_xi.is_some() {
        bail!("exactly one of `xi` and `solve_xi` may be set, found both");
    }
    if let Some(modes) = &cfg.modes {
        if modes.is_empty() {
            bail!("modes: need at least one mode");
        }
        let n = modes[0].gamma.len();
        for (m, mode) in modes.iter().enumerate() {
            if mode.gamma.len() != n {
                bail!("modes[{m}].gamma: expected {n} entries, got {}", mode.gamma.len());
            }
            for (j, g) in mode.gamma.iter().enumerate() {
                if !(*g > 0.0) || !g.is_finite() {
                    bail!("modes[{m}].gamma[{j}]: must be positive and finite, got {g}");
                }
            }
            if mode.a.len() != n {
                bail!("modes[{m}].a: expected {n} rows, got {}", mode.a.len());
            }
            for (i, row) in mode.a.iter().enumerate() {
                if row.len() != n {
                    bail!("modes[{m}].a[{i}]: expected {n} entries, got {}", row.len());
                }
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        bail!("modes[{m}].a[{i}][{j}]: must be finite, got {v}");
                    }
                }
            }
            if mode.input.len() != n {
                bail!("modes[{m}].input: expected {n} entries, got {}", mode.input.len());
            }
            for (j, v) in mode.input.iter().enumerate() {
                if !v.is_finite() {
                    bail!("modes[{m}].input[{j}]: must be finite, got {v}");
                }
            }
        }
        if cfg.activation.is_none() {
            bail!("activation: required with inline modes");
        }
        if cfg.schedule.is_none() && modes.len() > 1 {
            bail!("schedule: required when more than one mode is given");
        }
    }
    if let Some(sch) = &cfg.schedule {
        let explicit = sch.breakpoints.is_some() || sch.mode_index.is_some();
        if sch.lambda.is_some() && explicit {
            bail!("schedule: set either `lambda` or breakpoints/mode_index, not both");
        }
        if sch.breakpoints.is_some() != sch.mode_index.is_some() {
            bail!("schedule: breakpoints and mode_index must be given together");
        }
    }
    if let Some(x) = &cfg.xi {
        for (i, v) in x.iter().enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                bail!("xi[{i}]: must be positive and finite, got {v}");
            }
        }
    }
    if let Some(e) = cfg.solve_xi {
        if !(e > 0.0) {
            bail!("solve_xi: eps0 target must be positive, got {e}");
        }
    }
    if let Some(h) = cfg.horizon {
        if !(h > 0.0) {
            bail!("horizon: must be positive, got {h}");
        }
    }
    Ok(())
}

/// Everything a simulation run needs, resolved from a validated config.
#[derive(Debug)]
pub struct Resolved {
    pub system: SwitchingSystem,
    pub preset: Option<Preset>,
    pub rule: TriggerRule,
    pub xi: Weights,
    pub solved: Option<FeasibilityReport>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub out_dir: PathBuf,
    /// The fully resolved config, echoed into every artifact.
    pub echo: RunConfig,
}

fn family_to_fn(f: &ThresholdFamilyCfg) -> anyhow::Result<ThresholdFn> {
    let t = match *f {
        ThresholdFamilyCfg::RationalDecay { c, a, b, p } => {
            ThresholdFn::RationalDecay { c, a, b, p }
        }
        ThresholdFamilyCfg::ExpGamma { s, r, q, d } => ThresholdFn::ExpGamma { s, r, q, d },
        ThresholdFamilyCfg::AdaptiveDelta { .. } => {
            bail!("adaptive-delta is a rule-level threshold spec, not a single curve")
        }
    };
    t.validate()?;
    Ok(t)
}

fn resolve_thresholds(
    cfg: Option<&ThresholdCfg>,
    protocol: Protocol,
    preset: Option<&Preset>,
    n: usize,
) -> anyhow::Result<Option<ThresholdSpec>> {
    use outersync::presets::{sec6_global_threshold, sec6_per_neuron_thresholds};
    let spec = match (cfg, protocol) {
        (None, Protocol::CentralizedStructure | Protocol::DecentralizedStructure) => None,
        (Some(_), Protocol::CentralizedStructure | Protocol::DecentralizedStructure) => {
            bail!("rule.thresholds: structure rules take no thresholds")
        }
        // state rules default to the shipped curves on the 5-neuron preset
        (None, Protocol::CentralizedState) if n == 5 => {
            Some(ThresholdSpec::Global(sec6_global_threshold()))
        }
        (None, Protocol::DecentralizedState) if n == 5 => {
            Some(ThresholdSpec::PerNeuron(sec6_per_neuron_thresholds()))
        }
        (None, _) => bail!(
            "rule.thresholds: required for state rules (no default curve fits n = {n})"
        ),
        (Some(ThresholdCfg::Named(name)), p) => match (name.as_str(), p) {
            ("sec6-thresholds", Protocol::CentralizedState) => {
                Some(ThresholdSpec::Global(sec6_global_threshold()))
            }
            ("sec6-thresholds", Protocol::DecentralizedState) => {
                Some(ThresholdSpec::PerNeuron(sec6_per_neuron_thresholds()))
            }
            ("adaptive", Protocol::DecentralizedState) => {
                let preset = preset.ok_or_else(|| {
                    anyhow!("rule.thresholds: \"adaptive\" needs a preset for its parameters")
                })?;
                Some(preset.adaptive_thresholds())
            }
            ("adaptive", _) => bail!(
                "rule.thresholds: \"adaptive\" applies to the decentralized-state rule only"
            ),
            (other, _) => bail!(
                "rule.thresholds: unknown bundle {other:?} (known: sec6-thresholds, adaptive)"
            ),
        },
        (Some(ThresholdCfg::Single(f)), Protocol::CentralizedState) => match f {
            ThresholdFamilyCfg::AdaptiveDelta { .. } => {
                bail!("rule.thresholds: adaptive-delta applies to the decentralized rule only")
            }
            _ => Some(ThresholdSpec::Global(family_to_fn(f)?)),
        },
        (Some(ThresholdCfg::Single(f)), Protocol::DecentralizedState) => match *f {
            ThresholdFamilyCfg::AdaptiveDelta { alpha, ref beta, t_window } => {
                Some(ThresholdSpec::AdaptiveDelta { alpha, beta: beta.clone(), t_window })
            }
            _ => bail!(
                "rule.thresholds: the decentralized-state rule needs one curve per neuron \
                 (a list) or an adaptive-delta spec"
            ),
        },
        (Some(ThresholdCfg::PerNeuron(fs)), Protocol::DecentralizedState) => {
            if fs.len() != n {
                bail!("rule.thresholds: expected {n} curves, got {}", fs.len());
            }
            let curves = fs.iter().map(family_to_fn).collect::<anyhow::Result<Vec<_>>>()?;
            Some(ThresholdSpec::PerNeuron(curves))
        }
        (Some(ThresholdCfg::PerNeuron(_)), Protocol::CentralizedState) => {
            bail!("rule.thresholds: the centralized-state rule takes a single global curve")
        }
    };
    Ok(spec)
}

/// Build the run from a validated config: system, rule, weights (solving
/// for them if requested), initial pair, and output directory. The returned
/// echo has every defaulted field filled in.
pub fn resolve(cfg: &RunConfig) -> anyhow::Result<Resolved> {
    validate_config(cfg)?;
    let seed = cfg.seed.unwrap_or(7);

    // --- system ---------------------------------------------------------
    let (system, preset) = if let Some(name) = &cfg.preset {
        let preset = builtin_preset(name)?;
        let horizon = cfg.horizon.unwrap_or(preset.horizon);
        let schedule = match &cfg.schedule {
            Some(ScheduleCfg { breakpoints: Some(bp), mode_index: Some(mi), .. }) => {
                SwitchSchedule::new(bp.clone(), mi.clone(), horizon)?
            }
            Some(ScheduleCfg { lambda: Some(l), .. }) => {
                poisson_schedule(*l, horizon, preset.modes.len(), seed)?
            }
            _ => poisson_schedule(preset.switch_lambda, horizon, preset.modes.len(), seed)?,
        };
        (preset.system_with_schedule(schedule)?, Some(preset))
    } else {
        let modes_cfg = cfg.modes.as_ref().expect("validated");
        let n = modes_cfg[0].gamma.len();
        let modes = modes_cfg
            .iter()
            .map(|m| Mode::new(m.gamma.clone(), m.a.clone(), m.input.clone()))
            .collect::<outersync::Result<Vec<_>>>()?;
        let act_cfg = cfg.activation.as_ref().expect("validated");
        let activation = match act_cfg.kind.as_str() {
            "sigmoid" => ActivationSpec::sigmoid(n),
            "piecewise-linear" => {
                let slope = act_cfg
                    .slope
                    .clone()
                    .ok_or_else(|| anyhow!("activation.slope: required for piecewise-linear"))?;
                let limit = act_cfg
                    .limit
                    .ok_or_else(|| anyhow!("activation.limit: required for piecewise-linear"))?;
                ActivationSpec::piecewise_linear(slope, limit)?
            }
            other => bail!("activation.kind: unknown kind {other:?}"),
        };
        let horizon = cfg.horizon.unwrap_or(500.0);
        let schedule = match &cfg.schedule {
            Some(ScheduleCfg { breakpoints: Some(bp), mode_index: Some(mi), .. }) => {
                SwitchSchedule::new(bp.clone(), mi.clone(), horizon)?
            }
            Some(ScheduleCfg { lambda: Some(l), .. }) => {
                poisson_schedule(*l, horizon, modes.len(), seed)?
            }
            _ => SwitchSchedule::new(vec![0.0], vec![0], horizon)?,
        };
        (SwitchingSystem::new(modes, schedule, activation)?, None)
    };
    let n = system.n;

    // --- rule -----------------------------------------------------------
    let protocol: Protocol = cfg.rule.protocol.parse()?;
    let norm: NormKind = cfg.rule.norm.parse()?;
    let rec = preset.as_ref().map(|p| p.recommended.clone());
    let eps_c = cfg.rule.eps_c.or(rec.as_ref().map(|r| r.eps_c)).unwrap_or(0.01);
    let eps_d = cfg.rule.eps_d.or(rec.as_ref().map(|r| r.eps_d)).unwrap_or(0.02);
    let eps0 = cfg
        .rule
        .eps0
        .or(cfg.solve_xi)
        .or(rec.as_ref().map(|r| r.eps0_target))
        .unwrap_or(0.01);
    let thresholds = resolve_thresholds(cfg.rule.thresholds.as_ref(), protocol, preset.as_ref(), n)?;
    let rule = match protocol {
        Protocol::CentralizedStructure => TriggerRule::centralized_structure(norm, eps_c, eps0)?,
        Protocol::DecentralizedStructure => TriggerRule::decentralized_structure(norm, eps_d, eps0)?,
        Protocol::CentralizedState => match thresholds.clone() {
            Some(ThresholdSpec::Global(f)) => TriggerRule::centralized_state(norm, f)?,
            _ => bail!("rule.thresholds: the centralized-state rule needs a global curve"),
        },
        Protocol::DecentralizedState => {
            let spec = thresholds.clone().expect("resolved above");
            TriggerRule::decentralized_state(norm, spec)?
        }
    };

    // --- weights --------------------------------------------------------
    let (xi, solved) = if let Some(x) = &cfg.xi {
        if x.len() != n {
            bail!("xi: expected {n} entries, got {}", x.len());
        }
        (Weights::new(x.clone())?, None)
    } else {
        let target = cfg
            .solve_xi
            .or(rec.as_ref().map(|r| r.eps0_target))
            .unwrap_or(0.01);
        let report = solve_xi(&system, norm, target)?;
        match report.status {
            FeasibilityStatus::Feasible => {
                let xi = report.xi.clone().expect("feasible report carries weights");
                (xi, Some(report))
            }
            _ => bail!(
                "no feasible norm weights for {} at eps0 = {target}: {}",
                rule.norm.as_str(),
                report.certificate
            ),
        }
    };

    // --- initial pair ---------------------------------------------------
    let (u0, v0) = match (&cfg.u0, &cfg.v0) {
        (Some(u), Some(v)) => (u.clone(), v.clone()),
        (None, None) => seeded_initial_pair(n, seed),
        _ => bail!("u0 and v0 must be given together (or both omitted for seeded draws)"),
    };
    if u0.len() != n {
        bail!("u0: expected {n} entries, got {}", u0.len());
    }
    if v0.len() != n {
        bail!("v0: expected {n} entries, got {}", v0.len());
    }

    let out_dir = out_dir_from(cfg.out.as_deref());

    // echo with defaults filled in
    let mut echo = cfg.clone();
    echo.seed = Some(seed);
    echo.horizon = Some(system.horizon());
    echo.u0 = Some(u0.clone());
    echo.v0 = Some(v0.clone());
    echo.rule.eps_c = Some(eps_c);
    echo.rule.eps_d = Some(eps_d);
    echo.rule.eps0 = Some(eps0);
    echo.out = Some(out_dir.clone());
    if echo.xi.is_none() {
        echo.xi = Some(xi.xi().to_vec());
        echo.solve_xi = None; // record the weights actually used
    }

    Ok(Resolved {
        system,
        preset,
        rule,
        xi,
        solved,
        u0,
        v0,
        seed,
        integrator: cfg.integrator.to_engine(),
        out_dir,
        echo,
    })
}

/// Output directory resolution: OUTERSYNC_OUT env overrides --out/config,
/// which override the default "out".
pub fn out_dir_from(flag: Option<&Path>) -> PathBuf {
    if let Ok(env) = std::env::var("OUTERSYNC_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}
