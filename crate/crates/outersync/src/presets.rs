//! Built-in network presets, embedded as JSON so runs are reproducible
//! without external data files.
//!
//! Two presets ship with the crate: a five-neuron sigmoid network switching
//! among six coefficient sets ("sec6-5neuron", the simulation workload) and
//! a two-neuron piecewise-linear network with two coefficient sets
//! ("sec31-2neuron", the feasibility worked example).

use serde::Deserialize;

use crate::model::{ActivationSpec, Mode, SwitchSchedule, SwitchingSystem};
use crate::triggers::{ThresholdFn, ThresholdSpec};
use crate::{Error, Result};

const SEC6_JSON: &str = include_str!("../data/sec6_5neuron.json");
const SEC31_JSON: &str = include_str!("../data/sec31_2neuron.json");

#[derive(Debug, Deserialize)]
struct RawPreset {
    name: String,
    n: usize,
    activation: RawActivation,
    switching: RawSwitching,
    horizon: f64,
    recommended: Recommended,
    modes: Vec<RawMode>,
}

#[derive(Debug, Deserialize)]
struct RawActivation {
    kind: String,
    #[serde(default)]
    slope: Option<Vec<f64>>,
    #[serde(default)]
    limit: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawSwitching {
    lambda: f64,
}

#[derive(Debug, Deserialize)]
struct RawMode {
    gamma: Vec<f64>,
    a: Vec<Vec<f64>>,
    input: Vec<f64>,
}

/// Margin and threshold parameters the preset was tuned with.
#[derive(Debug, Clone, Deserialize)]
pub struct Recommended {
    pub eps_c: f64,
    pub eps_d: f64,
    pub eps0_target: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub t_window: f64,
}

/// A fully validated preset: coefficient sets, activation, switching rate,
/// horizon, and the tuned rule parameters.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub n: usize,
    pub activation: ActivationSpec,
    pub switch_lambda: f64,
    pub horizon: f64,
    pub recommended: Recommended,
    pub modes: Vec<Mode>,
}

impl Preset {
    /// Build the switched system with a fresh Poisson schedule from `seed`.
    pub fn system(&self, seed: u64) -> Result<SwitchingSystem> {
        let schedule = crate::model::poisson_schedule(
            self.switch_lambda,
            self.horizon,
            self.modes.len(),
            seed,
        )?;
        self.system_with_schedule(schedule)
    }

    pub fn system_with_schedule(&self, schedule: SwitchSchedule) -> Result<SwitchingSystem> {
        SwitchingSystem::new(self.modes.clone(), schedule, self.activation.clone())
    }

    /// The adaptive-threshold parameters this preset was tuned with.
    pub fn adaptive_thresholds(&self) -> ThresholdSpec {
        ThresholdSpec::AdaptiveDelta {
            alpha: self.recommended.alpha,
            beta: self.recommended.beta.clone(),
            t_window: self.recommended.t_window,
        }
    }
}

fn parse_preset(json: &str) -> Result<Preset> {
    let raw: RawPreset = serde_json::from_str(json)
        .map_err(|e| Error::Validation(format!("embedded preset is malformed: {e}")))?;
    let activation = match raw.activation.kind.as_str() {
        "sigmoid" => ActivationSpec::sigmoid(raw.n),
        "piecewise-linear" => {
            let slope = raw.activation.slope.ok_or_else(|| {
                Error::Validation("piecewise-linear activation needs slopes".into())
            })?;
            let limit = raw.activation.limit.ok_or_else(|| {
                Error::Validation("piecewise-linear activation needs a limit".into())
            })?;
            ActivationSpec::piecewise_linear(slope, limit)?
        }
        other => {
            return Err(Error::Validation(format!(
                "unknown activation kind {other:?} in preset"
            )))
        }
    };
    let modes = raw
        .modes
        .into_iter()
        .map(|m| Mode::new(m.gamma, m.a, m.input))
        .collect::<Result<Vec<_>>>()?;
    if modes.iter().any(|m| m.n() != raw.n) {
        return Err(Error::Validation("preset mode dimensions disagree with n".into()));
    }
    if raw.recommended.beta.len() != raw.n {
        return Err(Error::Dimension { expected: raw.n, got: raw.recommended.beta.len() });
    }
    Ok(Preset {
        name: raw.name,
        n: raw.n,
        activation,
        switch_lambda: raw.switching.lambda,
        horizon: raw.horizon,
        recommended: raw.recommended,
        modes,
    })
}

pub const PRESET_NAMES: [&str; 2] = ["sec6-5neuron", "sec31-2neuron"];

/// Load a built-in preset by name.
pub fn builtin_preset(name: &str) -> Result<Preset> {
    match name {
        "sec6-5neuron" => parse_preset(SEC6_JSON),
        "sec31-2neuron" => parse_preset(SEC31_JSON),
        other => Err(Error::Validation(format!(
            "unknown preset {other:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Global threshold curve tuned for the five-neuron preset's centralized
/// state rule: Phi(t) = 8000 / (0.0065 t + 6.5)^5, so Phi(0) ~ 0.6895 and
/// Phi decays five-fold-polynomially past t ~ 1000.
pub fn sec6_global_threshold() -> ThresholdFn {
    ThresholdFn::RationalDecay { c: 8000.0, a: 0.0065, b: 6.5, p: 5.0 }
}

/// Per-neuron threshold curves tuned for the five-neuron preset's
/// decentralized state rule. Neuron 4 uses the exp-gamma family
/// (Psi_4(0) = 100 e^{-1} / 700 ~ 0.0526); the rest are rational decays.
pub fn sec6_per_neuron_thresholds() -> Vec<ThresholdFn> {
    vec![
        ThresholdFn::RationalDecay { c: 27000.0, a: 0.007, b: 0.68, p: 6.0 },
        ThresholdFn::RationalDecay { c: 90000.0, a: 0.01, b: 1.27, p: 6.0 },
        ThresholdFn::RationalDecay { c: 80000.0, a: 0.012, b: 1.02, p: 6.0 },
        ThresholdFn::ExpGamma { s: 100.0, r: 0.01, q: 1.0, d: 700.0 },
        ThresholdFn::RationalDecay { c: 2100.0, a: 0.005, b: 0.5, p: 6.0 },
    ]
}
