//! Strict JSON run configuration.
//!
//! ```json
//! {
//!   "nonlinearity": { "family": "pokhozhaev", "C1": 1.0, "C2": 1.0 },
//!   "initial_data": { "dimension": 1, "epsilon": 0.3, "random": { "cutoff": 16, "decay": 2.0 } },
//!   "integrator": { "rel_tol": 1e-10 },
//!   "experiment": { "t_end": 50.0 },
//!   "output": { "dir": "out" },
//!   "seed": 42
//! }
//! ```
//!
//! `nonlinearity` and `initial_data` are required; everything else has a
//! default. Unknown keys anywhere are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{OracleSettings, Setup, SweepSettings, Tolerances};
use crate::integrator::IntegratorConfig;
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{ExplicitMode, InitialDataSpec};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_T_END: f64 = 10.0;
pub const DEFAULT_DERIVATIVE_STEP: f64 = 1e-5;

/// `s = 0.1, 0.2, …, 2.0`.
pub fn default_derivative_grid() -> Vec<f64> {
    (1..=20).map(|j| j as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Pokhozhaev,
    AffinePlus,
    PowerAlpha,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub family: FamilyName,
    #[serde(rename = "C1", default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(rename = "C2", default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub k: Vec<u32>,
    pub c: f64,
    #[serde(default)]
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSection {
    pub cutoff: u32,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSection {
    #[serde(default = "one")]
    pub dimension: usize,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<ModeEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSection>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: Option<u64>,
    pub method_order: Option<u32>,
    pub sample_every: Option<u64>,
    pub output_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    pub pokhozhaev: Option<f64>,
    pub first_order: Option<f64>,
    pub identity: Option<f64>,
    pub quadrature: Option<f64>,
    pub zero_crossing: Option<f64>,
    pub oracle: Option<f64>,
    pub derivative: Option<f64>,
    pub inequality_slack: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub t_end: Option<f64>,
    #[serde(default)]
    pub tolerances: TolerancesSection,
    pub eps_list: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub cap_mult: Option<f64>,
    pub eps0: Option<f64>,
    pub threads: Option<usize>,
    pub derivative_grid: Option<Vec<f64>>,
    pub derivative_step: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    nonlinearity: NonlinearitySection,
    initial_data: InitialDataSection,
    #[serde(default)]
    integrator: IntegratorSection,
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    output: OutputSection,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Experiment settings with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSettings {
    pub t_end: f64,
    pub tolerances: Tolerances,
    pub sweep: SweepSettings,
    pub oracle: OracleSettings,
    pub derivative_grid: Vec<f64>,
    pub derivative_step: f64,
}

/// A fully validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub nonlinearity: NonlinearitySection,
    pub nl: Nonlinearity,
    pub initial_data: InitialDataSpec,
    pub integrator: IntegratorConfig,
    pub experiment: ExperimentSettings,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn setup(&self) -> Setup {
        Setup {
            nl: self.nl.clone(),
            data: self.initial_data.clone(),
            integrator: self.integrator.clone(),
            t_end: self.experiment.t_end,
        }
    }

    /// The resolved configuration, defaults included, as echoed in outputs.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "nonlinearity": self.nonlinearity,
            "initial_data": self.initial_data,
            "integrator": self.integrator,
            "experiment": self.experiment,
            "seed": self.seed,
        })
    }
}

fn build_nonlinearity(sec: &NonlinearitySection) -> Result<Nonlinearity> {
    let allowed: &[&str] = match sec.family {
        FamilyName::Pokhozhaev => &["C1", "C2"],
        FamilyName::AffinePlus => &["a"],
        FamilyName::PowerAlpha => &["alpha"],
        FamilyName::Constant => &["m0"],
    };
    let present = [
        ("C1", sec.c1.is_some()),
        ("C2", sec.c2.is_some()),
        ("a", sec.a.is_some()),
        ("alpha", sec.alpha.is_some()),
        ("m0", sec.m0.is_some()),
    ];
    for (key, set) in present {
        if set && !allowed.contains(&key) {
            return Err(Error::config(
                format!("nonlinearity.{key}"),
                format!("not a parameter of family {:?}", sec.family),
            ));
        }
    }
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::config(format!("nonlinearity.{key}"), "missing"));
    match sec.family {
        FamilyName::Pokhozhaev => {
            let (c1, c2) = (need(sec.c1, "C1")?, need(sec.c2, "C2")?);
            Nonlinearity::pokhozhaev(c1, c2)
        }
        FamilyName::AffinePlus => Nonlinearity::affine_plus(need(sec.a, "a")?),
        FamilyName::PowerAlpha => Nonlinearity::power_alpha(need(sec.alpha, "alpha")?),
        FamilyName::Constant => Nonlinearity::constant(need(sec.m0, "m0")?),
    }
}

fn build_initial_data(sec: &InitialDataSection, seed: u64) -> Result<InitialDataSpec> {
    if !(1..=2).contains(&sec.dimension) {
        return Err(Error::config("initial_data.dimension", "must be 1 or 2"));
    }
    if !(sec.epsilon >= 0.0 && sec.epsilon.is_finite()) {
        return Err(Error::config("initial_data.epsilon", "must be finite and ≥ 0"));
    }
    match (&sec.modes, &sec.random) {
        (Some(modes), None) => {
            if modes.is_empty() {
                return Err(Error::config("initial_data.modes", "must not be empty"));
            }
            let modes = modes
                .iter()
                .map(|m| ExplicitMode {
                    k: m.k.clone(),
                    c: m.c,
                    v: m.v,
                })
                .collect();
            Ok(InitialDataSpec::explicit(sec.dimension, modes, sec.epsilon))
        }
        (None, Some(r)) => Ok(InitialDataSpec::random(sec.dimension, seed, r.cutoff, r.decay, sec.epsilon)),
        _ => Err(Error::config("initial_data", "exactly one of `modes` and `random` is required")),
    }
}

fn build_integrator(sec: &IntegratorSection) -> IntegratorConfig {
    let d = IntegratorConfig::default();
    IntegratorConfig {
        rel_tol: sec.rel_tol.unwrap_or(d.rel_tol),
        abs_tol: sec.abs_tol.unwrap_or(d.abs_tol),
        h_init: sec.h_init.unwrap_or(d.h_init),
        h_max: sec.h_max.unwrap_or(d.h_max),
        max_steps: sec.max_steps.unwrap_or(d.max_steps),
        method_order: sec.method_order.unwrap_or(d.method_order),
        sample_every: sec.sample_every.unwrap_or(d.sample_every),
        keep_dense: false,
        output_times: sec.output_times.clone().unwrap_or_default(),
    }
}

fn build_experiment(sec: &ExperimentSection) -> Result<ExperimentSettings> {
    let t = &sec.tolerances;
    let d = Tolerances::default();
    let tolerances = Tolerances {
        pokhozhaev: t.pokhozhaev.unwrap_or(d.pokhozhaev),
        first_order: t.first_order.unwrap_or(d.first_order),
        identity: t.identity.unwrap_or(d.identity),
        quadrature: t.quadrature.unwrap_or(d.quadrature),
        zero_crossing: t.zero_crossing.unwrap_or(d.zero_crossing),
        oracle: t.oracle.unwrap_or(d.oracle),
        derivative: t.derivative.unwrap_or(d.derivative),
        inequality_slack: t.inequality_slack.unwrap_or(d.inequality_slack),
    };
    let named = [
        ("pokhozhaev", tolerances.pokhozhaev),
        ("first_order", tolerances.first_order),
        ("identity", tolerances.identity),
        ("quadrature", tolerances.quadrature),
        ("zero_crossing", tolerances.zero_crossing),
        ("oracle", tolerances.oracle),
        ("derivative", tolerances.derivative),
        ("inequality_slack", tolerances.inequality_slack),
    ];
    for (key, v) in named {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(format!("experiment.tolerances.{key}"), "must be finite and ≥ 0"));
        }
    }
    let t_end = sec.t_end.unwrap_or(DEFAULT_T_END);
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::config("experiment.t_end", "must be positive and finite"));
    }
    let ds = SweepSettings::default();
    let sweep = SweepSettings {
        eps_list: sec.eps_list.clone().unwrap_or(ds.eps_list),
        kappa: sec.kappa.unwrap_or(ds.kappa),
        cap_mult: sec.cap_mult.unwrap_or(ds.cap_mult),
        eps0: sec.eps0,
        threads: sec.threads,
    };
    sweep.validate()?;
    let derivative_grid = sec.derivative_grid.clone().unwrap_or_else(default_derivative_grid);
    let derivative_step = sec.derivative_step.unwrap_or(DEFAULT_DERIVATIVE_STEP);
    if derivative_grid.is_empty() {
        return Err(Error::config("experiment.derivative_grid", "must not be empty"));
    }
    if !(derivative_step > 0.0) {
        return Err(Error::config("experiment.derivative_step", "must be positive"));
    }
    Ok(ExperimentSettings {
        t_end,
        tolerances,
        sweep,
        oracle: OracleSettings::default(),
        derivative_grid,
        derivative_step,
    })
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::from("<root>") } else { path }, e.inner().to_string())
    })?;
    let nl = build_nonlinearity(&raw.nonlinearity)?;
    let initial_data = build_initial_data(&raw.initial_data, raw.seed)?;
    initial_data.unscaled_state().map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config("initial_data", other.to_string()),
    })?;
    let integrator = build_integrator(&raw.integrator);
    integrator.validate()?;
    let experiment = build_experiment(&raw.experiment)?;
    Ok(RunConfig {
        nonlinearity: raw.nonlinearity,
        nl,
        initial_data,
        integrator,
        experiment,
        output_dir: raw.output.dir,
        seed: raw.seed,
    })
}
