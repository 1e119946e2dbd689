//! Pass/fail experiments on computed trajectories.
//!
//! Every experiment returns a [`Report`]: the measured quantity, the tolerance
//! it was judged against, a [`Verdict`] and the sample table that produced it.

mod checks;
mod envelope;
mod oracle;
mod sweep;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::Result;
use crate::integrator::{IntegratorConfig, TrajectoryStatus};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{make_initial_state, FunctionalSample, InitialDataSpec, SpectralState};

pub use checks::{
    run_bounds_check, run_conservation_check, run_gronwall_check, run_identity_check, run_zero_crossing_check,
    simpson_path_integral, ConservationKind,
};
pub use envelope::{
    choose_eps0, compute_envelope, data_bounds, default_eps_grid, DataBounds, EnvelopeConstants, EPS0_SAFETY,
};
pub use oracle::{rk4_fixed, run_oracle_compare, OracleSettings};
pub use sweep::{lifespan_exponent, run_lifespan_sweep, SweepOutcome, SweepRecord, SweepSettings, THREADS_ENV};

/// One trajectory to run: coefficient, data, stepper settings and horizon.
#[derive(Debug, Clone)]
pub struct Setup {
    pub nl: Nonlinearity,
    pub data: InitialDataSpec,
    pub integrator: IntegratorConfig,
    pub t_end: f64,
}

impl Setup {
    pub fn initial_state(&self) -> Result<SpectralState> {
        make_initial_state(&self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The data or coefficient do not satisfy the assumptions under which the
    /// checked statement holds.
    HypothesisNotMet,
    /// A zero-crossing check whose horizon contains no zero of `s'`.
    NoEvents,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::HypothesisNotMet | Verdict::NoEvents => 2,
        }
    }
}

/// Default tolerances of every experiment; all of them are echoed in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative drift of the Pokhozhaev functional.
    pub pokhozhaev: f64,
    /// Relative drift of `Σv² + M(s)`.
    pub first_order: f64,
    /// `max |F(t) - F(0) + S(t)/4|`, relative to `max(1, |F(0)|)`.
    pub identity: f64,
    /// Absolute gap between the running `S` and an independent Simpson pass.
    pub quadrature: f64,
    /// Zero-crossing relation, relative to `max(1, |E(0)|)`.
    pub zero_crossing: f64,
    /// Sup-norm gap between the adaptive run and the fixed-step oracle.
    pub oracle: f64,
    /// Derivative gate.
    pub derivative: f64,
    /// Relative round-off allowance for inequalities that are tight at `t = 0`.
    pub inequality_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pokhozhaev: 1e-6,
            first_order: 1e-8,
            identity: 1e-6,
            quadrature: 1e-8,
            zero_crossing: 1e-6,
            oracle: 1e-6,
            derivative: 1e-6,
            inequality_slack: 1e-12,
        }
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub verdict: Verdict,
    /// The headline measurement the verdict is based on.
    pub max_drift: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub status: Option<TrajectoryStatus>,
    pub warnings: Vec<String>,
    pub details: serde_json::Value,
    #[serde(skip)]
    pub samples: Vec<FunctionalSample>,
}

impl Report {
    fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            verdict: Verdict::Fail,
            max_drift: 0.0,
            tolerances: BTreeMap::new(),
            status: None,
            warnings: Vec::new(),
            details: serde_json::Value::Null,
            samples: Vec::new(),
        }
    }

    fn tol(mut self, name: &str, value: f64) -> Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn status_warning(report: &mut Report, status: TrajectoryStatus) {
    report.status = Some(status);
    match status {
        TrajectoryStatus::DomainExit => report
            .warnings
            .push("s left the domain of m; the verdict covers the partial trajectory".into()),
        TrajectoryStatus::StepFailure => report
            .warnings
            .push("step budget exhausted before t_end; the verdict covers the partial trajectory".into()),
        _ => {}
    }
}
