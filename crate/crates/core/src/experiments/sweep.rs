use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{choose_eps0, compute_envelope, default_eps_grid, Report, Setup, Verdict};
use crate::error::{Error, Result};
use crate::integrator::{integrate_observed, EventSpec, Functional, IntegratorConfig, TrajectoryStatus};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::make_initial_state;

/// Environment variable capping the number of sweep workers.
pub const THREADS_ENV: &str = "KIRCHHOFF_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSettings {
    /// Strictly decreasing amplitudes.
    pub eps_list: Vec<f64>,
    /// Threshold factor: the lifespan proxy is the first time `F ≥ κ F(0)`.
    pub kappa: f64,
    /// `t_cap(ε) = cap_mult · ε^{-p}` with `p` from [`lifespan_exponent`].
    pub cap_mult: f64,
    /// Threshold amplitude for the envelope constants; chosen on the default
    /// grid when absent.
    pub eps0: Option<f64>,
    /// Worker count; `None` defers to `KIRCHHOFF_THREADS`, then to rayon.
    pub threads: Option<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            eps_list: vec![0.5, 0.4, 0.3],
            kappa: 2.0,
            cap_mult: 10.0,
            eps0: None,
            threads: None,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::config("experiment.eps_list", "must not be empty"));
        }
        if self.eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::config("experiment.eps_list", "entries must be finite and ≥ 0"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("experiment.eps_list", "must be strictly decreasing"));
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(Error::config("experiment.kappa", "must exceed 1"));
        }
        if !(self.cap_mult > 0.0 && self.cap_mult.is_finite()) {
            return Err(Error::config("experiment.cap_mult", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("experiment.threads", "must be positive"));
        }
        Ok(())
    }
}

/// Expected lifespan exponent: `4`, or `4 + 2α` for `power_alpha(α)`.
pub fn lifespan_exponent(nl: &Nonlinearity) -> f64 {
    nl.alpha().map_or(4.0, |a| 4.0 + 2.0 * a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    /// First time with `F ≥ κ F(0)`; equals `t_cap` for censored runs.
    pub t_event: f64,
    pub censored: bool,
    pub t_cap: f64,
    /// `max F(t)/F(0)` over the whole run.
    pub sup_f_ratio: f64,
    /// `max F(t)/F(0)` over `t ≤ ε⁻⁴`.
    pub sup_f_ratio_envelope: f64,
    pub status: TrajectoryStatus,
    pub accepted_steps: u64,
    /// `T(ε) ≥ ½ T(ε_ref) (ε_ref/ε)^p`, censored records passing at the cap.
    pub scaling_ok: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: Report,
    pub records: Vec<SweepRecord>,
    /// Least-squares slope of `log T` against `log ε` over uncensored records.
    pub slope: Option<f64>,
}

fn thread_count(settings: &SweepSettings) -> Result<Option<usize>> {
    if let Some(n) = settings.threads {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn run_one(setup: &Setup, eps: f64, settings: &SweepSettings, exponent: f64) -> Result<SweepRecord> {
    let data = setup.data.with_epsilon(eps);
    let state = make_initial_state(&data)?;
    let t_cap = settings.cap_mult * eps.powf(-exponent);
    let horizon = eps.powi(-4);
    let f0 = crate::spectral::observables(&state, &setup.nl)?.f;
    if !(f0 > 0.0) || !t_cap.is_finite() {
        // Zero data: F ≡ 0, nothing can grow.
        return Ok(SweepRecord {
            epsilon: eps,
            t_event: t_cap,
            censored: true,
            t_cap,
            sup_f_ratio: 1.0,
            sup_f_ratio_envelope: 1.0,
            status: TrajectoryStatus::ReachedTEnd,
            accepted_steps: 0,
            scaling_ok: true,
        });
    }
    let cfg = IntegratorConfig {
        sample_every: u64::MAX,
        keep_dense: false,
        output_times: Vec::new(),
        ..setup.integrator.clone()
    };
    let mut sup: f64 = 0.0;
    let mut sup_env: f64 = 0.0;
    let traj = integrate_observed(
        &state,
        &setup.nl,
        t_cap,
        &cfg,
        &[EventSpec::threshold(Functional::F, settings.kappa)],
        |s| {
            let r = s.f / f0;
            sup = sup.max(r);
            if s.t <= horizon {
                sup_env = sup_env.max(r);
            }
        },
    )?;
    info!("sweep ε = {eps}: {:?} after {} steps", traj.status, traj.accepted_steps);
    let hit = traj.events.first().map(|e| e.t);
    let censored = hit.is_none() && traj.status == TrajectoryStatus::ReachedTEnd;
    Ok(SweepRecord {
        epsilon: eps,
        t_event: hit.unwrap_or(if censored { t_cap } else { traj.final_state.t }),
        censored,
        t_cap,
        sup_f_ratio: sup,
        sup_f_ratio_envelope: sup_env,
        status: traj.status,
        accepted_steps: traj.accepted_steps,
        scaling_ok: true,
    })
}

fn fit_slope(records: &[SweepRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| !r.censored && r.epsilon > 0.0 && r.t_event > 0.0)
        .map(|r| (r.epsilon.ln(), r.t_event.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Lifespan proxy over `settings.eps_list`, one worker per amplitude.
///
/// Passes when every record satisfies the scaling inequality against the
/// largest amplitude and `F ≤ 4 F(0)` holds up to `ε⁻⁴`. Amplitudes above the
/// envelope's `δ` only produce warnings.
pub fn run_lifespan_sweep(setup: &Setup, settings: &SweepSettings) -> Result<SweepOutcome> {
    settings.validate()?;
    let exponent = lifespan_exponent(&setup.nl);
    let worker = |eps: &f64| run_one(setup, *eps, settings, exponent);
    let results: Vec<Result<SweepRecord>> = match thread_count(settings)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(THREADS_ENV, e.to_string()))?
            .install(|| settings.eps_list.par_iter().map(worker).collect()),
        None => settings.eps_list.par_iter().map(worker).collect(),
    };
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;

    let (eps_ref, t_ref) = (records[0].epsilon, records[0].t_event);
    for r in records.iter_mut() {
        r.scaling_ok = r.censored || r.t_event >= 0.5 * t_ref * (eps_ref / r.epsilon).powf(exponent);
    }
    let slope = fit_slope(&records);

    let mut report = Report::new("lifespan_sweep")
        .tol("kappa", settings.kappa)
        .tol("cap_mult", settings.cap_mult)
        .tol("scaling_slack", 0.5)
        .tol("envelope_factor", 4.0);
    let eps0 = match settings.eps0 {
        Some(e) => Ok(e),
        None => choose_eps0(&setup.nl, &setup.data, &default_eps_grid()),
    };
    let delta = match eps0.and_then(|e0| compute_envelope(&setup.nl, &setup.data, e0)) {
        Ok(env) => {
            for r in records.iter().filter(|r| r.epsilon > env.delta) {
                report
                    .warnings
                    .push(format!("ε = {} exceeds δ = {}; the lower bound is not guaranteed there", r.epsilon, env.delta));
            }
            Some(env.delta)
        }
        Err(e) => {
            report.warnings.push(format!("envelope constants unavailable: {e}"));
            None
        }
    };
    for r in records.iter().filter(|r| r.status != TrajectoryStatus::ReachedTEnd && r.status != TrajectoryStatus::EventStop) {
        report.warnings.push(format!("ε = {}: run ended with status {:?}", r.epsilon, r.status));
    }

    let scaling = records.iter().all(|r| r.scaling_ok);
    let envelope = records.iter().all(|r| r.sup_f_ratio_envelope <= 4.0);
    report.max_drift = records.iter().map(|r| r.sup_f_ratio_envelope).fold(0.0, f64::max);
    report.verdict = Verdict::from_bool(scaling && envelope);
    report.details = json!({
        "exponent": exponent,
        "records": records,
        "fitted_slope": slope,
        "delta": delta,
        "scaling_ok": scaling,
        "envelope_ok": envelope,
    });
    Ok(SweepOutcome { report, records, slope })
}
