use serde::Serialize;
use serde_json::json;

use super::{data_bounds, status_warning, Report, Setup, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::integrator::{integrate_observed, DenseOutput, EventSpec, IntegratorConfig, Trajectory};
use crate::nonlinearity::{Family, Nonlinearity};
use crate::spectral::FunctionalSample;

/// Spacing of the dense resampling behind [`simpson_path_integral`].
const ORACLE_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConservationKind {
    /// `Σv² + M(s)`.
    FirstOrder,
    /// The Pokhozhaev functional; only for `m = (C₁s + C₂)⁻²`.
    Pokhozhaev,
}

fn run(setup: &Setup, events: &[EventSpec], observer: impl FnMut(&FunctionalSample)) -> Result<Trajectory> {
    run_with(setup, &setup.integrator, events, observer)
}

fn run_with(
    setup: &Setup,
    cfg: &IntegratorConfig,
    events: &[EventSpec],
    observer: impl FnMut(&FunctionalSample),
) -> Result<Trajectory> {
    let state = setup.initial_state()?;
    integrate_observed(&state, &setup.nl, setup.t_end, cfg, events, observer)
}

fn hypothesis_not_met(mut report: Report, err: Error) -> Result<Report> {
    match err {
        Error::Range { .. } | Error::Domain { .. } => {
            report.verdict = Verdict::HypothesisNotMet;
            report.warnings.push(err.to_string());
            Ok(report)
        }
        other => Err(other),
    }
}

fn relative(drift: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        drift / reference.abs()
    } else {
        drift
    }
}

/// Maximum relative drift of a conserved quantity over the run.
pub fn run_conservation_check(kind: ConservationKind, setup: &Setup, tol: &Tolerances) -> Result<Report> {
    let (name, tolerance) = match kind {
        ConservationKind::FirstOrder => ("first_order_conservation", tol.first_order),
        ConservationKind::Pokhozhaev => ("pokhozhaev_conservation", tol.pokhozhaev),
    };
    if kind == ConservationKind::Pokhozhaev && !matches!(setup.nl.family(), Family::Pokhozhaev { .. }) {
        return Err(Error::config(
            "nonlinearity.family",
            format!("the Pokhozhaev functional is conserved only for the pokhozhaev family, not {}", setup.nl.name()),
        ));
    }
    let pick = |s: &FunctionalSample| match kind {
        ConservationKind::FirstOrder => s.h1,
        ConservationKind::Pokhozhaev => s.i.unwrap_or(f64::NAN),
    };
    let mut q0 = None;
    let mut worst: f64 = 0.0;
    let traj = run(setup, &[], |s| {
        let q = pick(s);
        let q0 = *q0.get_or_insert(q);
        worst = worst.max((q - q0).abs());
    })?;
    let q0 = q0.unwrap_or(0.0);

    let mut report = Report::new(name).tol("relative_drift", tolerance);
    report.max_drift = relative(worst, q0);
    report.verdict = Verdict::from_bool(report.max_drift <= tolerance);
    report.details = json!({
        "initial_value": q0,
        "max_abs_drift": worst,
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
    });
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}

/// Composite Simpson approximation of `∫ g₂(s) s'³ dτ` over `[t0, t1]`,
/// resampling the dense output on a uniform grid of spacing at most `dt`.
pub fn simpson_path_integral(dense: &DenseOutput, nl: &Nonlinearity, t0: f64, t1: f64, dt: f64) -> Result<f64> {
    if t1 <= t0 {
        return Ok(0.0);
    }
    let n = 2 * ((t1 - t0) / (2.0 * dt)).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut acc = 0.0;
    for j in 0..=n {
        let t = if j == n { t1 } else { t0 + j as f64 * h };
        let sums = dense.eval(t)?.sums();
        let (_, g2) = nl.inv_sqrt_derivs(sums.s)?;
        let sp = sums.s_prime();
        let w = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * g2 * sp * sp * sp;
    }
    Ok(acc * h / 3.0)
}

/// Residual of `F(t) - F(0) = -S(t)/4` at every sample, plus a cross-check of
/// the running `S` against an independent Simpson pass over the dense output.
pub fn run_identity_check(setup: &Setup, tol: &Tolerances) -> Result<Report> {
    let cfg = IntegratorConfig {
        keep_dense: true,
        ..setup.integrator.clone()
    };
    let mut worst: f64 = 0.0;
    let traj = run_with(setup, &cfg, &[], |s| worst = worst.max(s.residual.abs()))?;
    let f0 = traj.initial().f;
    let last = *traj.last();
    let dense = traj.dense.as_ref().expect("dense output requested");
    let s_oracle = simpson_path_integral(dense, &setup.nl, traj.initial().t, last.t, ORACLE_DT)?;
    let gap = (s_oracle - last.s_accum).abs();
    let scale = f0.abs().max(1.0);

    let mut report = Report::new("second_order_identity")
        .tol("residual_relative", tol.identity)
        .tol("quadrature_abs", tol.quadrature);
    report.max_drift = worst / scale;
    report.verdict = Verdict::from_bool(report.max_drift <= tol.identity && gap <= tol.quadrature);
    report.details = json!({
        "f0": f0,
        "max_abs_residual": worst,
        "s_accum_final": last.s_accum,
        "s_simpson_oracle": s_oracle,
        "oracle_dt": ORACLE_DT,
        "quadrature_gap": gap,
    });
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}

struct GronwallTracker {
    c: f64,
    e0: Option<f64>,
    slack: f64,
    worst_ratio: f64,
    violations: usize,
}

impl GronwallTracker {
    fn new(c: f64, slack: f64) -> Self {
        Self {
            c,
            e0: None,
            slack,
            worst_ratio: 0.0,
            violations: 0,
        }
    }

    fn observe(&mut self, s: &FunctionalSample) {
        let e0 = *self.e0.get_or_insert(s.e);
        let bound = e0 * (self.c * s.v_accum).exp();
        if bound > 0.0 {
            self.worst_ratio = self.worst_ratio.max(s.e / bound);
        }
        if s.e > bound * (1.0 + self.slack) {
            self.violations += 1;
        }
    }
}

/// `E(t) ≤ E(0) exp(c V(t))` at every sample, with
/// `c = max |√m g₁|` over `[0, s̄]`.
pub fn run_gronwall_check(setup: &Setup, tol: &Tolerances) -> Result<Report> {
    let report = Report::new("gronwall").tol("inequality_slack", tol.inequality_slack);
    let bounds = match data_bounds(&setup.nl, &setup.data) {
        Ok(b) => b,
        Err(e) => return hypothesis_not_met(report, e),
    };
    let mut g = GronwallTracker::new(bounds.groenwall_c, tol.inequality_slack);
    let traj = run(setup, &[], |s| g.observe(s))?;
    let mut report = report;
    report.max_drift = g.worst_ratio;
    report.verdict = Verdict::from_bool(g.violations == 0);
    report.details = json!({
        "groenwall_c": bounds.groenwall_c,
        "s_bar": bounds.s_bar,
        "max_e_over_bound": g.worst_ratio,
        "violations": g.violations,
        "v_final": traj.last().v_accum,
    });
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}

/// At every zero `t₀` of `s'`, `E(t₀) = E(0) - ¼ g₁(s(0)) s'(0)² - S(t₀)/4`;
/// the Grönwall bound is checked along the way.
pub fn run_zero_crossing_check(setup: &Setup, tol: &Tolerances) -> Result<Report> {
    let report = Report::new("zero_crossing")
        .tol("relation_relative", tol.zero_crossing)
        .tol("inequality_slack", tol.inequality_slack);
    let bounds = match data_bounds(&setup.nl, &setup.data) {
        Ok(b) => b,
        Err(e) => return hypothesis_not_met(report, e),
    };
    let mut g = GronwallTracker::new(bounds.groenwall_c, tol.inequality_slack);
    let traj = run(setup, &[EventSpec::sprime_zero()], |s| g.observe(s))?;
    let first = traj.initial();
    let (g1_0, _) = setup.nl.inv_sqrt_derivs(first.s)?;
    let predicted_base = first.e - 0.25 * g1_0 * first.s_prime * first.s_prime;
    let scale = first.e.abs().max(1.0);
    let errors: Vec<f64> = traj
        .events
        .iter()
        .map(|ev| (ev.sample.e - (predicted_base - 0.25 * ev.sample.s_accum)).abs() / scale)
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);

    let mut report = report;
    report.max_drift = worst;
    report.verdict = if traj.events.is_empty() {
        Verdict::NoEvents
    } else {
        Verdict::from_bool(worst <= tol.zero_crossing && g.violations == 0)
    };
    report.details = json!({
        "events": traj.events.len(),
        "event_times": traj.event_times(0),
        "relation_errors": errors,
        "groenwall_c": bounds.groenwall_c,
        "groenwall_violations": g.violations,
        "max_e_over_groenwall_bound": g.worst_ratio,
    });
    if traj.events.is_empty() {
        report.warnings.push("no zero of s' in the horizon".into());
    }
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}

/// Pointwise inequalities along one run:
///
/// - `s'² ≤ 4 s Σλv² ≤ 4 s √m E`,
/// - `E/2 ≤ F ≤ 3E/2`,
/// - `s'² ≤ 4 s̄ √Λ₁ E`,
/// - `F(t) ≤ 4 F(0)` for `t ≤ envelope_horizon`.
pub fn run_bounds_check(setup: &Setup, tol: &Tolerances, envelope_horizon: f64) -> Result<Report> {
    let report = Report::new("pointwise_bounds").tol("inequality_slack", tol.inequality_slack);
    let bounds = match data_bounds(&setup.nl, &setup.data) {
        Ok(b) => b,
        Err(e) => return hypothesis_not_met(report, e),
    };
    let nl = &setup.nl;
    let slack = 1.0 + tol.inequality_slack;
    let mut cs = 0usize;
    let mut chain = 0usize;
    let mut sandwich = 0usize;
    let mut sandwich_pre = 0usize;
    let mut uniform = 0usize;
    let mut f0 = None;
    let mut sup_ratio: f64 = 0.0;
    let mut eval_err = None;
    let traj = run(setup, &[], |s| {
        let sp2 = s.s_prime * s.s_prime;
        if sp2 > 4.0 * s.s * s.grad_ut * slack {
            cs += 1;
        }
        match nl.eval_m(s.s).and_then(|m| Ok((m, nl.inv_sqrt_derivs(s.s)?))) {
            Ok((m, (g1, _))) => {
                if 4.0 * s.s * s.grad_ut > 4.0 * s.s * m.m.sqrt() * s.e * slack {
                    chain += 1;
                }
                if (0.25 * g1 * sp2).abs() > 0.5 * s.e {
                    sandwich_pre += 1;
                }
            }
            Err(e) => eval_err = Some(e),
        }
        if s.f < 0.5 * s.e / slack || s.f > 1.5 * s.e * slack {
            sandwich += 1;
        }
        if sp2 > 4.0 * bounds.s_bar * bounds.lambda1.sqrt() * s.e * slack {
            uniform += 1;
        }
        let f0 = *f0.get_or_insert(s.f);
        if s.t <= envelope_horizon && f0 > 0.0 {
            sup_ratio = sup_ratio.max(s.f / f0);
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    let mut report = report;
    report.max_drift = sup_ratio;
    report.verdict = Verdict::from_bool(cs + chain + sandwich + uniform == 0 && sup_ratio <= 4.0);
    report.details = json!({
        "cauchy_schwarz_violations": cs,
        "energy_chain_violations": chain,
        "sandwich_violations": sandwich,
        "sandwich_precondition_failures": sandwich_pre,
        "uniform_bound_violations": uniform,
        "envelope_horizon": envelope_horizon,
        "sup_f_ratio": sup_ratio,
        "s_bar": bounds.s_bar,
        "lambda1": bounds.lambda1,
        "accepted_steps": traj.accepted_steps,
    });
    if sandwich_pre > 0 {
        report
            .warnings
            .push(format!("|g1 s'^2/4| > E/2 at {sandwich_pre} samples; the sandwich is not implied there"));
    }
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}
