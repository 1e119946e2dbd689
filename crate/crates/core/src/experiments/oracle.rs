use serde::Serialize;
use serde_json::json;

use super::{status_warning, Report, Setup, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{rhs_flat, SpectralState};

/// Accepted window for the observed order of the classical RK4 oracle.
pub const ORDER_WINDOW: (f64, f64) = (3.7, 4.3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSettings {
    /// Step of the reference run.
    pub h_ref: f64,
    /// Coarse step of the convergence-order estimate; the second run uses half.
    pub h_coarse: f64,
    /// Spacing of the comparison times.
    pub dt_out: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            h_ref: 1e-5,
            h_coarse: 1e-3,
            dt_out: 0.1,
        }
    }
}

/// Classical fixed-step RK4 from `state` with `n_steps` steps of size `h`.
/// Returns the flat state after every step index listed in `record_at`
/// (which must be increasing).
pub fn rk4_fixed(
    state: &SpectralState,
    nl: &Nonlinearity,
    h: f64,
    n_steps: usize,
    record_at: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let lambdas = state.modes.lambdas();
    let dim = 2 * lambdas.len();
    let mut y = state.to_flat();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut out = Vec::with_capacity(record_at.len());
    let mut next = 0;
    while next < record_at.len() && record_at[next] == 0 {
        out.push(y.clone());
        next += 1;
    }
    for step in 1..=n_steps {
        rhs_flat(lambdas, nl, &y, &mut k1)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs_flat(lambdas, nl, &tmp, &mut k2)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs_flat(lambdas, nl, &tmp, &mut k3)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs_flat(lambdas, nl, &tmp, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        while next < record_at.len() && record_at[next] == step {
            out.push(y.clone());
            next += 1;
        }
    }
    Ok(out)
}

fn steps_for(span: f64, h: f64) -> Result<usize> {
    let n = (span / h).round();
    if !(n >= 1.0) || ((n * h - span).abs() > 1e-9 * span.max(1.0)) {
        return Err(Error::config(
            "experiment.oracle",
            format!("step {h} does not divide the span {span}"),
        ));
    }
    Ok(n as usize)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Adaptive run against a fixed-step RK4 reference at shared times, plus the
/// observed convergence order of RK4 from steps `h` and `h/2` measured against
/// the reference.
pub fn run_oracle_compare(setup: &Setup, settings: &OracleSettings, tol: &Tolerances) -> Result<Report> {
    let state = setup.initial_state()?;
    let span = setup.t_end - state.t;
    let n_out = steps_for(span, settings.dt_out)?;
    let out_times: Vec<f64> = (1..=n_out).map(|k| state.t + k as f64 * settings.dt_out).collect();

    let cfg = IntegratorConfig {
        keep_dense: true,
        output_times: out_times.clone(),
        ..setup.integrator.clone()
    };
    let traj = integrate(&state, &setup.nl, setup.t_end, &cfg, &[])?;
    let dense = traj.dense.as_ref().expect("dense output requested");

    let n_ref = steps_for(span, settings.h_ref)?;
    let per_out = steps_for(settings.dt_out, settings.h_ref)?;
    let idx: Vec<usize> = (1..=n_out).map(|k| k * per_out).collect();
    let reference = rk4_fixed(&state, &setup.nl, settings.h_ref, n_ref, &idx)?;

    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for (t, y_ref) in out_times.iter().zip(&reference) {
        if *t > traj.final_state.t {
            break;
        }
        worst = worst.max(sup_diff(&dense.eval(*t)?.to_flat(), y_ref));
        compared += 1;
    }

    let end_ref = reference.last().cloned().unwrap_or_else(|| state.to_flat());
    let mut errs = Vec::new();
    for h in [settings.h_coarse, 0.5 * settings.h_coarse] {
        let n = steps_for(span, h)?;
        let y = rk4_fixed(&state, &setup.nl, h, n, &[n])?;
        errs.push(sup_diff(&y[0], &end_ref));
    }
    let order = (errs[0] / errs[1]).log2();

    let mut report = Report::new("oracle_compare")
        .tol("sup_state_difference", tol.oracle)
        .tol("order_min", ORDER_WINDOW.0)
        .tol("order_max", ORDER_WINDOW.1);
    report.max_drift = worst;
    report.verdict = Verdict::from_bool(
        worst <= tol.oracle && compared == n_out && order >= ORDER_WINDOW.0 && order <= ORDER_WINDOW.1,
    );
    report.details = json!({
        "compared_times": compared,
        "h_ref": settings.h_ref,
        "h_coarse": settings.h_coarse,
        "coarse_errors": errs,
        "observed_order": order,
    });
    status_warning(&mut report, traj.status);
    report.samples = traj.samples;
    Ok(report)
}
