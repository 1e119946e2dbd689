use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::InitialDataSpec;

/// `ε₀` must satisfy `N(ε₀) < EPS0_SAFETY · sup M`.
pub const EPS0_SAFETY: f64 = 0.99;
const SAMPLES: usize = 2001;
const EPS_GRID: usize = 200;

/// Constants of the small-data lifespan argument, evaluated numerically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeConstants {
    pub eps0: f64,
    /// `N(ε) = ε² Σv⁰² + M(ε² Σλc⁰²)` at the data amplitude.
    pub n_eps: f64,
    /// `M⁻¹(N(ε))`, the a-priori bound on `s(t)`.
    pub s_bar: f64,
    pub m0: f64,
    pub m1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub groenwall_c: f64,
}

/// `ε = 0.001, 0.002, …, 1`.
pub fn default_eps_grid() -> Vec<f64> {
    (1..=1000).map(|j| j as f64 * 1e-3).collect()
}

/// Largest `ε` of `grid` with `N(ε) < 0.99 sup M`.
pub fn choose_eps0(nl: &Nonlinearity, data: &InitialDataSpec, grid: &[f64]) -> Result<f64> {
    let cap = EPS0_SAFETY * nl.sup_mass();
    let mut best: Option<f64> = None;
    for &eps in grid {
        if eps > 0.0 && data.first_order_level(nl, eps)? < cap && best.is_none_or(|b| eps > b) {
            best = Some(eps);
        }
    }
    best.ok_or(Error::Range {
        what: "smallness condition N(ε) < 0.99 sup M on the ε grid",
        value: grid.iter().copied().fold(f64::INFINITY, f64::min),
        lo: 0.0,
        hi: cap,
    })
}

fn sample_max<F: Fn(f64) -> Result<f64>>(hi: f64, f: F) -> Result<(f64, f64)> {
    let mut lo_v = f64::INFINITY;
    let mut hi_v = f64::NEG_INFINITY;
    for j in 0..SAMPLES {
        let s = hi * j as f64 / (SAMPLES - 1) as f64;
        let v = f(s)?;
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    Ok((lo_v, hi_v))
}

/// Envelope constants for `data` (at its own `ε`) against the threshold
/// amplitude `eps0`. Extremes over intervals are taken on a 2001-point grid.
pub fn compute_envelope(nl: &Nonlinearity, data: &InitialDataSpec, eps0: f64) -> Result<EnvelopeConstants> {
    if !(eps0 > 0.0 && eps0.is_finite()) {
        return Err(Error::config("experiment.eps0", "must be positive and finite"));
    }
    let n0 = data.first_order_level(nl, eps0)?;
    if !(n0 < nl.sup_mass()) {
        return Err(Error::Range {
            what: "N(ε₀) (smallness condition)",
            value: n0,
            lo: 0.0,
            hi: nl.sup_mass(),
        });
    }
    let s0_bar = nl.mass_inverse(n0)?;
    let (m0, m1) = sample_max(s0_bar, |s| Ok(nl.eval_m(s)?.m))?;

    let mut c0: f64 = 0.0;
    for j in 1..=EPS_GRID {
        let eps = eps0 * j as f64 / EPS_GRID as f64;
        let s = nl.mass_inverse(data.first_order_level(nl, eps)?)?;
        c0 = c0.max(s / (eps * eps));
    }
    let c1 = 4.0 * c0 * m1.sqrt();
    let (_, c2) = sample_max(c0 * eps0 * eps0, |s| Ok((0.25 * nl.inv_sqrt_derivs(s)?.0).abs()))?;
    let delta = if c2 * c1 > 0.0 {
        eps0.min(1.0 / (2.0 * c2 * c1).sqrt())
    } else {
        eps0
    };

    let b = data_bounds(nl, data)?;
    Ok(EnvelopeConstants {
        eps0,
        m0,
        m1,
        c0,
        c1,
        c2,
        delta,
        n_eps: b.n_eps,
        s_bar: b.s_bar,
        lambda0: b.lambda0,
        lambda1: b.lambda1,
        lambda2: b.lambda2,
        groenwall_c: b.groenwall_c,
    })
}

/// The part of the envelope that depends only on the data at its own `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataBounds {
    pub n_eps: f64,
    pub s_bar: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub groenwall_c: f64,
}

/// `s̄ = M⁻¹(N(ε))` and the extremes of `m`, `|m'|` and `|√m g₁|` on `[0, s̄]`.
/// Fails with a range error when `N(ε) ≥ sup M`.
pub fn data_bounds(nl: &Nonlinearity, data: &InitialDataSpec) -> Result<DataBounds> {
    let n_eps = data.first_order_level(nl, data.epsilon)?;
    let s_bar = nl.mass_inverse(n_eps)?;
    let (lambda0, lambda1) = sample_max(s_bar, |s| Ok(nl.eval_m(s)?.m))?;
    let (_, lambda2) = sample_max(s_bar, |s| Ok(nl.eval_m(s)?.m1.abs()))?;
    let (_, groenwall_c) = sample_max(s_bar, |s| {
        let m = nl.eval_m(s)?.m;
        Ok((m.sqrt() * nl.inv_sqrt_derivs(s)?.0).abs())
    })?;
    Ok(DataBounds {
        n_eps,
        s_bar,
        lambda0,
        lambda1,
        lambda2,
        groenwall_c,
    })
}
