//! Adaptive time stepping of the truncated Kirchhoff system.
//!
//! [`integrate`] advances a [`SpectralState`] with the Dormand–Prince 5(4) pair
//! and a PI step-size controller. Along the way it
//!
//! - accumulates `S(t) = ∫ g₂(s) s'³ dτ` by composite Simpson over four
//!   panels of the dense output, and `V(t) = ∫ |s'| dτ` by Simpson on (step
//!   start, dense midpoint, step end), split at zeros of `s'` inside the step,
//! - locates events (zeros of `s'`, threshold crossings of `F` or `E`) by
//!   bisection on the dense output,
//! - stops at `t_end`, on a terminal event, or when `s` leaves the interval on
//!   which `m` is defined.

mod dopri5;

use std::sync::Arc;

use log::info;
use serde::Serialize;

pub use dopri5::DenseStep;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{rhs_flat, second_order_energies, FunctionalSample, ModeSet, ModeSums, SpectralState};

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

/// Absolute accuracy of located event times.
pub const EVENT_TIME_TOL: f64 = 1e-10;
/// Smallest step before the integrator gives up.
pub const H_MIN: f64 = 1e-14;
/// Sub-intervals scanned per step when looking for event sign changes.
const EVENT_SCAN: usize = 4;
/// An event function ending a run within this fraction of its running maximum,
/// and still heading towards zero, counts as landing on the end point.
const LANDING_TOL: f64 = 1e-9;
const PROGRESS_EVERY: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step; `0` selects one automatically.
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: u64,
    /// Only the 5(4) pair is implemented.
    pub method_order: u32,
    /// Record every `sample_every`-th accepted step (the final one always).
    pub sample_every: u64,
    /// Keep the interpolant of every accepted step in the trajectory.
    pub keep_dense: bool,
    /// Extra sample times, interpolated from the dense output.
    pub output_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            h_init: 0.0,
            h_max: f64::INFINITY,
            max_steps: 100_000_000,
            method_order: 5,
            sample_every: 1,
            keep_dense: false,
            output_times: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, key: &str| {
            if x > 0.0 && !x.is_nan() {
                Ok(())
            } else {
                Err(Error::config(format!("integrator.{key}"), "must be positive"))
            }
        };
        pos(self.rel_tol, "rel_tol")?;
        pos(self.abs_tol, "abs_tol")?;
        pos(self.h_max, "h_max")?;
        if !(self.h_init >= 0.0) {
            return Err(Error::config("integrator.h_init", "must be ≥ 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("integrator.max_steps", "must be positive"));
        }
        if self.sample_every == 0 {
            return Err(Error::config("integrator.sample_every", "must be positive"));
        }
        if self.method_order != 5 {
            return Err(Error::config(
                "integrator.method_order",
                "only the Dormand–Prince 5(4) pair (order 5) is available",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    F,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// `s'(t) = 0`.
    SPrimeZero,
    /// `F(t) = factor F(0)` (or the same for `E`).
    FunctionalThreshold { which: Functional, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Any,
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub direction: Direction,
    /// Stop the integration at the first occurrence.
    pub terminal: bool,
}

impl EventSpec {
    /// Every zero of `s'`, recorded without stopping.
    pub fn sprime_zero() -> Self {
        Self {
            kind: EventKind::SPrimeZero,
            direction: Direction::Any,
            terminal: false,
        }
    }

    /// First upward crossing of `factor × (value at t = 0)`; stops the run.
    pub fn threshold(which: Functional, factor: f64) -> Self {
        Self {
            kind: EventKind::FunctionalThreshold { which, factor },
            direction: Direction::Up,
            terminal: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if let EventKind::FunctionalThreshold { factor, .. } = self.kind {
            if !(factor > 0.0) {
                return Err(Error::config("events.factor", "threshold factor must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    /// Index into the event list passed to [`integrate`].
    pub spec: usize,
    pub kind: EventKind,
    pub sample: FunctionalSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    ReachedTEnd,
    EventStop,
    /// The step budget `max_steps` ran out.
    StepFailure,
    /// `s` left the admissible interval of `m`.
    DomainExit,
}

/// Interpolants of all accepted steps, in time order.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub modes: Arc<ModeSet>,
    pub steps: Vec<DenseStep>,
}

impl DenseOutput {
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.steps.first()?.t0, self.steps.last()?.t1))
    }

    pub fn eval(&self, t: f64) -> Result<SpectralState> {
        let idx = self.steps.partition_point(|st| st.t1 < t);
        let step = self.steps.get(idx).ok_or(Error::Range {
            what: "dense output time",
            value: t,
            lo: self.span().map_or(f64::NAN, |s| s.0),
            hi: self.span().map_or(f64::NAN, |s| s.1),
        })?;
        dense_eval(step, &self.modes, t)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<FunctionalSample>,
    pub events: Vec<EventRecord>,
    pub final_state: SpectralState,
    pub status: TrajectoryStatus,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub dense: Option<DenseOutput>,
}

impl Trajectory {
    pub fn initial(&self) -> &FunctionalSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &FunctionalSample {
        self.samples.last().expect("trajectory has an initial sample")
    }

    pub fn event_times(&self, spec: usize) -> Vec<f64> {
        self.events.iter().filter(|e| e.spec == spec).map(|e| e.t).collect()
    }
}

/// State at `t` inside one accepted step.
pub fn dense_eval(step: &DenseStep, modes: &Arc<ModeSet>, t: f64) -> Result<SpectralState> {
    let y = step.eval(t)?;
    Ok(SpectralState::from_flat(t, Arc::clone(modes), &y))
}

/// Earliest root of the event function of `spec` inside `step`, if any.
/// `reference` is `(F(0), E(0))` for threshold events.
pub fn locate_event(
    step: &DenseStep,
    lambdas: &[f64],
    nl: &Nonlinearity,
    spec: &EventSpec,
    reference: (f64, f64),
) -> Result<Option<f64>> {
    let ctx = EventContext {
        lambdas,
        nl,
        f0: reference.0,
        e0: reference.1,
    };
    let g0 = ctx.value(spec, &step.y0)?;
    let g1 = ctx.value(spec, &step.y1)?;
    let mut scratch = vec![0.0; step.y0.len()];
    Ok(ctx
        .roots(spec, step, g0, g1, &mut scratch)?
        .0
        .first()
        .copied())
}

struct EventContext<'a> {
    lambdas: &'a [f64],
    nl: &'a Nonlinearity,
    f0: f64,
    e0: f64,
}

impl EventContext<'_> {
    fn value(&self, spec: &EventSpec, y: &[f64]) -> Result<f64> {
        let sums = ModeSums::from_flat(self.lambdas, y);
        match spec.kind {
            EventKind::SPrimeZero => Ok(sums.s_prime()),
            EventKind::FunctionalThreshold { which, factor } => {
                let (e, f) = second_order_energies(&sums, self.nl)?;
                Ok(match which {
                    Functional::F => f - factor * self.f0,
                    Functional::E => e - factor * self.e0,
                })
            }
        }
    }

    fn value_at(&self, spec: &EventSpec, step: &DenseStep, t: f64, scratch: &mut [f64]) -> Result<f64> {
        step.eval_into(t, scratch)?;
        self.value(spec, scratch)
    }

    /// Roots inside `(t0, t1]` in increasing order (at most one per scanned
    /// sub-interval), plus the largest `|g|` seen at the scan nodes.
    fn roots(
        &self,
        spec: &EventSpec,
        step: &DenseStep,
        g_start: f64,
        g_end: f64,
        scratch: &mut [f64],
    ) -> Result<(Vec<f64>, f64)> {
        let (t0, t1) = (step.t0, step.t1);
        let mut found = Vec::new();
        let mut ta = t0;
        let mut ga = g_start;
        let mut gmax = g_start.abs().max(g_end.abs());
        for i in 1..=EVENT_SCAN {
            let tb = if i == EVENT_SCAN {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / EVENT_SCAN as f64
            };
            let gb = if i == EVENT_SCAN {
                g_end
            } else {
                self.value_at(spec, step, tb, scratch)?
            };
            gmax = gmax.max(gb.abs());
            if crosses(spec.direction, ga, gb) {
                found.push(self.bisect(spec, step, ta, tb, ga, scratch)?);
            }
            ta = tb;
            ga = gb;
        }
        Ok((found, gmax))
    }

    fn bisect(&self, spec: &EventSpec, step: &DenseStep, mut lo: f64, mut hi: f64, mut g_lo: f64, scratch: &mut [f64]) -> Result<f64> {
        let tol = EVENT_TIME_TOL.max(4.0 * f64::EPSILON * hi.abs());
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g_mid = self.value_at(spec, step, mid, scratch)?;
            if crosses(spec.direction, g_lo, g_mid) {
                hi = mid;
            } else {
                lo = mid;
                g_lo = g_mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn crosses(direction: Direction, a: f64, b: f64) -> bool {
    let up = a < 0.0 && b >= 0.0;
    let down = a > 0.0 && b <= 0.0;
    match direction {
        Direction::Any => up || down,
        Direction::Up => up,
        Direction::Down => down,
    }
}

fn heading_to_zero(direction: Direction, a: f64, b: f64) -> bool {
    let toward = b.abs() < a.abs() && a.signum() == b.signum();
    match direction {
        Direction::Any => toward,
        Direction::Up => toward && a < 0.0,
        Direction::Down => toward && a > 0.0,
    }
}

/// `(g₂(s) s'³, s')`: the integrand of `S` and the signed integrand of `V`.
fn path_integrands(sums: &ModeSums, nl: &Nonlinearity) -> Result<(f64, f64)> {
    let (_, g2) = nl.inv_sqrt_derivs(sums.s)?;
    let sp = sums.s_prime();
    Ok((g2 * sp * sp * sp, sp))
}

/// Panels of the composite Simpson rule used for `S` on each step.
const S_PANELS: usize = 4;

/// `∫ g₂ s'³ dτ` over `[ta, tb]` inside `step` by composite Simpson, plus the
/// integrands at the midpoint. `qa`, `qb` are the integrands at the ends.
fn s_integral(
    step: &DenseStep,
    (ta, qa): (f64, (f64, f64)),
    (tb, qb): (f64, (f64, f64)),
    lambdas: &[f64],
    nl: &Nonlinearity,
    scratch: &mut [f64],
) -> Result<(f64, (f64, f64))> {
    let n = 2 * S_PANELS;
    let dt = (tb - ta) / n as f64;
    let mut sum = qa.0 + qb.0;
    let mut q_mid = qa;
    for j in 1..n {
        step.eval_into(ta + j as f64 * dt, scratch)?;
        let q = path_integrands(&ModeSums::from_flat(lambdas, scratch), nl)?;
        sum += if j % 2 == 1 { 4.0 * q.0 } else { 2.0 * q.0 };
        if j == S_PANELS {
            q_mid = q;
        }
    }
    Ok((sum * dt / 3.0, q_mid))
}

fn sprime_at(step: &DenseStep, t: f64, lambdas: &[f64], scratch: &mut [f64]) -> Result<f64> {
    step.eval_into(t, scratch)?;
    Ok(ModeSums::from_flat(lambdas, scratch).s_prime())
}

/// `∫ |s'| dτ` over `[ta, tb]` inside `step`. Simpson's rule, except that the
/// interval is first split at sign changes of `s'` so the kink of `|s'|` falls
/// on a node.
fn abs_sprime_integral(
    step: &DenseStep,
    (ta, spa): (f64, f64),
    (tb, spb): (f64, f64),
    spm: Option<f64>,
    lambdas: &[f64],
    scratch: &mut [f64],
    depth: u32,
) -> Result<f64> {
    let mid = 0.5 * (ta + tb);
    let spm = match spm {
        Some(v) => v,
        None => sprime_at(step, mid, lambdas, scratch)?,
    };
    let simpson = (tb - ta) / 6.0 * (spa.abs() + 4.0 * spm.abs() + spb.abs());
    let changes = |a: f64, b: f64| (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0);
    if depth == 0 || !(changes(spa, spm) || changes(spm, spb)) {
        return Ok(simpson);
    }
    let (mut lo, mut hi, mut g_lo) = if changes(spa, spm) { (ta, mid, spa) } else { (mid, tb, spm) };
    while hi - lo > 1e-3 * EVENT_TIME_TOL.max(f64::EPSILON * hi.abs()) {
        let c = 0.5 * (lo + hi);
        if c <= lo || c >= hi {
            break;
        }
        let g = sprime_at(step, c, lambdas, scratch)?;
        if changes(g_lo, g) || g == 0.0 {
            hi = c;
        } else {
            lo = c;
            g_lo = g;
        }
    }
    let root = 0.5 * (lo + hi);
    let left = abs_sprime_integral(step, (ta, spa), (root, 0.0), None, lambdas, scratch, depth - 1)?;
    let right = abs_sprime_integral(step, (root, 0.0), (tb, spb), None, lambdas, scratch, depth - 1)?;
    Ok(left + right)
}

fn is_domain_error(e: &Error) -> bool {
    matches!(e, Error::Domain { .. } | Error::Positivity { .. })
}

/// Integrates from `state0.t` to `t_end`, recording samples and events.
pub fn integrate(
    state0: &SpectralState,
    nl: &Nonlinearity,
    t_end: f64,
    cfg: &IntegratorConfig,
    events: &[EventSpec],
) -> Result<Trajectory> {
    integrate_observed(state0, nl, t_end, cfg, events, |_| {})
}

/// As [`integrate`], additionally handing every computed sample (each accepted
/// step, each event and output time) to `observer`, regardless of
/// `sample_every`.
pub fn integrate_observed<O>(
    state0: &SpectralState,
    nl: &Nonlinearity,
    t_end: f64,
    cfg: &IntegratorConfig,
    events: &[EventSpec],
    mut observer: O,
) -> Result<Trajectory>
where
    O: FnMut(&FunctionalSample),
{
    cfg.validate()?;
    for ev in events {
        ev.validate()?;
    }
    if !(t_end > state0.t) {
        return Err(Error::config("t_end", "t_end must exceed the initial time"));
    }
    let modes = Arc::clone(&state0.modes);
    let lambdas = modes.lambdas();
    let dim = 2 * lambdas.len();
    let mut f = |y: &[f64], dy: &mut [f64]| rhs_flat(lambdas, nl, y, dy);

    let mut t = state0.t;
    let mut y = state0.to_flat();
    let mut k1 = vec![0.0; dim];
    f(&y, &mut k1)?;

    let sums0 = ModeSums::from_flat(lambdas, &y);
    let first = FunctionalSample::from_sums(t, &sums0, nl)?;
    let (f0, e0) = (first.f, first.e);
    observer(&first);
    let mut samples = vec![first];
    let mut last_sample_t = t;
    let ctx = EventContext { lambdas, nl, f0, e0 };

    let mut g_prev: Vec<f64> = events.iter().map(|ev| ctx.value(ev, &y)).collect::<Result<_>>()?;
    let mut g_scale: Vec<f64> = g_prev.iter().map(|g| g.abs()).collect();
    let mut q_prev = path_integrands(&sums0, nl)?;
    let mut s_acc = 0.0;
    let mut v_acc = 0.0;

    let mut output_times: Vec<f64> = cfg.output_times.iter().copied().filter(|&x| x > t && x <= t_end).collect();
    output_times.sort_by(f64::total_cmp);
    output_times.dedup();
    let mut next_output = 0;

    let mut stepper = dopri5::Dopri5::new(dim);
    let mut dense_steps = Vec::new();
    let mut event_log = Vec::new();
    let mut scratch = vec![0.0; dim];

    let mut h = if cfg.h_init > 0.0 {
        cfg.h_init
    } else {
        initial_step(&mut f, &y, &k1, cfg)?
    }
    .min(cfg.h_max);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut accepted: u64 = 0;
    let mut rejected: u64 = 0;
    let mut status = TrajectoryStatus::ReachedTEnd;
    let mut final_y: Option<(f64, Vec<f64>)> = None;

    'outer: while t < t_end {
        if accepted + rejected >= cfg.max_steps {
            status = TrajectoryStatus::StepFailure;
            break;
        }
        let h_min = H_MIN.max(4.0 * f64::EPSILON * t.abs());
        let mut last = false;
        if t + h >= t_end || t_end - (t + h) < h_min {
            h = t_end - t;
            last = true;
        }

        match stepper.attempt(&mut f, &y, &k1, h) {
            Err(e) if is_domain_error(&e) => {
                rejected += 1;
                last_rejected = true;
                h *= 0.25;
                if h < h_min {
                    status = TrajectoryStatus::DomainExit;
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        let err = stepper.error_norm(&y, cfg.rel_tol, cfg.abs_tol);
        if !err.is_finite() || err > 1.0 {
            rejected += 1;
            let fac11 = if err.is_finite() { err.powf(EXPO1) } else { 1.0 / FAC_MIN };
            h /= (1.0 / FAC_MIN).min(fac11 / SAFETY);
            last_rejected = true;
            if h < h_min {
                return Err(Error::StepFailure { t, h });
            }
            continue;
        }

        // Accepted.
        let t_new = if last { t_end } else { t + h };
        let step = stepper.dense_step(t, t_new, h, &y, &k1);
        let post = (|| -> Result<StepOutcome> {
            let sums1 = ModeSums::from_flat(lambdas, &step.y1);
            let q_end = path_integrands(&sums1, nl)?;
            let (ds, q_mid) = s_integral(&step, (t, q_prev), (t_new, q_end), lambdas, nl, &mut scratch)?;
            let dv = abs_sprime_integral(&step, (t, q_prev.1), (t_new, q_end.1), Some(q_mid.1), lambdas, &mut scratch, 3)?;

            // Interior points: event roots and output times in (t, t_new].
            let mut points: Vec<(f64, Option<usize>)> = Vec::new();
            let mut g_new = Vec::with_capacity(events.len());
            for (i, ev) in events.iter().enumerate() {
                let g1 = ctx.value(ev, &step.y1)?;
                let (roots, gmax) = ctx.roots(ev, &step, g_prev[i], g1, &mut scratch)?;
                g_scale[i] = g_scale[i].max(gmax);
                if roots.is_empty() && last && g1 != 0.0 && g1.abs() <= LANDING_TOL * g_scale[i] {
                    let before = ctx.value_at(ev, &step, t + 0.75 * (t_new - t), &mut scratch)?;
                    if heading_to_zero(ev.direction, before, g1) {
                        points.push((t_new, Some(i)));
                    }
                }
                points.extend(roots.into_iter().map(|r| (r, Some(i))));
                g_new.push(g1);
            }
            while next_output < output_times.len() && output_times[next_output] <= t_new {
                points.push((output_times[next_output], None));
                next_output += 1;
            }
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let stop_at = points
                .iter()
                .find(|(_, ev)| ev.is_some_and(|i| events[i].terminal))
                .map(|p| p.0);
            if let Some(ts) = stop_at {
                points.retain(|p| p.0 <= ts);
            }

            let mut interior = Vec::with_capacity(points.len());
            for &(tp, ev) in &points {
                let sample = if tp == t_new {
                    None
                } else {
                    let mut s = sample_inside(&step, tp, lambdas, nl, q_prev, &mut scratch)?;
                    s.s_accum += s_acc;
                    s.v_accum += v_acc;
                    s.residual = s.f - f0 + 0.25 * s.s_accum;
                    Some(s)
                };
                interior.push((tp, ev, sample));
            }
            let end_sample = {
                let mut s = FunctionalSample::from_sums(t_new, &sums1, nl)?;
                s.s_accum = s_acc + ds;
                s.v_accum = v_acc + dv;
                s.residual = s.f - f0 + 0.25 * s.s_accum;
                s
            };
            Ok(StepOutcome {
                interior,
                end_sample,
                stop_at,
                g_new,
                q_end,
            })
        })();
        let outcome = match post {
            Ok(o) => o,
            Err(e) if is_domain_error(&e) => {
                status = TrajectoryStatus::DomainExit;
                break;
            }
            Err(e) => return Err(e),
        };

        accepted += 1;
        if accepted.is_multiple_of(PROGRESS_EVERY) {
            info!("{accepted} steps accepted, t = {t_new:.6e}, h = {h:.3e}");
        }

        let mut end_needed = last || accepted.is_multiple_of(cfg.sample_every);
        for (tp, ev, sample) in &outcome.interior {
            let sample = match sample {
                Some(s) => *s,
                None => {
                    end_needed = true;
                    outcome.end_sample
                }
            };
            if *tp > last_sample_t && *tp < t_new {
                observer(&sample);
                samples.push(sample);
                last_sample_t = *tp;
            }
            if let Some(i) = ev {
                event_log.push(EventRecord {
                    t: *tp,
                    spec: *i,
                    kind: events[*i].kind,
                    sample,
                });
            }
        }

        if cfg.keep_dense {
            dense_steps.push(step.clone());
        }

        if let Some(ts) = outcome.stop_at {
            let state = if ts == t_new { step.y1.clone() } else { step.eval(ts)? };
            if ts == t_new {
                observer(&outcome.end_sample);
                samples.push(outcome.end_sample);
            }
            final_y = Some((ts, state));
            status = TrajectoryStatus::EventStop;
            break 'outer;
        }

        observer(&outcome.end_sample);
        if end_needed && t_new > last_sample_t {
            samples.push(outcome.end_sample);
            last_sample_t = t_new;
        }
        s_acc = outcome.end_sample.s_accum;
        v_acc = outcome.end_sample.v_accum;
        q_prev = outcome.q_end;
        g_prev = outcome.g_new;

        t = t_new;
        y.copy_from_slice(&step.y1);
        k1.copy_from_slice(&stepper.k7);

        // PI controller.
        let fac11 = err.powf(EXPO1);
        let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_new = h / fac;
        fac_old = err.max(1e-4);
        if last_rejected {
            h_new = h_new.min(h);
        }
        last_rejected = false;
        h = h_new.min(cfg.h_max);
    }

    // Make sure the last reached state is represented in the samples.
    if final_y.is_none() && t > last_sample_t {
        let mut s = FunctionalSample::from_sums(t, &ModeSums::from_flat(lambdas, &y), nl)?;
        s.s_accum = s_acc;
        s.v_accum = v_acc;
        s.residual = s.f - f0 + 0.25 * s_acc;
        samples.push(s);
    }
    let (t_final, y_final) = final_y.unwrap_or((t, y));
    Ok(Trajectory {
        samples,
        events: event_log,
        final_state: SpectralState::from_flat(t_final, Arc::clone(&modes), &y_final),
        status,
        accepted_steps: accepted,
        rejected_steps: rejected,
        dense: cfg.keep_dense.then_some(DenseOutput {
            modes,
            steps: dense_steps,
        }),
    })
}

struct StepOutcome {
    interior: Vec<(f64, Option<usize>, Option<FunctionalSample>)>,
    end_sample: FunctionalSample,
    stop_at: Option<f64>,
    g_new: Vec<f64>,
    q_end: (f64, f64),
}

/// Sample at `tp` inside `step`, with the path integrals over `[t0, tp]` only.
fn sample_inside(
    step: &DenseStep,
    tp: f64,
    lambdas: &[f64],
    nl: &Nonlinearity,
    q_start: (f64, f64),
    scratch: &mut [f64],
) -> Result<FunctionalSample> {
    step.eval_into(tp, scratch)?;
    let sums = ModeSums::from_flat(lambdas, scratch);
    let q_end = path_integrands(&sums, nl)?;
    let mut s = FunctionalSample::from_sums(tp, &sums, nl)?;
    let (ds, q_mid) = s_integral(step, (step.t0, q_start), (tp, q_end), lambdas, nl, scratch)?;
    s.s_accum = ds;
    s.v_accum = abs_sprime_integral(step, (step.t0, q_start.1), (tp, q_end.1), Some(q_mid.1), lambdas, scratch, 3)?;
    Ok(s)
}

/// Starting step from the local Lipschitz estimate of the right-hand side.
fn initial_step<F>(f: &mut F, y: &[f64], k1: &[f64], cfg: &IntegratorConfig) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len() as f64;
    let scaled_norm = |v: &[f64]| -> f64 {
        (v.iter()
            .zip(y)
            .map(|(&vi, &yi)| {
                let r = vi / (cfg.abs_tol + cfg.rel_tol * yi.abs());
                r * r
            })
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scaled_norm(y);
    let d1 = scaled_norm(k1);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.h_max);
    let y1: Vec<f64> = y.iter().zip(k1).map(|(&yi, &ki)| yi + h0 * ki).collect();
    let mut k2 = vec![0.0; y.len()];
    if f(&y1, &mut k2).is_err() {
        return Ok(h0);
    }
    let diff: Vec<f64> = k2.iter().zip(k1).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}
