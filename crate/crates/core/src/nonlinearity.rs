//! The nonlocal coefficient `m(s)`.
//!
//! A [`Nonlinearity`] evaluates `m`, `m'`, `m''` on an open interval `J`, the
//! derivatives of `1/√m` that enter the balance law for the corrected energy,
//! the antiderivative `M(s) = ∫₀ˢ m(h) dh` and its inverse.
//!
//! Built-in families:
//!
//! | family            | m(s)                    | 1/√m            |
//! |-------------------|-------------------------|-----------------|
//! | `pokhozhaev`      | `(C₁ s + C₂)⁻²`          | `C₁ s + C₂`     |
//! | `affine_plus(a)`  | `1 + a s`               |                 |
//! | `power_alpha(α)`  | `(1 + \|s\|^{2+α})⁻²`    | `1 + \|s\|^{2+α}` |
//! | `constant(m₀)`    | `m₀`                    | `m₀^{-1/2}`     |
//!
//! plus user supplied callbacks. Values are immutable after construction and
//! can be shared freely between threads.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance of the quadrature fallback for `M`.
pub const MASS_QUAD_TOL: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User supplied coefficient with its first two derivatives.
#[derive(Clone)]
pub struct CustomFamily {
    pub name: String,
    pub m: ScalarFn,
    pub dm: ScalarFn,
    pub d2m: ScalarFn,
}

impl fmt::Debug for CustomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFamily").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    Pokhozhaev { c1: f64, c2: f64 },
    AffinePlus { a: f64 },
    PowerAlpha { alpha: f64 },
    Constant { m0: f64 },
    Custom(CustomFamily),
}

/// Open interval `(lo, hi)`; `hi` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, s: f64) -> bool {
        s > self.lo && s < self.hi
    }
}

/// `(m, m', m'')` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MValues {
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Maximum errors of the analytic derivatives against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub step: f64,
    pub points: usize,
    pub max_err_m1: f64,
    pub max_err_m2: f64,
    pub max_err_g1: f64,
    pub max_err_g2: f64,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.max_err_m1
            .max(self.max_err_m2)
            .max(self.max_err_g1)
            .max(self.max_err_g2)
    }
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    family: Family,
    domain: Interval,
    coercive: bool,
}

impl Nonlinearity {
    /// `m(s) = (C₁ s + C₂)⁻²` on `{C₁ s + C₂ > 0} ∩ (-1, ∞)`.
    pub fn pokhozhaev(c1: f64, c2: f64) -> Result<Self> {
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(Error::config("nonlinearity", "C1 and C2 must be finite"));
        }
        if c1 == 0.0 && c2 == 0.0 {
            return Err(Error::config("nonlinearity", "C1, C2 must not both be zero"));
        }
        let mut domain = Interval {
            lo: -1.0,
            hi: f64::INFINITY,
        };
        if c1 > 0.0 {
            domain.lo = domain.lo.max(-c2 / c1);
        } else if c1 < 0.0 {
            domain.hi = -c2 / c1;
        } else if c2 < 0.0 {
            return Err(Error::config(
                "nonlinearity.C2",
                "C1 s + C2 must be positive on the admissible interval",
            ));
        }
        if domain.lo >= domain.hi {
            return Err(Error::config(
                "nonlinearity",
                "C1 s + C2 > 0 leaves an empty admissible interval",
            ));
        }
        Ok(Self {
            family: Family::Pokhozhaev { c1, c2 },
            domain,
            coercive: c1 == 0.0,
        })
    }

    /// `m(s) = 1 + a s`, `a ≥ 0`.
    pub fn affine_plus(a: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::config("nonlinearity.a", "a must be finite and ≥ 0"));
        }
        let eta = if a > 0.0 { (0.5 / a).min(1.0) } else { 1.0 };
        Ok(Self {
            family: Family::AffinePlus { a },
            domain: Interval {
                lo: -eta,
                hi: f64::INFINITY,
            },
            coercive: true,
        })
    }

    /// `m(s) = (1 + |s|^{2+α})⁻²`, `α > 0`. Not coercive.
    pub fn power_alpha(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config("nonlinearity.alpha", "alpha must be finite and > 0"));
        }
        Ok(Self {
            family: Family::PowerAlpha { alpha },
            domain: Interval {
                lo: -1.0,
                hi: f64::INFINITY,
            },
            coercive: false,
        })
    }

    pub fn constant(m0: f64) -> Result<Self> {
        if !(m0.is_finite() && m0 > 0.0) {
            return Err(Error::config("nonlinearity.m0", "m0 must be finite and > 0"));
        }
        Ok(Self {
            family: Family::Constant { m0 },
            domain: Interval {
                lo: -1.0,
                hi: f64::INFINITY,
            },
            coercive: true,
        })
    }

    /// Coefficient given by callbacks for `m`, `m'` and `m''`. `M` falls back to
    /// adaptive quadrature.
    pub fn custom<M, D1, D2>(name: &str, m: M, dm: D1, d2m: D2, domain: Interval, coercive: bool) -> Result<Self>
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(domain.lo < domain.hi) || domain.lo.is_nan() {
            return Err(Error::config("nonlinearity", "empty admissible interval"));
        }
        Ok(Self {
            family: Family::Custom(CustomFamily {
                name: name.to_owned(),
                m: Arc::new(m),
                dm: Arc::new(dm),
                d2m: Arc::new(d2m),
            }),
            domain,
            coercive,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    /// Whether `∫₀^∞ m(h) dh = +∞`.
    pub fn coercive_at_infinity(&self) -> bool {
        self.coercive
    }

    pub fn name(&self) -> String {
        match &self.family {
            Family::Pokhozhaev { .. } => "pokhozhaev".into(),
            Family::AffinePlus { .. } => "affine_plus".into(),
            Family::PowerAlpha { .. } => "power_alpha".into(),
            Family::Constant { .. } => "constant".into(),
            Family::Custom(c) => c.name.clone(),
        }
    }

    /// `(C₁, C₂)` for the Pokhozhaev family.
    pub fn pokhozhaev_coefficients(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::Pokhozhaev { c1, c2 } => Some((c1, c2)),
            _ => None,
        }
    }

    /// Exponent `α` of the power family, used for the lifespan scaling.
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            Family::PowerAlpha { alpha } => Some(alpha),
            _ => None,
        }
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if self.domain.contains(s) {
            Ok(())
        } else {
            Err(Error::Domain {
                s,
                lo: self.domain.lo,
                hi: self.domain.hi,
            })
        }
    }

    /// `m(s)`, `m'(s)`, `m''(s)`.
    pub fn eval_m(&self, s: f64) -> Result<MValues> {
        self.check_domain(s)?;
        let v = match &self.family {
            Family::Pokhozhaev { c1, c2 } => {
                let w = c1 * s + c2;
                let iw = 1.0 / w;
                let m = iw * iw;
                MValues {
                    m,
                    m1: -2.0 * c1 * m * iw,
                    m2: 6.0 * c1 * c1 * m * m,
                }
            }
            Family::AffinePlus { a } => MValues {
                m: 1.0 + a * s,
                m1: *a,
                m2: 0.0,
            },
            Family::PowerAlpha { alpha } => {
                let (w, w1, w2) = power_w(*alpha, s);
                let iw = 1.0 / w;
                let m = iw * iw;
                MValues {
                    m,
                    m1: -2.0 * m * iw * w1,
                    m2: 6.0 * m * m * w1 * w1 - 2.0 * m * iw * w2,
                }
            }
            Family::Constant { m0 } => MValues {
                m: *m0,
                m1: 0.0,
                m2: 0.0,
            },
            Family::Custom(c) => MValues {
                m: (c.m)(s),
                m1: (c.dm)(s),
                m2: (c.d2m)(s),
            },
        };
        if !(v.m > 0.0) {
            return Err(Error::Positivity { s, m: v.m });
        }
        Ok(v)
    }

    /// `(d/ds (1/√m), d²/ds² (1/√m))`.
    ///
    /// Families with a closed form for `1/√m` differentiate it directly (so the
    /// Pokhozhaev family returns an exact zero second derivative); the others go
    /// through the chain rule
    /// `g₁ = -m'/(2 m^{3/2})`, `g₂ = 3 m'²/(4 m^{5/2}) - m''/(2 m^{3/2})`.
    pub fn inv_sqrt_derivs(&self, s: f64) -> Result<(f64, f64)> {
        match &self.family {
            Family::Pokhozhaev { c1, .. } => {
                self.check_domain(s)?;
                Ok((*c1, 0.0))
            }
            Family::PowerAlpha { alpha } => {
                self.check_domain(s)?;
                let (_, w1, w2) = power_w(*alpha, s);
                Ok((w1, w2))
            }
            Family::Constant { .. } => {
                self.check_domain(s)?;
                Ok((0.0, 0.0))
            }
            _ => {
                let MValues { m, m1, m2 } = self.eval_m(s)?;
                Ok(chain_rule_inv_sqrt(m, m1, m2))
            }
        }
    }

    /// `M(s) = ∫₀ˢ m(h) dh`. Requires `0 ∈ J` and `s` in the closure of `J`.
    pub fn mass(&self, s: f64) -> Result<f64> {
        self.check_domain(0.0)?;
        if !(s >= self.domain.lo && s <= self.domain.hi) || !s.is_finite() {
            return Err(Error::Domain {
                s,
                lo: self.domain.lo,
                hi: self.domain.hi,
            });
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(match &self.family {
            Family::Pokhozhaev { c1, c2 } => s / (c2 * (c1 * s + c2)),
            Family::AffinePlus { a } => s + 0.5 * a * s * s,
            Family::Constant { m0 } => m0 * s,
            Family::PowerAlpha { alpha } => {
                let q = 2.0 + alpha;
                quad::integrate(
                    |h| {
                        let w = 1.0 + h.abs().powf(q);
                        1.0 / (w * w)
                    },
                    0.0,
                    s,
                    MASS_QUAD_TOL,
                    0.0,
                )
            }
            Family::Custom(c) => quad::integrate(|h| (c.m)(h), 0.0, s, MASS_QUAD_TOL, 0.0),
        })
    }

    /// `sup_{s ∈ J, s ≥ 0} M(s)`; `+∞` when `M` is unbounded on `J ∩ [0, ∞)`.
    pub fn sup_mass(&self) -> f64 {
        match &self.family {
            Family::Pokhozhaev { c1, c2 } => {
                if *c1 > 0.0 {
                    1.0 / (c1 * c2)
                } else {
                    f64::INFINITY
                }
            }
            Family::AffinePlus { .. } | Family::Constant { .. } => f64::INFINITY,
            Family::PowerAlpha { alpha } => {
                // ∫₀^∞ (1 + x^q)⁻² dx = (1 - 1/q) (π/q) / sin(π/q)
                let q = 2.0 + alpha;
                let r = std::f64::consts::PI / q;
                (1.0 - 1.0 / q) * r / r.sin()
            }
            Family::Custom(c) => {
                if self.coercive {
                    f64::INFINITY
                } else if self.domain.hi.is_finite() {
                    quad::integrate(|h| (c.m)(h), 0.0, self.domain.hi, MASS_QUAD_TOL, 0.0)
                } else {
                    quad::integrate_to_infinity(|h| (c.m)(h), 0.0, MASS_QUAD_TOL, 0.0)
                }
            }
        }
    }

    /// Solves `M(s) = y` for `s ≥ 0` by bracketing and safeguarded Newton steps
    /// (`M' = m`). Fails with a range error when `y ≥ sup M`.
    pub fn mass_inverse(&self, y: f64) -> Result<f64> {
        let sup = self.sup_mass();
        if !(y >= 0.0) || y >= sup || !y.is_finite() {
            return Err(Error::Range {
                what: "M⁻¹ argument",
                value: y,
                lo: 0.0,
                hi: sup,
            });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let target_tol = 1e-12 * y.max(1.0);

        // Bracket [lo, hi] with M(lo) ≤ y ≤ M(hi).
        let mut lo = 0.0;
        let mut hi = y / self.eval_m(0.0)?.m;
        let upper = self.domain.hi;
        if hi >= upper {
            hi = 0.5 * upper;
        }
        let mut expansions = 0;
        while self.mass(hi)? < y {
            lo = hi;
            hi = if upper.is_finite() {
                0.5 * (hi + upper)
            } else {
                2.0 * hi
            };
            expansions += 1;
            if expansions > 2000 {
                return Err(Error::Range {
                    what: "M⁻¹ argument",
                    value: y,
                    lo: 0.0,
                    hi: sup,
                });
            }
        }

        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = self.mass(s)? - y;
            let correction = r / self.eval_m(s)?.m;
            if r.abs() <= target_tol && correction.abs() <= 1e-14 * s {
                return Ok(s);
            }
            if r > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - correction;
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(s);
            }
        }
        Ok(s)
    }

    /// Compares the analytic `m'`, `m''`, `g₁`, `g₂` with central differences of
    /// step `h` over `grid`. Each derivative is differenced from the next lower
    /// analytic one, and errors are relative above unit magnitude and absolute
    /// below it.
    pub fn check_derivatives(&self, grid: &[f64], h: f64) -> Result<DerivativeReport> {
        if !(h > 0.0) {
            return Err(Error::config("check_derivatives.h", "step must be positive"));
        }
        let err = |analytic: f64, fd: f64| (analytic - fd).abs() / analytic.abs().max(1.0);
        let inv_sqrt = |s: f64| -> Result<f64> { Ok(1.0 / self.eval_m(s)?.m.sqrt()) };
        let mut report = DerivativeReport {
            step: h,
            points: grid.len(),
            max_err_m1: 0.0,
            max_err_m2: 0.0,
            max_err_g1: 0.0,
            max_err_g2: 0.0,
        };
        for &s in grid {
            let here = self.eval_m(s)?;
            let plus = self.eval_m(s + h)?;
            let minus = self.eval_m(s - h)?;
            let (g1, g2) = self.inv_sqrt_derivs(s)?;
            let (g1p, _) = self.inv_sqrt_derivs(s + h)?;
            let (g1m, _) = self.inv_sqrt_derivs(s - h)?;

            let fd_m1 = (plus.m - minus.m) / (2.0 * h);
            let fd_m2 = (plus.m1 - minus.m1) / (2.0 * h);
            let fd_g1 = (inv_sqrt(s + h)? - inv_sqrt(s - h)?) / (2.0 * h);
            let fd_g2 = (g1p - g1m) / (2.0 * h);

            report.max_err_m1 = report.max_err_m1.max(err(here.m1, fd_m1));
            report.max_err_m2 = report.max_err_m2.max(err(here.m2, fd_m2));
            report.max_err_g1 = report.max_err_g1.max(err(g1, fd_g1));
            report.max_err_g2 = report.max_err_g2.max(err(g2, fd_g2));
        }
        Ok(report)
    }
}

/// `w = 1 + |s|^q` and its first two derivatives, `q = 2 + α`.
fn power_w(alpha: f64, s: f64) -> (f64, f64, f64) {
    let q = 2.0 + alpha;
    let a = s.abs();
    let w = 1.0 + a.powf(q);
    let w1 = q * a.powf(q - 1.0) * s.signum();
    let w2 = q * (q - 1.0) * a.powf(alpha);
    (w, if s == 0.0 { 0.0 } else { w1 }, w2)
}

pub(crate) fn chain_rule_inv_sqrt(m: f64, m1: f64, m2: f64) -> (f64, f64) {
    let sq = m.sqrt();
    let m32 = m * sq;
    let m52 = m32 * m;
    (-m1 / (2.0 * m32), 0.75 * m1 * m1 / m52 - m2 / (2.0 * m32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn builtins() -> Vec<Nonlinearity> {
        vec![
            Nonlinearity::pokhozhaev(1.0, 1.0).unwrap(),
            Nonlinearity::pokhozhaev(1.0, 2.0).unwrap(),
            Nonlinearity::pokhozhaev(-0.2, 1.0).unwrap(),
            Nonlinearity::affine_plus(1.0).unwrap(),
            Nonlinearity::affine_plus(0.0).unwrap(),
            Nonlinearity::power_alpha(1.0).unwrap(),
            Nonlinearity::power_alpha(0.5).unwrap(),
            Nonlinearity::constant(3.0).unwrap(),
        ]
    }

    /// Central difference oracle with step `h`.
    fn fd(f: impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
        (f(s + h) - f(s - h)) / (2.0 * h)
    }

    #[test]
    fn pokhozhaev_at_zero() {
        let nl = Nonlinearity::pokhozhaev(1.0, 1.0).unwrap();
        let v = nl.eval_m(0.0).unwrap();
        assert_eq!((v.m, v.m1, v.m2), (1.0, -2.0, 6.0));
    }

    #[test]
    fn affine_at_three() {
        let v = Nonlinearity::affine_plus(1.0).unwrap().eval_m(3.0).unwrap();
        assert_eq!((v.m, v.m1, v.m2), (4.0, 1.0, 0.0));
    }

    #[test]
    fn power_alpha_matches_finite_differences() {
        let nl = Nonlinearity::power_alpha(1.0).unwrap();
        let s = 0.5;
        let h = 1e-6;
        let v = nl.eval_m(s).unwrap();
        let m = |x: f64| nl.eval_m(x).unwrap().m;
        let m1 = |x: f64| nl.eval_m(x).unwrap().m1;
        assert_relative_eq!(v.m, 0.790_123_456_790_123_5, max_relative = 1e-15);
        assert_relative_eq!(v.m1, fd(m, s, h), max_relative = 1e-6);
        assert_relative_eq!(v.m2, fd(m1, s, h), max_relative = 1e-6);
    }

    #[test]
    fn inv_sqrt_derivs_closed_forms() {
        let nl = Nonlinearity::pokhozhaev(2.0, 1.0).unwrap();
        assert_eq!(nl.inv_sqrt_derivs(1.0).unwrap(), (2.0, 0.0));

        let nl = Nonlinearity::power_alpha(1.0).unwrap();
        let s = 0.3;
        let h = 1e-6;
        let g = |x: f64| 1.0 / nl.eval_m(x).unwrap().m.sqrt();
        let (g1, g2) = nl.inv_sqrt_derivs(s).unwrap();
        assert_relative_eq!(g1, fd(g, s, h), max_relative = 1e-6);
        let second = (g(s + 1e-4) - 2.0 * g(s) + g(s - 1e-4)) / 1e-8;
        assert_relative_eq!(g2, second, max_relative = 1e-6);
        // 1/√m = 1 + s³ gives g₁ = 3s², g₂ = 6s.
        assert_relative_eq!(g1, 0.27, max_relative = 1e-14);
        assert_relative_eq!(g2, 1.8, max_relative = 1e-14);
    }

    #[test]
    fn chain_rule_agrees_with_direct_forms() {
        for nl in builtins() {
            for s in [0.0, 0.1, 0.7, 1.3] {
                if !nl.domain().contains(s) {
                    continue;
                }
                let v = nl.eval_m(s).unwrap();
                let (c1, c2) = chain_rule_inv_sqrt(v.m, v.m1, v.m2);
                let (g1, g2) = nl.inv_sqrt_derivs(s).unwrap();
                assert!((c1 - g1).abs() <= 1e-12 * g1.abs().max(1.0), "{} g1 at {s}", nl.name());
                assert!((c2 - g2).abs() <= 1e-12 * g2.abs().max(1.0), "{} g2 at {s}", nl.name());
            }
        }
    }

    #[test]
    fn mass_closed_forms() {
        assert_eq!(Nonlinearity::affine_plus(1.0).unwrap().mass(2.0).unwrap(), 4.0);
        assert_eq!(Nonlinearity::constant(3.0).unwrap().mass(5.0).unwrap(), 15.0);
        let p = Nonlinearity::pokhozhaev(1.0, 1.0).unwrap();
        assert_relative_eq!(p.mass(1.0).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn mass_power_alpha_against_high_precision_quadrature() {
        // ∫₀¹ (1 + x³)⁻² dx evaluated to 30 digits.
        let nl = Nonlinearity::power_alpha(1.0).unwrap();
        assert_relative_eq!(nl.mass(1.0).unwrap(), 0.723_765_898_843_147_4, max_relative = 1e-12);
        assert_relative_eq!(nl.sup_mass(), 0.806_133_050_770_763_5, max_relative = 1e-14);
    }

    #[test]
    fn mass_inverse_examples() {
        let a = Nonlinearity::affine_plus(1.0).unwrap();
        assert_relative_eq!(a.mass_inverse(4.0).unwrap(), 2.0, max_relative = 1e-12);
        for nl in builtins() {
            assert_eq!(nl.mass_inverse(0.0).unwrap(), 0.0);
        }
        // M(s) = s / (1 + s) for pokhozhaev(1, 1); bisection oracle on [0, 10].
        let p = Nonlinearity::pokhozhaev(1.0, 1.0).unwrap();
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid / (1.0 + mid) < 0.4 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(p.mass_inverse(0.4).unwrap(), lo, max_relative = 1e-12);
        assert!((p.mass(p.mass_inverse(0.4).unwrap()).unwrap() - 0.4).abs() <= 1e-12);
    }

    #[test]
    fn mass_inverse_rejects_values_beyond_supremum() {
        let p = Nonlinearity::pokhozhaev(1.0, 1.0).unwrap();
        assert!(matches!(p.mass_inverse(1.0), Err(Error::Range { .. })));
        assert!(matches!(p.mass_inverse(1.5), Err(Error::Range { .. })));
        let pa = Nonlinearity::power_alpha(1.0).unwrap();
        assert!(matches!(pa.mass_inverse(0.81), Err(Error::Range { .. })));
        assert!(pa.mass_inverse(0.8).is_ok());
        assert!(matches!(pa.mass_inverse(-0.1), Err(Error::Range { .. })));
    }

    #[test]
    fn domain_errors() {
        let p = Nonlinearity::pokhozhaev(-1.0, 1.0).unwrap();
        assert_eq!(p.domain().hi, 1.0);
        assert!(matches!(p.eval_m(1.0), Err(Error::Domain { .. })));
        assert!(matches!(p.eval_m(1.5), Err(Error::Domain { .. })));
        assert!(p.eval_m(0.99).is_ok());
        assert!(p.sup_mass().is_infinite());
        assert!(matches!(
            Nonlinearity::affine_plus(2.0).unwrap().eval_m(-0.3),
            Err(Error::Domain { .. })
        ));
        assert!(Nonlinearity::pokhozhaev(0.0, 0.0).is_err());
        assert!(Nonlinearity::pokhozhaev(0.0, -1.0).is_err());
    }

    #[test]
    fn custom_positivity_error() {
        let nl = Nonlinearity::custom(
            "bad",
            |s| 1.0 - s,
            |_| -1.0,
            |_| 0.0,
            Interval { lo: -1.0, hi: 5.0 },
            false,
        )
        .unwrap();
        assert!(nl.eval_m(0.5).is_ok());
        assert!(matches!(nl.eval_m(2.0), Err(Error::Positivity { .. })));
    }

    #[test]
    fn custom_mass_uses_quadrature() {
        let nl = Nonlinearity::custom(
            "exp",
            |s: f64| (-s).exp(),
            |s: f64| -(-s).exp(),
            |s: f64| (-s).exp(),
            Interval {
                lo: -1.0,
                hi: f64::INFINITY,
            },
            false,
        )
        .unwrap();
        assert_relative_eq!(nl.mass(2.0).unwrap(), 1.0 - (-2.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(nl.sup_mass(), 1.0, max_relative = 1e-10);
        let s = nl.mass_inverse(0.5).unwrap();
        assert_relative_eq!(s, 2.0f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn derivative_gate_examples() {
        let c = Nonlinearity::constant(1.0).unwrap();
        let r = c.check_derivatives(&[0.1, 0.5, 1.7], 1e-5).unwrap();
        assert_eq!(r.max_err_m1, 0.0);
        assert_eq!(r.max_err_m2, 0.0);

        let grid: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
        let a = Nonlinearity::affine_plus(1.0).unwrap();
        assert!(a.check_derivatives(&grid, 1e-5).unwrap().max_error() <= 1e-6);

        let p = Nonlinearity::pokhozhaev(1.0, 2.0).unwrap();
        assert!(p.check_derivatives(&[0.0, 0.5, 1.0], 1e-5).unwrap().max_error() <= 1e-6);
    }

    #[test]
    fn positivity_on_grid() {
        for nl in builtins() {
            let hi = nl.domain().hi.min(10.0);
            for i in 1..1000 {
                let s = hi * i as f64 / 1000.0;
                assert!(nl.eval_m(s).unwrap().m > 0.0);
            }
        }
    }

    #[test]
    fn pokhozhaev_linearity() {
        let nl = Nonlinearity::pokhozhaev(1.5, 0.5).unwrap();
        for i in 0..200 {
            let s = 0.05 * i as f64;
            let inv = 1.0 / nl.eval_m(s).unwrap().m.sqrt();
            assert!((inv - (1.5 * s + 0.5)).abs() <= 1e-12 * (1.5 * s + 0.5));
            assert_eq!(nl.inv_sqrt_derivs(s).unwrap().1, 0.0);
        }
    }

    #[test]
    fn power_alpha_second_derivative_decay() {
        for alpha in [0.5, 1.0, 2.0] {
            let nl = Nonlinearity::power_alpha(alpha).unwrap();
            let limit = (2.0 + alpha) * (1.0 + alpha);
            for s in [1e-2, 1e-3, 1e-4] {
                let ratio = nl.inv_sqrt_derivs(s).unwrap().1 / s.powf(alpha);
                assert!((ratio / limit - 1.0).abs() < 0.05);
            }
        }
    }

    proptest! {
        #[test]
        fn mass_is_strictly_increasing(s1 in 0.0f64..5.0, ds in 1e-6f64..5.0) {
            for nl in builtins() {
                let s2 = s1 + ds;
                if s2 >= nl.domain().hi { continue; }
                prop_assert!(nl.mass(s2).unwrap() > nl.mass(s1).unwrap());
            }
        }

        #[test]
        fn mass_round_trip(s in 1e-3f64..4.0) {
            for nl in builtins() {
                if s >= nl.domain().hi { continue; }
                let y = nl.mass(s).unwrap();
                let back = nl.mass_inverse(y).unwrap();
                prop_assert!((back - s).abs() <= 1e-10 * s, "{}: {} vs {}", nl.name(), back, s);
            }
        }
    }
}
