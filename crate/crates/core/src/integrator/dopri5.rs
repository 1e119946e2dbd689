//! Dormand–Prince 5(4) step with the 4th-order continuous extension.

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Stage workspace for a system of fixed dimension.
pub(crate) struct Dopri5 {
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    k5: Vec<f64>,
    k6: Vec<f64>,
    pub(crate) k7: Vec<f64>,
    tmp: Vec<f64>,
    pub(crate) y1: Vec<f64>,
    pub(crate) err: Vec<f64>,
}

impl Dopri5 {
    pub(crate) fn new(dim: usize) -> Self {
        let z = || vec![0.0; dim];
        Self {
            k2: z(),
            k3: z(),
            k4: z(),
            k5: z(),
            k6: z(),
            k7: z(),
            tmp: z(),
            y1: z(),
            err: z(),
        }
    }

    /// One attempted step of size `h` from `y` with `k1 = f(y)`. Fills `y1`,
    /// `k7 = f(y1)` and the embedded error vector. A failing right-hand side
    /// aborts the attempt.
    pub(crate) fn attempt<F>(&mut self, f: &mut F, y: &[f64], k1: &[f64], h: f64) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        for i in 0..n {
            self.tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * (A31 * k1[i] + A32 * self.k2[i]);
        }
        f(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * (A41 * k1[i] + A42 * self.k2[i] + A43 * self.k3[i]);
        }
        f(&self.tmp, &mut self.k4)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * (A51 * k1[i] + A52 * self.k2[i] + A53 * self.k3[i] + A54 * self.k4[i]);
        }
        f(&self.tmp, &mut self.k5)?;
        for i in 0..n {
            self.tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * self.k2[i] + A63 * self.k3[i] + A64 * self.k4[i] + A65 * self.k5[i]);
        }
        f(&self.tmp, &mut self.k6)?;
        for i in 0..n {
            self.y1[i] = y[i]
                + h * (A71 * k1[i] + A73 * self.k3[i] + A74 * self.k4[i] + A75 * self.k5[i] + A76 * self.k6[i]);
        }
        f(&self.y1, &mut self.k7)?;
        for i in 0..n {
            self.err[i] = h
                * (E1 * k1[i] + E3 * self.k3[i] + E4 * self.k4[i] + E5 * self.k5[i] + E6 * self.k6[i] + E7 * self.k7[i]);
        }
        Ok(())
    }

    /// RMS of the error vector scaled by `atol + rtol max(|y|, |y1|)`.
    pub(crate) fn error_norm(&self, y: &[f64], rtol: f64, atol: f64) -> f64 {
        let n = y.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let sc = atol + rtol * y[i].abs().max(self.y1[i].abs());
                let r = self.err[i] / sc;
                r * r
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    /// Interpolant of the last successful attempt over `[t0, t1]`.
    pub(crate) fn dense_step(&self, t0: f64, t1: f64, h: f64, y: &[f64], k1: &[f64]) -> DenseStep {
        let n = y.len();
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let ydiff = self.y1[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * self.k7[i] - bspl;
            r5[i] = h
                * (D1 * k1[i] + D3 * self.k3[i] + D4 * self.k4[i] + D5 * self.k5[i] + D6 * self.k6[i] + D7 * self.k7[i]);
        }
        DenseStep {
            t0,
            t1,
            h,
            y0: y.to_vec(),
            y1: self.y1.clone(),
            coeffs: [r2, r3, r4, r5],
        }
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    h: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    coeffs: [Vec<f64>; 4],
}

impl DenseStep {
    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.t1 { (self.t0, self.t1) } else { (self.t1, self.t0) };
        t >= lo && t <= hi
    }

    /// State at `t ∈ [t0, t1]`; the stored endpoint states are returned exactly.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !self.contains(t) {
            return Err(Error::Range {
                what: "dense output time",
                value: t,
                lo: self.t0.min(self.t1),
                hi: self.t0.max(self.t1),
            });
        }
        if t == self.t0 {
            out.copy_from_slice(&self.y0);
            return Ok(());
        }
        if t == self.t1 {
            out.copy_from_slice(&self.y1);
            return Ok(());
        }
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r2, r3, r4, r5] = &self.coeffs;
        for i in 0..out.len() {
            out[i] = self.y0[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.y0.len()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn single_step_is_fifth_order() {
        // Local error of the propagated (5th order) solution scales like h⁶.
        let mut errs = Vec::new();
        for h in [0.2, 0.1] {
            let mut st = Dopri5::new(2);
            let y = [1.0, 0.0];
            let k1 = [0.0, -1.0];
            st.attempt(&mut oscillator, &y, &k1, h).unwrap();
            errs.push((st.y1[0] - f64::cos(h)).abs().max((st.y1[1] + f64::sin(h)).abs()));
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 5.5 && order < 6.5, "observed {order}");
    }

    #[test]
    fn dense_output_endpoints_and_midpoint() {
        let mut st = Dopri5::new(2);
        let y = [1.0, 0.0];
        let k1 = [0.0, -1.0];
        let h = 0.1;
        st.attempt(&mut oscillator, &y, &k1, h).unwrap();
        let d = st.dense_step(0.0, h, h, &y, &k1);
        assert_eq!(d.eval(0.0).unwrap(), y.to_vec());
        assert_eq!(d.eval(h).unwrap(), st.y1);
        let mid = d.eval(0.05).unwrap();
        assert!((mid[0] - f64::cos(0.05)).abs() < 1e-8);
        assert!((mid[1] + f64::sin(0.05)).abs() < 1e-8);
        assert!(matches!(d.eval(0.2), Err(Error::Range { .. })));
        assert!(matches!(d.eval(-1e-3), Err(Error::Range { .. })));
    }
}
