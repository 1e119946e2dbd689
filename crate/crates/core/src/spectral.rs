//! Galerkin truncation in the Dirichlet sine basis of `(0, π)ⁿ`.
//!
//! With the orthonormal eigenfunctions `e_k` of `-Δ` (eigenvalue
//! `λ_k = Σ kᵢ²`) and `u = Σ c_k e_k`, `u_t = Σ v_k e_k`:
//!
//! ```text
//! ∫|∇u|²   = Σ λ c²        ∫|Δu|²    = Σ λ² c²
//! ∫|∇u_t|² = Σ λ v²        ∫∇u·∇u_t  = Σ λ c v        ∫|u_t|² = Σ v²
//! ```

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

/// A multi-index `k` with its Laplacian eigenvalue `λ = Σ kᵢ²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeIndex {
    pub k: Vec<u32>,
    pub lambda: f64,
}

impl ModeIndex {
    pub fn new(k: Vec<u32>) -> Result<Self> {
        if k.is_empty() || k.contains(&0) {
            return Err(Error::config("initial_data.modes.k", "mode indices must be positive"));
        }
        let lambda = k.iter().map(|&ki| (ki as f64) * (ki as f64)).sum();
        Ok(Self { k, lambda })
    }
}

/// Ordered set of modes in one spatial dimension `n ∈ {1, 2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    dim: usize,
    modes: Vec<ModeIndex>,
    lambdas: Vec<f64>,
}

impl ModeSet {
    /// The full box `{1..=cutoff}ⁿ` in lexicographic order.
    pub fn full_box(dim: usize, cutoff: u32) -> Result<Self> {
        check_dim(dim)?;
        if cutoff == 0 {
            return Err(Error::config("initial_data.random.cutoff", "cutoff must be ≥ 1"));
        }
        let mut modes = Vec::new();
        if dim == 1 {
            for k in 1..=cutoff {
                modes.push(ModeIndex::new(vec![k])?);
            }
        } else {
            for k1 in 1..=cutoff {
                for k2 in 1..=cutoff {
                    modes.push(ModeIndex::new(vec![k1, k2])?);
                }
            }
        }
        Ok(Self::from_modes(dim, modes))
    }

    pub fn from_indices(dim: usize, indices: Vec<Vec<u32>>) -> Result<Self> {
        check_dim(dim)?;
        if indices.is_empty() {
            return Err(Error::config("initial_data.modes", "empty mode set"));
        }
        let mut modes = Vec::with_capacity(indices.len());
        for k in indices {
            if k.len() != dim {
                return Err(Error::config(
                    "initial_data.modes.k",
                    format!("index {k:?} does not have dimension {dim}"),
                ));
            }
            let mode = ModeIndex::new(k)?;
            if modes.iter().any(|m: &ModeIndex| m.k == mode.k) {
                return Err(Error::config(
                    "initial_data.modes.k",
                    format!("duplicate mode {:?}", mode.k),
                ));
            }
            modes.push(mode);
        }
        Ok(Self::from_modes(dim, modes))
    }

    fn from_modes(dim: usize, modes: Vec<ModeIndex>) -> Self {
        let lambdas = modes.iter().map(|m| m.lambda).collect();
        Self { dim, modes, lambdas }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::config("initial_data.dimension", "dimension must be 1 or 2"))
    }
}

/// Truncated solution at time `t`: `c` holds `u`, `v` holds `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub t: f64,
    pub modes: Arc<ModeSet>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
}

impl SpectralState {
    pub fn new(t: f64, modes: Arc<ModeSet>, c: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if c.len() != modes.len() || v.len() != modes.len() {
            return Err(Error::config("state", "one coefficient and one velocity per mode required"));
        }
        if c.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::config("state", "non-finite coefficient"));
        }
        Ok(Self { t, modes, c, v })
    }

    /// `[c₁..c_K, v₁..v_K]`, the layout used by the integrator.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.c.len());
        y.extend_from_slice(&self.c);
        y.extend_from_slice(&self.v);
        y
    }

    pub fn from_flat(t: f64, modes: Arc<ModeSet>, y: &[f64]) -> Self {
        let k = modes.len();
        debug_assert_eq!(y.len(), 2 * k);
        Self {
            t,
            c: y[..k].to_vec(),
            v: y[k..].to_vec(),
            modes,
        }
    }

    pub fn sums(&self) -> ModeSums {
        ModeSums::new(self.modes.lambdas(), &self.c, &self.v)
    }
}

/// The mode sums every functional is built from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeSums {
    /// `Σ λ c²`
    pub s: f64,
    /// `Σ λ c v`
    pub cross: f64,
    /// `Σ λ v²`
    pub grad_ut: f64,
    /// `Σ λ² c²`
    pub lap_u: f64,
    /// `Σ v²`
    pub ut: f64,
}

impl ModeSums {
    pub fn new(lambdas: &[f64], c: &[f64], v: &[f64]) -> Self {
        let mut out = ModeSums::default();
        for ((&l, &ck), &vk) in lambdas.iter().zip(c).zip(v) {
            let lc = l * ck;
            out.s += lc * ck;
            out.cross += lc * vk;
            out.grad_ut += l * vk * vk;
            out.lap_u += lc * lc;
            out.ut += vk * vk;
        }
        out
    }

    /// From the flat `[c; v]` layout.
    pub fn from_flat(lambdas: &[f64], y: &[f64]) -> Self {
        let k = lambdas.len();
        Self::new(lambdas, &y[..k], &y[k..])
    }

    pub fn s_prime(&self) -> f64 {
        2.0 * self.cross
    }
}

/// All tracked functionals at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalSample {
    pub t: f64,
    pub s: f64,
    pub s_prime: f64,
    pub s_second: f64,
    /// Second-order energy `m^{-1/2} Σλv² + m^{1/2} Σλ²c²`.
    pub e: f64,
    /// `E - ¼ g₁(s) s'²`.
    pub f: f64,
    /// Pokhozhaev functional, only for that family.
    pub i: Option<f64>,
    /// First-order energy `Σv² + M(s)`.
    pub h1: f64,
    /// `∫₀ᵗ g₂(s) s'³ dτ`, filled in by the integrator.
    pub s_accum: f64,
    /// `∫₀ᵗ |s'| dτ`, filled in by the integrator.
    pub v_accum: f64,
    /// `F(t) - F(0) + S(t)/4`, filled in by the integrator.
    pub residual: f64,
    /// `Σ λ v²`.
    #[serde(skip)]
    pub grad_ut: f64,
    /// `Σ λ² c²`.
    #[serde(skip)]
    pub lap_u: f64,
}

/// `(E, F)` from the mode sums, without touching `M`.
pub fn second_order_energies(sums: &ModeSums, nl: &Nonlinearity) -> Result<(f64, f64)> {
    let sqrt_m = nl.eval_m(sums.s)?.m.sqrt();
    let (g1, _) = nl.inv_sqrt_derivs(sums.s)?;
    let e = sums.grad_ut / sqrt_m + sqrt_m * sums.lap_u;
    let sp = sums.s_prime();
    Ok((e, e - 0.25 * g1 * sp * sp))
}

impl FunctionalSample {
    pub fn from_sums(t: f64, sums: &ModeSums, nl: &Nonlinearity) -> Result<Self> {
        let s = sums.s;
        let mv = nl.eval_m(s)?;
        let s_prime = sums.s_prime();
        let (e, f) = second_order_energies(sums, nl)?;
        let i = nl.pokhozhaev_coefficients().map(|(c1, c2)| {
            let w = c1 * s + c2;
            w * sums.grad_ut + sums.lap_u / w - c1 * sums.cross * sums.cross
        });
        Ok(Self {
            t,
            s,
            s_prime,
            s_second: 2.0 * sums.grad_ut - 2.0 * mv.m * sums.lap_u,
            e,
            f,
            i,
            h1: sums.ut + nl.mass(s)?,
            s_accum: 0.0,
            v_accum: 0.0,
            residual: 0.0,
            grad_ut: sums.grad_ut,
            lap_u: sums.lap_u,
        })
    }
}

/// Evaluates every functional of `state`; the path integrals are left at zero.
pub fn observables(state: &SpectralState, nl: &Nonlinearity) -> Result<FunctionalSample> {
    FunctionalSample::from_sums(state.t, &state.sums(), nl)
}

/// `dc_k = v_k`, `dv_k = -m(s) λ_k c_k`.
pub fn rhs(state: &SpectralState, nl: &Nonlinearity) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = state.to_flat();
    let mut dy = vec![0.0; y.len()];
    rhs_flat(state.modes.lambdas(), nl, &y, &mut dy)?;
    let k = state.c.len();
    let dv = dy.split_off(k);
    Ok((dy, dv))
}

/// In-place right-hand side on the flat layout; `s` is evaluated once.
pub fn rhs_flat(lambdas: &[f64], nl: &Nonlinearity, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let k = lambdas.len();
    let (c, v) = y.split_at(k);
    let s: f64 = lambdas.iter().zip(c).map(|(&l, &ck)| l * ck * ck).sum();
    let m = nl.eval_m(s)?.m;
    let (dc, dv) = dy.split_at_mut(k);
    dc.copy_from_slice(v);
    for ((d, &l), &ck) in dv.iter_mut().zip(lambdas).zip(c) {
        *d = -m * l * ck;
    }
    Ok(())
}

/// Explicit `(k, c⁰, v⁰)` triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplicitMode {
    pub k: Vec<u32>,
    pub c: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Explicit(Vec<ExplicitMode>),
    /// `c⁰_k = λ_k^{-p} ξ`, `v⁰_k = λ_k^{1/2-p} η` with `ξ, η` uniform on
    /// `[-1, 1)`, drawn from ChaCha20 seeded with `seed`.
    Random { seed: u64, cutoff: u32, decay: f64 },
}

/// Unscaled data `(u₀, u₁)` and the amplitude `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialDataSpec {
    pub dim: usize,
    pub profile: Profile,
    pub epsilon: f64,
}

impl InitialDataSpec {
    pub fn explicit(dim: usize, modes: Vec<ExplicitMode>, epsilon: f64) -> Self {
        Self {
            dim,
            profile: Profile::Explicit(modes),
            epsilon,
        }
    }

    pub fn random(dim: usize, seed: u64, cutoff: u32, decay: f64, epsilon: f64) -> Self {
        Self {
            dim,
            profile: Profile::Random { seed, cutoff, decay },
            epsilon,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// Smallest admissible decay exponent: `Σ λ² c²` and `Σ λ v²` stay bounded
    /// as the cutoff grows iff `p > 1 + n/4`.
    pub fn min_decay(dim: usize) -> f64 {
        1.0 + dim as f64 / 4.0
    }

    /// The state at `ε = 1`.
    pub fn unscaled_state(&self) -> Result<SpectralState> {
        let (modes, c, v) = match &self.profile {
            Profile::Explicit(list) => {
                let modes = ModeSet::from_indices(self.dim, list.iter().map(|m| m.k.clone()).collect())?;
                let c = list.iter().map(|m| m.c).collect();
                let v = list.iter().map(|m| m.v).collect();
                (modes, c, v)
            }
            Profile::Random { seed, cutoff, decay } => {
                if !(*decay > Self::min_decay(self.dim)) {
                    return Err(Error::config(
                        "initial_data.random.decay",
                        format!("decay must exceed {} for H² × H¹ data", Self::min_decay(self.dim)),
                    ));
                }
                let modes = ModeSet::full_box(self.dim, *cutoff)?;
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                let mut uniform = || {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    2.0 * u - 1.0
                };
                let mut c = Vec::with_capacity(modes.len());
                let mut v = Vec::with_capacity(modes.len());
                for &l in modes.lambdas() {
                    c.push(l.powf(-decay) * uniform());
                    v.push(l.powf(0.5 - decay) * uniform());
                }
                (modes, c, v)
            }
        };
        SpectralState::new(0.0, Arc::new(modes), c, v)
    }

    /// `N(ε) = ε² ∫|u₁|² + M(ε² ∫|∇u₀|²)`, the conserved first-order energy of
    /// the data scaled by `epsilon`.
    pub fn first_order_level(&self, nl: &Nonlinearity, epsilon: f64) -> Result<f64> {
        let sums = self.unscaled_state()?.sums();
        let e2 = epsilon * epsilon;
        Ok(e2 * sums.ut + nl.mass(e2 * sums.s)?)
    }
}

/// `c = ε c⁰`, `v = ε v⁰` at `t = 0`.
pub fn make_initial_state(spec: &InitialDataSpec) -> Result<SpectralState> {
    if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
        return Err(Error::config("initial_data.epsilon", "epsilon must be finite and ≥ 0"));
    }
    let mut state = spec.unscaled_state()?;
    for x in state.c.iter_mut().chain(state.v.iter_mut()) {
        *x *= spec.epsilon;
    }
    Ok(state)
}
