//! Spectral Galerkin simulation of the Kirchhoff equation
//!
//! ```text
//! u_tt - m(∫|∇u|² dx) Δu = 0      on (0, π)ⁿ,  u = 0 on the boundary
//! ```
//!
//! together with a harness that checks the conserved and balanced functionals
//! of the equation along computed trajectories.
//!
//! The solution is expanded in the orthonormal Dirichlet eigenbasis of `-Δ`,
//! `e_k(x) = Πᵢ √(2/π) sin(kᵢ xᵢ)`, so every spatial integral reduces to a mode
//! sum. The nonlocal coefficient couples the modes only through the scalar
//! `s = Σ λ_k c_k²`, which makes the truncated system itself a Kirchhoff system.
//!
//! Module map:
//!
//! - [`nonlinearity`]: the coefficient `m`, its derivatives, `M = ∫m` and `M⁻¹`.
//! - [`spectral`]: mode sets, states, observables and the ODE right-hand side.
//! - [`integrator`]: adaptive Dormand–Prince 5(4) with dense output, event
//!   location and running path quadratures.
//! - [`experiments`]: pass/fail checks with explicit tolerances.
//! - [`io`] and [`cli`]: configuration, CSV/JSON outputs and the command line.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod io;
pub mod nonlinearity;
pub mod quad;
pub mod spectral;

pub use error::{Error, Result};
pub use integrator::{integrate, EventKind, EventSpec, IntegratorConfig, Trajectory, TrajectoryStatus};
pub use nonlinearity::Nonlinearity;
pub use spectral::{FunctionalSample, InitialDataSpec, ModeSet, SpectralState};
