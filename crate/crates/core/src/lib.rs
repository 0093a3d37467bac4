//! Sample-path exponential time differencing for random Fisher-KPP
//! advection-diffusion-reaction models
//!
//! ```text
//! u_t = D(x) u_xx + B(x) u_x + A(x) u (1 - u),  0 < x < l,
//! u(x, 0) = Phi_0(x),  u(0, t) = Phi_1(t),  u(l, t) = Phi_2(t),
//! ```
//!
//! where each coefficient is a deterministic shape times one random
//! amplitude. Every realization is discretized with central differences in
//! space and advanced with an exponential time differencing step whose
//! integral term uses Simpson's rule on the matrix exponential. Under the
//! stepsize conditions checked by [`etdsolver::stepsize_gate`] every
//! realization stays in `[0, 1]`. Ensembles of realizations give pointwise
//! means and standard deviations.
//!
//! Modules, bottom up:
//! - [`randmodel`]: random amplitudes, coefficient/initial/boundary processes.
//! - [`specmat`]: grid, semidiscrete operator, norms and Metzler test.
//! - [`expmquad`]: matrix exponential and the Simpson weight matrix.
//! - [`etdsolver`]: stepsize gate and per-realization time stepping.
//! - [`ensemble`]: Monte Carlo and collocation statistics.
//! - [`bench`]: reference problem with exact solution, error and order studies.
//! - [`cli`]: configuration, commands and output files.

pub mod bench;
pub mod cli;
pub mod csv;
pub mod ensemble;
pub mod error;
pub mod etdsolver;
pub mod expmquad;
pub mod randmodel;
pub mod specmat;
pub mod sum;

pub use error::{Error, Result};
