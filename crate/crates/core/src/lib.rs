//! Gaussian states evolving through a non-Markovian quantum Brownian motion
//! channel.
//!
//! The crate covers the whole pipeline from bath parameters to information
//! measures:
//!
//! - [`symplectic`]: covariance matrices, symplectic spectra, bona-fide
//!   checks, partial transposition and matrix functions.
//! - [`states`]: vacuum, thermal, single-mode squeezed, two-mode squeezed and
//!   three-mode basset-hound covariance matrices.
//! - [`special`]: Gauss hypergeometric series, the `F̄`/`Ḡ` bath functions and
//!   adaptive Gauss-Kronrod quadrature.
//! - [`channel`]: damping `γ(t)`, diffusion `Δ(t)`, their accumulated forms
//!   and the covariance-matrix map.
//! - [`metrics`]: fidelity, logarithmic negativity and Petz-Rényi relative
//!   entropy with its domain condition and critical time.
//! - [`fock`]: an independent truncated Fock-space reference used to
//!   validate the Gaussian formulas.
//! - [`runner`]: run configurations, figure presets, sweeps and CSV/JSON
//!   output.
//!
//! Covariance matrices use the quadrature ordering `(x₁, p₁, x₂, p₂, …)` with
//! `[X_i, X_j] = 2iΩ_ij`, so the vacuum is the identity and every symplectic
//! eigenvalue of a physical state is at least one.
//!
//! ```
//! use qbm_gauss::states::{make_state, StateSpec};
//! use qbm_gauss::metrics::log_negativity;
//!
//! let tms = make_state(&StateSpec::two_mode_squeezed(2.0)).unwrap();
//! let en = log_negativity(&tms, &[1]).unwrap();
//! assert!((en - 4.0).abs() < 1e-9);
//! ```

#![forbid(unsafe_code)]

pub mod channel;
mod error;
pub mod fock;
mod linalg;
pub mod metrics;
pub mod runner;
pub mod special;
pub mod states;
pub mod symplectic;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
