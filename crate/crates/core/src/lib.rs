//! Classical phase-space treatment of quantum adiabatic following.
//!
//! A normalized n-level state maps to n−1 canonical pairs on projective
//! Hilbert space ([`chart`]); the Schrödinger flow becomes Hamilton's
//! equations for H₀ = ⟨ψ|Ĥ₀(R)|ψ⟩ ([`classical`]). Energy eigenstates are
//! fixed points of that flow, and driving R(t) displaces the followed
//! trajectory away from them by a hierarchy of order-k shifts (A_k, B_k),
//! each governed by its own quadratic Hamiltonian ([`hierarchy`]).
//! [`dynamics`] integrates both the exact Schrödinger equation and the
//! classical equations under driving protocols and extracts the per-order
//! residuals; [`models`] supplies two closed-form systems for
//! cross-validation.

pub mod chart;
pub mod classical;
pub mod diff;
pub mod dynamics;
pub mod error;
pub mod hierarchy;
pub mod models;

pub use chart::{ChartState, Wavefunction};
pub use classical::{FixedPoint, GammaMatrix, ParametricHamiltonian};
pub use error::{Error, Result};
