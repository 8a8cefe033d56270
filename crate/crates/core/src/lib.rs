//! Dense-matrix toolkit for consistent-histories models on small Hilbert
//! spaces and short lattices.
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`] — states, operators, tensor products, matrix exponentials,
//!   and projector-family validation on spaces of a few thousand dimensions.
//! * [`histories`] — chain operators, decoherence functionals, and
//!   consistency checks for projector histories under unitary schedules.
//! * [`propagators`] — scalar two-point tables on periodic lattices
//!   (Minkowski signature, `-+++`), their positive/negative-frequency parts,
//!   and a sliced path-kernel construction with independent cross-checks.
//! * [`fock`] — truncated Fock spaces with sharp and smeared ladder
//!   operators, vertex operators carrying a non-standard adjoint, and the
//!   pseudo-unitarity / commutator / factorization diagnostics that go with
//!   them.
//! * [`branches`] — sequential measurement-style models: correlation checks
//!   between subsystem outcomes, orthogonal branch decompositions, and a
//!   demonstration of how label-matching constraints remove basis ambiguity.
//! * [`envariance`] — entanglement-assisted invariance: phase and swap
//!   checks, fine-graining of unequal amplitudes into equal-weight sectors,
//!   ancilla attachment, and exact rational outcome weights.
//! * [`cat`] — a five-factor worked example wiring the above together.
//!
//! Everything is deterministic: no threading, no hashing with random seeds,
//! and all iteration orders are fixed, so identical inputs give bitwise
//! identical outputs.

pub mod branches;
pub mod cat;
pub mod envariance;
pub mod error;
pub mod fock;
pub mod hilbert;
pub mod histories;
mod linalg;
pub mod propagators;

pub use error::{Error, Result};
