//! Exponentially accurate slow manifolds of analytic slow-fast systems.
//!
//! A slow-fast system `ẇ = εW(w, z)`, `ż = Z(w, z)` is conjugated by a stack
//! of graph transforms `z ↦ z + ζ_n(w)` until the error field `ρ_n(w)`,
//! the fast vector field on the graph, is as small as the analyticity
//! budget allows. Hamiltonian systems are refined with symplectic
//! generating-function transforms instead.
//!
//! The crate is organized bottom-up:
//!
//! * [`jet`]: third-order truncated Taylor arithmetic over real or complex scalars;
//! * [`table`]: Chebyshev/Fourier interpolants used to store deep layers;
//! * [`norms`]: sup norms over complex neighbourhoods and decay fits;
//! * [`sysmodel`]: systems, charts and normal forms;
//! * [`refine_general`] and [`refine_ham`]: the two refinement pipelines;
//! * [`persistence`]: monodromy and gap sets of reduced periodic problems;
//! * [`examples`]: built-in systems with closed-form oracles;
//! * [`cli`]: the batch driver behind the `slowfast` binary.

pub mod cli;
pub mod error;
pub mod examples;
pub mod jet;
pub mod linalg;
pub mod norms;
pub mod ode;
pub mod persistence;
pub mod refine_general;
pub mod refine_ham;
pub mod scalar;
pub mod sysmodel;
pub mod table;

pub use error::{Error, Result};
pub use jet::Jet;
pub use scalar::Scalar;
