//! Runs the code samples of the guide in `book/` as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/jets.md")]
pub mod jets {}

#[doc = include_str!("../../../book/src/general.md")]
pub mod general {}

#[doc = include_str!("../../../book/src/norms.md")]
pub mod norms {}

#[doc = include_str!("../../../book/src/hamiltonian.md")]
pub mod hamiltonian {}

#[doc = include_str!("../../../book/src/persistence.md")]
pub mod persistence {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
