//! The guide in `book/`, compiled so its examples run as doctests.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../book/src/synthesis.md")]
pub mod synthesis {}

#[doc = include_str!("../../book/src/kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../book/src/monte_carlo.md")]
pub mod monte_carlo {}

#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
