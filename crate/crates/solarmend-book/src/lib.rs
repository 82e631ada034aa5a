//! Keeps the guide honest: every chapter under `book/src/` is included here
//! as module documentation, so `cargo test --doc -p solarmend-book` compiles
//! and runs each of its code blocks. A snippet that drifts from the library
//! API fails the build, not the reader.
//!
//! One module per chapter, so a failing doctest names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors-and-autodiff.md")]
pub mod tensors_and_autodiff {}

#[doc = include_str!("../../../book/src/fleet-graphs.md")]
pub mod fleet_graphs {}

#[doc = include_str!("../../../book/src/chebyshev-filters.md")]
pub mod chebyshev_filters {}

#[doc = include_str!("../../../book/src/data-pipeline.md")]
pub mod data_pipeline {}

#[doc = include_str!("../../../book/src/the-autoencoder.md")]
pub mod the_autoencoder {}

#[doc = include_str!("../../../book/src/reference-imputers.md")]
pub mod reference_imputers {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
