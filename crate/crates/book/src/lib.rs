//! Doc-test shim for the guide in `book/`.
//!
//! mdbook renders the chapters but cannot execute their code fences
//! against this workspace's crates. Including each chapter as module
//! documentation makes `cargo test --doc -p riskcast-book` compile and
//! run every `rust` snippet, so the book cannot drift from the library.
//! One module per chapter keeps test failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/labeling.md")]
pub mod labeling {}

#[doc = include_str!("../../../book/src/preprocessing.md")]
pub mod preprocessing {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/indicator.md")]
pub mod indicator {}

#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}

#[doc = include_str!("../../../book/src/backtesting.md")]
pub mod backtesting {}

#[doc = include_str!("../../../book/src/explain.md")]
pub mod explain {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
