//! The guide in `book/` compiled as doctests, one module per chapter, so a
//! listing that stops building fails `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/taxonomy.md")]
pub mod taxonomy {}
#[doc = include_str!("../../../book/src/personas.md")]
pub mod personas {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../../book/src/filters.md")]
pub mod filters {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/statistics.md")]
pub mod statistics {}
