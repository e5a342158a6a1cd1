//! Black-box measurement of online behavioural advertising.
//!
//! Personas browse pages of a single interest, ads are harvested on neutral
//! control pages, three filters strip ads that are not interest-driven, and
//! TTK/BAiLP measure how much of what remains matches the persona's training
//! keywords. [`adsim`] provides a simulated ad market with ground truth so the
//! whole chain can be validated offline.
//!
//! ```
//! use oba_core::taxonomy::{Keyword, Taxonomy};
//!
//! let tax = Taxonomy::demo();
//! let pools = Keyword::new("swimming pools & spas").unwrap();
//! let banking = Keyword::new("banking").unwrap();
//! assert!(!tax.similar(&pools, &banking, 2.5).unwrap());
//! ```

pub mod adsim;
pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod persona;
pub mod pipeline;
pub mod seed;
pub mod session;
pub mod taxonomy;
