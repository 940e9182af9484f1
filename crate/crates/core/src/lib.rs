//! Federated foam segmentation for wastewater-treatment surface imagery.
//!
//! The crate covers the whole loop: classical day/night mask generation
//! ([`maskgen`]), segmentation metrics and losses ([`metrics`]), a small
//! prompt-conditioned reference model trained with AdamW ([`model`]),
//! corpus handling and a procedural foam generator ([`dataset`]), federated
//! averaging over a length-prefixed TCP protocol ([`federation`]),
//! grid-prompted inference with mask refinement ([`inference`]) and the
//! continuous acquisition/registry loop ([`acquisition`]).
//!
//! A narrative guide lives in the `book/` directory at the repository root;
//! its code listings are compiled as doc-tests of this crate.

pub mod acquisition;
pub mod cli;
pub mod dataset;
mod error;
pub mod federation;
pub mod imaging;
pub mod inference;
pub mod maskgen;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/imaging.md")]
    pub mod imaging {}
    #[doc = include_str!("../../../book/src/maskgen.md")]
    pub mod maskgen {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    pub mod dataset {}
    #[doc = include_str!("../../../book/src/federation.md")]
    pub mod federation {}
    #[doc = include_str!("../../../book/src/inference.md")]
    pub mod inference {}
    #[doc = include_str!("../../../book/src/acquisition.md")]
    pub mod acquisition {}
}
