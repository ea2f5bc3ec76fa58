pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod seeds;
pub mod simulation;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/covariate-balancing.md")]
    mod covariate_balancing {}
    #[doc = include_str!("../../../book/src/auto-dml.md")]
    mod auto_dml {}
    #[doc = include_str!("../../../book/src/calibrated-dml.md")]
    mod calibrated_dml {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
