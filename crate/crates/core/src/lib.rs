pub mod analysis;
pub mod config;
pub mod conversion;
pub mod filters;
pub mod lock;
pub mod lsq;
pub mod output;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod tagfile;
pub mod tags;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/conversion.md")]
    mod conversion {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/lock.md")]
    mod lock {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
