//! Record-and-replay performance analysis for a toy ML accelerator.

pub mod analyzer;
pub mod debugger;
pub mod intervals;
pub mod isa;
pub mod recorder;
pub mod replayer;
pub mod sim;
pub mod workloads;

// The guide's code listings run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/recording.md")]
    mod recording {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
}
