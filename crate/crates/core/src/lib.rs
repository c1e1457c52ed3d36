//! Competitive and regret-optimal control of linear time-invariant systems.
//!
//! - [`lds`]: systems, rollouts, stability certificates.
//! - [`classic`]: H₂, H∞ and clairvoyant offline controllers.
//! - [`competitive`]: the controller with optimal competitive ratio α*.
//! - [`dac`]: disturbance-action policies and the DAC image of the competitive controller.
//! - [`gpc`]: the GPC learner and the best DAC policy in hindsight.
//! - [`noise`]: disturbance generators.
//! - [`bench`]: experiment runner, outputs and property suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod classic;
pub mod competitive;
pub mod dac;
pub mod error;
pub mod gpc;
pub mod lds;
pub mod linalg;
pub mod noise;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/competitive.md")]
    mod competitive {}
    #[doc = include_str!("../../../book/src/dac.md")]
    mod dac {}
    #[doc = include_str!("../../../book/src/gpc.md")]
    mod gpc {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
