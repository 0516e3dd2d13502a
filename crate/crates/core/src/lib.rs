//! LIChI: unsupervised image denoising by iterating linear combinations of
//! similar patches.
//!
//! The pipeline is block matching ([`patch`]), closed-form group weights
//! ([`weights`], [`linalg`]), a one-pass pilot ([`pilot`]) and the progressive
//! iteration ([`iteration`]). [`noise`] synthesizes noise and handles the
//! Anscombe route, [`metrics`] and [`sweep`] evaluate, and [`oracle`] holds the
//! slow reference implementations used by the test suite.
//!
//! Work over patch groups runs on rayon when the `parallel` feature is on
//! (the default). Reductions use a fixed chunking, so results do not depend
//! on the thread count.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod exec;
pub mod image;
pub mod iteration;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod patch;
pub mod pilot;
pub mod sweep;
pub mod weights;

pub use crate::config::{config_hash, Overrides};
pub use crate::error::{Error, Result};
pub use crate::image::{load_gray, save_gray, Image};
pub use crate::iteration::{lichi_denoise, lichi_run, repeat_internal_adaptation, LichiConfig};
pub use crate::metrics::{bias_variance, psnr, BiasVarianceResult};
pub use crate::noise::{add_awgn, denoise_with_vst, NoiseModel};
pub use crate::pilot::{pilot_denoise, PilotConfig};
pub use crate::weights::PilotMethod;
