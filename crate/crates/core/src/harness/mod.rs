//! Experiment plumbing: phantoms, noise, quality scores, file formats and the CLI.

#[cfg(feature = "cli")]
pub mod cli;
pub mod io;
pub mod metrics;
pub mod phantom;

pub use metrics::{dice, ssim};
pub use phantom::{add_noise, make_phantom, PhantomKind};
