//! Hyperspectral image segmentation with tri-spectral ensembles.
//!
//! A hyperspectral cube is collapsed into `G` band groups, every
//! wavelength-ordered triple of groups is rendered into a contrast-stretched
//! 8-bit image, and a segmentation network (truncated VGG backbone plus a dual
//! context module built from transformer layers over adaptively clustered
//! homogeneous areas) is trained on all of them. Per-image predictions are
//! fused by hard or soft voting.
//!
//! Module map:
//!
//! - [`io`]: on-disk formats (`HSC1` cubes, `LBL1` label maps, `PRB1`
//!   probability maps, binary PPM images).
//! - [`trispec`]: grouping, triplet enumeration and linear 2% stretching.
//! - [`autodiff`]: tensors, a reverse-mode tape, SGD and checkpoints.
//! - [`nn`]: attention, encoder and decoder layers, positional encodings.
//! - [`cluster`]: differentiable homogeneous area generation.
//! - [`dcm`]: regional and global context capture.
//! - [`model`]: the full network and its loss.
//! - [`pipeline`]: training, inference, voting and metrics.
//! - [`gradsuite`]: finite-difference checks of every differentiable block.
//! - [`config`], [`synth`], [`cli`]: configuration, synthetic scenes and the
//!   command-line front end.

pub mod autodiff;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod dcm;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod trispec;

pub use error::{Error, Result};
