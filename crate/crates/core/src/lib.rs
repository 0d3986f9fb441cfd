//! Unsupervised bottom-up saliency detection.
//!
//! The pipeline treats an RGB image as three independent channels, slices
//! each channel into ordered intensity layers and tiles every layer into
//! 16x16 binary receptive fields. Each receptive field trains a two-input
//! neuron with Oja's rule on the coordinates of its active pixels, so the
//! neuron's weights converge to the patch's first principal component. A
//! patch whose orientation differs from enough of its neighbours, summed over
//! layers, is salient for that channel; channels are then combined and
//! filtered against an expected-value cutoff.
//!
//! - [`ingest`]: image/ROI loading, channel split, layer decomposition, tiling
//! - [`oja`]: Hebbian and Oja updates, per-patch learning, closed-form PCA
//! - [`lateral`]: neighbour comparison and salient-patch selection
//! - [`eval`]: precision/recall against integrated ROI maps, overlays
//! - [`cli`]: the `hebbsal` command line

pub mod cli;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod lateral;
pub mod oja;

pub use error::{Error, Result};
pub use grid::Grid;
pub use ingest::{Channel, PatchLayout, RgbImage, RoiMap};
pub use lateral::{detect, SaliencyConfig, SaliencyGrid};
pub use oja::{LearnConfig, WeightVector};
