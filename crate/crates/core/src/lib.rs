// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spectral editing of activations.
//!
//! Fits a pair of orthogonal projections per layer from demonstration
//! activations (neutral prompts, plus positive and negative completions) via
//! the SVD of their cross-covariances, and applies them to activations at
//! inference time, either linearly or through an elementwise feature map.
//!
//! - [`io`]: "SEAD"/"SEAP" containers for activation sets and bundles
//! - [`spectral`]: covariance, SVD, rank selection, projections, signatures
//! - [`features`]: feature maps and pseudo-inverses for nonlinear editing
//! - [`fit`]: activation set → projection bundle
//! - [`editing`]: per-token editing, merge normalization, streaming hook
//! - [`toy`]: seeded toy transformer, synthetic demonstrations, MC1 scoring
//! - [`demo`]: the end-to-end synthetic check

pub mod config;
pub mod demo;
pub mod editing;
pub mod error;
pub mod features;
pub mod fit;
pub mod io;
pub mod spectral;
pub mod toy;

pub use config::{EditConfig, EditMode, LayerSelection, MergeMode, Normalization};
pub use error::{Result, SeaError};
pub use features::{FeatureKind, FeatureSpec};
