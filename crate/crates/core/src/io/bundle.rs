// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{decode_f32s, read_envelope, take, write_container, Matrix32, MAGIC_PROJECTIONS};
use crate::config::EditConfig;
use crate::error::{Result, SeaError};
use crate::features::{FeatureKind, FeatureSpec};

/// Orthonormality tolerance enforced on construction and write.
pub const ORTHONORMAL_TOL: f64 = 1e-5;
/// Looser tolerance applied on read; anything beyond it is a corrupted or
/// foreign matrix rather than rounding.
pub const ORTHONORMAL_READ_TOL: f64 = 1e-4;

const FEATURE_TAG_LEN: usize = 8;
const FEATURE_BLOCK_LEN: usize = FEATURE_TAG_LEN + 16;

/// Fitted editing projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjection {
    pub layer_id: usize,
    /// Leading left singular vectors of the positive covariance, `d × k⁺`.
    pub keep_positive: Matrix32,
    /// Left singular vectors of the negative covariance past the top `k⁻`,
    /// `d × (d − k⁻)`.
    pub keep_negative: Matrix32,
    pub k_plus: usize,
    pub k_minus: usize,
    pub sigma_plus: Vec<f32>,
    pub sigma_minus: Vec<f32>,
}

impl LayerProjection {
    pub fn d(&self) -> usize {
        self.keep_positive.rows()
    }

    fn validate(&self, d: usize, tol: f64) -> Result<()> {
        let ctx = |what: &str| format!("layer {} {what}", self.layer_id);
        if self.keep_positive.rows() != d || self.keep_negative.rows() != d {
            return Err(SeaError::Shape(ctx("projection rows differ from bundle width")));
        }
        if self.k_plus < 1 || self.k_plus > d || self.keep_positive.cols() != self.k_plus {
            return Err(SeaError::Invalid(ctx(&format!(
                "k+={} inconsistent with {} columns (d={d})",
                self.k_plus,
                self.keep_positive.cols()
            ))));
        }
        if self.k_minus > d || self.keep_negative.cols() != d - self.k_minus {
            return Err(SeaError::Invalid(ctx(&format!(
                "k-={} inconsistent with {} complement columns (d={d})",
                self.k_minus,
                self.keep_negative.cols()
            ))));
        }
        for (name, sigma) in [("sigma+", &self.sigma_plus), ("sigma-", &self.sigma_minus)] {
            if sigma.len() != d {
                return Err(SeaError::Shape(ctx(&format!("{name} has {} values", sigma.len()))));
            }
            if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(SeaError::Invalid(ctx(&format!("{name} has negative or non-finite values"))));
            }
            if sigma.windows(2).any(|w| w[1] > w[0]) {
                return Err(SeaError::Invalid(ctx(&format!("{name} is not non-increasing"))));
            }
        }
        for (name, m) in [("U+", &self.keep_positive), ("U-", &self.keep_negative)] {
            if !m.is_finite() {
                return Err(SeaError::NonFinite(ctx(name)));
            }
            let deviation = m.orthonormality_deviation();
            if deviation > tol {
                return Err(SeaError::Orthonormality {
                    context: ctx(name),
                    deviation,
                    tolerance: tol,
                });
            }
        }
        Ok(())
    }
}

/// Per-layer projections plus the configuration they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBundle {
    pub format_version: u32,
    d: usize,
    pub fit_config: EditConfig,
    layers: Vec<LayerProjection>,
}

impl ProjectionBundle {
    pub fn new(d: usize, fit_config: EditConfig, layers: Vec<LayerProjection>) -> Result<Self> {
        let bundle = Self {
            format_version: super::FORMAT_VERSION,
            d,
            fit_config,
            layers,
        };
        bundle.validate(ORTHONORMAL_TOL)?;
        Ok(bundle)
    }

    fn validate(&self, tol: f64) -> Result<()> {
        if self.d == 0 {
            return Err(SeaError::Invalid("bundle width d must be positive".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].layer_id <= pair[0].layer_id {
                return Err(SeaError::Invalid("bundle layer ids must be strictly increasing".into()));
            }
        }
        self.layers.iter().try_for_each(|l| l.validate(self.d, tol))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn feature(&self) -> &FeatureSpec {
        &self.fit_config.feature
    }

    pub fn layers(&self) -> &[LayerProjection] {
        &self.layers
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerProjection> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    layer_id: usize,
    k_plus: usize,
    k_minus: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    dtype: String,
    fit_config: EditConfig,
    layers: Vec<LayerEntry>,
}

fn feature_block(spec: &FeatureSpec) -> [u8; FEATURE_BLOCK_LEN] {
    let mut block = [0u8; FEATURE_BLOCK_LEN];
    let tag = spec.kind().tag().as_bytes();
    block[..tag.len()].copy_from_slice(tag);
    block[FEATURE_TAG_LEN..FEATURE_TAG_LEN + 8].copy_from_slice(&spec.alpha().to_le_bytes());
    block[FEATURE_TAG_LEN + 8..].copy_from_slice(&spec.epsilon().to_le_bytes());
    block
}

fn parse_feature_block(block: &[u8]) -> Result<FeatureSpec> {
    let tag_bytes = &block[..FEATURE_TAG_LEN];
    let end = tag_bytes.iter().position(|&b| b == 0).unwrap_or(FEATURE_TAG_LEN);
    if tag_bytes[end..].iter().any(|&b| b != 0) {
        return Err(SeaError::Header("feature tag is not NUL padded".into()));
    }
    let tag = std::str::from_utf8(&tag_bytes[..end])
        .map_err(|_| SeaError::Header("feature tag is not ASCII".into()))?;
    let kind = FeatureKind::from_tag(tag)
        .ok_or_else(|| SeaError::Header(format!("unknown feature tag {tag:?}")))?;
    let alpha = f64::from_le_bytes(block[FEATURE_TAG_LEN..FEATURE_TAG_LEN + 8].try_into().expect("8 bytes"));
    let epsilon = f64::from_le_bytes(block[FEATURE_TAG_LEN + 8..].try_into().expect("8 bytes"));
    FeatureSpec::new(kind, alpha, epsilon).map_err(|e| SeaError::Header(e.to_string()))
}

/// Serializes `bundle` as a "SEAP" container; returns the number of bytes written.
pub fn write_projection_bundle<W: Write + ?Sized>(bundle: &ProjectionBundle, sink: &mut W) -> Result<u64> {
    bundle.validate(ORTHONORMAL_TOL)?;
    let header = Header {
        d: bundle.d,
        dtype: "f32le".into(),
        fit_config: bundle.fit_config.clone(),
        layers: bundle
            .layers
            .iter()
            .map(|l| LayerEntry {
                layer_id: l.layer_id,
                k_plus: l.k_plus,
                k_minus: l.k_minus,
            })
            .collect(),
    };
    let block = feature_block(&bundle.fit_config.feature);
    write_container(sink, MAGIC_PROJECTIONS, &header, &block, |emit| {
        for l in &bundle.layers {
            emit(&l.sigma_plus)?;
            emit(&l.sigma_minus)?;
            emit(l.keep_positive.as_slice())?;
            emit(l.keep_negative.as_slice())?;
        }
        Ok(())
    })
}

/// Parses a "SEAP" container and re-validates every layer, including
/// orthonormality of the stored columns.
pub fn read_projection_bundle<R: Read + ?Sized>(source: &mut R) -> Result<ProjectionBundle> {
    let env = read_envelope::<_, Header>(source, MAGIC_PROJECTIONS)?;
    let h = env.header;
    if h.dtype != "f32le" {
        return Err(SeaError::Header(format!("unsupported dtype {}", h.dtype)));
    }
    if env.body.len() < FEATURE_BLOCK_LEN {
        return Err(SeaError::LengthMismatch {
            expected: FEATURE_BLOCK_LEN,
            found: env.body.len(),
        });
    }
    let (block, payload) = env.body.split_at(FEATURE_BLOCK_LEN);
    let mut fit_config = h.fit_config;
    fit_config.feature = parse_feature_block(block)?;

    let d = h.d;
    let mut total = 0usize;
    for e in &h.layers {
        if e.k_plus > d || e.k_minus > d {
            return Err(SeaError::Header(format!(
                "layer {} declares k+={}, k-={} beyond d={d}",
                e.layer_id, e.k_plus, e.k_minus
            )));
        }
        total += d * (2 + e.k_plus + (d - e.k_minus));
    }
    let values = decode_f32s(payload, total)?;

    let mut cursor = values.as_slice();
    let mut layers = Vec::with_capacity(h.layers.len());
    for e in &h.layers {
        let sigma_plus = take(&mut cursor, d).to_vec();
        let sigma_minus = take(&mut cursor, d).to_vec();
        let keep_positive = Matrix32::from_column_major(d, e.k_plus, take(&mut cursor, d * e.k_plus).to_vec())?;
        let complement = d - e.k_minus;
        let keep_negative = Matrix32::from_column_major(d, complement, take(&mut cursor, d * complement).to_vec())?;
        layers.push(LayerProjection {
            layer_id: e.layer_id,
            keep_positive,
            keep_negative,
            k_plus: e.k_plus,
            k_minus: e.k_minus,
            sigma_plus,
            sigma_minus,
        });
    }
    let bundle = ProjectionBundle {
        format_version: super::FORMAT_VERSION,
        d,
        fit_config,
        layers,
    };
    bundle.validate(ORTHONORMAL_READ_TOL)?;
    Ok(bundle)
}
