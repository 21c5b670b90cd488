// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fitting projection bundles from activation sets.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{EditConfig, EditMode};
use crate::error::Result;
use crate::features::FeatureSpec;
use crate::io::{ActivationSet, LayerProjection, LayerSamples, Matrix32, ProjectionBundle, Role};
use crate::spectral::{build_projections, cross_covariance, label_matrix, signature, ProjectionFit, SignatureResult};

/// Samples of one role, lifted through the feature map, in 64-bit.
pub fn feature_samples(layer: &LayerSamples, role: Role, feature: &FeatureSpec) -> DMatrix<f64> {
    let mut m = layer.role(role).to_f64();
    if !feature.is_identity() {
        m.apply(|v| *v = feature.forward(*v));
    }
    m
}

/// `(Ω⁺, Ω⁻)` of one layer in the configured feature space.
pub fn layer_covariances(
    layer: &LayerSamples,
    feature: &FeatureSpec,
    center: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let neutral = feature_samples(layer, Role::Neutral, feature);
    let positive = feature_samples(layer, Role::Positive, feature);
    let negative = feature_samples(layer, Role::Negative, feature);
    Ok((
        cross_covariance(&neutral, &positive, center)?,
        cross_covariance(&neutral, &negative, center)?,
    ))
}

/// Fits one layer. Reverse mode exchanges the two covariances, so the kept
/// directions are those covarying with the negative demonstrations.
pub fn fit_layer(layer: &LayerSamples, config: &EditConfig) -> Result<ProjectionFit> {
    let (plus, minus) = layer_covariances(layer, &config.feature, config.center)?;
    match config.mode {
        EditMode::Reverse => build_projections(&minus, &plus, config.threshold),
        _ => build_projections(&plus, &minus, config.threshold),
    }
}

fn to_record(layer_id: usize, fit: ProjectionFit) -> LayerProjection {
    let round = |s: &[f64]| s.iter().map(|&v| v as f32).collect::<Vec<_>>();
    let mut sigma_plus = round(&fit.sigma_plus);
    let mut sigma_minus = round(&fit.sigma_minus);
    // Rounding can break ties the wrong way; keep the stored lists monotone.
    for s in [&mut sigma_plus, &mut sigma_minus] {
        for i in 1..s.len() {
            s[i] = s[i].min(s[i - 1]);
        }
    }
    LayerProjection {
        layer_id,
        keep_positive: Matrix32::from_f64(&fit.keep_positive),
        keep_negative: Matrix32::from_f64(&fit.keep_negative),
        k_plus: fit.k_plus,
        k_minus: fit.k_minus,
        sigma_plus,
        sigma_minus,
    }
}

/// Fits every layer selected by `config` (layers run in parallel).
pub fn fit_bundle(set: &ActivationSet, config: &EditConfig) -> Result<ProjectionBundle> {
    config.validate()?;
    set.validate()?;
    let ids = config.layers.resolve(&set.layer_ids())?;
    let layers = ids
        .par_iter()
        .map(|&id| {
            let layer = set.layer(id).expect("resolved against the set's own ids");
            fit_layer(layer, config).map(|fit| to_record(id, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    ProjectionBundle::new(set.d(), config.clone(), layers)
}

/// Per-layer signatures of the positive/negative split: the positive
/// demonstrations come first in the mixed matrix, then the negative ones.
pub fn layer_signatures(set: &ActivationSet) -> Result<SignatureResult> {
    set.validate()?;
    let (d, n) = (set.d(), set.n());
    let labels = label_matrix(n);
    let raw = set
        .layers()
        .par_iter()
        .map(|layer| {
            let mut mixed = DMatrix::<f64>::zeros(d, 2 * n);
            mixed.columns_mut(0, n).copy_from(&layer.positive.to_f64());
            mixed.columns_mut(n, n).copy_from(&layer.negative.to_f64());
            signature(&mixed, &labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignatureResult::from_raw(set.layer_ids(), raw, n))
}
