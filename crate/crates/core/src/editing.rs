// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference-time editing.
//!
//! For each selected layer every token activation `z` is projected by both
//! fitted projectors, `z⁺ = Ū⁺Ū⁺ᵀz` and `z⁻ = Ū⁻Ū⁻ᵀz`, and the branches are
//! merged. The default merge rescales each coordinate `i` of `z⁺ + z⁻` by
//! `sqrt(Σₜ zᵢ²) / sqrt(Σₜ (z⁺ᵢ + z⁻ᵢ)²)`, with sums over the token axis, so the
//! edited sequence keeps the per-coordinate norm of the original one.
//!
//! With a nonlinear feature map the projections act on `φ(z)` and each branch
//! is mapped back through the pseudo-inverse before merging, so the merge
//! always happens in the original activation space.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::config::{EditConfig, EditMode, MergeMode, Normalization};
use crate::error::{Result, SeaError};
use crate::features::FeatureSpec;
use crate::io::{ActivationSet, LayerProjection, Matrix32, ProjectionBundle, Role};

/// Runtime form of one layer's projections: 64-bit with columns
/// re-orthonormalized, so the projectors are idempotent to rounding.
#[derive(Debug, Clone)]
pub struct Projector {
    layer_id: usize,
    keep_positive: DMatrix<f64>,
    keep_negative: DMatrix<f64>,
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m;
    }
    let (rows, cols) = m.shape();
    let q = m.qr().q();
    q.columns(0, cols.min(rows)).into_owned()
}

impl Projector {
    pub fn new(record: &LayerProjection) -> Self {
        Self {
            layer_id: record.layer_id,
            keep_positive: orthonormalize(record.keep_positive.to_f64()),
            keep_negative: orthonormalize(record.keep_negative.to_f64()),
        }
    }

    /// Builds a projector from explicit bases; columns must already be orthonormal.
    pub fn from_bases(layer_id: usize, keep_positive: DMatrix<f64>, keep_negative: DMatrix<f64>) -> Result<Self> {
        if keep_positive.nrows() != keep_negative.nrows() {
            return Err(SeaError::Shape("projector bases differ in width".into()));
        }
        Ok(Self {
            layer_id,
            keep_positive,
            keep_negative,
        })
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id
    }

    pub fn d(&self) -> usize {
        self.keep_positive.nrows()
    }

    fn project(basis: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        if basis.ncols() == 0 {
            return DVector::zeros(z.len());
        }
        basis * (basis.transpose() * z)
    }
}

/// Applies both projectors to `z`. Branches unused by `mode` come back as zeros.
pub fn edit_token(z: &[f64], projector: &Projector, mode: EditMode) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != projector.d() {
        return Err(SeaError::Shape(format!(
            "activation width {} does not match projector width {}",
            z.len(),
            projector.d()
        )));
    }
    let zv = DVector::from_column_slice(z);
    let zero = || vec![0.0; z.len()];
    let plus = || Projector::project(&projector.keep_positive, &zv).as_slice().to_vec();
    let minus = || Projector::project(&projector.keep_negative, &zv).as_slice().to_vec();
    Ok(match mode {
        EditMode::Both | EditMode::Reverse => (plus(), minus()),
        EditMode::PositiveOnly => (plus(), zero()),
        EditMode::NegativeOnly => (zero(), minus()),
    })
}

/// Per-coordinate token-axis sums of one layer's stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningSums {
    /// `Σₜ zᵢ²` of the raw activations.
    pub raw: Vec<f64>,
    /// `Σₜ (z⁺ᵢ + z⁻ᵢ)²` of the summed branches.
    pub merged: Vec<f64>,
    pub tokens: usize,
}

impl RunningSums {
    pub fn new(d: usize) -> Self {
        Self {
            raw: vec![0.0; d],
            merged: vec![0.0; d],
            tokens: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.raw.len()
    }

    pub fn accumulate(&mut self, z: &[f64], z_plus: &[f64], z_minus: &[f64]) {
        for i in 0..self.raw.len() {
            self.raw[i] += z[i] * z[i];
            let s = z_plus[i] + z_minus[i];
            self.merged[i] += s * s;
        }
        self.tokens += 1;
    }

    fn check(&self) -> Result<()> {
        let bad = self
            .raw
            .iter()
            .chain(&self.merged)
            .any(|v| !v.is_finite() || *v < 0.0);
        if bad {
            Err(SeaError::CorruptedState("running sums must be finite and non-negative".into()))
        } else {
            Ok(())
        }
    }
}

/// Merges the two branches of one token.
///
/// In norm-rescale mode `sums` must already include this token. A coordinate
/// whose summed-branch denominator is zero yields 0.
pub fn merge(z_plus: &[f64], z_minus: &[f64], sums: &RunningSums, mode: MergeMode) -> Result<Vec<f64>> {
    let d = z_plus.len();
    if z_minus.len() != d || sums.d() != d {
        return Err(SeaError::Shape("merge inputs differ in width".into()));
    }
    Ok(match mode {
        MergeMode::Average => z_plus.iter().zip(z_minus).map(|(p, m)| (p + m) / 2.0).collect(),
        MergeMode::NormRescale => {
            sums.check()?;
            (0..d)
                .map(|i| {
                    let denom = sums.merged[i].sqrt();
                    if denom == 0.0 {
                        0.0
                    } else {
                        (z_plus[i] + z_minus[i]) * sums.raw[i].sqrt() / denom
                    }
                })
                .collect()
        }
    })
}

/// Projects `z` in feature space and maps both branches back.
fn branches(z: &[f64], projector: &Projector, feature: &FeatureSpec, mode: EditMode) -> Result<(Vec<f64>, Vec<f64>)> {
    if feature.is_identity() {
        return edit_token(z, projector, mode);
    }
    let lifted: Vec<f64> = z.iter().map(|&v| feature.forward(v)).collect();
    let (p, m) = edit_token(&lifted, projector, mode)?;
    let back = |v: Vec<f64>| v.into_iter().map(|x| feature.pseudo_inverse(x)).collect::<Vec<_>>();
    Ok(match mode {
        EditMode::PositiveOnly => (back(p), vec![0.0; z.len()]),
        EditMode::NegativeOnly => (vec![0.0; z.len()], back(m)),
        EditMode::Both | EditMode::Reverse => (back(p), back(m)),
    })
}

/// Single-branch modes return their branch as is; the others merge.
fn finish(z_plus: Vec<f64>, z_minus: Vec<f64>, sums: &RunningSums, config: &EditConfig) -> Result<Vec<f64>> {
    match config.mode {
        EditMode::PositiveOnly => Ok(z_plus),
        EditMode::NegativeOnly => Ok(z_minus),
        EditMode::Both | EditMode::Reverse => merge(&z_plus, &z_minus, sums, config.merge),
    }
}

/// One nonlinear (or, with the identity feature, linear) edit of a token,
/// updating `sums` with this token first.
pub fn nonlinear_edit(
    z: &[f64],
    projector: &Projector,
    feature: &FeatureSpec,
    config: &EditConfig,
    sums: &mut RunningSums,
) -> Result<Vec<f64>> {
    if sums.d() != z.len() {
        return Err(SeaError::Shape("running sums width differs from activation".into()));
    }
    let (p, m) = branches(z, projector, feature, config.mode)?;
    sums.accumulate(z, &p, &m);
    finish(p, m, sums, config)
}

/// Checks that a bundle can serve `config` and returns the layers to edit.
fn check_compatible(bundle: &ProjectionBundle, config: &EditConfig, model_layers: &[usize]) -> Result<Vec<usize>> {
    config.validate()?;
    if bundle.feature().kind() != config.feature.kind() {
        return Err(SeaError::FeatureMismatch {
            bundle: bundle.feature().kind().to_string(),
            config: config.feature.kind().to_string(),
        });
    }
    let fitted_reverse = bundle.fit_config.mode == EditMode::Reverse;
    if fitted_reverse != (config.mode == EditMode::Reverse) {
        return Err(SeaError::Config(
            "reverse editing needs a bundle fitted in reverse mode, and a reverse bundle needs reverse mode".into(),
        ));
    }
    let selected = config.layers.resolve(model_layers)?;
    for &id in &selected {
        if bundle.layer(id).is_none() {
            return Err(SeaError::UnknownLayer(id));
        }
    }
    Ok(selected)
}

/// Receives every hooked activation of a forward pass and returns its
/// replacement.
pub trait ActivationHook {
    fn edit(&mut self, layer_id: usize, token_index: usize, activation: &[f64]) -> Result<Vec<f64>>;
}

/// Leaves every activation untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl ActivationHook for NoHook {
    fn edit(&mut self, _layer_id: usize, _token_index: usize, activation: &[f64]) -> Result<Vec<f64>> {
        Ok(activation.to_vec())
    }
}

/// Streaming editor for one sequence.
///
/// Tokens of a layer must arrive in order; token index 0 starts a new
/// sequence for that layer and resets its sums. Layers outside the selection
/// pass through unchanged.
#[derive(Debug, Clone)]
pub struct Editor {
    config: EditConfig,
    feature: FeatureSpec,
    projectors: Arc<BTreeMap<usize, Projector>>,
    sums: BTreeMap<usize, RunningSums>,
    d: usize,
}

impl Editor {
    /// `model_layers` lists the host model's hookable layer ids, against which
    /// the configured layer selection is resolved.
    pub fn new(bundle: &ProjectionBundle, config: EditConfig, model_layers: &[usize]) -> Result<Self> {
        let selected = check_compatible(bundle, &config, model_layers)?;
        let projectors = selected
            .iter()
            .map(|&id| (id, Projector::new(bundle.layer(id).expect("checked"))))
            .collect();
        Ok(Self {
            feature: *bundle.feature(),
            config,
            projectors: Arc::new(projectors),
            sums: BTreeMap::new(),
            d: bundle.d(),
        })
    }

    pub fn selected_layers(&self) -> Vec<usize> {
        self.projectors.keys().copied().collect()
    }

    pub fn config(&self) -> &EditConfig {
        &self.config
    }

    /// A fresh editor sharing the same projectors.
    pub fn fork(&self) -> Self {
        Self {
            config: self.config.clone(),
            feature: self.feature,
            projectors: Arc::clone(&self.projectors),
            sums: BTreeMap::new(),
            d: self.d,
        }
    }

    pub fn reset(&mut self) {
        self.sums.clear();
    }

    pub fn sums(&self, layer_id: usize) -> Option<&RunningSums> {
        self.sums.get(&layer_id)
    }
}

impl ActivationHook for Editor {
    fn edit(&mut self, layer_id: usize, token_index: usize, activation: &[f64]) -> Result<Vec<f64>> {
        let Some(projector) = self.projectors.get(&layer_id) else {
            return Ok(activation.to_vec());
        };
        if activation.len() != self.d {
            return Err(SeaError::Shape(format!(
                "activation width {} does not match bundle width {}",
                activation.len(),
                self.d
            )));
        }
        let sums = self.sums.entry(layer_id).or_insert_with(|| RunningSums::new(self.d));
        if token_index == 0 {
            *sums = RunningSums::new(self.d);
        } else if token_index != sums.tokens {
            return Err(SeaError::CorruptedState(format!(
                "layer {layer_id} expected token {}, got {token_index}",
                sums.tokens
            )));
        }
        nonlinear_edit(activation, projector, &self.feature, &self.config, sums)
    }
}

/// The tokens of one layer, in order, each a `d`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStream {
    pub layer_id: usize,
    pub tokens: Vec<Vec<f64>>,
}

/// Edits whole sequences. Incremental normalization feeds tokens one at a
/// time through an [`Editor`]; batch normalization sums over every token of
/// the layer before merging.
pub fn edit_sequence(streams: &[LayerStream], bundle: &ProjectionBundle, config: &EditConfig) -> Result<Vec<LayerStream>> {
    let model_layers: Vec<usize> = streams.iter().map(|s| s.layer_id).collect();
    if model_layers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SeaError::Invalid("stream layer ids must be strictly increasing".into()));
    }
    for s in streams {
        if let Some(t) = s.tokens.iter().find(|t| t.len() != bundle.d()) {
            return Err(SeaError::Shape(format!(
                "layer {} token width {} does not match bundle width {}",
                s.layer_id,
                t.len(),
                bundle.d()
            )));
        }
    }
    let mut editor = Editor::new(bundle, config.clone(), &model_layers)?;
    streams
        .iter()
        .map(|s| {
            let tokens = match (editor.projectors.get(&s.layer_id), config.normalization) {
                (None, _) => s.tokens.clone(),
                (Some(_), Normalization::Incremental) => s
                    .tokens
                    .iter()
                    .enumerate()
                    .map(|(t, z)| editor.edit(s.layer_id, t, z))
                    .collect::<Result<_>>()?,
                (Some(p), Normalization::Batch) => batch_layer(&s.tokens, p, &editor.feature, config)?,
            };
            Ok(LayerStream {
                layer_id: s.layer_id,
                tokens,
            })
        })
        .collect()
}

fn batch_layer(tokens: &[Vec<f64>], projector: &Projector, feature: &FeatureSpec, config: &EditConfig) -> Result<Vec<Vec<f64>>> {
    let mut sums = RunningSums::new(projector.d());
    let branches = tokens
        .iter()
        .map(|z| {
            let (p, m) = branches(z, projector, feature, config.mode)?;
            sums.accumulate(z, &p, &m);
            Ok((p, m))
        })
        .collect::<Result<Vec<_>>>()?;
    branches
        .into_iter()
        .map(|(p, m)| finish(p, m, &sums, config))
        .collect()
}

/// Per-layer outcome of [`edit_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEditReport {
    pub layer_id: usize,
    pub edited: bool,
    /// Mean ‖z − z̄‖ per role, in [`Role::ALL`] order.
    pub mean_edit_magnitude: [f64; 3],
}

/// Edits each role of an activation set as its own stream, samples along the
/// token axis.
pub fn edit_set(set: &ActivationSet, bundle: &ProjectionBundle, config: &EditConfig) -> Result<(ActivationSet, Vec<LayerEditReport>)> {
    set.validate()?;
    if set.d() != bundle.d() {
        return Err(SeaError::Shape(format!(
            "activation width {} does not match bundle width {}",
            set.d(),
            bundle.d()
        )));
    }
    let selected = check_compatible(bundle, config, &set.layer_ids())?;
    let mut out = set.clone();
    let mut totals = vec![[0.0; 3]; set.layers().len()];
    for (r, role) in Role::ALL.into_iter().enumerate() {
        let streams: Vec<LayerStream> = set
            .layers()
            .iter()
            .map(|l| LayerStream {
                layer_id: l.layer_id,
                tokens: (0..l.role(role).cols())
                    .map(|j| l.role(role).column(j).iter().map(|&v| f64::from(v)).collect())
                    .collect(),
            })
            .collect();
        let edited = edit_sequence(&streams, bundle, config)?;
        for (i, (before, after)) in streams.iter().zip(&edited).enumerate() {
            totals[i][r] = mean_edit_magnitude(&before.tokens, &after.tokens);
            let cols: Vec<Vec<f32>> = after
                .tokens
                .iter()
                .map(|t| t.iter().map(|&v| v as f32).collect())
                .collect();
            *out.layers_mut()[i].role_mut(role) = Matrix32::from_columns(set.d(), &cols)?;
        }
    }
    out.validate()?;
    let reports = set
        .layers()
        .iter()
        .zip(totals)
        .map(|(l, mean_edit_magnitude)| LayerEditReport {
            layer_id: l.layer_id,
            edited: selected.contains(&l.layer_id),
            mean_edit_magnitude,
        })
        .collect();
    Ok((out, reports))
}

/// Mean Euclidean distance between original and edited tokens.
pub fn mean_edit_magnitude(before: &[Vec<f64>], after: &[Vec<f64>]) -> f64 {
    if before.is_empty() {
        return 0.0;
    }
    let total: f64 = before
        .iter()
        .zip(after)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    total / before.len() as f64
}
