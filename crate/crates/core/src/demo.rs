// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end synthetic run: generate demonstrations on the toy model, fit,
//! edit the neutral activations and measure how much of each behaviour
//! direction survives.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EditConfig, EditMode, LayerSelection, MergeMode, Normalization};
use crate::editing::{edit_sequence, mean_edit_magnitude, LayerStream};
use crate::error::Result;
use crate::features::FeatureSpec;
use crate::fit::fit_bundle;
use crate::io::{ActivationSet, ProjectionBundle, Role};
use crate::toy::{synthesize_demonstrations, BehaviorSpec, ToyModel, ToyModelConfig};

/// Minimum share of the mean |b⁻ component| that editing must remove.
pub const MIN_NEGATIVE_REDUCTION: f64 = 0.80;
/// Minimum share of the mean |b⁺ component| that editing must keep.
pub const MIN_POSITIVE_RETENTION: f64 = 0.60;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub seed: u64,
    pub layers: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub context: usize,
    pub injection_layer: usize,
    pub magnitude: f64,
    pub noise: f64,
    pub samples: usize,
    pub threshold: f64,
    pub edit_layers: usize,
    pub mode: EditMode,
    pub merge: MergeMode,
    pub feature: FeatureSpec,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layers: 4,
            d_model: 16,
            vocab: 256,
            context: 32,
            injection_layer: 2,
            magnitude: 5.0,
            noise: 0.1,
            samples: 200,
            threshold: 0.99,
            edit_layers: 2,
            mode: EditMode::Both,
            merge: MergeMode::NormRescale,
            feature: FeatureSpec::identity(),
        }
    }
}

impl DemoConfig {
    pub fn edit_config(&self) -> EditConfig {
        EditConfig {
            threshold: self.threshold,
            layers: LayerSelection::Top(self.edit_layers),
            mode: self.mode,
            merge: self.merge,
            feature: self.feature,
            center: false,
            normalization: Normalization::Batch,
        }
    }

    /// Model, behaviour and data seeds derived from the one demo seed.
    fn seeds(&self) -> (u64, u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (rng.next_u64(), rng.next_u64(), rng.next_u64())
    }
}

/// Everything the synthetic task produces before editing.
#[derive(Debug)]
pub struct SyntheticTask {
    pub model: ToyModel,
    pub behavior: BehaviorSpec,
    pub set: ActivationSet,
}

pub fn synthetic_task(cfg: &DemoConfig) -> Result<SyntheticTask> {
    let (model_seed, behavior_seed, data_seed) = cfg.seeds();
    let model = ToyModel::new(ToyModelConfig {
        layers: cfg.layers,
        d_model: cfg.d_model,
        vocab: cfg.vocab,
        context: cfg.context,
        seed: model_seed,
    })?;
    let behavior = BehaviorSpec::random(cfg.d_model, cfg.injection_layer, cfg.magnitude, cfg.noise, behavior_seed)?;
    let set = synthesize_demonstrations(&model, &behavior, cfg.samples, data_seed)?;
    Ok(SyntheticTask { model, behavior, set })
}

/// One role of every layer as token streams, samples along the token axis.
pub fn role_streams(set: &ActivationSet, role: Role) -> Vec<LayerStream> {
    set.layers()
        .iter()
        .map(|l| {
            let m = l.role(role);
            LayerStream {
                layer_id: l.layer_id,
                tokens: (0..m.cols())
                    .map(|j| m.column(j).iter().map(|&v| f64::from(v)).collect())
                    .collect(),
            }
        })
        .collect()
}

/// Mean `|bᵀz|` over tokens.
pub fn mean_abs_component(tokens: &[Vec<f64>], direction: &[f64]) -> f64 {
    let total: f64 = tokens
        .iter()
        .map(|z| z.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>().abs())
        .sum();
    total / tokens.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub k_plus: usize,
    pub k_minus: usize,
    /// `1 − after/before` of the mean |b⁻ component| at the injection layer.
    pub negative_reduction: f64,
    /// `after/before` of the mean |b⁺ component| at the injection layer.
    pub positive_retention: f64,
    pub negative_before: f64,
    pub negative_after: f64,
    pub positive_before: f64,
    pub positive_after: f64,
    /// `(layer, mean ‖z − z̄‖)` for every layer.
    pub edit_magnitude: Vec<(usize, f64)>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.negative_reduction >= MIN_NEGATIVE_REDUCTION && self.positive_retention >= MIN_POSITIVE_RETENTION
    }
}

/// Edits the neutral activations of `task` with `bundle` and measures the
/// behaviour components at the injection layer.
pub fn measure(cfg: &DemoConfig, task: &SyntheticTask, bundle: &ProjectionBundle) -> Result<DemoReport> {
    let streams = role_streams(&task.set, Role::Neutral);
    let edited = edit_sequence(&streams, bundle, &cfg.edit_config())?;
    let at = |s: &[LayerStream]| {
        s.iter()
            .find(|l| l.layer_id == task.behavior.injection_layer)
            .map(|l| l.tokens.clone())
            .expect("injection layer present in the set")
    };
    let (before, after) = (at(&streams), at(&edited));
    let negative_before = mean_abs_component(&before, &task.behavior.negative);
    let negative_after = mean_abs_component(&after, &task.behavior.negative);
    let positive_before = mean_abs_component(&before, &task.behavior.positive);
    let positive_after = mean_abs_component(&after, &task.behavior.positive);
    let record = bundle.layer(task.behavior.injection_layer);
    Ok(DemoReport {
        config: cfg.clone(),
        k_plus: record.map_or(0, |r| r.k_plus),
        k_minus: record.map_or(0, |r| r.k_minus),
        negative_reduction: 1.0 - negative_after / negative_before,
        positive_retention: positive_after / positive_before,
        negative_before,
        negative_after,
        positive_before,
        positive_after,
        edit_magnitude: streams
            .iter()
            .zip(&edited)
            .map(|(a, b)| (a.layer_id, mean_edit_magnitude(&a.tokens, &b.tokens)))
            .collect(),
    })
}

/// Generate, fit, edit, measure.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let task = synthetic_task(cfg)?;
    let bundle = fit_bundle(&task.set, &cfg.edit_config())?;
    measure(cfg, &task, &bundle)
}
