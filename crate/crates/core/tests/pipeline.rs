// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sea_core::demo::{role_streams, synthetic_task, DemoConfig};
use sea_core::editing::{edit_sequence, edit_set, Editor, LayerStream, NoHook};
use sea_core::fit::{fit_bundle, fit_layer};
use sea_core::io::{ActivationSet, LayerProjection, LayerSamples, Matrix32, ProjectionBundle, Role};
use sea_core::toy::{score_mc1, synthesize_demonstrations, BehaviorSpec, ToyModel, ToyModelConfig};
use sea_core::{EditConfig, EditMode, LayerSelection, Normalization};

fn toy(d: usize, seed: u64) -> ToyModel {
    ToyModel::new(ToyModelConfig {
        layers: 4,
        d_model: d,
        vocab: 64,
        context: 32,
        seed,
    })
    .unwrap()
}

#[test]
fn mean_positive_offset_converges_to_injection() {
    let model = toy(16, 11);
    let b = BehaviorSpec::random(16, 2, 5.0, 0.1, 12).unwrap();
    let n = 1000;
    let set = synthesize_demonstrations(&model, &b, n, 13).unwrap();
    let layer = set.layer(2).unwrap();
    let tol = 0.1 * 3.0 / (n as f64).sqrt();
    for i in 0..16 {
        let mean: f64 = (0..n)
            .map(|j| f64::from(layer.positive.get(i, j)) - f64::from(layer.neutral.get(i, j)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 5.0 * b.positive[i]).abs() <= tol, "coordinate {i}: {mean}");
    }
}

#[test]
fn negative_complement_excludes_negative_direction() {
    for seed in 0..10 {
        let cfg = DemoConfig { seed, ..DemoConfig::default() };
        let task = synthetic_task(&cfg).unwrap();
        let config = EditConfig {
            threshold: EditConfig::truthfulness().threshold,
            ..cfg.edit_config()
        };
        let fit = fit_layer(task.set.layer(cfg.injection_layer).unwrap(), &config).unwrap();
        let b = DVector::from_column_slice(&task.behavior.negative);
        let residual = (&fit.keep_negative * (fit.keep_negative.transpose() * &b)).norm();
        assert!(residual <= 0.2, "seed {seed}: {residual}");
    }
}

fn full_span_bundle(d: usize, layers: &[usize]) -> ProjectionBundle {
    let eye: Vec<Vec<f32>> = (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let records = layers
        .iter()
        .map(|&layer_id| LayerProjection {
            layer_id,
            keep_positive: Matrix32::from_columns(d, &eye).unwrap(),
            keep_negative: Matrix32::zeros(d, 0),
            k_plus: d,
            k_minus: d,
            sigma_plus: vec![1.0; d],
            sigma_minus: vec![1.0; d],
        })
        .collect();
    ProjectionBundle::new(d, EditConfig::default(), records).unwrap()
}

#[test]
fn full_span_bundle_leaves_logits_unchanged() {
    let model = toy(16, 3);
    let bundle = full_span_bundle(16, &model.layer_ids());
    let config = EditConfig {
        layers: LayerSelection::Top(4),
        ..EditConfig::default()
    };
    let mut editor = Editor::new(&bundle, config, &model.layer_ids()).unwrap();
    let tokens: Vec<usize> = (0..20).map(|t| (t * 7 + 3) % 64).collect();
    let plain = model.forward(&tokens).unwrap();
    let edited = model.forward_with_hooks(&tokens, &mut editor).unwrap();
    let worst = plain
        .logits
        .iter()
        .flatten()
        .zip(edited.logits.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn full_threshold_fit_then_edit_reproduces_input() {
    let task = synthetic_task(&DemoConfig::default()).unwrap();
    let config = EditConfig {
        threshold: 1.0,
        layers: LayerSelection::Top(4),
        normalization: Normalization::Batch,
        ..EditConfig::default()
    };
    let bundle = fit_bundle(&task.set, &config).unwrap();
    for role in Role::ALL {
        let streams = role_streams(&task.set, role);
        let edited = edit_sequence(&streams, &bundle, &config).unwrap();
        for (a, b) in streams.iter().zip(&edited) {
            for (x, y) in a.tokens.iter().flatten().zip(b.tokens.iter().flatten()) {
                assert!((x - y).abs() <= 1e-6, "layer {}: {x} vs {y}", a.layer_id);
            }
        }
    }
    let (same, reports) = edit_set(&task.set, &bundle, &config).unwrap();
    assert!(reports.iter().all(|r| r.mean_edit_magnitude.iter().all(|m| *m <= 1e-6)));
    assert_eq!(same.n(), task.set.n());
}

fn swapped(set: &ActivationSet) -> ActivationSet {
    let layers = set
        .layers()
        .iter()
        .map(|l| LayerSamples {
            layer_id: l.layer_id,
            neutral: l.neutral.clone(),
            positive: l.negative.clone(),
            negative: l.positive.clone(),
        })
        .collect();
    ActivationSet::new(layers, set.meta.clone()).unwrap()
}

#[test]
fn reverse_on_swapped_demonstrations_matches_forward() {
    let cfg = DemoConfig::default();
    let task = synthetic_task(&cfg).unwrap();
    let forward_cfg = cfg.edit_config();
    let reverse_cfg = EditConfig {
        mode: EditMode::Reverse,
        ..forward_cfg.clone()
    };
    let forward = fit_bundle(&task.set, &forward_cfg).unwrap();
    let reverse = fit_bundle(&swapped(&task.set), &reverse_cfg).unwrap();
    assert_eq!(forward.layers(), reverse.layers());
    let streams = role_streams(&task.set, Role::Neutral);
    let a = edit_sequence(&streams, &forward, &forward_cfg).unwrap();
    let b = edit_sequence(&streams, &reverse, &reverse_cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn editing_commutes_with_scaling() {
    let task = synthetic_task(&DemoConfig::default()).unwrap();
    let base = DemoConfig::default().edit_config();
    let bundle = fit_bundle(&task.set, &base).unwrap();
    let streams = role_streams(&task.set, Role::Neutral);
    let c = -2.5;
    let scaled: Vec<LayerStream> = streams
        .iter()
        .map(|s| LayerStream {
            layer_id: s.layer_id,
            tokens: s.tokens.iter().map(|t| t.iter().map(|v| c * v).collect()).collect(),
        })
        .collect();
    for normalization in [Normalization::Batch, Normalization::Incremental] {
        let config = EditConfig {
            normalization,
            ..base.clone()
        };
        let a = edit_sequence(&streams, &bundle, &config).unwrap();
        let b = edit_sequence(&scaled, &bundle, &config).unwrap();
        for (x, y) in a.iter().flat_map(|s| s.tokens.iter().flatten()).zip(b.iter().flat_map(|s| s.tokens.iter().flatten())) {
            assert!((c * x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} {y}");
        }
    }
}

#[test]
fn streaming_hook_edits_completions() {
    let cfg = DemoConfig::default();
    let task = synthetic_task(&cfg).unwrap();
    let config = EditConfig {
        normalization: Normalization::Incremental,
        ..cfg.edit_config()
    };
    let bundle = fit_bundle(&task.set, &config).unwrap();
    let editor = Editor::new(&bundle, config, &task.model.layer_ids()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let prompt: Vec<usize> = (0..6).map(|_| rng.random_range(0..cfg.vocab)).collect();
    let candidates: Vec<Vec<usize>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(0..cfg.vocab)).collect()).collect();
    let score = |hook: &mut dyn FnMut() -> Box<dyn sea_core::editing::ActivationHook>| {
        candidates
            .iter()
            .map(|c| task.model.completion_log_likelihood(&prompt, c, hook().as_mut()).unwrap())
            .collect::<Vec<f64>>()
    };
    let plain = score(&mut || Box::new(NoHook));
    let edited = score(&mut || Box::new(editor.fork()));
    assert!(plain.iter().chain(&edited).all(|v| v.is_finite() && *v < 0.0));
    assert_ne!(plain, edited);
    assert!(score_mc1(&edited, 0).is_ok());
}
