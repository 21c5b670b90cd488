// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sea_core::config::LayerSelection;
use sea_core::demo::{run_demo, synthetic_task, DemoConfig};
use sea_core::editing::{edit_sequence, merge, LayerStream, RunningSums};
use sea_core::fit::layer_signatures;
use sea_core::io::{
    read_activation_set, read_projection_bundle, write_activation_set, write_projection_bundle, ActivationSet,
    LayerProjection, LayerSamples, Matrix32, ProjectionBundle,
};
use sea_core::spectral::{cross_covariance, select_rank, svd};
use sea_core::toy::{read_model, write_model, ToyModel, ToyModelConfig};
use sea_core::{EditConfig, EditMode, FeatureKind, FeatureSpec, MergeMode, Normalization};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn orthonormality(m: &DMatrix<f64>) -> f64 {
    (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).abs().max()
}

fn svd_contract() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rec, mut worst_orth) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let d = [4, 16, 64][i % 3];
        let a = gaussian(&mut rng, d, d);
        let s = svd(&a).expect("finite input");
        worst_rec = worst_rec.max((s.reconstruct() - &a).norm() / a.norm());
        worst_orth = worst_orth.max(orthonormality(&s.u)).max(orthonormality(&s.v));
        if s.sigma.windows(2).any(|w| w[1] > w[0]) {
            return outcome(false, format!("sigma not sorted at matrix {i}"));
        }
    }
    let t = start.elapsed();
    outcome(
        worst_rec <= 1e-8 && worst_orth <= 1e-8 && t < Duration::from_secs(30),
        format!("max rel reconstruction {worst_rec:.2e}, max orthonormality {worst_orth:.2e}, {t:.2?}"),
    )
}

fn optimality_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = 4;
        let h = gaussian(&mut rng, d, 30);
        let h2 = gaussian(&mut rng, d, 30);
        let omega = cross_covariance(&h, &h2, false).unwrap();
        let s1 = svd(&omega).unwrap().sigma[0];
        for _ in 0..10_000 {
            let a = nalgebra::DVector::from_vec(unit(&mut rng, d));
            let b = nalgebra::DVector::from_vec(unit(&mut rng, d));
            worst = worst.max((a.transpose() * &omega * b)[(0, 0)] - s1);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(60),
        format!("max aᵀΩb − σ₁ = {worst:.3e}, {t:.2?}"),
    )
}

fn brute_rank(sigma: &[f64], k: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    (1..=sigma.len())
        .find(|&j| sigma[..j].iter().map(|s| s * s).sum::<f64>() / total >= k)
        .unwrap_or(sigma.len())
}

fn rank_selection() -> Outcome {
    let start = Instant::now();
    let fixed = [(0.85, 1), (0.95, 2), (1.0, 2)];
    for (k, want) in fixed {
        if select_rank(&[3.0, 1.0, 0.0], k).ok() != Some(want) {
            return outcome(false, format!("sigma=[3,1,0] K={k} should give {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..10_000 {
        let d = rng.random_range(1..=32);
        let mut sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..10.0f64).powi(2)).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        let k = if case % 10 == 0 { 1.0 } else { rng.random_range(0.01..1.0) };
        let got = select_rank(&sigma, k).unwrap();
        if got != brute_rank(&sigma, k) {
            return outcome(false, format!("case {case}: sigma={sigma:?} K={k} gave {got}"));
        }
    }
    let t = start.elapsed();
    outcome(t < Duration::from_secs(5), format!("10000 random cases and sigma=[3,1,0] agree, {t:.2?}"))
}

fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, cols: usize) -> Matrix32 {
    let q = gaussian(rng, d, d).qr().q();
    Matrix32::from_f64(&q.columns(0, cols).into_owned())
}

fn descending(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let mut s: Vec<f32> = (0..d).map(|_| rng.random_range(0.0..5.0f32)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn random_bundle(rng: &mut ChaCha8Rng, d: usize, layer_ids: &[usize], config: EditConfig) -> ProjectionBundle {
    let layers = layer_ids
        .iter()
        .map(|&layer_id| {
            let k_plus = rng.random_range(1..=d);
            let k_minus = rng.random_range(0..=d);
            LayerProjection {
                layer_id,
                keep_positive: random_orthonormal(rng, d, k_plus),
                keep_negative: random_orthonormal(rng, d, d - k_minus),
                k_plus,
                k_minus,
                sigma_plus: descending(rng, d),
                sigma_minus: descending(rng, d),
            }
        })
        .collect();
    ProjectionBundle::new(d, config, layers).unwrap()
}

fn norm_preservation() -> Outcome {
    let (d, t_len) = (32, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let config = EditConfig {
            layers: LayerSelection::Explicit(vec![0]),
            normalization: Normalization::Batch,
            ..EditConfig::default()
        };
        let bundle = random_bundle(&mut rng, d, &[0], config.clone());
        let tokens: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..d).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        let stream = [LayerStream { layer_id: 0, tokens }];
        let edited = edit_sequence(&stream, &bundle, &config).unwrap();
        for i in 0..d {
            let before: f64 = stream[0].tokens.iter().map(|z| z[i] * z[i]).sum();
            let after: f64 = edited[0].tokens.iter().map(|z| z[i] * z[i]).sum();
            worst = worst.max((before - after).abs());
        }
    }
    let mut sums = RunningSums::new(2);
    sums.accumulate(&[1.0, 2.0], &[0.0, 1.0], &[0.0, 0.0]);
    let guarded = merge(&[0.0, 1.0], &[0.0, 0.0], &sums, MergeMode::NormRescale);
    let zero_ok = matches!(guarded.as_deref(), Ok([z, _]) if *z == 0.0);
    outcome(
        worst <= 1e-6 && zero_ok,
        format!("max |Σz̄ᵢ² − Σzᵢ²| = {worst:.2e} over 20 bundles (d=32, T=50); zero denominator -> 0: {zero_ok}"),
    )
}

fn feature_round_trips() -> Outcome {
    let tanh = FeatureSpec::with_defaults(FeatureKind::Tanh);
    let elu = FeatureSpec::with_defaults(FeatureKind::Elu);
    let sqexp = FeatureSpec::with_defaults(FeatureKind::SquaredExponential);
    let grid = |lo: f64, hi: f64| (0..=20_000).map(move |i| lo + (hi - lo) * i as f64 / 20_000.0);
    let mut worst = [0.0f64; 3];
    for z in grid(-7.0, 7.0).filter(|z| z.tanh().abs() <= 1.0 - tanh.epsilon()) {
        worst[0] = worst[0].max((tanh.pseudo_inverse(tanh.forward(z)) - z).abs());
    }
    for z in grid(-12.0, 10.0).filter(|&z| z >= 0.0 || elu.forward(z) > -1.0 + elu.epsilon()) {
        worst[1] = worst[1].max((elu.pseudo_inverse(elu.forward(z)) - z).abs());
    }
    for z in grid(-3.0, 3.0) {
        worst[2] = worst[2].max((sqexp.pseudo_inverse(sqexp.forward(z)) - z * z).abs());
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-6),
        format!("tanh {:.1e}, elu {:.1e}, sqexp ψ(φ(z))−z² {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let forward = run_demo(&DemoConfig::default()).unwrap();
    let reverse = run_demo(&DemoConfig {
        mode: EditMode::Reverse,
        ..DemoConfig::default()
    })
    .unwrap();
    let t = start.elapsed();
    let reverse_ok = !reverse.passed() && reverse.negative_after > forward.negative_after;
    outcome(
        forward.passed() && reverse_ok && t < Duration::from_secs(120),
        format!(
            "b⁻ reduced {:.1}%, b⁺ retained {:.1}%; reverse b⁻ {:.3} -> {:.3} (forward {:.3}), {t:.2?}",
            100.0 * forward.negative_reduction,
            100.0 * forward.positive_retention,
            reverse.negative_before,
            reverse.negative_after,
            forward.negative_after
        ),
    )
}

fn signature_localization() -> Outcome {
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..10u64 {
        let injection_layer = (seed % 4) as usize;
        let cfg = DemoConfig {
            seed: 100 + seed,
            injection_layer,
            ..DemoConfig::default()
        };
        let set = synthetic_task(&cfg).unwrap().set;
        let sig = layer_signatures(&set).unwrap();
        if sig.peak_layer() == Some(injection_layer) {
            hits += 1;
        } else {
            misses.push((seed, injection_layer, sig.peak_layer()));
        }
    }
    outcome(hits == 10, format!("{hits}/10 trials peak at the injection layer {misses:?}"))
}

fn ablation_ordering() -> Outcome {
    let run = |mode| {
        run_demo(&DemoConfig {
            mode,
            ..DemoConfig::default()
        })
        .unwrap()
    };
    let (both, pos, neg) = (run(EditMode::Both), run(EditMode::PositiveOnly), run(EditMode::NegativeOnly));
    outcome(
        both.negative_reduction > neg.negative_reduction && both.positive_retention > pos.positive_retention,
        format!(
            "b⁻ removed: both {:.3} vs negative-only {:.3}; b⁺ kept: both {:.3} vs positive-only {:.3}",
            both.negative_reduction, neg.negative_reduction, both.positive_retention, pos.positive_retention
        ),
    )
}

fn random_set(rng: &mut ChaCha8Rng) -> ActivationSet {
    let (d, n) = (rng.random_range(1..=8), rng.random_range(1..=6));
    let mut id = 0;
    let layers = (0..rng.random_range(1..=4))
        .map(|_| {
            id += rng.random_range(1..4);
            let mut m = || {
                let data = (0..d * n).map(|_| f32::from_bits(finite_bits(rng))).collect();
                Matrix32::from_column_major(d, n, data).unwrap()
            };
            LayerSamples {
                layer_id: id,
                neutral: m(),
                positive: m(),
                negative: m(),
            }
        })
        .collect();
    let meta = BTreeMap::from([("source".to_owned(), format!("random-{}", rng.random::<u32>()))]);
    ActivationSet::new(layers, meta).unwrap()
}

/// Arbitrary finite f32 bit patterns, including subnormals and negative zero.
fn finite_bits(rng: &mut ChaCha8Rng) -> u32 {
    loop {
        let b: u32 = rng.random();
        if f32::from_bits(b).is_finite() {
            return b;
        }
    }
}

fn bits_equal(a: &Matrix32, b: &Matrix32) -> bool {
    a.rows() == b.rows()
        && a.cols() == b.cols()
        && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let set = random_set(&mut rng);
        let mut bytes = Vec::new();
        write_activation_set(&set, &mut bytes).unwrap();
        let back = read_activation_set(&mut bytes.as_slice()).unwrap();
        let same = back.meta == set.meta
            && back.layers().iter().zip(set.layers()).all(|(a, b)| {
                a.layer_id == b.layer_id
                    && bits_equal(&a.neutral, &b.neutral)
                    && bits_equal(&a.positive, &b.positive)
                    && bits_equal(&a.negative, &b.negative)
            });
        let mut again = Vec::new();
        write_activation_set(&back, &mut again).unwrap();
        if !same || again != bytes {
            return outcome(false, format!("SEAD instance {i} differs"));
        }

        let d = rng.random_range(1..=8);
        let kind = [FeatureKind::Identity, FeatureKind::SquaredExponential, FeatureKind::Tanh, FeatureKind::Elu]
            [rng.random_range(0..4)];
        let config = EditConfig {
            threshold: rng.random_range(0.5..=1.0),
            layers: LayerSelection::Top(rng.random_range(1..5)),
            mode: [EditMode::Both, EditMode::PositiveOnly, EditMode::NegativeOnly, EditMode::Reverse]
                [rng.random_range(0..4)],
            feature: FeatureSpec::new(kind, rng.random_range(0.1..3.0), rng.random_range(1e-9..1e-2)).unwrap(),
            center: rng.random(),
            ..EditConfig::default()
        };
        let ids: Vec<usize> = (0..rng.random_range(1..4)).map(|j| j * 2 + 1).collect();
        let bundle = random_bundle(&mut rng, d, &ids, config);
        let mut bytes = Vec::new();
        write_projection_bundle(&bundle, &mut bytes).unwrap();
        let back = read_projection_bundle(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_projection_bundle(&back, &mut again).unwrap();
        if back != bundle || again != bytes {
            return outcome(false, format!("SEAP instance {i} differs"));
        }

        let cfg = ToyModelConfig {
            layers: rng.random_range(1..=3),
            d_model: rng.random_range(1..=8),
            vocab: rng.random_range(1..=16),
            context: rng.random_range(1..=8),
            seed: rng.random(),
        };
        let model = ToyModel::new(cfg).unwrap();
        let mut bytes = Vec::new();
        write_model(&model, &mut bytes).unwrap();
        let back = read_model(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        let same = back.config() == model.config()
            && back
                .tensors()
                .iter()
                .zip(model.tensors())
                .all(|((na, a), (nb, b))| na == nb && bits_equal(a, b));
        if !same || again != bytes {
            return outcome(false, format!("SEAM instance {i} differs"));
        }
    }
    outcome(true, "100 instances each of SEAD, SEAP and SEAM identical after write -> read -> write")
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("SVD contract", svd_contract),
        ("Optimality oracle", optimality_oracle),
        ("Rank selection", rank_selection),
        ("Merge norm preservation", norm_preservation),
        ("Feature-map round trips", feature_round_trips),
        ("End-to-end synthetic edit", end_to_end),
        ("Signature localization", signature_localization),
        ("Ablation ordering", ablation_ordering),
        ("Format round trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
