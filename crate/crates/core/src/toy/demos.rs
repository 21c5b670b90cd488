// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic demonstration triplets with known behaviour directions.
//!
//! Each random prompt carries two latent scores `uᵢ`, `vᵢ` (centered over the
//! set, mutually orthogonal, unit RMS). At the injection layer the final
//! position's MLP output receives an additive offset:
//!
//! ```text
//! neutral   m·(uᵢ b⁺ + vᵢ b⁻)
//! positive  m·(uᵢ + 1)·b⁺ + noise
//! negative  m·(vᵢ + 1)·b⁻ + noise
//! ```
//!
//! so a neutral prompt leans both ways, and its positive (negative)
//! demonstration keeps only the b⁺ (b⁻) part and adds `m·b⁺` (`m·b⁻`). The
//! offset flows through the residual stream into later layers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ToyModel;
use crate::editing::ActivationHook;
use crate::error::{Result, SeaError};
use crate::io::{ActivationSet, LayerSamples, Matrix32};

const MIN_PROMPT: usize = 4;
const MAX_PROMPT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSpec {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub injection_layer: usize,
    pub magnitude: f64,
    pub noise: f64,
}

fn unit(v: &[f64]) -> bool {
    (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-8
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl BehaviorSpec {
    pub fn new(positive: Vec<f64>, negative: Vec<f64>, injection_layer: usize, magnitude: f64, noise: f64) -> Result<Self> {
        if positive.len() != negative.len() || positive.is_empty() {
            return Err(SeaError::Shape("behaviour directions must share a positive width".into()));
        }
        if !unit(&positive) || !unit(&negative) {
            return Err(SeaError::Invalid("behaviour directions must be unit vectors".into()));
        }
        if !(magnitude.is_finite() && magnitude >= 0.0 && noise.is_finite() && noise >= 0.0) {
            return Err(SeaError::Invalid("magnitude and noise must be finite and non-negative".into()));
        }
        Ok(Self {
            positive,
            negative,
            injection_layer,
            magnitude,
            noise,
        })
    }

    /// Random orthogonal directions with entries of equal magnitude `1/√d`:
    /// `b⁺` gets random signs and `b⁻` flips a random half of them. Odd
    /// widths fall back to Gaussian draws with `b⁻` orthogonalized against `b⁺`.
    pub fn random(d: usize, injection_layer: usize, magnitude: f64, noise: f64, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(SeaError::Invalid("behaviour directions need width at least 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (positive, negative) = if d.is_multiple_of(2) {
            let s = 1.0 / (d as f64).sqrt();
            let positive: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.5) { s } else { -s }).collect();
            let mut flips: Vec<f64> = (0..d).map(|i| if i < d / 2 { 1.0 } else { -1.0 }).collect();
            flips.shuffle(&mut rng);
            let negative = positive.iter().zip(&flips).map(|(p, f)| p * f).collect();
            (positive, negative)
        } else {
            let positive = random_unit(d, &mut rng);
            let mut negative = random_unit(d, &mut rng);
            let o = dot(&positive, &negative);
            negative.iter_mut().zip(&positive).for_each(|(x, p)| *x -= o * p);
            let norm = dot(&negative, &negative).sqrt();
            negative.iter_mut().for_each(|x| *x /= norm);
            (positive, negative)
        };
        Self::new(positive, negative, injection_layer, magnitude, noise)
    }

    pub fn d(&self) -> usize {
        self.positive.len()
    }

    /// `b⁺ᵀb⁻`.
    pub fn overlap(&self) -> f64 {
        dot(&self.positive, &self.negative)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `delta` to one layer's MLP output at the final position.
struct Injection<'a> {
    layer: usize,
    position: usize,
    delta: &'a [f64],
}

impl ActivationHook for Injection<'_> {
    fn edit(&mut self, layer_id: usize, token_index: usize, activation: &[f64]) -> Result<Vec<f64>> {
        if layer_id == self.layer && token_index == self.position {
            Ok(activation.iter().zip(self.delta).map(|(a, d)| a + d).collect())
        } else {
            Ok(activation.to_vec())
        }
    }
}

/// Centered, mutually orthogonal latent scores with unit RMS.
fn latent_scores(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    let center = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let rescale = |v: &mut Vec<f64>| {
        let ss: f64 = v.iter().map(|x| x * x).sum();
        if ss > 1e-12 {
            let s = (n as f64 / ss).sqrt();
            v.iter_mut().for_each(|x| *x *= s);
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    };
    let mut u = draw(rng);
    let mut v = draw(rng);
    center(&mut u);
    rescale(&mut u);
    center(&mut v);
    let uu: f64 = u.iter().map(|x| x * x).sum();
    if uu > 0.0 {
        let proj = dot(&u, &v) / uu;
        v.iter_mut().zip(&u).for_each(|(x, y)| *x -= proj * y);
    }
    rescale(&mut v);
    (u, v)
}

/// Runs `n` random prompts through `model` and records last-token MLP outputs
/// of every layer for the neutral, positive and negative variants.
pub fn synthesize_demonstrations(model: &ToyModel, behavior: &BehaviorSpec, n: usize, seed: u64) -> Result<ActivationSet> {
    if n == 0 {
        return Err(SeaError::Invalid("need at least one demonstration".into()));
    }
    let cfg = model.config();
    if behavior.d() != cfg.d_model {
        return Err(SeaError::Shape(format!(
            "behaviour width {} does not match model width {}",
            behavior.d(),
            cfg.d_model
        )));
    }
    if behavior.injection_layer >= cfg.layers {
        return Err(SeaError::UnknownLayer(behavior.injection_layer));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = MAX_PROMPT.min(cfg.context);
    let min_len = MIN_PROMPT.min(max_len);
    let prompts: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len);
            (0..len).map(|_| rng.random_range(0..cfg.vocab)).collect()
        })
        .collect();
    let (u, v) = latent_scores(n, &mut rng);

    let m = behavior.magnitude;
    let (bp, bn) = (&behavior.positive, &behavior.negative);
    let mut columns: Vec<[Vec<Vec<f64>>; 3]> = Vec::with_capacity(n);
    for (i, prompt) in prompts.iter().enumerate() {
        let mut noise = || -> Vec<f64> {
            (0..cfg.d_model)
                .map(|_| behavior.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        };
        let neutral: Vec<f64> = bp.iter().zip(bn).map(|(p, q)| m * (u[i] * p + v[i] * q)).collect();
        let positive: Vec<f64> = bp.iter().zip(noise()).map(|(p, e)| m * (u[i] + 1.0) * p + e).collect();
        let negative: Vec<f64> = bn.iter().zip(noise()).map(|(q, e)| m * (v[i] + 1.0) * q + e).collect();
        let run = |delta: &[f64]| {
            let mut hook = Injection {
                layer: behavior.injection_layer,
                position: prompt.len() - 1,
                delta,
            };
            model.last_token_activations_with_hooks(prompt, &mut hook)
        };
        columns.push([run(&neutral)?, run(&positive)?, run(&negative)?]);
    }

    let layers = (0..cfg.layers)
        .map(|l| {
            let role = |r: usize| {
                let data: Vec<f32> = columns.iter().flat_map(|c| c[r][l].iter().map(|&x| x as f32)).collect();
                Matrix32::from_column_major(cfg.d_model, n, data)
            };
            Ok(LayerSamples {
                layer_id: l,
                neutral: role(0)?,
                positive: role(1)?,
                negative: role(2)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = BTreeMap::from([
        ("source".to_owned(), "toy-model".to_owned()),
        ("hook".to_owned(), "mlp-output, last token".to_owned()),
        ("model_seed".to_owned(), cfg.seed.to_string()),
        ("demo_seed".to_owned(), seed.to_string()),
        ("injection_layer".to_owned(), behavior.injection_layer.to_string()),
        ("magnitude".to_owned(), behavior.magnitude.to_string()),
        ("noise".to_owned(), behavior.noise.to_string()),
    ]);
    ActivationSet::new(layers, meta)
}
