// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small, seeded, untrained decoder-only transformer.
//!
//! Pre-norm blocks with single-head causal attention and a GELU MLP:
//!
//! ```text
//! x ← tok_emb[t] + pos_emb[p]
//! for each layer:
//!     x ← x + attn(ln1(x))
//!     m ← mlp(ln2(x))          // hook point: the host hook may replace m
//!     x ← x + m
//! logits ← unembed · ln_f(x)
//! ```
//!
//! Weights are drawn from a ChaCha stream keyed by the config seed and kept at
//! 32-bit precision; the forward pass runs in 64-bit.

mod checkpoint;
mod demos;
mod scorer;

pub use checkpoint::{read_model, write_model};
pub use demos::{synthesize_demonstrations, BehaviorSpec};
pub use scorer::{score_mc1, Mc1Outcome};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::editing::{ActivationHook, NoHook};
use crate::error::{Result, SeaError};
use crate::io::Matrix32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub context: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            d_model: 64,
            vocab: 256,
            context: 32,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.vocab == 0 || self.context == 0 {
            return Err(SeaError::Config(format!("toy model sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        4 * self.d_model
    }

    /// Names and shapes of every weight tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, usize, usize)> {
        let (d, h) = (self.d_model, self.hidden());
        let mut out = vec![
            ("embed.token".to_owned(), d, self.vocab),
            ("embed.position".to_owned(), d, self.context),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("ln1.gain"), d, 1),
                (p("ln1.bias"), d, 1),
                (p("attn.q"), d, d),
                (p("attn.k"), d, d),
                (p("attn.v"), d, d),
                (p("attn.o"), d, d),
                (p("ln2.gain"), d, 1),
                (p("ln2.bias"), d, 1),
                (p("mlp.in"), h, d),
                (p("mlp.in_bias"), h, 1),
                (p("mlp.out"), d, h),
                (p("mlp.out_bias"), d, 1),
            ]);
        }
        out.extend([
            ("final.ln.gain".to_owned(), d, 1),
            ("final.ln.bias".to_owned(), d, 1),
            ("unembed".to_owned(), self.vocab, d),
        ]);
        out
    }
}

struct Block {
    ln1: (DVector<f64>, DVector<f64>),
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    o: DMatrix<f64>,
    ln2: (DVector<f64>, DVector<f64>),
    w_in: DMatrix<f64>,
    b_in: DVector<f64>,
    w_out: DMatrix<f64>,
    b_out: DVector<f64>,
}

/// Logits and hooked activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[position][vocab]`.
    pub logits: Vec<Vec<f64>>,
    /// `[layer][position][d]`: MLP outputs as presented to the hook.
    pub mlp_outputs: Vec<Vec<Vec<f64>>>,
    /// `[layer][position][d]`: what the hook returned and the residual stream received.
    pub written: Vec<Vec<Vec<f64>>>,
}

pub struct ToyModel {
    config: ToyModelConfig,
    tensors: Vec<(String, Matrix32)>,
    token_embed: DMatrix<f64>,
    position_embed: DMatrix<f64>,
    blocks: Vec<Block>,
    final_ln: (DVector<f64>, DVector<f64>),
    unembed: DMatrix<f64>,
}

impl std::fmt::Debug for ToyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyModel").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Standard deviation used to initialise each tensor; `None` means all ones.
fn init_scale(name: &str, d: usize, h: usize) -> Option<f64> {
    let (d, h) = (d as f64, h as f64);
    let scale = if name.ends_with(".gain") {
        return None;
    } else if name.ends_with("ln1.bias") || name.ends_with("ln2.bias") || name == "final.ln.bias" {
        0.0
    } else if name.starts_with("embed.") {
        1.0
    } else if name.ends_with("attn.o") {
        0.5 / d.sqrt()
    } else if name.ends_with("mlp.in_bias") {
        0.1
    } else if name.ends_with("mlp.out_bias") {
        0.02
    } else if name.ends_with("mlp.out") {
        0.7 / h.sqrt()
    } else {
        1.0 / d.sqrt()
    };
    Some(scale)
}

impl ToyModel {
    /// Draws all weights from the config seed.
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.d_model, config.hidden());
        let tensors = config
            .tensor_layout()
            .into_iter()
            .map(|(name, rows, cols)| {
                let data: Vec<f32> = match init_scale(&name, d, h) {
                    None => vec![1.0; rows * cols],
                    Some(0.0) => vec![0.0; rows * cols],
                    Some(s) => {
                        let normal = Normal::new(0.0, s).expect("positive scale");
                        (0..rows * cols).map(|_| normal.sample(&mut rng) as f32).collect()
                    }
                };
                let m = Matrix32::from_column_major(rows, cols, data)?;
                Ok((name, m))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(config, tensors)
    }

    /// Assembles a model from named tensors in `tensor_layout` order.
    pub fn from_tensors(config: ToyModelConfig, tensors: Vec<(String, Matrix32)>) -> Result<Self> {
        config.validate()?;
        let layout = config.tensor_layout();
        if layout.len() != tensors.len() {
            return Err(SeaError::Shape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, rows, cols), (got_name, m)) in layout.iter().zip(&tensors) {
            if name != got_name || m.rows() != *rows || m.cols() != *cols {
                return Err(SeaError::Shape(format!(
                    "tensor {got_name} ({}x{}) does not match {name} ({rows}x{cols})",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(SeaError::NonFinite(format!("tensor {name}")));
            }
        }
        let mut it = tensors.iter().map(|(_, m)| m.to_f64());
        let mut next = || it.next().expect("layout checked");
        let vec = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        let token_embed = next();
        let position_embed = next();
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1: (vec(next()), vec(next())),
                q: next(),
                k: next(),
                v: next(),
                o: next(),
                ln2: (vec(next()), vec(next())),
                w_in: next(),
                b_in: vec(next()),
                w_out: next(),
                b_out: vec(next()),
            })
            .collect();
        let final_ln = (vec(next()), vec(next()));
        let unembed = next();
        Ok(Self {
            config,
            tensors,
            token_embed,
            position_embed,
            blocks,
            final_ln,
            unembed,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[(String, Matrix32)] {
        &self.tensors
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        (0..self.config.layers).collect()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(SeaError::Invalid("empty token sequence".into()));
        }
        if tokens.len() > self.config.context {
            return Err(SeaError::SequenceTooLong {
                len: tokens.len(),
                context: self.config.context,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab) {
            return Err(SeaError::TokenOutOfVocab {
                token: bad,
                vocab: self.config.vocab,
            });
        }
        Ok(())
    }

    /// Runs the model, calling `hook` on every MLP output in layer order and,
    /// within a layer, in position order.
    pub fn forward_with_hooks(&self, tokens: &[usize], hook: &mut dyn ActivationHook) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let t_len = tokens.len();
        let mut xs: Vec<DVector<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| self.token_embed.column(t) + self.position_embed.column(p))
            .collect();

        let scale = 1.0 / (d as f64).sqrt();
        let mut mlp_outputs = Vec::with_capacity(self.blocks.len());
        let mut written = Vec::with_capacity(self.blocks.len());
        for (layer_id, block) in self.blocks.iter().enumerate() {
            let normed: Vec<DVector<f64>> = xs.iter().map(|x| layer_norm(x, &block.ln1)).collect();
            let qs: Vec<DVector<f64>> = normed.iter().map(|x| &block.q * x).collect();
            let ks: Vec<DVector<f64>> = normed.iter().map(|x| &block.k * x).collect();
            let vs: Vec<DVector<f64>> = normed.iter().map(|x| &block.v * x).collect();
            for p in 0..t_len {
                let scores: Vec<f64> = (0..=p).map(|j| qs[p].dot(&ks[j]) * scale).collect();
                let weights = softmax(&scores);
                let mut mixed = DVector::zeros(d);
                for (j, w) in weights.iter().enumerate() {
                    mixed.axpy(*w, &vs[j], 1.0);
                }
                xs[p] += &block.o * mixed;
            }

            let mut layer_in = Vec::with_capacity(t_len);
            let mut layer_out = Vec::with_capacity(t_len);
            for (p, x) in xs.iter_mut().enumerate() {
                let hidden = (&block.w_in * layer_norm(x, &block.ln2) + &block.b_in).map(gelu);
                let m = &block.w_out * hidden + &block.b_out;
                let replaced = hook.edit(layer_id, p, m.as_slice())?;
                if replaced.len() != d {
                    return Err(SeaError::Shape(format!(
                        "hook returned width {} at layer {layer_id}, expected {d}",
                        replaced.len()
                    )));
                }
                *x += DVector::from_column_slice(&replaced);
                layer_in.push(m.as_slice().to_vec());
                layer_out.push(replaced);
            }
            mlp_outputs.push(layer_in);
            written.push(layer_out);
        }

        let logits = xs
            .iter()
            .map(|x| (&self.unembed * layer_norm(x, &self.final_ln)).as_slice().to_vec())
            .collect();
        Ok(ForwardOutput {
            logits,
            mlp_outputs,
            written,
        })
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        self.forward_with_hooks(tokens, &mut NoHook)
    }

    /// MLP outputs at the final position, one `d`-vector per layer.
    pub fn last_token_activations(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.last_token_activations_with_hooks(tokens, &mut NoHook)
    }

    /// Final-position activations as written to the residual stream after
    /// `hook` ran.
    pub fn last_token_activations_with_hooks(
        &self,
        tokens: &[usize],
        hook: &mut dyn ActivationHook,
    ) -> Result<Vec<Vec<f64>>> {
        let out = self.forward_with_hooks(tokens, hook)?;
        Ok(out
            .written
            .into_iter()
            .map(|mut layer| layer.pop().expect("non-empty sequence"))
            .collect())
    }

    /// Sum of next-token log-probabilities of `completion` after `prompt`.
    pub fn completion_log_likelihood(
        &self,
        prompt: &[usize],
        completion: &[usize],
        hook: &mut dyn ActivationHook,
    ) -> Result<f64> {
        if prompt.is_empty() || completion.is_empty() {
            return Err(SeaError::Invalid("prompt and completion must be non-empty".into()));
        }
        let tokens: Vec<usize> = prompt.iter().chain(completion).copied().collect();
        let out = self.forward_with_hooks(&tokens, hook)?;
        Ok(completion
            .iter()
            .enumerate()
            .map(|(i, &tok)| log_softmax_at(&out.logits[prompt.len() + i - 1], tok))
            .sum())
    }
}

fn layer_norm(x: &DVector<f64>, (gain, bias): &(DVector<f64>, DVector<f64>)) -> DVector<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.map(|v| (v - mean) * inv).component_mul(gain) + bias
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044_715 * x.powi(3))).tanh())
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}
