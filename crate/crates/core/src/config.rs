// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fitting and editing configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::features::FeatureSpec;

/// Explained-variance threshold of the best truthfulness setting.
pub const TRUTHFULNESS_THRESHOLD: f64 = 0.998;
/// Number of top layers edited in the best truthfulness setting.
pub const TRUTHFULNESS_LAYERS: usize = 21;
pub const FAIRNESS_THRESHOLD: f64 = 0.999;
pub const FAIRNESS_LAYERS: usize = 3;

/// Which projection branches contribute to the edited activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMode {
    Both,
    PositiveOnly,
    NegativeOnly,
    /// Both branches, fitted with the positive and negative covariances
    /// exchanged: keeps what covaries with the negative demonstrations and
    /// removes what covaries with the positive ones.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Per-coordinate rescaling that restores the token-axis norm.
    NormRescale,
    Average,
}

/// How the norm-rescale sums over the token axis are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Sums cover the tokens processed so far; suits online decoding.
    #[default]
    Incremental,
    /// Sums cover the whole sequence; requires the sequence up front.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelection {
    Top(usize),
    Bottom(usize),
    Explicit(Vec<usize>),
}

impl LayerSelection {
    /// Resolves the selection against the layer ids a model (or set) exposes.
    pub fn resolve(&self, available: &[usize]) -> Result<Vec<usize>> {
        let count = available.len();
        let check = |l: usize| {
            if l == 0 || l > count {
                Err(SeaError::Config(format!(
                    "layer count L={l} outside 1..={count} available layers"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSelection::Top(l) => {
                check(*l)?;
                Ok(available[count - l..].to_vec())
            }
            LayerSelection::Bottom(l) => {
                check(*l)?;
                Ok(available[..*l].to_vec())
            }
            LayerSelection::Explicit(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids.dedup();
                for &id in &ids {
                    if !available.contains(&id) {
                        return Err(SeaError::UnknownLayer(id));
                    }
                }
                Ok(ids)
            }
        }
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::Top(l) => write!(f, "top:{l}"),
            LayerSelection::Bottom(l) => write!(f, "bottom:{l}"),
            LayerSelection::Explicit(ids) if ids.is_empty() => f.write_str("none"),
            LayerSelection::Explicit(ids) => {
                let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                write!(f, "ids:{}", ids.join(","))
            }
        }
    }
}

impl FromStr for LayerSelection {
    type Err = SeaError;

    /// Accepts `top:L`, `bottom:L`, a bare `L` (top), `none`, or a comma
    /// separated list of layer ids prefixed with `ids:`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || SeaError::Config(format!("cannot parse layer selection {s:?}"));
        let s = s.trim();
        if s == "none" {
            return Ok(LayerSelection::Explicit(Vec::new()));
        }
        if let Some(rest) = s.strip_prefix("top:") {
            return rest.parse().map(LayerSelection::Top).map_err(|_| bad());
        }
        if let Some(rest) = s.strip_prefix("bottom:") {
            return rest.parse().map(LayerSelection::Bottom).map_err(|_| bad());
        }
        if let Some(rest) = s.strip_prefix("ids:") {
            return rest
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()
                .map(LayerSelection::Explicit);
        }
        s.parse().map(LayerSelection::Top).map_err(|_| bad())
    }
}

macro_rules! kebab_from_str {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = SeaError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(SeaError::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

kebab_from_str!(EditMode,
    "both" => EditMode::Both,
    "positive-only" => EditMode::PositiveOnly,
    "negative-only" => EditMode::NegativeOnly,
    "reverse" => EditMode::Reverse,
);

kebab_from_str!(MergeMode,
    "norm-rescale" => MergeMode::NormRescale,
    "average" => MergeMode::Average,
);

kebab_from_str!(Normalization,
    "incremental" => Normalization::Incremental,
    "batch" => Normalization::Batch,
);

/// Everything that shapes a fit and the subsequent edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    /// Explained-variance threshold K in (0, 1].
    pub threshold: f64,
    pub layers: LayerSelection,
    pub mode: EditMode,
    pub merge: MergeMode,
    /// Stored in the bundle's binary feature block rather than its JSON header.
    #[serde(skip)]
    pub feature: FeatureSpec,
    /// Subtract per-set means before forming cross-covariances.
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub normalization: Normalization,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self::truthfulness()
    }
}

impl EditConfig {
    pub fn truthfulness() -> Self {
        Self {
            threshold: TRUTHFULNESS_THRESHOLD,
            layers: LayerSelection::Top(TRUTHFULNESS_LAYERS),
            mode: EditMode::Both,
            merge: MergeMode::NormRescale,
            feature: FeatureSpec::identity(),
            center: false,
            normalization: Normalization::Incremental,
        }
    }

    pub fn fairness() -> Self {
        Self {
            threshold: FAIRNESS_THRESHOLD,
            layers: LayerSelection::Top(FAIRNESS_LAYERS),
            ..Self::truthfulness()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.threshold)?;
        match &self.layers {
            LayerSelection::Top(0) | LayerSelection::Bottom(0) => {
                Err(SeaError::Config("layer count L must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn validate_threshold(k: f64) -> Result<()> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(SeaError::Config(format!("threshold K must lie in (0, 1], got {k}")))
    }
}
