// SPDX-License-Identifier: MIT OR Apache-2.0

//! Elementwise feature maps and their clamped pseudo-inverses.
//!
//! Nonlinear editing lifts each activation coordinate through a feature
//! function before fitting and projecting, then maps every edited branch back
//! through a pseudo-inverse. The pseudo-inverses clamp their argument into the
//! range where the logarithms are defined, so they return finite values for any
//! finite input.
//!
//! | kind                  | feature                     | pseudo-inverse                                  |
//! |-----------------------|-----------------------------|-------------------------------------------------|
//! | `identity`            | `z`                         | `z`                                             |
//! | `sqexp`               | `exp(-z²/(2α²))`            | `-2α² log(max(z, ε))`                           |
//! | `tanh`                | `tanh z`                    | `atanh(clamp(z, -1+ε, 1-ε))`                    |
//! | `elu`                 | `z` if `z ≥ 0`, else `α(eᶻ-1)` | `z` if `z ≥ 0`, else `log(max(z, lo)/α + 1)` |
//!
//! The squared-exponential pseudo-inverse returns `z²`, not `z`: the feature is
//! even, so the sign is lost and only the magnitude survives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const MAX_EPSILON: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Identity,
    SquaredExponential,
    Tanh,
    Elu,
}

impl FeatureKind {
    /// ASCII tag used in the "SEAP" feature block.
    pub fn tag(self) -> &'static str {
        match self {
            FeatureKind::Identity => "identity",
            FeatureKind::SquaredExponential => "sqexp",
            FeatureKind::Tanh => "tanh",
            FeatureKind::Elu => "elu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(FeatureKind::Identity),
            "sqexp" => Some(FeatureKind::SquaredExponential),
            "tanh" => Some(FeatureKind::Tanh),
            "elu" => Some(FeatureKind::Elu),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureKind {
    type Err = SeaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-exponential" | "sq-exp" => Ok(FeatureKind::SquaredExponential),
            other => FeatureKind::from_tag(other)
                .ok_or_else(|| SeaError::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    kind: FeatureKind,
    alpha: f64,
    epsilon: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl FeatureSpec {
    pub fn new(kind: FeatureKind, alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(SeaError::Config(format!("alpha must be positive, got {alpha}")));
        }
        if !(epsilon > 0.0 && epsilon <= MAX_EPSILON) {
            return Err(SeaError::Config(format!(
                "epsilon must lie in (0, {MAX_EPSILON}], got {epsilon}"
            )));
        }
        Ok(Self { kind, alpha, epsilon })
    }

    pub fn with_defaults(kind: FeatureKind) -> Self {
        Self {
            kind,
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn identity() -> Self {
        Self::with_defaults(FeatureKind::Identity)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_identity(&self) -> bool {
        self.kind == FeatureKind::Identity
    }

    /// The feature function on one coordinate.
    pub fn forward(&self, z: f64) -> f64 {
        let a = self.alpha;
        match self.kind {
            FeatureKind::Identity => z,
            FeatureKind::SquaredExponential => (-(z * z) / (2.0 * a * a)).exp(),
            FeatureKind::Tanh => z.tanh(),
            FeatureKind::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    a * z.exp_m1()
                }
            }
        }
    }

    /// The clamped pseudo-inverse on one coordinate.
    pub fn pseudo_inverse(&self, z: f64) -> f64 {
        let (a, eps) = (self.alpha, self.epsilon);
        match self.kind {
            FeatureKind::Identity => z,
            FeatureKind::SquaredExponential => -2.0 * a * a * z.max(eps).ln(),
            FeatureKind::Tanh => {
                let c = z.clamp(-1.0 + eps, 1.0 - eps);
                0.5 * ((1.0 + c) / (1.0 - c)).ln()
            }
            FeatureKind::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    // With alpha < 1 the plain -1+eps floor still leaves the log
                    // argument negative; scale the floor so it stays >= eps.
                    let floor = -(1.0 - eps) * a.min(1.0);
                    (z.max(floor) / a).ln_1p()
                }
            }
        }
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SeaError::NonFinite("feature-map input".into()))
    }
}

/// Applies the feature function elementwise.
pub fn apply_feature(z: &[f64], spec: &FeatureSpec) -> Result<Vec<f64>> {
    check_finite(z)?;
    Ok(z.iter().map(|&v| spec.forward(v)).collect())
}

/// Applies the clamped pseudo-inverse elementwise.
pub fn apply_pseudo_inverse(z: &[f64], spec: &FeatureSpec) -> Result<Vec<f64>> {
    check_finite(z)?;
    Ok(z.iter().map(|&v| spec.pseudo_inverse(v)).collect())
}
