// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{decode_f32s, read_envelope, take, write_container, Matrix32, MAGIC_ACTIVATIONS};
use crate::error::{Result, SeaError};

/// Which kind of demonstration a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Neutral,
    Positive,
    Negative,
}

impl Role {
    /// Payload order within a layer.
    pub const ALL: [Role; 3] = [Role::Neutral, Role::Positive, Role::Negative];

    pub fn name(self) -> &'static str {
        match self {
            Role::Neutral => "neutral",
            Role::Positive => "positive",
            Role::Negative => "negative",
        }
    }
}

/// Neutral, positive and negative samples of one layer, each `d × n` with one
/// demonstration per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSamples {
    pub layer_id: usize,
    pub neutral: Matrix32,
    pub positive: Matrix32,
    pub negative: Matrix32,
}

impl LayerSamples {
    pub fn role(&self, role: Role) -> &Matrix32 {
        match role {
            Role::Neutral => &self.neutral,
            Role::Positive => &self.positive,
            Role::Negative => &self.negative,
        }
    }

    pub fn role_mut(&mut self, role: Role) -> &mut Matrix32 {
        match role {
            Role::Neutral => &mut self.neutral,
            Role::Positive => &mut self.positive,
            Role::Negative => &mut self.negative,
        }
    }
}

/// Paired last-token activations for a set of demonstration triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    d: usize,
    n: usize,
    layers: Vec<LayerSamples>,
    pub meta: BTreeMap<String, String>,
}

impl ActivationSet {
    pub fn new(layers: Vec<LayerSamples>, meta: BTreeMap<String, String>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| SeaError::Invalid("activation set has no layers".into()))?;
        let set = Self {
            d: first.neutral.rows(),
            n: first.neutral.cols(),
            layers,
            meta,
        };
        set.validate()?;
        Ok(set)
    }

    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(SeaError::Invalid("activation set has no layers".into()));
        }
        if self.d == 0 || self.n == 0 {
            return Err(SeaError::Invalid(format!(
                "empty sample matrices (d={}, n={})",
                self.d, self.n
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[1].layer_id <= pair[0].layer_id {
                return Err(SeaError::Invalid(format!(
                    "layer ids must be strictly increasing ({} then {})",
                    pair[0].layer_id, pair[1].layer_id
                )));
            }
        }
        for layer in &self.layers {
            for role in Role::ALL {
                let m = layer.role(role);
                if m.rows() != self.d || m.cols() != self.n {
                    return Err(SeaError::Shape(format!(
                        "layer {} {} matrix is {}x{}, expected {}x{}",
                        layer.layer_id,
                        role.name(),
                        m.rows(),
                        m.cols(),
                        self.d,
                        self.n
                    )));
                }
                if !m.is_finite() {
                    return Err(SeaError::NonFinite(format!(
                        "layer {} {} samples",
                        layer.layer_id,
                        role.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[LayerSamples] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerSamples] {
        &mut self.layers
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerSamples> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    n: usize,
    layer_ids: Vec<usize>,
    roles: Vec<String>,
    dtype: String,
    layout: String,
    meta: BTreeMap<String, String>,
}

const DTYPE: &str = "f32le";
const LAYOUT: &str = "column-major";

/// Serializes `set` as a "SEAD" container; returns the number of bytes written.
pub fn write_activation_set<W: Write + ?Sized>(set: &ActivationSet, sink: &mut W) -> Result<u64> {
    set.validate()?;
    let header = Header {
        d: set.d,
        n: set.n,
        layer_ids: set.layer_ids(),
        roles: Role::ALL.iter().map(|r| r.name().to_owned()).collect(),
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        meta: set.meta.clone(),
    };
    write_container(sink, MAGIC_ACTIVATIONS, &header, &[], |emit| {
        for layer in &set.layers {
            for role in Role::ALL {
                emit(layer.role(role).as_slice())?;
            }
        }
        Ok(())
    })
}

/// Parses and validates a "SEAD" container.
pub fn read_activation_set<R: Read + ?Sized>(source: &mut R) -> Result<ActivationSet> {
    let env = read_envelope::<_, Header>(source, MAGIC_ACTIVATIONS)?;
    let h = env.header;
    if h.dtype != DTYPE || h.layout != LAYOUT {
        return Err(SeaError::Header(format!(
            "unsupported dtype/layout {}/{}",
            h.dtype, h.layout
        )));
    }
    let expected_roles: Vec<&str> = Role::ALL.iter().map(|r| r.name()).collect();
    if h.roles != expected_roles {
        return Err(SeaError::Header(format!("unexpected role order {:?}", h.roles)));
    }
    if h.layer_ids.is_empty() || h.d == 0 || h.n == 0 {
        return Err(SeaError::Invalid(format!(
            "header declares an empty set (layers={}, d={}, n={})",
            h.layer_ids.len(),
            h.d,
            h.n
        )));
    }
    let per_matrix = h
        .d
        .checked_mul(h.n)
        .ok_or_else(|| SeaError::Header("d*n overflows".into()))?;
    let total = per_matrix
        .checked_mul(3 * h.layer_ids.len())
        .filter(|t| t.checked_mul(4).is_some())
        .ok_or_else(|| SeaError::Header("payload size overflows".into()))?;
    let values = decode_f32s(&env.body, total)?;

    let mut cursor = values.as_slice();
    let mut layers = Vec::with_capacity(h.layer_ids.len());
    for &layer_id in &h.layer_ids {
        let mut next = || Matrix32::from_column_major(h.d, h.n, take(&mut cursor, per_matrix).to_vec());
        layers.push(LayerSamples {
            layer_id,
            neutral: next()?,
            positive: next()?,
            negative: next()?,
        });
    }
    ActivationSet::new(layers, h.meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros_set(d: usize, n: usize, layer_ids: &[usize]) -> ActivationSet {
        let layers = layer_ids
            .iter()
            .map(|&layer_id| LayerSamples {
                layer_id,
                neutral: Matrix32::zeros(d, n),
                positive: Matrix32::zeros(d, n),
                negative: Matrix32::zeros(d, n),
            })
            .collect();
        ActivationSet::new(layers, BTreeMap::new()).unwrap()
    }

    fn header_len(bytes: &[u8]) -> usize {
        12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize
    }

    #[test]
    fn empty_layer_list_rejected() {
        let err = ActivationSet::new(vec![], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, SeaError::Invalid(_)));
    }

    #[test]
    fn tiny_set_payload_is_24_bytes() {
        let set = zeros_set(2, 1, &[0]);
        let mut buf = Vec::new();
        let written = write_activation_set(&set, &mut buf).unwrap();
        assert_eq!(written as usize, buf.len());
        assert_eq!(&buf[..4], b"SEAD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf.len() - header_len(&buf), 24);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut set = zeros_set(3, 2, &[1, 4]);
        set.meta.insert("source".into(), "unit-test".into());
        for (i, v) in set.layers_mut()[1].positive.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f32).sin() * 1e-3 + f32::MIN_POSITIVE;
        }
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        let back = read_activation_set(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
        let mut again = Vec::new();
        write_activation_set(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn wrong_magic_rejected() {
        let set = zeros_set(2, 1, &[0]);
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        buf[3] = b'P';
        assert!(matches!(
            read_activation_set(&mut buf.as_slice()),
            Err(SeaError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let set = zeros_set(2, 3, &[0, 1]);
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        buf.truncate(buf.len() - 6);
        assert!(matches!(
            read_activation_set(&mut buf.as_slice()),
            Err(SeaError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let set = zeros_set(2, 1, &[0]);
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        buf.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            read_activation_set(&mut buf.as_slice()),
            Err(SeaError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn nan_in_payload_rejected() {
        let set = zeros_set(2, 1, &[0]);
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        let off = header_len(&buf) + 8;
        buf[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_activation_set(&mut buf.as_slice()),
            Err(SeaError::NonFinite(_))
        ));
    }

    #[test]
    fn writer_rejects_infinite_values() {
        let mut set = zeros_set(2, 1, &[0]);
        set.layers_mut()[0].negative.as_mut_slice()[1] = f32::INFINITY;
        let mut buf = Vec::new();
        assert!(matches!(
            write_activation_set(&set, &mut buf),
            Err(SeaError::NonFinite(_))
        ));
    }

    #[test]
    fn future_version_rejected() {
        let set = zeros_set(2, 1, &[0]);
        let mut buf = Vec::new();
        write_activation_set(&set, &mut buf).unwrap();
        buf[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_activation_set(&mut buf.as_slice()),
            Err(SeaError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn non_increasing_layers_rejected() {
        let layer = |id| LayerSamples {
            layer_id: id,
            neutral: Matrix32::zeros(1, 1),
            positive: Matrix32::zeros(1, 1),
            negative: Matrix32::zeros(1, 1),
        };
        assert!(ActivationSet::new(vec![layer(2), layer(2)], BTreeMap::new()).is_err());
    }
}
