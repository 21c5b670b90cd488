// SPDX-License-Identifier: MIT OR Apache-2.0

//! "SEAM" toy-model checkpoints: the shared envelope with the model config and
//! tensor table in the JSON header, then every tensor as column-major f32 in
//! table order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ToyModel, ToyModelConfig};
use crate::error::{Result, SeaError};
use crate::io::{decode_f32s, read_envelope, take, write_container, Matrix32, MAGIC_MODEL};

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ToyModelConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

pub fn write_model<W: Write + ?Sized>(model: &ToyModel, sink: &mut W) -> Result<u64> {
    let header = Header {
        config: model.config().clone(),
        dtype: "f32le".into(),
        tensors: model
            .tensors()
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    write_container(sink, MAGIC_MODEL, &header, &[], |emit| {
        for (_, m) in model.tensors() {
            emit(m.as_slice())?;
        }
        Ok(())
    })
}

pub fn read_model<R: Read + ?Sized>(source: &mut R) -> Result<ToyModel> {
    let env = read_envelope::<_, Header>(source, MAGIC_MODEL)?;
    let h = env.header;
    if h.dtype != "f32le" {
        return Err(SeaError::Header(format!("unsupported dtype {}", h.dtype)));
    }
    let total = h
        .tensors
        .iter()
        .try_fold(0usize, |acc, t| t.rows.checked_mul(t.cols).and_then(|s| acc.checked_add(s)))
        .ok_or_else(|| SeaError::Header("tensor sizes overflow".into()))?;
    let values = decode_f32s(&env.body, total)?;
    let mut cursor = values.as_slice();
    let tensors = h
        .tensors
        .into_iter()
        .map(|t| {
            let data = take(&mut cursor, t.rows * t.cols).to_vec();
            Matrix32::from_column_major(t.rows, t.cols, data).map(|m| (t.name, m))
        })
        .collect::<Result<Vec<_>>>()?;
    ToyModel::from_tensors(h.config, tensors)
}
