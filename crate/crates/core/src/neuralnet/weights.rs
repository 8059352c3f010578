//! Binary weights container.
//!
//! ```text
//! magic     8 bytes   "LRNNWTS\0"
//! version   u32 LE
//! header    u32 LE length + UTF-8 JSON ({"input_norm": "...", "encoder_norm": "..."})
//! count     u32 LE
//! arrays    count x { u16 LE name length, name, u64 LE rows, u64 LE cols,
//!                     rows * cols f64 LE in row-major order }
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::layers::{DenseParams, GruParams, Mat, NormKind, NormParams};
use super::model::{ModelParams, FEATURES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LRNNWTS\0";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input_norm: NormKind,
    encoder_norm: NormKind,
}

fn arrays(model: &ModelParams) -> Vec<(&'static str, Mat)> {
    let eps = |e: f64| Mat::from_element(1, 1, e);
    let mut out: Vec<(&'static str, Mat)> = model.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    out.push(("input_norm.mean", model.input_norm.mean.clone()));
    out.push(("input_norm.std", model.input_norm.std.clone()));
    out.push(("input_norm.epsilon", eps(model.input_norm.epsilon)));
    out.push(("encoder_norm.epsilon", eps(model.encoder_norm.epsilon)));
    out
}

pub fn write_weights(model: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(WEIGHTS_VERSION).unwrap();
    let header = serde_json::to_vec(&Header { input_norm: model.input_norm.kind, encoder_norm: model.encoder_norm.kind })
        .expect("header serializes");
    buf.write_u32::<LittleEndian>(header.len() as u32).unwrap();
    buf.extend_from_slice(&header);
    let arrays = arrays(model);
    buf.write_u32::<LittleEndian>(arrays.len() as u32).unwrap();
    for (name, m) in &arrays {
        buf.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        buf.extend_from_slice(name.as_bytes());
        buf.write_u64::<LittleEndian>(m.nrows() as u64).unwrap();
        buf.write_u64::<LittleEndian>(m.ncols() as u64).unwrap();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                buf.write_f64::<LittleEndian>(m[(r, c)]).unwrap();
            }
        }
    }
    buf
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::WeightsFormat(msg.into())
}

fn truncated(e: std::io::Error) -> Error {
    format_err(format!("truncated or unreadable: {e}"))
}

pub fn read_weights(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(format_err("not a weights file (bad magic)"));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != WEIGHTS_VERSION {
        return Err(format_err(format!("unsupported version {version}, expected {WEIGHTS_VERSION}")));
    }
    let len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut header = vec![0u8; len.min(bytes.len())];
    cur.read_exact(&mut header).map_err(truncated)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| format_err(format!("header: {e}")))?;

    let count = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut found: HashMap<String, Mat> = HashMap::new();
    for _ in 0..count {
        let name_len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| format_err("array name is not UTF-8"))?;
        let rows = cur.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let cols = cur.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let remaining = bytes.len() as u64 - cur.position();
        if (rows as u128) * (cols as u128) * 8 > remaining as u128 {
            return Err(format_err(format!("truncated or unreadable: `{name}` declares {rows}x{cols}")));
        }
        let mut data = vec![0.0; rows * cols];
        cur.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
        found.insert(name, Mat::from_row_slice(rows, cols, &data));
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(format_err("trailing bytes after the last array"));
    }

    let mut take = |name: &str| found.remove(name).ok_or_else(|| format_err(format!("missing array `{name}`")));
    let mut model = ModelParams {
        input_norm: NormParams {
            kind: header.input_norm,
            scale: take("input_norm.scale")?,
            offset: take("input_norm.offset")?,
            epsilon: take("input_norm.epsilon")?[0],
            mean: take("input_norm.mean")?,
            std: take("input_norm.std")?,
        },
        encoder: GruParams {
            input_weights: take("encoder.input_weights")?,
            recurrent_weights: take("encoder.recurrent_weights")?,
            biases: take("encoder.biases")?,
        },
        encoder_norm: NormParams {
            kind: header.encoder_norm,
            scale: take("encoder_norm.scale")?,
            offset: take("encoder_norm.offset")?,
            epsilon: take("encoder_norm.epsilon")?[0],
            mean: Mat::zeros(0, 1),
            std: Mat::zeros(0, 1),
        },
        latent: DenseParams { weights: take("latent.weights")?, biases: take("latent.biases")? },
        decoder: GruParams {
            input_weights: take("decoder.input_weights")?,
            recurrent_weights: take("decoder.recurrent_weights")?,
            biases: take("decoder.biases")?,
        },
        output: DenseParams { weights: take("output.weights")?, biases: take("output.biases")? },
    };
    if let Some(extra) = found.keys().next() {
        return Err(format_err(format!("unexpected array `{extra}`")));
    }
    let f = model.encoder_norm.scale.nrows();
    model.encoder_norm.mean = Mat::zeros(f, 1);
    model.encoder_norm.std = Mat::from_element(f, 1, 1.0);
    check_model_shapes(&model)?;
    Ok(model)
}

/// Verifies the layer chain `2 -> H_enc -> latent -> H_dec -> 2`.
pub fn check_model_shapes(model: &ModelParams) -> Result<()> {
    let he = model.encoder.recurrent_weights.ncols();
    let lat = model.latent.weights.nrows();
    let hd = model.decoder.recurrent_weights.ncols();
    let expected: [(&str, &Mat, (usize, usize)); 18] = [
        ("input_norm.scale", &model.input_norm.scale, (FEATURES, 1)),
        ("input_norm.offset", &model.input_norm.offset, (FEATURES, 1)),
        ("input_norm.mean", &model.input_norm.mean, (FEATURES, 1)),
        ("input_norm.std", &model.input_norm.std, (FEATURES, 1)),
        ("encoder.input_weights", &model.encoder.input_weights, (3 * he, FEATURES)),
        ("encoder.recurrent_weights", &model.encoder.recurrent_weights, (3 * he, he)),
        ("encoder.biases", &model.encoder.biases, (3 * he, 1)),
        ("encoder_norm.scale", &model.encoder_norm.scale, (he, 1)),
        ("encoder_norm.offset", &model.encoder_norm.offset, (he, 1)),
        ("encoder_norm.mean", &model.encoder_norm.mean, (he, 1)),
        ("latent.weights", &model.latent.weights, (lat, he)),
        ("latent.biases", &model.latent.biases, (lat, 1)),
        ("decoder.input_weights", &model.decoder.input_weights, (3 * hd, lat)),
        ("decoder.recurrent_weights", &model.decoder.recurrent_weights, (3 * hd, hd)),
        ("decoder.biases", &model.decoder.biases, (3 * hd, 1)),
        ("output.weights", &model.output.weights, (FEATURES, hd)),
        ("output.biases", &model.output.biases, (FEATURES, 1)),
        ("encoder_norm.std", &model.encoder_norm.std, (he, 1)),
    ];
    for (name, m, shape) in expected {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch {
                name: name.into(),
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    Ok(())
}

pub fn save_weights(model: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, write_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelParams> {
    read_weights(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
