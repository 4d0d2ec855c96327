//! Parameter checkpoints.
//!
//! A checkpoint stored under the stem `foo` is a JSON header `foo.json`
//!
//! ```text
//! {"format": "lgm-checkpoint", "meta": {...},
//!  "tensors": [{"name": "analysis", "rows": 64, "cols": 128, "offset": 0}, ...]}
//! ```
//!
//! plus `foo.bin`, the tensors' row-major little-endian f64 payloads
//! concatenated in header order (`offset` is in bytes).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::attention::{AttentionBlock, AttentionParams, ATTENTION_BLOCKS};
use super::params::{LgmParams, ListaParams};
use crate::error::{Error, Result};
use crate::linalg::{decode_payload, encode_payload, matrix_paths, Matrix};

const FORMAT: &str = "lgm-checkpoint";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Named matrices with free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Map<String, Value>,
    tensors: Vec<(String, Matrix)>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            meta: Map::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::CorruptHeader(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (header_path, payload_path) = matrix_paths(path);
        if let Some(dir) = header_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (name, m) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                offset: payload.len(),
            });
            payload.extend(encode_payload(m.as_slice()));
        }
        let header = Header {
            format: FORMAT.into(),
            meta: Value::Object(self.meta.clone()),
            tensors: entries,
        };
        fs::write(&header_path, serde_json::to_string_pretty(&header)?)
            .map_err(|e| Error::io(&header_path, e))?;
        fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header_path, payload_path) = matrix_paths(path);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: Header = serde_json::from_str(&text)?;
        if header.format != FORMAT {
            return Err(Error::UnsupportedFormat(format!(
                "checkpoint format `{}`",
                header.format
            )));
        }
        let meta = match header.meta {
            Value::Object(map) => map,
            _ => return Err(Error::CorruptHeader("meta must be an object".into())),
        };
        let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        let mut tensors = Vec::new();
        for t in header.tensors {
            let len = t.rows * t.cols * 8;
            let end = t.offset.checked_add(len).filter(|&e| e <= bytes.len());
            let Some(end) = end else {
                return Err(Error::CorruptHeader(format!(
                    "tensor `{}` runs past the payload",
                    t.name
                )));
            };
            let values = decode_payload(&bytes[t.offset..end])?;
            tensors.push((t.name, Matrix::from_vec(t.rows, t.cols, values)?));
        }
        Ok(Self { meta, tensors })
    }

    fn meta_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.meta.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|v| Some(v as usize))
                .ok_or_else(|| Error::CorruptHeader(format!("`{key}` must be an integer"))),
        }
    }
}

fn row(values: &[f64]) -> Matrix {
    Matrix::from_vec(1, values.len(), values.to_vec()).expect("finite parameters")
}

/// Writes LGM (and optional attention) parameters into a checkpoint.
pub fn lgm_checkpoint(params: &LgmParams, attention: Option<&AttentionParams>) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.meta.insert("model".into(), json!("lgm"));
    c.meta.insert("dc_index".into(), json!(params.dc_index()));
    c.push("analysis", params.analysis().atoms().clone());
    c.push("synthesis", params.synthesis().atoms().clone());
    let (a, s) = params.dc_scales();
    c.push("dc_scales", row(&[a, s]));
    if let Some(att) = attention {
        for (k, b) in att.blocks.iter().enumerate() {
            c.push(format!("attention.{k}.w1"), b.w1.clone());
            c.push(format!("attention.{k}.w2"), b.w2.clone());
            c.push(format!("attention.{k}.b"), row(&b.b));
        }
        c.push("attention.w_out", row(&att.w_out));
    }
    c
}

/// Inverse of [`lgm_checkpoint`].
pub fn lgm_from_checkpoint(c: &Checkpoint) -> Result<(LgmParams, Option<AttentionParams>)> {
    let scales = c.get("dc_scales")?.as_slice();
    if scales.len() != 2 {
        return Err(Error::CorruptHeader(
            "dc_scales must hold two values".into(),
        ));
    }
    let params = LgmParams::from_parts(
        c.get("analysis")?.clone(),
        c.get("synthesis")?.clone(),
        c.meta_usize("dc_index")?,
        (scales[0], scales[1]),
    )?;
    if c.get("attention.w_out").is_err() {
        return Ok((params, None));
    }
    let mut blocks = Vec::new();
    for k in 0..ATTENTION_BLOCKS {
        blocks.push(AttentionBlock {
            w1: c.get(&format!("attention.{k}.w1"))?.clone(),
            w2: c.get(&format!("attention.{k}.w2"))?.clone(),
            b: c.get(&format!("attention.{k}.b"))?.as_slice().to_vec(),
        });
    }
    let att = AttentionParams {
        blocks,
        w_out: c.get("attention.w_out")?.as_slice().to_vec(),
    };
    Ok((params, Some(att)))
}

pub fn lista_checkpoint(params: &ListaParams) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.meta.insert("model".into(), json!("lista"));
    c.meta.insert("layers".into(), json!(params.layers));
    c.push("w", params.w.clone());
    c.push("d1", params.d1.clone());
    c.push("d2", params.d2.clone());
    c.push("theta", row(&params.theta));
    c
}

pub fn lista_from_checkpoint(c: &Checkpoint) -> Result<ListaParams> {
    let layers = c
        .meta_usize("layers")?
        .ok_or_else(|| Error::CorruptHeader("missing `layers`".into()))?;
    let p = ListaParams {
        w: c.get("w")?.clone(),
        d1: c.get("d1")?.clone(),
        d2: c.get("d2")?.clone(),
        theta: c.get("theta")?.as_slice().to_vec(),
        layers,
    };
    p.validate()?;
    Ok(p)
}
