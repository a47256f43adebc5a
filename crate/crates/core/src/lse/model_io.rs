//! Model container.
//!
//! Layout (little-endian): `b"LSEC"`, version `u32 = 1`, metadata length
//! `u64`, metadata (TOML), blob count `u64`, then per blob: name length
//! `u64`, UTF-8 name, payload length `u64`, payload (a binary matrix file).
//! Blobs: `code`, `eigenvalues` (`d x 1`), `encoder/<name>` and, when
//! standardized, `mean/<name>` and `scale/<name>`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{FeatureScaling, LseModel};
use crate::data::{decode_matrix, encode_matrix, Hyperparams, ModalityKind};
use crate::error::{LseError, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"LSEC";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format: String,
    version: u32,
    lambda: f64,
    latent_dim: usize,
    instances: usize,
    standardized: bool,
    modalities: Vec<ModalityMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModalityMeta {
    name: String,
    kind: ModalityKind,
    features: usize,
}

fn push_chunk(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_model(model: &LseModel) -> Vec<u8> {
    let meta = Metadata {
        format: "lse-model".into(),
        version: MODEL_VERSION,
        lambda: model.hyper.lambda(),
        latent_dim: model.hyper.latent_dim(),
        instances: model.code.ncols(),
        standardized: model.scaling.is_some(),
        modalities: model
            .modality_names
            .iter()
            .zip(&model.modality_kinds)
            .zip(&model.encoders)
            .map(|((name, &kind), u)| ModalityMeta {
                name: name.clone(),
                kind,
                features: u.ncols(),
            })
            .collect(),
    };
    let mut blobs: Vec<(String, DMatrix<f64>)> = vec![
        ("code".into(), model.code.clone()),
        (
            "eigenvalues".into(),
            DMatrix::from_column_slice(model.eigenvalues.len(), 1, &model.eigenvalues),
        ),
    ];
    for (name, u) in model.modality_names.iter().zip(&model.encoders) {
        blobs.push((format!("encoder/{name}"), u.clone()));
    }
    if let Some(scaling) = &model.scaling {
        for (name, s) in model.modality_names.iter().zip(scaling) {
            blobs.push((format!("mean/{name}"), DMatrix::from_column_slice(s.mean.len(), 1, s.mean.as_slice())));
            blobs.push((format!("scale/{name}"), DMatrix::from_column_slice(s.scale.len(), 1, s.scale.as_slice())));
        }
    }

    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    push_chunk(&mut out, toml::to_string(&meta).expect("metadata serializes").as_bytes());
    out.extend_from_slice(&(blobs.len() as u64).to_le_bytes());
    for (name, m) in &blobs {
        push_chunk(&mut out, name.as_bytes());
        push_chunk(&mut out, &encode_matrix(m));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LseError::format(self.origin, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn chunk(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| LseError::format(self.origin, "chunk too large"))?;
        self.take(n)
    }
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<LseModel> {
    let bad = |msg: String| LseError::format(origin, msg);
    let mut cur = Cursor { bytes, pos: 0, origin };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(bad("bad magic, expected `LSEC`".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {version}")));
    }
    let meta_text = std::str::from_utf8(cur.chunk()?).map_err(|e| bad(e.to_string()))?;
    let meta: Metadata = toml::from_str(meta_text).map_err(|e| bad(e.to_string()))?;
    let count = cur.u64()?;
    let mut blobs = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = std::str::from_utf8(cur.chunk()?).map_err(|e| bad(e.to_string()))?.to_string();
        let m = decode_matrix(cur.chunk()?, origin)?;
        blobs.insert(name, m);
    }
    if cur.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let mut blob = |name: &str| blobs.remove(name).ok_or_else(|| bad(format!("missing blob `{name}`")));

    let hyper = Hyperparams::new(meta.lambda, meta.latent_dim)?;
    let code = blob("code")?;
    let eigenvalues: Vec<f64> = blob("eigenvalues")?.iter().copied().collect();
    if code.shape() != (meta.latent_dim, meta.instances) || eigenvalues.len() != meta.latent_dim {
        return Err(bad("code/eigenvalue shapes disagree with metadata".into()));
    }
    let mut encoders = Vec::new();
    let mut scaling = Vec::new();
    for m in &meta.modalities {
        let u = blob(&format!("encoder/{}", m.name))?;
        if u.shape() != (meta.latent_dim, m.features) {
            return Err(bad(format!("encoder `{}` has shape {:?}", m.name, u.shape())));
        }
        encoders.push(u);
        if meta.standardized {
            let mean = DVector::from_iterator(m.features, blob(&format!("mean/{}", m.name))?.iter().copied());
            let scale = DVector::from_iterator(m.features, blob(&format!("scale/{}", m.name))?.iter().copied());
            scaling.push(FeatureScaling { mean, scale });
        }
    }
    Ok(LseModel {
        hyper,
        code,
        encoders,
        modality_names: meta.modalities.iter().map(|m| m.name.clone()).collect(),
        modality_kinds: meta.modalities.iter().map(|m| m.kind).collect(),
        eigenvalues,
        scaling: meta.standardized.then_some(scaling),
    })
}

pub fn save_model(model: &LseModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| LseError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LseModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LseError::io(path, e))?;
    decode_model(&bytes, path)
}
