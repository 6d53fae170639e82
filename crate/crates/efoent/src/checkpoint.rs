//! Binary container of named tensors.
//!
//! Layout: the 8-byte magic `EFOENTCK`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, the raw
//! little-endian tensor data, and a 32-byte sha256 of manifest plus data.
//! Model checkpoints carry the model configuration in the manifest; frozen
//! embedding files carry one name per row instead.

use std::fs;
use std::path::Path;

use efoent_core::autodiff::{ParamStore, Scalar, Tensor};
use efoent_core::model::{Model, ModelConfig};
use efoent_core::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EFOENTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigRecord {
    pub num_entities: usize,
    pub num_relations: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub num_variables: usize,
    pub pe_kind: String,
    pub pooling: String,
    pub use_adjacency_mask: bool,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl From<&ModelConfig> for ModelConfigRecord {
    fn from(c: &ModelConfig) -> Self {
        Self {
            num_entities: c.num_entities,
            num_relations: c.num_relations,
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            max_seq_len: c.max_seq_len,
            num_variables: c.num_variables,
            pe_kind: c.pe_kind.as_str().to_string(),
            pooling: c.pooling.as_str().to_string(),
            use_adjacency_mask: c.use_adjacency_mask,
            dropout: c.dropout,
            layer_norm_eps: c.layer_norm_eps,
        }
    }
}

impl ModelConfigRecord {
    pub fn to_config(&self) -> Result<ModelConfig> {
        let bad = |e: efoent_core::model::ModelError| Error::data(e.to_string());
        let c = ModelConfig {
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            num_variables: self.num_variables,
            pe_kind: self.pe_kind.parse().map_err(bad)?,
            pooling: self.pooling.parse().map_err(bad)?,
            use_adjacency_mask: self.use_adjacency_mask,
            dropout: self.dropout,
            layer_norm_eps: self.layer_norm_eps,
        };
        c.validate().map_err(bad)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: u64,
    /// Half-open row ranges that never receive gradient.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Symbols {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `model` or `embeddings`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfigRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<Symbols>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn dtype_of<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn dtype_width(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

fn ranges(mask: &[bool]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push([start, i]);
        } else {
            i += 1;
        }
    }
    out
}

fn push_tensor<T: Scalar>(data: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in &t.data {
        if std::mem::size_of::<T>() == 4 {
            data.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        } else {
            data.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
}

/// A named tensor and its frozen-row flags.
type Entry<'a, T> = (&'a str, &'a Tensor<T>, Option<&'a [bool]>);

fn encode<T: Scalar>(mut manifest: Manifest, tensors: &[Entry<'_, T>]) -> Vec<u8> {
    let mut data = Vec::new();
    manifest.tensors.clear();
    for (name, t, frozen) in tensors {
        manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: dtype_of::<T>().to_string(),
            shape: t.shape.clone(),
            offset: data.len() as u64,
            frozen_rows: frozen.map(ranges).unwrap_or_default(),
        });
        push_tensor(&mut data, t);
    }
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + header.len() + data.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let digest = Sha256::digest(&out[20..]);
    out.extend_from_slice(&digest);
    out
}

/// A decoded container: manifest plus the data section.
#[derive(Debug)]
pub struct Container {
    pub manifest: Manifest,
    data: Vec<u8>,
}

impl Container {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::in_file(path, m))
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err("not a tensor container".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported container version {version}"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_end = bytes.len() - 32;
        if 20 + hlen > body_end {
            return Err("truncated manifest".into());
        }
        if Sha256::digest(&bytes[20..body_end])[..] != bytes[body_end..] {
            return Err("checksum mismatch".into());
        }
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..20 + hlen]).map_err(|e| format!("manifest: {e}"))?;
        let data = bytes[20 + hlen..body_end].to_vec();
        for t in &manifest.tensors {
            let width = dtype_width(&t.dtype).ok_or_else(|| format!("tensor `{}`: unknown dtype `{}`", t.name, t.dtype))?;
            let end = t.offset as usize + width * t.shape.iter().product::<usize>();
            if end > data.len() {
                return Err(format!("tensor `{}` runs past the data section", t.name));
            }
        }
        Ok(Self { manifest, data })
    }

    /// Precision of the stored tensors.
    pub fn dtype(&self) -> &str {
        self.manifest.tensors.first().map_or("f64", |t| t.dtype.as_str())
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> std::result::Result<Tensor<T>, String> {
        let e = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| format!("missing tensor `{name}`"))?;
        Ok(self.decode_entry(e))
    }

    fn decode_entry<T: Scalar>(&self, e: &TensorEntry) -> Tensor<T> {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let values: Vec<T> = if e.dtype == "f32" {
            self.data[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()
        } else {
            self.data[start..start + 8 * n]
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        Tensor::new(&e.shape, values).expect("shape checked on decode")
    }
}

pub fn encode_model<T: Scalar>(model: &Model<T>, meta: serde_json::Value) -> Vec<u8> {
    let manifest = Manifest {
        kind: "model".into(),
        config: Some((&model.config).into()),
        symbols: None,
        tensors: Vec::new(),
        meta,
    };
    let entries: Vec<Entry<'_, T>> = (0..model.params.len())
        .map(|id| (model.params.name(id), model.params.get(id), model.params.frozen_rows(id)))
        .collect();
    encode(manifest, &entries)
}

pub fn save_model<T: Scalar>(path: &Path, model: &Model<T>, meta: serde_json::Value) -> Result<()> {
    crate::graph_io::write_bytes(path, &encode_model(model, meta))
}

/// Rebuilds a model from a checkpoint, converting precision if needed.
pub fn load_model<T: Scalar>(c: &Container) -> Result<Model<T>> {
    if c.manifest.kind != "model" {
        return Err(Error::data(format!("expected a model checkpoint, found `{}`", c.manifest.kind)));
    }
    let config = c
        .manifest
        .config
        .as_ref()
        .ok_or_else(|| Error::data("checkpoint has no model configuration"))?
        .to_config()?;
    let mut params = ParamStore::new();
    for e in &c.manifest.tensors {
        let id = params.add(&e.name, c.decode_entry(e));
        let rows: Vec<usize> = e.frozen_rows.iter().flat_map(|&[a, b]| a..b).collect();
        if !rows.is_empty() {
            if rows.iter().any(|&r| r >= params.get(id).rows()) {
                return Err(Error::data(format!("tensor `{}`: frozen row out of range", e.name)));
            }
            params.freeze_rows(id, &rows);
        }
    }
    Model::from_params(config, params).map_err(|e| Error::data(e.to_string()))
}

pub fn encode_embeddings<T: Scalar>(
    entities: &Tensor<T>,
    entity_names: &[String],
    relations: &Tensor<T>,
    relation_names: &[String],
) -> Vec<u8> {
    let manifest = Manifest {
        kind: "embeddings".into(),
        config: None,
        symbols: Some(Symbols {
            entities: entity_names.to_vec(),
            relations: relation_names.to_vec(),
        }),
        tensors: Vec::new(),
        meta: serde_json::Value::Null,
    };
    encode(manifest, &[("entities", entities, None), ("relations", relations, None)])
}

fn reorder<T: Scalar>(t: &Tensor<T>, names: &[String], vocab: &Vocab, what: &str) -> std::result::Result<Tensor<T>, String> {
    if t.rows() != names.len() {
        return Err(format!("{what}: {} rows but {} names", t.rows(), names.len()));
    }
    let d = t.cols();
    let mut out = Tensor::zeros(&[vocab.len(), d]);
    for (id, name) in vocab.names().iter().enumerate() {
        let row = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| format!("{what}: no vector for `{name}`"))?;
        out.row_mut(id).copy_from_slice(t.row(row));
    }
    Ok(out)
}

/// Entity and relation tables reordered to the ids of the given
/// vocabularies.
pub fn load_embeddings<T: Scalar>(path: &Path, entities: &Vocab, relations: &Vocab) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = Container::read(path)?;
    let fail = |m: String| Error::in_file(path, m);
    if c.manifest.kind != "embeddings" {
        return Err(fail(format!("expected an embeddings file, found `{}`", c.manifest.kind)));
    }
    let symbols = c.manifest.symbols.as_ref().ok_or_else(|| fail("no symbol names".into()))?;
    let ents = c.tensor::<T>("entities").map_err(fail)?;
    let rels = c.tensor::<T>("relations").map_err(fail)?;
    Ok((
        reorder(&ents, &symbols.entities, entities, "entities").map_err(fail)?,
        reorder(&rels, &symbols.relations, relations, "relations").map_err(fail)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use efoent_core::rng::Rng;
    use rand::SeedableRng;

    fn tiny<T: Scalar>() -> Model<T> {
        let mut cfg = ModelConfig::new(7, 2);
        cfg.d_model = 8;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        Model::new(cfg, &mut Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn model_round_trip_is_exact() {
        let mut m = tiny::<f64>();
        let emb = m.embedding;
        m.params.freeze_rows(emb, &[0, 1, 2, 5]);
        let bytes = encode_model(&m, serde_json::json!({"note": "x"}));
        let c = Container::decode(&bytes).unwrap();
        assert_eq!(c.dtype(), "f64");
        let back = load_model::<f64>(&c).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let m = tiny::<f32>();
        let c = Container::decode(&encode_model(&m, serde_json::Value::Null)).unwrap();
        assert_eq!(c.dtype(), "f32");
        assert_eq!(load_model::<f32>(&c).unwrap().params, m.params);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_model(&tiny::<f32>(), serde_json::Value::Null);
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(Container::decode(&bytes).unwrap_err().contains("checksum"));
        assert!(Container::decode(b"nonsense").is_err());
    }

    #[test]
    fn embeddings_follow_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.bin");
        let ents = Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let rels = Tensor::from_f64(&[1, 2], &[5.0, 6.0]).unwrap();
        let bytes = encode_embeddings::<f64>(&ents, &["b".into(), "a".into()], &rels, &["r".into()]);
        std::fs::write(&p, bytes).unwrap();
        let vocab = Vocab::from_names(["a", "b"]);
        let (e, r) = load_embeddings::<f64>(&p, &vocab, &Vocab::from_names(["r"])).unwrap();
        assert_eq!(e.data, vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(r.data, vec![5.0, 6.0]);
        assert!(load_embeddings::<f64>(&p, &Vocab::from_names(["a", "c"]), &Vocab::from_names(["r"])).is_err());
    }
}
