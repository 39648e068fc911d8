//! Versioned model container.
//!
//! ```text
//! DOMEX-CKPT-1\n
//! u32 metadata length, metadata JSON
//! u32 tensor count
//! per tensor: u32 name length, name, u32 ndim, u32 dims.., f32 values
//! ```
//! All integers and floats are little-endian. Stage-one tensors are prefixed
//! `node.`, stage-two tensors `pair.`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::VerticalSchema;
use crate::features::{FeatureConfig, Vocab};
use crate::nn::{ParamStore, Tensor};
use crate::node_model::{NodeModel, NodeModelConfig, NodeModelError};
use crate::relation::{RelationConfig, RelationError, RelationModel};

pub const CHECKPOINT_MAGIC: &str = "DOMEX-CKPT-1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint: expected `{CHECKPOINT_MAGIC}` header")]
    BadHeader,
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Node(#[from] NodeModelError),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: VerticalSchema,
    pub features: FeatureConfig,
    pub node: NodeModelConfig,
    pub relation: Option<RelationConfig>,
    pub vocab: Vocab,
    pub hidden_activation: String,
    pub seed_sites: Vec<String>,
    pub rng_seed: u64,
    pub node_vector_dim: usize,
    pub filter_top_k: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub node: NodeModel,
    pub relation: Option<RelationModel>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_store(out: &mut Vec<u8>, prefix: &str, store: &ParamStore) {
    for p in store.iter() {
        let name = format!("{prefix}{}", p.name);
        put_u32(out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(out, d);
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        let meta = serde_json::to_vec(&self.meta)?;
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        let count = self.node.store.len() + self.relation.as_ref().map_or(0, |r| r.store.len());
        put_u32(&mut out, count);
        put_store(&mut out, "node.", &self.node.store);
        if let Some(r) = &self.relation {
            put_store(&mut out, "pair.", &r.store);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let header = cur.take(CHECKPOINT_MAGIC.len() + 1).map_err(|_| CheckpointError::BadHeader)?;
        if &header[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || header[CHECKPOINT_MAGIC.len()] != b'\n' {
            return Err(CheckpointError::BadHeader);
        }
        let meta_len = cur.u32()?;
        let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)?;
        let count = cur.u32()?;
        let mut node_store = ParamStore::new();
        let mut pair_store = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.u32()?;
            let name = std::str::from_utf8(cur.take(name_len)?).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let ndim = cur.u32()?;
            let shape: Vec<usize> = (0..ndim).map(|_| cur.u32()).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            let tensor = Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let (store, local) = if let Some(rest) = name.strip_prefix("node.") {
                (&mut node_store, rest)
            } else if let Some(rest) = name.strip_prefix("pair.") {
                (&mut pair_store, rest)
            } else {
                return Err(CheckpointError::Corrupt(format!("tensor `{name}` has no stage prefix")));
            };
            store.add(local, tensor).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        if meta.node.node_vector_dim() != meta.node_vector_dim {
            return Err(CheckpointError::Corrupt(format!(
                "node vector dimension {} disagrees with config ({})",
                meta.node_vector_dim,
                meta.node.node_vector_dim()
            )));
        }
        let node = NodeModel::from_store(meta.node.clone(), meta.schema.len() + 1, node_store)?;
        let relation = match &meta.relation {
            Some(cfg) => Some(RelationModel::from_store(cfg.clone(), meta.node_vector_dim, pair_store)?),
            None => None,
        };
        Ok(Self { meta, node, relation })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&bytes).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let mut bytes = Vec::new();
        fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("wanted {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Checkpoint {
        let schema = VerticalSchema::new("v", &["a", "b"]).unwrap();
        let mut vocab = Vocab::default();
        vocab.tag_to_id.insert("OTHER_TAG".into(), 0);
        vocab.xpath_tag_to_id.insert("html".into(), 1);
        let node_cfg = NodeModelConfig {
            dim_char: 2,
            dim_word: 2,
            cnn_filters: 2,
            lstm_hidden_node_text: 2,
            lstm_hidden_prev_text: 2,
            dim_tag: 2,
            dim_type: 2,
            mlp_hidden: 3,
            ..Default::default()
        };
        let rel_cfg = RelationConfig {
            dim_xpath_tag: 2,
            xpath_lstm_hidden: 2,
            dim_pos: 2,
            pos_range: 5,
            mlp_hidden: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let node = NodeModel::new(node_cfg.clone(), &vocab, 3, &mut rng).unwrap();
        let relation = RelationModel::new(rel_cfg.clone(), &vocab, 8, &mut rng).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                schema,
                features: FeatureConfig::default(),
                node_vector_dim: node_cfg.node_vector_dim(),
                node: node_cfg,
                relation: Some(rel_cfg),
                vocab,
                hidden_activation: "relu".into(),
                seed_sites: vec!["s1".into()],
                rng_seed: 1,
                filter_top_k: 500,
            },
            node,
            relation: Some(relation),
        }
    }

    #[test]
    fn round_trip() {
        let ck = small();
        let bytes = ck.to_bytes().unwrap();
        assert!(bytes.starts_with(b"DOMEX-CKPT-1\n"));
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        for (a, b) in back.node.store.iter().zip(ck.node.store.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::from_bytes(b"hello"), Err(CheckpointError::BadHeader)));
        let bytes = small().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Corrupt(_))));
    }
}
