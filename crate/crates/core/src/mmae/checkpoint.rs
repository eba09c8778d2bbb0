use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MmaeConfig;
use super::model::{Mmae, INIT_SCHEME};
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::transfer::HeadSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MFCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEAD_PREFIX: &str = "head.";

/// How the weights were produced, plus training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// `random_init`, `pretrained` or `finetuned`.
    pub kind: String,
    pub seed: u64,
    pub steps: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    /// Masking ratio used in pre-training.
    pub mask_ratio: f64,
    pub init: String,
    /// Free-form settings echo (training schedule, fine-tuning mode, ...).
    #[serde(default)]
    pub settings: serde_json::Value,
}

impl CheckpointMeta {
    pub fn random_init(config: &MmaeConfig, seed: u64) -> Self {
        Self {
            kind: "random_init".into(),
            seed,
            steps: 0,
            epochs: 0,
            final_loss: None,
            mask_ratio: config.mask_ratio,
            init: INIT_SCHEME.into(),
            settings: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: MmaeConfig,
    meta: CheckpointMeta,
    head: Option<HeadSpec>,
    params: Vec<ParamEntry>,
}

/// A model with its configuration echo, metadata and optional regression head.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Mmae,
    pub meta: CheckpointMeta,
    /// Regression head, parameter names starting with `head.`.
    pub head: Option<(HeadSpec, ParamStore)>,
}

impl Checkpoint {
    pub fn new(model: Mmae, meta: CheckpointMeta) -> Self {
        Self { model, meta, head: None }
    }

    pub fn config(&self) -> &MmaeConfig {
        self.model.config()
    }

    /// Serialized form: magic, version (u32 LE), header length (u64 LE), JSON
    /// header, then every parameter as little-endian f64 in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        let head_params = self.head.as_ref().map(|(_, p)| p);
        for (_, p) in self.model.params.iter().chain(head_params.into_iter().flat_map(|s| s.iter())) {
            entries.push(ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: *self.model.config(),
            meta: self.meta.clone(),
            head: self.head.as_ref().map(|(s, _)| s.clone()),
            params: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..hend])?;
        if header.version != version {
            return Err(bad("header version disagrees with file version".into()));
        }
        let blob = &bytes[hend..];
        let mut model_params = ParamStore::new();
        let mut head_params = ParamStore::new();
        let mut expected_end = 0u64;
        for e in &header.params {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            if e.offset != expected_end || start + 8 * n > blob.len() {
                return Err(bad(format!("parameter `{}` has inconsistent offset", e.name)));
            }
            expected_end += 8 * n as u64;
            let data = blob[start..start + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data)?;
            if e.name.starts_with(HEAD_PREFIX) {
                head_params.insert(e.name.clone(), t);
            } else {
                model_params.insert(e.name.clone(), t);
            }
        }
        if expected_end as usize != blob.len() {
            return Err(bad(format!("{} trailing bytes", blob.len() - expected_end as usize)));
        }
        let model = Mmae::from_params(header.config, &model_params)?;
        let head = match header.head {
            Some(spec) => {
                spec.check_params(&head_params, header.config.embed_dim)?;
                Some((spec, head_params))
            }
            None if head_params.is_empty() => None,
            None => return Err(bad("head parameters without a head description".into())),
        };
        Ok(Self { model, meta: header.meta, head })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MmaeConfig {
        MmaeConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            encoder_depth: 1,
            encoder_heads: 2,
            decoder_dim: 8,
            decoder_depth: 1,
            decoder_heads: 2,
            mlp_ratio: 2,
            mask_ratio: 0.75,
            normalize_targets: false,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let m = Mmae::new(small(), 4).unwrap();
        let mut meta = CheckpointMeta::random_init(&small(), 4);
        meta.final_loss = Some(0.1 + 0.2);
        let ck = Checkpoint::new(m, meta);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.model.params.hash_where(|_| true), ck.model.params.hash_where(|_| true));
    }

    #[test]
    fn corrupt_input_rejected() {
        let ck = Checkpoint::new(Mmae::new(small(), 4).unwrap(), CheckpointMeta::random_init(&small(), 4));
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
