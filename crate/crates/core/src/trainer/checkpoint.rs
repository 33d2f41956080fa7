//! The `KAEW` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KAEW" | u32 version | u32 n | n bytes of TOML metadata
//! u32 tensor count, then per tensor:
//!     u32 name length | name | u32 rank | u64 dims… | f64 values…
//! u64 CRC-64/XZ of every byte after the version
//! ```
//!
//! Model parameters keep their own names; AdamW moments are stored as
//! `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamState;
use super::train::Trainer;
use crate::error::{KaeError, Result};
use crate::model::{KoopmanAutoencoder, ModelConfig, ParamEmbedding, Parameters};
use crate::tensor::{FieldShape, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"KAEW";
pub const CHECKPOINT_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    epoch: usize,
    adam_step: u64,
    state: FieldShape,
    embedding: ParamEmbedding,
    model: ModelConfig,
    train: TrainConfig,
}

/// Serializes the trainer (weights, optimizer moments, configs, epoch).
pub fn encode_checkpoint(trainer: &Trainer, model_cfg: &ModelConfig) -> Result<Vec<u8>> {
    let meta = Meta {
        epoch: trainer.epoch,
        adam_step: trainer.optimizer.step,
        state: trainer.model.state,
        embedding: trainer.model.operator.embed.clone(),
        model: model_cfg.clone(),
        train: trainer.cfg.clone(),
    };
    let text = toml::to_string(&meta)
        .map_err(|e| KaeError::Format(format!("checkpoint metadata: {e}")))?;

    let mut tensors: Vec<(String, Tensor)> = trainer.model.named_params().into_iter().collect();
    for (prefix, table) in [
        (M_PREFIX, &trainer.optimizer.m),
        (V_PREFIX, &trainer.optimizer.v),
    ] {
        tensors.extend(
            table
                .iter()
                .map(|(n, t)| (format!("{prefix}{n}"), t.clone())),
        );
    }

    let mut body = Vec::new();
    body.extend((text.len() as u32).to_le_bytes());
    body.extend(text.as_bytes());
    body.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        body.extend((name.len() as u32).to_le_bytes());
        body.extend(name.as_bytes());
        body.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend((d as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend(v.to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&body);
    let mut out = Vec::with_capacity(body.len() + 16);
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend(body);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(KaeError::Truncated {
                offset: self.buf.len(),
                needed: self.pos + n - self.buf.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Inverse of [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Trainer, ModelConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(KaeError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(KaeError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(KaeError::Truncated {
            offset: bytes.len(),
            needed: 16 - bytes.len(),
        });
    }
    let body = &bytes[8..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = CRC64.checksum(body);
    if stored != computed {
        return Err(KaeError::Checksum {
            section: "checkpoint body".into(),
            offset: 8,
            stored,
            computed,
        });
    }
    let mut r = Reader { buf: body, pos: 0 };
    let meta_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| KaeError::Format("checkpoint metadata is not UTF-8".into()))?;
    let meta: Meta =
        toml::from_str(text).map_err(|e| KaeError::Format(format!("checkpoint metadata: {e}")))?;

    let count = r.u32()? as usize;
    let (mut params, mut m, mut v) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| KaeError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| Ok(r.u64()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| KaeError::Format(format!("tensor `{name}` is too large")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| KaeError::Format("size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)?;
        if let Some(n) = name.strip_prefix(M_PREFIX) {
            m.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix(V_PREFIX) {
            v.insert(n.to_string(), t);
        } else {
            params.insert(name, t);
        }
    }
    if r.pos != body.len() {
        return Err(KaeError::Format(format!(
            "{} unexpected bytes after the tensor table",
            body.len() - r.pos
        )));
    }

    let mut model = KoopmanAutoencoder::new(&meta.model, meta.state, meta.embedding, 0)?;
    if params.len() != model.named_params().len() {
        return Err(KaeError::Format(format!(
            "checkpoint has {} parameters, the configured model {}",
            params.len(),
            model.named_params().len()
        )));
    }
    model.load_params(&params)?;
    let mut trainer = Trainer::new(model, meta.train)?;
    trainer.epoch = meta.epoch;
    trainer.optimizer = AdamState {
        step: meta.adam_step,
        m,
        v,
    };
    Ok((trainer, meta.model))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    trainer: &Trainer,
    model_cfg: &ModelConfig,
) -> Result<()> {
    fs::write(path, encode_checkpoint(trainer, model_cfg)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Trainer, ModelConfig)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_linear_oracle;
    use crate::trainer::{init_model, tiny_configs};

    fn trainer() -> (Trainer, ModelConfig) {
        let (data, model_cfg, mut train) = tiny_configs(3);
        train.epochs = 4;
        train.warmup_epochs = 1;
        let ds = generate_linear_oracle(&data).unwrap();
        let mut t = Trainer::new(init_model(&model_cfg, &ds, 3).unwrap(), train).unwrap();
        t.run_epoch(&ds).unwrap();
        (t, model_cfg)
    }

    #[test]
    fn round_trip_restores_everything() {
        let (t, cfg) = trainer();
        assert!(t.optimizer.step > 0);
        let bytes = encode_checkpoint(&t, &cfg).unwrap();
        assert_eq!(&bytes[..4], b"KAEW");
        let (back, back_cfg) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back_cfg, cfg);
        assert_eq!(back, t);
        // Re-encoding is byte-identical.
        assert_eq!(encode_checkpoint(&back, &back_cfg).unwrap(), bytes);
    }

    #[test]
    fn damage_is_detected() {
        let (t, cfg) = trainer();
        let bytes = encode_checkpoint(&t, &cfg).unwrap();
        let mut flipped = bytes.clone();
        let i = bytes.len() - 40;
        flipped[i] ^= 1;
        assert!(matches!(
            decode_checkpoint(&flipped),
            Err(KaeError::Checksum { .. })
        ));
        let mut newer = bytes.clone();
        newer[4] = 9;
        assert!(matches!(
            decode_checkpoint(&newer),
            Err(KaeError::Version { found: 9, .. })
        ));
        assert!(matches!(
            decode_checkpoint(&bytes[..6]),
            Err(KaeError::Truncated { .. })
        ));
    }
}
