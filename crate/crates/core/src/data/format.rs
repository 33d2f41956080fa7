//! The `KAED` dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KAED" | u32 version | u32 n | n bytes of TOML metadata
//! then per trajectory: T·C·H·W f64 values | u64 CRC-64/XZ of those bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::error::{KaeError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"KAED";
pub const DATASET_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMeta {
    dt: f64,
    channels: Vec<String>,
    height: usize,
    width: usize,
    generator: String,
    // TOML integers are signed 64-bit.
    seed: String,
    phis: Vec<f64>,
    lengths: Vec<usize>,
}

pub fn save_dataset(ds: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset(ds: &TrajectoryDataset, w: &mut impl Write) -> Result<()> {
    ds.validate()?;
    let meta = FileMeta {
        dt: ds.meta.dt,
        channels: ds.meta.channels.clone(),
        height: ds.meta.height,
        width: ds.meta.width,
        generator: ds.meta.generator.clone(),
        seed: ds.meta.seed.to_string(),
        phis: ds.phis(),
        lengths: ds.trajectories.iter().map(Trajectory::len).collect(),
    };
    let text = toml::to_string(&meta).map_err(|e| KaeError::Format(e.to_string()))?;
    let text_len = u32::try_from(text.len())
        .map_err(|_| KaeError::Format("metadata block exceeds 4 GiB".into()))?;
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&text_len.to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let mut bytes = Vec::new();
    for t in &ds.trajectories {
        bytes.clear();
        bytes.extend(t.frames.iter().flat_map(|v| v.to_le_bytes()));
        w.write_all(&bytes)?;
        w.write_all(&CRC64.checksum(&bytes).to_le_bytes())?;
    }
    Ok(())
}

/// Byte reader that reports how far it got.
struct Cursor<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(n);
        let got = (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if got < n {
            return Err(KaeError::Truncated {
                offset: self.offset + got,
                needed: n - got,
            });
        }
        self.offset += n;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let v = self.take(N)?;
        Ok(v.try_into().expect("take returns exactly N bytes"))
    }
}

pub fn read_dataset(r: impl Read) -> Result<TrajectoryDataset> {
    let mut cur = Cursor {
        inner: r,
        offset: 0,
    };
    let magic: [u8; 4] = cur.array()?;
    if magic != DATASET_MAGIC {
        return Err(KaeError::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(cur.array()?);
    if version != DATASET_VERSION {
        return Err(KaeError::Version {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let meta_len = u32::from_le_bytes(cur.array()?) as usize;
    let text = String::from_utf8(cur.take(meta_len)?)
        .map_err(|_| KaeError::Format("metadata block is not UTF-8".into()))?;
    let meta: FileMeta =
        toml::from_str(&text).map_err(|e| KaeError::Format(format!("metadata: {e}")))?;
    if meta.phis.len() != meta.lengths.len() {
        return Err(KaeError::Format(format!(
            "metadata lists {} φ values but {} trajectory lengths",
            meta.phis.len(),
            meta.lengths.len()
        )));
    }
    let seed = meta
        .seed
        .parse()
        .map_err(|_| KaeError::Format(format!("bad seed `{}`", meta.seed)))?;
    let header = DatasetMeta {
        dt: meta.dt,
        channels: meta.channels,
        height: meta.height,
        width: meta.width,
        generator: meta.generator,
        seed,
    };
    let shape = header.shape();
    let mut trajectories = Vec::with_capacity(meta.lengths.len());
    for (i, (&phi, &len)) in meta.phis.iter().zip(&meta.lengths).enumerate() {
        let n_bytes = len
            .checked_mul(shape.numel())
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| KaeError::Format(format!("trajectory {i} length overflows")))?;
        let offset = cur.offset;
        let payload = cur.take(n_bytes)?;
        let stored = u64::from_le_bytes(cur.array()?);
        let computed = CRC64.checksum(&payload);
        if stored != computed {
            return Err(KaeError::Checksum {
                section: format!("trajectory {i}"),
                offset,
                stored,
                computed,
            });
        }
        let frames = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        trajectories.push(Trajectory::new(phi, frames, shape)?);
    }
    let mut rest = [0u8; 1];
    if cur.inner.read(&mut rest)? != 0 {
        return Err(KaeError::Format(format!(
            "trailing bytes after the last trajectory (offset {})",
            cur.offset
        )));
    }
    TrajectoryDataset::new(header, trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_linear_oracle, LinearOracleConfig};

    fn sample() -> TrajectoryDataset {
        let mut ds = generate_linear_oracle(&LinearOracleConfig {
            latent_dim: 3,
            channels: 2,
            height: 3,
            width: 2,
            steps: 5,
            trajectories: 3,
            seed: u64::MAX,
            ..LinearOracleConfig::default()
        })
        .unwrap();
        // Awkward values that a lossy text path would mangle.
        ds.trajectories[0].frames[0] = f64::MIN_POSITIVE / 3.0;
        ds.trajectories[0].frames[1] = -0.0;
        ds.trajectories[1].phi = 0.1 + 0.2;
        ds
    }

    fn encode(ds: &TrajectoryDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    fn payload_start(buf: &[u8]) -> usize {
        12 + u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.kaed");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.meta, ds.meta);
        for (a, b) in ds.trajectories.iter().zip(&back.trajectories) {
            assert_eq!(a.phi.to_bits(), b.phi.to_bits());
            let bits = |t: &Trajectory| t.frames.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout() {
        let buf = encode(&sample());
        assert_eq!(&buf[..4], b"KAED");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let start = payload_start(&buf);
        let first = f64::from_le_bytes(buf[start..start + 8].try_into().unwrap());
        assert_eq!(first.to_bits(), (f64::MIN_POSITIVE / 3.0).to_bits());
        // 3 trajectories × (5·2·3·2 floats + checksum).
        assert_eq!(buf.len() - start, 3 * (5 * 12 * 8 + 8));
    }

    #[test]
    fn corrupted_payload_byte_is_located() {
        let ds = sample();
        let mut buf = encode(&ds);
        let traj_bytes = 5 * 12 * 8 + 8;
        let second = payload_start(&buf) + traj_bytes;
        buf[second + 17] ^= 0x10;
        match read_dataset(&buf[..]) {
            Err(KaeError::Checksum {
                section,
                offset,
                stored,
                computed,
            }) => {
                assert_eq!(section, "trajectory 1");
                assert_eq!(offset, second);
                assert_ne!(stored, computed);
            }
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn newer_version_is_refused_before_metadata() {
        let mut buf = encode(&sample());
        buf[4..8].copy_from_slice(&2u32.to_le_bytes());
        // Garbage after the version must not be looked at.
        buf.truncate(8);
        assert!(matches!(
            read_dataset(&buf[..]),
            Err(KaeError::Version {
                found: 2,
                supported: 1
            })
        ));
    }

    #[test]
    fn truncation_and_bad_magic() {
        let buf = encode(&sample());
        let cut = buf.len() - 3;
        match read_dataset(&buf[..cut]) {
            Err(KaeError::Truncated { offset, needed }) => {
                assert_eq!(offset, cut);
                assert_eq!(needed, 3);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_dataset(&bad[..]),
            Err(KaeError::BadMagic { .. })
        ));
        let mut long = buf;
        long.push(0);
        assert!(matches!(read_dataset(&long[..]), Err(KaeError::Format(_))));
    }
}
