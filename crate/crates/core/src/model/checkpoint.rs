//! Binary model checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DLTC"            4 bytes
//! version           u16
//! config length     u32, then that many bytes of JSON ModelConfig
//! bottleneck        u32
//! tensor count      u32
//! per tensor:       u16 name length, name bytes, u8 rank, rank × u64 dims,
//!                   product(dims) × f64 row-major payload
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DLTC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Bottleneck size in effect when the checkpoint was taken.
    pub bottleneck: usize,
}

pub fn save_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let config = serde_json::to_vec(&ckpt.params.config)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(ckpt.bottleneck as u32).to_le_bytes())?;
    let tensors = ckpt.params.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &dim in t.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_bytes<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let b = read_bytes(r, 2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let b = read_bytes(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let b = read_bytes(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

/// Reads a checkpoint, rebuilding the parameter structure from the stored
/// config and rejecting any tensor whose name or shape disagrees with it.
pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if read_bytes(&mut r, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a model checkpoint".into()));
    }
    let version = read_u16(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, len)?)?;
    let bottleneck = read_u32(&mut r)? as usize;
    let mut params = ModelParams::zeros(&config)?;
    let expected = params.names();
    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {}",
            expected.len()
        )));
    }
    for (name, slot) in expected.iter().zip(params.tensors_mut()) {
        let name_len = read_u16(&mut r)? as usize;
        let found = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_bytes(&mut r, 1)?[0] as usize;
        let shape = (0..rank).map(|_| Ok(read_u64(&mut r)? as usize)).collect::<Result<Vec<_>>>()?;
        if &found != name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{found}`")));
        }
        if shape != slot.shape() {
            return Err(Error::ShapeMismatch {
                name: found,
                expected: slot.shape().to_vec(),
                found: shape,
            });
        }
        let payload = read_bytes(&mut r, slot.len() * 8)?;
        for (v, c) in slot.data_mut().iter_mut().zip(payload.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    Ok(Checkpoint { params, bottleneck })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::numerics::Rng;

    fn params(variant: Variant) -> ModelParams {
        let cfg = ModelConfig {
            vocab_sizes: vec![3, 2],
            embed_dim: 2,
            tower1: vec![3],
            tower2: vec![2],
            variant,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, &Rng::new(3)).unwrap()
    }

    #[test]
    fn roundtrip_every_variant() {
        for v in Variant::ALL {
            let ckpt = Checkpoint {
                params: params(v),
                bottleneck: 2,
            };
            let mut bytes = Vec::new();
            save_checkpoint(&mut bytes, &ckpt).unwrap();
            assert_eq!(&bytes[..4], b"DLTC");
            assert_eq!(load_checkpoint(bytes.as_slice()).unwrap(), ckpt);
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let ckpt = Checkpoint {
            params: params(Variant::Full),
            bottleneck: 2,
        };
        let mut bytes = Vec::new();
        save_checkpoint(&mut bytes, &ckpt).unwrap();
        // widen the stored embedding dim in the config only
        let key = b"\"embed_dim\":2";
        let pos = bytes.windows(key.len()).position(|w| w == key).unwrap() + key.len() - 1;
        bytes[pos] = b'3';
        assert!(matches!(load_checkpoint(bytes.as_slice()), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(load_checkpoint(&b"DLTA"[..]), Err(Error::Format(_))));
    }
}
