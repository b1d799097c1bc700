//! Binary model checkpoints.
//!
//! Layout: magic `VFL1`, then `input`, `hidden`, `classes` as little-endian
//! u32, then every parameter as a little-endian f32 in flat layout order.

use std::io::{self, Read, Write};

use thiserror::Error;
use v2xfl_core::fl::{MlpShape, ModelParameters};

const MAGIC: &[u8; 4] = b"VFL1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error(transparent)]
    Core(#[from] v2xfl_core::Error),
}

pub fn write_checkpoint(mut w: impl Write, params: &ModelParameters) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for d in [params.shape.input, params.shape.hidden, params.shape.classes] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ModelParameters, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    let mut dim = || -> io::Result<usize> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word) as usize)
    };
    let shape = MlpShape { input: dim()?, hidden: dim()?, classes: dim()? };
    let mut bytes = vec![0u8; shape.param_count() * 4];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(ModelParameters::from_values(shape, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = ModelParameters::init(MlpShape { input: 5, hidden: 3, classes: 2 }, 4);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert_eq!(buf.len(), 16 + 4 * p.len());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), p);
        assert!(matches!(read_checkpoint(&b"XXXX"[..]), Err(CheckpointError::BadMagic)));
        assert!(matches!(read_checkpoint(&buf[..20]), Err(CheckpointError::Io(_))));
    }
}
