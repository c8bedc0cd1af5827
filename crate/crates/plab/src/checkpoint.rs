//! Checkpoint file: `PLAB`, u32 version, u32 D, H, C, then every parameter
//! block in layout order as little-endian f64. All integers little-endian.

use std::fs;
use std::path::Path;

use plab_core::model::{Dims, ModelParams};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PLAB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let d = params.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + params.as_slice().len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        d.input_dim as u32,
        d.hidden as u32,
        d.num_classes as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `Err(reason)` on any violation of the layout.
pub fn decode(bytes: &[u8]) -> Result<ModelParams, String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not a PLAB checkpoint".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(format!("unsupported checkpoint version {}", word(0)));
    }
    let dims = Dims {
        input_dim: word(1) as usize,
        hidden: word(2) as usize,
        num_classes: word(3) as usize,
    };
    let body = &bytes[HEADER_LEN..];
    // Sized in u128 first: a corrupt header must not overflow the layout math.
    let (d, h, c) = (word(1) as u128, word(2) as u128, word(3) as u128);
    if d == 0 || h == 0 || c == 0 {
        return Err("zero dimension in checkpoint header".into());
    }
    let expected = 2 * (4 * h * (d + h + 1) + c * (2 * h + 1)) * 8;
    if body.len() as u128 != expected {
        return Err(format!(
            "payload is {} bytes, D={} H={} C={} needs {expected}",
            body.len(),
            dims.input_dim,
            dims.hidden,
            dims.num_classes
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ModelParams::from_vec(dims, data).map_err(|e| e.to_string())
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use plab_core::model::{init_params, ModelConfig};
    use proptest::prelude::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            hidden: 3,
            num_classes: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn header_layout() {
        let p = init_params(&small(), 1).unwrap();
        let b = encode(&p);
        assert_eq!(&b[..4], b"PLAB");
        assert_eq!(&b[4..20], &[1, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(b.len(), 20 + 8 * p.as_slice().len());
        assert_eq!(&b[20..28], &p.as_slice()[0].to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params(&small(), 1).unwrap();
        let b = encode(&p);
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = b;
        bad[4] = 2;
        assert!(decode(&bad).unwrap_err().contains("version 2"));
        let mut huge = encode(&p);
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&huge).unwrap_err().contains("needs"));
    }

    #[test]
    fn file_round_trip() {
        let p = init_params(&small(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.plab");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        assert!(matches!(
            load_checkpoint(dir.path().join("none")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            seed in any::<u64>(),
            odd in proptest::collection::vec(
                prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
                1..8,
            ),
        ) {
            let mut p = init_params(&small(), seed).unwrap();
            for (slot, v) in p.as_mut_slice().iter_mut().zip(&odd) {
                *slot = *v;
            }
            let q = decode(&encode(&p)).unwrap();
            prop_assert!(p.as_slice().iter().zip(q.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(p.dims(), q.dims());
        }
    }
}
