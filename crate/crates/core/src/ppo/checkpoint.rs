//! Binary policy checkpoint.
//!
//! Layout (little endian): 8-byte magic `UAVTWCKP`, `u32` version, four
//! `u32` shape fields (input, hidden layers, width, actions), `u64`
//! parameter count, the parameters as `f64`, then a SHA-256 digest of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::net::{MlpShape, PolicyNetwork};

const MAGIC: &[u8; 8] = b"UAVTWCKP";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic at byte offset 0")]
    BadMagic,
    #[error("unsupported checkpoint version {found} at byte offset {offset}")]
    UnsupportedVersion { offset: usize, found: u32 },
    #[error("invalid shape stored at byte offset {offset}")]
    InvalidShape { offset: usize },
    #[error("parameter count {found} at byte offset {offset} does not match shape ({expected})")]
    ParameterCount { offset: usize, found: u64, expected: usize },
    #[error("non-finite parameter at byte offset {offset}")]
    NonFinite { offset: usize },
    #[error("checksum mismatch: digest at byte offset {offset} does not match contents")]
    Checksum { offset: usize },
    #[error("{extra} trailing bytes after digest at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("checkpoint shape mismatch: {}", .0.join(", "))]
    ShapeMismatch(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

pub fn encode_checkpoint(net: &PolicyNetwork) -> Vec<u8> {
    let shape = net.shape();
    let mut out = Vec::with_capacity(8 + 4 * 5 + 8 + 8 * net.params.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [shape.input_dim, shape.hidden_layers, shape.width, shape.action_dim] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.bytes.len(),
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PolicyNetwork, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let offset = r.pos;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { offset, found: version });
    }
    let shape_offset = r.pos;
    let shape = MlpShape {
        input_dim: r.u32()? as usize,
        hidden_layers: r.u32()? as usize,
        width: r.u32()? as usize,
        action_dim: r.u32()? as usize,
    };
    if !shape.is_valid() || shape.width > 1 << 16 || shape.hidden_layers > 1 << 10 {
        return Err(CheckpointError::InvalidShape { offset: shape_offset });
    }
    let count_offset = r.pos;
    let count = r.u64()?;
    let expected = shape.parameter_count();
    if count != expected as u64 {
        return Err(CheckpointError::ParameterCount {
            offset: count_offset,
            found: count,
            expected,
        });
    }
    let mut params = Vec::with_capacity(expected);
    for _ in 0..expected {
        let offset = r.pos;
        let p = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if !p.is_finite() {
            return Err(CheckpointError::NonFinite { offset });
        }
        params.push(p);
    }
    let body_end = r.pos;
    let digest = r.take(DIGEST_LEN)?;
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(CheckpointError::Checksum { offset: body_end });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    Ok(PolicyNetwork::from_params(shape, params).expect("count checked"))
}

/// Field-by-field comparison; empty when the shapes agree.
pub fn shape_differences(found: MlpShape, expected: MlpShape) -> Vec<String> {
    [
        ("input_dim", found.input_dim, expected.input_dim),
        ("hidden_layers", found.hidden_layers, expected.hidden_layers),
        ("width", found.width, expected.width),
        ("action_dim", found.action_dim, expected.action_dim),
    ]
    .into_iter()
    .filter(|(_, f, e)| f != e)
    .map(|(name, f, e)| format!("{name}: checkpoint {f}, config {e}"))
    .collect()
}

pub fn save_checkpoint(net: &PolicyNetwork, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| CheckpointError::Io(e.to_string()))
}

/// Loads a checkpoint and checks it against the expected shape.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: MlpShape) -> Result<PolicyNetwork, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io(e.to_string()))?;
    let net = decode_checkpoint(&bytes)?;
    let diffs = shape_differences(net.shape(), expected);
    if !diffs.is_empty() {
        return Err(CheckpointError::ShapeMismatch(diffs));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn net() -> PolicyNetwork {
        PolicyNetwork::init(
            MlpShape {
                width: 8,
                ..Default::default()
            },
            17,
        )
    }

    #[test]
    fn corrupted_parameter_reports_checksum_offset() {
        let mut bytes = encode_checkpoint(&net());
        let body_end = bytes.len() - DIGEST_LEN;
        bytes[100] ^= 0x01;
        assert_eq!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::Checksum { offset: body_end })
        );
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_checkpoint(&net());
        assert!(matches!(
            decode_checkpoint(&bytes[..50]),
            Err(CheckpointError::Truncated { offset: 50, .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic));
        let mut v2 = bytes;
        v2[8] = 2;
        assert_eq!(
            decode_checkpoint(&v2),
            Err(CheckpointError::UnsupportedVersion { offset: 8, found: 2 })
        );
    }

    #[test]
    fn nan_parameter_names_offset() {
        let mut n = net();
        n.params[3] = f64::NAN;
        let bytes = encode_checkpoint(&n);
        let header = 8 + 4 * 5 + 8;
        assert_eq!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::NonFinite { offset: header + 3 * 8 })
        );
    }

    #[test]
    fn shape_mismatch_lists_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        save_checkpoint(&net(), &path).unwrap();
        let err = load_checkpoint(&path, MlpShape::default()).unwrap_err();
        assert_eq!(
            err,
            CheckpointError::ShapeMismatch(vec!["width: checkpoint 8, config 64".into()])
        );
        assert_eq!(
            load_checkpoint(
                &path,
                MlpShape {
                    width: 8,
                    ..Default::default()
                }
            )
            .unwrap(),
            net()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_exact(h in 1usize..4, w in 1usize..20, seed in any::<u64>()) {
            let n = PolicyNetwork::init(MlpShape { hidden_layers: h, width: w, ..Default::default() }, seed);
            let back = decode_checkpoint(&encode_checkpoint(&n)).unwrap();
            prop_assert_eq!(back.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                            n.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.shape(), n.shape());
        }
    }
}
