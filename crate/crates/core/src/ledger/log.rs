//! Append-only event log.
//!
//! Layout: 8-byte magic `UAVTWLOG`, `u32` version, then frames of a `u32`
//! little-endian length followed by that many bytes of canonical JSON. The
//! first frame is the [`LogHeader`] (digest name and genesis); each later
//! frame is one sealed [`Block`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Block, Genesis, Ledger, LedgerError};

const MAGIC: &[u8; 8] = b"UAVTWLOG";
const VERSION: u32 = 1;
/// Digest used for block and state hashes, pinned in every log header.
pub const DIGEST_NAME: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub digest: String,
    pub genesis: Genesis,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("bad log magic")]
    BadMagic,
    #[error("unsupported log version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported digest `{0}`")]
    UnsupportedDigest(String),
    #[error("log truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed log header: {0}")]
    MalformedHeader(String),
    #[error("invalid genesis: {0}")]
    Genesis(LedgerError),
    #[error("block {height}: malformed record: {message}")]
    Malformed { height: u64, message: String },
    #[error("block {height}: stored height {found}")]
    HeightMismatch { height: u64, found: u64 },
    #[error("block {height}: hash chain broken (stored {stored}, recomputed {recomputed})")]
    HashMismatch {
        height: u64,
        stored: String,
        recomputed: String,
    },
    #[error("block {height}: record rejected: {source}")]
    Divergent {
        height: u64,
        #[source]
        source: LedgerError,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl ReplayError {
    /// Height of the first block that failed, when the failure is tied to one.
    pub fn height(&self) -> Option<u64> {
        match self {
            Self::Malformed { height, .. }
            | Self::HeightMismatch { height, .. }
            | Self::HashMismatch { height, .. }
            | Self::Divergent { height, .. } => Some(*height),
            _ => None,
        }
    }
}

fn push_frame(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

/// Serializes the genesis and every sealed block. Records applied since
/// the last block are not included; seal them first.
pub fn encode_log(ledger: &Ledger) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = LogHeader {
        digest: DIGEST_NAME.into(),
        genesis: ledger.genesis().clone(),
    };
    push_frame(&mut out, &serde_json::to_vec(&header).expect("header serializes"));
    for b in ledger.blocks() {
        push_frame(&mut out, &serde_json::to_vec(b).expect("block serializes"));
    }
    out
}

pub fn write_log(ledger: &Ledger, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, encode_log(ledger))
}

fn frames(bytes: &[u8]) -> Result<Vec<&[u8]>, ReplayError> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) {
            ReplayError::Truncated { offset: bytes.len() }
        } else {
            ReplayError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(ReplayError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ReplayError::UnsupportedVersion(version));
    }
    let mut pos = 12;
    let mut out = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Err(ReplayError::Truncated { offset: bytes.len() });
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        if bytes.len() - pos < len {
            return Err(ReplayError::Truncated { offset: bytes.len() });
        }
        out.push(&bytes[pos..pos + len]);
        pos += len;
    }
    Ok(out)
}

/// Parses a log into its header and blocks without checking hashes.
/// Each block frame must be byte-identical to its canonical encoding.
pub fn decode_log(bytes: &[u8]) -> Result<(LogHeader, Vec<Block>), ReplayError> {
    let frames = frames(bytes)?;
    let (first, rest) = frames
        .split_first()
        .ok_or(ReplayError::Truncated { offset: bytes.len() })?;
    let header: LogHeader = serde_json::from_slice(first).map_err(|e| ReplayError::MalformedHeader(e.to_string()))?;
    if header.digest != DIGEST_NAME {
        return Err(ReplayError::UnsupportedDigest(header.digest));
    }
    let blocks = rest
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let malformed = |message: String| ReplayError::Malformed {
                height: i as u64,
                message,
            };
            let block: Block = serde_json::from_slice(f).map_err(|e| malformed(e.to_string()))?;
            // Distinct texts can decode to the same values (e.g. a float's
            // 17th digit), so the frame must be the canonical encoding.
            if serde_json::to_vec(&block).expect("block serializes") != *f {
                return Err(malformed("frame is not the canonical encoding of its block".into()));
            }
            Ok(block)
        })
        .collect::<Result<_, _>>()?;
    Ok((header, blocks))
}

/// Rebuilds the ledger from genesis by re-applying every block's records
/// and re-sealing; stops at the first block whose recomputed hash or
/// chain link differs from the stored one.
pub fn replay(bytes: &[u8]) -> Result<Ledger, ReplayError> {
    let (header, blocks) = decode_log(bytes)?;
    let mut ledger = Ledger::new(header.genesis).map_err(ReplayError::Genesis)?;
    for (i, block) in blocks.into_iter().enumerate() {
        let height = i as u64;
        if block.height != height {
            return Err(ReplayError::HeightMismatch {
                height,
                found: block.height,
            });
        }
        if block.prev_hash != ledger.tip_hash() {
            return Err(ReplayError::HashMismatch {
                height,
                stored: block.prev_hash,
                recomputed: ledger.tip_hash().to_string(),
            });
        }
        for record in block.records {
            ledger
                .apply(record)
                .map_err(|source| ReplayError::Divergent { height, source })?;
        }
        let sealed = ledger.heartbeat();
        if sealed.hash != block.hash {
            return Err(ReplayError::HashMismatch {
                height,
                stored: block.hash,
                recomputed: sealed.hash.clone(),
            });
        }
    }
    Ok(ledger)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Ledger, ReplayError> {
    let bytes = fs::read(path).map_err(|e| ReplayError::Io(e.to_string()))?;
    replay(&bytes)
}
