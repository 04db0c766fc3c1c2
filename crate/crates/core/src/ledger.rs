//! Append-only hash chain of author metrics blocks.
//!
//! Blocks are encoded as compact JSON with a fixed field order. The block
//! hash is the SHA-256 of that encoding with the `hash` field omitted. A
//! chain file is `{"schema":"por.chain.v1","blocks":[...]}` with every block
//! in exactly its wire encoding, so decoding is strict: bytes that decode
//! but would not re-encode identically are rejected.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{Clock, Millis};
use crate::conflate::UnifiedMetrics;
use crate::keys::KeyResolver;
use crate::por::{verify_attestation, BlockPayload};

pub const CHAIN_SCHEMA: &str = "por.chain.v1";
/// 2022-01-01T00:00:00Z
pub const GENESIS_TIMESTAMP: Millis = 1_640_995_200_000;
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

/// SHA-256, lowercase hex.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("payload rejected: {0}")]
    InvalidPayload(String),
    #[error("clock skew: new timestamp {got} precedes parent timestamp {parent}")]
    ClockSkew { parent: Millis, got: Millis },
    #[error("malformed block encoding: {0}")]
    Malformed(String),
    #[error("stored chain is corrupt: {0}")]
    StorageCorrupt(String),
    #[error("storage I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub timestamp: Millis,
    pub author_ref: String,
    pub payload: Option<BlockPayload>,
    pub prev_hash: String,
    pub hash: String,
}

#[derive(Serialize)]
struct BlockHeader<'a> {
    index: u64,
    timestamp: Millis,
    author_ref: &'a str,
    payload: &'a Option<BlockPayload>,
    prev_hash: &'a str,
}

impl Block {
    fn header_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&BlockHeader {
            index: self.index,
            timestamp: self.timestamp,
            author_ref: &self.author_ref,
            payload: &self.payload,
            prev_hash: &self.prev_hash,
        })
        .expect("block header serializes")
    }

    pub fn compute_hash(&self) -> String {
        fingerprint(&self.header_bytes())
    }

    pub fn metrics(&self) -> Option<&UnifiedMetrics> {
        self.payload.as_ref().map(|p| &p.metrics)
    }

    /// Wire and storage encoding.
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("block serializes")
    }

    /// Strict inverse of [`Block::encode`].
    pub fn decode(bytes: &[u8]) -> Result<Block, LedgerError> {
        let block: Block =
            serde_json::from_slice(bytes).map_err(|e| LedgerError::Malformed(e.to_string()))?;
        if block.encode() != bytes {
            return Err(LedgerError::Malformed("non-canonical block encoding".into()));
        }
        Ok(block)
    }
}

pub fn genesis() -> Block {
    let mut block = Block {
        index: 0,
        timestamp: GENESIS_TIMESTAMP,
        author_ref: String::new(),
        payload: None,
        prev_hash: ZERO_HASH.to_string(),
        hash: String::new(),
    };
    block.hash = block.compute_hash();
    block
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationReason {
    Empty,
    Malformed,
    GenesisMismatch,
    IndexMismatch,
    HashMismatch,
    LinkMismatch,
    TimestampRegression,
    MissingPayload,
    UnknownAuthor,
    AttestationFailed,
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("reason serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Violation { index: u64, reason: ViolationReason },
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// Checks `block` as the successor of `parent`.
pub fn check_successor(
    parent: &Block,
    block: &Block,
    keys: &dyn KeyResolver,
) -> Result<(), ViolationReason> {
    if block.index != parent.index + 1 {
        return Err(ViolationReason::IndexMismatch);
    }
    if block.compute_hash() != block.hash {
        return Err(ViolationReason::HashMismatch);
    }
    if block.prev_hash != parent.hash {
        return Err(ViolationReason::LinkMismatch);
    }
    if block.timestamp < parent.timestamp {
        return Err(ViolationReason::TimestampRegression);
    }
    let Some(payload) = &block.payload else {
        return Err(ViolationReason::MissingPayload);
    };
    let Some(public_key) = keys.public_key(&block.author_ref) else {
        return Err(ViolationReason::UnknownAuthor);
    };
    if !verify_attestation(payload, &public_key) {
        return Err(ViolationReason::AttestationFailed);
    }
    Ok(())
}

/// Reports the lowest-indexed violation, if any.
pub fn validate_chain(blocks: &[Block], keys: &dyn KeyResolver) -> Verdict {
    let Some(first) = blocks.first() else {
        return Verdict::Violation {
            index: 0,
            reason: ViolationReason::Empty,
        };
    };
    if *first != genesis() {
        return Verdict::Violation {
            index: 0,
            reason: ViolationReason::GenesisMismatch,
        };
    }
    for (i, pair) in blocks.windows(2).enumerate() {
        if let Err(reason) = check_successor(&pair[0], &pair[1], keys) {
            return Verdict::Violation {
                index: i as u64 + 1,
                reason,
            };
        }
    }
    Verdict::Valid
}

/// Validates a chain given as per-block wire encodings, checking each block
/// as it is decoded so the lowest violating position is reported.
pub fn validate_encoded_blocks<B: AsRef<[u8]>>(encoded: &[B], keys: &dyn KeyResolver) -> Verdict {
    let violation = |i: usize, reason| Verdict::Violation {
        index: i as u64,
        reason,
    };
    if encoded.is_empty() {
        return violation(0, ViolationReason::Empty);
    }
    let mut parent: Option<Block> = None;
    for (i, bytes) in encoded.iter().enumerate() {
        let Ok(block) = Block::decode(bytes.as_ref()) else {
            return violation(i, ViolationReason::Malformed);
        };
        match &parent {
            None if block != genesis() => return violation(i, ViolationReason::GenesisMismatch),
            None => {}
            Some(p) => {
                if let Err(reason) = check_successor(p, &block, keys) {
                    return violation(i, reason);
                }
            }
        }
        parent = Some(block);
    }
    Verdict::Valid
}

/// A chain that has passed validation. Only grows by one block at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

#[derive(Serialize)]
struct ChainDocRef<'a> {
    schema: &'a str,
    blocks: &'a [Block],
}

#[derive(Deserialize)]
struct ChainDocRaw<'a> {
    schema: String,
    #[serde(borrow)]
    blocks: Vec<&'a RawValue>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::genesis()
    }
}

impl Chain {
    pub fn genesis() -> Self {
        Chain { blocks: vec![genesis()] }
    }

    pub fn from_blocks(blocks: Vec<Block>, keys: &dyn KeyResolver) -> Result<Chain, Verdict> {
        match validate_chain(&blocks, keys) {
            Verdict::Valid => Ok(Chain { blocks }),
            violation => Err(violation),
        }
    }

    /// Skips validation. Only the simulation harness uses this, to model a
    /// dishonest node.
    pub(crate) fn from_blocks_unchecked(blocks: Vec<Block>) -> Chain {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Always false: a chain holds at least its genesis block.
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("chain holds genesis")
    }

    pub fn latest_for_author(&self, author_ref: &str) -> Option<&Block> {
        self.blocks
            .iter()
            .rev()
            .find(|b| b.payload.is_some() && b.author_ref == author_ref)
    }

    /// Appends an already-built block after checking it against the head.
    pub fn extend(&self, block: Block, keys: &dyn KeyResolver) -> Result<Chain, ViolationReason> {
        check_successor(self.head(), &block, keys)?;
        let mut blocks = self.blocks.clone();
        blocks.push(block);
        Ok(Chain { blocks })
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(&ChainDocRef {
            schema: CHAIN_SCHEMA,
            blocks: &self.blocks,
        })
        .expect("chain serializes")
    }

    /// Strict decode of a chain document followed by full validation.
    pub fn decode(bytes: &[u8], keys: &dyn KeyResolver) -> Result<Chain, LedgerError> {
        let corrupt = |m: String| LedgerError::StorageCorrupt(m);
        let doc: ChainDocRaw<'_> =
            serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
        if doc.schema != CHAIN_SCHEMA {
            return Err(corrupt(format!("unexpected schema {:?}", doc.schema)));
        }
        let encoded: Vec<&[u8]> = doc.blocks.iter().map(|r| r.get().as_bytes()).collect();
        if let Verdict::Violation { index, reason } = validate_encoded_blocks(&encoded, keys) {
            return Err(corrupt(format!("block {index}: {reason}")));
        }
        let blocks = encoded
            .iter()
            .map(|b| Block::decode(b))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| corrupt(e.to_string()))?;
        let chain = Chain { blocks };
        if chain.encode() != bytes {
            return Err(corrupt("non-canonical chain document".into()));
        }
        Ok(chain)
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let path = path.as_ref();
        let io = |source| LedgerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut file = fs::File::create(&tmp).map_err(io)?;
            file.write_all(&self.encode()).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>, keys: &dyn KeyResolver) -> Result<Chain, LedgerError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| LedgerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Chain::decode(&bytes, keys)
    }

    /// Loads `path`, or starts from genesis when the file does not exist.
    pub fn load_or_genesis(path: impl AsRef<Path>, keys: &dyn KeyResolver) -> Result<Chain, LedgerError> {
        match Chain::load(path, keys) {
            Err(LedgerError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                Ok(Chain::genesis())
            }
            other => other,
        }
    }
}

pub fn append_block(
    chain: &Chain,
    payload: BlockPayload,
    author_ref: &str,
    clock: &dyn Clock,
    keys: &dyn KeyResolver,
) -> Result<Chain, LedgerError> {
    let public_key = keys
        .public_key(author_ref)
        .ok_or_else(|| LedgerError::InvalidPayload(format!("no registered key for {author_ref:?}")))?;
    if !verify_attestation(&payload, &public_key) {
        return Err(LedgerError::InvalidPayload("attestation does not verify".into()));
    }
    let parent = chain.head();
    let timestamp = clock.now_ms();
    if timestamp < parent.timestamp {
        return Err(LedgerError::ClockSkew {
            parent: parent.timestamp,
            got: timestamp,
        });
    }
    let mut block = Block {
        index: parent.index + 1,
        timestamp,
        author_ref: author_ref.to_string(),
        payload: Some(payload),
        prev_hash: parent.hash.clone(),
        hash: String::new(),
    };
    block.hash = block.compute_hash();
    chain
        .extend(block, keys)
        .map_err(|reason| LedgerError::InvalidPayload(reason.to_string()))
}
