//! Bit-exact block store file format.
//!
//! The file is a sequence of length-prefixed block records:
//!
//! ```text
//! record_len (4, BE) || record
//! record = header (172)
//!       || tx_count (4, BE) || canonical transactions
//!       || approval_count (4, BE) || approvals (miner_id 32 || signature 32)
//! ```
//!
//! Parsing is strict: every count and length must be consistent and a
//! record must be consumed exactly, so any stray byte is a format error
//! rather than a silently different chain.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{compute_block_hash, Block, BlockHeader, MinerApproval, TransactionRecord, TxKind, HEADER_LEN};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record truncated")]
    Truncated,
    #[error("block index field exceeds the supported range")]
    IndexOverflow,
    #[error("unknown transaction kind {0}")]
    UnknownKind(u8),
    #[error("record has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed block record {ordinal}: {source}")]
    MalformedBlock {
        ordinal: u64,
        #[source]
        source: Box<StoreError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Cursor<'a> {
        Cursor { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.data.len() {
            return Err(StoreError::Truncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn array32(&mut self) -> Result<[u8; 32], StoreError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

/// Serializes one block record (without the outer length prefix).
pub fn serialize_block(block: &Block) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 64);
    out.extend_from_slice(&block.header.serialize());
    out.extend_from_slice(&(block.transactions.len() as u32).to_be_bytes());
    for tx in &block.transactions {
        out.extend_from_slice(&tx.canonical_bytes());
    }
    out.extend_from_slice(&(block.approvals.len() as u32).to_be_bytes());
    for a in &block.approvals {
        out.extend_from_slice(&a.miner_id);
        out.extend_from_slice(&a.signature);
    }
    out
}

/// Parses one block record; the record must be consumed exactly.
/// The block hash is recomputed from the stored header.
pub fn deserialize_block(record: &[u8]) -> Result<Block, StoreError> {
    let mut cur = Cursor::new(record);
    let header = BlockHeader::deserialize(cur.take(HEADER_LEN)?)?;

    let tx_count = cur.u32_be()? as usize;
    let mut transactions = Vec::with_capacity(tx_count.min(1024));
    for _ in 0..tx_count {
        let kind_byte = cur.take(1)?[0];
        let kind = TxKind::from_byte(kind_byte).ok_or(StoreError::UnknownKind(kind_byte))?;
        let patient_id = cur.array32()?;
        let created_at = cur.u32_be()?;
        let payload_len = cur.u32_be()? as usize;
        let payload = cur.take(payload_len)?.to_vec();
        transactions.push(TransactionRecord {
            kind,
            patient_id,
            payload,
            created_at,
        });
    }

    let approval_count = cur.u32_be()? as usize;
    let mut approvals = Vec::with_capacity(approval_count.min(1024));
    for _ in 0..approval_count {
        approvals.push(MinerApproval {
            miner_id: cur.array32()?,
            signature: cur.array32()?,
        });
    }

    if cur.remaining() != 0 {
        return Err(StoreError::TrailingBytes(cur.remaining()));
    }

    let block_hash = compute_block_hash(&header);
    Ok(Block {
        header,
        transactions,
        approvals,
        block_hash,
    })
}

/// Serializes a block sequence with 4-byte big-endian length prefixes.
pub fn serialize_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        let record = serialize_block(block);
        out.extend_from_slice(&(record.len() as u32).to_be_bytes());
        out.extend_from_slice(&record);
    }
    out
}

/// Parses a whole store; errors carry the ordinal of the failing record.
pub fn deserialize_blocks(data: &[u8]) -> Result<Vec<Block>, StoreError> {
    let mut cur = Cursor::new(data);
    let mut blocks = Vec::new();
    let mut ordinal = 0u64;
    while cur.remaining() > 0 {
        let wrap = |source: StoreError| StoreError::MalformedBlock {
            ordinal,
            source: Box::new(source),
        };
        let len = cur.u32_be().map_err(wrap)? as usize;
        let record = cur.take(len).map_err(wrap)?;
        blocks.push(deserialize_block(record).map_err(wrap)?);
        ordinal += 1;
    }
    Ok(blocks)
}

pub fn write_store(path: &Path, blocks: &[Block]) -> Result<(), StoreError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&serialize_blocks(blocks))?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<Block>, StoreError> {
    let data = fs::read(path)?;
    deserialize_blocks(&data)
}
