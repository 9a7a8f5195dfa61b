//! Append-only hash-chained block store.
//!
//! Blocks carry a fixed 172-byte header (hashed with SHA-256 to form the
//! block hash), an ordered transaction list rooted in a binary Merkle
//! tree, and a set of miner approvals folded into a single 32-byte
//! approval digest. A hash table indexes appended block hashes and a
//! transaction pool stages records awaiting approval.
//!
//! Appends are gated on miner approvals: every submitted signature must
//! verify and the number of distinct approving miners must meet the
//! patient's configured threshold. There is no proof-of-work; the nonce
//! is a monotonic per-chain counter kept for header-layout fidelity.
//!
//! Concurrency contract: single writer. Appends must be serialized by
//! the owner; reads of already-appended blocks are safe to share.

pub mod merkle;
pub mod store;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use merkle::{merkle_proof, merkle_root, verify_merkle_proof, Digest32, ProofStep, Side};
use merkle::sha256;

/// Serialized header size: 4 + 32 + 32 + 32 + 4 + 4 + 32 + 32.
pub const HEADER_LEN: usize = 172;

/// Header `version` for all blocks produced by this crate.
pub const BLOCK_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("merkle tree requires at least one leaf")]
    EmptyLeafSet,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("a block requires at least one transaction")]
    EmptyTransactionSet,
    #[error("approval from {miner} does not verify")]
    InvalidSignature { miner: String },
    #[error("{got} distinct miner approvals, {required} required")]
    InsufficientApprovals { got: usize, required: usize },
    #[error("block {index} not found")]
    UnknownBlock { index: u64 },
}

/// What `validate_chain` found wrong, and where.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("block {block_index}: {reason}")]
pub struct IntegrityError {
    pub block_index: u64,
    pub reason: IntegrityReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityReason {
    IndexMismatch,
    LinkageBroken,
    HashMismatch,
    MerkleMismatch,
    ApprovalDigestMismatch,
}

impl fmt::Display for IntegrityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IntegrityReason::IndexMismatch => "IndexMismatch",
            IntegrityReason::LinkageBroken => "LinkageBroken",
            IntegrityReason::HashMismatch => "HashMismatch",
            IntegrityReason::MerkleMismatch => "MerkleMismatch",
            IntegrityReason::ApprovalDigestMismatch => "ApprovalDigestMismatch",
        };
        f.write_str(s)
    }
}

/// Transaction categories stored on the chain. The discriminant is the
/// 1-byte `kind` tag of the canonical wire encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TxKind {
    VitalsData = 0,
    DetectionResult = 1,
    DoseEvent = 2,
    RetrievalGrant = 3,
}

impl TxKind {
    pub fn from_byte(b: u8) -> Option<TxKind> {
        match b {
            0 => Some(TxKind::VitalsData),
            1 => Some(TxKind::DetectionResult),
            2 => Some(TxKind::DoseEvent),
            3 => Some(TxKind::RetrievalGrant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::VitalsData => "vitals_data",
            TxKind::DetectionResult => "detection_result",
            TxKind::DoseEvent => "dose_event",
            TxKind::RetrievalGrant => "retrieval_grant",
        }
    }
}

/// One ledger record. `payload` is the kind-specific canonical byte
/// sequence produced by the owning module (fog, detector, dosing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub kind: TxKind,
    pub patient_id: [u8; 32],
    pub payload: Vec<u8>,
    pub created_at: u32,
}

impl TransactionRecord {
    /// Canonical wire bytes: kind (1) || patient_id (32) ||
    /// created_at (4, BE) || payload length (4, BE) || payload.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + self.payload.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.patient_id);
        out.extend_from_slice(&self.created_at.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

/// SHA-256 over the transaction's canonical bytes.
pub fn hash_transaction(tx: &TransactionRecord) -> Digest32 {
    sha256(&tx.canonical_bytes())
}

/// Fixed-width block header. Serializes to exactly [`HEADER_LEN`] bytes
/// with every integer big-endian; `index` occupies a 32-byte field of
/// which the low 8 bytes carry the value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub version: u32,
    pub index: u64,
    pub prev_hash: Digest32,
    pub merkle_root: Digest32,
    pub timestamp: u32,
    pub nonce: u32,
    pub user_id: [u8; 32],
    pub approval_digest: Digest32,
}

impl BlockHeader {
    pub fn serialize(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.version.to_be_bytes());
        out[28..36].copy_from_slice(&self.index.to_be_bytes());
        out[36..68].copy_from_slice(&self.prev_hash);
        out[68..100].copy_from_slice(&self.merkle_root);
        out[100..104].copy_from_slice(&self.timestamp.to_be_bytes());
        out[104..108].copy_from_slice(&self.nonce.to_be_bytes());
        out[108..140].copy_from_slice(&self.user_id);
        out[140..172].copy_from_slice(&self.approval_digest);
        out
    }

    /// Parses a 172-byte header. The upper 24 bytes of the index field
    /// must be zero; anything else is a malformed record.
    pub fn deserialize(bytes: &[u8]) -> Result<BlockHeader, store::StoreError> {
        if bytes.len() != HEADER_LEN {
            return Err(store::StoreError::Truncated);
        }
        if bytes[4..28].iter().any(|&b| b != 0) {
            return Err(store::StoreError::IndexOverflow);
        }
        let mut prev_hash = [0u8; 32];
        prev_hash.copy_from_slice(&bytes[36..68]);
        let mut merkle_root = [0u8; 32];
        merkle_root.copy_from_slice(&bytes[68..100]);
        let mut user_id = [0u8; 32];
        user_id.copy_from_slice(&bytes[108..140]);
        let mut approval_digest = [0u8; 32];
        approval_digest.copy_from_slice(&bytes[140..172]);
        Ok(BlockHeader {
            version: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            index: u64::from_be_bytes(bytes[28..36].try_into().unwrap()),
            prev_hash,
            merkle_root,
            timestamp: u32::from_be_bytes(bytes[100..104].try_into().unwrap()),
            nonce: u32::from_be_bytes(bytes[104..108].try_into().unwrap()),
            user_id,
            approval_digest,
        })
    }
}

/// SHA-256 over the serialized header.
pub fn compute_block_hash(header: &BlockHeader) -> Digest32 {
    sha256(&header.serialize())
}

/// A miner's agreement to a candidate block, as a keyed digest over the
/// candidate Merkle root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinerApproval {
    pub miner_id: [u8; 32],
    pub signature: Digest32,
}

/// Digest folding the approvals into the header: SHA-256 over the
/// concatenated (miner_id || signature) records in miner-id order, so
/// every approval byte is covered by the block hash.
pub fn approval_digest(approvals: &[MinerApproval]) -> Digest32 {
    let mut sorted: Vec<&MinerApproval> = approvals.iter().collect();
    sorted.sort_by_key(|a| a.miner_id);
    let mut buf = Vec::with_capacity(sorted.len() * 64);
    for a in sorted {
        buf.extend_from_slice(&a.miner_id);
        buf.extend_from_slice(&a.signature);
    }
    sha256(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<TransactionRecord>,
    pub approvals: Vec<MinerApproval>,
    pub block_hash: Digest32,
}

/// Verification hooks the chain needs from the identity layer when
/// gating an append on miner approvals.
pub trait ApprovalPolicy {
    /// True when `signature` is a valid approval of `root` by `miner_id`.
    fn verify_approval(&self, miner_id: &[u8; 32], signature: &Digest32, root: &Digest32) -> bool;
    /// Miner ids registered for `patient_id`.
    fn miners_of(&self, patient_id: &[u8; 32]) -> Vec<[u8; 32]>;
    /// Approvals required for a block appended on behalf of `patient_id`.
    fn required_approvals(&self, patient_id: &[u8; 32]) -> usize;
}

/// Staging area for records awaiting approval and block assembly.
/// A record appears at most once, keyed by its transaction digest.
#[derive(Debug, Default, Clone)]
pub struct TransactionPool {
    pending: Vec<TransactionRecord>,
}

impl TransactionPool {
    /// Adds `tx` unless an identical record is already pending.
    /// Returns whether the pool changed.
    pub fn push(&mut self, tx: TransactionRecord) -> bool {
        let digest = hash_transaction(&tx);
        if self.pending.iter().any(|p| hash_transaction(p) == digest) {
            return false;
        }
        self.pending.push(tx);
        true
    }

    pub fn pending(&self) -> &[TransactionRecord] {
        &self.pending
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    fn remove_all(&mut self, txs: &[TransactionRecord]) {
        let digests: Vec<Digest32> = txs.iter().map(hash_transaction).collect();
        self.pending
            .retain(|p| !digests.contains(&hash_transaction(p)));
    }
}

/// The chain itself: ordered blocks, the hash table of appended block
/// hashes, and the staging pool.
#[derive(Debug, Default, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    hash_table: HashMap<Digest32, u64>,
    pool: TransactionPool,
}

impl Chain {
    pub fn new() -> Chain {
        Chain::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, index: u64) -> Option<&Block> {
        self.blocks.get(index as usize)
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Exact lookup in the hash table of appended block hashes.
    pub fn lookup_hash(&self, hash: &Digest32) -> Option<u64> {
        self.hash_table.get(hash).copied()
    }

    pub fn hash_table_len(&self) -> usize {
        self.hash_table.len()
    }

    pub fn pool(&self) -> &TransactionPool {
        &self.pool
    }

    pub fn pool_mut(&mut self) -> &mut TransactionPool {
        &mut self.pool
    }

    /// Assembles and appends a block from `txs`.
    ///
    /// Every submitted approval must verify against its miner's key; the
    /// distinct approving miners that are registered for `user_id` must
    /// meet the policy's threshold. On success the included transactions
    /// leave the pool and the new hash enters the hash table.
    pub fn append_block(
        &mut self,
        txs: Vec<TransactionRecord>,
        approvals: Vec<MinerApproval>,
        user_id: [u8; 32],
        timestamp: u32,
        policy: &dyn ApprovalPolicy,
    ) -> Result<&Block, LedgerError> {
        if txs.is_empty() {
            return Err(LedgerError::EmptyTransactionSet);
        }
        let leaves: Vec<Digest32> = txs.iter().map(hash_transaction).collect();
        let root = merkle_root(&leaves).expect("non-empty leaves");

        for approval in &approvals {
            if !policy.verify_approval(&approval.miner_id, &approval.signature, &root) {
                return Err(LedgerError::InvalidSignature {
                    miner: hex::encode(approval.miner_id),
                });
            }
        }
        let miners = policy.miners_of(&user_id);
        let mut approving: Vec<[u8; 32]> = approvals
            .iter()
            .map(|a| a.miner_id)
            .filter(|id| miners.contains(id))
            .collect();
        approving.sort();
        approving.dedup();
        let required = policy.required_approvals(&user_id);
        if approving.len() < required {
            return Err(LedgerError::InsufficientApprovals {
                got: approving.len(),
                required,
            });
        }

        let mut approvals = approvals;
        approvals.sort_by_key(|a| a.miner_id);

        let (index, prev_hash, nonce) = match self.blocks.last() {
            Some(prev) => (prev.header.index + 1, prev.block_hash, prev.header.nonce + 1),
            None => (0, [0u8; 32], 0),
        };
        let header = BlockHeader {
            version: BLOCK_VERSION,
            index,
            prev_hash,
            merkle_root: root,
            timestamp,
            nonce,
            user_id,
            approval_digest: approval_digest(&approvals),
        };
        let block_hash = compute_block_hash(&header);

        self.pool.remove_all(&txs);
        self.hash_table.insert(block_hash, index);
        self.blocks.push(Block {
            header,
            transactions: txs,
            approvals,
            block_hash,
        });
        Ok(self.blocks.last().unwrap())
    }

    /// Re-derives every stored value and reports the first inconsistency.
    pub fn validate(&self) -> Result<(), IntegrityError> {
        validate_chain(&self.blocks)
    }

    /// All transactions for `patient_id` in chain order, optionally
    /// narrowed by kind and by an inclusive `created_at` range.
    pub fn query_transactions(
        &self,
        patient_id: &[u8; 32],
        kind: Option<TxKind>,
        from: Option<u32>,
        to: Option<u32>,
    ) -> Vec<TransactionRecord> {
        self.blocks
            .iter()
            .flat_map(|b| b.transactions.iter())
            .filter(|tx| tx.patient_id == *patient_id)
            .filter(|tx| kind.is_none_or(|k| tx.kind == k))
            .filter(|tx| from.is_none_or(|f| tx.created_at >= f))
            .filter(|tx| to.is_none_or(|t| tx.created_at <= t))
            .cloned()
            .collect()
    }

    /// Rebuilds a chain from already-validated blocks (e.g. loaded from
    /// a block store). The hash table is reconstructed; the pool starts
    /// empty.
    pub fn from_blocks(blocks: Vec<Block>) -> Chain {
        let hash_table = blocks
            .iter()
            .map(|b| (b.block_hash, b.header.index))
            .collect();
        Chain {
            blocks,
            hash_table,
            pool: TransactionPool::default(),
        }
    }
}

/// Chain-wide integrity walk over a block slice. Checks, per block:
/// index continuity, prev-hash linkage (genesis links to 32 zero bytes),
/// the recomputed block hash, the Merkle root over the stored
/// transactions, and the approval digest. Total over arbitrary input.
pub fn validate_chain(blocks: &[Block]) -> Result<(), IntegrityError> {
    let mut prev_hash = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let fail = |reason| {
            Err(IntegrityError {
                block_index: i as u64,
                reason,
            })
        };
        if block.header.index != i as u64 {
            return fail(IntegrityReason::IndexMismatch);
        }
        if block.header.prev_hash != prev_hash {
            return fail(IntegrityReason::LinkageBroken);
        }
        if compute_block_hash(&block.header) != block.block_hash {
            return fail(IntegrityReason::HashMismatch);
        }
        let leaves: Vec<Digest32> = block.transactions.iter().map(hash_transaction).collect();
        match merkle_root(&leaves) {
            Ok(root) if root == block.header.merkle_root => {}
            _ => return fail(IntegrityReason::MerkleMismatch),
        }
        if approval_digest(&block.approvals) != block.header.approval_digest {
            return fail(IntegrityReason::ApprovalDigestMismatch);
        }
        prev_hash = block.block_hash;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Approval policy with a fixed miner/key list shared by all
    /// patients; signature scheme matches `identity::sign_approval`.
    pub struct StubPolicy {
        pub miners: Vec<([u8; 32], [u8; 32])>,
        pub required: usize,
    }

    impl StubPolicy {
        pub fn sign(&self, miner_id: &[u8; 32], root: &Digest32) -> MinerApproval {
            let key = self
                .miners
                .iter()
                .find(|(id, _)| id == miner_id)
                .map(|(_, k)| *k)
                .expect("known miner");
            let mut buf = Vec::with_capacity(64);
            buf.extend_from_slice(&key);
            buf.extend_from_slice(root);
            MinerApproval {
                miner_id: *miner_id,
                signature: sha256(&buf),
            }
        }

        pub fn sign_all(&self, root: &Digest32) -> Vec<MinerApproval> {
            self.miners.iter().map(|(id, _)| self.sign(id, root)).collect()
        }
    }

    impl ApprovalPolicy for StubPolicy {
        fn verify_approval(
            &self,
            miner_id: &[u8; 32],
            signature: &Digest32,
            root: &Digest32,
        ) -> bool {
            self.miners
                .iter()
                .find(|(id, _)| id == miner_id)
                .map(|(_, key)| {
                    let mut buf = Vec::with_capacity(64);
                    buf.extend_from_slice(key);
                    buf.extend_from_slice(root);
                    sha256(&buf) == *signature
                })
                .unwrap_or(false)
        }

        fn miners_of(&self, _patient_id: &[u8; 32]) -> Vec<[u8; 32]> {
            self.miners.iter().map(|(id, _)| *id).collect()
        }

        fn required_approvals(&self, _patient_id: &[u8; 32]) -> usize {
            self.required
        }
    }

    pub fn default_policy() -> StubPolicy {
        StubPolicy {
            miners: vec![([0xA1; 32], [0x01; 32]), ([0xA2; 32], [0x02; 32]), ([0xA3; 32], [0x03; 32])],
            required: 2,
        }
    }

    pub fn sample_tx(patient: u8, seq: u8) -> TransactionRecord {
        TransactionRecord {
            kind: TxKind::VitalsData,
            patient_id: [patient; 32],
            payload: vec![seq; 44],
            created_at: 1000 + seq as u32,
        }
    }

    /// A valid chain of `n` blocks, one transaction per block.
    pub fn build_chain(n: usize) -> (Chain, StubPolicy) {
        let policy = default_policy();
        let mut chain = Chain::new();
        for i in 0..n {
            let tx = sample_tx(0xAB, i as u8);
            let root = merkle_root(&[hash_transaction(&tx)]).unwrap();
            let approvals = policy.sign_all(&root);
            chain
                .append_block(vec![tx], approvals, [0xAB; 32], 1_000_000 + i as u32, &policy)
                .unwrap();
        }
        (chain, policy)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn empty_payload_tx_hashes_its_canonical_envelope() {
        // The SHA-256 primitive itself must match the reference digest of
        // the empty byte string (computed with Python hashlib).
        assert_eq!(
            hex::encode(sha256(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        // A record with an empty payload still hashes its 41-byte envelope.
        let tx = TransactionRecord {
            kind: TxKind::VitalsData,
            patient_id: [0; 32],
            payload: vec![],
            created_at: 0,
        };
        assert_eq!(tx.canonical_bytes().len(), 41);
        assert_eq!(hash_transaction(&tx), sha256(&tx.canonical_bytes()));
    }

    #[test]
    fn canonical_tx_digest_matches_reference() {
        // Frozen from an independent Python hashlib computation.
        let tx = TransactionRecord {
            kind: TxKind::VitalsData,
            patient_id: [0xAB; 32],
            payload: vec![1, 2, 3],
            created_at: 1000,
        };
        assert_eq!(
            hex::encode(hash_transaction(&tx)),
            "b86f8c50d56a103b29c4305eb958211e12870b84e4d613311a495663d56c47b9"
        );
    }

    #[test]
    fn identical_records_hash_identically() {
        let a = sample_tx(1, 1);
        let b = sample_tx(1, 1);
        assert_eq!(hash_transaction(&a), hash_transaction(&b));
    }

    #[test]
    fn single_byte_payload_difference_changes_digest() {
        let a = sample_tx(1, 1);
        let mut b = a.clone();
        b.payload[7] ^= 1;
        assert_ne!(hash_transaction(&a), hash_transaction(&b));
    }

    #[test]
    fn golden_header_hash() {
        // version=1, everything else zero; digest frozen from Python hashlib.
        let header = BlockHeader {
            version: 1,
            index: 0,
            prev_hash: [0; 32],
            merkle_root: [0; 32],
            timestamp: 0,
            nonce: 0,
            user_id: [0; 32],
            approval_digest: [0; 32],
        };
        let bytes = header.serialize();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[0..4], &[0, 0, 0, 1]);
        assert!(bytes[4..].iter().all(|&b| b == 0));
        assert_eq!(
            hex::encode(compute_block_hash(&header)),
            "448945ff2107f71bd7530cbaf719fe94c516c3f60b6a4808de37f8f28113567b"
        );
    }

    #[test]
    fn nonce_increment_changes_hash() {
        let mut header = BlockHeader {
            version: 1,
            index: 3,
            prev_hash: [1; 32],
            merkle_root: [2; 32],
            timestamp: 77,
            nonce: 5,
            user_id: [3; 32],
            approval_digest: [4; 32],
        };
        let before = compute_block_hash(&header);
        header.nonce += 1;
        assert_ne!(before, compute_block_hash(&header));
    }

    #[test]
    fn genesis_append() {
        let (chain, _) = build_chain(1);
        let genesis = chain.block(0).unwrap();
        assert_eq!(genesis.header.index, 0);
        assert_eq!(genesis.header.prev_hash, [0u8; 32]);
        assert_eq!(genesis.header.nonce, 0);
        assert_eq!(chain.lookup_hash(&genesis.block_hash), Some(0));
    }

    #[test]
    fn majority_of_three_miners_appends() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let tx = sample_tx(0xAB, 0);
        let root = merkle_root(&[hash_transaction(&tx)]).unwrap();
        let approvals: Vec<MinerApproval> = policy.sign_all(&root).into_iter().take(2).collect();
        assert!(chain
            .append_block(vec![tx], approvals, [0xAB; 32], 1, &policy)
            .is_ok());
    }

    #[test]
    fn below_majority_leaves_pool_untouched() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let tx = sample_tx(0xAB, 0);
        chain.pool_mut().push(tx.clone());
        let root = merkle_root(&[hash_transaction(&tx)]).unwrap();
        let approvals = vec![policy.sign(&[0xA1; 32], &root)];
        let err = chain
            .append_block(vec![tx], approvals, [0xAB; 32], 1, &policy)
            .unwrap_err();
        assert_eq!(
            err,
            LedgerError::InsufficientApprovals {
                got: 1,
                required: 2
            }
        );
        assert_eq!(chain.pool().len(), 1);
        assert!(chain.is_empty());
    }

    #[test]
    fn bad_signature_names_the_miner() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let tx = sample_tx(0xAB, 0);
        let root = merkle_root(&[hash_transaction(&tx)]).unwrap();
        let mut approvals = policy.sign_all(&root);
        approvals[1].signature[0] ^= 1;
        let err = chain
            .append_block(vec![tx], approvals, [0xAB; 32], 1, &policy)
            .unwrap_err();
        assert_eq!(
            err,
            LedgerError::InvalidSignature {
                miner: hex::encode([0xA2; 32])
            }
        );
    }

    #[test]
    fn empty_transaction_set_is_rejected() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let err = chain
            .append_block(vec![], vec![], [0xAB; 32], 1, &policy)
            .unwrap_err();
        assert_eq!(err, LedgerError::EmptyTransactionSet);
    }

    #[test]
    fn duplicate_approvals_count_once() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let tx = sample_tx(0xAB, 0);
        let root = merkle_root(&[hash_transaction(&tx)]).unwrap();
        let one = policy.sign(&[0xA1; 32], &root);
        let err = chain
            .append_block(vec![tx], vec![one, one], [0xAB; 32], 1, &policy)
            .unwrap_err();
        assert!(matches!(err, LedgerError::InsufficientApprovals { got: 1, .. }));
    }

    #[test]
    fn fresh_chain_validates() {
        let (chain, _) = build_chain(10);
        assert_eq!(chain.len(), 10);
        assert!(chain.validate().is_ok());
    }

    #[test]
    fn payload_bit_flip_is_merkle_mismatch() {
        let (mut chain, _) = build_chain(10);
        chain.blocks[4].transactions[0].payload[3] ^= 0x10;
        let err = chain.validate().unwrap_err();
        assert_eq!(err.block_index, 4);
        assert_eq!(err.reason, IntegrityReason::MerkleMismatch);
    }

    #[test]
    fn swapped_blocks_break_linkage() {
        let (mut chain, _) = build_chain(5);
        chain.blocks.swap(2, 3);
        let err = chain.validate().unwrap_err();
        assert_eq!(err.block_index, 2);
        // Index continuity fails first on the swapped pair.
        assert!(matches!(
            err.reason,
            IntegrityReason::IndexMismatch | IntegrityReason::LinkageBroken
        ));
    }

    #[test]
    fn header_mutation_is_hash_mismatch() {
        let (mut chain, _) = build_chain(6);
        chain.blocks[5].header.timestamp ^= 1;
        let err = chain.validate().unwrap_err();
        assert_eq!(err.block_index, 5);
        assert_eq!(err.reason, IntegrityReason::HashMismatch);
    }

    #[test]
    fn approval_mutation_is_approval_digest_mismatch() {
        let (mut chain, _) = build_chain(6);
        chain.blocks[2].approvals[0].miner_id[31] ^= 1;
        let err = chain.validate().unwrap_err();
        assert_eq!(err.block_index, 2);
        assert_eq!(err.reason, IntegrityReason::ApprovalDigestMismatch);
    }

    #[test]
    fn append_monotonicity_and_hash_table_size() {
        let (chain, _) = build_chain(12);
        for (i, b) in chain.blocks().iter().enumerate() {
            assert_eq!(b.header.index, i as u64);
        }
        assert_eq!(chain.hash_table_len(), 12);
    }

    #[test]
    fn query_filters_by_kind_and_patient() {
        let policy = default_policy();
        let mut chain = Chain::new();
        let mk = |kind, patient: u8, t: u32| TransactionRecord {
            kind,
            patient_id: [patient; 32],
            payload: vec![t as u8],
            created_at: t,
        };
        let txs = vec![
            mk(TxKind::VitalsData, 1, 10),
            mk(TxKind::DoseEvent, 1, 11),
            mk(TxKind::VitalsData, 2, 12),
            mk(TxKind::DetectionResult, 1, 13),
        ];
        let leaves: Vec<Digest32> = txs.iter().map(hash_transaction).collect();
        let root = merkle_root(&leaves).unwrap();
        chain
            .append_block(txs, policy.sign_all(&root), [1; 32], 1, &policy)
            .unwrap();

        let vitals = chain.query_transactions(&[1; 32], Some(TxKind::VitalsData), None, None);
        assert_eq!(vitals.len(), 1);
        assert_eq!(vitals[0].created_at, 10);

        let doses = chain.query_transactions(&[1; 32], Some(TxKind::DoseEvent), None, None);
        assert_eq!(doses.len(), 1);

        let unknown = chain.query_transactions(&[9; 32], None, None, None);
        assert!(unknown.is_empty());

        let ranged = chain.query_transactions(&[1; 32], None, Some(11), Some(13));
        assert_eq!(ranged.len(), 2);
    }

    #[test]
    fn query_matches_linear_scan_oracle() {
        let (chain, _) = build_chain(10);
        let got = chain.query_transactions(&[0xAB; 32], Some(TxKind::VitalsData), None, None);
        // Independent oracle: scan every block linearly.
        let mut expect = Vec::new();
        for b in chain.blocks() {
            for tx in &b.transactions {
                if tx.patient_id == [0xAB; 32] && tx.kind == TxKind::VitalsData {
                    expect.push(tx.clone());
                }
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn deterministic_rebuild_is_byte_identical() {
        let (a, _) = build_chain(8);
        let (b, _) = build_chain(8);
        let abytes = store::serialize_blocks(a.blocks());
        let bbytes = store::serialize_blocks(b.blocks());
        assert_eq!(abytes, bbytes);
    }
}
