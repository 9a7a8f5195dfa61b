//! Binary hash tree over transaction digests.
//!
//! Interior nodes are `SHA-256(left || right)`; a level with an odd node
//! count duplicates its last digest. Inclusion proofs carry the sibling
//! digest and which side it sits on, so verification replays the same
//! duplicate-last rule.

use sha2::{Digest, Sha256};

use super::LedgerError;

pub type Digest32 = [u8; 32];

/// Which side of the running hash a proof sibling occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One step of an inclusion proof: the sibling digest and its side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProofStep {
    pub sibling: Digest32,
    pub side: Side,
}

pub(crate) fn sha256(data: &[u8]) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(data);
    hasher.finalize().into()
}

fn hash_pair(left: &Digest32, right: &Digest32) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(left);
    hasher.update(right);
    hasher.finalize().into()
}

/// Root of the binary hash tree over `leaves`, in order.
///
/// A single leaf is its own root. Errors on an empty leaf set.
pub fn merkle_root(leaves: &[Digest32]) -> Result<Digest32, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyLeafSet);
    }
    let mut level: Vec<Digest32> = leaves.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            let right = pair.get(1).unwrap_or(&pair[0]);
            next.push(hash_pair(&pair[0], right));
        }
        level = next;
    }
    Ok(level[0])
}

/// Inclusion proof for `leaves[index]`, bottom-up.
pub fn merkle_proof(leaves: &[Digest32], index: usize) -> Result<Vec<ProofStep>, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyLeafSet);
    }
    if index >= leaves.len() {
        return Err(LedgerError::IndexOutOfRange {
            index,
            len: leaves.len(),
        });
    }
    let mut proof = Vec::new();
    let mut level: Vec<Digest32> = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling_pos = if pos.is_multiple_of(2) { pos + 1 } else { pos - 1 };
        // The last node of an odd level pairs with itself.
        let sibling = *level.get(sibling_pos).unwrap_or(&level[pos]);
        let side = if pos.is_multiple_of(2) {
            Side::Right
        } else {
            Side::Left
        };
        proof.push(ProofStep { sibling, side });

        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            let right = pair.get(1).unwrap_or(&pair[0]);
            next.push(hash_pair(&pair[0], right));
        }
        level = next;
        pos /= 2;
    }
    Ok(proof)
}

/// Replays `proof` from `leaf` and compares against `root`.
pub fn verify_merkle_proof(leaf: &Digest32, proof: &[ProofStep], root: &Digest32) -> bool {
    let mut current = *leaf;
    for step in proof {
        current = match step.side {
            Side::Left => hash_pair(&step.sibling, &current),
            Side::Right => hash_pair(&current, &step.sibling),
        };
    }
    current == *root
}
