//! Merkle-batched data availability.
//!
//! Leaves hash as `H(0x00 || leaf)` and interior nodes as `H(0x01 || left || right)`.
//! A level with an odd number of nodes pairs its last node with itself. The
//! root of an empty list is the leaf hash of the empty string.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hash::{hash_parts, Hash32};

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

pub fn leaf_hash(leaf: &[u8]) -> Hash32 {
    hash_parts(&[&[LEAF_TAG], leaf])
}

pub fn node_hash(left: &Hash32, right: &Hash32) -> Hash32 {
    hash_parts(&[&[NODE_TAG], left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Hash32]) -> Vec<Hash32> {
    level
        .chunks(2)
        .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
        .collect()
}

pub fn root_of_hashes(hashes: &[Hash32]) -> Hash32 {
    if hashes.is_empty() {
        return leaf_hash(b"");
    }
    let mut level = hashes.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

pub fn merkle_root<B: AsRef<[u8]>>(leaves: &[B]) -> Hash32 {
    root_of_hashes(&leaves.iter().map(|l| leaf_hash(l.as_ref())).collect::<Vec<_>>())
}

/// Root binding an ordered list of external documents.
pub fn commit_prompts<B: AsRef<[u8]>>(documents: &[B]) -> Hash32 {
    merkle_root(documents)
}

/// Side of the running hash on which the sibling sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub sibling: Hash32,
    pub side: Side,
}

/// Sibling path from leaf `index` to the root of `hashes`.
pub fn audit_path(hashes: &[Hash32], mut index: usize) -> Vec<PathStep> {
    let mut path = Vec::new();
    let mut level = hashes.to_vec();
    while level.len() > 1 {
        let step = if index % 2 == 0 {
            PathStep { sibling: *level.get(index + 1).unwrap_or(&level[index]), side: Side::Right }
        } else {
            PathStep { sibling: level[index - 1], side: Side::Left }
        };
        path.push(step);
        level = next_level(&level);
        index /= 2;
    }
    path
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub slot_id: u64,
    pub root: Hash32,
    pub path: Vec<PathStep>,
    #[serde(with = "hex_bytes")]
    pub leaf: Vec<u8>,
}

impl InclusionProof {
    pub fn computed_root(&self) -> Hash32 {
        root_from_path(leaf_hash(&self.leaf), &self.path)
    }
}

/// Folds an audit path up from an already-hashed leaf.
pub fn root_from_path(leaf: Hash32, path: &[PathStep]) -> Hash32 {
    path.iter().fold(leaf, |acc, step| match step.side {
        Side::Right => node_hash(&acc, &step.sibling),
        Side::Left => node_hash(&step.sibling, &acc),
    })
}

pub fn verify_inclusion(proof: &InclusionProof, trusted_root: &Hash32) -> bool {
    proof.path.len() < 64 && proof.root == *trusted_root && proof.computed_root() == *trusted_root
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DaPointer {
    pub slot_id: u64,
    pub leaf_index: u32,
}

impl fmt::Display for DaPointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.slot_id, self.leaf_index)
    }
}

impl FromStr for DaPointer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (slot, index) = s.split_once(':').ok_or_else(|| format!("pointer {s:?} is not slot:index"))?;
        Ok(Self {
            slot_id: slot.parse().map_err(|_| format!("bad slot in {s:?}"))?,
            leaf_index: index.parse().map_err(|_| format!("bad leaf index in {s:?}"))?,
        })
    }
}

impl Serialize for DaPointer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DaPointer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DaError {
    #[error("no record at {0}")]
    NotFound(DaPointer),
    #[error("record at {0} is withheld")]
    Unavailable(DaPointer),
    #[error("batch {0} is not sealed")]
    NotSealed(u64),
    #[error("batch {0} was pruned")]
    Pruned(u64),
    #[error("dump for batch {slot_id} does not match its root")]
    CorruptDump { slot_id: u64 },
}

#[derive(Debug, Clone)]
struct StoredLeaf {
    hash: Hash32,
    data: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
struct Batch {
    leaves: Vec<StoredLeaf>,
    root: Option<Hash32>,
    sealed_at: Option<u64>,
    pruned: bool,
}

impl Batch {
    fn open() -> Self {
        Self { leaves: Vec::new(), root: None, sealed_at: None, pruned: false }
    }
}

/// Serialized form of one sealed batch. Withheld leaves carry only their hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDump {
    pub slot_id: u64,
    pub sealed_at: u64,
    pub root: Hash32,
    pub leaves: Vec<DumpLeaf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpLeaf {
    pub hash: Hash32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DaStore {
    batches: BTreeMap<u64, Batch>,
    open_slot: u64,
    withholding: bool,
    prune_from: u64,
}

impl Default for DaStore {
    fn default() -> Self {
        Self::new()
    }
}

impl DaStore {
    pub fn new() -> Self {
        Self { batches: BTreeMap::from([(0, Batch::open())]), open_slot: 0, withholding: false, prune_from: 0 }
    }

    pub fn open_slot(&self) -> u64 {
        self.open_slot
    }

    /// While enabled, published blobs enter the batch root but are never served.
    pub fn set_withholding(&mut self, on: bool) {
        self.withholding = on;
    }

    /// Pointer the next publish will receive.
    pub fn next_pointer(&self) -> DaPointer {
        DaPointer { slot_id: self.open_slot, leaf_index: self.batches[&self.open_slot].leaves.len() as u32 }
    }

    pub fn publish(&mut self, blob: &[u8]) -> DaPointer {
        let pointer = self.next_pointer();
        let data = (!self.withholding).then(|| blob.to_vec());
        self.batches
            .get_mut(&self.open_slot)
            .expect("open batch exists")
            .leaves
            .push(StoredLeaf { hash: leaf_hash(blob), data });
        pointer
    }

    /// Seals the open batch if it has leaves, returning its slot and root.
    pub fn seal(&mut self, now: u64) -> Option<(u64, Hash32)> {
        let slot = self.open_slot;
        let batch = self.batches.get_mut(&slot).expect("open batch exists");
        if batch.leaves.is_empty() {
            return None;
        }
        let hashes: Vec<Hash32> = batch.leaves.iter().map(|l| l.hash).collect();
        let root = root_of_hashes(&hashes);
        batch.root = Some(root);
        batch.sealed_at = Some(now);
        self.open_slot += 1;
        self.batches.insert(self.open_slot, Batch::open());
        Some((slot, root))
    }

    pub fn is_sealed(&self, slot_id: u64) -> bool {
        self.batches.get(&slot_id).is_some_and(|b| b.root.is_some())
    }

    pub fn root(&self, slot_id: u64) -> Option<Hash32> {
        self.batches.get(&slot_id).and_then(|b| b.root)
    }

    fn leaf(&self, pointer: DaPointer) -> Result<(&Batch, &StoredLeaf), DaError> {
        let batch = self.batches.get(&pointer.slot_id).ok_or(DaError::NotFound(pointer))?;
        let leaf = batch.leaves.get(pointer.leaf_index as usize).ok_or(DaError::NotFound(pointer))?;
        if batch.pruned {
            return Err(DaError::Pruned(pointer.slot_id));
        }
        Ok((batch, leaf))
    }

    pub fn fetch(&self, pointer: DaPointer) -> Result<Vec<u8>, DaError> {
        let (_, leaf) = self.leaf(pointer)?;
        leaf.data.clone().ok_or(DaError::Unavailable(pointer))
    }

    pub fn fetch_with_proof(&self, pointer: DaPointer) -> Result<(Vec<u8>, InclusionProof), DaError> {
        let (batch, leaf) = self.leaf(pointer)?;
        let root = batch.root.ok_or(DaError::NotSealed(pointer.slot_id))?;
        let data = leaf.data.clone().ok_or(DaError::Unavailable(pointer))?;
        let hashes: Vec<Hash32> = batch.leaves.iter().map(|l| l.hash).collect();
        let proof = InclusionProof {
            slot_id: pointer.slot_id,
            root,
            path: audit_path(&hashes, pointer.leaf_index as usize),
            leaf: data.clone(),
        };
        Ok((data, proof))
    }

    /// Drops leaf data of batches sealed at least `retention` epochs ago. Roots are kept.
    pub fn prune(&mut self, now: u64, retention: u64) -> Vec<u64> {
        let mut pruned = Vec::new();
        for (&slot, batch) in self.batches.range_mut(self.prune_from..) {
            match batch.sealed_at {
                Some(sealed_at) if now >= sealed_at.saturating_add(retention) => {
                    batch.pruned = true;
                    batch.leaves.iter_mut().for_each(|l| l.data = None);
                    pruned.push(slot);
                    self.prune_from = slot + 1;
                }
                _ => break,
            }
        }
        pruned
    }

    pub fn dump(&self) -> Vec<BatchDump> {
        self.batches
            .iter()
            .filter(|(_, b)| !b.pruned)
            .filter_map(|(&slot_id, b)| {
                Some(BatchDump {
                    slot_id,
                    sealed_at: b.sealed_at?,
                    root: b.root?,
                    leaves: b
                        .leaves
                        .iter()
                        .map(|l| DumpLeaf { hash: l.hash, data: l.data.as_ref().map(hex::encode) })
                        .collect(),
                })
            })
            .collect()
    }

    /// Rebuilds a read-only store from dumped batches, checking every root.
    pub fn restore(dumps: &[BatchDump]) -> Result<Self, DaError> {
        let mut batches = BTreeMap::new();
        for d in dumps {
            let corrupt = || DaError::CorruptDump { slot_id: d.slot_id };
            let mut leaves = Vec::with_capacity(d.leaves.len());
            for l in &d.leaves {
                let data = l.data.as_deref().map(hex::decode).transpose().map_err(|_| corrupt())?;
                if data.as_deref().is_some_and(|bytes| leaf_hash(bytes) != l.hash) {
                    return Err(corrupt());
                }
                leaves.push(StoredLeaf { hash: l.hash, data });
            }
            if root_of_hashes(&leaves.iter().map(|l| l.hash).collect::<Vec<_>>()) != d.root {
                return Err(corrupt());
            }
            batches.insert(d.slot_id, Batch { leaves, root: Some(d.root), sealed_at: Some(d.sealed_at), pruned: false });
        }
        let open_slot = batches.keys().next_back().map_or(0, |s| s + 1);
        batches.insert(open_slot, Batch::open());
        Ok(Self { batches, open_slot, withholding: false, prune_from: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_commit;
    use proptest::prelude::*;

    fn tag(t: u8, parts: &[&[u8]]) -> Hash32 {
        let mut buf = vec![t];
        parts.iter().for_each(|p| buf.extend_from_slice(p));
        hash_commit(&buf)
    }

    #[test]
    fn four_leaf_root_by_hand() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d"];
        let l: Vec<Hash32> = leaves.iter().map(|x| tag(0, &[x])).collect();
        let left = tag(1, &[l[0].as_bytes(), l[1].as_bytes()]);
        let right = tag(1, &[l[2].as_bytes(), l[3].as_bytes()]);
        let expected = tag(1, &[left.as_bytes(), right.as_bytes()]);

        let mut store = DaStore::new();
        let ptrs: Vec<_> = leaves.iter().map(|x| store.publish(x)).collect();
        assert_eq!(ptrs[1], DaPointer { slot_id: 0, leaf_index: 1 });
        assert_eq!(store.seal(3), Some((0, expected)));
        // Independent computation with Python hashlib.
        assert_eq!(expected.to_hex(), "33376a3bd63e9993708a84ddfe6c28ae58b83505dd1fed711bd924ec5a6239f0");
    }

    #[test]
    fn odd_level_duplicates_last() {
        let l: Vec<Hash32> = [b"a", b"b", b"c"].iter().map(|x| leaf_hash(*x)).collect();
        let expected = node_hash(&node_hash(&l[0], &l[1]), &node_hash(&l[2], &l[2]));
        assert_eq!(merkle_root(&[b"a", b"b", b"c"]), expected);
        assert_eq!(merkle_root(&[b"a", b"b", b"c", b"c"]), expected);
    }

    #[test]
    fn prompt_commitments() {
        assert_eq!(commit_prompts::<&[u8]>(&[]), tag(0, &[]));
        assert_eq!(commit_prompts(&[b"doc"]), tag(0, &[b"doc"]));
        let (a, b) = (tag(0, &[b"d1"]), tag(0, &[b"d2"]));
        assert_eq!(commit_prompts(&[b"d1", b"d2"]), tag(1, &[a.as_bytes(), b.as_bytes()]));
    }

    #[test]
    fn single_leaf_has_empty_path() {
        let mut store = DaStore::new();
        let p = store.publish(b"only");
        let (_, root) = store.seal(0).unwrap();
        assert_eq!(root, leaf_hash(b"only"));
        let (blob, proof) = store.fetch_with_proof(p).unwrap();
        assert_eq!(blob, b"only");
        assert!(proof.path.is_empty());
        assert!(verify_inclusion(&proof, &root));
    }

    #[test]
    fn fetch_errors_are_distinct() {
        let mut store = DaStore::new();
        let p = store.publish(b"x");
        assert_eq!(store.fetch_with_proof(p).unwrap_err(), DaError::NotSealed(0));
        store.set_withholding(true);
        let hidden = store.publish(b"y");
        store.set_withholding(false);
        store.seal(0);
        assert_eq!(store.fetch_with_proof(hidden).unwrap_err(), DaError::Unavailable(hidden));
        let missing = DaPointer { slot_id: 0, leaf_index: 9 };
        assert_eq!(store.fetch_with_proof(missing).unwrap_err(), DaError::NotFound(missing));
        assert!(store.fetch_with_proof(p).is_ok());
        assert_eq!(store.prune(1, 2), Vec::<u64>::new());
        assert_eq!(store.prune(2, 2), vec![0]);
        assert_eq!(store.fetch(p).unwrap_err(), DaError::Pruned(0));
        assert!(store.root(0).is_some());
    }

    #[test]
    fn dump_restore_round_trip() {
        let mut store = DaStore::new();
        let p = store.publish(b"one");
        store.set_withholding(true);
        let w = store.publish(b"two");
        store.set_withholding(false);
        store.seal(5);
        let dumps = store.dump();
        let json = serde_json::to_string(&dumps).unwrap();
        let restored = DaStore::restore(&serde_json::from_str::<Vec<BatchDump>>(&json).unwrap()).unwrap();
        assert_eq!(restored.fetch_with_proof(p).unwrap(), store.fetch_with_proof(p).unwrap());
        assert_eq!(restored.fetch_with_proof(w).unwrap_err(), DaError::Unavailable(w));
        let mut bad = dumps.clone();
        bad[0].leaves[0].data = Some(hex::encode(b"0ne"));
        assert_eq!(DaStore::restore(&bad).unwrap_err(), DaError::CorruptDump { slot_id: 0 });
    }

    #[test]
    fn pointer_text_form() {
        let p = DaPointer { slot_id: 7, leaf_index: 3 };
        assert_eq!(p.to_string(), "7:3");
        assert_eq!("7:3".parse::<DaPointer>().unwrap(), p);
        assert!("7".parse::<DaPointer>().is_err());
    }

    proptest! {
        #[test]
        fn every_leaf_proves(leaves in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..16), 1..64)) {
            let mut store = DaStore::new();
            let ptrs: Vec<_> = leaves.iter().map(|l| store.publish(l)).collect();
            let (_, root) = store.seal(0).unwrap();
            prop_assert_eq!(root, merkle_root(&leaves));
            for (p, l) in ptrs.iter().zip(&leaves) {
                let (blob, proof) = store.fetch_with_proof(*p).unwrap();
                prop_assert_eq!(&blob, l);
                prop_assert!(verify_inclusion(&proof, &root));
            }
        }

        #[test]
        fn tampering_breaks_proof(
            leaves in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..16), 2..32),
            pick in any::<prop::sample::Index>(),
            target in 0u8..3,
            bit in any::<prop::sample::Index>(),
        ) {
            let mut store = DaStore::new();
            let ptrs: Vec<_> = leaves.iter().map(|l| store.publish(l)).collect();
            let (_, root) = store.seal(0).unwrap();
            let (_, mut proof) = store.fetch_with_proof(ptrs[pick.index(ptrs.len())]).unwrap();
            let mut trusted = root;
            match target {
                0 => { let i = bit.index(proof.leaf.len() * 8); proof.leaf[i / 8] ^= 1 << (i % 8); }
                1 => { let i = bit.index(proof.path.len() * 256); proof.path[i / 256].sibling.0[(i % 256) / 8] ^= 1 << (i % 8); }
                _ => { let i = bit.index(256); trusted.0[i / 8] ^= 1 << (i % 8); }
            }
            prop_assert!(!verify_inclusion(&proof, &trusted));
        }
    }

    #[test]
    fn swapped_siblings_fail() {
        let mut store = DaStore::new();
        let ptrs: Vec<_> = (0u8..8).map(|i| store.publish(&[i])).collect();
        let (_, root) = store.seal(0).unwrap();
        let (_, mut proof) = store.fetch_with_proof(ptrs[2]).unwrap();
        proof.path.swap(0, 1);
        assert!(!verify_inclusion(&proof, &root));
    }
}
