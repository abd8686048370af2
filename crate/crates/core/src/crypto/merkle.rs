//! Sorted-leaf Merkle tree over vaccine vial IDs.
//!
//! Leaves are sorted ascending before hashing so the root depends only on the
//! set of IDs. Layer zero holds `H(id)`; each parent is `H(left ‖ right)`. An
//! unpaired node at the end of a layer is paired with a copy of itself.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{hash, hash_concat, CryptoError, Digest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleTree {
    leaves: Vec<Vec<u8>>,
    levels: Vec<Vec<Digest>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Sibling sits to the left: parent = H(sibling ‖ node).
    Left,
    /// Sibling sits to the right: parent = H(node ‖ sibling).
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub side: Side,
    pub sibling: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    #[serde(with = "hex_bytes")]
    pub leaf: Vec<u8>,
    pub path: Vec<ProofStep>,
    pub claimed_root: Digest,
}

impl MerkleTree {
    pub fn build<I, T>(vial_ids: I) -> Result<Self, CryptoError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let mut leaves: Vec<Vec<u8>> = vial_ids.into_iter().map(|v| v.as_ref().to_vec()).collect();
        if leaves.is_empty() {
            return Err(CryptoError::InvalidArgument("vial set must not be empty"));
        }
        leaves.sort();
        if let Some(w) = leaves.windows(2).find(|w| w[0] == w[1]) {
            return Err(CryptoError::DuplicateLeaf(hex::encode(&w[0])));
        }

        let mut levels = vec![leaves.iter().map(|l| hash(l)).collect::<Vec<_>>()];
        while levels.last().is_some_and(|l| l.len() > 1) {
            let below = levels.last().unwrap();
            let above = below
                .chunks(2)
                .map(|pair| {
                    let right = pair.get(1).unwrap_or(&pair[0]);
                    hash_concat([pair[0].as_bytes(), right.as_bytes()])
                })
                .collect();
            levels.push(above);
        }
        Ok(MerkleTree { leaves, levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("tree has at least one level")[0]
    }

    /// Leaves in ascending order.
    pub fn leaves(&self) -> &[Vec<u8>] {
        &self.leaves
    }

    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn contains(&self, vial_id: &[u8]) -> bool {
        self.index_of(vial_id).is_some()
    }

    fn index_of(&self, vial_id: &[u8]) -> Option<usize> {
        self.leaves.binary_search_by(|l| l.as_slice().cmp(vial_id)).ok()
    }

    pub fn prove(&self, vial_id: &[u8]) -> Result<MerkleProof, CryptoError> {
        let mut index = self.index_of(vial_id).ok_or_else(|| CryptoError::NotALeaf(hex::encode(vial_id)))?;
        let mut path = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            let step = if index % 2 == 0 {
                ProofStep { side: Side::Right, sibling: *level.get(index + 1).unwrap_or(&level[index]) }
            } else {
                ProofStep { side: Side::Left, sibling: level[index - 1] }
            };
            path.push(step);
            index /= 2;
        }
        Ok(MerkleProof { leaf: vial_id.to_vec(), path, claimed_root: self.root() })
    }
}

impl MerkleProof {
    /// Root reached by folding the leaf hash up the path.
    pub fn fold(&self) -> Digest {
        self.path.iter().fold(hash(&self.leaf), |node, step| match step.side {
            Side::Left => hash_concat([step.sibling.as_bytes(), node.as_bytes()]),
            Side::Right => hash_concat([node.as_bytes(), step.sibling.as_bytes()]),
        })
    }

    /// Commitment to the proof: hash of the sibling digests concatenated
    /// bottom-up.
    pub fn commitment(&self) -> Digest {
        hash_concat(self.path.iter().map(|s| s.sibling))
    }

    pub fn siblings(&self) -> Vec<Digest> {
        self.path.iter().map(|s| s.sibling).collect()
    }

    /// Line format: `leaf <hex>`, one `L|R <hex>` line per step, `root <hex>`.
    pub fn to_lines(&self) -> String {
        let mut out = format!("leaf {}\n", hex::encode(&self.leaf));
        for step in &self.path {
            let tag = match step.side {
                Side::Left => 'L',
                Side::Right => 'R',
            };
            out.push_str(&format!("{tag} {}\n", step.sibling));
        }
        out.push_str(&format!("root {}\n", self.claimed_root));
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, CryptoError> {
        let bad = |line: &str| CryptoError::Decode(format!("bad proof line: {line:?}"));
        let mut leaf = None;
        let mut path = Vec::new();
        let mut root = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (tag, value) = line.split_once(' ').ok_or_else(|| bad(line))?;
            match tag {
                "leaf" => leaf = Some(hex::decode(value).map_err(|_| bad(line))?),
                "L" => path.push(ProofStep { side: Side::Left, sibling: Digest::from_hex(value)? }),
                "R" => path.push(ProofStep { side: Side::Right, sibling: Digest::from_hex(value)? }),
                "root" => root = Some(Digest::from_hex(value)?),
                _ => return Err(bad(line)),
            }
        }
        Ok(MerkleProof {
            leaf: leaf.ok_or_else(|| CryptoError::Decode("missing leaf line".into()))?,
            path,
            claimed_root: root.ok_or_else(|| CryptoError::Decode("missing root line".into()))?,
        })
    }
}

impl fmt::Display for MerkleProof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_lines())
    }
}

pub fn merkle_build<I, T>(vial_ids: I) -> Result<MerkleTree, CryptoError>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    MerkleTree::build(vial_ids)
}

pub fn merkle_prove(tree: &MerkleTree, vial_id: &[u8]) -> Result<MerkleProof, CryptoError> {
    tree.prove(vial_id)
}

/// True iff the proof claims `root` and folding its leaf up the path
/// reproduces `root`.
pub fn merkle_verify(proof: &MerkleProof, root: &Digest) -> bool {
    proof.claimed_root == *root && proof.fold() == *root
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_ids() -> Vec<&'static str> {
        vec!["v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8"]
    }

    fn h(s: &str) -> Digest {
        hash(s.as_bytes())
    }

    fn node(a: Digest, b: Digest) -> Digest {
        hash_concat([a, b])
    }

    #[test]
    fn single_leaf_root_is_leaf_hash() {
        let t = MerkleTree::build(["v1"]).unwrap();
        assert_eq!(t.root(), h("v1"));
        let p = t.prove(b"v1").unwrap();
        assert!(p.path.is_empty());
        assert!(merkle_verify(&p, &t.root()));
    }

    #[test]
    fn eight_leaf_tree_has_the_figure_nodes() {
        let t = MerkleTree::build(fig3_ids()).unwrap();
        let h12 = node(h("v1"), h("v2"));
        let h34 = node(h("v3"), h("v4"));
        let h5678 = node(node(h("v5"), h("v6")), node(h("v7"), h("v8")));
        assert_eq!(t.levels()[1][0], h12);
        assert_eq!(t.levels()[2][1], h5678);
        assert_eq!(t.root(), node(node(h12, h34), h5678));
    }

    #[test]
    fn proof_for_v4_is_h3_h12_h5678() {
        let t = MerkleTree::build(fig3_ids()).unwrap();
        let p = t.prove(b"v4").unwrap();
        let h12 = node(h("v1"), h("v2"));
        let h5678 = node(node(h("v5"), h("v6")), node(h("v7"), h("v8")));
        assert_eq!(p.siblings(), vec![h("v3"), h12, h5678]);
        assert_eq!(p.path.iter().map(|s| s.side).collect::<Vec<_>>(), vec![Side::Left, Side::Left, Side::Right]);
        let expected_commit = hash_concat([h("v3"), h12, h5678]);
        assert_eq!(p.commitment(), expected_commit);
        assert!(merkle_verify(&p, &t.root()));
    }

    #[test]
    fn permutations_share_a_root() {
        let base = MerkleTree::build(fig3_ids()).unwrap().root();
        let mut ids = fig3_ids();
        for i in 0..40 {
            ids.rotate_left(i % 7 + 1);
            ids.swap(i % 8, (i * 3) % 8);
            assert_eq!(MerkleTree::build(&ids).unwrap().root(), base);
        }
    }

    #[test]
    fn rejects_empty_duplicates_and_non_members() {
        assert!(matches!(MerkleTree::build(Vec::<&str>::new()), Err(CryptoError::InvalidArgument(_))));
        assert!(matches!(MerkleTree::build(["a", "b", "a"]), Err(CryptoError::DuplicateLeaf(_))));
        let t = MerkleTree::build(fig3_ids()).unwrap();
        assert!(matches!(t.prove(b"v9"), Err(CryptoError::NotALeaf(_))));
    }

    #[test]
    fn odd_layers_duplicate_the_last_node() {
        let t = MerkleTree::build(["a", "b", "c"]).unwrap();
        let expected = node(node(h("a"), h("b")), node(h("c"), h("c")));
        assert_eq!(t.root(), expected);
        let p = t.prove(b"c").unwrap();
        assert_eq!(p.siblings(), vec![h("c"), node(h("a"), h("b"))]);
        assert!(merkle_verify(&p, &t.root()));
    }

    #[test]
    fn path_length_is_ceil_log2() {
        for n in 1..=33usize {
            let ids: Vec<String> = (0..n).map(|i| format!("vial-{i:03}")).collect();
            let t = MerkleTree::build(&ids).unwrap();
            let expected = (n as f64).log2().ceil() as usize;
            for id in &ids {
                assert_eq!(t.prove(id.as_bytes()).unwrap().path.len(), expected);
            }
        }
    }

    #[test]
    fn corrupted_sibling_or_foreign_root_fails() {
        let t = MerkleTree::build(fig3_ids()).unwrap();
        let mut p = t.prove(b"v6").unwrap();
        let other = MerkleTree::build(["v1", "v2", "v3"]).unwrap();
        assert!(!merkle_verify(&p, &other.root()));
        p.path[1].sibling.0[0] ^= 0x80;
        assert!(!merkle_verify(&p, &t.root()));
    }

    #[test]
    fn line_format_round_trips() {
        let t = MerkleTree::build(fig3_ids()).unwrap();
        let p = t.prove(b"v5").unwrap();
        assert_eq!(MerkleProof::from_lines(&p.to_lines()).unwrap(), p);
        assert!(MerkleProof::from_lines("leaf zz\n").is_err());
        assert!(MerkleProof::from_lines("X 00\n").is_err());
    }
}
