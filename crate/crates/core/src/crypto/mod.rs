//! Hashing, commitments, signatures, Merkle proofs and proxy re-encryption.
//!
//! Everything here is a pure function of its inputs; randomness comes in
//! through an explicit `rng` argument.

mod hash;
pub mod merkle;
pub mod pre;
pub mod sign;

use thiserror::Error;

pub use hash::{commit, hash, hash_concat, verify_commitment, Digest};
pub use merkle::{merkle_build, merkle_prove, merkle_verify, MerkleProof, MerkleTree, ProofStep, Side};
pub use pre::{
    pre_decrypt, pre_encrypt, pre_keygen, pre_reencrypt, pre_rekey, Ciphertext, Level, PreKeyPair, PrePublicKey,
    ReEncryptionKey,
};
pub use sign::{sign, verify, PublicKey, Signature, SigningKeyPair};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("duplicate leaf {0}")]
    DuplicateLeaf(String),
    #[error("{0} is not a leaf of this tree")]
    NotALeaf(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("ciphertext was already re-encrypted")]
    SingleHopViolation,
    #[error("decryption failed")]
    DecryptFailure,
}
