//! Unidirectional single-hop proxy re-encryption in the style of
//! Ateniese–Fu–Green–Hohenberger, over the BLS12-381 pairing, used as a KEM.
//!
//! With generators `g1`, `g2` and `Z = e(g1, g2)`:
//!
//! - key pair: `a`, `pk = (g1^a, g2^a)`
//! - encrypt to A: pick `r`, capsule `g1^(a r)`, data key derived from `Z^r`
//! - re-encryption key A→B: `g2^(b / a)`; built from `sk_A` and `pk_B` only
//! - re-encrypt: capsule `e(g1^(a r), g2^(b/a)) = Z^(b r)` (lands in GT, so it
//!   cannot be transformed again)
//! - decrypt original with `a`: `e(capsule, g2)^(1/a)`; re-encrypted with `b`:
//!   `capsule^(1/b)`
//!
//! The payload is sealed with ChaCha20-Poly1305 under `keccak(Z^r)`, so a
//! wrong key surfaces as an authentication failure.

use std::sync::OnceLock;

use ark_bls12_381::{Bls12_381, Fr, G1Affine, G1Projective, G2Affine, G2Projective};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::{CurveGroup, Group};
use ark_ff::{Field, UniformRand, Zero};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{hash, CryptoError};

type Gt = PairingOutput<Bls12_381>;

const NONCE_LEN: usize = 12;
const G1_LEN: usize = 48;
const G2_LEN: usize = 96;

fn base_pairing() -> Gt {
    static Z: OnceLock<Gt> = OnceLock::new();
    *Z.get_or_init(|| Bls12_381::pairing(G1Projective::generator(), G2Projective::generator()))
}

fn random_nonzero<R: RngCore + CryptoRng>(rng: &mut R) -> Fr {
    loop {
        let x = Fr::rand(rng);
        if !x.is_zero() {
            return x;
        }
    }
}

#[derive(Clone)]
pub struct PreKeyPair {
    secret: Fr,
    public: PrePublicKey,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PrePublicKey {
    g1: G1Affine,
    g2: G2Affine,
}

/// Transforms ciphertexts under one key into ciphertexts for another.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ReEncryptionKey(G2Affine);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Original,
    ReEncrypted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Capsule {
    Original(G1Affine),
    ReEncrypted(Gt),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    capsule: Capsule,
    nonce: [u8; NONCE_LEN],
    body: Vec<u8>,
}

impl PreKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = random_nonzero(rng);
        let public = PrePublicKey {
            g1: (G1Projective::generator() * secret).into_affine(),
            g2: (G2Projective::generator() * secret).into_affine(),
        };
        PreKeyPair { secret, public }
    }

    pub fn public(&self) -> &PrePublicKey {
        &self.public
    }

    fn inverse(&self) -> Fr {
        self.secret.inverse().expect("secret is nonzero")
    }
}

impl std::fmt::Debug for PreKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl PrePublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(G1_LEN + G2_LEN);
        self.g1.serialize_compressed(&mut out).expect("vec write");
        self.g2.serialize_compressed(&mut out).expect("vec write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != G1_LEN + G2_LEN {
            return Err(CryptoError::Decode(format!("PRE public key must be {} bytes", G1_LEN + G2_LEN)));
        }
        let g1 = G1Affine::deserialize_compressed(&bytes[..G1_LEN]).map_err(decode_err)?;
        let g2 = G2Affine::deserialize_compressed(&bytes[G1_LEN..]).map_err(decode_err)?;
        Ok(PrePublicKey { g1, g2 })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl ReEncryptionKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(G2_LEN);
        self.0.serialize_compressed(&mut out).expect("vec write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        G2Affine::deserialize_compressed(bytes).map(ReEncryptionKey).map_err(decode_err)
    }
}

impl Ciphertext {
    pub fn level(&self) -> Level {
        match self.capsule {
            Capsule::Original(_) => Level::Original,
            Capsule::ReEncrypted(_) => Level::ReEncrypted,
        }
    }

    /// `level (1) ‖ capsule ‖ nonce (12) ‖ sealed body`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match &self.capsule {
            Capsule::Original(p) => {
                out.push(0);
                p.serialize_compressed(&mut out).expect("vec write");
            }
            Capsule::ReEncrypted(z) => {
                out.push(1);
                z.serialize_compressed(&mut out).expect("vec write");
            }
        }
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let (&tag, rest) = bytes.split_first().ok_or_else(|| CryptoError::Decode("empty ciphertext".into()))?;
        let (capsule, rest) = match tag {
            0 => {
                let mut reader = rest;
                let p = G1Affine::deserialize_compressed(&mut reader).map_err(decode_err)?;
                (Capsule::Original(p), reader)
            }
            1 => {
                let mut reader = rest;
                let z = Gt::deserialize_compressed(&mut reader).map_err(decode_err)?;
                (Capsule::ReEncrypted(z), reader)
            }
            t => return Err(CryptoError::Decode(format!("unknown ciphertext level tag {t}"))),
        };
        if rest.len() < NONCE_LEN {
            return Err(CryptoError::Decode("ciphertext truncated".into()));
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&rest[..NONCE_LEN]);
        Ok(Ciphertext { capsule, nonce, body: rest[NONCE_LEN..].to_vec() })
    }
}

fn decode_err(e: ark_serialize::SerializationError) -> CryptoError {
    CryptoError::Decode(e.to_string())
}

fn data_key(shared: &Gt) -> Key {
    let mut bytes = Vec::new();
    shared.serialize_compressed(&mut bytes).expect("vec write");
    Key::from(hash(&bytes).0)
}

pub fn pre_keygen<R: RngCore + CryptoRng>(rng: &mut R) -> PreKeyPair {
    PreKeyPair::generate(rng)
}

pub fn pre_encrypt<R: RngCore + CryptoRng>(pk: &PrePublicKey, msg: &[u8], rng: &mut R) -> Ciphertext {
    let r = random_nonzero(rng);
    let capsule = (pk.g1 * r).into_affine();
    let shared = base_pairing() * r;
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let body = ChaCha20Poly1305::new(&data_key(&shared))
        .encrypt(Nonce::from_slice(&nonce), msg)
        .expect("in-memory AEAD encryption cannot fail");
    Ciphertext { capsule: Capsule::Original(capsule), nonce, body }
}

pub fn pre_rekey(delegator: &PreKeyPair, delegatee: &PrePublicKey) -> ReEncryptionKey {
    ReEncryptionKey((delegatee.g2 * delegator.inverse()).into_affine())
}

pub fn pre_reencrypt(rk: &ReEncryptionKey, ct: &Ciphertext) -> Result<Ciphertext, CryptoError> {
    match &ct.capsule {
        Capsule::Original(c1) => Ok(Ciphertext {
            capsule: Capsule::ReEncrypted(Bls12_381::pairing(*c1, rk.0)),
            nonce: ct.nonce,
            body: ct.body.clone(),
        }),
        Capsule::ReEncrypted(_) => Err(CryptoError::SingleHopViolation),
    }
}

pub fn pre_decrypt(keys: &PreKeyPair, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let shared = match &ct.capsule {
        Capsule::Original(c1) => Bls12_381::pairing(*c1, G2Projective::generator()) * keys.inverse(),
        Capsule::ReEncrypted(z) => *z * keys.inverse(),
    };
    ChaCha20Poly1305::new(&data_key(&shared))
        .decrypt(Nonce::from_slice(&ct.nonce), ct.body.as_slice())
        .map_err(|_| CryptoError::DecryptFailure)
}
