//! Ed25519 signatures. Signing is deterministic, so replayed scenarios
//! produce identical signatures and event logs.

use ed25519_dalek::{Signer as _, Verifier as _};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CryptoError;

#[derive(Clone)]
pub struct SigningKeyPair {
    secret: ed25519_dalek::SigningKey,
    public: PublicKey,
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        let secret = ed25519_dalek::SigningKey::from_bytes(&seed);
        let public = PublicKey(secret.verifying_key());
        SigningKeyPair { secret, public }
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.secret.sign(msg))
    }
}

impl std::fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PublicKey(ed25519_dalek::VerifyingKey);

impl PublicKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Decode(format!("public key must be 32 bytes, got {}", bytes.len())))?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map(PublicKey)
            .map_err(|e| CryptoError::Decode(e.to_string()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        self.0.verify(msg, &sig.0).is_ok()
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        PublicKey::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Signature(ed25519_dalek::Signature);

impl Signature {
    pub const LEN: usize = 64;

    pub fn to_bytes(&self) -> [u8; 64] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        ed25519_dalek::Signature::from_slice(bytes)
            .map(Signature)
            .map_err(|e| CryptoError::Decode(e.to_string()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        Signature::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

pub fn sign(keys: &SigningKeyPair, msg: &[u8]) -> Signature {
    keys.sign(msg)
}

pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    pk.verify(msg, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_wrong_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = SigningKeyPair::generate(&mut rng);
        let b = SigningKeyPair::generate(&mut rng);
        let sig = sign(&a, b"md_vp");
        assert!(verify(a.public(), b"md_vp", &sig));
        assert!(!verify(b.public(), b"md_vp", &sig));
    }

    #[test]
    fn signing_is_deterministic() {
        let a = SigningKeyPair::from_seed([9; 32]);
        assert_eq!(a.sign(b"m"), a.sign(b"m"));
    }

    #[test]
    fn any_message_bit_flip_breaks_verification() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = SigningKeyPair::generate(&mut rng);
        let msg: Vec<u8> = (0..48).map(|_| rng.gen()).collect();
        let sig = keys.sign(&msg);
        for _ in 0..1_000 {
            let mut flipped = msg.clone();
            let bit = rng.gen_range(0..msg.len() * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert!(!keys.public().verify(&flipped, &sig));
        }
    }

    #[test]
    fn signature_bit_flips_never_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let keys = SigningKeyPair::generate(&mut rng);
        let sig = keys.sign(b"payload").to_bytes();
        for bit in 0..Signature::LEN * 8 {
            let mut bad = sig;
            bad[bit / 8] ^= 1 << (bit % 8);
            if let Ok(s) = Signature::from_bytes(&bad) {
                assert!(!keys.public().verify(b"payload", &s));
            }
        }
    }

    #[test]
    fn random_signatures_do_not_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let keys = SigningKeyPair::generate(&mut rng);
        let mut accepted = 0;
        for _ in 0..10_000 {
            let mut bytes = [0u8; 64];
            rng.fill_bytes(&mut bytes);
            if let Ok(s) = Signature::from_bytes(&bytes) {
                accepted += keys.public().verify(b"target", &s) as u32;
            }
        }
        assert_eq!(accepted, 0);
    }

    #[test]
    fn malformed_encodings_are_decode_errors() {
        assert!(matches!(Signature::from_bytes(&[0u8; 10]), Err(CryptoError::Decode(_))));
        assert!(matches!(PublicKey::from_bytes(&[1u8; 31]), Err(CryptoError::Decode(_))));
    }
}
