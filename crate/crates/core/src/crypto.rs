//! Hashing, the two signature schemes, the simulated attestation platform and
//! sealed-box encryption to an enclave key.
//!
//! Both schemes are Ed25519 underneath. Every signed message is prefixed with
//! a per-scheme domain tag, so a signature produced under one scheme never
//! verifies under the other even for identical key bytes.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader};
use crate::{impl_codec, impl_codec_unit_enum};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key scheme {key:?} does not match signature scheme {sig:?}")]
    SchemeMismatch { key: Scheme, sig: Scheme },
    #[error("quote was issued by an unknown platform key")]
    UnknownPlatform,
    #[error("encryption requires a TEE-scheme recipient key")]
    NotAnEncryptionKey,
    #[error("ciphertext failed to authenticate")]
    Decryption,
}

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (7 - (i % 8))) & 1 == 1
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = v
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

impl Encode for Digest {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
    }
}

impl Decode for Digest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Digest(<[u8; 32]>::decode_from(r)?))
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of `parts` under a domain tag. The tag is length-prefixed so no two
/// (tag, payload) pairs collide by concatenation.
pub fn hash_tagged(tag: &[u8], parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    h.update([tag.len() as u8]);
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Protocol objects that are hashed or signed carry a domain tag.
pub trait Tagged: Encode {
    const TAG: &'static str;

    fn digest(&self) -> Digest {
        hash_tagged(Self::TAG.as_bytes(), &[&self.encode()])
    }

    fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.push(Self::TAG.len() as u8);
        out.extend_from_slice(Self::TAG.as_bytes());
        self.encode_to(&mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Keys whose signatures are checked by public-chain contracts.
    Pb,
    /// Keys bound to the enclave by attestation.
    Tee,
}
impl_codec_unit_enum!(Scheme, "scheme" { Pb = 0, Tee = 1 });

impl Scheme {
    fn domain(self) -> &'static [u8] {
        match self {
            Scheme::Pb => b"sig/pb/v1",
            Scheme::Tee => b"sig/tee/v1",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    pub scheme: Scheme,
    pub bytes: [u8; 32],
}
impl_codec!(PublicKey { scheme, bytes });

impl PublicKey {
    /// Verifies `sig` over `msg`. A scheme mismatch is an error rather than a
    /// plain `false` so callers mixing up key roles notice.
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
        if self.scheme != sig.scheme {
            return Err(CryptoError::SchemeMismatch {
                key: self.scheme,
                sig: sig.scheme,
            });
        }
        Ok(self.verify_raw(msg, sig))
    }

    /// Like [`verify`](Self::verify) but folds every failure into `false`.
    pub fn verifies(&self, msg: &[u8], sig: &Signature) -> bool {
        matches!(self.verify(msg, sig), Ok(true))
    }

    fn verify_raw(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.bytes) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.bytes);
        vk.verify(&domain_message(self.scheme, msg), &sig).is_ok()
    }

    pub fn short(&self) -> String {
        hex::encode(&self.bytes[..4])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}", self.scheme, self.short())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.bytes))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub scheme: Scheme,
    pub bytes: [u8; 64],
}
impl_codec!(Signature { scheme, bytes });

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Sig({:?}:{})",
            self.scheme,
            hex::encode(&self.bytes[..4])
        )
    }
}

fn domain_message(scheme: Scheme, msg: &[u8]) -> Vec<u8> {
    let d = scheme.domain();
    let mut out = Vec::with_capacity(d.len() + msg.len());
    out.extend_from_slice(d);
    out.extend_from_slice(msg);
    out
}

/// A signing key tagged with its scheme. The secret never leaves the value.
#[derive(Clone)]
pub struct KeyPair {
    scheme: Scheme,
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?})", self.public())
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(scheme: Scheme, rng: &mut R) -> Self {
        KeyPair {
            scheme,
            signing: SigningKey::generate(rng),
        }
    }

    /// Deterministic key from a numeric seed.
    pub fn from_seed(scheme: Scheme, seed: u64) -> Self {
        Self::generate(scheme, &mut ChaCha20Rng::seed_from_u64(seed))
    }

    /// Deterministic key from a seed and a role label, used by scenarios so
    /// every actor gets a distinct but reproducible key.
    pub fn derive(scheme: Scheme, seed: u64, label: &str) -> Self {
        let d = hash_tagged(b"keygen", &[&seed.to_be_bytes(), label.as_bytes()]);
        KeyPair {
            scheme,
            signing: SigningKey::from_bytes(&d.0),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            scheme: self.scheme,
            bytes: self.signing.verifying_key().to_bytes(),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        let sig = self.signing.sign(&domain_message(self.scheme, msg));
        Signature {
            scheme: self.scheme,
            bytes: sig.to_bytes(),
        }
    }

    /// Opens a box sealed to this (TEE-scheme) key, returning the plaintext
    /// and the session key the sender holds for decrypting our reply.
    pub fn open(&self, sealed: &SealedBox) -> Result<(Vec<u8>, SessionKey), CryptoError> {
        if self.scheme != Scheme::Tee {
            return Err(CryptoError::NotAnEncryptionKey);
        }
        let secret = x25519_dalek::StaticSecret::from(self.signing.to_scalar_bytes());
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(sealed.ephemeral));
        let session = SessionKey::derive(shared.as_bytes(), &sealed.ephemeral, &self.public());
        let plain = session.decrypt(REQUEST_NONCE_DOMAIN, &sealed.nonce, &sealed.ciphertext)?;
        Ok((plain, session))
    }
}

const REQUEST_NONCE_DOMAIN: u8 = 0x51;
const REPLY_NONCE_DOMAIN: u8 = 0x52;

/// Ciphertext addressed to an enclave's TEE key by ephemeral X25519 agreement.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SealedBox {
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 12],
    pub ciphertext: Vec<u8>,
}
impl_codec!(SealedBox {
    ephemeral,
    nonce,
    ciphertext
});

/// Symmetric key shared by a client and an enclave for one censored request.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; 32]);

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

impl SessionKey {
    fn derive(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &PublicKey) -> Self {
        SessionKey(hash_tagged(b"seal/session", &[shared, ephemeral, &recipient.bytes]).0)
    }

    fn cipher(&self, domain: u8) -> ChaCha20Poly1305 {
        let k = hash_tagged(b"seal/key", &[&[domain], &self.0]);
        ChaCha20Poly1305::new(Key::from_slice(&k.0))
    }

    fn decrypt(&self, domain: u8, nonce: &[u8; 12], ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.cipher(domain)
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| CryptoError::Decryption)
    }

    /// Encrypts the enclave's reply. Each session carries exactly one reply,
    /// so a fixed nonce under a reply-only key is safe.
    pub fn seal_reply(&self, plaintext: &[u8]) -> Vec<u8> {
        self.cipher(REPLY_NONCE_DOMAIN)
            .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
            .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
    }

    pub fn open_reply(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.decrypt(REPLY_NONCE_DOMAIN, &[0u8; 12], ciphertext)
    }
}

/// Seals `plaintext` to a TEE-scheme public key.
pub fn seal_to<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<(SealedBox, SessionKey), CryptoError> {
    if recipient.scheme != Scheme::Tee {
        return Err(CryptoError::NotAnEncryptionKey);
    }
    let vk =
        VerifyingKey::from_bytes(&recipient.bytes).map_err(|_| CryptoError::NotAnEncryptionKey)?;
    let their = x25519_dalek::PublicKey::from(vk.to_montgomery().to_bytes());
    let eph = x25519_dalek::StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = x25519_dalek::PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&their);
    let session = SessionKey::derive(shared.as_bytes(), &eph_pub, recipient);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let ciphertext = session
        .cipher(REQUEST_NONCE_DOMAIN)
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    Ok((
        SealedBox {
            ephemeral: eph_pub,
            nonce,
            ciphertext,
        },
        session,
    ))
}

/// Signed statement that an enclave with `measurement` holds the given keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationQuote {
    pub measurement: Digest,
    pub enclave_pk: PublicKey,
    pub enclave_pk_pb: PublicKey,
    pub platform_id: Digest,
    pub platform_sig: Signature,
}
impl_codec!(AttestationQuote {
    measurement,
    enclave_pk,
    enclave_pk_pb,
    platform_id,
    platform_sig
});

#[derive(Clone, Debug, PartialEq, Eq)]
struct QuoteBody {
    measurement: Digest,
    enclave_pk: PublicKey,
    enclave_pk_pb: PublicKey,
    platform_id: Digest,
}
impl_codec!(QuoteBody {
    measurement,
    enclave_pk,
    enclave_pk_pb,
    platform_id
});
impl Tagged for QuoteBody {
    const TAG: &'static str = "attestation-quote";
}

impl AttestationQuote {
    fn body(&self) -> QuoteBody {
        QuoteBody {
            measurement: self.measurement,
            enclave_pk: self.enclave_pk,
            enclave_pk_pb: self.enclave_pk_pb,
            platform_id: self.platform_id,
        }
    }
}

/// The simulated hardware vendor whose key signs enclave quotes.
#[derive(Clone, Debug)]
pub struct Platform {
    key: KeyPair,
}

const PLATFORM_SEED: u64 = 0x5347_5853_494d; // fixed well-known simulated key

impl Platform {
    pub fn simulated() -> Self {
        Platform {
            key: KeyPair::from_seed(Scheme::Tee, PLATFORM_SEED),
        }
    }

    /// A platform with another key, standing in for an unrecognised vendor.
    pub fn untrusted(seed: u64) -> Self {
        Platform {
            key: KeyPair::from_seed(Scheme::Tee, seed),
        }
    }

    pub fn id(&self) -> Digest {
        platform_id(&self.key.public())
    }

    pub fn attest(
        &self,
        measurement: Digest,
        enclave_pk: PublicKey,
        enclave_pk_pb: PublicKey,
    ) -> AttestationQuote {
        let body = QuoteBody {
            measurement,
            enclave_pk,
            enclave_pk_pb,
            platform_id: self.id(),
        };
        let platform_sig = self.key.sign(&body.signing_bytes());
        AttestationQuote {
            measurement,
            enclave_pk,
            enclave_pk_pb,
            platform_id: body.platform_id,
            platform_sig,
        }
    }

    pub fn verifier(&self) -> QuoteVerifier {
        QuoteVerifier {
            platform_pk: self.key.public(),
        }
    }
}

fn platform_id(pk: &PublicKey) -> Digest {
    hash_tagged(b"platform-id", &[&pk.bytes])
}

/// Relying-party side of attestation: knows only the platform public key.
#[derive(Clone, Debug)]
pub struct QuoteVerifier {
    platform_pk: PublicKey,
}

impl QuoteVerifier {
    pub fn simulated() -> Self {
        Platform::simulated().verifier()
    }

    pub fn verify_quote(
        &self,
        quote: &AttestationQuote,
        expected_measurement: &Digest,
    ) -> Result<bool, CryptoError> {
        if quote.platform_id != platform_id(&self.platform_pk) {
            return Err(CryptoError::UnknownPlatform);
        }
        Ok(quote.measurement == *expected_measurement
            && self
                .platform_pk
                .verifies(&quote.body().signing_bytes(), &quote.platform_sig))
    }
}
