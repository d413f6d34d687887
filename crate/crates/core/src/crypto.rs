//! Symmetric building blocks.
//!
//! | role           | primitive                      |
//! |----------------|--------------------------------|
//! | hash           | SHA-256                        |
//! | key derivation | HKDF-SHA256, empty salt, info = context label |
//! | envelope       | ChaCha20-Poly1305, random 12-byte nonce, empty AAD |
//! | token PRF      | HMAC-SHA256(seed, epoch as u64 big-endian) |
//!
//! The identifiers in [`PRIMITIVES`] are written into the directory header so a
//! store built with different primitives is refused on load.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const HASH_ID: &str = "sha256";
pub const KDF_ID: &str = "hkdf-sha256";
pub const AEAD_ID: &str = "chacha20poly1305";
pub const PRF_ID: &str = "hmac-sha256";

/// `(field name, identifier)` pairs recorded in store headers.
pub const PRIMITIVES: [(&str, &str); 4] = [
    ("hash", HASH_ID),
    ("kdf", KDF_ID),
    ("aead", AEAD_ID),
    ("prf", PRF_ID),
];

pub const CTX_OUTER: &str = "laso/outer";
pub const CTX_INNER: &str = "laso/inner";
pub const CTX_BEACON_PAYLOAD: &str = "laso/beacon-payload";

pub const ENVELOPE_NONCE_LEN: usize = 12;
pub const ENVELOPE_TAG_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    /// Wrong key or corrupted bytes; the two are deliberately not told apart.
    #[error("authentication failed")]
    AuthFail,
    #[error("key derivation context must be non-empty")]
    EmptyContext,
    #[error("envelope truncated: need at least {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("epoch period must be positive")]
    ZeroPeriod,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over fields that each carry a 4-byte big-endian length prefix.
pub fn hash_fields(fields: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for f in fields {
        h.update((f.len() as u32).to_be_bytes());
        h.update(f);
    }
    Digest(h.finalize().into())
}

/// What a password turns into before it is stored or used: `hash(password)`.
pub fn password_digest(password: &[u8]) -> Digest {
    hash(password)
}

/// Cipher key bound to the context label it was derived for.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    bytes: [u8; 32],
    context: String,
}

impl SymmetricKey {
    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.bytes
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("context", &self.context)
            .finish_non_exhaustive()
    }
}

pub fn derive_key(secret: &[u8], context: &str) -> Result<SymmetricKey, CryptoError> {
    if context.is_empty() {
        return Err(CryptoError::EmptyContext);
    }
    let hk = Hkdf::<Sha256>::new(None, secret);
    let mut bytes = [0u8; 32];
    hk.expand(context.as_bytes(), &mut bytes)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(SymmetricKey {
        bytes,
        context: context.to_string(),
    })
}

/// AEAD output. Wire form: `nonce(12) || u32 len || ciphertext || tag(16)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub nonce: [u8; ENVELOPE_NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; ENVELOPE_TAG_LEN],
}

impl Envelope {
    pub fn encoded_len(&self) -> usize {
        ENVELOPE_NONCE_LEN + 4 + self.ciphertext.len() + ENVELOPE_TAG_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Parses exactly one envelope occupying all of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let fixed = ENVELOPE_NONCE_LEN + 4 + ENVELOPE_TAG_LEN;
        if bytes.len() < fixed {
            return Err(CryptoError::Truncated {
                need: fixed,
                have: bytes.len(),
            });
        }
        let mut nonce = [0u8; ENVELOPE_NONCE_LEN];
        nonce.copy_from_slice(&bytes[..ENVELOPE_NONCE_LEN]);
        let len_bytes: [u8; 4] = bytes[ENVELOPE_NONCE_LEN..ENVELOPE_NONCE_LEN + 4]
            .try_into()
            .unwrap();
        let ct_len = u32::from_be_bytes(len_bytes) as usize;
        let need = fixed + ct_len;
        if bytes.len() != need {
            return Err(CryptoError::Truncated {
                need,
                have: bytes.len(),
            });
        }
        let start = ENVELOPE_NONCE_LEN + 4;
        let ciphertext = bytes[start..start + ct_len].to_vec();
        let mut tag = [0u8; ENVELOPE_TAG_LEN];
        tag.copy_from_slice(&bytes[start + ct_len..]);
        Ok(Self {
            nonce,
            ciphertext,
            tag,
        })
    }
}

pub fn seal<R: RngCore + CryptoRng + ?Sized>(
    key: &SymmetricKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Envelope {
    let mut nonce = [0u8; ENVELOPE_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.bytes));
    let mut sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let tag_bytes = sealed.split_off(sealed.len() - ENVELOPE_TAG_LEN);
    let mut tag = [0u8; ENVELOPE_TAG_LEN];
    tag.copy_from_slice(&tag_bytes);
    Envelope {
        nonce,
        ciphertext: sealed,
        tag,
    }
}

pub fn open(key: &SymmetricKey, envelope: &Envelope) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.bytes));
    let mut joined = Vec::with_capacity(envelope.ciphertext.len() + ENVELOPE_TAG_LEN);
    joined.extend_from_slice(&envelope.ciphertext);
    joined.extend_from_slice(&envelope.tag);
    cipher
        .decrypt(Nonce::from_slice(&envelope.nonce), joined.as_slice())
        .map_err(|_| CryptoError::AuthFail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedOwner {
    Beacon,
    User,
}

/// Secret input of the token authenticator. Debug output never shows the bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenSeed {
    bytes: [u8; 32],
    owner: SeedOwner,
}

impl TokenSeed {
    pub fn new(bytes: [u8; 32], owner: SeedOwner) -> Self {
        Self { bytes, owner }
    }

    pub fn random<R: RngCore + CryptoRng + ?Sized>(owner: SeedOwner, rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self { bytes, owner }
    }

    pub fn owner(&self) -> SeedOwner {
        self.owner
    }

    /// Raw seed bytes, for persistence in the directory and provisioning files.
    pub fn expose_secret(&self) -> &[u8; 32] {
        &self.bytes
    }
}

impl fmt::Debug for TokenSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenSeed")
            .field("owner", &self.owner)
            .finish_non_exhaustive()
    }
}

/// Per-epoch value of the token authenticator. Used for both beacon nonces
/// and c-nonces; only the seed differs.
pub fn token_nonce(seed: &TokenSeed, epoch: u64) -> Digest {
    let mut mac =
        <Hmac<Sha256> as Mac>::new_from_slice(&seed.bytes).expect("HMAC accepts any key length");
    mac.update(&epoch.to_be_bytes());
    Digest(mac.finalize().into_bytes().into())
}

/// Where an [`EpochClock`] gets its time, in whole seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeSource {
    System,
    Manual(u64),
}

impl TimeSource {
    pub fn now(&self) -> u64 {
        match self {
            TimeSource::System => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            TimeSource::Manual(t) => *t,
        }
    }
}

/// `epoch(t) = floor(t / period)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochClock {
    period_seconds: u64,
    source: TimeSource,
}

impl EpochClock {
    pub fn new(period_seconds: u64, source: TimeSource) -> Result<Self, CryptoError> {
        if period_seconds == 0 {
            return Err(CryptoError::ZeroPeriod);
        }
        Ok(Self {
            period_seconds,
            source,
        })
    }

    pub fn manual(period_seconds: u64, now: u64) -> Result<Self, CryptoError> {
        Self::new(period_seconds, TimeSource::Manual(now))
    }

    pub fn period_seconds(&self) -> u64 {
        self.period_seconds
    }

    pub fn now(&self) -> u64 {
        self.source.now()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch_at(self.now())
    }

    pub fn epoch_at(&self, t: u64) -> u64 {
        t / self.period_seconds
    }

    /// Moves a manual clock; switches a system clock to manual.
    pub fn set_time(&mut self, t: u64) {
        self.source = TimeSource::Manual(t);
    }
}
