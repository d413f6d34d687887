//! Beacon broadcasts, location sign-ons and backend verification.
//!
//! Wire layouts (big-endian integers, `u32` length prefixes, envelopes in the
//! self-delimiting form of [`Envelope::to_bytes`]):
//!
//! ```text
//! BeaconBroadcast  "LASO-B" ver:u8 beacon_id:16 epoch:u64 policy_text:lp abe_ct:lp payload:envelope
//! LocationSignOn   "LASO-S" ver:u8 beacon_id:16 epoch_hint:u64 outer:envelope
//!
//! payload  = seal(derive_key(Z, "laso/beacon-payload"), beacon_nonce[32])
//! outer    = seal(derive_key(beacon_nonce, "laso/outer"), username:lp || inner:lp)
//! inner    = seal(derive_key(c_nonce, "laso/inner"), h[32])
//! h        = SHA-256(lp(beacon_nonce) || lp(password_digest))
//! ```

use std::collections::BTreeMap;
use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::abe::{decapsulate, encapsulate, AbeCiphertext, AbeError, AttributeKey, PublicParams};
use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{
    derive_key, hash, hash_fields, open, seal, token_nonce, CryptoError, Digest, Envelope,
    EpochClock, TokenSeed, CTX_BEACON_PAYLOAD, CTX_INNER, CTX_OUTER,
};
use crate::directory::{validate_username, BeaconId, BeaconRecord, Directory, LocationEntry};

pub const BROADCAST_MAGIC: &str = "LASO-B";
pub const SIGN_ON_MAGIC: &str = "LASO-S";
pub const WIRE_VERSION: u8 = 1;

pub const DEFAULT_BEACON_PERIOD: u64 = 60;
pub const DEFAULT_CNONCE_PERIOD: u64 = 30;
pub const DEFAULT_WINDOW: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(#[from] CodecError),
    #[error("not authorized: attributes do not satisfy the broadcast policy")]
    NotAuthorized,
    #[error("authentication failed")]
    AuthFail,
    #[error("beacon {0} has an invalid policy: {1}")]
    BeaconPolicy(BeaconId, String),
    #[error(transparent)]
    Abe(AbeError),
    #[error("invalid username {0:?}")]
    InvalidUsername(String),
}

impl From<AbeError> for ProtocolError {
    fn from(e: AbeError) -> Self {
        match e {
            AbeError::NotAuthorized => ProtocolError::NotAuthorized,
            AbeError::Codec(c) => ProtocolError::Malformed(c),
            other => ProtocolError::Abe(other),
        }
    }
}

fn read_envelope(r: &mut Reader<'_>, field: &'static str) -> Result<Envelope, CodecError> {
    let nonce = r.array::<12>(field)?;
    let len = r.u32(field)? as usize;
    let ciphertext = r.raw(field, len)?.to_vec();
    let tag = r.array::<16>(field)?;
    Ok(Envelope {
        nonce,
        ciphertext,
        tag,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconBroadcast {
    pub beacon_id: BeaconId,
    pub epoch: u64,
    pub policy_text: String,
    pub abe_ct: AbeCiphertext,
    pub payload: Envelope,
}

impl BeaconBroadcast {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .raw(BROADCAST_MAGIC.as_bytes())
            .u8(WIRE_VERSION)
            .raw(&self.beacon_id.0)
            .u64(self.epoch)
            .str(&self.policy_text)
            .bytes(&self.abe_ct.to_bytes())
            .raw(&self.payload.to_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        r.magic(BROADCAST_MAGIC)?;
        r.version(WIRE_VERSION)?;
        let beacon_id = BeaconId(r.array("beacon_id")?);
        let epoch = r.u64("epoch")?;
        let policy_at = r.offset();
        let policy_text = r.str("policy_text")?.to_string();
        let ct_at = r.offset();
        let ct_bytes = r.bytes("abe_ct")?;
        let payload = read_envelope(&mut r, "payload")?;
        r.finish()?;

        crate::policy::parse_policy(&policy_text)
            .map_err(|e| r.invalid("policy_text", policy_at, e.to_string()))?;
        let abe_ct = AbeCiphertext::from_bytes(ct_bytes)
            .map_err(|e| r.invalid("abe_ct", ct_at, e.to_string()))?;
        if abe_ct.policy_text != policy_text {
            return Err(r
                .invalid("abe_ct", ct_at, "embedded policy differs from policy_text")
                .into());
        }
        Ok(Self {
            beacon_id,
            epoch,
            policy_text,
            abe_ct,
            payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationSignOn {
    pub beacon_id: BeaconId,
    pub epoch_hint: u64,
    pub outer: Envelope,
}

impl LocationSignOn {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .raw(SIGN_ON_MAGIC.as_bytes())
            .u8(WIRE_VERSION)
            .raw(&self.beacon_id.0)
            .u64(self.epoch_hint)
            .raw(&self.outer.to_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        r.magic(SIGN_ON_MAGIC)?;
        r.version(WIRE_VERSION)?;
        let beacon_id = BeaconId(r.array("beacon_id")?);
        let epoch_hint = r.u64("epoch_hint")?;
        let outer = read_envelope(&mut r, "outer")?;
        r.finish()?;
        Ok(Self {
            beacon_id,
            epoch_hint,
            outer,
        })
    }
}

/// Beacon side: nonce for `epoch`, encapsulated under the beacon's current policy.
pub fn build_broadcast<R: RngCore + CryptoRng + ?Sized>(
    beacon: &BeaconRecord,
    pp: &PublicParams,
    epoch: u64,
    rng: &mut R,
) -> Result<BeaconBroadcast, ProtocolError> {
    let nonce = token_nonce(&beacon.seed, epoch);
    let (abe_ct, z) = encapsulate(pp, &beacon.policy, rng)
        .map_err(|e| ProtocolError::BeaconPolicy(beacon.id, e.to_string()))?;
    let key = derive_key(&z.to_bytes(), CTX_BEACON_PAYLOAD).expect("non-empty context");
    let payload = seal(&key, nonce.as_bytes(), rng);
    Ok(BeaconBroadcast {
        beacon_id: beacon.id,
        epoch,
        policy_text: abe_ct.policy_text.clone(),
        abe_ct,
        payload,
    })
}

/// Client side: recover the beacon nonce if the key satisfies the policy.
pub fn client_extract_nonce(
    bb: &BeaconBroadcast,
    pp: &PublicParams,
    key: &AttributeKey,
) -> Result<Digest, ProtocolError> {
    let z = decapsulate(pp, key, &bb.abe_ct)?;
    let payload_key = derive_key(&z.to_bytes(), CTX_BEACON_PAYLOAD).expect("non-empty context");
    let nonce = open(&payload_key, &bb.payload).map_err(|_| ProtocolError::AuthFail)?;
    let arr: [u8; 32] = nonce.try_into().map_err(|_| ProtocolError::AuthFail)?;
    Ok(Digest(arr))
}

/// `h = hash(beacon_nonce || password_digest)`, length-prefixed, nonce first.
pub fn sign_on_hash(beacon_nonce: &Digest, password_digest: &Digest) -> Digest {
    hash_fields(&[beacon_nonce.as_bytes(), password_digest.as_bytes()])
}

/// Client side: the layered message
/// `login[nonce[username + c-nonce(hash(nonce + password))]]`.
#[allow(clippy::too_many_arguments)]
pub fn build_sign_on<R: RngCore + CryptoRng + ?Sized>(
    username: &str,
    password_digest: &Digest,
    user_seed: &TokenSeed,
    beacon_nonce: &Digest,
    beacon_id: BeaconId,
    epoch_hint: u64,
    cnonce_clock: &EpochClock,
    rng: &mut R,
) -> Result<LocationSignOn, ProtocolError> {
    validate_username(username).map_err(|_| ProtocolError::InvalidUsername(username.into()))?;
    let h = sign_on_hash(beacon_nonce, password_digest);
    let c_nonce = token_nonce(user_seed, cnonce_clock.epoch());
    let inner_key = derive_key(c_nonce.as_bytes(), CTX_INNER).expect("non-empty context");
    let inner = seal(&inner_key, h.as_bytes(), rng);
    let body = Writer::new()
        .str(username)
        .bytes(&inner.to_bytes())
        .finish();
    let outer_key = derive_key(beacon_nonce.as_bytes(), CTX_OUTER).expect("non-empty context");
    let outer = seal(&outer_key, &body, rng);
    Ok(LocationSignOn {
        beacon_id,
        epoch_hint,
        outer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    UnknownEpoch,
    UnknownUser,
    BadCnonce,
    BadHash,
    Replay,
    Malformed,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnknownEpoch => "UNKNOWN_EPOCH",
            RejectReason::UnknownUser => "UNKNOWN_USER",
            RejectReason::BadCnonce => "BAD_CNONCE",
            RejectReason::BadHash => "BAD_HASH",
            RejectReason::Replay => "REPLAY",
            RejectReason::Malformed => "MALFORMED",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyResult {
    Accepted {
        username: String,
        beacon_id: BeaconId,
        epoch: u64,
    },
    Rejected(RejectReason),
}

impl VerifyResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, VerifyResult::Accepted { .. })
    }
}

impl fmt::Display for VerifyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyResult::Accepted {
                username,
                beacon_id,
                epoch,
            } => write!(
                f,
                "ACCEPTED user={username} beacon={beacon_id} epoch={epoch}"
            ),
            VerifyResult::Rejected(r) => write!(f, "REJECTED reason={r}"),
        }
    }
}

/// Epoch periods and the +/- skew window used by the verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifierConfig {
    pub beacon_period: u64,
    pub cnonce_period: u64,
    pub window: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            beacon_period: DEFAULT_BEACON_PERIOD,
            cnonce_period: DEFAULT_CNONCE_PERIOD,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Digests of accepted sign-ons, tagged with the beacon epoch they matched.
/// Entries older than `current - window` are evicted before each lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayCache {
    window: u64,
    entries: BTreeMap<Digest, u64>,
}

impl ReplayCache {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            entries: BTreeMap::new(),
        }
    }

    pub fn evict(&mut self, current_epoch: u64) {
        let window = self.window;
        self.entries
            .retain(|_, &mut e| e.saturating_add(window) >= current_epoch);
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.entries.contains_key(digest)
    }

    pub fn insert(&mut self, digest: Digest, epoch: u64) {
        self.entries.insert(digest, epoch);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Digest, u64)> {
        self.entries.iter().map(|(d, &e)| (d, e))
    }
}

/// Epochs within `window` of `current`, `hint` first when it falls inside.
fn candidate_epochs(current: u64, window: u64, hint: Option<u64>) -> Vec<u64> {
    let lo = current.saturating_sub(window);
    let hi = current.saturating_add(window);
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    if let Some(h) = hint.filter(|h| (lo..=hi).contains(h)) {
        out.push(h);
    }
    out.extend((lo..=hi).filter(|e| Some(*e) != hint));
    out
}

/// Verifies raw sign-on bytes; undecodable input is `REJECTED(MALFORMED)`.
pub fn backend_verify_bytes(
    bytes: &[u8],
    dir: &mut Directory,
    now: u64,
    cache: &mut ReplayCache,
    cfg: &VerifierConfig,
) -> VerifyResult {
    match LocationSignOn::from_bytes(bytes) {
        Ok(msg) => backend_verify(&msg, dir, now, cache, cfg),
        Err(_) => VerifyResult::Rejected(RejectReason::Malformed),
    }
}

/// Backend side. `now` is the backend's clock in seconds.
///
/// 1. replay-cache lookup on the digest of the full message;
/// 2. recompute the beacon nonce for each epoch in the window and try the outer layer;
/// 3. read the username and look it up;
/// 4. recompute the c-nonce for each epoch in the window and try the inner layer;
/// 5. compare the recovered hash against `hash(nonce || stored password digest)`;
/// 6. on success cache the digest and log the user's location.
pub fn backend_verify(
    msg: &LocationSignOn,
    dir: &mut Directory,
    now: u64,
    cache: &mut ReplayCache,
    cfg: &VerifierConfig,
) -> VerifyResult {
    use RejectReason::*;
    let reject = VerifyResult::Rejected;

    let digest = hash(&msg.to_bytes());
    let beacon_epoch = now / cfg.beacon_period;
    cache.evict(beacon_epoch);
    if cache.contains(&digest) {
        return reject(Replay);
    }

    // An id the directory does not know cannot name a nonce; treated as malformed.
    let Some(beacon) = dir.lookup_beacon(&msg.beacon_id) else {
        return reject(Malformed);
    };
    let opened = candidate_epochs(beacon_epoch, cfg.window, Some(msg.epoch_hint))
        .into_iter()
        .find_map(|e| {
            let nonce = token_nonce(&beacon.seed, e);
            let key = derive_key(nonce.as_bytes(), CTX_OUTER).expect("non-empty context");
            open(&key, &msg.outer).ok().map(|body| (e, nonce, body))
        });
    let Some((matched_epoch, nonce, body)) = opened else {
        return reject(UnknownEpoch);
    };

    let mut r = Reader::new(&body);
    let parsed = (|| -> Result<(String, Envelope), CodecError> {
        let username = r.str("username")?.to_string();
        let inner_bytes = r.bytes("inner")?;
        r.finish()?;
        let inner = Envelope::from_bytes(inner_bytes).map_err(|e| CodecError::Invalid {
            field: "inner",
            offset: 0,
            reason: e.to_string(),
        })?;
        Ok((username, inner))
    })();
    let Ok((username, inner)) = parsed else {
        return reject(Malformed);
    };
    if validate_username(&username).is_err() {
        return reject(Malformed);
    }
    let Some(user) = dir.lookup_user(&username) else {
        return reject(UnknownUser);
    };

    let cnonce_epoch = now / cfg.cnonce_period;
    let recovered = candidate_epochs(cnonce_epoch, cfg.window, None)
        .into_iter()
        .find_map(|e| {
            let c = token_nonce(&user.cnonce_seed, e);
            let key = derive_key(c.as_bytes(), CTX_INNER).expect("non-empty context");
            open(&key, &inner).ok()
        });
    let Some(h) = recovered else {
        return reject(BadCnonce);
    };
    let expected = sign_on_hash(&nonce, &user.password_digest);
    if h.as_slice() != expected.as_bytes() {
        return reject(BadHash);
    }

    cache.insert(digest, matched_epoch);
    let beacon_id = msg.beacon_id;
    dir.record_location(LocationEntry {
        time: now,
        username: username.clone(),
        beacon_id: beacon_id.to_string(),
        epoch: matched_epoch,
    });
    VerifyResult::Accepted {
        username,
        beacon_id,
        epoch: matched_epoch,
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(_: CryptoError) -> Self {
        ProtocolError::AuthFail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abe::{keygen, setup, MasterSecret};
    use crate::crypto::{password_digest, SeedOwner};
    use crate::directory::UserRecord;
    use crate::group::GroupSuite;
    use crate::policy::parse_policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    const OFFICE: &str = "(role:employee AND floor:3) OR role:admin";

    struct World {
        pp: PublicParams,
        msk: MasterSecret,
        dir: Directory,
        beacon: BeaconId,
        rng: ChaCha20Rng,
    }

    fn attrs(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn world() -> World {
        let suite = GroupSuite::default_oracle();
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let (pp, msk) = setup(&suite, &mut rng);
        let mut dir = Directory::new(suite.id());
        let beacon = BeaconId([0xb1; 16]);
        dir.add_beacon(BeaconRecord {
            id: beacon,
            seed: TokenSeed::random(SeedOwner::Beacon, &mut rng),
            policy: parse_policy(OFFICE).unwrap(),
            x: 0.0,
            y: 0.0,
            range_m: 10.0,
        })
        .unwrap();
        dir.add_user(UserRecord {
            username: "alice".into(),
            password_digest: password_digest(b"pw-alice"),
            cnonce_seed: TokenSeed::random(SeedOwner::User, &mut rng),
            attrs: attrs(&["role:employee", "floor:3"]),
        })
        .unwrap();
        World {
            pp,
            msk,
            dir,
            beacon,
            rng,
        }
    }

    /// Broadcast at `t`, alice extracts and signs on with her clock at `t`.
    fn alice_sign_on(w: &mut World, t: u64) -> (LocationSignOn, Digest) {
        let cfg = VerifierConfig::default();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let epoch = t / cfg.beacon_period;
        let bb = build_broadcast(&beacon, &w.pp, epoch, &mut w.rng).unwrap();
        let key = keygen(
            &w.msk,
            &w.pp,
            &attrs(&["role:employee", "floor:3"]),
            &mut w.rng,
        )
        .unwrap();
        let nonce = client_extract_nonce(&bb, &w.pp, &key).unwrap();
        let user = w.dir.lookup_user("alice").unwrap().clone();
        let clock = EpochClock::manual(cfg.cnonce_period, t).unwrap();
        let msg = build_sign_on(
            "alice",
            &user.password_digest,
            &user.cnonce_seed,
            &nonce,
            w.beacon,
            epoch,
            &clock,
            &mut w.rng,
        )
        .unwrap();
        (msg, nonce)
    }

    #[test]
    fn extraction_recovers_exact_nonce() {
        let mut w = world();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let bb = build_broadcast(&beacon, &w.pp, 5, &mut w.rng).unwrap();
        let key = keygen(
            &w.msk,
            &w.pp,
            &attrs(&["role:employee", "floor:3"]),
            &mut w.rng,
        )
        .unwrap();
        assert_eq!(
            client_extract_nonce(&bb, &w.pp, &key).unwrap(),
            token_nonce(&beacon.seed, 5)
        );
        let visitor = keygen(&w.msk, &w.pp, &attrs(&["role:visitor"]), &mut w.rng).unwrap();
        assert_eq!(
            client_extract_nonce(&bb, &w.pp, &visitor),
            Err(ProtocolError::NotAuthorized)
        );
    }

    #[test]
    fn tampered_payload_is_auth_fail() {
        let mut w = world();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let mut bb = build_broadcast(&beacon, &w.pp, 5, &mut w.rng).unwrap();
        bb.payload.ciphertext[0] ^= 0x01;
        let key = keygen(&w.msk, &w.pp, &attrs(&["role:admin"]), &mut w.rng).unwrap();
        assert_eq!(
            client_extract_nonce(&bb, &w.pp, &key),
            Err(ProtocolError::AuthFail)
        );
    }

    #[test]
    fn consecutive_epochs_seal_different_nonces() {
        let mut w = world();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let key = keygen(&w.msk, &w.pp, &attrs(&["role:admin"]), &mut w.rng).unwrap();
        let n5 = client_extract_nonce(
            &build_broadcast(&beacon, &w.pp, 5, &mut w.rng).unwrap(),
            &w.pp,
            &key,
        );
        let n6 = client_extract_nonce(
            &build_broadcast(&beacon, &w.pp, 6, &mut w.rng).unwrap(),
            &w.pp,
            &key,
        );
        assert_ne!(n5.unwrap(), n6.unwrap());
    }

    #[test]
    fn broadcast_codec_round_trip_and_errors() {
        let mut w = world();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let bb = build_broadcast(&beacon, &w.pp, 5, &mut w.rng).unwrap();
        let bytes = bb.to_bytes();
        assert_eq!(BeaconBroadcast::from_bytes(&bytes).unwrap(), bb);

        let mut bad_version = bytes.clone();
        bad_version[6] = 0xff;
        assert_eq!(
            BeaconBroadcast::from_bytes(&bad_version),
            Err(ProtocolError::Malformed(CodecError::UnsupportedVersion(
                0xff
            )))
        );
        match BeaconBroadcast::from_bytes(&bytes[..33]) {
            Err(ProtocolError::Malformed(CodecError::Truncated { field, .. })) => {
                assert_eq!(field, "policy_text")
            }
            other => panic!("{other:?}"),
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            BeaconBroadcast::from_bytes(&bad_magic),
            Err(ProtocolError::Malformed(CodecError::BadMagic { .. }))
        ));
    }

    #[test]
    fn broadcast_rejects_policy_mismatch() {
        let mut w = world();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let mut bb = build_broadcast(&beacon, &w.pp, 5, &mut w.rng).unwrap();
        bb.policy_text = "role:admin".into();
        assert!(matches!(
            BeaconBroadcast::from_bytes(&bb.to_bytes()),
            Err(ProtocolError::Malformed(CodecError::Invalid {
                field: "abe_ct",
                ..
            }))
        ));
    }

    #[test]
    fn sign_on_layers_open_in_reverse_order() {
        let mut w = world();
        let (msg, nonce) = alice_sign_on(&mut w, 125);
        let user = w.dir.lookup_user("alice").unwrap();
        let outer_key = derive_key(nonce.as_bytes(), CTX_OUTER).unwrap();
        let body = open(&outer_key, &msg.outer).unwrap();
        let mut r = Reader::new(&body);
        assert_eq!(r.str("username").unwrap(), "alice");
        let inner = Envelope::from_bytes(r.bytes("inner").unwrap()).unwrap();
        let c = token_nonce(&user.cnonce_seed, 125 / 30);
        let h = open(&derive_key(c.as_bytes(), CTX_INNER).unwrap(), &inner).unwrap();
        assert_eq!(h, sign_on_hash(&nonce, &user.password_digest).as_bytes());
        // A key from the neighbouring c-nonce epoch must not open it.
        let c_next = token_nonce(&user.cnonce_seed, 125 / 30 + 1);
        assert!(open(&derive_key(c_next.as_bytes(), CTX_INNER).unwrap(), &inner).is_err());
    }

    #[test]
    fn sign_on_bytes_do_not_leak_cnonce_or_digest() {
        let mut w = world();
        let (msg, _) = alice_sign_on(&mut w, 125);
        let bytes = msg.to_bytes();
        let user = w.dir.lookup_user("alice").unwrap();
        let secrets = [
            *token_nonce(&user.cnonce_seed, 125 / 30).as_bytes(),
            *user.password_digest.as_bytes(),
            *user.cnonce_seed.expose_secret(),
        ];
        for s in secrets {
            assert!(!bytes.windows(32).any(|win| win == s));
        }
    }

    #[test]
    fn fresh_rng_gives_fresh_envelopes_same_content() {
        let mut w = world();
        let (m1, _) = alice_sign_on(&mut w, 125);
        let (m2, _) = alice_sign_on(&mut w, 125);
        assert_ne!(m1.outer.nonce, m2.outer.nonce);
        let cfg = VerifierConfig::default();
        let mut cache = ReplayCache::new(cfg.window);
        assert!(backend_verify(&m1, &mut w.dir, 125, &mut cache, &cfg).is_accepted());
        assert!(backend_verify(&m2, &mut w.dir, 125, &mut cache, &cfg).is_accepted());
    }

    #[test]
    fn honest_sign_on_is_accepted_and_logged() {
        let mut w = world();
        let (msg, _) = alice_sign_on(&mut w, 125);
        let cfg = VerifierConfig::default();
        let mut cache = ReplayCache::new(cfg.window);
        let res = backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg);
        assert_eq!(
            res,
            VerifyResult::Accepted {
                username: "alice".into(),
                beacon_id: w.beacon,
                epoch: 2
            }
        );
        assert_eq!(w.dir.location_log().len(), 1);
        assert_eq!(w.dir.location_log()[0].username, "alice");
        // Same bytes again in the same epoch.
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 126, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::Replay)
        );
        assert_eq!(w.dir.location_log().len(), 1);
    }

    #[test]
    fn stale_nonce_is_unknown_epoch() {
        let mut w = world();
        let (msg, _) = alice_sign_on(&mut w, 125);
        let cfg = VerifierConfig::default();
        let mut cache = ReplayCache::new(cfg.window);
        // Two beacon epochs later.
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125 + 120, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::UnknownEpoch)
        );
    }

    #[test]
    fn accepted_then_replayed_after_rotation_is_unknown_epoch() {
        let mut w = world();
        let (msg, _) = alice_sign_on(&mut w, 125);
        let cfg = VerifierConfig::default();
        let mut cache = ReplayCache::new(cfg.window);
        assert!(backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg).is_accepted());
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 185, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::Replay)
        );
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 245, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::UnknownEpoch)
        );
        assert!(cache.is_empty());
    }

    #[test]
    fn wrong_password_is_bad_hash() {
        let mut w = world();
        let cfg = VerifierConfig::default();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let nonce = token_nonce(&beacon.seed, 2);
        let user = w.dir.lookup_user("alice").unwrap().clone();
        let clock = EpochClock::manual(cfg.cnonce_period, 125).unwrap();
        let msg = build_sign_on(
            "alice",
            &password_digest(b"wrong"),
            &user.cnonce_seed,
            &nonce,
            w.beacon,
            2,
            &clock,
            &mut w.rng,
        )
        .unwrap();
        let mut cache = ReplayCache::new(1);
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::BadHash)
        );
    }

    #[test]
    fn wrong_seed_or_skewed_clock_is_bad_cnonce() {
        let mut w = world();
        let cfg = VerifierConfig::default();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let nonce = token_nonce(&beacon.seed, 2);
        let user = w.dir.lookup_user("alice").unwrap().clone();
        let clock = EpochClock::manual(cfg.cnonce_period, 125).unwrap();
        let stolen = TokenSeed::new([0x55; 32], SeedOwner::User);
        let msg = build_sign_on(
            "alice",
            &user.password_digest,
            &stolen,
            &nonce,
            w.beacon,
            2,
            &clock,
            &mut w.rng,
        )
        .unwrap();
        let mut cache = ReplayCache::new(1);
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::BadCnonce)
        );
        // Device clock 2 c-nonce periods behind the backend.
        let behind = EpochClock::manual(cfg.cnonce_period, 125 - 60).unwrap();
        let msg = build_sign_on(
            "alice",
            &user.password_digest,
            &user.cnonce_seed,
            &nonce,
            w.beacon,
            2,
            &behind,
            &mut w.rng,
        )
        .unwrap();
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::BadCnonce)
        );
        // One period behind is inside the window.
        let slightly = EpochClock::manual(cfg.cnonce_period, 125 - 30).unwrap();
        let msg = build_sign_on(
            "alice",
            &user.password_digest,
            &user.cnonce_seed,
            &nonce,
            w.beacon,
            2,
            &slightly,
            &mut w.rng,
        )
        .unwrap();
        assert!(backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg).is_accepted());
    }

    #[test]
    fn unknown_user_and_forged_nonce() {
        let mut w = world();
        let cfg = VerifierConfig::default();
        let beacon = w.dir.lookup_beacon(&w.beacon).unwrap().clone();
        let nonce = token_nonce(&beacon.seed, 2);
        let clock = EpochClock::manual(cfg.cnonce_period, 125).unwrap();
        let seed = TokenSeed::new([3; 32], SeedOwner::User);
        let msg = build_sign_on(
            "mallory",
            &password_digest(b"x"),
            &seed,
            &nonce,
            w.beacon,
            2,
            &clock,
            &mut w.rng,
        )
        .unwrap();
        let mut cache = ReplayCache::new(1);
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::UnknownUser)
        );

        let user = w.dir.lookup_user("alice").unwrap().clone();
        let mut guess = [0u8; 32];
        w.rng.fill_bytes(&mut guess);
        let msg = build_sign_on(
            "alice",
            &user.password_digest,
            &user.cnonce_seed,
            &Digest(guess),
            w.beacon,
            2,
            &clock,
            &mut w.rng,
        )
        .unwrap();
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::UnknownEpoch)
        );
    }

    #[test]
    fn malformed_inputs() {
        let mut w = world();
        let cfg = VerifierConfig::default();
        let mut cache = ReplayCache::new(1);
        assert_eq!(
            backend_verify_bytes(b"LASO-S\x01short", &mut w.dir, 0, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::Malformed)
        );
        let (mut msg, _) = alice_sign_on(&mut w, 125);
        msg.beacon_id = BeaconId([0; 16]);
        assert_eq!(
            backend_verify(&msg, &mut w.dir, 125, &mut cache, &cfg),
            VerifyResult::Rejected(RejectReason::Malformed)
        );
        let (msg, _) = alice_sign_on(&mut w, 125);
        let mut bytes = msg.to_bytes();
        bytes[6] = 0xff;
        assert_eq!(
            LocationSignOn::from_bytes(&bytes),
            Err(ProtocolError::Malformed(CodecError::UnsupportedVersion(
                0xff
            )))
        );
        match LocationSignOn::from_bytes(&msg.to_bytes()[..28]) {
            Err(ProtocolError::Malformed(CodecError::Truncated { field, .. })) => {
                assert_eq!(field, "epoch_hint")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn candidate_epochs_put_hint_first() {
        assert_eq!(candidate_epochs(5, 1, Some(6)), vec![6, 4, 5]);
        assert_eq!(candidate_epochs(5, 1, Some(9)), vec![4, 5, 6]);
        assert_eq!(candidate_epochs(0, 1, None), vec![0, 1]);
    }
}
