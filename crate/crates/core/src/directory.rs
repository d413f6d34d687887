//! Backend store: users, beacons and the location log.
//!
//! The on-disk form is TOML. A `[header]` table names the format version,
//! the symmetric primitives and the group suite; users and beacons follow as
//! arrays of tables sorted by key, so save/load/save is byte-stable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, SeedOwner, TokenSeed, AEAD_ID, HASH_ID, KDF_ID, PRF_ID};
use crate::policy::{is_valid_attribute, parse_policy, AccessPolicy, PolicyError};

pub const STORE_FORMAT: &str = "laso-directory";
pub const STORE_VERSION: u32 = 1;
pub const MAX_USERNAME_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum DirectoryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported store {field}: {value:?}")]
    Header { field: &'static str, value: String },
    #[error("unknown primitive for {field}: {value:?} (expected {expected:?})")]
    UnknownPrimitive {
        field: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("duplicate username {0:?}")]
    DuplicateUser(String),
    #[error("duplicate beacon id {0}")]
    DuplicateBeacon(BeaconId),
    #[error("beacon {beacon}: policy error: {source}")]
    BeaconPolicy {
        beacon: BeaconId,
        #[source]
        source: PolicyError,
    },
    #[error("invalid username {0:?}: must be 1-64 bytes of UTF-8 without NUL")]
    InvalidUsername(String),
    #[error("{record}: invalid {field}: {reason}")]
    InvalidField {
        record: String,
        field: &'static str,
        reason: String,
    },
}

pub fn validate_username(name: &str) -> Result<(), DirectoryError> {
    if name.is_empty() || name.len() > MAX_USERNAME_LEN || name.contains('\0') {
        Err(DirectoryError::InvalidUsername(name.to_string()))
    } else {
        Ok(())
    }
}

/// 16-byte beacon identifier, shown as 32 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BeaconId(pub [u8; 16]);

impl fmt::Display for BeaconId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for BeaconId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BeaconId({self})")
    }
}

impl FromStr for BeaconId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("beacon id {s:?}: {e}"))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| format!("beacon id {s:?}: need 32 hex digits"))?;
        Ok(BeaconId(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub username: String,
    pub password_digest: Digest,
    pub cnonce_seed: TokenSeed,
    pub attrs: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeaconRecord {
    pub id: BeaconId,
    pub seed: TokenSeed,
    pub policy: AccessPolicy,
    pub x: f64,
    pub y: f64,
    pub range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationEntry {
    pub time: u64,
    pub username: String,
    pub beacon_id: String,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directory {
    suite_id: String,
    users: BTreeMap<String, UserRecord>,
    beacons: BTreeMap<BeaconId, BeaconRecord>,
    location_log: Vec<LocationEntry>,
}

impl Directory {
    pub fn new(suite_id: impl Into<String>) -> Self {
        Self {
            suite_id: suite_id.into(),
            users: BTreeMap::new(),
            beacons: BTreeMap::new(),
            location_log: Vec::new(),
        }
    }

    pub fn suite_id(&self) -> &str {
        &self.suite_id
    }

    pub fn add_user(&mut self, user: UserRecord) -> Result<(), DirectoryError> {
        validate_username(&user.username)?;
        if let Some(bad) = user.attrs.iter().find(|a| !is_valid_attribute(a)) {
            return Err(DirectoryError::InvalidField {
                record: format!("user {}", user.username),
                field: "attrs",
                reason: format!("invalid attribute {bad:?}"),
            });
        }
        if self.users.contains_key(&user.username) {
            return Err(DirectoryError::DuplicateUser(user.username));
        }
        self.users.insert(user.username.clone(), user);
        Ok(())
    }

    pub fn add_beacon(&mut self, beacon: BeaconRecord) -> Result<(), DirectoryError> {
        if !(beacon.range_m > 0.0 && beacon.range_m.is_finite()) {
            return Err(DirectoryError::InvalidField {
                record: format!("beacon {}", beacon.id),
                field: "range_m",
                reason: "must be a positive finite number of meters".into(),
            });
        }
        if self.beacons.contains_key(&beacon.id) {
            return Err(DirectoryError::DuplicateBeacon(beacon.id));
        }
        self.beacons.insert(beacon.id, beacon);
        Ok(())
    }

    /// Replaces a beacon's policy; the next broadcast is encapsulated under it.
    pub fn set_beacon_policy(&mut self, id: &BeaconId, policy: AccessPolicy) -> bool {
        match self.beacons.get_mut(id) {
            Some(b) => {
                b.policy = policy;
                true
            }
            None => false,
        }
    }

    /// Exact, case-sensitive match on the username bytes.
    pub fn lookup_user(&self, username: &str) -> Option<&UserRecord> {
        self.users.get(username)
    }

    pub fn lookup_beacon(&self, id: &BeaconId) -> Option<&BeaconRecord> {
        self.beacons.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn beacons(&self) -> impl Iterator<Item = &BeaconRecord> {
        self.beacons.values()
    }

    pub fn record_location(&mut self, entry: LocationEntry) {
        self.location_log.push(entry);
    }

    pub fn location_log(&self) -> &[LocationEntry] {
        &self.location_log
    }

    pub fn to_toml(&self) -> String {
        let file = StoreFile {
            header: Header::current(&self.suite_id),
            user: self
                .users
                .values()
                .map(|u| UserRow {
                    username: u.username.clone(),
                    password_digest: u.password_digest.to_hex(),
                    cnonce_seed: hex::encode(u.cnonce_seed.expose_secret()),
                    attrs: u.attrs.iter().cloned().collect(),
                })
                .collect(),
            beacon: self
                .beacons
                .values()
                .map(|b| BeaconRow {
                    id: b.id.to_string(),
                    seed: hex::encode(b.seed.expose_secret()),
                    policy: b.policy.to_string(),
                    x: b.x,
                    y: b.y,
                    range_m: b.range_m,
                })
                .collect(),
            location: self.location_log.clone(),
        };
        toml::to_string(&file).expect("store structs always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, DirectoryError> {
        let file: StoreFile = toml::from_str(text).map_err(|e| DirectoryError::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        file.header.check()?;
        let mut dir = Directory::new(file.header.suite);
        for row in file.user {
            let record = format!("user {}", row.username);
            let user = UserRecord {
                password_digest: Digest(decode32(
                    &row.password_digest,
                    &record,
                    "password_digest",
                )?),
                cnonce_seed: TokenSeed::new(
                    decode32(&row.cnonce_seed, &record, "cnonce_seed")?,
                    SeedOwner::User,
                ),
                attrs: row.attrs.into_iter().collect(),
                username: row.username,
            };
            dir.add_user(user)?;
        }
        for row in file.beacon {
            let id: BeaconId = row
                .id
                .parse()
                .map_err(|reason| DirectoryError::InvalidField {
                    record: format!("beacon {}", row.id),
                    field: "id",
                    reason,
                })?;
            let record = format!("beacon {id}");
            let policy = parse_policy(&row.policy)
                .map_err(|source| DirectoryError::BeaconPolicy { beacon: id, source })?;
            dir.add_beacon(BeaconRecord {
                id,
                seed: TokenSeed::new(decode32(&row.seed, &record, "seed")?, SeedOwner::Beacon),
                policy,
                x: row.x,
                y: row.y,
                range_m: row.range_m,
            })?;
        }
        dir.location_log = file.location;
        Ok(dir)
    }

    pub fn load(path: &Path) -> Result<Self, DirectoryError> {
        let text = std::fs::read_to_string(path).map_err(|source| DirectoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DirectoryError> {
        std::fs::write(path, self.to_toml()).map_err(|source| DirectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn decode32(hex_str: &str, record: &str, field: &'static str) -> Result<[u8; 32], DirectoryError> {
    let invalid = |reason: String| DirectoryError::InvalidField {
        record: record.to_string(),
        field,
        reason,
    };
    hex::decode(hex_str)
        .map_err(|e| invalid(e.to_string()))?
        .try_into()
        .map_err(|_| invalid("expected 64 hex digits".into()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreFile {
    header: Header,
    #[serde(default)]
    user: Vec<UserRow>,
    #[serde(default)]
    beacon: Vec<BeaconRow>,
    #[serde(default)]
    location: Vec<LocationEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    hash: String,
    kdf: String,
    aead: String,
    prf: String,
    suite: String,
}

impl Header {
    fn current(suite: &str) -> Self {
        Self {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            hash: HASH_ID.into(),
            kdf: KDF_ID.into(),
            aead: AEAD_ID.into(),
            prf: PRF_ID.into(),
            suite: suite.into(),
        }
    }

    fn check(&self) -> Result<(), DirectoryError> {
        if self.format != STORE_FORMAT {
            return Err(DirectoryError::Header {
                field: "format",
                value: self.format.clone(),
            });
        }
        if self.version != STORE_VERSION {
            return Err(DirectoryError::Header {
                field: "version",
                value: self.version.to_string(),
            });
        }
        for (field, value, expected) in [
            ("hash", &self.hash, HASH_ID),
            ("kdf", &self.kdf, KDF_ID),
            ("aead", &self.aead, AEAD_ID),
            ("prf", &self.prf, PRF_ID),
        ] {
            if value != expected {
                return Err(DirectoryError::UnknownPrimitive {
                    field,
                    value: value.clone(),
                    expected,
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserRow {
    username: String,
    password_digest: String,
    cnonce_seed: String,
    attrs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeaconRow {
    id: String,
    seed: String,
    policy: String,
    x: f64,
    y: f64,
    range_m: f64,
}
