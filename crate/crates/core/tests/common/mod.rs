#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use laso::abe::{keygen, setup, AttributeKey, PublicParams};
use laso::crypto::{password_digest, EpochClock, SeedOwner, TokenSeed};
use laso::directory::{BeaconId, BeaconRecord, Directory, UserRecord};
use laso::group::GroupSuite;
use laso::policy::{parse_policy, AccessPolicy};
use laso::protocol::{
    build_broadcast, build_sign_on, client_extract_nonce, BeaconBroadcast, LocationSignOn,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const UNIVERSE: [&str; 4] = ["A", "B", "C", "D"];

/// Every tree of depth <= `max_depth` (leaf depth 0) over `attrs`, deduplicated
/// by canonical text.
pub fn all_policies(attrs: &[&str], max_depth: usize) -> Vec<AccessPolicy> {
    let mut levels: Vec<AccessPolicy> = attrs.iter().map(|a| AccessPolicy::leaf(*a)).collect();
    for _ in 0..max_depth {
        let mut next = levels.clone();
        for l in &levels {
            for r in &levels {
                next.push(AccessPolicy::and(l.clone(), r.clone()));
                next.push(AccessPolicy::or(l.clone(), r.clone()));
            }
        }
        levels = dedup(next);
    }
    levels
}

pub fn dedup(policies: Vec<AccessPolicy>) -> Vec<AccessPolicy> {
    let mut seen = HashSet::new();
    policies
        .into_iter()
        .filter(|p| seen.insert(p.to_string()))
        .collect()
}

/// Random tree whose deepest path has exactly `depth` operators.
pub fn random_policy(rng: &mut impl Rng, attrs: &[&str], depth: usize) -> AccessPolicy {
    if depth == 0 {
        return AccessPolicy::leaf(*attrs.choose(rng).unwrap());
    }
    let deep = random_policy(rng, attrs, depth - 1);
    let other_depth = rng.gen_range(0..depth);
    let other = random_policy(rng, attrs, other_depth);
    let (l, r) = if rng.gen_bool(0.5) {
        (deep, other)
    } else {
        (other, deep)
    };
    if rng.gen_bool(0.5) {
        AccessPolicy::and(l, r)
    } else {
        AccessPolicy::or(l, r)
    }
}

/// All 2^n subsets of `attrs`.
pub fn all_subsets(attrs: &[&str]) -> Vec<BTreeSet<String>> {
    (0u32..1 << attrs.len())
        .map(|mask| {
            attrs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, a)| a.to_string())
                .collect()
        })
        .collect()
}

pub fn set(attrs: &[&str]) -> BTreeSet<String> {
    attrs.iter().map(|s| s.to_string()).collect()
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

pub const SCENARIO_POLICY: &str = "(role:employee AND floor:3) OR role:admin";
pub const GOLDEN_BEACON_ID: [u8; 16] = *b"laso-golden-bcn1";
pub const GOLDEN_EPOCH: u64 = 28_000_000;
pub const GOLDEN_TIME: u64 = GOLDEN_EPOCH * 60 + 17;

/// A backend with one beacon and one user, plus what the user's device holds.
pub struct World {
    pub pp: PublicParams,
    pub dir: Directory,
    pub beacon: BeaconRecord,
    pub user: UserRecord,
    pub key: AttributeKey,
    pub password: &'static str,
}

pub fn world(suite: &GroupSuite, seed: u64, user_attrs: &[&str]) -> World {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (pp, msk) = setup(suite, &mut rng);
    let beacon = BeaconRecord {
        id: BeaconId(GOLDEN_BEACON_ID),
        seed: TokenSeed::random(SeedOwner::Beacon, &mut rng),
        policy: parse_policy(SCENARIO_POLICY).unwrap(),
        x: 10.0,
        y: 15.0,
        range_m: 8.0,
    };
    let password = "correct horse battery staple";
    let user = UserRecord {
        username: "alice".into(),
        password_digest: password_digest(password.as_bytes()),
        cnonce_seed: TokenSeed::random(SeedOwner::User, &mut rng),
        attrs: set(user_attrs),
    };
    let key = keygen(&msk, &pp, &user.attrs, &mut rng).unwrap();
    let mut dir = Directory::new(suite.id());
    dir.add_beacon(beacon.clone()).unwrap();
    dir.add_user(user.clone()).unwrap();
    World {
        pp,
        dir,
        beacon,
        user,
        key,
        password,
    }
}

/// The broadcast and sign-on pinned by the wire fixtures.
pub fn golden_messages() -> (World, BeaconBroadcast, LocationSignOn) {
    let w = world(
        &GroupSuite::default_oracle(),
        0x601d,
        &["role:employee", "floor:3"],
    );
    let mut rng = ChaCha20Rng::seed_from_u64(0xb10b);
    let bb = build_broadcast(&w.beacon, &w.pp, GOLDEN_EPOCH, &mut rng).unwrap();
    let nonce = client_extract_nonce(&bb, &w.pp, &w.key).unwrap();
    let clock = EpochClock::manual(30, GOLDEN_TIME).unwrap();
    let so = build_sign_on(
        &w.user.username,
        &w.user.password_digest,
        &w.user.cnonce_seed,
        &nonce,
        bb.beacon_id,
        bb.epoch,
        &clock,
        &mut rng,
    )
    .unwrap();
    (w, bb, so)
}

pub fn read_hex_fixture(name: &str) -> Vec<u8> {
    let text = std::fs::read_to_string(fixtures_dir().join(name))
        .unwrap_or_else(|e| panic!("fixture {name}: {e}"));
    let joined: String = text.split_whitespace().collect();
    hex::decode(joined).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Hex in 64-character lines.
pub fn to_hex_lines(bytes: &[u8]) -> String {
    let h = hex::encode(bytes);
    let mut out = String::new();
    for chunk in h.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).unwrap());
        out.push('\n');
    }
    out
}

/// Offset of the first occurrence of `needle` in `hay`.
pub fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}
