//! Deterministic fixed-step simulation of beacons covering an office floor.
//!
//! Every beacon advertises every `adv_interval` seconds. Each honest client in
//! range tries to extract the nonce and, when it differs from the nonce of its
//! last accepted sign-on at that beacon, submits a fresh sign-on which the
//! backend verifies on the spot. Attackers act according to their mode. All
//! randomness comes from one ChaCha20 stream seeded by the config, so a
//! `(config, seed)` pair always yields the same event log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abe::{keygen, setup, AttributeKey, PublicParams};
use crate::crypto::{hash, password_digest, Digest, EpochClock, SeedOwner, TokenSeed};
use crate::directory::{BeaconId, BeaconRecord, Directory, UserRecord};
use crate::group::{GroupSuite, MERSENNE_61};
use crate::policy::{eval_boolean, parse_policy, AccessPolicy};
use crate::protocol::{
    backend_verify_bytes, build_broadcast, build_sign_on, client_extract_nonce, ProtocolError,
    ReplayCache, VerifierConfig, VerifyResult,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("scenario parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconSpec {
    pub name: String,
    pub policy: String,
    pub x: f64,
    pub y: f64,
    pub range_m: f64,
}

impl BeaconSpec {
    /// First 16 bytes of SHA-256(name).
    pub fn id(&self) -> BeaconId {
        let d = hash(self.name.as_bytes());
        BeaconId(d.0[..16].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    /// Plaintext as typed on the device; only its digest enters the system.
    pub password: String,
    pub attrs: Vec<String>,
    pub waypoints: Vec<(f64, f64)>,
    pub speed: f64,
    /// Device clock offset from backend time, seconds.
    #[serde(default)]
    pub clock_skew_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Re-sends sign-ons it overheard, alternating the newest and oldest capture.
    Replay,
    /// Holds a key that fails every policy; forges sign-ons with guessed nonces.
    NoKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub name: String,
    pub mode: AttackMode,
    #[serde(default)]
    pub start_step: u64,
    #[serde(default = "default_interval")]
    pub interval_steps: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
    /// NoKey: attributes baked into the attacker's key.
    #[serde(default)]
    pub attrs: Vec<String>,
    /// NoKey: username claimed in forged sign-ons.
    #[serde(default)]
    pub impersonate: Option<String>,
    /// NoKey: where the attacker stands.
    #[serde(default)]
    pub position: Option<(f64, f64)>,
}

fn default_interval() -> u64 {
    10
}

fn default_max_attempts() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySwap {
    pub step: u64,
    pub beacon: String,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub world: Bounds,
    /// Seconds per step.
    pub time_step: u64,
    pub duration_steps: u64,
    pub beacon_period: u64,
    pub cnonce_period: u64,
    pub adv_interval: u64,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_modulus")]
    pub modulus: u64,
    #[serde(default)]
    pub beacon: Vec<BeaconSpec>,
    #[serde(default)]
    pub user: Vec<UserSpec>,
    #[serde(default)]
    pub attacker: Vec<AttackerSpec>,
    #[serde(default)]
    pub policy_swap: Vec<PolicySwap>,
}

fn default_window() -> u64 {
    1
}

fn default_modulus() -> u64 {
    MERSENNE_61
}

pub const CANONICAL_SCENARIO: &str = include_str!("../scenarios/canonical.toml");

impl SimConfig {
    /// 3 beacons, 3 authorized users, 1 unauthorized user, 1 replay attacker.
    pub fn canonical() -> Self {
        Self::from_toml(CANONICAL_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("time_step", self.time_step),
            ("beacon_period", self.beacon_period),
            ("cnonce_period", self.cnonce_period),
            ("adv_interval", self.adv_interval),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be > 0")));
            }
        }
        if !(self.world.width > 0.0 && self.world.height > 0.0) {
            return Err(invalid("world bounds must be positive"));
        }
        GroupSuite::oracle(self.modulus).map_err(|e| invalid(e.to_string()))?;

        let mut names = BTreeSet::new();
        for b in &self.beacon {
            if !names.insert(b.name.as_str()) {
                return Err(invalid(format!("duplicate beacon {:?}", b.name)));
            }
            parse_policy(&b.policy).map_err(|e| invalid(format!("beacon {}: {e}", b.name)))?;
            if b.range_m.is_nan() || b.range_m <= 0.0 {
                return Err(invalid(format!("beacon {}: range_m must be > 0", b.name)));
            }
            if !self.world.contains((b.x, b.y)) {
                return Err(invalid(format!("beacon {} outside world", b.name)));
            }
        }
        let mut actors = BTreeSet::new();
        for u in &self.user {
            if !actors.insert(u.name.as_str()) {
                return Err(invalid(format!("duplicate actor {:?}", u.name)));
            }
            crate::directory::validate_username(&u.name).map_err(|e| invalid(e.to_string()))?;
            if u.waypoints.is_empty() {
                return Err(invalid(format!(
                    "user {}: needs at least one waypoint",
                    u.name
                )));
            }
            if let Some(w) = u.waypoints.iter().find(|w| !self.world.contains(**w)) {
                return Err(invalid(format!(
                    "user {}: waypoint {w:?} outside world",
                    u.name
                )));
            }
            if !(u.speed >= 0.0 && u.speed.is_finite()) {
                return Err(invalid(format!("user {}: speed must be >= 0", u.name)));
            }
            if u.attrs.is_empty() {
                return Err(invalid(format!(
                    "user {}: needs at least one attribute",
                    u.name
                )));
            }
        }
        for a in &self.attacker {
            if !actors.insert(a.name.as_str()) {
                return Err(invalid(format!("duplicate actor {:?}", a.name)));
            }
            if a.interval_steps == 0 {
                return Err(invalid(format!(
                    "attacker {}: interval_steps must be > 0",
                    a.name
                )));
            }
            if a.mode == AttackMode::NoKey {
                let pos = a.position.ok_or_else(|| {
                    invalid(format!("attacker {}: no_key needs a position", a.name))
                })?;
                if !self.world.contains(pos) {
                    return Err(invalid(format!(
                        "attacker {}: position outside world",
                        a.name
                    )));
                }
                if a.attrs.is_empty() || a.impersonate.is_none() {
                    return Err(invalid(format!(
                        "attacker {}: no_key needs attrs and impersonate",
                        a.name
                    )));
                }
            }
        }
        for s in &self.policy_swap {
            if !names.contains(s.beacon.as_str()) {
                return Err(invalid(format!(
                    "policy swap names unknown beacon {:?}",
                    s.beacon
                )));
            }
            parse_policy(&s.policy).map_err(|e| invalid(format!("policy swap: {e}")))?;
        }
        Ok(())
    }

    pub fn verifier(&self) -> VerifierConfig {
        VerifierConfig {
            beacon_period: self.beacon_period,
            cnonce_period: self.cnonce_period,
            window: self.window,
        }
    }

    pub fn time_at(&self, step: u64) -> u64 {
        step * self.time_step
    }

    /// True when an advertisement is due at `step`.
    pub fn advertises_at(&self, step: u64) -> bool {
        let t = self.time_at(step);
        step == 0 || t / self.adv_interval != (t - self.time_step) / self.adv_interval
    }
}

/// Position after `t` seconds at constant speed along the polyline; holds at
/// the last waypoint.
pub fn position_at(waypoints: &[(f64, f64)], speed: f64, t: f64) -> (f64, f64) {
    let mut remaining = speed * t;
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        if remaining <= len {
            if len == 0.0 {
                return a;
            }
            let f = remaining / len;
            return (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        }
        remaining -= len;
    }
    *waypoints.last().expect("validated non-empty")
}

/// Closed-disk radio model.
pub fn reception_check(position: (f64, f64), beacon: &BeaconRecord) -> bool {
    let dx = position.0 - beacon.x;
    let dy = position.1 - beacon.y;
    (dx * dx + dy * dy).sqrt() <= beacon.range_m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractOutcome {
    Authorized,
    NotAuthorized,
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submission {
    Honest,
    Replay,
    Forged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Broadcast {
        beacon: String,
        epoch: u64,
        policy: String,
    },
    PolicySwap {
        beacon: String,
        policy: String,
    },
    Extract {
        beacon: String,
        outcome: ExtractOutcome,
        x: f64,
        y: f64,
    },
    Verify {
        beacon: String,
        beacon_id: String,
        submission: Submission,
        /// `ACCEPTED` or a reject reason code.
        outcome: String,
        username: Option<String>,
        epoch: Option<u64>,
        x: Option<f64>,
        y: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub step: u64,
    pub time: u64,
    pub actor: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One line of JSON per event.
pub fn events_to_jsonl(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: u64,
    pub beacon_id: String,
    pub epoch: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub broadcasts: u64,
    pub policy_swaps: u64,
    pub extractions_authorized: u64,
    pub extractions_not_authorized: u64,
    pub extractions_corrupt: u64,
    pub sign_ons: u64,
    pub accepted: u64,
    pub rejected: BTreeMap<String, u64>,
    pub replay_attempts: u64,
    pub forged_attempts: u64,
    pub location_traces: BTreeMap<String, Vec<TraceEntry>>,
}

impl SimMetrics {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

/// Aggregates an event log. Pure: the same log always gives the same metrics.
pub fn summarize(events: &[SimEvent]) -> SimMetrics {
    let mut m = SimMetrics::default();
    for e in events {
        match &e.kind {
            EventKind::Broadcast { .. } => m.broadcasts += 1,
            EventKind::PolicySwap { .. } => m.policy_swaps += 1,
            EventKind::Extract { outcome, .. } => match outcome {
                ExtractOutcome::Authorized => m.extractions_authorized += 1,
                ExtractOutcome::NotAuthorized => m.extractions_not_authorized += 1,
                ExtractOutcome::Corrupt => m.extractions_corrupt += 1,
            },
            EventKind::Verify {
                submission,
                outcome,
                username,
                epoch,
                beacon_id,
                ..
            } => {
                m.sign_ons += 1;
                match submission {
                    Submission::Replay => m.replay_attempts += 1,
                    Submission::Forged => m.forged_attempts += 1,
                    Submission::Honest => {}
                }
                if outcome == "ACCEPTED" {
                    m.accepted += 1;
                    if let (Some(u), Some(ep)) = (username, epoch) {
                        m.location_traces
                            .entry(u.clone())
                            .or_default()
                            .push(TraceEntry {
                                time: e.time,
                                beacon_id: beacon_id.clone(),
                                epoch: *ep,
                            });
                    }
                } else {
                    *m.rejected.entry(outcome.clone()).or_default() += 1;
                }
            }
        }
    }
    m
}

/// Every byte sequence put on the air during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub step: u64,
    pub actor: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<SimEvent>,
    pub metrics: SimMetrics,
    /// Backend state at the end of the run, including the location log.
    pub directory: Directory,
    pub params: PublicParams,
    pub transmissions: Vec<Transmission>,
}

struct Client {
    spec: UserSpec,
    record: UserRecord,
    key: AttributeKey,
    /// Nonce of the last accepted sign-on per beacon.
    last_nonce: BTreeMap<BeaconId, Digest>,
}

struct Attacker {
    spec: AttackerSpec,
    key: Option<AttributeKey>,
    attempts: u64,
}

pub fn run_sim(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let suite = GroupSuite::oracle(config.modulus).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (pp, msk) = setup(&suite, &mut rng);
    let verifier = config.verifier();

    let mut dir = Directory::new(suite.id());
    let mut names: BTreeMap<BeaconId, String> = BTreeMap::new();
    for b in &config.beacon {
        let id = b.id();
        names.insert(id, b.name.clone());
        dir.add_beacon(BeaconRecord {
            id,
            seed: TokenSeed::random(SeedOwner::Beacon, &mut rng),
            policy: parse_policy(&b.policy).expect("validated"),
            x: b.x,
            y: b.y,
            range_m: b.range_m,
        })
        .map_err(|e| invalid(e.to_string()))?;
    }

    let mut clients = Vec::with_capacity(config.user.len());
    for u in &config.user {
        let attrs: BTreeSet<String> = u.attrs.iter().cloned().collect();
        let record = UserRecord {
            username: u.name.clone(),
            password_digest: password_digest(u.password.as_bytes()),
            cnonce_seed: TokenSeed::random(SeedOwner::User, &mut rng),
            attrs: attrs.clone(),
        };
        dir.add_user(record.clone())
            .map_err(|e| invalid(e.to_string()))?;
        let key = keygen(&msk, &pp, &attrs, &mut rng).map_err(|e| invalid(e.to_string()))?;
        clients.push(Client {
            spec: u.clone(),
            record,
            key,
            last_nonce: BTreeMap::new(),
        });
    }

    let mut attackers = Vec::with_capacity(config.attacker.len());
    for a in &config.attacker {
        let key = match a.mode {
            AttackMode::NoKey => {
                let attrs = a.attrs.iter().cloned().collect();
                Some(keygen(&msk, &pp, &attrs, &mut rng).map_err(|e| invalid(e.to_string()))?)
            }
            AttackMode::Replay => None,
        };
        attackers.push(Attacker {
            spec: a.clone(),
            key,
            attempts: 0,
        });
    }

    let mut cache = ReplayCache::new(verifier.window);
    let mut events = Vec::new();
    let mut transmissions = Vec::new();
    let mut captured: Vec<(BeaconId, Vec<u8>)> = Vec::new();
    let beacon_ids: Vec<BeaconId> = config.beacon.iter().map(|b| b.id()).collect();

    for step in 0..config.duration_steps {
        let t = config.time_at(step);

        for swap in config.policy_swap.iter().filter(|s| s.step == step) {
            let id = config
                .beacon
                .iter()
                .find(|b| b.name == swap.beacon)
                .expect("validated")
                .id();
            dir.set_beacon_policy(&id, parse_policy(&swap.policy).expect("validated"));
            events.push(SimEvent {
                step,
                time: t,
                actor: "backend".into(),
                kind: EventKind::PolicySwap {
                    beacon: swap.beacon.clone(),
                    policy: swap.policy.clone(),
                },
            });
        }

        if config.advertises_at(step) {
            let beacon_epoch = t / config.beacon_period;
            for id in &beacon_ids {
                let beacon = dir.lookup_beacon(id).expect("registered").clone();
                let name = names[id].clone();
                let bb = build_broadcast(&beacon, &pp, beacon_epoch, &mut rng)?;
                transmissions.push(Transmission {
                    step,
                    actor: name.clone(),
                    bytes: bb.to_bytes(),
                });
                events.push(SimEvent {
                    step,
                    time: t,
                    actor: name.clone(),
                    kind: EventKind::Broadcast {
                        beacon: name.clone(),
                        epoch: beacon_epoch,
                        policy: bb.policy_text.clone(),
                    },
                });

                for client in clients.iter_mut() {
                    let pos = position_at(&client.spec.waypoints, client.spec.speed, t as f64);
                    if !reception_check(pos, &beacon) {
                        continue;
                    }
                    let extracted = client_extract_nonce(&bb, &pp, &client.key);
                    let outcome = match &extracted {
                        Ok(_) => ExtractOutcome::Authorized,
                        Err(ProtocolError::NotAuthorized) => ExtractOutcome::NotAuthorized,
                        Err(_) => ExtractOutcome::Corrupt,
                    };
                    events.push(SimEvent {
                        step,
                        time: t,
                        actor: client.spec.name.clone(),
                        kind: EventKind::Extract {
                            beacon: name.clone(),
                            outcome,
                            x: pos.0,
                            y: pos.1,
                        },
                    });
                    let Ok(nonce) = extracted else { continue };
                    if client.last_nonce.get(id) == Some(&nonce) {
                        continue;
                    }
                    let device_time = t.saturating_add_signed(client.spec.clock_skew_s);
                    let clock = EpochClock::manual(config.cnonce_period, device_time)
                        .expect("validated period");
                    let msg = build_sign_on(
                        &client.record.username,
                        &client.record.password_digest,
                        &client.record.cnonce_seed,
                        &nonce,
                        *id,
                        bb.epoch,
                        &clock,
                        &mut rng,
                    )?;
                    let bytes = msg.to_bytes();
                    transmissions.push(Transmission {
                        step,
                        actor: client.spec.name.clone(),
                        bytes: bytes.clone(),
                    });
                    let result = backend_verify_bytes(&bytes, &mut dir, t, &mut cache, &verifier);
                    if result.is_accepted() {
                        client.last_nonce.insert(*id, nonce);
                    }
                    captured.push((*id, bytes));
                    events.push(verify_event(
                        step,
                        t,
                        &client.spec.name,
                        &name,
                        id,
                        Submission::Honest,
                        &result,
                        Some(pos),
                    ));
                }

                for attacker in attackers.iter_mut() {
                    if attacker.spec.mode != AttackMode::NoKey
                        || step < attacker.spec.start_step
                        || attacker.attempts >= attacker.spec.max_attempts
                    {
                        continue;
                    }
                    let pos = attacker.spec.position.expect("validated");
                    if !reception_check(pos, &beacon) {
                        continue;
                    }
                    let key = attacker.key.as_ref().expect("no_key attacker has a key");
                    let extracted = client_extract_nonce(&bb, &pp, key);
                    let outcome = match &extracted {
                        Ok(_) => ExtractOutcome::Authorized,
                        Err(ProtocolError::NotAuthorized) => ExtractOutcome::NotAuthorized,
                        Err(_) => ExtractOutcome::Corrupt,
                    };
                    events.push(SimEvent {
                        step,
                        time: t,
                        actor: attacker.spec.name.clone(),
                        kind: EventKind::Extract {
                            beacon: name.clone(),
                            outcome,
                            x: pos.0,
                            y: pos.1,
                        },
                    });
                    // Without the nonce the best it can do is guess one, along
                    // with the victim's c-nonce seed and password digest.
                    let mut guess = [0u8; 32];
                    rng.fill_bytes(&mut guess);
                    let nonce = extracted.unwrap_or(Digest(guess));
                    let mut pw = [0u8; 32];
                    rng.fill_bytes(&mut pw);
                    let seed = TokenSeed::random(SeedOwner::User, &mut rng);
                    let clock =
                        EpochClock::manual(config.cnonce_period, t).expect("validated period");
                    let victim = attacker.spec.impersonate.clone().expect("validated");
                    let msg = build_sign_on(
                        &victim,
                        &Digest(pw),
                        &seed,
                        &nonce,
                        *id,
                        bb.epoch,
                        &clock,
                        &mut rng,
                    )?;
                    let bytes = msg.to_bytes();
                    transmissions.push(Transmission {
                        step,
                        actor: attacker.spec.name.clone(),
                        bytes: bytes.clone(),
                    });
                    let result = backend_verify_bytes(&bytes, &mut dir, t, &mut cache, &verifier);
                    attacker.attempts += 1;
                    events.push(verify_event(
                        step,
                        t,
                        &attacker.spec.name,
                        &name,
                        id,
                        Submission::Forged,
                        &result,
                        Some(pos),
                    ));
                }
            }
        }

        for attacker in attackers.iter_mut() {
            let spec = &attacker.spec;
            if spec.mode != AttackMode::Replay
                || step < spec.start_step
                || (step - spec.start_step) % spec.interval_steps != 0
                || attacker.attempts >= spec.max_attempts
                || captured.is_empty()
            {
                continue;
            }
            let pick = if attacker.attempts % 2 == 0 {
                captured.len() - 1
            } else {
                0
            };
            let (id, bytes) = captured[pick].clone();
            transmissions.push(Transmission {
                step,
                actor: spec.name.clone(),
                bytes: bytes.clone(),
            });
            let result = backend_verify_bytes(&bytes, &mut dir, t, &mut cache, &verifier);
            attacker.attempts += 1;
            events.push(verify_event(
                step,
                t,
                &spec.name,
                &names[&id],
                &id,
                Submission::Replay,
                &result,
                None,
            ));
        }
    }

    let metrics = summarize(&events);
    Ok(SimOutput {
        events,
        metrics,
        directory: dir,
        params: pp,
        transmissions,
    })
}

#[allow(clippy::too_many_arguments)]
fn verify_event(
    step: u64,
    time: u64,
    actor: &str,
    beacon: &str,
    id: &BeaconId,
    submission: Submission,
    result: &VerifyResult,
    pos: Option<(f64, f64)>,
) -> SimEvent {
    let (outcome, username, epoch) = match result {
        VerifyResult::Accepted {
            username, epoch, ..
        } => ("ACCEPTED".to_string(), Some(username.clone()), Some(*epoch)),
        VerifyResult::Rejected(r) => (r.as_str().to_string(), None, None),
    };
    SimEvent {
        step,
        time,
        actor: actor.to_string(),
        kind: EventKind::Verify {
            beacon: beacon.to_string(),
            beacon_id: id.to_string(),
            submission,
            outcome,
            username,
            epoch,
            x: pos.map(|p| p.0),
            y: pos.map(|p| p.1),
        },
    }
}

/// Findings of the post-hoc audit.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    /// ACCEPTED events whose user fails the policy or was out of range.
    pub unsound_accepts: Vec<String>,
    /// Qualifying dwells (authorized, >= 2 advertisement intervals) without an ACCEPTED.
    pub missed_dwells: Vec<String>,
    /// ACCEPTED events credited to actors that are not honest users.
    pub attacker_accepts: u64,
    pub dwells_checked: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.unsound_accepts.is_empty()
            && self.missed_dwells.is_empty()
            && self.attacker_accepts == 0
    }
}

/// Re-checks a run against the boolean policy oracle and the geometry,
/// independently of the protocol code path.
pub fn audit(config: &SimConfig, events: &[SimEvent]) -> AuditReport {
    let mut report = AuditReport::default();
    let beacons: BTreeMap<&str, &BeaconSpec> =
        config.beacon.iter().map(|b| (b.name.as_str(), b)).collect();
    let users: BTreeMap<&str, &UserSpec> =
        config.user.iter().map(|u| (u.name.as_str(), u)).collect();
    let attrs_of = |u: &UserSpec| -> BTreeSet<String> { u.attrs.iter().cloned().collect() };

    // Policy in force per beacon as the log replays.
    let mut policy: BTreeMap<&str, AccessPolicy> = config
        .beacon
        .iter()
        .map(|b| (b.name.as_str(), parse_policy(&b.policy).expect("validated")))
        .collect();
    // (user, beacon) -> [(time, epoch)] of accepts.
    let mut accepts: BTreeMap<(String, String), Vec<(u64, u64)>> = BTreeMap::new();

    for e in events {
        match &e.kind {
            EventKind::Broadcast {
                beacon, policy: p, ..
            } => {
                policy.insert(
                    beacons[beacon.as_str()].name.as_str(),
                    parse_policy(p).expect("logged policy parses"),
                );
            }
            EventKind::Verify {
                beacon,
                outcome,
                username,
                epoch,
                x,
                y,
                ..
            } if outcome == "ACCEPTED" => {
                let Some(user) = users.get(e.actor.as_str()) else {
                    report.attacker_accepts += 1;
                    continue;
                };
                if username.as_deref() != Some(e.actor.as_str()) {
                    report.unsound_accepts.push(format!(
                        "step {}: {} accepted as {username:?}",
                        e.step, e.actor
                    ));
                    continue;
                }
                let spec = beacons[beacon.as_str()];
                let pos = position_at(&user.waypoints, user.speed, e.time as f64);
                let logged = (x.unwrap_or(f64::NAN), y.unwrap_or(f64::NAN));
                let dist = ((pos.0 - spec.x).powi(2) + (pos.1 - spec.y).powi(2)).sqrt();
                let satisfied = eval_boolean(&policy[beacon.as_str()], &attrs_of(user));
                if !satisfied || dist > spec.range_m || logged != pos {
                    report.unsound_accepts.push(format!(
                        "step {}: {} at {beacon} (satisfied={satisfied}, dist={dist:.2})",
                        e.step, e.actor
                    ));
                }
                accepts
                    .entry((e.actor.clone(), beacon.clone()))
                    .or_default()
                    .push((e.time, epoch.unwrap_or(0)));
            }
            _ => {}
        }
    }

    // Dwell runs: maximal step ranges in range of a beacon whose policy the user
    // satisfied for the whole run.
    let swap_steps: BTreeMap<&str, Vec<(u64, AccessPolicy)>> = config.policy_swap.iter().fold(
        BTreeMap::new(),
        |mut acc: BTreeMap<&str, Vec<(u64, AccessPolicy)>>, s| {
            acc.entry(s.beacon.as_str())
                .or_default()
                .push((s.step, parse_policy(&s.policy).expect("validated")));
            acc
        },
    );
    let policy_at = |beacon: &BeaconSpec, step: u64| -> AccessPolicy {
        let mut p = parse_policy(&beacon.policy).expect("validated");
        if let Some(swaps) = swap_steps.get(beacon.name.as_str()) {
            for (s, q) in swaps {
                if *s <= step {
                    p = q.clone();
                }
            }
        }
        p
    };
    let min_dwell = 2 * config.adv_interval;
    for user in &config.user {
        let attrs = attrs_of(user);
        for beacon in &config.beacon {
            let record = BeaconRecord {
                id: beacon.id(),
                seed: TokenSeed::new([0; 32], SeedOwner::Beacon),
                policy: parse_policy(&beacon.policy).expect("validated"),
                x: beacon.x,
                y: beacon.y,
                range_m: beacon.range_m,
            };
            let mut run_start: Option<u64> = None;
            for step in 0..=config.duration_steps {
                let inside = step < config.duration_steps
                    && reception_check(
                        position_at(&user.waypoints, user.speed, config.time_at(step) as f64),
                        &record,
                    )
                    && eval_boolean(&policy_at(beacon, step), &attrs);
                match (inside, run_start) {
                    (true, None) => run_start = Some(step),
                    (false, Some(start)) => {
                        run_start = None;
                        let end = step - 1;
                        let secs = (step - start) * config.time_step;
                        if secs < min_dwell {
                            continue;
                        }
                        report.dwells_checked += 1;
                        let start_t = config.time_at(start);
                        let end_t = config.time_at(end);
                        let start_epoch = start_t / config.beacon_period;
                        let ok = accepts
                            .get(&(user.name.clone(), beacon.name.clone()))
                            .is_some_and(|v| {
                                v.iter().any(|&(t, ep)| t <= end_t && ep >= start_epoch)
                            });
                        if !ok {
                            report.missed_dwells.push(format!(
                                "{} at {} during t={start_t}..={end_t}",
                                user.name, beacon.name
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_beacon(user_at: (f64, f64), attrs: &[&str]) -> SimConfig {
        SimConfig {
            seed: 1,
            world: Bounds {
                width: 100.0,
                height: 100.0,
            },
            time_step: 1,
            duration_steps: 100,
            beacon_period: 60,
            cnonce_period: 30,
            adv_interval: 5,
            window: 1,
            modulus: MERSENNE_61,
            beacon: vec![BeaconSpec {
                name: "b0".into(),
                policy: "role:employee".into(),
                x: 50.0,
                y: 50.0,
                range_m: 10.0,
            }],
            user: vec![UserSpec {
                name: "alice".into(),
                password: "pw".into(),
                attrs: attrs.iter().map(|s| s.to_string()).collect(),
                waypoints: vec![user_at],
                speed: 0.0,
                clock_skew_s: 0,
            }],
            attacker: vec![],
            policy_swap: vec![],
        }
    }

    #[test]
    fn reception_is_a_closed_disk() {
        let b = BeaconRecord {
            id: BeaconId([0; 16]),
            seed: TokenSeed::new([0; 32], SeedOwner::Beacon),
            policy: parse_policy("A").unwrap(),
            x: 0.0,
            y: 0.0,
            range_m: 5.0,
        };
        assert!(reception_check((0.0, 0.0), &b));
        assert!(reception_check((5.0, 0.0), &b));
        assert!(reception_check((3.0, 4.0), &b));
        assert!(!reception_check((5.0 + 1e-9, 0.0), &b));
    }

    #[test]
    fn waypoint_motion_interpolates_and_holds() {
        let path = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)];
        assert_eq!(position_at(&path, 1.0, 0.0), (0.0, 0.0));
        assert_eq!(position_at(&path, 1.0, 5.0), (5.0, 0.0));
        assert_eq!(position_at(&path, 2.0, 7.5), (10.0, 5.0));
        assert_eq!(position_at(&path, 1.0, 1000.0), (10.0, 10.0));
        assert_eq!(position_at(&[(3.0, 4.0)], 1.0, 50.0), (3.0, 4.0));
    }

    #[test]
    fn static_authorized_user_signs_on() {
        let cfg = one_beacon((52.0, 50.0), &["role:employee"]);
        let out = run_sim(&cfg).unwrap();
        assert!(out.metrics.accepted >= 1);
        assert!(!out.metrics.rejected.keys().any(|k| k.starts_with("BAD_")));
        // 100 s with 60 s epochs: one sign-on per epoch seen.
        assert_eq!(out.metrics.accepted, 2);
        assert_eq!(out.metrics.broadcasts, 20);
    }

    #[test]
    fn user_out_of_range_never_receives() {
        let cfg = one_beacon((5.0, 5.0), &["role:employee"]);
        let out = run_sim(&cfg).unwrap();
        assert_eq!(
            out.metrics.extractions_authorized + out.metrics.extractions_not_authorized,
            0
        );
        assert_eq!(out.metrics.sign_ons, 0);
    }

    #[test]
    fn unauthorized_user_is_denied_at_extraction() {
        let cfg = one_beacon((50.0, 50.0), &["role:visitor"]);
        let out = run_sim(&cfg).unwrap();
        assert_eq!(out.metrics.extractions_not_authorized, 20);
        assert_eq!(out.metrics.sign_ons, 0);
    }

    #[test]
    fn summarize_basics() {
        assert_eq!(summarize(&[]), SimMetrics::default());
        let ev = SimEvent {
            step: 3,
            time: 3,
            actor: "alice".into(),
            kind: EventKind::Verify {
                beacon: "b0".into(),
                beacon_id: "00".into(),
                submission: Submission::Honest,
                outcome: "ACCEPTED".into(),
                username: Some("alice".into()),
                epoch: Some(0),
                x: Some(1.0),
                y: Some(1.0),
            },
        };
        let m = summarize(std::slice::from_ref(&ev));
        assert_eq!(m.accepted, 1);
        assert_eq!(m.location_traces["alice"].len(), 1);
        assert_eq!(summarize(std::slice::from_ref(&ev)), summarize(&[ev]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = one_beacon((1.0, 1.0), &["A"]);
        cfg.adv_interval = 0;
        assert!(matches!(run_sim(&cfg), Err(SimError::Config(_))));
        let mut cfg = one_beacon((1.0, 1.0), &["A"]);
        cfg.user[0].waypoints = vec![(500.0, 1.0)];
        assert!(cfg.validate().is_err());
        let mut cfg = one_beacon((1.0, 1.0), &["A"]);
        cfg.beacon[0].policy = "A AND".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_scenario_loads_and_round_trips() {
        let cfg = SimConfig::canonical();
        assert_eq!(cfg.beacon.len(), 3);
        assert_eq!(cfg.user.len() + cfg.attacker.len(), 5);
        assert_eq!(SimConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn advertisement_schedule() {
        let mut cfg = one_beacon((1.0, 1.0), &["A"]);
        cfg.time_step = 2;
        cfg.adv_interval = 5;
        // t = 0, 2, 4, 6, 8, 10, 12 -> emits at 0, 6 (crossed 5), 10
        let due: Vec<u64> = (0..7).filter(|&s| cfg.advertises_at(s)).collect();
        assert_eq!(due, vec![0, 3, 5]);
    }
}

#[cfg(test)]
mod canonical_tests {
    use super::*;

    #[test]
    fn canonical_run_audits_clean() {
        let cfg = SimConfig::canonical();
        let out = run_sim(&cfg).unwrap();
        let report = audit(&cfg, &out.events);
        assert!(report.is_clean());
        assert!(report.dwells_checked > 0);
    }
}
