//! Operator commands. Every report line on stdout starts with an upper-case
//! tag naming the command, followed by `key=value` fields.
//!
//! Exit codes: 0 success (including a NOT_AUTHORIZED or REJECTED answer),
//! 1 operational failure, 2 usage error. Relative paths resolve against
//! `--dir` / `LASO_DIR`. Secrets are only ever read from files.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::abe::{keygen, setup, AttributeKey, MasterSecret, PublicParams};
use crate::crypto::{password_digest, Digest, EpochClock, SeedOwner, TimeSource, TokenSeed};
use crate::directory::{BeaconId, BeaconRecord, Directory, UserRecord};
use crate::group::{GroupSuite, MERSENNE_61};
use crate::policy::parse_policy;
use crate::protocol::{
    backend_verify_bytes, build_broadcast, build_sign_on, client_extract_nonce, BeaconBroadcast,
    ProtocolError, ReplayCache, VerifierConfig, DEFAULT_BEACON_PERIOD, DEFAULT_CNONCE_PERIOD,
    DEFAULT_WINDOW,
};
use crate::sim::{audit, events_to_jsonl, run_sim, AuditReport, SimConfig, SimMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const PARAMS_FILE: &str = "params.bin";
pub const MASTER_FILE: &str = "master.key";
pub const STORE_FILE: &str = "directory.toml";
pub const REPLAY_CACHE_FILE: &str = "replay-cache.json";

#[derive(Debug, Parser)]
#[command(name = "laso", version, about = "Location-aware sign-on tools")]
pub struct Cli {
    /// Base directory for relative paths.
    #[arg(long, env = "LASO_DIR", global = true, default_value = ".")]
    pub dir: PathBuf,
    /// Directory store file.
    #[arg(long, global = true, default_value = STORE_FILE)]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create public parameters and the master secret.
    Setup {
        #[arg(long)]
        out: PathBuf,
        /// Prime modulus of the group.
        #[arg(long, default_value_t = MERSENNE_61)]
        modulus: u64,
        /// Deterministic randomness, for tests.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Issue an attribute key.
    Keygen {
        /// Comma-separated attributes.
        #[arg(long, value_delimiter = ',', required = true)]
        attrs: Vec<String>,
        #[arg(long)]
        user: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        authority: AuthorityFiles,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Manage registered users.
    #[command(subcommand)]
    User(UserCommand),
    /// Manage registered beacons.
    #[command(subcommand)]
    Beacon(BeaconCommand),
    /// Emit one beacon broadcast to a file.
    Broadcast {
        #[arg(long)]
        beacon: BeaconId,
        #[arg(long)]
        epoch: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = PARAMS_FILE)]
        params: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Try to recover the nonce from a broadcast.
    Extract {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = PARAMS_FILE)]
        params: PathBuf,
    },
    /// Build a location sign-on from a received broadcast.
    Signon {
        #[arg(long)]
        user: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        password_file: PathBuf,
        /// c-nonce seed provisioned by `user add`.
        #[arg(long)]
        seed_file: PathBuf,
        /// Device clock in seconds; defaults to system time.
        #[arg(long)]
        time: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_CNONCE_PERIOD)]
        cnonce_period: u64,
        #[arg(long, default_value = PARAMS_FILE)]
        params: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify a sign-on against the store and record the location.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        /// Backend clock in seconds; defaults to system time.
        #[arg(long)]
        time: Option<u64>,
        #[arg(long, default_value = REPLAY_CACHE_FILE)]
        replay_cache: PathBuf,
        #[command(flatten)]
        periods: Periods,
    },
    /// Run a simulation scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        /// Optional line-delimited JSON event log.
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct AuthorityFiles {
    #[arg(long, default_value = PARAMS_FILE)]
    pub params: PathBuf,
    #[arg(long, default_value = MASTER_FILE)]
    pub master: PathBuf,
}

#[derive(Debug, Args)]
pub struct Periods {
    #[arg(long, default_value_t = DEFAULT_BEACON_PERIOD)]
    pub beacon_period: u64,
    #[arg(long, default_value_t = DEFAULT_CNONCE_PERIOD)]
    pub cnonce_period: u64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: u64,
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    Add {
        #[arg(long)]
        name: String,
        #[arg(long)]
        password_file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        attrs: Vec<String>,
        /// Where to write the device's c-nonce seed; default `<name>.seed`.
        #[arg(long)]
        seed_out: Option<PathBuf>,
        #[arg(long, default_value = PARAMS_FILE)]
        params: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum BeaconCommand {
    Add {
        #[arg(long)]
        id: BeaconId,
        #[arg(long)]
        policy: String,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        #[arg(long)]
        range: f64,
        #[arg(long, default_value = PARAMS_FILE)]
        params: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replace a beacon's policy; no keys are reissued.
    SetPolicy {
        #[arg(long)]
        id: BeaconId,
        #[arg(long)]
        policy: String,
    },
    List,
}

#[derive(Debug)]
pub struct CliError(pub String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn fail(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError(format!("{context}: {e}"))
}

/// Parses `argv` and runs the command, writing the report to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

struct Ctx<'a> {
    dir: &'a Path,
    store: PathBuf,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn read(&self, p: &Path) -> Result<Vec<u8>, CliError> {
        let path = self.path(p);
        std::fs::read(&path).map_err(|e| fail(path.display(), e))
    }

    fn write(&self, p: &Path, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(p);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| fail(parent.display(), e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| fail(path.display(), e))?;
        Ok(path)
    }

    fn params(&self, p: &Path) -> Result<PublicParams, CliError> {
        PublicParams::from_bytes(&self.read(p)?).map_err(|e| fail(p.display(), e))
    }

    fn key(&self, p: &Path) -> Result<AttributeKey, CliError> {
        AttributeKey::from_bytes(&self.read(p)?).map_err(|e| fail(p.display(), e))
    }

    fn broadcast(&self, p: &Path) -> Result<BeaconBroadcast, CliError> {
        BeaconBroadcast::from_bytes(&self.read(p)?).map_err(|e| fail(p.display(), e))
    }

    /// Loads the store, or starts an empty one bound to the suite in `params`.
    fn store_or_new(&self, params: &Path) -> Result<Directory, CliError> {
        if self.store.exists() {
            self.load_store()
        } else {
            Ok(Directory::new(self.params(params)?.suite.id()))
        }
    }

    fn load_store(&self) -> Result<Directory, CliError> {
        Directory::load(&self.store).map_err(|e| CliError(e.to_string()))
    }

    fn save_store(&self, dir: &Directory) -> Result<(), CliError> {
        dir.save(&self.store).map_err(|e| CliError(e.to_string()))
    }
}

fn rng_from(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn system_time() -> u64 {
    TimeSource::System.now()
}

/// File contents minus one trailing line break.
fn read_secret(ctx: &Ctx<'_>, p: &Path) -> Result<Vec<u8>, CliError> {
    let mut bytes = ctx.read(p)?;
    if bytes.last() == Some(&b'\n') {
        bytes.pop();
        if bytes.last() == Some(&b'\r') {
            bytes.pop();
        }
    }
    if bytes.is_empty() {
        return Err(CliError(format!("{}: empty secret file", p.display())));
    }
    Ok(bytes)
}

fn read_seed_file(ctx: &Ctx<'_>, p: &Path) -> Result<TokenSeed, CliError> {
    let text = String::from_utf8(read_secret(ctx, p)?).map_err(|e| fail(p.display(), e))?;
    let bytes = hex::decode(text.trim()).map_err(|e| fail(p.display(), e))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| CliError(format!("{}: seed must be 64 hex digits", p.display())))?;
    Ok(TokenSeed::new(arr, SeedOwner::User))
}

fn attr_set(attrs: &[String]) -> BTreeSet<String> {
    attrs.iter().map(|a| a.trim().to_string()).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    window: u64,
    entries: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    epoch: u64,
}

fn load_cache(path: &Path, window: u64) -> Result<ReplayCache, CliError> {
    let mut cache = ReplayCache::new(window);
    if !path.exists() {
        return Ok(cache);
    }
    let text = std::fs::read_to_string(path).map_err(|e| fail(path.display(), e))?;
    let file: CacheFile = serde_json::from_str(&text).map_err(|e| fail(path.display(), e))?;
    for entry in file.entries {
        let bytes = hex::decode(&entry.digest).map_err(|e| fail(path.display(), e))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CliError(format!("{}: bad digest length", path.display())))?;
        cache.insert(Digest(arr), entry.epoch);
    }
    Ok(cache)
}

fn save_cache(path: &Path, cache: &ReplayCache, window: u64) -> Result<(), CliError> {
    let file = CacheFile {
        window,
        entries: cache
            .entries()
            .map(|(d, e)| CacheEntry {
                digest: d.to_hex(),
                epoch: e,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("cache serializes");
    std::fs::write(path, text).map_err(|e| fail(path.display(), e))
}

#[derive(Serialize)]
struct SimReport<'a> {
    seed: u64,
    duration_steps: u64,
    metrics: &'a SimMetrics,
    audit: &'a AuditReport,
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Ctx {
        dir: &cli.dir,
        store: if cli.store.is_absolute() {
            cli.store.clone()
        } else {
            cli.dir.join(&cli.store)
        },
    };
    let report = |out: &mut dyn Write, line: String| -> Result<(), CliError> {
        writeln!(out, "{line}").map_err(|e| fail("stdout", e))
    };

    match &cli.command {
        Command::Setup {
            out: dest,
            modulus,
            seed,
        } => {
            let suite = GroupSuite::oracle(*modulus).map_err(|e| fail("modulus", e))?;
            let (pp, msk) = setup(&suite, &mut rng_from(*seed));
            let p = ctx.write(&dest.join(PARAMS_FILE), &pp.to_bytes())?;
            let m = ctx.write(&dest.join(MASTER_FILE), &msk.to_bytes())?;
            report(
                out,
                format!(
                    "SETUP suite={} params={} master={}",
                    suite.id(),
                    p.display(),
                    m.display()
                ),
            )
        }
        Command::Keygen {
            attrs,
            user,
            out: dest,
            authority,
            seed,
        } => {
            let pp = ctx.params(&authority.params)?;
            let msk = MasterSecret::from_bytes(&ctx.read(&authority.master)?)
                .map_err(|e| fail(authority.master.display(), e))?;
            let attrs = attr_set(attrs);
            let key =
                keygen(&msk, &pp, &attrs, &mut rng_from(*seed)).map_err(|e| fail("keygen", e))?;
            let p = ctx.write(dest, &key.to_bytes())?;
            let list: Vec<_> = attrs.into_iter().collect();
            report(
                out,
                format!(
                    "KEYGEN user={user} attrs={} out={}",
                    list.join(","),
                    p.display()
                ),
            )
        }
        Command::User(UserCommand::Add {
            name,
            password_file,
            attrs,
            seed_out,
            params,
            seed,
        }) => {
            let mut dir = ctx.store_or_new(params)?;
            let password = read_secret(&ctx, password_file)?;
            let cnonce_seed = TokenSeed::random(SeedOwner::User, &mut rng_from(*seed));
            let record = UserRecord {
                username: name.clone(),
                password_digest: password_digest(&password),
                cnonce_seed: cnonce_seed.clone(),
                attrs: attr_set(attrs),
            };
            dir.add_user(record).map_err(|e| CliError(e.to_string()))?;
            let seed_path = seed_out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{name}.seed")));
            let seed_hex = format!("{}\n", hex::encode(cnonce_seed.expose_secret()));
            let p = ctx.write(&seed_path, seed_hex.as_bytes())?;
            ctx.save_store(&dir)?;
            report(
                out,
                format!("USER added name={name} seed_file={}", p.display()),
            )
        }
        Command::User(UserCommand::List) => {
            let dir = ctx.load_store()?;
            for u in dir.users() {
                let attrs: Vec<_> = u.attrs.iter().cloned().collect();
                report(
                    out,
                    format!("USER name={} attrs={}", u.username, attrs.join(",")),
                )?;
            }
            Ok(())
        }
        Command::Beacon(BeaconCommand::Add {
            id,
            policy,
            x,
            y,
            range,
            params,
            seed,
        }) => {
            let mut dir = ctx.store_or_new(params)?;
            let policy = parse_policy(policy).map_err(|e| fail("policy", e))?;
            dir.add_beacon(BeaconRecord {
                id: *id,
                seed: TokenSeed::random(SeedOwner::Beacon, &mut rng_from(*seed)),
                policy: policy.clone(),
                x: *x,
                y: *y,
                range_m: *range,
            })
            .map_err(|e| CliError(e.to_string()))?;
            ctx.save_store(&dir)?;
            report(
                out,
                format!("BEACON added id={id} policy={:?}", policy.to_string()),
            )
        }
        Command::Beacon(BeaconCommand::SetPolicy { id, policy }) => {
            let mut dir = ctx.load_store()?;
            let policy = parse_policy(policy).map_err(|e| fail("policy", e))?;
            if !dir.set_beacon_policy(id, policy.clone()) {
                return Err(CliError(format!("unknown beacon {id}")));
            }
            ctx.save_store(&dir)?;
            report(
                out,
                format!("BEACON updated id={id} policy={:?}", policy.to_string()),
            )
        }
        Command::Beacon(BeaconCommand::List) => {
            let dir = ctx.load_store()?;
            for b in dir.beacons() {
                report(
                    out,
                    format!(
                        "BEACON id={} x={} y={} range={} policy={:?}",
                        b.id,
                        b.x,
                        b.y,
                        b.range_m,
                        b.policy.to_string()
                    ),
                )?;
            }
            Ok(())
        }
        Command::Broadcast {
            beacon,
            epoch,
            out: dest,
            params,
            seed,
        } => {
            let pp = ctx.params(params)?;
            let dir = ctx.load_store()?;
            let record = dir
                .lookup_beacon(beacon)
                .ok_or_else(|| CliError(format!("unknown beacon {beacon}")))?;
            let bb = build_broadcast(record, &pp, *epoch, &mut rng_from(*seed))
                .map_err(|e| fail("broadcast", e))?;
            let bytes = bb.to_bytes();
            let p = ctx.write(dest, &bytes)?;
            report(
                out,
                format!(
                    "BROADCAST beacon={beacon} epoch={epoch} bytes={} out={}",
                    bytes.len(),
                    p.display()
                ),
            )
        }
        Command::Extract { key, input, params } => {
            let pp = ctx.params(params)?;
            let key = ctx.key(key)?;
            let bb = ctx.broadcast(input)?;
            match client_extract_nonce(&bb, &pp, &key) {
                Ok(_) => report(
                    out,
                    format!(
                        "EXTRACT AUTHORIZED beacon={} epoch={}",
                        bb.beacon_id, bb.epoch
                    ),
                ),
                Err(ProtocolError::NotAuthorized) => report(
                    out,
                    format!(
                        "EXTRACT NOT_AUTHORIZED beacon={} epoch={}",
                        bb.beacon_id, bb.epoch
                    ),
                ),
                Err(e) => Err(fail("extract", e)),
            }
        }
        Command::Signon {
            user,
            input,
            out: dest,
            key,
            password_file,
            seed_file,
            time,
            cnonce_period,
            params,
            seed,
        } => {
            let pp = ctx.params(params)?;
            let key = ctx.key(key)?;
            let bb = ctx.broadcast(input)?;
            let nonce = client_extract_nonce(&bb, &pp, &key).map_err(|e| fail("extract", e))?;
            let pw = password_digest(&read_secret(&ctx, password_file)?);
            let user_seed = read_seed_file(&ctx, seed_file)?;
            let clock = EpochClock::manual(*cnonce_period, time.unwrap_or_else(system_time))
                .map_err(|e| fail("cnonce-period", e))?;
            let msg = build_sign_on(
                user,
                &pw,
                &user_seed,
                &nonce,
                bb.beacon_id,
                bb.epoch,
                &clock,
                &mut rng_from(*seed),
            )
            .map_err(|e| fail("signon", e))?;
            let bytes = msg.to_bytes();
            let p = ctx.write(dest, &bytes)?;
            report(
                out,
                format!(
                    "SIGNON user={user} beacon={} epoch={} bytes={} out={}",
                    bb.beacon_id,
                    bb.epoch,
                    bytes.len(),
                    p.display()
                ),
            )
        }
        Command::Verify {
            input,
            time,
            replay_cache,
            periods,
        } => {
            let cfg = VerifierConfig {
                beacon_period: periods.beacon_period,
                cnonce_period: periods.cnonce_period,
                window: periods.window,
            };
            if cfg.beacon_period == 0 || cfg.cnonce_period == 0 {
                return Err(CliError("periods must be > 0".into()));
            }
            let bytes = ctx.read(input)?;
            let mut dir = ctx.load_store()?;
            let cache_path = ctx.path(replay_cache);
            let mut cache = load_cache(&cache_path, cfg.window)?;
            let now = time.unwrap_or_else(system_time);
            let result = backend_verify_bytes(&bytes, &mut dir, now, &mut cache, &cfg);
            if result.is_accepted() {
                ctx.save_store(&dir)?;
                save_cache(&cache_path, &cache, cfg.window)?;
            }
            report(out, format!("VERIFY {result}"))
        }
        Command::Simulate {
            scenario,
            seed,
            report: dest,
            events,
        } => {
            let mut cfg =
                SimConfig::load(&ctx.path(scenario)).map_err(|e| CliError(e.to_string()))?;
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            let result = run_sim(&cfg).map_err(|e| CliError(e.to_string()))?;
            let findings = audit(&cfg, &result.events);
            let body = SimReport {
                seed: cfg.seed,
                duration_steps: cfg.duration_steps,
                metrics: &result.metrics,
                audit: &findings,
            };
            let mut text = serde_json::to_string_pretty(&body).expect("report serializes");
            text.push('\n');
            let p = ctx.write(dest, text.as_bytes())?;
            if let Some(ev) = events {
                ctx.write(ev, events_to_jsonl(&result.events).as_bytes())?;
            }
            let m = &result.metrics;
            report(
                out,
                format!(
                    "SIMULATE seed={} broadcasts={} accepted={} rejected={} audit={} report={}",
                    cfg.seed,
                    m.broadcasts,
                    m.accepted,
                    m.rejected_total(),
                    if findings.is_clean() {
                        "clean"
                    } else {
                        "findings"
                    },
                    p.display()
                ),
            )
        }
    }
}
