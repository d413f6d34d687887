use std::path::Path;
use std::process::{Command, Output};

const BEACON: &str = "00112233445566778899aabbccddeeff";
const POLICY: &str = "(role:employee AND floor:3) OR role:admin";

fn laso(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laso"))
        .env("LASO_DIR", dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = laso(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn provision(dir: &Path) {
    ok(dir, &["setup", "--out", ".", "--seed", "1"]);
    std::fs::write(dir.join("alice.pw"), "s3cret-alice\n").unwrap();
    ok(
        dir,
        &[
            "user",
            "add",
            "--name",
            "alice",
            "--password-file",
            "alice.pw",
            "--attrs",
            "role:employee,floor:3",
            "--seed",
            "2",
        ],
    );
    ok(
        dir,
        &[
            "keygen",
            "--attrs",
            "role:employee,floor:3",
            "--user",
            "alice",
            "--out",
            "alice.key",
            "--seed",
            "3",
        ],
    );
    ok(
        dir,
        &[
            "keygen",
            "--attrs",
            "role:visitor",
            "--user",
            "dave",
            "--out",
            "dave.key",
            "--seed",
            "4",
        ],
    );
    ok(
        dir,
        &[
            "beacon", "add", "--id", BEACON, "--policy", POLICY, "--x", "10", "--y", "15",
            "--range", "8", "--seed", "5",
        ],
    );
}

#[test]
fn walk_through_accepts_then_rejects_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    provision(d);
    ok(
        d,
        &[
            "broadcast",
            "--beacon",
            BEACON,
            "--epoch",
            "100",
            "--out",
            "bb.bin",
            "--seed",
            "6",
        ],
    );
    assert!(ok(d, &["extract", "--key", "alice.key", "--in", "bb.bin"])
        .starts_with("EXTRACT AUTHORIZED"));
    ok(
        d,
        &[
            "signon",
            "--user",
            "alice",
            "--in",
            "bb.bin",
            "--out",
            "so.bin",
            "--key",
            "alice.key",
            "--password-file",
            "alice.pw",
            "--seed-file",
            "alice.seed",
            "--time",
            "6010",
        ],
    );
    let v = ok(d, &["verify", "--in", "so.bin", "--time", "6010"]);
    assert_eq!(
        v.trim(),
        format!("VERIFY ACCEPTED user=alice beacon={BEACON} epoch=100")
    );
    let v = ok(d, &["verify", "--in", "so.bin", "--time", "6011"]);
    assert_eq!(v.trim(), "VERIFY REJECTED reason=REPLAY");

    let store = std::fs::read_to_string(d.join("directory.toml")).unwrap();
    assert!(store.contains("[[location]]"));
    assert!(!store.contains("s3cret-alice"));
}

#[test]
fn non_satisfying_key_is_an_answer_not_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    provision(d);
    ok(
        d,
        &[
            "broadcast",
            "--beacon",
            BEACON,
            "--epoch",
            "7",
            "--out",
            "bb.bin",
        ],
    );
    let out = ok(d, &["extract", "--key", "dave.key", "--in", "bb.bin"]);
    assert!(out.starts_with("EXTRACT NOT_AUTHORIZED"), "{out}");
}

#[test]
fn policy_swap_needs_no_new_key() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    provision(d);
    ok(
        d,
        &[
            "beacon",
            "set-policy",
            "--id",
            BEACON,
            "--policy",
            "role:admin",
        ],
    );
    ok(
        d,
        &[
            "broadcast",
            "--beacon",
            BEACON,
            "--epoch",
            "7",
            "--out",
            "bb.bin",
        ],
    );
    let out = ok(d, &["extract", "--key", "alice.key", "--in", "bb.bin"]);
    assert!(out.starts_with("EXTRACT NOT_AUTHORIZED"), "{out}");
}

#[test]
fn listings_use_stable_tags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    provision(d);
    let users = ok(d, &["user", "list"]);
    assert_eq!(users.trim(), "USER name=alice attrs=floor:3,role:employee");
    let beacons = ok(d, &["beacon", "list"]);
    assert!(
        beacons.starts_with(&format!("BEACON id={BEACON} ")),
        "{beacons}"
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(laso(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(laso(d, &["keygen", "--user", "x"]).status.code(), Some(2));
    assert_eq!(
        laso(
            d,
            &[
                "beacon", "add", "--id", "zz", "--policy", "A", "--x", "0", "--y", "0", "--range",
                "1"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    let missing = laso(d, &["verify", "--in", "absent.bin", "--time", "0"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));
    assert_eq!(
        laso(d, &["setup", "--out", ".", "--modulus", "100"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn duplicate_user_is_an_operational_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    provision(d);
    let out = laso(
        d,
        &[
            "user",
            "add",
            "--name",
            "alice",
            "--password-file",
            "alice.pw",
            "--attrs",
            "A",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/canonical.toml");
    let a = ok(
        d,
        &[
            "simulate",
            "--scenario",
            scenario,
            "--seed",
            "9",
            "--report",
            "a.json",
            "--events",
            "a.jsonl",
        ],
    );
    ok(
        d,
        &[
            "simulate",
            "--scenario",
            scenario,
            "--seed",
            "9",
            "--report",
            "b.json",
            "--events",
            "b.jsonl",
        ],
    );
    assert!(a.contains("audit=clean"), "{a}");
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("b.jsonl")).unwrap()
    );
}
