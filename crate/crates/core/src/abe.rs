//! Ciphertext-policy ABE as a key-encapsulation mechanism (Waters-style,
//! symmetric pairing).
//!
//! * setup: draw `alpha`, `a`; publish `g`, `g^a`, `e(g,g)^alpha`; keep `g^alpha`, `a`.
//! * keygen(S): draw `t`; `K = g^alpha * g^(a t)`, `L = g^t`, `K_x = H(x)^t` for x in S.
//! * encapsulate(policy): draw `Z` in GT and `v = (s, y_2..y_n)`; per LSSS row i,
//!   `lambda_i = M_i . v`, draw `r_i`; `C_i = g^(a lambda_i) * H(rho(i))^(-r_i)`,
//!   `D_i = g^(r_i)`; `C = Z * e(g,g)^(alpha s)`, `C' = g^s`.
//! * decapsulate: with recombination coefficients `w_i`,
//!   `e(C', K) / prod (e(C_i, L) * e(D_i, K_rho(i)))^(w_i) = e(g,g)^(alpha s)`.
//!
//! Binary formats (all integers big-endian, strings/lists `u32`-length-prefixed,
//! group elements and scalars 8 bytes each):
//!
//! ```text
//! public params  "LASP" 0x01 suite_id g g_a egg_alpha
//! master secret  "LASM" 0x01 suite_id g_alpha a
//! attribute key  "LASK" 0x01 suite_id K L n { attr K_attr }*n   (attrs sorted)
//! ciphertext     "LASC" 0x01 suite_id policy_text C C' n { C_i D_i }*n
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::group::{G1Element, GroupError, GroupSuite, GtElement, Scalar};
use crate::policy::{
    compile_lsss, find_witness, is_valid_attribute, parse_policy, AccessPolicy, LsssProgram,
    PolicyError, SatisfactionWitness,
};

pub const FORMAT_VERSION: u8 = 1;
pub const PARAMS_MAGIC: &str = "LASP";
pub const MASTER_MAGIC: &str = "LASM";
pub const KEY_MAGIC: &str = "LASK";
pub const CIPHERTEXT_MAGIC: &str = "LASC";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbeError {
    #[error("attributes do not satisfy the ciphertext policy")]
    NotAuthorized,
    #[error("attribute set must be non-empty")]
    EmptyAttributes,
    #[error("invalid attribute name {0:?}")]
    InvalidAttribute(String),
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),
    #[error("witness does not reconstruct the target vector")]
    BadWitness,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type SharedSecret = GtElement;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicParams {
    pub suite: GroupSuite,
    pub g: G1Element,
    pub g_a: G1Element,
    pub egg_alpha: GtElement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterSecret {
    pub suite: GroupSuite,
    pub g_alpha: G1Element,
    pub a: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeKey {
    pub suite: GroupSuite,
    pub k: G1Element,
    pub l: G1Element,
    /// `H(x)^t` per attribute; its key set is the key's attribute set.
    pub k_x: BTreeMap<String, G1Element>,
}

impl AttributeKey {
    pub fn attrs(&self) -> BTreeSet<String> {
        self.k_x.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextRow {
    pub c: G1Element,
    pub d: G1Element,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbeCiphertext {
    pub suite: GroupSuite,
    pub policy_text: String,
    pub c_kem: GtElement,
    pub c_prime: G1Element,
    pub rows: Vec<CiphertextRow>,
}

impl AbeCiphertext {
    pub fn policy(&self) -> Result<AccessPolicy, AbeError> {
        Ok(parse_policy(&self.policy_text)?)
    }

    /// Parses the policy and checks the row count against its LSSS program.
    pub fn program(&self) -> Result<LsssProgram, AbeError> {
        let program = compile_lsss(&self.policy()?);
        if program.n_rows() != self.rows.len() {
            return Err(AbeError::MalformedCiphertext(format!(
                "{} rows for a policy with {} leaves",
                self.rows.len(),
                program.n_rows()
            )));
        }
        Ok(program)
    }
}

fn ensure_suite(expected: &GroupSuite, found: &GroupSuite) -> Result<(), AbeError> {
    if expected == found {
        Ok(())
    } else {
        Err(GroupError::SuiteMismatch {
            expected: expected.id(),
            found: found.id(),
        }
        .into())
    }
}

/// Draws `alpha` then `a` (in that order) from `rng`.
pub fn setup<R: RngCore + CryptoRng + ?Sized>(
    suite: &GroupSuite,
    rng: &mut R,
) -> (PublicParams, MasterSecret) {
    let alpha = suite.random_scalar(rng);
    let a = suite.random_scalar(rng);
    let g = suite.g();
    let g_alpha = suite.g1_exp(&g, alpha).expect("same suite");
    let g_a = suite.g1_exp(&g, a).expect("same suite");
    let egg_alpha = suite.pairing(&g, &g_alpha).expect("same suite");
    (
        PublicParams {
            suite: suite.clone(),
            g,
            g_a,
            egg_alpha,
        },
        MasterSecret {
            suite: suite.clone(),
            g_alpha,
            a,
        },
    )
}

pub fn keygen<R: RngCore + CryptoRng + ?Sized>(
    msk: &MasterSecret,
    pp: &PublicParams,
    attrs: &BTreeSet<String>,
    rng: &mut R,
) -> Result<AttributeKey, AbeError> {
    ensure_suite(&pp.suite, &msk.suite)?;
    if attrs.is_empty() {
        return Err(AbeError::EmptyAttributes);
    }
    if let Some(bad) = attrs.iter().find(|a| !is_valid_attribute(a)) {
        return Err(AbeError::InvalidAttribute(bad.clone()));
    }
    let s = &pp.suite;
    let t = s.random_scalar(rng);
    let k = s.g1_op(&msk.g_alpha, &s.g1_exp(&pp.g_a, t)?)?;
    let l = s.g1_exp(&pp.g, t)?;
    let k_x = attrs
        .iter()
        .map(|x| Ok((x.clone(), s.g1_exp(&s.hash_to_g1(x.as_bytes()), t)?)))
        .collect::<Result<_, AbeError>>()?;
    Ok(AttributeKey {
        suite: s.clone(),
        k,
        l,
        k_x,
    })
}

/// Draw order: `z` (Z = gt^z), `s`, `y_2..y_n`, then `r_1..r_m`.
pub fn encapsulate<R: RngCore + CryptoRng + ?Sized>(
    pp: &PublicParams,
    policy: &AccessPolicy,
    rng: &mut R,
) -> Result<(AbeCiphertext, SharedSecret), AbeError> {
    let s = &pp.suite;
    let program = compile_lsss(policy);
    let z = s.random_scalar(rng);
    let shared = s.gt_exp(&s.gt(), z)?;
    let v: Vec<Scalar> = (0..program.n_cols())
        .map(|_| s.random_scalar(rng))
        .collect();
    let secret = v[0];

    let mut rows = Vec::with_capacity(program.n_rows());
    for i in 0..program.n_rows() {
        let lambda = program.share(s, i, &v);
        let r = s.random_scalar(rng);
        let h = s.hash_to_g1(program.rho(i).as_bytes());
        let c = s.g1_op(&s.g1_exp(&pp.g_a, lambda)?, &s.g1_inv(&s.g1_exp(&h, r)?)?)?;
        let d = s.g1_exp(&pp.g, r)?;
        rows.push(CiphertextRow { c, d });
    }
    let c_kem = s.gt_op(&shared, &s.gt_exp(&pp.egg_alpha, secret)?)?;
    let c_prime = s.g1_exp(&pp.g, secret)?;
    Ok((
        AbeCiphertext {
            suite: s.clone(),
            policy_text: policy.to_string(),
            c_kem,
            c_prime,
            rows,
        },
        shared,
    ))
}

/// Recovers the encapsulated secret, or `NotAuthorized` when the key's
/// attributes cannot satisfy the policy. Satisfaction is decided before any
/// group operation.
pub fn decapsulate(
    pp: &PublicParams,
    key: &AttributeKey,
    ct: &AbeCiphertext,
) -> Result<SharedSecret, AbeError> {
    ensure_suite(&pp.suite, &key.suite)?;
    ensure_suite(&pp.suite, &ct.suite)?;
    let program = ct.program()?;
    let witness = find_witness(&program, &key.attrs(), &pp.suite).ok_or(AbeError::NotAuthorized)?;
    decapsulate_with_witness(pp, key, ct, &program, &witness)
}

/// Decapsulation with caller-chosen recombination coefficients.
pub fn decapsulate_with_witness(
    pp: &PublicParams,
    key: &AttributeKey,
    ct: &AbeCiphertext,
    program: &LsssProgram,
    witness: &SatisfactionWitness,
) -> Result<SharedSecret, AbeError> {
    let s = &pp.suite;
    if !witness.reconstructs_target(program, s) {
        return Err(AbeError::BadWitness);
    }
    let mut denom = s.gt_identity();
    for (&i, &w) in witness.rows.iter().zip(&witness.coefficients) {
        let row = ct
            .rows
            .get(i)
            .ok_or_else(|| AbeError::MalformedCiphertext(format!("row {i} missing")))?;
        let kx = key.k_x.get(program.rho(i)).ok_or(AbeError::NotAuthorized)?;
        let term = s.gt_op(&s.pairing(&row.c, &key.l)?, &s.pairing(&row.d, kx)?)?;
        denom = s.gt_op(&denom, &s.gt_exp(&term, w)?)?;
    }
    let blinding = s.gt_div(&s.pairing(&ct.c_prime, &key.k)?, &denom)?;
    Ok(s.gt_div(&ct.c_kem, &blinding)?)
}

fn read_suite(r: &mut Reader<'_>) -> Result<GroupSuite, AbeError> {
    let id = r.str("suite_id")?;
    Ok(GroupSuite::from_id(id)?)
}

fn read_g1(r: &mut Reader<'_>, s: &GroupSuite, field: &'static str) -> Result<G1Element, AbeError> {
    let at = r.offset();
    s.g1_from_bytes(r.array(field)?)
        .map_err(|e| r.invalid(field, at, e.to_string()).into())
}

fn read_gt(r: &mut Reader<'_>, s: &GroupSuite, field: &'static str) -> Result<GtElement, AbeError> {
    let at = r.offset();
    s.gt_from_bytes(r.array(field)?)
        .map_err(|e| r.invalid(field, at, e.to_string()).into())
}

impl PublicParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .raw(PARAMS_MAGIC.as_bytes())
            .u8(FORMAT_VERSION)
            .str(&self.suite.id())
            .raw(&self.g.to_bytes())
            .raw(&self.g_a.to_bytes())
            .raw(&self.egg_alpha.to_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.magic(PARAMS_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let suite = read_suite(&mut r)?;
        let g = read_g1(&mut r, &suite, "g")?;
        let g_a = read_g1(&mut r, &suite, "g_a")?;
        let egg_alpha = read_gt(&mut r, &suite, "egg_alpha")?;
        r.finish()?;
        Ok(Self {
            suite,
            g,
            g_a,
            egg_alpha,
        })
    }
}

impl MasterSecret {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .raw(MASTER_MAGIC.as_bytes())
            .u8(FORMAT_VERSION)
            .str(&self.suite.id())
            .raw(&self.g_alpha.to_bytes())
            .u64(self.a.value())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.magic(MASTER_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let suite = read_suite(&mut r)?;
        let g_alpha = read_g1(&mut r, &suite, "g_alpha")?;
        let at = r.offset();
        let a = r.u64("a")?;
        if a >= suite.modulus() {
            return Err(r.invalid("a", at, "scalar out of range").into());
        }
        r.finish()?;
        Ok(Self {
            suite,
            g_alpha,
            a: Scalar(a),
        })
    }

    /// `e(g, g^alpha) = egg_alpha` and `g^a = g_a`.
    pub fn is_consistent_with(&self, pp: &PublicParams) -> bool {
        self.suite == pp.suite
            && pp.suite.pairing(&pp.g, &self.g_alpha).ok() == Some(pp.egg_alpha)
            && pp.suite.g1_exp(&pp.g, self.a).ok() == Some(pp.g_a)
    }
}

impl AttributeKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(KEY_MAGIC.as_bytes())
            .u8(FORMAT_VERSION)
            .str(&self.suite.id())
            .raw(&self.k.to_bytes())
            .raw(&self.l.to_bytes())
            .u32(self.k_x.len() as u32);
        for (attr, kx) in &self.k_x {
            w.str(attr).raw(&kx.to_bytes());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.magic(KEY_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let suite = read_suite(&mut r)?;
        let k = read_g1(&mut r, &suite, "K")?;
        let l = read_g1(&mut r, &suite, "L")?;
        let n = r.u32("attr_count")?;
        let mut k_x = BTreeMap::new();
        for _ in 0..n {
            let at = r.offset();
            let attr = r.str("attr")?;
            if !is_valid_attribute(attr) {
                return Err(r
                    .invalid("attr", at, format!("invalid attribute {attr:?}"))
                    .into());
            }
            let kx = read_g1(&mut r, &suite, "K_attr")?;
            if k_x.insert(attr.to_string(), kx).is_some() {
                return Err(r
                    .invalid("attr", at, format!("duplicate attribute {attr:?}"))
                    .into());
            }
        }
        r.finish()?;
        if k_x.is_empty() {
            return Err(AbeError::EmptyAttributes);
        }
        Ok(Self { suite, k, l, k_x })
    }
}

impl AbeCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CIPHERTEXT_MAGIC.as_bytes())
            .u8(FORMAT_VERSION)
            .str(&self.suite.id())
            .str(&self.policy_text)
            .raw(&self.c_kem.to_bytes())
            .raw(&self.c_prime.to_bytes())
            .u32(self.rows.len() as u32);
        for row in &self.rows {
            w.raw(&row.c.to_bytes()).raw(&row.d.to_bytes());
        }
        w.finish()
    }

    /// Rejects ciphertexts whose row count disagrees with their policy.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.magic(CIPHERTEXT_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let suite = read_suite(&mut r)?;
        let policy_text = r.str("policy_text")?.to_string();
        let c_kem = read_gt(&mut r, &suite, "C")?;
        let c_prime = read_g1(&mut r, &suite, "C_prime")?;
        let n = r.u32("row_count")? as usize;
        // Each row is 16 bytes; bound the allocation by what is actually there.
        let mut rows = Vec::with_capacity(n.min(bytes.len() / 16));
        for _ in 0..n {
            let c = read_g1(&mut r, &suite, "C_i")?;
            let d = read_g1(&mut r, &suite, "D_i")?;
            rows.push(CiphertextRow { c, d });
        }
        r.finish()?;
        let ct = Self {
            suite,
            policy_text,
            c_kem,
            c_prime,
            rows,
        };
        ct.program()?;
        Ok(ct)
    }
}
