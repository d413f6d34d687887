//! Prime-order bilinear group interface.
//!
//! The only instantiation shipped here is the *exponent oracle*: every element
//! of G1 and GT is represented by its discrete logarithm with respect to a
//! fixed generator, so the group operation is addition of exponents and the
//! pairing is multiplication of exponents mod p. This is **insecure** (discrete
//! logs are public) and exists to check the ABE algebra exactly. The suite id
//! says so.

use rand::Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Mersenne prime 2^61 - 1, the default modulus for protocol runs.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is too small (need p >= 3)")]
    ModulusTooSmall(u64),
    #[error("suite mismatch: expected {expected}, found {found}")]
    SuiteMismatch { expected: String, found: String },
    #[error("unknown suite identifier {0:?}")]
    UnknownSuite(String),
    #[error("value {value} out of range for modulus {modulus}")]
    OutOfRange { value: u64, modulus: u64 },
}

/// Which backend a suite uses. Only the oracle exists; a real pairing curve
/// would be a second variant behind the same methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SuiteKind {
    OracleExp,
}

/// Element of Z_p. The modulus lives in the [`GroupSuite`] that operates on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Scalar(pub u64);

impl Scalar {
    pub fn value(self) -> u64 {
        self.0
    }
}

/// Element of the source group G1 (oracle: its exponent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct G1Element {
    modulus: u64,
    exp: u64,
}

/// Element of the target group GT (oracle: its exponent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GtElement {
    modulus: u64,
    exp: u64,
}

impl G1Element {
    /// Discrete log relative to `g`. Only meaningful for the oracle suite.
    pub fn exponent(&self) -> u64 {
        self.exp
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        self.exp.to_be_bytes()
    }
}

impl GtElement {
    pub fn exponent(&self) -> u64 {
        self.exp
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        self.exp.to_be_bytes()
    }
}

/// A configured group: modulus, generators, identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupSuite {
    kind: SuiteKind,
    modulus: u64,
}

impl GroupSuite {
    /// Oracle suite over Z_p. Fails unless `p` is prime.
    pub fn oracle(p: u64) -> Result<Self, GroupError> {
        if p < 3 {
            return Err(GroupError::ModulusTooSmall(p));
        }
        if !is_prime(p) {
            return Err(GroupError::NotPrime(p));
        }
        Ok(Self {
            kind: SuiteKind::OracleExp,
            modulus: p,
        })
    }

    /// Default protocol suite, p = 2^61 - 1.
    pub fn default_oracle() -> Self {
        Self::oracle(MERSENNE_61).expect("2^61-1 is prime")
    }

    /// Rebuilds a suite from its identifier string.
    pub fn from_id(id: &str) -> Result<Self, GroupError> {
        let p = id
            .strip_prefix("oracle-exp/p=")
            .and_then(|d| d.parse::<u64>().ok())
            .ok_or_else(|| GroupError::UnknownSuite(id.to_string()))?;
        Self::oracle(p)
    }

    pub fn kind(&self) -> SuiteKind {
        self.kind
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// `oracle-exp/p=<decimal>`; embedded in all serialized key material.
    pub fn id(&self) -> String {
        match self.kind {
            SuiteKind::OracleExp => format!("oracle-exp/p={}", self.modulus),
        }
    }

    pub fn g(&self) -> G1Element {
        G1Element {
            modulus: self.modulus,
            exp: 1,
        }
    }

    pub fn gt(&self) -> GtElement {
        GtElement {
            modulus: self.modulus,
            exp: 1,
        }
    }

    pub fn g1_identity(&self) -> G1Element {
        G1Element {
            modulus: self.modulus,
            exp: 0,
        }
    }

    pub fn gt_identity(&self) -> GtElement {
        GtElement {
            modulus: self.modulus,
            exp: 0,
        }
    }

    /// `g^k` for the oracle suite; `k` is reduced mod p.
    pub fn g1_from_exponent(&self, k: u64) -> G1Element {
        G1Element {
            modulus: self.modulus,
            exp: k % self.modulus,
        }
    }

    pub fn gt_from_exponent(&self, k: u64) -> GtElement {
        GtElement {
            modulus: self.modulus,
            exp: k % self.modulus,
        }
    }

    /// Decodes a canonical 8-byte element encoding, rejecting values >= p.
    pub fn g1_from_bytes(&self, bytes: [u8; 8]) -> Result<G1Element, GroupError> {
        let exp = self.check_range(u64::from_be_bytes(bytes))?;
        Ok(G1Element {
            modulus: self.modulus,
            exp,
        })
    }

    pub fn gt_from_bytes(&self, bytes: [u8; 8]) -> Result<GtElement, GroupError> {
        let exp = self.check_range(u64::from_be_bytes(bytes))?;
        Ok(GtElement {
            modulus: self.modulus,
            exp,
        })
    }

    pub fn scalar(&self, v: u64) -> Scalar {
        Scalar(v % self.modulus)
    }

    /// Maps a signed small integer (LSSS entries) into Z_p.
    pub fn scalar_from_i64(&self, v: i64) -> Scalar {
        Scalar(v.rem_euclid(self.modulus as i64) as u64)
    }

    fn check_range(&self, v: u64) -> Result<u64, GroupError> {
        if v < self.modulus {
            Ok(v)
        } else {
            Err(GroupError::OutOfRange {
                value: v,
                modulus: self.modulus,
            })
        }
    }

    fn check(&self, modulus: u64) -> Result<(), GroupError> {
        if modulus == self.modulus {
            Ok(())
        } else {
            Err(GroupError::SuiteMismatch {
                expected: self.id(),
                found: format!("oracle-exp/p={modulus}"),
            })
        }
    }

    // Field arithmetic.

    pub fn add(&self, a: Scalar, b: Scalar) -> Scalar {
        Scalar(add_mod(a.0, b.0, self.modulus))
    }

    pub fn sub(&self, a: Scalar, b: Scalar) -> Scalar {
        Scalar(add_mod(
            a.0,
            self.modulus - b.0 % self.modulus,
            self.modulus,
        ))
    }

    pub fn mul(&self, a: Scalar, b: Scalar) -> Scalar {
        Scalar(mul_mod(a.0, b.0, self.modulus))
    }

    pub fn neg(&self, a: Scalar) -> Scalar {
        Scalar((self.modulus - a.0 % self.modulus) % self.modulus)
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self, a: Scalar) -> Option<Scalar> {
        if a.0.is_multiple_of(self.modulus) {
            None
        } else {
            Some(Scalar(pow_mod(a.0, self.modulus - 2, self.modulus)))
        }
    }

    // Group operations.

    pub fn g1_op(&self, a: &G1Element, b: &G1Element) -> Result<G1Element, GroupError> {
        self.check(a.modulus)?;
        self.check(b.modulus)?;
        Ok(G1Element {
            modulus: self.modulus,
            exp: add_mod(a.exp, b.exp, self.modulus),
        })
    }

    pub fn g1_exp(&self, a: &G1Element, k: Scalar) -> Result<G1Element, GroupError> {
        self.check(a.modulus)?;
        Ok(G1Element {
            modulus: self.modulus,
            exp: mul_mod(a.exp, k.0, self.modulus),
        })
    }

    pub fn g1_inv(&self, a: &G1Element) -> Result<G1Element, GroupError> {
        self.check(a.modulus)?;
        Ok(G1Element {
            modulus: self.modulus,
            exp: (self.modulus - a.exp) % self.modulus,
        })
    }

    pub fn gt_op(&self, a: &GtElement, b: &GtElement) -> Result<GtElement, GroupError> {
        self.check(a.modulus)?;
        self.check(b.modulus)?;
        Ok(GtElement {
            modulus: self.modulus,
            exp: add_mod(a.exp, b.exp, self.modulus),
        })
    }

    pub fn gt_exp(&self, a: &GtElement, k: Scalar) -> Result<GtElement, GroupError> {
        self.check(a.modulus)?;
        Ok(GtElement {
            modulus: self.modulus,
            exp: mul_mod(a.exp, k.0, self.modulus),
        })
    }

    pub fn gt_inv(&self, a: &GtElement) -> Result<GtElement, GroupError> {
        self.check(a.modulus)?;
        Ok(GtElement {
            modulus: self.modulus,
            exp: (self.modulus - a.exp) % self.modulus,
        })
    }

    /// `a * b^-1` in GT.
    pub fn gt_div(&self, a: &GtElement, b: &GtElement) -> Result<GtElement, GroupError> {
        let b_inv = self.gt_inv(b)?;
        self.gt_op(a, &b_inv)
    }

    /// Symmetric bilinear map G1 x G1 -> GT. Oracle: exponents multiply.
    pub fn pairing(&self, a: &G1Element, b: &G1Element) -> Result<GtElement, GroupError> {
        self.check(a.modulus)?;
        self.check(b.modulus)?;
        Ok(GtElement {
            modulus: self.modulus,
            exp: mul_mod(a.exp, b.exp, self.modulus),
        })
    }

    /// Deterministic hash onto a non-identity G1 element.
    ///
    /// SHA-256(label) is read as a big-endian integer and reduced mod p. A zero
    /// result is redrawn from SHA-256(label || counter_be32) for counter = 1, 2, ...
    pub fn hash_to_g1(&self, label: &[u8]) -> G1Element {
        let mut counter: u32 = 0;
        loop {
            let mut h = Sha256::new();
            h.update(label);
            if counter > 0 {
                h.update(counter.to_be_bytes());
            }
            let exp = reduce_be(&h.finalize(), self.modulus);
            if exp != 0 {
                return G1Element {
                    modulus: self.modulus,
                    exp,
                };
            }
            counter += 1;
        }
    }

    /// Uniform draw from [0, p).
    pub fn random_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_range(0..self.modulus))
    }

    /// Uniform draw from [1, p).
    pub fn random_nonzero_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_range(1..self.modulus))
    }
}

fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn pow_mod(mut base: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    base %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        e >>= 1;
    }
    acc
}

/// Big-endian byte string reduced mod p.
pub(crate) fn reduce_be(bytes: &[u8], p: u64) -> u64 {
    bytes
        .iter()
        .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % p as u128) as u64
}

/// Deterministic Miller-Rabin, exact for all u64 with these bases.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
