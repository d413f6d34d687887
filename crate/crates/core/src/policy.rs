//! Access policies: a monotone boolean formula over attribute strings, its
//! compilation into a linear secret-sharing program `(M, rho)`, and the
//! recombination-coefficient solver used at decryption time.
//!
//! Grammar (AND binds tighter than OR, keywords case-insensitive):
//!
//! ```text
//! expr   := term (OR term)*
//! term   := factor (AND factor)*
//! factor := ATTR | '(' expr ')'
//! ATTR   := [A-Za-z0-9_:.-]+
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::group::{GroupSuite, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("empty policy")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unbalanced parentheses at offset {offset}")]
    Unbalanced { offset: usize },
}

impl PolicyError {
    /// Byte offset of the failure, where one exists.
    pub fn offset(&self) -> Option<usize> {
        match self {
            PolicyError::Empty => None,
            PolicyError::Syntax { offset, .. } | PolicyError::Unbalanced { offset } => {
                Some(*offset)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AccessPolicy {
    Leaf(String),
    And(Box<AccessPolicy>, Box<AccessPolicy>),
    Or(Box<AccessPolicy>, Box<AccessPolicy>),
}

impl AccessPolicy {
    pub fn leaf(attr: impl Into<String>) -> Self {
        AccessPolicy::Leaf(attr.into())
    }

    pub fn and(l: AccessPolicy, r: AccessPolicy) -> Self {
        AccessPolicy::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: AccessPolicy, r: AccessPolicy) -> Self {
        AccessPolicy::Or(Box::new(l), Box::new(r))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            AccessPolicy::Leaf(_) => 1,
            AccessPolicy::And(l, r) | AccessPolicy::Or(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    /// Leaf depth is 0.
    pub fn depth(&self) -> usize {
        match self {
            AccessPolicy::Leaf(_) => 0,
            AccessPolicy::And(l, r) | AccessPolicy::Or(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Leaves in left-to-right order (this is the LSSS row order).
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            AccessPolicy::Leaf(a) => out.push(a),
            AccessPolicy::And(l, r) | AccessPolicy::Or(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }
}

/// Canonical text form. Parenthesizes only where the left-associative parse
/// would otherwise build a different tree.
impl fmt::Display for AccessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, node: &AccessPolicy, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({node})")
            } else {
                write!(f, "{node}")
            }
        }
        match self {
            AccessPolicy::Leaf(a) => f.write_str(a),
            AccessPolicy::And(l, r) => {
                child(f, l, matches!(**l, AccessPolicy::Or(..)))?;
                f.write_str(" AND ")?;
                child(f, r, !matches!(**r, AccessPolicy::Leaf(_)))
            }
            AccessPolicy::Or(l, r) => {
                child(f, l, false)?;
                f.write_str(" OR ")?;
                child(f, r, matches!(**r, AccessPolicy::Or(..)))
            }
        }
    }
}

impl std::str::FromStr for AccessPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

pub fn is_attribute_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b':' | b'.' | b'-')
}

/// True when `s` is a legal attribute name (and not a keyword).
pub fn is_valid_attribute(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(is_attribute_char)
        && !s.eq_ignore_ascii_case("and")
        && !s.eq_ignore_ascii_case("or")
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Attr(String),
    And,
    Or,
    LParen,
    RParen,
    Eof,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    peeked: Option<(usize, Tok)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            peeked: None,
        }
    }

    fn lex(&mut self) -> Result<(usize, Tok), PolicyError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&b) = self.src.get(self.pos) else {
            return Ok((start, Tok::Eof));
        };
        match b {
            b'(' => {
                self.pos += 1;
                Ok((start, Tok::LParen))
            }
            b')' => {
                self.pos += 1;
                Ok((start, Tok::RParen))
            }
            b if is_attribute_char(b) => {
                while self.pos < self.src.len() && is_attribute_char(self.src[self.pos]) {
                    self.pos += 1;
                }
                // Attribute chars are ASCII so this slice is valid UTF-8.
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let tok = if word.eq_ignore_ascii_case("and") {
                    Tok::And
                } else if word.eq_ignore_ascii_case("or") {
                    Tok::Or
                } else {
                    Tok::Attr(word.to_string())
                };
                Ok((start, tok))
            }
            _ => Err(PolicyError::Syntax {
                offset: start,
                message: "unexpected character".into(),
            }),
        }
    }

    fn peek(&mut self) -> Result<&(usize, Tok), PolicyError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<(usize, Tok), PolicyError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn expr(&mut self, depth: usize) -> Result<AccessPolicy, PolicyError> {
        let mut node = self.term(depth)?;
        while self.peek()?.1 == Tok::Or {
            self.next()?;
            let rhs = self.term(depth)?;
            node = AccessPolicy::or(node, rhs);
        }
        Ok(node)
    }

    fn term(&mut self, depth: usize) -> Result<AccessPolicy, PolicyError> {
        let mut node = self.factor(depth)?;
        while self.peek()?.1 == Tok::And {
            self.next()?;
            let rhs = self.factor(depth)?;
            node = AccessPolicy::and(node, rhs);
        }
        Ok(node)
    }

    fn factor(&mut self, depth: usize) -> Result<AccessPolicy, PolicyError> {
        let (offset, tok) = self.next()?;
        match tok {
            Tok::Attr(a) => Ok(AccessPolicy::Leaf(a)),
            Tok::LParen => {
                let inner = self.expr(depth + 1)?;
                let (close, tok) = self.next()?;
                match tok {
                    Tok::RParen => Ok(inner),
                    Tok::Eof => Err(PolicyError::Syntax {
                        offset: close,
                        message: format!("missing ')' for '(' at offset {offset}"),
                    }),
                    other => Err(PolicyError::Syntax {
                        offset: close,
                        message: format!("expected ')' but found {}", describe(&other)),
                    }),
                }
            }
            Tok::RParen if depth == 0 => Err(PolicyError::Unbalanced { offset }),
            other => Err(PolicyError::Syntax {
                offset,
                message: format!("expected attribute or '(' but found {}", describe(&other)),
            }),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Attr(a) => format!("attribute {a:?}"),
        Tok::And => "AND".into(),
        Tok::Or => "OR".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Eof => "end of input".into(),
    }
}

pub fn parse_policy(text: &str) -> Result<AccessPolicy, PolicyError> {
    if text.trim().is_empty() {
        return Err(PolicyError::Empty);
    }
    let mut p = Parser::new(text);
    let ast = p.expr(0)?;
    let (offset, tok) = p.next()?;
    match tok {
        Tok::Eof => Ok(ast),
        Tok::RParen => Err(PolicyError::Unbalanced { offset }),
        other => Err(PolicyError::Syntax {
            offset,
            message: format!("unexpected {} after complete expression", describe(&other)),
        }),
    }
}

/// Direct recursive evaluation; the reference the LSSS path is tested against.
pub fn eval_boolean(policy: &AccessPolicy, attrs: &BTreeSet<String>) -> bool {
    match policy {
        AccessPolicy::Leaf(a) => attrs.contains(a),
        AccessPolicy::And(l, r) => eval_boolean(l, attrs) && eval_boolean(r, attrs),
        AccessPolicy::Or(l, r) => eval_boolean(l, attrs) || eval_boolean(r, attrs),
    }
}

/// Share-generating matrix with row labels.
///
/// Entries produced by the formula conversion are always 0, 1 or -1, so they
/// are kept as small integers and mapped into Z_p by whoever does arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsssProgram {
    rows: Vec<Vec<i64>>,
    rho: Vec<String>,
    cols: usize,
}

impl LsssProgram {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    /// Attribute owning row `i`.
    pub fn rho(&self, i: usize) -> &str {
        &self.rho[i]
    }

    /// `M_i . v` over Z_p.
    pub fn share(&self, suite: &GroupSuite, i: usize, v: &[Scalar]) -> Scalar {
        debug_assert_eq!(v.len(), self.cols);
        self.rows[i].iter().zip(v).fold(Scalar(0), |acc, (&m, &x)| {
            suite.add(acc, suite.mul(suite.scalar_from_i64(m), x))
        })
    }
}

/// Monotone formula to LSSS, counter-based vector labelling.
///
/// The root is labelled (1) and the counter starts at 1. OR passes the parent
/// vector to both children. AND pads the parent vector to length c, hands
/// the left child `padded || 1` and the right child `(0,...,0,-1)` of length
/// c+1, then increments c. Finally every row is zero-padded to length c.
pub fn compile_lsss(policy: &AccessPolicy) -> LsssProgram {
    fn walk(
        node: &AccessPolicy,
        vector: Vec<i64>,
        counter: &mut usize,
        rows: &mut Vec<Vec<i64>>,
        rho: &mut Vec<String>,
    ) {
        match node {
            AccessPolicy::Leaf(a) => {
                rows.push(vector);
                rho.push(a.clone());
            }
            AccessPolicy::Or(l, r) => {
                walk(l, vector.clone(), counter, rows, rho);
                walk(r, vector, counter, rows, rho);
            }
            AccessPolicy::And(l, r) => {
                let c = *counter;
                let mut left = vector;
                left.resize(c, 0);
                left.push(1);
                let mut right = vec![0; c];
                right.push(-1);
                *counter += 1;
                walk(l, left, counter, rows, rho);
                walk(r, right, counter, rows, rho);
            }
        }
    }

    let mut counter = 1;
    let mut rows = Vec::with_capacity(policy.leaf_count());
    let mut rho = Vec::with_capacity(policy.leaf_count());
    walk(policy, vec![1], &mut counter, &mut rows, &mut rho);
    for row in &mut rows {
        row.resize(counter, 0);
    }
    LsssProgram {
        rows,
        rho,
        cols: counter,
    }
}

/// Rows and recombination coefficients with `sum_i w_i M[row_i] = (1,0,...,0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatisfactionWitness {
    pub rows: Vec<usize>,
    pub coefficients: Vec<Scalar>,
}

impl SatisfactionWitness {
    /// Recomputes `sum_i w_i M[row_i]` over Z_p.
    pub fn combination(&self, program: &LsssProgram, suite: &GroupSuite) -> Vec<Scalar> {
        let mut acc = vec![Scalar(0); program.n_cols()];
        for (&r, &w) in self.rows.iter().zip(&self.coefficients) {
            for (slot, &m) in acc.iter_mut().zip(program.row(r)) {
                *slot = suite.add(*slot, suite.mul(w, suite.scalar_from_i64(m)));
            }
        }
        acc
    }

    pub fn reconstructs_target(&self, program: &LsssProgram, suite: &GroupSuite) -> bool {
        self.combination(program, suite)
            .iter()
            .enumerate()
            .all(|(j, s)| s.value() == u64::from(j == 0))
    }
}

/// Finds recombination coefficients for the rows owned by `attrs`.
///
/// Solves `M_S^T w = e_1` by Gauss-Jordan elimination over Z_p, where `M_S` are
/// the rows whose label is in `attrs`. Pivots are taken in column order and
/// free variables are set to zero, so the result is deterministic. Rows with
/// a zero coefficient are dropped from the witness.
pub fn find_witness(
    program: &LsssProgram,
    attrs: &BTreeSet<String>,
    suite: &GroupSuite,
) -> Option<SatisfactionWitness> {
    let owned: Vec<usize> = (0..program.n_rows())
        .filter(|&i| attrs.contains(program.rho(i)))
        .collect();
    solve_for_rows(program, &owned, suite)
}

/// Same solve restricted to an explicit row subset.
pub fn solve_for_rows(
    program: &LsssProgram,
    row_subset: &[usize],
    suite: &GroupSuite,
) -> Option<SatisfactionWitness> {
    if row_subset.is_empty() {
        return None;
    }
    let k = row_subset.len();
    let n = program.n_cols();
    // Augmented system: n equations (one per column of M), k unknowns.
    let mut a: Vec<Vec<Scalar>> = (0..n)
        .map(|j| {
            let mut eq: Vec<Scalar> = row_subset
                .iter()
                .map(|&r| suite.scalar_from_i64(program.row(r)[j]))
                .collect();
            eq.push(Scalar(u64::from(j == 0)));
            eq
        })
        .collect();

    let mut pivots = Vec::new();
    let mut prow = 0;
    for col in 0..k {
        let Some(sel) = (prow..n).find(|&r| a[r][col].value() != 0) else {
            continue;
        };
        a.swap(prow, sel);
        let inv = suite.inv(a[prow][col]).expect("pivot is nonzero");
        for x in a[prow].iter_mut() {
            *x = suite.mul(*x, inv);
        }
        let pivot_row = a[prow].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != prow && row[col].value() != 0 {
                let factor = row[col];
                for (x, &pv) in row.iter_mut().zip(&pivot_row) {
                    *x = suite.sub(*x, suite.mul(factor, pv));
                }
            }
        }
        pivots.push(col);
        prow += 1;
        if prow == n {
            break;
        }
    }
    // Inconsistent if any zero row has a nonzero right-hand side.
    if a[prow..].iter().any(|eq| eq[k].value() != 0) {
        return None;
    }
    let mut omega = vec![Scalar(0); k];
    for (r, &col) in pivots.iter().enumerate() {
        omega[col] = a[r][k];
    }
    let (rows, coefficients): (Vec<_>, Vec<_>) = row_subset
        .iter()
        .zip(omega)
        .filter(|(_, w)| w.value() != 0)
        .map(|(&r, w)| (r, w))
        .unzip();
    Some(SatisfactionWitness { rows, coefficients })
}
