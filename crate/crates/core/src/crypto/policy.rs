//! Boolean attribute policies.
//!
//! Canonical text form is prefix notation without whitespace:
//! `OR(friend,AND(acquaintance,school),teammate)` or `KOFN(2;a,b,c)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("policy parse error at byte {pos}: {reason}")]
    Parse { pos: usize, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Policy {
    Leaf(String),
    And(Vec<Policy>),
    Or(Vec<Policy>),
    KofN { k: usize, children: Vec<Policy> },
}

pub fn is_attribute(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':' | b'.' | b'/' | b'@'))
}

impl Policy {
    pub fn leaf(attribute: impl Into<String>) -> Policy {
        Policy::Leaf(attribute.into())
    }

    /// Checks the structural invariants: gates have at least two children,
    /// thresholds satisfy `1 <= k <= n`, attributes are non-empty tokens.
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            Policy::Leaf(a) if is_attribute(a) => Ok(()),
            Policy::Leaf(a) => Err(PolicyError::Invalid(format!("bad attribute `{a}`"))),
            Policy::And(cs) | Policy::Or(cs) => {
                if cs.len() < 2 {
                    return Err(PolicyError::Invalid("AND/OR need at least two children".into()));
                }
                cs.iter().try_for_each(Policy::validate)
            }
            Policy::KofN { k, children } => {
                if *k < 1 || *k > children.len() {
                    return Err(PolicyError::Invalid(format!(
                        "threshold {k} outside 1..={}",
                        children.len()
                    )));
                }
                if children.len() > 255 {
                    return Err(PolicyError::Invalid("more than 255 threshold children".into()));
                }
                children.iter().try_for_each(Policy::validate)
            }
        }
    }

    /// Standard satisfaction of the tree by a membership predicate.
    pub fn evaluate(&self, has: &impl Fn(&str) -> bool) -> bool {
        match self {
            Policy::Leaf(a) => has(a),
            Policy::And(cs) => cs.iter().all(|c| c.evaluate(has)),
            Policy::Or(cs) => cs.iter().any(|c| c.evaluate(has)),
            Policy::KofN { k, children } => children.iter().filter(|c| c.evaluate(has)).count() >= *k,
        }
    }

    /// Distinct attributes mentioned anywhere in the tree.
    pub fn attributes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_leaves(&mut |a| {
            out.insert(a.to_owned());
        });
        out
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit_leaves(&mut |_| n += 1);
        n
    }

    pub fn mentions(&self, attribute: &str) -> bool {
        match self {
            Policy::Leaf(a) => a == attribute,
            Policy::And(cs) | Policy::Or(cs) | Policy::KofN { children: cs, .. } => {
                cs.iter().any(|c| c.mentions(attribute))
            }
        }
    }

    fn visit_leaves(&self, f: &mut impl FnMut(&str)) {
        match self {
            Policy::Leaf(a) => f(a),
            Policy::And(cs) | Policy::Or(cs) | Policy::KofN { children: cs, .. } => {
                cs.iter().for_each(|c| c.visit_leaves(f))
            }
        }
    }

    /// Rebuilds the tree with every leaf replaced by `f(attribute)`.
    pub fn map_leaves(&self, f: &mut impl FnMut(&str) -> Policy) -> Policy {
        match self {
            Policy::Leaf(a) => f(a),
            Policy::And(cs) => Policy::And(cs.iter().map(|c| c.map_leaves(f)).collect()),
            Policy::Or(cs) => Policy::Or(cs.iter().map(|c| c.map_leaves(f)).collect()),
            Policy::KofN { k, children } => Policy::KofN {
                k: *k,
                children: children.iter().map(|c| c.map_leaves(f)).collect(),
            },
        }
    }
}

/// Satisfaction of `policy` by an attribute set.
pub fn evaluate_policy(policy: &Policy, attributes: &BTreeSet<String>) -> bool {
    policy.evaluate(&|a| attributes.contains(a))
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, cs: &[Policy]) -> fmt::Result {
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")
        }
        match self {
            Policy::Leaf(a) => f.write_str(a),
            Policy::And(cs) => {
                f.write_str("AND(")?;
                list(f, cs)
            }
            Policy::Or(cs) => {
                f.write_str("OR(")?;
                list(f, cs)
            }
            Policy::KofN { k, children } => {
                write!(f, "KOFN({k};")?;
                list(f, children)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, reason: &'static str) -> PolicyError {
        PolicyError::Parse { pos: self.pos, reason }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn token(&mut self) -> &str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':' | b'.' | b'/' | b'@') {
                self.pos += 1;
            } else {
                break;
            }
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap()
    }

    fn children(&mut self) -> Result<Vec<Policy>, PolicyError> {
        let mut out = vec![self.node()?];
        while self.eat(b',') {
            out.push(self.node()?);
        }
        if !self.eat(b')') {
            return Err(self.err("expected `)`"));
        }
        Ok(out)
    }

    fn node(&mut self) -> Result<Policy, PolicyError> {
        let tok = self.token().to_owned();
        if tok.is_empty() {
            return Err(self.err("expected attribute or gate"));
        }
        if !self.eat(b'(') {
            return Ok(Policy::Leaf(tok));
        }
        match tok.as_str() {
            "AND" => Ok(Policy::And(self.children()?)),
            "OR" => Ok(Policy::Or(self.children()?)),
            "KOFN" => {
                let k = self.token().parse::<usize>().map_err(|_| self.err("expected threshold"))?;
                if !self.eat(b';') {
                    return Err(self.err("expected `;` after threshold"));
                }
                Ok(Policy::KofN {
                    k,
                    children: self.children()?,
                })
            }
            _ => Err(self.err("unknown gate")),
        }
    }
}

impl FromStr for Policy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { src: s.as_bytes(), pos: 0 };
        let policy = p.node()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        policy.validate()?;
        Ok(policy)
    }
}
