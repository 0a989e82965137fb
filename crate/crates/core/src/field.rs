//! Exact arithmetic over prime fields GF(p) and binary extension fields GF(2^m).
//!
//! Elements are plain `u32` residues in `[0, q)`. [`FiniteField`] carries the
//! arithmetic; [`FieldElement`] pairs a residue with its field for callers who
//! want mixed-field mistakes reported as errors instead of silently computed.
//!
//! Binary extension fields are built on the lexicographically smallest monic
//! irreducible polynomial of degree `m` (bit `i` is the coefficient of `x^i`),
//! so that serialized symbols are reproducible everywhere.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported binary extension degree.
pub const MAX_EXTENSION_DEGREE: u32 = 16;

/// Fields up to this order get full multiplication tables.
const TABLE_ORDER_LIMIT: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("field order {0} is not a prime or a power of two")]
    UnsupportedOrder(u64),
    #[error("field order {0} is outside the supported range")]
    OrderOutOfRange(u64),
    #[error("elements belong to different fields: GF({left}) and GF({right})")]
    MixedFields { left: u32, right: u32 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("value {value} is not a residue of GF({q})")]
    NotAResidue { value: u64, q: u32 },
    #[error("modulus {found:#x} does not match the canonical modulus {expected:#x} of GF({q})")]
    NonCanonicalModulus { q: u32, found: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Prime,
    BinaryExtension,
}

struct Inner {
    q: u32,
    kind: FieldKind,
    /// Irreducible polynomial including the leading `x^m` bit (binary extension only).
    modulus: Option<u32>,
    mul_table: Option<Vec<u32>>,
    inv_table: Option<Vec<u32>>,
}

/// A finite field of order `q`. Cheap to clone; shared immutably between threads.
#[derive(Clone)]
pub struct FiniteField {
    inner: Arc<Inner>,
}

impl FiniteField {
    /// Builds GF(q) for a prime `q` or `q = 2^m` with `2 <= m <= 16`.
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if q < 2 || q > u32::MAX as u64 {
            return Err(FieldError::OrderOutOfRange(q));
        }
        let (kind, modulus) = if is_prime(q) {
            (FieldKind::Prime, None)
        } else if q.is_power_of_two() {
            let m = q.trailing_zeros();
            if m > MAX_EXTENSION_DEGREE {
                return Err(FieldError::OrderOutOfRange(q));
            }
            (
                FieldKind::BinaryExtension,
                Some(canonical_binary_modulus(m)),
            )
        } else {
            return Err(FieldError::UnsupportedOrder(q));
        };
        let q = q as u32;
        let mut inner = Inner {
            q,
            kind,
            modulus,
            mul_table: None,
            inv_table: None,
        };
        if q <= TABLE_ORDER_LIMIT {
            let mut table = vec![0u32; (q * q) as usize];
            for a in 0..q {
                for b in a..q {
                    let p = raw_mul(&inner, a, b);
                    table[(a * q + b) as usize] = p;
                    table[(b * q + a) as usize] = p;
                }
            }
            inner.mul_table = Some(table);
        }
        if q <= 1 << MAX_EXTENSION_DEGREE {
            let mut inv = vec![0u32; q as usize];
            for a in 1..q {
                inv[a as usize] = raw_pow(&inner, a, (q - 2) as u64);
            }
            inner.inv_table = Some(inv);
        }
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    pub fn order(&self) -> u32 {
        self.inner.q
    }

    pub fn kind(&self) -> FieldKind {
        self.inner.kind
    }

    /// The reduction polynomial for GF(2^m), `None` for prime fields.
    pub fn modulus(&self) -> Option<u32> {
        self.inner.modulus
    }

    pub fn characteristic(&self) -> u32 {
        match self.inner.kind {
            FieldKind::Prime => self.inner.q,
            FieldKind::BinaryExtension => 2,
        }
    }

    pub fn contains(&self, value: u32) -> bool {
        value < self.inner.q
    }

    /// Wraps a residue, rejecting values outside `[0, q)`.
    pub fn element(&self, value: u64) -> Result<FieldElement, FieldError> {
        if value >= self.inner.q as u64 {
            return Err(FieldError::NotAResidue {
                value,
                q: self.inner.q,
            });
        }
        Ok(FieldElement {
            value: value as u32,
            field: self.clone(),
        })
    }

    #[inline]
    pub fn add(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.inner.q && b < self.inner.q);
        match self.inner.kind {
            FieldKind::BinaryExtension => a ^ b,
            FieldKind::Prime => {
                let s = a as u64 + b as u64;
                let q = self.inner.q as u64;
                (if s >= q { s - q } else { s }) as u32
            }
        }
    }

    #[inline]
    pub fn neg(&self, a: u32) -> u32 {
        debug_assert!(a < self.inner.q);
        match self.inner.kind {
            FieldKind::BinaryExtension => a,
            FieldKind::Prime => {
                if a == 0 {
                    0
                } else {
                    self.inner.q - a
                }
            }
        }
    }

    #[inline]
    pub fn sub(&self, a: u32, b: u32) -> u32 {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.inner.q && b < self.inner.q);
        match &self.inner.mul_table {
            Some(t) => t[(a * self.inner.q + b) as usize],
            None => raw_mul(&self.inner, a, b),
        }
    }

    pub fn inv(&self, a: u32) -> Result<u32, FieldError> {
        debug_assert!(a < self.inner.q);
        if a == 0 {
            return Err(FieldError::DivisionByZero);
        }
        Ok(match &self.inner.inv_table {
            Some(t) => t[a as usize],
            None => raw_pow(&self.inner, a, (self.inner.q - 2) as u64),
        })
    }

    pub fn div(&self, a: u32, b: u32) -> Result<u32, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn pow(&self, a: u32, e: u64) -> u32 {
        raw_pow(&self.inner, a, e)
    }

    /// The field element with integer representative `n` reduced into the
    /// field: `n mod p` for prime fields, the bit pattern `n mod 2^m` otherwise.
    pub fn from_integer(&self, n: u64) -> u32 {
        (n % self.inner.q as u64) as u32
    }

    pub fn spec(&self) -> FieldSpec {
        FieldSpec {
            q: self.inner.q,
            modulus: self.inner.modulus,
        }
    }
}

impl PartialEq for FiniteField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.q == other.inner.q && self.inner.modulus == other.inner.modulus)
    }
}

impl Eq for FiniteField {}

impl fmt::Debug for FiniteField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.inner.modulus {
            Some(m) => write!(f, "GF({}; modulus={:#x})", self.inner.q, m),
            None => write!(f, "GF({})", self.inner.q),
        }
    }
}

impl fmt::Display for FiniteField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF({})", self.inner.q)
    }
}

/// Serialized form of a field: `{q, modulus?}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub q: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<u32>,
}

impl TryFrom<FieldSpec> for FiniteField {
    type Error = FieldError;

    fn try_from(spec: FieldSpec) -> Result<Self, FieldError> {
        let field = FiniteField::new(spec.q as u64)?;
        match (spec.modulus, field.modulus()) {
            (None, _) => Ok(field),
            (Some(found), Some(expected)) if found == expected => Ok(field),
            (Some(found), expected) => Err(FieldError::NonCanonicalModulus {
                q: spec.q,
                found,
                expected: expected.unwrap_or(0),
            }),
        }
    }
}

impl Serialize for FiniteField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.spec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let spec = FieldSpec::deserialize(d)?;
        FiniteField::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// A residue bound to its field.
#[derive(Clone, PartialEq, Eq)]
pub struct FieldElement {
    value: u32,
    field: FiniteField,
}

impl FieldElement {
    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    fn same_field(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::MixedFields {
                left: self.field.order(),
                right: other.field.order(),
            });
        }
        Ok(())
    }

    fn with(&self, value: u32) -> Self {
        Self {
            value,
            field: self.field.clone(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        self.same_field(other)?;
        Ok(self.with(self.field.add(self.value, other.value)))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.same_field(other)?;
        Ok(self.with(self.field.sub(self.value, other.value)))
    }

    pub fn mul(&self, other: &Self) -> Result<Self, FieldError> {
        self.same_field(other)?;
        Ok(self.with(self.field.mul(self.value, other.value)))
    }

    pub fn neg(&self) -> Self {
        self.with(self.field.neg(self.value))
    }

    pub fn inv(&self) -> Result<Self, FieldError> {
        Ok(self.with(self.field.inv(self.value)?))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {}", self.value, self.field)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// Smallest field order this crate supports that is at least `min`.
pub fn smallest_supported_order(min: u64) -> u64 {
    let mut q = min.max(2);
    loop {
        if is_prime(q) || (q.is_power_of_two() && q.trailing_zeros() <= MAX_EXTENSION_DEGREE) {
            return q;
        }
        q += 1;
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

fn raw_mul(inner: &Inner, a: u32, b: u32) -> u32 {
    match inner.kind {
        FieldKind::Prime => ((a as u64 * b as u64) % inner.q as u64) as u32,
        FieldKind::BinaryExtension => {
            let modulus = inner
                .modulus
                .expect("binary extension fields carry a modulus");
            let m = inner.q.trailing_zeros();
            let mut acc = 0u32;
            let mut x = a;
            let mut y = b;
            while y != 0 {
                if y & 1 == 1 {
                    acc ^= x;
                }
                y >>= 1;
                x <<= 1;
                if x & (1 << m) != 0 {
                    x ^= modulus;
                }
            }
            acc
        }
    }
}

fn raw_pow(inner: &Inner, a: u32, mut e: u64) -> u32 {
    let mut base = a;
    let mut acc = 1u32;
    while e > 0 {
        if e & 1 == 1 {
            acc = raw_mul(inner, acc, base);
        }
        base = raw_mul(inner, base, base);
        e >>= 1;
    }
    acc
}

fn poly_degree(p: u32) -> u32 {
    31 - p.leading_zeros()
}

fn poly_rem(mut a: u32, b: u32) -> u32 {
    let db = poly_degree(b);
    while a != 0 && poly_degree(a) >= db {
        a ^= b << (poly_degree(a) - db);
    }
    a
}

fn is_irreducible_gf2(p: u32) -> bool {
    let d = poly_degree(p);
    // every polynomial of degree 1..=d/2 as a candidate divisor
    (2u32..(1 << (d / 2 + 1))).all(|divisor| poly_rem(p, divisor) != 0)
}

/// Lexicographically smallest irreducible polynomial of degree `m` over GF(2).
pub fn canonical_binary_modulus(m: u32) -> u32 {
    assert!((1..=MAX_EXTENSION_DEGREE).contains(&m));
    (1u32 << m..1u32 << (m + 1))
        .find(|&p| is_irreducible_gf2(p))
        .expect("irreducible polynomials exist in every degree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn construction() {
        let f5 = FiniteField::new(5).unwrap();
        assert_eq!(f5.kind(), FieldKind::Prime);
        assert_eq!(f5.modulus(), None);
        let f8 = FiniteField::new(8).unwrap();
        assert_eq!(f8.kind(), FieldKind::BinaryExtension);
        // x^3 + x + 1
        assert_eq!(f8.modulus(), Some(0b1011));
        assert_eq!(FiniteField::new(2).unwrap().kind(), FieldKind::Prime);
        assert_eq!(FiniteField::new(6), Err(FieldError::UnsupportedOrder(6)));
        assert_eq!(FiniteField::new(9), Err(FieldError::UnsupportedOrder(9)));
        assert_eq!(FiniteField::new(1), Err(FieldError::OrderOutOfRange(1)));
        assert!(FiniteField::new(1 << 17).is_err());
    }

    #[test]
    fn canonical_moduli() {
        assert_eq!(canonical_binary_modulus(2), 0b111);
        assert_eq!(canonical_binary_modulus(4), 0b10011);
        assert_eq!(canonical_binary_modulus(8), 0x11b);
    }

    #[test]
    fn worked_values() {
        let f5 = FiniteField::new(5).unwrap();
        assert_eq!(f5.add(3, 4), 2);
        assert_eq!(f5.mul(2, 3), 1);
        assert_eq!(f5.inv(2), Ok(3));
        assert_eq!(f5.inv(1), Ok(1));
        assert_eq!(f5.inv(0), Err(FieldError::DivisionByZero));
        let f8 = FiniteField::new(8).unwrap();
        let x = 0b010;
        assert_eq!(f8.add(x, x), 0);
        // x * x^2 = x^3 = x + 1
        assert_eq!(f8.mul(0b010, 0b100), 0b011);
    }

    #[test]
    fn elements_reject_mixing() {
        let f5 = FiniteField::new(5).unwrap();
        let f7 = FiniteField::new(7).unwrap();
        let a = f5.element(3).unwrap();
        let b = f7.element(3).unwrap();
        assert_eq!(
            a.add(&b),
            Err(FieldError::MixedFields { left: 5, right: 7 })
        );
        assert_eq!(a.add(&f5.element(4).unwrap()).unwrap().value(), 2);
        assert!(f5.element(5).is_err());
        assert_eq!(
            f5.element(0).unwrap().inv(),
            Err(FieldError::DivisionByZero)
        );
    }

    #[test]
    fn axioms_exhaustive_small() {
        for q in [2u64, 3, 4, 5, 7, 8] {
            let f = FiniteField::new(q).unwrap();
            let q = q as u32;
            for a in 0..q {
                for b in 0..q {
                    assert_eq!(f.add(a, b), f.add(b, a));
                    assert_eq!(f.mul(a, b), f.mul(b, a));
                    assert_eq!(f.add(a, f.sub(b, a)), b);
                    for c in 0..q {
                        assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                        assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                        assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn inverses_exhaustive() {
        for q in (2u64..=256).filter(|&q| FiniteField::new(q).is_ok()) {
            let f = FiniteField::new(q).unwrap();
            for a in 1..q as u32 {
                assert_eq!(f.mul(a, f.inv(a).unwrap()), 1, "GF({q}) a={a}");
            }
        }
    }

    #[test]
    fn table_and_direct_paths_agree() {
        let f = FiniteField::new(256).unwrap();
        let direct = FiniteField::new(1 << 12).unwrap();
        assert!(f.inner.mul_table.is_some());
        assert!(direct.inner.mul_table.is_none());
        for a in 0..256 {
            for b in 0..256 {
                assert_eq!(f.mul(a, b), raw_mul(&f.inner, a, b));
            }
        }
    }

    #[test]
    fn spec_round_trip() {
        let f = FiniteField::new(16).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"q":16,"modulus":19}"#);
        let back: FiniteField = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<FiniteField>(r#"{"q":16,"modulus":25}"#).is_err());
        assert_eq!(
            serde_json::to_string(&FiniteField::new(5).unwrap()).unwrap(),
            r#"{"q":5}"#
        );
    }

    #[test]
    fn supported_orders() {
        assert_eq!(smallest_supported_order(6), 7);
        assert_eq!(smallest_supported_order(9), 11);
        assert_eq!(smallest_supported_order(15), 16);
        assert_eq!(smallest_supported_order(0), 2);
    }

    fn field_strategy() -> impl Strategy<Value = u64> {
        prop::sample::select(vec![
            2u64,
            3,
            4,
            8,
            13,
            16,
            251,
            256,
            1024,
            65_521,
            65_536,
            2_147_483_647,
        ])
    }

    proptest! {
        #[test]
        fn axioms_sampled(q in field_strategy(), a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let f = FiniteField::new(q).unwrap();
            let (a, b, c) = (f.from_integer(a), f.from_integer(b), f.from_integer(c));
            prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
            prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
            prop_assert_eq!(f.add(a, f.sub(b, a)), b);
            if a != 0 {
                prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            }
        }
    }
}
