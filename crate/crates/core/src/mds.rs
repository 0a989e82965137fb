//! Systematic Reed–Solomon codes with erasure decoding.
//!
//! The generator of an `[n, k]` code is the `k × n` Vandermonde matrix on the
//! evaluation points `0, 1, …, n−1` (taken as integer representatives in the
//! field), left-multiplied by the inverse of its first `k` columns so that it
//! reads `[I_k | P]`. Any `k` columns of a Vandermonde matrix on distinct points
//! are independent, so the code is MDS whenever `n ≤ q`.
//!
//! Blocks of symbols are [`Matrix`] values with one message (or codeword
//! coordinate) per row and `L` symbols per row; encoding acts column by column.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldSpec, FiniteField};
use crate::matrix::Matrix;

/// `rows × L` block of field symbols.
pub type SymbolBlock = Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MdsError {
    #[error("invalid code parameters [{n}, {k}]")]
    InvalidParameters { n: usize, k: usize },
    #[error("no [{n}, {k}] MDS code construction over GF({q}); need q >= {n}")]
    FieldTooSmall { n: usize, k: usize, q: u32 },
    #[error("expected {expected} message rows, got {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("symbol {value} is outside GF({q})")]
    SymbolOutOfField { value: u32, q: u32 },
    #[error("need {needed} distinct known positions, have {available}")]
    InsufficientPositions { needed: usize, available: usize },
    #[error("position {position} is outside the code length {n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error("known rows have inconsistent lengths")]
    RaggedRows,
    #[error("known rows are not consistent with any codeword")]
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystematicMdsCode {
    n: usize,
    k: usize,
    field: FiniteField,
    generator: Matrix,
}

impl SystematicMdsCode {
    pub fn new(n: usize, k: usize, field: &FiniteField) -> Result<Self, MdsError> {
        if k == 0 || k > n {
            return Err(MdsError::InvalidParameters { n, k });
        }
        if n as u64 > field.order() as u64 {
            // identity, repetition and single-parity codes are MDS over any field
            if k == n || k == 1 || n == k + 1 {
                let mut generator = Matrix::zeros(k, n);
                for r in 0..k {
                    generator[(r, r)] = 1;
                    for c in k..n {
                        generator[(r, c)] = 1;
                    }
                }
                return Ok(Self {
                    n,
                    k,
                    field: field.clone(),
                    generator,
                });
            }
            return Err(MdsError::FieldTooSmall {
                n,
                k,
                q: field.order(),
            });
        }
        let mut vandermonde = Matrix::zeros(k, n);
        for c in 0..n {
            let point = field.from_integer(c as u64);
            let mut power = 1;
            for r in 0..k {
                vandermonde[(r, c)] = power;
                power = field.mul(power, point);
            }
        }
        let head: Vec<usize> = (0..k).collect();
        let head_inv = vandermonde
            .select_cols(&head)
            .inverse(field)
            .expect("Vandermonde matrix on distinct points is invertible");
        let generator = head_inv.mul(&vandermonde, field);
        Ok(Self {
            n,
            k,
            field: field.clone(),
            generator,
        })
    }

    pub fn length(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    /// The `k × n` generator `[I_k | P]`.
    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    /// Coefficients of codeword coordinate `position` on the `k` message rows.
    pub fn coordinate(&self, position: usize) -> Vec<u32> {
        self.generator.column(position)
    }

    fn check_block(&self, block: &SymbolBlock) -> Result<(), MdsError> {
        if let Some(&value) = block.data().iter().find(|&&x| !self.field.contains(x)) {
            return Err(MdsError::SymbolOutOfField {
                value,
                q: self.field.order(),
            });
        }
        Ok(())
    }

    /// Encodes `k` message rows into the `n` codeword rows.
    pub fn encode(&self, messages: &SymbolBlock) -> Result<SymbolBlock, MdsError> {
        if messages.rows() != self.k {
            return Err(MdsError::RowCountMismatch {
                expected: self.k,
                found: messages.rows(),
            });
        }
        self.check_block(messages)?;
        Ok(self.generator.transpose().mul(messages, &self.field))
    }

    /// Only the `n − k` parity rows of the codeword.
    pub fn parity(&self, messages: &SymbolBlock) -> Result<SymbolBlock, MdsError> {
        let codeword = self.encode(messages)?;
        let parity: Vec<usize> = (self.k..self.n).collect();
        Ok(codeword.select_rows(&parity))
    }

    /// Recovers the full codeword from rows known at `≥ k` distinct positions.
    ///
    /// Repeated positions must carry identical rows, and every known row must
    /// agree with the recovered codeword.
    pub fn erasure_decode(&self, known: &[(usize, Vec<u32>)]) -> Result<SymbolBlock, MdsError> {
        let width = known.first().map_or(0, |(_, row)| row.len());
        let mut by_position: BTreeMap<usize, &[u32]> = BTreeMap::new();
        for (position, row) in known {
            if *position >= self.n {
                return Err(MdsError::PositionOutOfRange {
                    position: *position,
                    n: self.n,
                });
            }
            if row.len() != width {
                return Err(MdsError::RaggedRows);
            }
            if let Some(&x) = row.iter().find(|&&x| !self.field.contains(x)) {
                return Err(MdsError::SymbolOutOfField {
                    value: x,
                    q: self.field.order(),
                });
            }
            if let Some(previous) = by_position.insert(*position, row) {
                if previous != row.as_slice() {
                    return Err(MdsError::Inconsistent);
                }
            }
        }
        if by_position.len() < self.k {
            return Err(MdsError::InsufficientPositions {
                needed: self.k,
                available: by_position.len(),
            });
        }
        let chosen: Vec<usize> = by_position.keys().take(self.k).copied().collect();
        let received =
            Matrix::from_rows(&chosen.iter().map(|p| by_position[p]).collect::<Vec<_>>())
                .expect("rows have equal length");
        // received = G_Sᵀ · M, so M = (G_Sᵀ)⁻¹ · received
        let solve = self
            .generator
            .select_cols(&chosen)
            .transpose()
            .inverse(&self.field)
            .expect("every k columns of an MDS generator are independent");
        let messages = solve.mul(&received, &self.field);
        let codeword = self.encode(&messages)?;
        if by_position.iter().any(|(&p, row)| codeword.row(p) != *row) {
            return Err(MdsError::Inconsistent);
        }
        Ok(codeword)
    }

    pub fn to_record(&self) -> GeneratorRecord {
        GeneratorRecord {
            n: self.n,
            k: self.k,
            field: self.field.spec(),
            generator: self.generator.data().to_vec(),
        }
    }
}

/// Serialized generator: `{n, k, field: {q, modulus?}, generator}` with the
/// generator row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub n: usize,
    pub k: usize,
    pub field: FieldSpec,
    pub generator: Vec<u32>,
}

/// Memoizes codes by `(n, k)` for one field; both protocol roles share one.
#[derive(Debug)]
pub struct CodeBook {
    field: FiniteField,
    codes: RwLock<HashMap<(usize, usize), Arc<SystematicMdsCode>>>,
}

impl CodeBook {
    pub fn new(field: &FiniteField) -> Self {
        Self {
            field: field.clone(),
            codes: RwLock::new(HashMap::new()),
        }
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub fn code(&self, n: usize, k: usize) -> Result<Arc<SystematicMdsCode>, MdsError> {
        if let Some(code) = self.codes.read().expect("code book lock").get(&(n, k)) {
            return Ok(code.clone());
        }
        let code = Arc::new(SystematicMdsCode::new(n, k, &self.field)?);
        self.codes
            .write()
            .expect("code book lock")
            .entry((n, k))
            .or_insert_with(|| code.clone());
        Ok(code)
    }
}
