//! Query/answer wire types and the retrieval schemes.
//!
//! Server and user roles are pure functions of their inputs and a 64-bit
//! seed. Queries and answers serialize to canonical JSON: struct fields in
//! declaration order, symbols as integer arrays.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FiniteField};
use crate::mds::MdsError;
use crate::model::ModelError;

mod fsi;
mod usi;

pub use fsi::{fsi_answer, fsi_decode, fsi_query, fsi_query_support, FsiPlan};
pub use usi::{
    build_answer, class_modes, decode_labelled, enumerate_selections, musi_answer, musi_decode,
    musi_query, sample_selection, selection_count, usi_answer, usi_answer_support, usi_decode,
    usi_query, ClassMode, Selection,
};

pub const WIRE_VERSION: u32 = 1;

/// Cap on the number of answers [`usi_answer_support`] will enumerate.
pub const DEFAULT_SUPPORT_CAP: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),
    #[error("field GF({q}) has no [{n}, {k}] MDS code")]
    FieldTooSmall { n: usize, k: usize, q: u32 },
    #[error("answer header does not match the side information: {0}")]
    DecodeMetadata(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("no new message decoded from class {class}")]
    NoNewMessage { class: usize },
    #[error("unsupported wire version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{count} answers exceed the enumeration cap {cap}")]
    SupportTooLarge { count: u128, cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl ProtocolError {
    pub(crate) fn from_mds(err: MdsError) -> Self {
        match err {
            MdsError::FieldTooSmall { n, k, q } => Self::FieldTooSmall { n, k, q },
            MdsError::InsufficientPositions { needed, available } => Self::ProtocolViolation(
                format!("erasure decoding needs {needed} coordinates, only {available} available"),
            ),
            MdsError::Inconsistent => Self::ProtocolViolation(
                "received rows are inconsistent with the side information".into(),
            ),
            other => Self::ProtocolViolation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "USI")]
    Usi,
    #[serde(rename = "FSI")]
    Fsi,
    #[serde(rename = "M_USI")]
    MUsi,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub version: u32,
    pub scheme: Scheme,
    /// Per-class side-information counts `{k_i}` (USI, M_USI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    pub lambda: usize,
    /// Per-class sub-class positions `{β_i}` (FSI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<usize>,
}

impl Query {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("query serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ProtocolError> {
        let query: Self = parse_versioned(json)?;
        Ok(query)
    }
}

/// One block of transmitted rows, `L` symbols each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum Payload {
    /// Raw messages of one class, labelled by identifier.
    #[serde(rename = "UNCODED")]
    Uncoded {
        class: usize,
        labels: Vec<u64>,
        symbols: Vec<Vec<u32>>,
    },
    /// Parity rows of a systematic `[n, k]` code over a whole class; the
    /// identifier list fixes the systematic positions.
    #[serde(rename = "PARITY")]
    Parity {
        class: usize,
        identifiers: Vec<u64>,
        n: usize,
        k: usize,
        symbols: Vec<Vec<u32>>,
    },
    /// Parity rows of a systematic `[n, Γ]` code over one message per class.
    #[serde(rename = "CROSS_CLASS_PARITY")]
    CrossClassParity {
        betas: Vec<usize>,
        n: usize,
        k: usize,
        symbols: Vec<Vec<u32>>,
    },
}

impl Payload {
    pub fn symbols(&self) -> &[Vec<u32>] {
        match self {
            Payload::Uncoded { symbols, .. }
            | Payload::Parity { symbols, .. }
            | Payload::CrossClassParity { symbols, .. } => symbols,
        }
    }

    pub fn symbols_mut(&mut self) -> &mut Vec<Vec<u32>> {
        match self {
            Payload::Uncoded { symbols, .. }
            | Payload::Parity { symbols, .. }
            | Payload::CrossClassParity { symbols, .. } => symbols,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Payload::Uncoded { class, .. } | Payload::Parity { class, .. } => Some(*class),
            Payload::CrossClassParity { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Answer {
    pub version: u32,
    pub scheme: Scheme,
    pub q: u32,
    pub symbol_len: usize,
    pub payloads: Vec<Payload>,
}

impl Answer {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("answer serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ProtocolError> {
        parse_versioned(json)
    }

    /// Total transmitted rows.
    pub fn row_count(&self) -> usize {
        self.payloads.iter().map(|p| p.symbols().len()).sum()
    }

    /// Checks symbol ranges and row lengths.
    pub fn check_shape(&self) -> Result<FiniteField, ProtocolError> {
        let field = FiniteField::new(self.q as u64)?;
        for payload in &self.payloads {
            for row in payload.symbols() {
                if row.len() != self.symbol_len {
                    return Err(ProtocolError::ProtocolViolation(format!(
                        "row of {} symbols, expected L = {}",
                        row.len(),
                        self.symbol_len
                    )));
                }
                if row.iter().any(|&x| !field.contains(x)) {
                    return Err(ProtocolError::ProtocolViolation(format!(
                        "symbol outside GF({})",
                        self.q
                    )));
                }
            }
        }
        Ok(field)
    }
}

fn parse_versioned<T: serde::de::DeserializeOwned>(json: &str) -> Result<T, ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ProtocolError::ProtocolViolation(e.to_string()))?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            found,
            expected: WIRE_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::ProtocolViolation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodedMessage {
    pub class: usize,
    /// Label identifier (USI schemes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    /// Sub-class position (FSI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub symbols: Vec<u32>,
}

/// New messages recovered by the user, sorted by class then label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub decoded: Vec<DecodedMessage>,
    pub new_from_class: Vec<usize>,
}

impl RetrievalResult {
    pub fn total_new(&self) -> usize {
        self.new_from_class.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

/// Download cost `D` in field symbols.
pub fn download_cost(answer: &Answer) -> usize {
    answer
        .payloads
        .iter()
        .flat_map(|p| p.symbols())
        .map(Vec::len)
        .sum()
}

/// `L / D` as an exact rational; `None` for an empty answer.
pub fn achieved_rate(answer: &Answer) -> Option<Ratio<u64>> {
    achieved_rate_multi(answer, 1)
}

/// `(desired messages) · L / D`, e.g. `λν · L / D` for M_USI.
pub fn achieved_rate_multi(answer: &Answer, desired_messages: usize) -> Option<Ratio<u64>> {
    let cost = download_cost(answer) as u64;
    (cost > 0).then(|| Ratio::new((desired_messages * answer.symbol_len) as u64, cost))
}
