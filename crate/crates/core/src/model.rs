//! The database world model: messages partitioned into classes, the private
//! index mapping `θ`, the per-class label identifiers `α`, and side
//! information sampled under the uniform prior.
//!
//! Indices are zero-based throughout: messages are `0..f`, classes `0..Γ`,
//! sub-class positions `0..μ_i`.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FiniteField};
use crate::matrix::Matrix;

pub const DOCUMENT_VERSION: u32 = 1;

/// Default cap on `∏ C(μ_i, k_i)` for side-information enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("gamma = {gamma} but {mus} class sizes and {ks} side-information counts were given")]
    ClassCountMismatch { gamma: usize, mus: usize, ks: usize },
    #[error("class {0} is empty")]
    EmptyClass(usize),
    #[error("f = {f} does not equal the sum of class sizes {sum}")]
    TotalMismatch { f: usize, sum: usize },
    #[error(
        "class {class} has mu = {mu} and k = {k}; every class needs mu >= k + 1 \
         (use the mixed-side-information bounds for mu = k)"
    )]
    NoNewMessage { class: usize, mu: usize, k: usize },
    #[error("message length L must be at least 1")]
    ZeroLength,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("identifier range [{low}, {high}] cannot hold {needed} distinct identifiers")]
    IdentifierRangeTooSmall { low: u64, high: u64, needed: usize },
    #[error("class {class} holds {mu} messages, cannot take {k} as side information")]
    SideInfoTooLarge { class: usize, mu: usize, k: usize },
    #[error("{count} side-information sets exceed the enumeration cap {cap}")]
    EnumerationTooLarge { count: u128, cap: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid side information: {0}")]
    InvalidSideInfo(String),
    #[error("unsupported document version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed document: {0}")]
    Malformed(String),
}

/// Instance parameters `(f, Γ, {μ_i}, {k_i}, L, q)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceParams {
    pub f: usize,
    pub gamma: usize,
    pub mus: Vec<usize>,
    pub ks: Vec<usize>,
    pub symbol_len: usize,
    pub q: u32,
}

impl InstanceParams {
    /// Derives `f` and `Γ` from the class sizes and validates.
    pub fn new(
        mus: Vec<usize>,
        ks: Vec<usize>,
        symbol_len: usize,
        q: u32,
    ) -> Result<Self, ModelError> {
        let params = Self {
            f: mus.iter().sum(),
            gamma: mus.len(),
            mus,
            ks,
            symbol_len,
            q,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mus.len() != self.gamma || self.ks.len() != self.gamma {
            return Err(ModelError::ClassCountMismatch {
                gamma: self.gamma,
                mus: self.mus.len(),
                ks: self.ks.len(),
            });
        }
        if self.gamma < 2 {
            return Err(ModelError::TooFewClasses(self.gamma));
        }
        if let Some(class) = self.mus.iter().position(|&mu| mu == 0) {
            return Err(ModelError::EmptyClass(class));
        }
        let sum = self.mus.iter().sum();
        if self.f != sum {
            return Err(ModelError::TotalMismatch { f: self.f, sum });
        }
        for (class, (&mu, &k)) in self.mus.iter().zip(&self.ks).enumerate() {
            if mu < k + 1 {
                return Err(ModelError::NoNewMessage { class, mu, k });
            }
        }
        if self.symbol_len == 0 {
            return Err(ModelError::ZeroLength);
        }
        FiniteField::new(self.q as u64)?;
        Ok(())
    }

    /// `κ = Σ k_i`.
    pub fn kappa(&self) -> usize {
        self.ks.iter().sum()
    }

    pub fn field(&self) -> Result<FiniteField, ModelError> {
        Ok(FiniteField::new(self.q as u64)?)
    }

    /// `|𝒮| = ∏ C(μ_i, k_i)`.
    pub fn side_info_count(&self) -> u128 {
        side_info_count(&self.mus, &self.ks)
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn side_info_count(mus: &[usize], ks: &[usize]) -> u128 {
    mus.iter()
        .zip(ks)
        .fold(1u128, |acc, (&mu, &k)| acc.saturating_mul(binomial(mu, k)))
}

/// Inclusive range the label identifiers `α` are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierRange {
    pub low: u64,
    pub high: u64,
}

impl Default for IdentifierRange {
    fn default() -> Self {
        Self {
            low: 1,
            high: 1 << 32,
        }
    }
}

/// A public label `(class, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelPair {
    pub class: usize,
    pub id: u64,
}

/// Message index mapping: which class each message is in, its sub-class
/// position, and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseLayout {
    params: InstanceParams,
    class_of: Vec<usize>,
    /// `theta[i][β]` is the message index at position `β` of class `i`.
    theta: Vec<Vec<usize>>,
    /// `alpha[i][β]` is the identifier of message `theta[i][β]`.
    alpha: Vec<Vec<u64>>,
    position_of: Vec<usize>,
    by_label: BTreeMap<LabelPair, usize>,
}

impl DatabaseLayout {
    pub fn build(params: &InstanceParams, seed: u64) -> Result<Self, ModelError> {
        Self::build_with_range(params, seed, IdentifierRange::default())
    }

    /// Draws a uniformly random `θ` and, per class, distinct identifiers
    /// uniformly from `range`.
    pub fn build_with_range(
        params: &InstanceParams,
        seed: u64,
        range: IdentifierRange,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        let span = range
            .high
            .checked_sub(range.low)
            .map(|d| d as u128 + 1)
            .unwrap_or(0);
        let widest = *params.mus.iter().max().expect("gamma >= 2");
        if span < widest as u128 || span > usize::MAX as u128 {
            return Err(ModelError::IdentifierRangeTooSmall {
                low: range.low,
                high: range.high,
                needed: widest,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..params.f).collect();
        order.shuffle(&mut rng);
        let mut theta = Vec::with_capacity(params.gamma);
        let mut rest = order.as_slice();
        for &mu in &params.mus {
            let (head, tail) = rest.split_at(mu);
            theta.push(head.to_vec());
            rest = tail;
        }
        let alpha = params
            .mus
            .iter()
            .map(|&mu| {
                index::sample(&mut rng, span as usize, mu)
                    .into_iter()
                    .map(|offset| range.low + offset as u64)
                    .collect()
            })
            .collect();
        Self::from_parts(params.clone(), theta, alpha)
    }

    /// Assembles a layout from explicit mappings, checking every invariant.
    pub fn from_parts(
        params: InstanceParams,
        theta: Vec<Vec<usize>>,
        alpha: Vec<Vec<u64>>,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        let bad = |msg: String| Err(ModelError::InvalidLayout(msg));
        if theta.len() != params.gamma || alpha.len() != params.gamma {
            return bad("theta and alpha need one entry per class".into());
        }
        let mut class_of = vec![usize::MAX; params.f];
        let mut position_of = vec![usize::MAX; params.f];
        let mut by_label = BTreeMap::new();
        for class in 0..params.gamma {
            if theta[class].len() != params.mus[class] || alpha[class].len() != params.mus[class] {
                return bad(format!(
                    "class {class} must list exactly mu = {} messages",
                    params.mus[class]
                ));
            }
            for (beta, (&m, &id)) in theta[class].iter().zip(&alpha[class]).enumerate() {
                if m >= params.f || class_of[m] != usize::MAX {
                    return bad(format!("message {m} is out of range or assigned twice"));
                }
                class_of[m] = class;
                position_of[m] = beta;
                if by_label.insert(LabelPair { class, id }, m).is_some() {
                    return bad(format!("identifier {id} repeats within class {class}"));
                }
            }
        }
        Ok(Self {
            params,
            class_of,
            theta,
            alpha,
            position_of,
            by_label,
        })
    }

    pub fn params(&self) -> &InstanceParams {
        &self.params
    }

    pub fn class_of(&self, message: usize) -> usize {
        self.class_of[message]
    }

    /// Sub-class position `β` of a message within its class.
    pub fn position_of(&self, message: usize) -> usize {
        self.position_of[message]
    }

    /// Message indices of class `i` in `θ` order.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.theta[class]
    }

    /// Identifiers of class `i` in `θ` order.
    pub fn identifiers(&self, class: usize) -> &[u64] {
        &self.alpha[class]
    }

    pub fn label_of(&self, message: usize) -> LabelPair {
        let class = self.class_of[message];
        LabelPair {
            class,
            id: self.alpha[class][self.position_of[message]],
        }
    }

    pub fn message_with_label(&self, label: LabelPair) -> Option<usize> {
        self.by_label.get(&label).copied()
    }

    /// Class partition `{M_i}` as message index lists in `θ` order.
    pub fn partition(&self) -> &[Vec<usize>] {
        &self.theta
    }

    fn document(&self) -> LayoutDocument {
        LayoutDocument {
            version: DOCUMENT_VERSION,
            params: self.params.clone(),
            class_of: self.class_of.clone(),
            theta: self.theta.clone(),
            alpha: self.alpha.clone(),
        }
    }

    fn from_document(doc: LayoutDocument) -> Result<Self, ModelError> {
        check_version(doc.version)?;
        let layout = Self::from_parts(doc.params, doc.theta, doc.alpha)?;
        if layout.class_of != doc.class_of {
            return Err(ModelError::InvalidLayout(
                "class_of disagrees with theta".into(),
            ));
        }
        Ok(layout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.document()).expect("layout serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let doc: LayoutDocument =
            serde_json::from_str(json).map_err(|e| ModelError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }
}

fn check_version(found: u32) -> Result<(), ModelError> {
    if found != DOCUMENT_VERSION {
        return Err(ModelError::VersionMismatch {
            found,
            expected: DOCUMENT_VERSION,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutDocument {
    version: u32,
    params: InstanceParams,
    class_of: Vec<usize>,
    theta: Vec<Vec<usize>>,
    alpha: Vec<Vec<u64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreDocument {
    #[serde(flatten)]
    layout: LayoutDocument,
    messages: Vec<Vec<u32>>,
}

/// The `f` stored messages, `L` symbols each, as an `f × L` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageStore {
    layout: DatabaseLayout,
    field: FiniteField,
    messages: Matrix,
}

impl MessageStore {
    /// Fills every message with i.i.d. uniform symbols.
    pub fn random(layout: &DatabaseLayout, seed: u64) -> Result<Self, ModelError> {
        let params = layout.params();
        let field = params.field()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..params.f * params.symbol_len)
            .map(|_| rng.random_range(0..params.q))
            .collect();
        Ok(Self {
            layout: layout.clone(),
            field,
            messages: Matrix::from_vec(params.f, params.symbol_len, data),
        })
    }

    pub fn from_messages(layout: &DatabaseLayout, messages: Matrix) -> Result<Self, ModelError> {
        let params = layout.params();
        let field = params.field()?;
        if messages.shape() != (params.f, params.symbol_len) {
            return Err(ModelError::Malformed(format!(
                "expected {} x {} message block, got {:?}",
                params.f,
                params.symbol_len,
                messages.shape()
            )));
        }
        if !messages.all_in(&field) {
            return Err(ModelError::Malformed(
                "message symbol outside the field".into(),
            ));
        }
        Ok(Self {
            layout: layout.clone(),
            field,
            messages,
        })
    }

    pub fn layout(&self) -> &DatabaseLayout {
        &self.layout
    }

    pub fn params(&self) -> &InstanceParams {
        self.layout.params()
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub fn message(&self, index: usize) -> &[u32] {
        self.messages.row(index)
    }

    pub fn messages(&self) -> &Matrix {
        &self.messages
    }

    /// The messages of class `i` stacked in `θ` order.
    pub fn class_block(&self, class: usize) -> Matrix {
        self.messages.select_rows(self.layout.class_members(class))
    }

    /// What a user holding side information `side` knows: labels and contents.
    pub fn held_messages(&self, side: &SideInfo) -> HeldMessages {
        let messages = side
            .index_set
            .iter()
            .map(|&m| (self.layout.label_of(m), self.message(m).to_vec()))
            .collect();
        HeldMessages {
            counts: side.counts.clone(),
            messages,
        }
    }

    /// Side information as seen by a user who also knows the positions of
    /// its messages within their classes, and every class size.
    pub fn positional_holdings(&self, side: &SideInfo) -> PositionalHoldings {
        let mut held = vec![BTreeMap::new(); self.params().gamma];
        for &m in &side.index_set {
            held[self.layout.class_of(m)]
                .insert(self.layout.position_of(m), self.message(m).to_vec());
        }
        PositionalHoldings {
            mus: self.params().mus.clone(),
            held,
        }
    }

    pub fn to_json(&self) -> String {
        let doc = StoreDocument {
            layout: self.layout.document(),
            messages: self.messages.to_rows(),
        };
        serde_json::to_string(&doc).expect("store serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let doc: StoreDocument =
            serde_json::from_str(json).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let layout = DatabaseLayout::from_document(doc.layout)?;
        let messages = if doc.messages.is_empty() {
            Matrix::zeros(0, layout.params().symbol_len)
        } else {
            Matrix::from_rows(&doc.messages)
                .ok_or_else(|| ModelError::Malformed("ragged messages".into()))?
        };
        Self::from_messages(&layout, messages)
    }
}

/// A side-information set `S` with its label image `Ŝ`.
///
/// The database-side index set is only reachable through
/// [`SideInfo::audit_index_set`]; user-side code works from the labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SideInfo {
    index_set: Vec<usize>,
    labels: Vec<LabelPair>,
    counts: Vec<usize>,
}

impl SideInfo {
    pub fn from_indices(layout: &DatabaseLayout, indices: &[usize]) -> Result<Self, ModelError> {
        let params = layout.params();
        let mut index_set = indices.to_vec();
        index_set.sort_unstable();
        index_set.dedup();
        if index_set.len() != indices.len() {
            return Err(ModelError::InvalidSideInfo("repeated message index".into()));
        }
        if let Some(&m) = index_set.iter().find(|&&m| m >= params.f) {
            return Err(ModelError::InvalidSideInfo(format!(
                "message {m} out of range"
            )));
        }
        let mut counts = vec![0; params.gamma];
        for &m in &index_set {
            counts[layout.class_of(m)] += 1;
        }
        let mut labels: Vec<LabelPair> = index_set.iter().map(|&m| layout.label_of(m)).collect();
        labels.sort_unstable();
        Ok(Self {
            index_set,
            labels,
            counts,
        })
    }

    pub fn labels(&self) -> &[LabelPair] {
        &self.labels
    }

    /// `{k_i}`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn kappa(&self) -> usize {
        self.index_set.len()
    }

    /// The database-view index set `S`, for audits and test oracles only.
    pub fn audit_index_set(&self) -> &[usize] {
        &self.index_set
    }
}

fn check_profile(layout: &DatabaseLayout, ks: &[usize]) -> Result<(), ModelError> {
    let params = layout.params();
    if ks.len() != params.gamma {
        return Err(ModelError::ClassCountMismatch {
            gamma: params.gamma,
            mus: params.mus.len(),
            ks: ks.len(),
        });
    }
    for (class, (&mu, &k)) in params.mus.iter().zip(ks).enumerate() {
        if k > mu {
            return Err(ModelError::SideInfoTooLarge { class, mu, k });
        }
    }
    Ok(())
}

/// Draws `S` uniformly from the sets with exactly `k_i` messages in class `i`.
pub fn sample_side_info(
    layout: &DatabaseLayout,
    ks: &[usize],
    seed: u64,
) -> Result<SideInfo, ModelError> {
    check_profile(layout, ks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(ks.iter().sum());
    for (class, &k) in ks.iter().enumerate() {
        let members = layout.class_members(class);
        indices.extend(
            index::sample(&mut rng, members.len(), k)
                .into_iter()
                .map(|b| members[b]),
        );
    }
    SideInfo::from_indices(layout, &indices)
}

/// Every set in `𝒮`, in lexicographic order of per-class position subsets.
pub fn enumerate_side_info_sets(
    layout: &DatabaseLayout,
    ks: &[usize],
    cap: usize,
) -> Result<Vec<SideInfo>, ModelError> {
    check_profile(layout, ks)?;
    let count = side_info_count(&layout.params().mus, ks);
    if count > cap as u128 {
        return Err(ModelError::EnumerationTooLarge { count, cap });
    }
    let per_class: Vec<Vec<Vec<usize>>> = ks
        .iter()
        .enumerate()
        .map(|(class, &k)| {
            layout
                .class_members(class)
                .iter()
                .copied()
                .combinations(k)
                .collect()
        })
        .collect();
    per_class
        .into_iter()
        .multi_cartesian_product()
        .map(|choice| SideInfo::from_indices(layout, &choice.concat()))
        .collect()
}

/// Every `(μ, k)` profile with `Γ` classes, `1 ≤ μ_i ≤ max_mu`, `Σ μ_i ≤ max_total`
/// and `0 ≤ k_i ≤ μ_i − 1`, in lexicographic order.
pub fn enumerate_profiles(
    gamma: usize,
    max_mu: usize,
    max_total: usize,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut sizes = Vec::new();
    class_sizes(
        gamma,
        max_mu,
        max_total,
        &mut Vec::with_capacity(gamma),
        &mut sizes,
    );
    sizes
        .into_iter()
        .flat_map(|mus| {
            let ks: Vec<Vec<usize>> = mus
                .iter()
                .map(|&mu| 0..mu)
                .multi_cartesian_product()
                .collect();
            ks.into_iter().map(move |k| (mus.clone(), k))
        })
        .collect()
}

fn class_sizes(
    gamma: usize,
    max_mu: usize,
    budget: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() == gamma {
        out.push(prefix.clone());
        return;
    }
    // every later class needs at least one message
    let rest = gamma - prefix.len() - 1;
    for mu in 1..=max_mu.min(budget.saturating_sub(rest)) {
        prefix.push(mu);
        class_sizes(gamma, max_mu, budget - mu, prefix, out);
        prefix.pop();
    }
}

/// Uniform desired class `V` over `[Γ]`.
pub fn sample_desired_class(gamma: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(0..gamma)
}

/// The user's side information: per-class counts and labelled contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldMessages {
    counts: Vec<usize>,
    messages: BTreeMap<LabelPair, Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeldDocument {
    version: u32,
    counts: Vec<usize>,
    messages: Vec<HeldEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeldEntry {
    class: usize,
    id: u64,
    symbols: Vec<u32>,
}

impl HeldMessages {
    pub fn new(
        counts: Vec<usize>,
        messages: BTreeMap<LabelPair, Vec<u32>>,
    ) -> Result<Self, ModelError> {
        let mut seen = vec![0; counts.len()];
        for label in messages.keys() {
            if label.class >= counts.len() {
                return Err(ModelError::InvalidSideInfo(format!(
                    "label class {} out of range",
                    label.class
                )));
            }
            seen[label.class] += 1;
        }
        if seen != counts {
            return Err(ModelError::InvalidSideInfo(format!(
                "counts {counts:?} disagree with the held labels {seen:?}"
            )));
        }
        Ok(Self { counts, messages })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn get(&self, label: &LabelPair) -> Option<&[u32]> {
        self.messages.get(label).map(Vec::as_slice)
    }

    pub fn contains(&self, label: &LabelPair) -> bool {
        self.messages.contains_key(label)
    }

    pub fn in_class(&self, class: usize) -> impl Iterator<Item = (&LabelPair, &Vec<u32>)> {
        self.messages.range(
            LabelPair { class, id: 0 }..=LabelPair {
                class,
                id: u64::MAX,
            },
        )
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelPair> {
        self.messages.keys()
    }

    pub fn to_json(&self) -> String {
        let doc = HeldDocument {
            version: DOCUMENT_VERSION,
            counts: self.counts.clone(),
            messages: self
                .messages
                .iter()
                .map(|(l, s)| HeldEntry {
                    class: l.class,
                    id: l.id,
                    symbols: s.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("held messages serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let doc: HeldDocument =
            serde_json::from_str(json).map_err(|e| ModelError::Malformed(e.to_string()))?;
        check_version(doc.version)?;
        let mut messages = BTreeMap::new();
        for e in doc.messages {
            if messages
                .insert(
                    LabelPair {
                        class: e.class,
                        id: e.id,
                    },
                    e.symbols,
                )
                .is_some()
            {
                return Err(ModelError::InvalidSideInfo("duplicate label".into()));
            }
        }
        Self::new(doc.counts, messages)
    }
}

/// Side information with known sub-class positions and class sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionalHoldings {
    pub mus: Vec<usize>,
    /// Per class: position `β` → message contents.
    pub held: Vec<BTreeMap<usize, Vec<u32>>>,
}

impl PositionalHoldings {
    pub fn gamma(&self) -> usize {
        self.mus.len()
    }

    /// Classes the user holds at least one message from.
    pub fn classes_with_side_info(&self) -> Vec<usize> {
        (0..self.gamma())
            .filter(|&i| !self.held[i].is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mus: &[usize], ks: &[usize]) -> InstanceParams {
        InstanceParams::new(mus.to_vec(), ks.to_vec(), 1, 7).unwrap()
    }

    /// Pearson chi-square statistic against a uniform law over `counts.len()` cells.
    fn chi_square_uniform(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let expected = n as f64 / counts.len() as f64;
        counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum()
    }

    #[test]
    fn params_validation() {
        assert!(params(&[2, 2], &[1, 1]).kappa() == 2);
        assert_eq!(
            InstanceParams::new(vec![2], vec![0], 1, 5),
            Err(ModelError::TooFewClasses(1))
        );
        assert_eq!(
            InstanceParams::new(vec![2, 2], vec![2, 0], 1, 5),
            Err(ModelError::NoNewMessage {
                class: 0,
                mu: 2,
                k: 2
            })
        );
        assert_eq!(
            InstanceParams::new(vec![2, 2], vec![0, 0], 0, 5),
            Err(ModelError::ZeroLength)
        );
        assert!(matches!(
            InstanceParams::new(vec![2, 2], vec![0, 0], 1, 6),
            Err(ModelError::Field(_))
        ));
        let mut p = params(&[2, 2], &[0, 0]);
        p.gamma = 3;
        assert!(matches!(
            p.validate(),
            Err(ModelError::ClassCountMismatch { .. })
        ));
        let mut p = params(&[2, 2], &[0, 0]);
        p.f = 5;
        assert_eq!(
            p.validate(),
            Err(ModelError::TotalMismatch { f: 5, sum: 4 })
        );
        // mu = (2,) with gamma = 2
        let p = InstanceParams {
            f: 2,
            gamma: 2,
            mus: vec![2],
            ks: vec![0, 0],
            symbol_len: 1,
            q: 5,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn layout_is_a_partition_with_unique_labels() {
        for seed in 0..50 {
            let p = params(&[3, 1, 4], &[1, 0, 2]);
            let layout = DatabaseLayout::build(&p, seed).unwrap();
            let mut all: Vec<usize> = layout.partition().concat();
            all.sort_unstable();
            assert_eq!(all, (0..8).collect::<Vec<_>>());
            for m in 0..8 {
                let label = layout.label_of(m);
                assert_eq!(layout.message_with_label(label), Some(m));
                assert_eq!(layout.class_members(label.class)[layout.position_of(m)], m);
                assert!((1..=1 << 32).contains(&label.id));
            }
            for class in 0..3 {
                let ids = layout.identifiers(class);
                assert_eq!(ids.iter().unique().count(), ids.len());
            }
        }
    }

    #[test]
    fn singleton_classes_form_a_permutation() {
        let p = params(&[1, 1, 1, 1], &[0, 0, 0, 0]);
        let layout = DatabaseLayout::build(&p, 3).unwrap();
        let mut firsts: Vec<usize> = (0..4).map(|i| layout.class_members(i)[0]).collect();
        firsts.sort_unstable();
        assert_eq!(firsts, vec![0, 1, 2, 3]);
    }

    #[test]
    fn two_singleton_layouts_equally_likely() {
        let p = params(&[1, 1], &[0, 0]);
        let mut counts = [0usize; 2];
        for seed in 0..10_000 {
            let layout = DatabaseLayout::build(&p, seed).unwrap();
            counts[layout.class_members(0)[0]] += 1;
        }
        // chi-square, 1 degree of freedom, p = 0.001
        assert!(chi_square_uniform(&counts) < 10.83, "{counts:?}");
    }

    #[test]
    fn narrow_identifier_range() {
        let p = params(&[3, 1], &[0, 0]);
        let range = IdentifierRange { low: 10, high: 12 };
        let layout = DatabaseLayout::build_with_range(&p, 1, range).unwrap();
        let mut ids = layout.identifiers(0).to_vec();
        ids.sort_unstable();
        assert_eq!(ids, vec![10, 11, 12]);
        let tight = IdentifierRange { low: 10, high: 11 };
        assert!(matches!(
            DatabaseLayout::build_with_range(&p, 1, tight),
            Err(ModelError::IdentifierRangeTooSmall { .. })
        ));
    }

    #[test]
    fn from_parts_rejects_broken_mappings() {
        let p = params(&[2, 1], &[0, 0]);
        let dup_message = DatabaseLayout::from_parts(
            p.clone(),
            vec![vec![0, 0], vec![2]],
            vec![vec![1, 2], vec![1]],
        );
        assert!(matches!(dup_message, Err(ModelError::InvalidLayout(_))));
        let dup_label = DatabaseLayout::from_parts(
            p.clone(),
            vec![vec![0, 1], vec![2]],
            vec![vec![5, 5], vec![1]],
        );
        assert!(matches!(dup_label, Err(ModelError::InvalidLayout(_))));
        // the same identifier in different classes is fine
        assert!(DatabaseLayout::from_parts(
            p,
            vec![vec![0, 1], vec![2]],
            vec![vec![5, 6], vec![5]]
        )
        .is_ok());
    }

    #[test]
    fn binary_store_symbols_are_fair() {
        let p = InstanceParams::new(vec![1, 1], vec![0, 0], 1, 2).unwrap();
        let layout = DatabaseLayout::build(&p, 0).unwrap();
        let mut counts = [0usize; 2];
        for seed in 0..10_000 {
            counts[MessageStore::random(&layout, seed).unwrap().message(0)[0] as usize] += 1;
        }
        assert!(chi_square_uniform(&counts) < 10.83, "{counts:?}");
    }

    #[test]
    fn store_entropy_matches_log_q() {
        let q = 7u32;
        let p = InstanceParams::new(vec![50, 50], vec![0, 0], 1000, q).unwrap();
        let layout = DatabaseLayout::build(&p, 0).unwrap();
        let store = MessageStore::random(&layout, 11).unwrap();
        let data = store.messages().data();
        let n = data.len() as f64;
        let mut counts = vec![0usize; q as usize];
        for &x in data {
            counts[x as usize] += 1;
        }
        let h: f64 = counts
            .iter()
            .map(|&c| c as f64 / n)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        let h_q = h / (q as f64).ln();
        // for a uniform source the plug-in estimate sits (q - 1) / 2N nats below log q
        let bias = (q as f64 - 1.0) / (2.0 * n) / (q as f64).ln();
        assert!(
            (1.0 - h_q) <= 3.0 * bias + 1e-4,
            "entropy {h_q} q-ary units"
        );
    }

    #[test]
    fn stores_are_seed_deterministic() {
        let p = params(&[3, 3], &[1, 1]);
        let layout = DatabaseLayout::build(&p, 0).unwrap();
        let a = MessageStore::random(&layout, 5).unwrap();
        let b = MessageStore::random(&layout, 5).unwrap();
        let c = MessageStore::random(&layout, 6).unwrap();
        assert_eq!(a, b);
        let p = InstanceParams::new(vec![3, 3], vec![1, 1], 16, 7).unwrap();
        let layout = DatabaseLayout::build(&p, 0).unwrap();
        assert_ne!(
            MessageStore::random(&layout, 5).unwrap(),
            MessageStore::random(&layout, 6).unwrap()
        );
        let _ = c;
    }

    #[test]
    fn side_info_counts_and_uniformity() {
        let p = params(&[2, 2], &[1, 1]);
        let layout = DatabaseLayout::build(&p, 9).unwrap();
        let sets = enumerate_side_info_sets(&layout, &[1, 1], 100).unwrap();
        assert_eq!(sets.len(), 4);
        let mut counts = vec![0usize; 4];
        for seed in 0..10_000 {
            let side = sample_side_info(&layout, &[1, 1], seed).unwrap();
            assert_eq!(side.counts(), &[1, 1]);
            counts[sets.iter().position(|s| s == &side).unwrap()] += 1;
        }
        // chi-square, 3 degrees of freedom, p = 0.001
        assert!(chi_square_uniform(&counts) < 16.27, "{counts:?}");
    }

    #[test]
    fn enumeration_sizes() {
        let cases: [(&[usize], &[usize], usize); 3] = [
            (&[2, 2], &[1, 1], 4),
            (&[3, 2], &[1, 0], 3),
            (&[3, 3], &[1, 1], 9),
        ];
        for (mus, ks, expected) in cases {
            let layout = DatabaseLayout::build(&params(mus, ks), 1).unwrap();
            let sets = enumerate_side_info_sets(&layout, ks, 1000).unwrap();
            assert_eq!(sets.len(), expected);
            assert_eq!(sets.iter().unique().count(), expected);
            for s in &sets {
                assert_eq!(s.counts(), ks);
            }
        }
        let layout = DatabaseLayout::build(&params(&[3, 3], &[1, 1]), 1).unwrap();
        assert!(matches!(
            enumerate_side_info_sets(&layout, &[1, 1], 8),
            Err(ModelError::EnumerationTooLarge { count: 9, cap: 8 })
        ));
    }

    #[test]
    fn profile_enumeration() {
        // Γ = 2, μ_i ≤ 2: μ ∈ {(1,1),(1,2),(2,1),(2,2)} with 1, 2, 2, 4 count profiles
        let profiles = enumerate_profiles(2, 2, 10);
        assert_eq!(profiles.len(), 9);
        assert_eq!(profiles[0], (vec![1, 1], vec![0, 0]));
        assert!(profiles
            .iter()
            .all(|(m, k)| InstanceParams::new(m.clone(), k.clone(), 1, 2).is_ok()));
        assert!(enumerate_profiles(3, 5, 4)
            .iter()
            .all(|(m, _)| m.iter().sum::<usize>() <= 4));
    }

    #[test]
    fn profile_enumeration_matches_filtered_product() {
        for (gamma, max_mu, max_total) in [(2, 4, 5), (3, 3, 6), (3, 5, 15), (4, 2, 5)] {
            let mut expected = Vec::new();
            for mus in (0..gamma).map(|_| 1..=max_mu).multi_cartesian_product() {
                if mus.iter().sum::<usize>() <= max_total {
                    for ks in mus.iter().map(|&mu| 0..mu).multi_cartesian_product() {
                        expected.push((mus.clone(), ks));
                    }
                }
            }
            assert_eq!(enumerate_profiles(gamma, max_mu, max_total), expected);
        }
    }

    #[test]
    fn empty_and_maximal_side_info() {
        let p = params(&[2, 2], &[1, 1]);
        let layout = DatabaseLayout::build(&p, 2).unwrap();
        let empty = sample_side_info(&layout, &[0, 0], 4).unwrap();
        assert!(empty.audit_index_set().is_empty());
        assert!(empty.labels().is_empty());
        // k_i = mu_i - 1: the complements are the prod mu_i = 4 singletons pairs
        let all = enumerate_side_info_sets(&layout, &[1, 1], 10).unwrap();
        let complements: Vec<Vec<usize>> = all
            .iter()
            .map(|s| {
                (0..4)
                    .filter(|m| !s.audit_index_set().contains(m))
                    .collect()
            })
            .collect();
        assert_eq!(complements.iter().unique().count(), 4);
        assert!(matches!(
            sample_side_info(&layout, &[3, 0], 0),
            Err(ModelError::SideInfoTooLarge {
                class: 0,
                mu: 2,
                k: 3
            })
        ));
    }

    #[test]
    fn labels_follow_alpha() {
        let p = params(&[3, 2], &[2, 1]);
        let layout = DatabaseLayout::build(&p, 12).unwrap();
        let side = sample_side_info(&layout, &[2, 1], 3).unwrap();
        let expected: Vec<LabelPair> = side
            .audit_index_set()
            .iter()
            .map(|&m| layout.label_of(m))
            .sorted()
            .collect();
        assert_eq!(side.labels(), expected.as_slice());
    }

    #[test]
    fn documents_round_trip() {
        let p = InstanceParams::new(vec![3, 2], vec![1, 1], 3, 16).unwrap();
        let layout = DatabaseLayout::build(&p, 4).unwrap();
        assert_eq!(
            DatabaseLayout::from_json(&layout.to_json()).unwrap(),
            layout
        );
        let store = MessageStore::random(&layout, 8).unwrap();
        let json = store.to_json();
        assert!(json.starts_with(r#"{"version":1,"params":"#));
        assert_eq!(MessageStore::from_json(&json).unwrap(), store);
        let side = sample_side_info(&layout, &[1, 1], 1).unwrap();
        let held = store.held_messages(&side);
        assert_eq!(HeldMessages::from_json(&held.to_json()).unwrap(), held);
        let stale = json.replacen(r#""version":1"#, r#""version":9"#, 1);
        assert!(matches!(
            MessageStore::from_json(&stale),
            Err(ModelError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn held_messages_expose_contents_by_label() {
        let p = params(&[3, 2], &[1, 1]);
        let layout = DatabaseLayout::build(&p, 4).unwrap();
        let store = MessageStore::random(&layout, 8).unwrap();
        let side = sample_side_info(&layout, &[1, 1], 1).unwrap();
        let held = store.held_messages(&side);
        assert_eq!(held.counts(), &[1, 1]);
        for &m in side.audit_index_set() {
            assert_eq!(held.get(&layout.label_of(m)), Some(store.message(m)));
        }
        assert_eq!(held.in_class(0).count(), 1);
        let pos = store.positional_holdings(&side);
        assert_eq!(pos.classes_with_side_info(), vec![0, 1]);
    }
}
