//! Converse-side checks: which messages a client can decode from a linear
//! broadcast, whether every client is served, exhaustive search for the
//! shortest linear code, and a rank certificate for the lower bound.
//!
//! A linear broadcast of length `l` over `f` messages is an `f × l` encoding
//! matrix `G`; column `c` is the coefficient vector of transmitted row `c`.
//! A client holding `S` decodes `m` iff `u_m ∈ span(G ∪ U_S)`.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FiniteField};
use crate::matrix::Matrix;
use crate::mds::SystematicMdsCode;
use crate::model::{binomial, DatabaseLayout, LabelPair};
use crate::protocol::{Answer, Payload, ProtocolError};

mod certificate;
mod search;

pub use certificate::{
    rank_lower_bound_certificate, CertificateReport, SetTypeStep, DEFAULT_CANDIDATE_CAP,
};
pub use search::{
    canonical_columns, min_code_length_bruteforce, ob_picod_min_length, LevelStats, SearchOutcome,
};

/// Default cap on the number of clients enumerated.
pub const DEFAULT_CLIENT_CAP: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("invalid encoding matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("{count} clients exceed the enumeration cap {cap}")]
    EnumerationTooLarge { count: u128, cap: usize },
    #[error(
        "search budget {budget} exhausted before length {next_length} ({required} units needed); \
         lengths {completed:?} were ruled out"
    )]
    BudgetExceeded {
        budget: u128,
        required: u128,
        next_length: usize,
        completed: Vec<usize>,
    },
    #[error("OB-PICOD requires q >= 2f, got q = {q} for f = {f}")]
    FieldTooSmall { q: u32, f: usize },
    #[error("the encoding matrix does not satisfy every client")]
    NotAllClientsSatisfied,
    #[error(
        "certificate walker collected {collected} of {needed} unit vectors (rank(G) = {rank})"
    )]
    CertificateIncomplete {
        collected: usize,
        needed: usize,
        rank: usize,
    },
    #[error("rank(G) = {rank} < {needed} although every client is satisfied")]
    Counterexample { rank: usize, needed: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// An `f × l` encoding matrix over a finite field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingMatrix {
    field: FiniteField,
    matrix: Matrix,
}

#[derive(Serialize, Deserialize)]
struct EncodingDocument {
    q: u32,
    f: usize,
    /// Columns `g_1, …, g_l`.
    columns: Vec<Vec<u32>>,
}

impl Serialize for EncodingMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EncodingDocument {
            q: self.field.order(),
            f: self.f(),
            columns: self.columns(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EncodingMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = EncodingDocument::deserialize(d)?;
        let field = FiniteField::new(doc.q as u64).map_err(serde::de::Error::custom)?;
        Self::from_columns(doc.f, &doc.columns, &field).map_err(serde::de::Error::custom)
    }
}

impl EncodingMatrix {
    pub fn new(matrix: Matrix, field: &FiniteField) -> Result<Self, OracleError> {
        if matrix.rows() == 0 {
            return Err(OracleError::InvalidMatrix("no message rows".into()));
        }
        if !matrix.all_in(field) {
            return Err(OracleError::InvalidMatrix(format!(
                "entry outside GF({})",
                field.order()
            )));
        }
        Ok(Self {
            field: field.clone(),
            matrix,
        })
    }

    pub fn from_columns(
        f: usize,
        columns: &[Vec<u32>],
        field: &FiniteField,
    ) -> Result<Self, OracleError> {
        if columns.iter().any(|c| c.len() != f) {
            return Err(OracleError::InvalidMatrix(format!(
                "every column needs {f} entries"
            )));
        }
        let mut matrix = Matrix::zeros(f, columns.len());
        for (c, column) in columns.iter().enumerate() {
            for (r, &x) in column.iter().enumerate() {
                matrix[(r, c)] = x;
            }
        }
        Self::new(matrix, field)
    }

    pub fn identity(f: usize, field: &FiniteField) -> Self {
        Self::new(Matrix::identity(f), field).expect("identity is valid")
    }

    pub fn f(&self) -> usize {
        self.matrix.rows()
    }

    /// Code length `l`.
    pub fn l(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub fn columns(&self) -> Vec<Vec<u32>> {
        (0..self.l()).map(|c| self.matrix.column(c)).collect()
    }

    pub fn rank(&self) -> usize {
        self.matrix.rank(&self.field)
    }

    /// `G|_D`: rows outside `rows` replaced by zeros.
    pub fn restricted_to(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.f(), self.l());
        for &r in rows {
            out.row_mut(r).copy_from_slice(self.matrix.row(r));
        }
        out
    }

    /// Answer symbols `Gᵀ W` for an `f × L` message block.
    pub fn transmit(&self, messages: &Matrix) -> Matrix {
        self.matrix.transpose().mul(messages, &self.field)
    }
}

fn unit(f: usize, i: usize) -> Vec<u32> {
    let mut u = vec![0; f];
    u[i] = 1;
    u
}

fn with_side_columns(g: &EncodingMatrix, side: &[usize]) -> Matrix {
    let f = g.f();
    let units: Vec<Vec<u32>> = side.iter().map(|&s| unit(f, s)).collect();
    let mut cols = g.columns();
    cols.extend(units);
    let mut m = Matrix::zeros(f, cols.len());
    for (c, col) in cols.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            m[(r, c)] = x;
        }
    }
    m
}

/// Rank test: `rank([G | U_S]) = rank([G | U_S | u_m])`.
pub fn decodable(m: usize, g: &EncodingMatrix, side: &[usize]) -> bool {
    let base = with_side_columns(g, side);
    let extended = base.hstack(&Matrix::from_vec(g.f(), 1, unit(g.f(), m)));
    base.rank(g.field()) == extended.rank(g.field())
}

/// Coefficients reconstructing `u_m` from the broadcast and side information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodingCombination {
    /// One coefficient per broadcast row.
    pub broadcast: Vec<u32>,
    /// `(side message, coefficient)` pairs.
    pub side: Vec<(usize, u32)>,
}

/// Solves `G x + U_S a = u_m`; `None` if `m` is not decodable.
pub fn decoding_combination(
    m: usize,
    g: &EncodingMatrix,
    side: &[usize],
) -> Option<DecodingCombination> {
    let system = with_side_columns(g, side);
    let y = system.solve(&unit(g.f(), m), g.field())?;
    let (broadcast, rest) = y.split_at(g.l());
    Some(DecodingCombination {
        broadcast: broadcast.to_vec(),
        side: side.iter().copied().zip(rest.iter().copied()).collect(),
    })
}

/// Every `m ∉ S` decodable by a client holding `S`, given `Gᵀ` (`l × f`).
///
/// Deleting the rows in `S` from `G` leaves `G'`; `u_m` is decodable iff
/// `e_m` lies in the row space of `G'ᵀ`, i.e. `m` is a pivot of its reduced
/// echelon form whose row is a unit vector.
pub(crate) fn decodable_from_transpose(
    gt: &Matrix,
    keep: &[usize],
    field: &FiniteField,
) -> Vec<usize> {
    if gt.rows() == 0 {
        return Vec::new();
    }
    let ech = gt.select_cols(keep).echelon(field);
    ech.pivots
        .iter()
        .enumerate()
        .filter(|&(r, &p)| {
            ech.reduced
                .row(r)
                .iter()
                .enumerate()
                .all(|(c, &x)| c == p || x == 0)
        })
        .map(|(_, &p)| keep[p])
        .collect()
}

/// Every message outside `side` decodable from `G`.
pub fn decodable_set(g: &EncodingMatrix, side: &[usize]) -> Vec<usize> {
    let keep: Vec<usize> = (0..g.f()).filter(|m| !side.contains(m)).collect();
    decodable_from_transpose(&g.matrix.transpose(), &keep, g.field())
}

/// What a client must decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Requirement {
    /// New messages from at least `t` distinct classes.
    Classes { class_of: Vec<usize>, t: usize },
    /// At least `t` new messages.
    Messages { t: usize },
}

impl Requirement {
    pub(crate) fn met(&self, decodable: &[usize]) -> bool {
        match self {
            Requirement::Classes { class_of, t } => {
                decodable.iter().map(|&m| class_of[m]).unique().count() >= *t
            }
            Requirement::Messages { t } => decodable.len() >= *t,
        }
    }
}

/// A family of clients sharing one requirement.
#[derive(Debug, Clone)]
pub(crate) struct ClientSet {
    pub f: usize,
    pub field: FiniteField,
    pub sides: Vec<Vec<usize>>,
    /// Complement of each side set, ascending.
    pub keeps: Vec<Vec<usize>>,
    pub requirement: Requirement,
}

impl ClientSet {
    fn new(f: usize, field: FiniteField, sides: Vec<Vec<usize>>, requirement: Requirement) -> Self {
        let keeps = sides
            .iter()
            .map(|s| (0..f).filter(|m| !s.contains(m)).collect())
            .collect();
        Self {
            f,
            field,
            sides,
            keeps,
            requirement,
        }
    }

    pub(crate) fn client_ok(&self, gt: &Matrix, client: usize) -> bool {
        self.requirement.met(&decodable_from_transpose(
            gt,
            &self.keeps[client],
            &self.field,
        ))
    }
}

/// Data-shuffling constrained OB-PICOD(t) with restricted side information:
/// clients hold exactly `k_i` messages of each class `M_i` and must decode
/// new messages from `t` distinct classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PicodInstance {
    classes: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    ks: Vec<usize>,
    t: usize,
    field: FiniteField,
}

impl PicodInstance {
    /// Classes are contiguous: `M_0 = {0, …, μ_0 − 1}`, and so on.
    pub fn new(mus: &[usize], ks: &[usize], t: usize, q: u32) -> Result<Self, OracleError> {
        let mut next = 0;
        let classes = mus
            .iter()
            .map(|&mu| {
                let class: Vec<usize> = (next..next + mu).collect();
                next += mu;
                class
            })
            .collect();
        Self::with_classes(classes, ks, t, q)
    }

    /// Classes taken from a layout's partition.
    pub fn from_layout(layout: &DatabaseLayout, t: usize) -> Result<Self, OracleError> {
        let params = layout.params();
        Self::with_classes(layout.partition().to_vec(), &params.ks, t, params.q)
    }

    pub fn with_classes(
        classes: Vec<Vec<usize>>,
        ks: &[usize],
        t: usize,
        q: u32,
    ) -> Result<Self, OracleError> {
        let bad = |msg: String| Err(OracleError::InvalidInstance(msg));
        let field = FiniteField::new(q as u64)?;
        let f: usize = classes.iter().map(Vec::len).sum();
        if classes.is_empty() || ks.len() != classes.len() {
            return bad("one side-information count per class is required".into());
        }
        let mut class_of = vec![usize::MAX; f];
        for (i, class) in classes.iter().enumerate() {
            if class.is_empty() {
                return bad(format!("class {i} is empty"));
            }
            for &m in class {
                if m >= f || class_of[m] != usize::MAX {
                    return bad("classes must partition 0..f".into());
                }
                class_of[m] = i;
            }
        }
        if let Some(i) = (0..ks.len()).find(|&i| ks[i] > classes[i].len()) {
            return bad(format!("class {i} cannot hold k = {} side messages", ks[i]));
        }
        let kappa: usize = ks.iter().sum();
        if t == 0 || t > classes.len() || kappa + t > f {
            return bad(format!(
                "need 1 <= t <= Gamma and kappa <= f - t, got t = {t}, kappa = {kappa}, f = {f}"
            ));
        }
        Ok(Self {
            classes,
            class_of,
            ks: ks.to_vec(),
            t,
            field,
        })
    }

    pub fn f(&self) -> usize {
        self.class_of.len()
    }

    pub fn gamma(&self) -> usize {
        self.classes.len()
    }

    pub fn mus(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn kappa(&self) -> usize {
        self.ks.iter().sum()
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn class_of(&self, m: usize) -> usize {
        self.class_of[m]
    }

    /// `n = ∏ C(μ_i, k_i)`.
    pub fn client_count(&self) -> u128 {
        self.classes
            .iter()
            .zip(&self.ks)
            .fold(1u128, |acc, (c, &k)| {
                acc.saturating_mul(binomial(c.len(), k))
            })
    }

    /// Every side-information set in `𝒮`, each sorted ascending.
    pub fn clients(&self, cap: usize) -> Result<Vec<Vec<usize>>, OracleError> {
        let count = self.client_count();
        if count > cap as u128 {
            return Err(OracleError::EnumerationTooLarge { count, cap });
        }
        Ok(self
            .classes
            .iter()
            .zip(&self.ks)
            .map(|(class, &k)| class.iter().copied().combinations(k))
            .multi_cartesian_product()
            .map(|parts| parts.concat().into_iter().sorted().collect())
            .collect())
    }

    pub(crate) fn client_set(&self, cap: usize) -> Result<ClientSet, OracleError> {
        Ok(ClientSet::new(
            self.f(),
            self.field.clone(),
            self.clients(cap)?,
            Requirement::Classes {
                class_of: self.class_of.clone(),
                t: self.t,
            },
        ))
    }

    fn check_matrix(&self, g: &EncodingMatrix) -> Result<(), OracleError> {
        if g.f() != self.f() || g.field() != &self.field {
            return Err(OracleError::InvalidMatrix(format!(
                "expected {} rows over GF({})",
                self.f(),
                self.field.order()
            )));
        }
        Ok(())
    }
}

/// True iff the client holding `side` decodes new messages from at least
/// `t` distinct classes.
pub fn client_satisfied(g: &EncodingMatrix, side: &[usize], instance: &PicodInstance) -> bool {
    let decodable = decodable_set(g, side);
    Requirement::Classes {
        class_of: instance.class_of.clone(),
        t: instance.t,
    }
    .met(&decodable)
}

/// Conjunction of [`client_satisfied`] over every client in `𝒮`.
pub fn all_clients_satisfied(
    g: &EncodingMatrix,
    instance: &PicodInstance,
    cap: usize,
) -> Result<bool, OracleError> {
    instance.check_matrix(g)?;
    let clients = instance.client_set(cap)?;
    let gt = g.matrix.transpose();
    Ok((0..clients.sides.len()).all(|c| clients.client_ok(&gt, c)))
}

/// `ρ_j = min{k_j + 1, μ_j − k_j}`.
pub fn rho(mu: usize, k: usize) -> usize {
    (k + 1).min(mu - k)
}

/// `Σ_i min{k_i + 1, μ_i − k_i}`.
pub fn restricted_lower_bound(mus: &[usize], ks: &[usize]) -> usize {
    mus.iter().zip(ks).map(|(&mu, &k)| rho(mu, k)).sum()
}

/// `ϱ_t`: the sum of the `t` smallest `ρ_j`.
pub fn restricted_lower_bound_t(instance: &PicodInstance) -> usize {
    let mus = instance.mus();
    let mut rhos: Vec<usize> = mus
        .iter()
        .zip(instance.ks())
        .map(|(&mu, &k)| rho(mu, k))
        .collect();
    rhos.sort_unstable();
    rhos[..instance.t].iter().sum()
}

/// `min{κ + t, f − κ}`.
pub fn generic_length_bound(f: usize, kappa: usize, t: usize) -> usize {
    (kappa + t).min(f - kappa)
}

/// OB-PICOD(t): every `κ`-subset of `[f]` is a client, each needing `t` new
/// messages from anywhere. Requires `q ≥ 2f`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObPicodInstance {
    f: usize,
    kappa: usize,
    t: usize,
    field: FiniteField,
}

impl ObPicodInstance {
    pub fn new(f: usize, kappa: usize, t: usize, q: u32) -> Result<Self, OracleError> {
        if (q as usize) < 2 * f {
            return Err(OracleError::FieldTooSmall { q, f });
        }
        if t == 0 || kappa + t > f {
            return Err(OracleError::InvalidInstance(format!(
                "need t >= 1 and kappa <= f - t, got f = {f}, kappa = {kappa}, t = {t}"
            )));
        }
        Ok(Self {
            f,
            kappa,
            t,
            field: FiniteField::new(q as u64)?,
        })
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn field(&self) -> &FiniteField {
        &self.field
    }

    pub(crate) fn client_set(&self, cap: usize) -> Result<ClientSet, OracleError> {
        let count = binomial(self.f, self.kappa);
        if count > cap as u128 {
            return Err(OracleError::EnumerationTooLarge { count, cap });
        }
        let sides = (0..self.f).combinations(self.kappa).collect();
        Ok(ClientSet::new(
            self.f,
            self.field.clone(),
            sides,
            Requirement::Messages { t: self.t },
        ))
    }

    pub fn satisfied(&self, g: &EncodingMatrix, cap: usize) -> Result<bool, OracleError> {
        if g.f() != self.f || g.field() != &self.field {
            return Err(OracleError::InvalidMatrix(
                "matrix does not match the instance".into(),
            ));
        }
        let clients = self.client_set(cap)?;
        let gt = g.matrix.transpose();
        Ok((0..clients.sides.len()).all(|c| clients.client_ok(&gt, c)))
    }
}

/// The encoding matrix of a linear answer: one column per transmitted row.
pub fn answer_to_encoding_matrix(
    answer: &Answer,
    layout: &DatabaseLayout,
) -> Result<EncodingMatrix, OracleError> {
    let field = answer.check_shape()?;
    let f = layout.params().f;
    let lookup = |class: usize, id: u64| {
        layout
            .message_with_label(LabelPair { class, id })
            .ok_or_else(|| {
                ProtocolError::DecodeMetadata(format!("label ({class}, {id}) is not in the layout"))
            })
    };
    let mut columns = Vec::new();
    for payload in &answer.payloads {
        match payload {
            Payload::Uncoded { class, labels, .. } => {
                for &id in labels {
                    columns.push(unit(f, lookup(*class, id)?));
                }
            }
            Payload::Parity {
                class,
                identifiers,
                n,
                k,
                symbols,
            } => {
                let members: Vec<usize> = identifiers
                    .iter()
                    .map(|&id| lookup(*class, id))
                    .try_collect()?;
                let code =
                    SystematicMdsCode::new(*n, *k, &field).map_err(ProtocolError::from_mds)?;
                for r in 0..symbols.len() {
                    let mut column = vec![0; f];
                    for (p, coefficient) in code.coordinate(k + r).into_iter().enumerate() {
                        column[members[p]] = coefficient;
                    }
                    columns.push(column);
                }
            }
            Payload::CrossClassParity {
                betas,
                n,
                k,
                symbols,
            } => {
                let code =
                    SystematicMdsCode::new(*n, *k, &field).map_err(ProtocolError::from_mds)?;
                let members: Vec<usize> = betas
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| layout.class_members(i)[b])
                    .collect();
                for r in 0..symbols.len() {
                    let mut column = vec![0; f];
                    for (p, coefficient) in code.coordinate(k + r).into_iter().enumerate() {
                        column[members[p]] = coefficient;
                    }
                    columns.push(column);
                }
            }
        }
    }
    EncodingMatrix::from_columns(f, &columns, &field)
}
