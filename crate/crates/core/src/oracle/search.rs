//! Exhaustive search for the shortest linear code serving every client.
//!
//! Scaling a column or permuting columns does not change which clients are
//! served, and a repeated column adds nothing to the span. It is therefore
//! enough to try strictly increasing sequences of canonical columns: nonzero
//! vectors whose first nonzero entry is 1.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ClientSet, EncodingMatrix, ObPicodInstance, OracleError, PicodInstance, DEFAULT_CLIENT_CAP,
};
use crate::field::FiniteField;
use crate::matrix::Matrix;

/// Canonical nonzero columns of `GF(q)^f` in lexicographic order.
pub fn canonical_columns(f: usize, field: &FiniteField) -> Vec<Vec<u32>> {
    let q = field.order();
    (0..f)
        .map(|_| 0..q)
        .multi_cartesian_product()
        .filter(|v| v.iter().find(|&&x| x != 0) == Some(&1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub length: usize,
    /// Candidate matrices at this length, `C(N, l)`.
    pub candidates: u128,
    pub found: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Smallest length with a witness, `None` if none up to `l_max`.
    pub min_length: Option<usize>,
    /// Lexicographically first witness at `min_length`.
    pub witness: Option<EncodingMatrix>,
    pub canonical_columns: usize,
    pub clients: usize,
    pub levels: Vec<LevelStats>,
    /// Total candidates examined across all levels, counted as full levels.
    pub search_space: u128,
}

/// Minimum length for the restricted instance, trying `l = 1, …, l_max`.
/// `budget` bounds `Σ_l C(N, l) · |𝒮|`.
pub fn min_code_length_bruteforce(
    instance: &PicodInstance,
    l_max: usize,
    budget: u128,
) -> Result<SearchOutcome, OracleError> {
    search(&instance.client_set(DEFAULT_CLIENT_CAP)?, l_max, budget)
}

/// Minimum length for a generic OB-PICOD(t) instance.
pub fn ob_picod_min_length(
    instance: &ObPicodInstance,
    l_max: usize,
    budget: u128,
) -> Result<SearchOutcome, OracleError> {
    search(&instance.client_set(DEFAULT_CLIENT_CAP)?, l_max, budget)
}

/// `(q^f − 1)/(q − 1)`, saturating.
fn canonical_count(f: usize, q: u32) -> u128 {
    let q = u128::from(q);
    (0..f)
        .try_fold(0u128, |acc, _| acc.checked_mul(q)?.checked_add(1))
        .unwrap_or(u128::MAX)
}

/// `C(n, l)`, saturating.
fn choose(n: u128, l: usize) -> u128 {
    if l as u128 > n {
        return 0;
    }
    (0..l as u128).fold(1u128, |acc, i| match acc.checked_mul(n - i) {
        Some(v) => v / (i + 1),
        None => u128::MAX,
    })
}

fn search(clients: &ClientSet, l_max: usize, budget: u128) -> Result<SearchOutcome, OracleError> {
    let total = canonical_count(clients.f, clients.field.order());
    let mut columns: Vec<Vec<u32>> = Vec::new();
    let mut levels = Vec::new();
    let mut spent: u128 = 0;
    for l in 1..=l_max.min(usize::try_from(total).unwrap_or(usize::MAX)) {
        let candidates = choose(total, l);
        let required = spent.saturating_add(candidates.saturating_mul(clients.sides.len() as u128));
        if required > budget {
            return Err(OracleError::BudgetExceeded {
                budget,
                required,
                next_length: l,
                completed: levels.iter().map(|s: &LevelStats| s.length).collect(),
            });
        }
        spent = required;
        if columns.is_empty() {
            // within budget, so the column list is small
            columns = canonical_columns(clients.f, &clients.field);
        }
        let n = columns.len();
        let witness = (0..n)
            .into_par_iter()
            .find_map_first(|first| search_from(clients, &columns, first, l));
        levels.push(LevelStats {
            length: l,
            candidates,
            found: witness.is_some(),
        });
        if let Some(chosen) = witness {
            let picked: Vec<Vec<u32>> = chosen.iter().map(|&c| columns[c].clone()).collect();
            return Ok(SearchOutcome {
                min_length: Some(l),
                witness: Some(EncodingMatrix::from_columns(
                    clients.f,
                    &picked,
                    &clients.field,
                )?),
                canonical_columns: n,
                clients: clients.sides.len(),
                search_space: levels.iter().map(|s| s.candidates).sum(),
                levels,
            });
        }
    }
    Ok(SearchOutcome {
        min_length: None,
        witness: None,
        canonical_columns: usize::try_from(total).unwrap_or(usize::MAX),
        clients: clients.sides.len(),
        search_space: levels.iter().map(|s| s.candidates).sum(),
        levels,
    })
}

/// First serving sequence of `l` columns starting with column `first`.
fn search_from(
    clients: &ClientSet,
    columns: &[Vec<u32>],
    first: usize,
    l: usize,
) -> Option<Vec<usize>> {
    // clients that recently failed are tried first
    let mut order: Vec<usize> = (0..clients.sides.len()).collect();
    let mut gt = Matrix::zeros(l, clients.f);
    gt.row_mut(0).copy_from_slice(&columns[first]);
    for rest in (first + 1..columns.len()).combinations(l - 1) {
        for (r, &c) in rest.iter().enumerate() {
            gt.row_mut(r + 1).copy_from_slice(&columns[c]);
        }
        match order
            .iter()
            .position(|&client| !clients.client_ok(&gt, client))
        {
            None => {
                let mut chosen = vec![first];
                chosen.extend(rest);
                return Some(chosen);
            }
            Some(0) => {}
            Some(p) => {
                let failing = order.remove(p);
                order.insert(0, failing);
            }
        }
    }
    None
}
