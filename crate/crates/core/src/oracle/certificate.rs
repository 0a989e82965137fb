//! Rank certificate for the lower bound `rank(G) ≥ ϱ_t`.
//!
//! Fix a decoded set `𝒟` and grow a set `C ⊆ 𝒟` of indices with
//! `u_c ∈ span(G|_𝒟)`. A client whose side set meets `𝒟` only inside `C`
//! and decodes `τ ∈ 𝒟 \ C` writes `u_τ = G x + Σ_{s∈S} a_s u_s`; zeroing the
//! rows outside `𝒟` gives `u_τ = G|_𝒟 x + Σ_{s∈S∩𝒟} a_s u_s`, and each
//! `u_s` with `s ∈ C` is already in the span, so `τ` joins `C`. The unit
//! vectors `{u_c}` are independent, hence `rank(G) ≥ rank(G|_𝒟) ≥ |C|`.

use std::collections::BTreeSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::{decodable_from_transpose, rho, EncodingMatrix, OracleError, PicodInstance};
use crate::matrix::Matrix;

/// Cap on the `𝒟` choices tried before giving up.
pub const DEFAULT_CANDIDATE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetTypeStep {
    pub side: Vec<usize>,
    /// `S ∩ 𝒟`.
    pub overlap: Vec<usize>,
    /// New indices `τ` added to the collected set.
    pub decoded: Vec<usize>,
    pub rank_before: usize,
    pub rank_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `(class, ρ_j)` in increasing order of `ρ_j`, ties by class.
    pub rho: Vec<(usize, usize)>,
    pub j_t: Vec<usize>,
    pub varrho: usize,
    pub kappa_t: usize,
    pub case: u8,
    /// `(class, Δ_j)` for classes in `J_t` with `μ_j − k_j < k_j + 1`.
    pub deltas: Vec<(usize, usize)>,
    /// `(class, Λ_j)` for the same classes.
    pub lambdas: Vec<(usize, usize)>,
    /// `ϱ_t − t + 1`.
    pub expected_set_types: usize,
    /// Every new message some client decodes.
    pub decoded_universe: Vec<usize>,
    /// The set `𝒟` the walk ran on.
    pub decoded_set: Vec<usize>,
    /// Classes `𝒟` was drawn from.
    pub target_classes: Vec<usize>,
    pub set_type_trace: Vec<SetTypeStep>,
    pub collected: Vec<usize>,
    pub rank_g: usize,
    pub rank_g_restricted: usize,
    pub candidates_tried: usize,
}

struct Walk {
    decoded_set: Vec<usize>,
    trace: Vec<SetTypeStep>,
    collected: BTreeSet<usize>,
}

fn walk(
    decoded_set: &[usize],
    clients: &[Vec<usize>],
    decodable: &[Vec<usize>],
    goal: usize,
) -> Walk {
    let target: BTreeSet<usize> = decoded_set.iter().copied().collect();
    let mut collected = BTreeSet::new();
    let mut trace = Vec::new();
    'grow: while collected.len() < goal {
        for (side, dec) in clients.iter().zip(decodable) {
            let overlap: Vec<usize> = side
                .iter()
                .copied()
                .filter(|s| target.contains(s))
                .collect();
            if !overlap.iter().all(|s| collected.contains(s)) {
                continue;
            }
            let fresh: Vec<usize> = dec
                .iter()
                .copied()
                .filter(|m| target.contains(m) && !collected.contains(m))
                .collect();
            if fresh.is_empty() {
                continue;
            }
            let rank_before = collected.len();
            collected.extend(fresh.iter().copied());
            trace.push(SetTypeStep {
                side: side.clone(),
                overlap,
                decoded: fresh,
                rank_before,
                rank_after: collected.len(),
            });
            continue 'grow;
        }
        break;
    }
    Walk {
        decoded_set: decoded_set.to_vec(),
        trace,
        collected,
    }
}

/// Builds the certificate for a matrix that serves every client.
pub fn rank_lower_bound_certificate(
    g: &EncodingMatrix,
    instance: &PicodInstance,
    client_cap: usize,
    candidate_cap: usize,
) -> Result<CertificateReport, OracleError> {
    instance.check_matrix(g)?;
    let gamma = instance.gamma();
    let t = instance.t();
    let mus = instance.mus();
    let ks = instance.ks();

    let mut rho_sorted: Vec<(usize, usize)> = (0..gamma).map(|j| (j, rho(mus[j], ks[j]))).collect();
    rho_sorted.sort_by_key(|&(j, r)| (r, j));
    let j_t: Vec<usize> = rho_sorted[..t].iter().map(|&(j, _)| j).collect();
    let varrho: usize = rho_sorted[..t].iter().map(|&(_, r)| r).sum();
    let kappa_t: usize = j_t.iter().map(|&j| ks[j] + 1).sum();
    let forced: Vec<usize> = j_t
        .iter()
        .copied()
        .filter(|&j| mus[j] - ks[j] < ks[j] + 1)
        .collect();
    let case = if forced.is_empty() { 1 } else { 2 };
    let deltas = forced
        .iter()
        .map(|&j| (j, ks[j] + 1 - (mus[j] - ks[j])))
        .collect();
    let lambdas = forced.iter().map(|&j| (j, mus[j] - (ks[j] + 1))).collect();

    let client_set = instance.client_set(client_cap)?;
    let gt = g.matrix().transpose();
    let decodable: Vec<Vec<usize>> = client_set
        .keeps
        .iter()
        .map(|keep| decodable_from_transpose(&gt, keep, g.field()))
        .collect();
    if !(0..decodable.len()).all(|c| client_set.requirement.met(&decodable[c])) {
        return Err(OracleError::NotAllClientsSatisfied);
    }
    let universe: BTreeSet<usize> = decodable.iter().flatten().copied().collect();
    let rank_g = g.rank();
    if t == gamma && universe.len() < kappa_t {
        // every class must offer k_j + 1 decodable messages or some client
        // could hold all of them
        return Err(OracleError::Counterexample {
            rank: rank_g,
            needed: kappa_t,
        });
    }
    let per_class: Vec<Vec<usize>> = instance
        .classes()
        .iter()
        .map(|class| {
            class
                .iter()
                .copied()
                .filter(|m| universe.contains(m))
                .collect()
        })
        .collect();

    // J_t first, then the other t-subsets of classes
    let first: Vec<usize> = j_t.iter().copied().sorted().collect();
    let mut targets = vec![first.clone()];
    targets.extend((0..gamma).combinations(t).filter(|c| c != &first));

    let mut tried = 0;
    let mut best: Option<Walk> = None;
    'search: for target in targets {
        if target
            .iter()
            .any(|&j| per_class[j].len() < rho(mus[j], ks[j]))
        {
            continue;
        }
        let choices = target.iter().map(|&j| {
            per_class[j]
                .iter()
                .copied()
                .combinations(rho(mus[j], ks[j]))
        });
        for pick in choices.multi_cartesian_product() {
            if tried == candidate_cap {
                break 'search;
            }
            tried += 1;
            let decoded_set: Vec<usize> = pick.concat().into_iter().sorted().collect();
            let w = walk(&decoded_set, &client_set.sides, &decodable, varrho);
            let done = w.collected.len() >= varrho;
            if best
                .as_ref()
                .is_none_or(|b| w.collected.len() > b.collected.len())
            {
                best = Some(w);
            }
            if done {
                let w = best.take().expect("just stored");
                return finish(
                    g,
                    w,
                    target,
                    tried,
                    rank_g,
                    FinishParts {
                        rho_sorted,
                        j_t,
                        varrho,
                        kappa_t,
                        case,
                        deltas,
                        lambdas,
                        universe,
                        t,
                    },
                );
            }
        }
    }
    let collected = best.map_or(0, |b| b.collected.len());
    if rank_g < varrho {
        return Err(OracleError::Counterexample {
            rank: rank_g,
            needed: varrho,
        });
    }
    Err(OracleError::CertificateIncomplete {
        collected,
        needed: varrho,
        rank: rank_g,
    })
}

struct FinishParts {
    rho_sorted: Vec<(usize, usize)>,
    j_t: Vec<usize>,
    varrho: usize,
    kappa_t: usize,
    case: u8,
    deltas: Vec<(usize, usize)>,
    lambdas: Vec<(usize, usize)>,
    universe: BTreeSet<usize>,
    t: usize,
}

fn finish(
    g: &EncodingMatrix,
    w: Walk,
    target_classes: Vec<usize>,
    tried: usize,
    rank_g: usize,
    p: FinishParts,
) -> Result<CertificateReport, OracleError> {
    let field = g.field();
    let restricted = g.restricted_to(&w.decoded_set);
    let rank_restricted = restricted.rank(field);
    // independent re-check: each collected u_c lies in span(G|_𝒟)
    for &c in &w.collected {
        let mut u = vec![0; g.f()];
        u[c] = 1;
        let extended = restricted.hstack(&Matrix::from_vec(g.f(), 1, u));
        assert_eq!(
            extended.rank(field),
            rank_restricted,
            "collected index {c} is outside span(G|_D)"
        );
    }
    assert!(w.collected.len() <= rank_restricted && rank_restricted <= rank_g);
    if rank_g < p.varrho {
        return Err(OracleError::Counterexample {
            rank: rank_g,
            needed: p.varrho,
        });
    }
    Ok(CertificateReport {
        rho: p.rho_sorted,
        j_t: p.j_t,
        varrho: p.varrho,
        kappa_t: p.kappa_t,
        case: p.case,
        deltas: p.deltas,
        lambdas: p.lambdas,
        expected_set_types: p.varrho + 1 - p.t,
        decoded_universe: p.universe.into_iter().collect(),
        decoded_set: w.decoded_set,
        target_classes,
        set_type_trace: w.trace,
        collected: w.collected.into_iter().collect(),
        rank_g,
        rank_g_restricted: rank_restricted,
        candidates_tried: tried,
    })
}
