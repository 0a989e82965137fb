use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Answer, DecodedMessage, Payload, ProtocolError, Query, RetrievalResult, Scheme, WIRE_VERSION,
};
use crate::matrix::Matrix;
use crate::mds::SystematicMdsCode;
use crate::model::{binomial, HeldMessages, InstanceParams, LabelPair, MessageStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassMode {
    Uncoded,
    Parity,
}

/// Per-class server branch: uncoded iff `k_i + λ < μ_i − k_i`, parity on ties.
pub fn class_modes(mus: &[usize], ks: &[usize], lambda: usize) -> Vec<ClassMode> {
    mus.iter()
        .zip(ks)
        .map(|(&mu, &k)| {
            if k + lambda < mu - k {
                ClassMode::Uncoded
            } else {
                ClassMode::Parity
            }
        })
        .collect()
}

/// Server randomness: the sub-class positions sent by each uncoded class,
/// `None` for parity classes.
pub type Selection = Vec<Option<Vec<usize>>>;

/// USI query. Only the side-information counts are sent.
pub fn usi_query(_desired: usize, held: &HeldMessages) -> Query {
    Query {
        version: WIRE_VERSION,
        scheme: Scheme::Usi,
        ks: Some(held.counts().to_vec()),
        lambda: 1,
        betas: None,
        eta: None,
    }
}

/// M_USI query asking for `λ` messages from each desired class.
pub fn musi_query(_desired: &[usize], held: &HeldMessages, lambda: usize) -> Query {
    Query {
        version: WIRE_VERSION,
        scheme: Scheme::MUsi,
        ks: Some(held.counts().to_vec()),
        lambda,
        betas: None,
        eta: None,
    }
}

fn validated_counts<'a>(
    query: &'a Query,
    params: &InstanceParams,
) -> Result<(&'a [usize], usize), ProtocolError> {
    if query.version != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            found: query.version,
            expected: WIRE_VERSION,
        });
    }
    let unsupported = |msg: String| Err(ProtocolError::UnsupportedParameters(msg));
    let lambda = query.lambda;
    match query.scheme {
        Scheme::Usi if lambda != 1 => {
            return unsupported(format!("USI queries carry lambda = 1, got {lambda}"))
        }
        Scheme::MUsi if lambda == 0 => return unsupported("lambda must be at least 1".into()),
        Scheme::Fsi => return unsupported("FSI query sent to a USI server".into()),
        _ => {}
    }
    let Some(ks) = query.ks.as_deref() else {
        return unsupported("query carries no side-information counts".into());
    };
    if ks.len() != params.gamma {
        return unsupported(format!("{} counts for {} classes", ks.len(), params.gamma));
    }
    for (class, (&mu, &k)) in params.mus.iter().zip(ks).enumerate() {
        if mu < k + lambda {
            return unsupported(format!(
                "class {class} has mu = {mu} < k + lambda = {}",
                k + lambda
            ));
        }
    }
    Ok((ks, lambda))
}

/// Builds the answer for a fixed choice of server randomness.
pub fn build_answer(
    query: &Query,
    store: &MessageStore,
    selection: &Selection,
) -> Result<Answer, ProtocolError> {
    let params = store.params();
    let (ks, lambda) = validated_counts(query, params)?;
    let modes = class_modes(&params.mus, ks, lambda);
    let layout = store.layout();
    let mut payloads = Vec::with_capacity(params.gamma);
    for class in 0..params.gamma {
        let (mu, k) = (params.mus[class], ks[class]);
        let payload = match (modes[class], selection.get(class).and_then(Option::as_ref)) {
            (ClassMode::Uncoded, Some(positions)) => {
                if positions.len() != k + lambda || positions.iter().any(|&b| b >= mu) {
                    return Err(ProtocolError::UnsupportedParameters(format!(
                        "class {class} selection must be {} positions below {mu}",
                        k + lambda
                    )));
                }
                let members = layout.class_members(class);
                Payload::Uncoded {
                    class,
                    labels: positions
                        .iter()
                        .map(|&b| layout.identifiers(class)[b])
                        .collect(),
                    symbols: positions
                        .iter()
                        .map(|&b| store.message(members[b]).to_vec())
                        .collect(),
                }
            }
            (ClassMode::Parity, None) => {
                let code = SystematicMdsCode::new(2 * mu - k, mu, store.field())
                    .map_err(ProtocolError::from_mds)?;
                let parity = code
                    .parity(&store.class_block(class))
                    .map_err(ProtocolError::from_mds)?;
                Payload::Parity {
                    class,
                    identifiers: layout.identifiers(class).to_vec(),
                    n: code.length(),
                    k: mu,
                    symbols: parity.to_rows(),
                }
            }
            _ => {
                return Err(ProtocolError::UnsupportedParameters(format!(
                    "selection does not match the branch of class {class}"
                )))
            }
        };
        payloads.push(payload);
    }
    Ok(Answer {
        version: WIRE_VERSION,
        scheme: query.scheme,
        q: params.q,
        symbol_len: params.symbol_len,
        payloads,
    })
}

/// USI server: uniform `(k_i+1)`-subsets for uncoded classes, MDS parity otherwise.
pub fn usi_answer(query: &Query, store: &MessageStore, seed: u64) -> Result<Answer, ProtocolError> {
    if query.scheme != Scheme::Usi {
        return Err(ProtocolError::UnsupportedParameters(
            "expected a USI query".into(),
        ));
    }
    answer_seeded(query, store, seed)
}

/// M_USI server; identical to [`usi_answer`] with `k_i + λ` in place of `k_i + 1`.
pub fn musi_answer(
    query: &Query,
    store: &MessageStore,
    seed: u64,
) -> Result<Answer, ProtocolError> {
    if query.scheme != Scheme::MUsi {
        return Err(ProtocolError::UnsupportedParameters(
            "expected an M_USI query".into(),
        ));
    }
    answer_seeded(query, store, seed)
}

fn answer_seeded(query: &Query, store: &MessageStore, seed: u64) -> Result<Answer, ProtocolError> {
    let selection = sample_selection(query, store.params(), seed)?;
    build_answer(query, store, &selection)
}

/// Server randomness drawn as in [`usi_answer`] and [`musi_answer`].
pub fn sample_selection(
    query: &Query,
    params: &InstanceParams,
    seed: u64,
) -> Result<Selection, ProtocolError> {
    let (ks, lambda) = validated_counts(query, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(class_modes(&params.mus, ks, lambda)
        .into_iter()
        .enumerate()
        .map(|(class, mode)| match mode {
            ClassMode::Uncoded => {
                let mut picked =
                    index::sample(&mut rng, params.mus[class], ks[class] + lambda).into_vec();
                picked.sort_unstable();
                Some(picked)
            }
            ClassMode::Parity => None,
        })
        .collect())
}

/// Size of the server-randomness support, `∏ C(μ_i, k_i+λ)` over uncoded classes.
pub fn selection_count(query: &Query, params: &InstanceParams) -> Result<u128, ProtocolError> {
    let (ks, lambda) = validated_counts(query, params)?;
    Ok(class_modes(&params.mus, ks, lambda)
        .iter()
        .enumerate()
        .filter(|(_, m)| **m == ClassMode::Uncoded)
        .fold(1u128, |acc, (i, _)| {
            acc.saturating_mul(binomial(params.mus[i], ks[i] + lambda))
        }))
}

/// Every choice of server randomness, each equally likely under [`usi_answer`].
pub fn enumerate_selections(
    query: &Query,
    params: &InstanceParams,
    cap: usize,
) -> Result<Vec<Selection>, ProtocolError> {
    let (ks, lambda) = validated_counts(query, params)?;
    let modes = class_modes(&params.mus, ks, lambda);
    let count = selection_count(query, params)?;
    if count > cap as u128 {
        return Err(ProtocolError::SupportTooLarge { count, cap });
    }
    let per_class: Vec<Vec<Option<Vec<usize>>>> = modes
        .iter()
        .enumerate()
        .map(|(i, mode)| match mode {
            ClassMode::Uncoded => (0..params.mus[i])
                .combinations(ks[i] + lambda)
                .map(Some)
                .collect(),
            ClassMode::Parity => vec![None],
        })
        .collect();
    Ok(per_class.into_iter().multi_cartesian_product().collect())
}

/// The answer law as an equiprobable list.
pub fn usi_answer_support(
    query: &Query,
    store: &MessageStore,
    cap: usize,
) -> Result<Vec<Answer>, ProtocolError> {
    enumerate_selections(query, store.params(), cap)?
        .iter()
        .map(|selection| build_answer(query, store, selection))
        .collect()
}

/// Decodes a USI or M_USI answer against labelled side information.
pub fn decode_labelled(
    answer: &Answer,
    held: &HeldMessages,
) -> Result<RetrievalResult, ProtocolError> {
    if answer.version != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            found: answer.version,
            expected: WIRE_VERSION,
        });
    }
    if answer.scheme == Scheme::Fsi {
        return Err(ProtocolError::UnsupportedParameters(
            "FSI answers need positional decoding".into(),
        ));
    }
    let field = answer.check_shape()?;
    let gamma = held.counts().len();
    let violation = |msg: String| Err(ProtocolError::ProtocolViolation(msg));
    let classes: BTreeSet<Option<usize>> = answer.payloads.iter().map(|p| p.class()).collect();
    if answer.payloads.len() != gamma || classes != (0..gamma).map(Some).collect() {
        return violation(format!("expected one payload for each of {gamma} classes"));
    }
    let mut decoded = Vec::new();
    let mut new_from_class = vec![0; gamma];
    for payload in &answer.payloads {
        match payload {
            Payload::Uncoded {
                class,
                labels,
                symbols,
            } => {
                if labels.len() != symbols.len() || labels.iter().unique().count() != labels.len() {
                    return violation(format!("class {class} labels do not match its rows"));
                }
                for (&id, row) in labels.iter().zip(symbols) {
                    let label = LabelPair { class: *class, id };
                    match held.get(&label) {
                        Some(known) if known != row.as_slice() => {
                            return violation(format!(
                                "class {class} row {id} contradicts side information"
                            ))
                        }
                        Some(_) => {}
                        None => {
                            new_from_class[*class] += 1;
                            decoded.push(DecodedMessage {
                                class: *class,
                                id: Some(id),
                                position: None,
                                symbols: row.clone(),
                            });
                        }
                    }
                }
            }
            Payload::Parity {
                class,
                identifiers,
                n,
                k,
                symbols,
            } => {
                if *k != identifiers.len() || identifiers.iter().unique().count() != *k || *k > *n {
                    return violation(format!(
                        "class {class} header lists {} identifiers for k = {k}",
                        identifiers.len()
                    ));
                }
                if symbols.len() != n - k {
                    return violation(format!(
                        "class {class} carries {} parity rows, header promises {}",
                        symbols.len(),
                        n - k
                    ));
                }
                let code =
                    SystematicMdsCode::new(*n, *k, &field).map_err(ProtocolError::from_mds)?;
                let mut known: Vec<(usize, Vec<u32>)> = Vec::new();
                let mut held_positions = BTreeSet::new();
                for (label, contents) in held.in_class(*class) {
                    let Some(position) = identifiers.iter().position(|&id| id == label.id) else {
                        return Err(ProtocolError::DecodeMetadata(format!(
                            "held identifier {} is missing from the class {class} header",
                            label.id
                        )));
                    };
                    held_positions.insert(position);
                    known.push((position, contents.clone()));
                }
                known.extend(
                    symbols
                        .iter()
                        .cloned()
                        .enumerate()
                        .map(|(r, row)| (k + r, row)),
                );
                let messages: Matrix = code
                    .erasure_decode(&known)
                    .map_err(ProtocolError::from_mds)?;
                for (position, &id) in identifiers.iter().enumerate() {
                    if !held_positions.contains(&position) {
                        new_from_class[*class] += 1;
                        decoded.push(DecodedMessage {
                            class: *class,
                            id: Some(id),
                            position: None,
                            symbols: messages.row(position).to_vec(),
                        });
                    }
                }
            }
            Payload::CrossClassParity { .. } => {
                return violation("cross-class payload in a USI answer".into())
            }
        }
    }
    decoded.sort_by_key(|d| (d.class, d.id));
    Ok(RetrievalResult {
        decoded,
        new_from_class,
    })
}

/// USI user: decodes and checks a new message from the desired class.
pub fn usi_decode(
    answer: &Answer,
    held: &HeldMessages,
    desired: usize,
) -> Result<RetrievalResult, ProtocolError> {
    let result = decode_labelled(answer, held)?;
    match result.new_from_class.get(desired) {
        Some(&n) if n >= 1 => Ok(result),
        _ => Err(ProtocolError::NoNewMessage { class: desired }),
    }
}

/// M_USI user: checks at least `λ` new messages from every desired class.
pub fn musi_decode(
    answer: &Answer,
    held: &HeldMessages,
    desired: &[usize],
    lambda: usize,
) -> Result<RetrievalResult, ProtocolError> {
    let result = decode_labelled(answer, held)?;
    for &class in desired {
        if result.new_from_class.get(class).is_none_or(|&n| n < lambda) {
            return Err(ProtocolError::NoNewMessage { class });
        }
    }
    Ok(result)
}
