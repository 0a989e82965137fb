use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Answer, DecodedMessage, Payload, ProtocolError, Query, RetrievalResult, Scheme, WIRE_VERSION,
};
use crate::mds::SystematicMdsCode;
use crate::model::{MessageStore, PositionalHoldings};

/// User-side state of an FSI session. Only `query` goes on the wire; which
/// positions are known stays with the user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FsiPlan {
    pub query: Query,
    pub desired: usize,
    pub known: Vec<bool>,
}

impl FsiPlan {
    pub fn eta(&self) -> usize {
        self.query.eta.expect("FSI queries carry eta")
    }

    pub fn betas(&self) -> &[usize] {
        self.query
            .betas
            .as_deref()
            .expect("FSI queries carry betas")
    }
}

/// `η = max(|B|, 1)` where `B` is the set of classes with side information.
/// One class of `B` is left out of the known set: the desired class if it is
/// in `B`, otherwise one chosen uniformly. The cost then never depends on `v`.
struct Choices {
    eta: usize,
    /// `(known set, per-class position options)`, one entry per equally likely drop.
    branches: Vec<(Vec<bool>, Vec<Vec<usize>>)>,
}

fn choices(desired: usize, holdings: &PositionalHoldings) -> Result<Choices, ProtocolError> {
    let gamma = holdings.gamma();
    if gamma < 2 || desired >= gamma {
        return Err(ProtocolError::UnsupportedParameters(format!(
            "desired class {desired} out of range for {gamma} classes"
        )));
    }
    for (class, held) in holdings.held.iter().enumerate() {
        if held.keys().any(|&b| b >= holdings.mus[class]) {
            return Err(ProtocolError::UnsupportedParameters(format!(
                "held position out of range in class {class}"
            )));
        }
    }
    if holdings.held[desired].len() >= holdings.mus[desired] {
        return Err(ProtocolError::UnsupportedParameters(format!(
            "class {desired} is fully known; FSI needs a new message in the desired class"
        )));
    }
    let with_side = holdings.classes_with_side_info();
    let eta = with_side.len().max(1);
    let drops: Vec<Option<usize>> = if with_side.is_empty() {
        vec![None]
    } else if with_side.contains(&desired) {
        vec![Some(desired)]
    } else {
        with_side.iter().copied().map(Some).collect()
    };
    let branches = drops
        .into_iter()
        .map(|drop| {
            let known: Vec<bool> = (0..gamma)
                .map(|i| with_side.contains(&i) && Some(i) != drop)
                .collect();
            let options = (0..gamma)
                .map(|i| {
                    let held = &holdings.held[i];
                    if known[i] {
                        held.keys().copied().collect()
                    } else if i == desired {
                        (0..holdings.mus[i])
                            .filter(|b| !held.contains_key(b))
                            .collect()
                    } else {
                        (0..holdings.mus[i]).collect()
                    }
                })
                .collect();
            (known, options)
        })
        .collect();
    Ok(Choices { eta, branches })
}

fn plan(desired: usize, eta: usize, known: Vec<bool>, betas: Vec<usize>) -> FsiPlan {
    FsiPlan {
        query: Query {
            version: WIRE_VERSION,
            scheme: Scheme::Fsi,
            ks: None,
            lambda: 1,
            betas: Some(betas),
            eta: Some(eta),
        },
        desired,
        known,
    }
}

/// FSI user: picks `{β_i}`, `η − 1` of them pointing at held messages.
pub fn fsi_query(
    desired: usize,
    holdings: &PositionalHoldings,
    seed: u64,
) -> Result<FsiPlan, ProtocolError> {
    let Choices { eta, mut branches } = choices(desired, holdings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = rng.random_range(0..branches.len());
    let (known, options) = branches.swap_remove(pick);
    let betas = options
        .iter()
        .map(|o| o[rng.random_range(0..o.len())])
        .collect();
    Ok(plan(desired, eta, known, betas))
}

/// The full law of [`fsi_query`] as `(plan, probability)` pairs.
pub fn fsi_query_support(
    desired: usize,
    holdings: &PositionalHoldings,
) -> Result<Vec<(FsiPlan, Ratio<u64>)>, ProtocolError> {
    let Choices { eta, branches } = choices(desired, holdings)?;
    let drop_weight = Ratio::new(1, branches.len() as u64);
    let mut support = Vec::new();
    for (known, options) in branches {
        let weight = options.iter().fold(drop_weight, |acc, o| {
            acc / Ratio::from_integer(o.len() as u64)
        });
        let mut betas = vec![0; options.len()];
        let mut counters = vec![0usize; options.len()];
        loop {
            for (i, &c) in counters.iter().enumerate() {
                betas[i] = options[i][c];
            }
            support.push((plan(desired, eta, known.clone(), betas.clone()), weight));
            let mut i = 0;
            while i < counters.len() {
                counters[i] += 1;
                if counters[i] < options[i].len() {
                    break;
                }
                counters[i] = 0;
                i += 1;
            }
            if i == counters.len() {
                break;
            }
        }
    }
    Ok(support)
}

/// FSI server: parity rows of a systematic `[2Γ−η+1, Γ]` code over the
/// messages at `{(i, β_i)}`.
pub fn fsi_answer(query: &Query, store: &MessageStore) -> Result<Answer, ProtocolError> {
    let params = store.params();
    let unsupported = |msg: String| Err(ProtocolError::UnsupportedParameters(msg));
    if query.version != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            found: query.version,
            expected: WIRE_VERSION,
        });
    }
    if query.scheme != Scheme::Fsi {
        return unsupported("expected an FSI query".into());
    }
    let (Some(betas), Some(eta)) = (query.betas.as_ref(), query.eta) else {
        return unsupported("FSI query needs betas and eta".into());
    };
    let gamma = params.gamma;
    if betas.len() != gamma || betas.iter().zip(&params.mus).any(|(&b, &mu)| b >= mu) {
        return unsupported(format!(
            "need {gamma} sub-class positions within the class sizes"
        ));
    }
    if eta == 0 || eta > gamma {
        return unsupported(format!("eta = {eta} outside 1..={gamma}"));
    }
    let code = SystematicMdsCode::new(2 * gamma - eta + 1, gamma, store.field())
        .map_err(ProtocolError::from_mds)?;
    let rows: Vec<usize> = (0..gamma)
        .map(|i| store.layout().class_members(i)[betas[i]])
        .collect();
    let parity = code
        .parity(&store.messages().select_rows(&rows))
        .map_err(ProtocolError::from_mds)?;
    Ok(Answer {
        version: WIRE_VERSION,
        scheme: Scheme::Fsi,
        q: params.q,
        symbol_len: params.symbol_len,
        payloads: vec![Payload::CrossClassParity {
            betas: betas.clone(),
            n: code.length(),
            k: gamma,
            symbols: parity.to_rows(),
        }],
    })
}

/// FSI user: recovers every message at `{(i, β_i)}`; returns the new ones.
pub fn fsi_decode(
    plan: &FsiPlan,
    answer: &Answer,
    holdings: &PositionalHoldings,
) -> Result<RetrievalResult, ProtocolError> {
    if answer.version != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            found: answer.version,
            expected: WIRE_VERSION,
        });
    }
    let field = answer.check_shape()?;
    let violation = |msg: &str| Err(ProtocolError::ProtocolViolation(msg.into()));
    let [Payload::CrossClassParity {
        betas,
        n,
        k,
        symbols,
    }] = answer.payloads.as_slice()
    else {
        return violation("FSI answers carry exactly one cross-class parity payload");
    };
    let gamma = holdings.gamma();
    if betas.as_slice() != plan.betas() || *k != gamma || plan.known.len() != gamma {
        return Err(ProtocolError::DecodeMetadata(
            "answer positions differ from the query".into(),
        ));
    }
    if *n < *k || symbols.len() != n - k {
        return violation("parity row count does not match the code header");
    }
    let code = SystematicMdsCode::new(*n, *k, &field).map_err(ProtocolError::from_mds)?;
    let mut known = Vec::new();
    for i in (0..gamma).filter(|&i| plan.known[i]) {
        let Some(contents) = holdings.held[i].get(&betas[i]) else {
            return Err(ProtocolError::DecodeMetadata(format!(
                "class {i} position {} is not held",
                betas[i]
            )));
        };
        known.push((i, contents.clone()));
    }
    known.extend(
        symbols
            .iter()
            .cloned()
            .enumerate()
            .map(|(r, row)| (k + r, row)),
    );
    let messages = code
        .erasure_decode(&known)
        .map_err(ProtocolError::from_mds)?;
    let mut decoded = Vec::new();
    let mut new_from_class = vec![0; gamma];
    for (i, &beta) in betas.iter().enumerate() {
        if !holdings.held[i].contains_key(&beta) {
            new_from_class[i] += 1;
            decoded.push(DecodedMessage {
                class: i,
                id: None,
                position: Some(beta),
                symbols: messages.row(i).to_vec(),
            });
        }
    }
    if new_from_class[plan.desired] == 0 {
        return Err(ProtocolError::NoNewMessage {
            class: plan.desired,
        });
    }
    Ok(RetrievalResult {
        decoded,
        new_from_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_side_info, DatabaseLayout, InstanceParams, SideInfo};
    use crate::protocol::{achieved_rate, download_cost};
    use std::collections::BTreeMap;

    fn setup(mus: &[usize], ks: &[usize], q: u32, seed: u64) -> (MessageStore, SideInfo) {
        let params = InstanceParams::new(mus.to_vec(), ks.to_vec(), 2, q).unwrap();
        let layout = DatabaseLayout::build(&params, seed).unwrap();
        let store = MessageStore::random(&layout, seed + 1).unwrap();
        let side = sample_side_info(&layout, ks, seed + 2).unwrap();
        (store, side)
    }

    fn run(
        mus: &[usize],
        ks: &[usize],
        v: usize,
        seed: u64,
    ) -> (FsiPlan, Answer, RetrievalResult, MessageStore) {
        let (store, side) = setup(mus, ks, 11, seed);
        let holdings = store.positional_holdings(&side);
        let plan = fsi_query(v, &holdings, seed).unwrap();
        let answer = fsi_answer(&plan.query, &store).unwrap();
        let result = fsi_decode(&plan, &answer, &holdings).unwrap();
        (plan, answer, result, store)
    }

    #[test]
    fn cost_depends_on_eta_only() {
        // classes 0 and 1 hold side information: eta = 2 for every v
        for v in 0..3 {
            for seed in 0..20 {
                let (plan, answer, result, store) = run(&[3, 3, 3], &[1, 1, 0], v, seed);
                assert_eq!(plan.eta(), 2);
                assert_eq!(plan.known.iter().filter(|&&k| k).count(), 1);
                assert_eq!(download_cost(&answer), 2 * 2);
                assert_eq!(achieved_rate(&answer), Some(Ratio::new(1, 2)));
                let d = result.decoded.iter().find(|d| d.class == v).unwrap();
                let m = store.layout().class_members(v)[plan.betas()[v]];
                assert_eq!(d.symbols, store.message(m));
            }
        }
    }

    #[test]
    fn code_sizes() {
        let (_, answer, ..) = run(&[2, 2, 2], &[1, 1, 1], 0, 1);
        assert!(matches!(
            &answer.payloads[0],
            Payload::CrossClassParity { n: 4, k: 3, .. }
        ));
        let (plan, answer, ..) = run(&[3, 2], &[0, 0], 1, 1);
        assert_eq!(plan.eta(), 1);
        assert!(
            matches!(&answer.payloads[0], Payload::CrossClassParity { n: 4, k: 2, symbols, .. } if symbols.len() == 2)
        );
    }

    #[test]
    fn forced_desired_position() {
        let mut held = vec![BTreeMap::new(), BTreeMap::new()];
        held[0].insert(1, vec![0]);
        let holdings = PositionalHoldings {
            mus: vec![2, 3],
            held,
        };
        for seed in 0..20 {
            let plan = fsi_query(0, &holdings, seed).unwrap();
            assert_eq!(plan.betas()[0], 0);
        }
    }

    #[test]
    fn desired_position_avoids_side_information() {
        for seed in 0..200 {
            let (store, side) = setup(&[4, 3], &[2, 1], 11, seed);
            let holdings = store.positional_holdings(&side);
            let plan = fsi_query(0, &holdings, seed).unwrap();
            assert!(!holdings.held[0].contains_key(&plan.betas()[0]));
        }
    }

    #[test]
    fn support_is_a_distribution() {
        let (store, side) = setup(&[3, 3, 2], &[1, 2, 0], 11, 3);
        let holdings = store.positional_holdings(&side);
        for v in 0..3 {
            let support = fsi_query_support(v, &holdings).unwrap();
            let total: Ratio<u64> = support.iter().map(|(_, p)| *p).sum();
            assert_eq!(total, Ratio::from_integer(1));
            let drawn = fsi_query(v, &holdings, 17).unwrap();
            assert!(support.iter().any(|(p, _)| p == &drawn));
        }
    }

    #[test]
    fn fully_known_desired_class_is_rejected() {
        let mut held = vec![BTreeMap::new(), BTreeMap::new()];
        held[0].insert(0, vec![0]);
        let holdings = PositionalHoldings {
            mus: vec![1, 3],
            held,
        };
        assert!(matches!(
            fsi_query(0, &holdings, 0),
            Err(ProtocolError::UnsupportedParameters(_))
        ));
    }

    #[test]
    fn tampered_positions_are_rejected() {
        let (store, side) = setup(&[3, 3], &[1, 1], 11, 2);
        let holdings = store.positional_holdings(&side);
        let plan = fsi_query(0, &holdings, 0).unwrap();
        let mut answer = fsi_answer(&plan.query, &store).unwrap();
        if let Payload::CrossClassParity { betas, .. } = &mut answer.payloads[0] {
            betas[0] = (betas[0] + 1) % 3;
        }
        assert!(matches!(
            fsi_decode(&plan, &answer, &holdings),
            Err(ProtocolError::DecodeMetadata(_))
        ));
    }
}
