//! Privacy audits.
//!
//! The privacy requirement is `I(V, S; Q, A, W) = 0`. Queries never read the
//! messages and answers are a function of `(Q, W)` and server coins, so for a
//! fixed store `W = w` it suffices to check that the law of `(Q, A)` given
//! `W = w` does not depend on `(v, S)`. The exact audit does this by full
//! enumeration; the statistical audit estimates the mutual information from
//! samples.
//!
//! The side-information counts `{k_i}` are public parameters: only the
//! realization of `S` inside `𝒮` is private.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    enumerate_side_info_sets, sample_desired_class, sample_side_info, DatabaseLayout,
    InstanceParams, MessageStore, ModelError, SideInfo,
};
use crate::protocol::{
    build_answer, enumerate_selections, fsi_query_support, musi_query, sample_selection,
    selection_count, usi_query, Answer, Payload, ProtocolError, Query, Selection,
};
use crate::rational;
use crate::seed::derive_seed;

pub const DEFAULT_EXACT_CAP: usize = 1 << 18;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("statistical audit needs at least one trial")]
    ZeroTrials,
    #[error("{trials} trials is below the minimum of {min}")]
    TooFewTrials { trials: u64, min: u64 },
    #[error("instance is degenerate (|S| = 1); use the exact audit")]
    Degenerate,
    #[error("exact audit would enumerate {count} answers, above the cap {cap}; use the statistical audit")]
    TooLarge { count: u128, cap: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A user/server pair under audit. The server sees the private inputs only
/// so that mutants can misuse them.
pub trait AuditedProtocol: Sync {
    fn name(&self) -> String;

    fn query(
        &self,
        desired: usize,
        side: &SideInfo,
        store: &MessageStore,
    ) -> Result<Query, ProtocolError>;

    /// Answer for one draw of server randomness.
    fn answer(
        &self,
        desired: usize,
        side: &SideInfo,
        query: &Query,
        store: &MessageStore,
        selection: &Selection,
    ) -> Result<Answer, ProtocolError>;
}

/// The shipped USI scheme (`λ = 1`) or its M_USI extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UsiScheme {
    pub lambda: usize,
}

impl Default for UsiScheme {
    fn default() -> Self {
        Self { lambda: 1 }
    }
}

impl AuditedProtocol for UsiScheme {
    fn name(&self) -> String {
        if self.lambda == 1 {
            "USI".into()
        } else {
            format!("M_USI(lambda={})", self.lambda)
        }
    }

    fn query(
        &self,
        desired: usize,
        side: &SideInfo,
        store: &MessageStore,
    ) -> Result<Query, ProtocolError> {
        let held = store.held_messages(side);
        Ok(if self.lambda == 1 {
            usi_query(desired, &held)
        } else {
            musi_query(&[desired], &held, self.lambda)
        })
    }

    fn answer(
        &self,
        _desired: usize,
        _side: &SideInfo,
        query: &Query,
        store: &MessageStore,
        selection: &Selection,
    ) -> Result<Answer, ProtocolError> {
        build_answer(query, store, selection)
    }
}

/// Deliberately broken servers and users. Each one must fail the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mutant {
    /// Sends the first `k_v + λ` messages of the desired class instead of a uniform subset.
    VDependentSelection,
    /// Repeats a parity row when `S` holds the first message of that class.
    SDependentParityRows,
    /// Appends an empty payload tagged with `v`.
    VAppendedMetadata,
    /// Writes `v` into the query.
    VTaggedQuery,
}

impl Mutant {
    pub const ALL: [Mutant; 4] = [
        Mutant::VDependentSelection,
        Mutant::SDependentParityRows,
        Mutant::VAppendedMetadata,
        Mutant::VTaggedQuery,
    ];
}

impl AuditedProtocol for Mutant {
    fn name(&self) -> String {
        format!("{self:?}")
    }

    fn query(
        &self,
        desired: usize,
        side: &SideInfo,
        store: &MessageStore,
    ) -> Result<Query, ProtocolError> {
        let mut query = UsiScheme::default().query(desired, side, store)?;
        if *self == Mutant::VTaggedQuery {
            query.eta = Some(desired);
        }
        Ok(query)
    }

    fn answer(
        &self,
        desired: usize,
        side: &SideInfo,
        query: &Query,
        store: &MessageStore,
        selection: &Selection,
    ) -> Result<Answer, ProtocolError> {
        let mut selection = selection.clone();
        if *self == Mutant::VDependentSelection {
            if let Some(picked) = selection[desired].as_mut() {
                let len = picked.len();
                *picked = (0..len).collect();
            }
        }
        let mut answer = build_answer(query, store, &selection)?;
        match self {
            Mutant::SDependentParityRows => {
                let held = side.audit_index_set();
                for payload in &mut answer.payloads {
                    if let Payload::Parity { class, symbols, .. } = payload {
                        let first = store.layout().class_members(*class)[0];
                        if held.contains(&first) {
                            if let Some(last) = symbols.last().cloned() {
                                symbols.push(last);
                            }
                        }
                    }
                }
            }
            Mutant::VAppendedMetadata => answer.payloads.push(Payload::Uncoded {
                class: desired,
                labels: Vec::new(),
                symbols: Vec::new(),
            }),
            _ => {}
        }
        Ok(answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMode {
    Exact,
    Statistical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

/// One `(v, S)` pair of the exact audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub desired: usize,
    /// Database indices of `S`.
    pub side: Vec<usize>,
    /// Index into [`ExactDetails::distributions`].
    pub distribution: usize,
    pub query_matches_reference: bool,
    /// Total-variation distance to the first pair's answer law.
    #[serde(with = "rational::string")]
    pub tv_to_reference: Ratio<u64>,
}

/// Pairs sharing an answer law share a distribution id; the distance between
/// any two pairs is `distribution_tv[a][b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDetails {
    pub support_size: u128,
    pub distributions: usize,
    pub distribution_tv: Vec<Vec<String>>,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub mode: AuditMode,
    pub protocol: String,
    pub query_invariant: bool,
    #[serde(with = "rational::option")]
    pub answer_tv_distance: Option<Ratio<u64>>,
    /// Plug-in estimate in `q`-ary units.
    pub mi_estimate: Option<f64>,
    /// Pass threshold in `q`-ary units.
    pub mi_threshold: Option<f64>,
    pub trials: u64,
    pub verdict: Outcome,
    pub exact: Option<ExactDetails>,
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        self.verdict == Outcome::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

type Digest32 = [u8; 32];

fn digest(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

fn digest_pair(query: &str, answer: &Answer) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(query.as_bytes());
    hasher.update([0u8]);
    hasher.update(answer.to_json().as_bytes());
    hasher.finalize().into()
}

/// Total-variation distance between two empirical laws given as counts.
fn tv_counts(a: &BTreeMap<Digest32, u64>, b: &BTreeMap<Digest32, u64>) -> Ratio<u64> {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    let keys: HashSet<&Digest32> = a.keys().chain(b.keys()).collect();
    let diff: u128 = keys
        .into_iter()
        .map(|k| {
            let x = u128::from(a.get(k).copied().unwrap_or(0)) * u128::from(nb);
            let y = u128::from(b.get(k).copied().unwrap_or(0)) * u128::from(na);
            x.abs_diff(y)
        })
        .sum();
    let den = 2 * u128::from(na) * u128::from(nb);
    let g = gcd(diff, den);
    Ratio::new(
        u64::try_from(diff / g).expect("distance numerator fits u64"),
        u64::try_from(den / g).expect("distance denominator fits u64"),
    )
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Enumerates every `(v, S)` and every draw of server randomness.
/// `cap` bounds `Γ · |𝒮| · support`.
pub fn audit_exact(
    protocol: &dyn AuditedProtocol,
    store: &MessageStore,
    cap: usize,
) -> Result<AuditVerdict, AuditError> {
    let params = store.params();
    let layout = store.layout();
    let sides = enumerate_side_info_sets(layout, &params.ks, cap)?;
    let reference_query = protocol.query(0, &sides[0], store)?;
    let support = selection_count(&reference_query, params)?;
    let count = support
        .saturating_mul(sides.len() as u128)
        .saturating_mul(params.gamma as u128);
    if count > cap as u128 {
        return Err(AuditError::TooLarge { count, cap });
    }
    let reference_json = reference_query.to_json();

    let pairs: Vec<(usize, &SideInfo)> = (0..params.gamma)
        .flat_map(|v| sides.iter().map(move |s| (v, s)))
        .collect();
    let laws: Vec<(String, BTreeMap<Digest32, u64>)> = pairs
        .par_iter()
        .map(|&(v, side)| -> Result<_, AuditError> {
            let query = protocol.query(v, side, store)?;
            let json = query.to_json();
            let mut law = BTreeMap::new();
            for selection in enumerate_selections(&query, params, cap)? {
                let answer = protocol.answer(v, side, &query, store, &selection)?;
                *law.entry(digest(answer.to_json().as_bytes())).or_insert(0) += 1;
            }
            Ok((json, law))
        })
        .collect::<Result<_, _>>()?;

    let mut classes: Vec<&BTreeMap<Digest32, u64>> = Vec::new();
    let mut class_of = Vec::with_capacity(laws.len());
    for (_, law) in &laws {
        let id = classes.iter().position(|c| *c == law).unwrap_or_else(|| {
            classes.push(law);
            classes.len() - 1
        });
        class_of.push(id);
    }
    let matrix: Vec<Vec<Ratio<u64>>> = classes
        .iter()
        .map(|a| classes.iter().map(|b| tv_counts(a, b)).collect())
        .collect();
    let max_tv = matrix
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or_else(|| Ratio::from_integer(0));
    let query_invariant = laws.iter().all(|(json, _)| *json == reference_json);

    let entries = pairs
        .iter()
        .zip(&laws)
        .zip(&class_of)
        .map(|(((v, side), (json, _)), &id)| PairEntry {
            desired: *v,
            side: side.audit_index_set().to_vec(),
            distribution: id,
            query_matches_reference: *json == reference_json,
            tv_to_reference: matrix[class_of[0]][id],
        })
        .collect();
    let pass = query_invariant && max_tv == Ratio::from_integer(0);
    Ok(AuditVerdict {
        mode: AuditMode::Exact,
        protocol: protocol.name(),
        query_invariant,
        answer_tv_distance: Some(max_tv),
        mi_estimate: None,
        mi_threshold: None,
        trials: laws.len() as u64,
        verdict: if pass { Outcome::Pass } else { Outcome::Fail },
        exact: Some(ExactDetails {
            support_size: support,
            distributions: classes.len(),
            distribution_tv: matrix
                .iter()
                .map(|row| row.iter().map(|r| rational::format(r)).collect())
                .collect(),
            pairs: entries,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticalConfig {
    pub trials: u64,
    pub seed: u64,
    pub min_trials: u64,
    /// Digest buckets for the answer variable.
    pub buckets: u64,
}

impl Default for StatisticalConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            min_trials: 100,
            buckets: 64,
        }
    }
}

/// Plug-in estimate of `I(V, S; digest(Q, A))` on a fixed random store.
///
/// Under independence `2N·Î` is approximately chi-square with
/// `df = (|X|−1)(|Y|−1)` degrees of freedom (observed supports), so the
/// audit passes when `Î ≤ (df + 4·√(2·df)) / (2N)`.
pub fn audit_statistical(
    protocol: &dyn AuditedProtocol,
    params: &InstanceParams,
    config: &StatisticalConfig,
) -> Result<AuditVerdict, AuditError> {
    if config.trials == 0 {
        return Err(AuditError::ZeroTrials);
    }
    if config.trials < config.min_trials {
        return Err(AuditError::TooFewTrials {
            trials: config.trials,
            min: config.min_trials,
        });
    }
    params.validate()?;
    if params.side_info_count() == 1 {
        return Err(AuditError::Degenerate);
    }
    let layout = DatabaseLayout::build(params, derive_seed(config.seed, "audit-layout", 0))?;
    let store = MessageStore::random(&layout, derive_seed(config.seed, "audit-store", 0))?;
    let buckets = config.buckets.max(1);

    let samples: Vec<((usize, Vec<usize>), u64, Digest32)> = (0..config.trials)
        .into_par_iter()
        .map(|t| -> Result<_, AuditError> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "audit-trial", t));
            let v = sample_desired_class(params.gamma, &mut rng);
            let side = sample_side_info(&layout, &params.ks, rng.random())?;
            let query = protocol.query(v, &side, &store)?;
            let selection = sample_selection(&query, params, rng.random())?;
            let answer = protocol.answer(v, &side, &query, &store, &selection)?;
            let json = query.to_json();
            let d = digest_pair(&json, &answer);
            let y = u64::from_le_bytes(d[..8].try_into().expect("32-byte digest")) % buckets;
            Ok((
                (v, side.audit_index_set().to_vec()),
                y,
                digest(json.as_bytes()),
            ))
        })
        .collect::<Result<_, _>>()?;

    let query_invariant = samples.iter().all(|s| s.2 == samples[0].2);
    let mut joint: HashMap<(&(usize, Vec<usize>), u64), u64> = HashMap::new();
    let mut px: HashMap<&(usize, Vec<usize>), u64> = HashMap::new();
    let mut py: HashMap<u64, u64> = HashMap::new();
    for (x, y, _) in &samples {
        *joint.entry((x, *y)).or_insert(0) += 1;
        *px.entry(x).or_insert(0) += 1;
        *py.entry(*y).or_insert(0) += 1;
    }
    let n = config.trials as f64;
    let mi_nats: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let c = c as f64;
            c / n * (c * n / (px[x] as f64 * py[y] as f64)).ln()
        })
        .sum::<f64>()
        .max(0.0);
    let df = ((px.len() - 1) * (py.len() - 1)) as f64;
    let threshold_nats = (df + 4.0 * (2.0 * df).sqrt()) / (2.0 * n);
    let ln_q = f64::from(params.q).ln();
    let pass = query_invariant && mi_nats <= threshold_nats;
    Ok(AuditVerdict {
        mode: AuditMode::Statistical,
        protocol: protocol.name(),
        query_invariant,
        answer_tv_distance: None,
        mi_estimate: Some(mi_nats / ln_q),
        mi_threshold: Some(threshold_nats / ln_q),
        trials: config.trials,
        verdict: if pass { Outcome::Pass } else { Outcome::Fail },
        exact: None,
    })
}

/// FSI queries read the side information by design, so only independence
/// from `v` is checked: the query law, averaged over `S ∈ 𝒮` and the user's
/// coins, must be the same for every `v`. `query_invariant` reports exactly
/// that, and `answer_tv_distance` is the largest distance between two of
/// these laws.
pub fn audit_fsi_queries(store: &MessageStore, cap: usize) -> Result<AuditVerdict, AuditError> {
    let params = store.params();
    let sides = enumerate_side_info_sets(store.layout(), &params.ks, cap)?;
    let per_side = Ratio::new(1, sides.len() as u64);
    let mut laws: Vec<BTreeMap<String, Ratio<u64>>> = Vec::with_capacity(params.gamma);
    let mut enumerated: u128 = 0;
    for v in 0..params.gamma {
        let mut law = BTreeMap::new();
        for side in &sides {
            let holdings = store.positional_holdings(side);
            let support = fsi_query_support(v, &holdings)?;
            enumerated += support.len() as u128;
            if enumerated > cap as u128 {
                return Err(AuditError::TooLarge {
                    count: enumerated,
                    cap,
                });
            }
            for (plan, weight) in support {
                *law.entry(plan.query.to_json())
                    .or_insert_with(|| Ratio::from_integer(0)) += weight * per_side;
            }
        }
        laws.push(law);
    }
    let mut max_tv = Ratio::from_integer(0);
    for a in &laws {
        for b in &laws {
            let keys: HashSet<&String> = a.keys().chain(b.keys()).collect();
            let zero = Ratio::from_integer(0);
            let sum = keys.into_iter().fold(zero, |acc, k| {
                let x = a.get(k).copied().unwrap_or(zero);
                let y = b.get(k).copied().unwrap_or(zero);
                acc + if x > y { x - y } else { y - x }
            });
            max_tv = max_tv.max(sum / 2);
        }
    }
    let invariant = max_tv == Ratio::from_integer(0);
    Ok(AuditVerdict {
        mode: AuditMode::Exact,
        protocol: "FSI".into(),
        query_invariant: invariant,
        answer_tv_distance: Some(max_tv),
        mi_estimate: None,
        mi_threshold: None,
        trials: enumerated as u64,
        verdict: if invariant {
            Outcome::Pass
        } else {
            Outcome::Fail
        },
        exact: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(mus: &[usize], ks: &[usize], q: u32, seed: u64) -> MessageStore {
        let params = InstanceParams::new(mus.to_vec(), ks.to_vec(), 2, q).unwrap();
        let layout = DatabaseLayout::build(&params, seed).unwrap();
        MessageStore::random(&layout, seed + 1).unwrap()
    }

    #[test]
    fn honest_scheme_passes_exactly() {
        let s = store(&[4, 2], &[0, 1], 3, 1);
        let verdict = audit_exact(&UsiScheme::default(), &s, DEFAULT_EXACT_CAP).unwrap();
        assert!(verdict.passed());
        let details = verdict.exact.unwrap();
        assert_eq!(details.pairs.len(), 4);
        assert_eq!(details.support_size, 4);
        assert_eq!(details.distributions, 1);
        assert_eq!(verdict.answer_tv_distance, Some(Ratio::from_integer(0)));
    }

    #[test]
    fn deterministic_all_parity_instance() {
        let s = store(&[2, 2], &[1, 1], 3, 2);
        let verdict = audit_exact(&UsiScheme::default(), &s, DEFAULT_EXACT_CAP).unwrap();
        assert!(verdict.passed());
        assert_eq!(verdict.exact.unwrap().support_size, 1);
    }

    #[test]
    fn mutants_fail_exactly() {
        let s = store(&[4, 2], &[0, 1], 3, 3);
        let expected = [
            (Mutant::VDependentSelection, Some(Ratio::new(3, 4))),
            (Mutant::SDependentParityRows, Some(Ratio::from_integer(1))),
            (Mutant::VAppendedMetadata, Some(Ratio::from_integer(1))),
            (Mutant::VTaggedQuery, None),
        ];
        for (mutant, tv) in expected {
            let verdict = audit_exact(&mutant, &s, DEFAULT_EXACT_CAP).unwrap();
            assert!(!verdict.passed(), "{mutant:?}");
            if let Some(tv) = tv {
                assert_eq!(verdict.answer_tv_distance, Some(tv), "{mutant:?}");
                assert!(verdict.query_invariant);
            } else {
                assert!(!verdict.query_invariant);
            }
        }
    }

    #[test]
    fn exact_cap_points_to_statistical() {
        let s = store(&[4, 2], &[0, 1], 3, 4);
        let err = audit_exact(&UsiScheme::default(), &s, 10).unwrap_err();
        assert_eq!(err, AuditError::TooLarge { count: 16, cap: 10 });
        assert!(err.to_string().contains("statistical"));
    }

    #[test]
    fn statistical_rejects_bad_configs() {
        let params = InstanceParams::new(vec![4, 2], vec![0, 1], 1, 3).unwrap();
        let zero = StatisticalConfig {
            trials: 0,
            ..Default::default()
        };
        assert_eq!(
            audit_statistical(&UsiScheme::default(), &params, &zero),
            Err(AuditError::ZeroTrials)
        );
        let few = StatisticalConfig {
            trials: 10,
            ..Default::default()
        };
        assert!(matches!(
            audit_statistical(&UsiScheme::default(), &params, &few),
            Err(AuditError::TooFewTrials { .. })
        ));
        let degenerate = InstanceParams::new(vec![2, 2], vec![0, 0], 1, 3).unwrap();
        assert_eq!(
            audit_statistical(
                &UsiScheme::default(),
                &degenerate,
                &StatisticalConfig::default()
            ),
            Err(AuditError::Degenerate)
        );
    }

    #[test]
    fn statistical_separates_honest_and_leaky() {
        let params = InstanceParams::new(vec![4, 2], vec![0, 1], 1, 3).unwrap();
        let config = StatisticalConfig {
            trials: 4000,
            seed: 9,
            ..Default::default()
        };
        let honest = audit_statistical(&UsiScheme::default(), &params, &config).unwrap();
        assert!(honest.passed(), "{honest:?}");
        let leaky = audit_statistical(&Mutant::VAppendedMetadata, &params, &config).unwrap();
        assert!(!leaky.passed());
        // at most one bit of v in ternary units; bucket collisions can only lose some of it
        let bit = 2f64.ln() / 3f64.ln();
        let mi = leaky.mi_estimate.unwrap();
        assert!(mi > bit / 2.0 && mi <= bit + 0.01, "{leaky:?}");
        assert!(mi > 20.0 * leaky.mi_threshold.unwrap());
    }

    #[test]
    fn fsi_queries_do_not_depend_on_v() {
        for (mus, ks) in [
            (&[2usize, 2, 2][..], &[1usize, 0, 1][..]),
            (&[3, 2], &[1, 1]),
            (&[2, 3, 2], &[0, 0, 0]),
        ] {
            let s = store(mus, ks, 5, 5);
            let verdict = audit_fsi_queries(&s, DEFAULT_EXACT_CAP).unwrap();
            assert!(verdict.passed(), "{mus:?} {ks:?}");
        }
    }

    #[test]
    fn verdict_json_round_trips() {
        let s = store(&[3, 2], &[0, 1], 3, 6);
        let verdict = audit_exact(&UsiScheme::default(), &s, DEFAULT_EXACT_CAP).unwrap();
        let back: AuditVerdict = serde_json::from_str(&verdict.to_json()).unwrap();
        assert_eq!(back, verdict);
        assert!(
            verdict
                .to_json()
                .contains("\"answer_tv_distance\": \"0/1\"")
                || verdict.to_json().contains("\"0\"")
        );
    }
}
