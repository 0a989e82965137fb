//! Batch experiments: seeded trials over instance grids with optional oracle
//! cross-checks and privacy audits.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{fsi_eta, fsi_rate, mppir_rate, usi_denominator};
use crate::audit::{
    audit_exact, audit_fsi_queries, audit_statistical, AuditError, AuditVerdict, StatisticalConfig,
    UsiScheme, DEFAULT_EXACT_CAP,
};
use crate::field::FiniteField;
use crate::model::{
    enumerate_profiles, sample_side_info, DatabaseLayout, HeldMessages, InstanceParams, LabelPair,
    MessageStore, ModelError,
};
use crate::oracle::{
    all_clients_satisfied, answer_to_encoding_matrix, min_code_length_bruteforce,
    rank_lower_bound_certificate, restricted_lower_bound, OracleError, PicodInstance,
    DEFAULT_CANDIDATE_CAP, DEFAULT_CLIENT_CAP,
};
use crate::protocol::{
    achieved_rate_multi, class_modes, decode_labelled, download_cost, fsi_answer, fsi_decode,
    fsi_query, musi_answer, musi_decode, musi_query, usi_answer, usi_decode, usi_query, Answer,
    ClassMode, ProtocolError, Query, RetrievalResult, Scheme,
};
use crate::rational::{self, Rational};
use crate::seed::derive_seed;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("instance {id}: {source}")]
    Instance { id: String, source: ModelError },
    #[error(
        "instance {id}: class {class} has mu = k; only rate bounds are known there \
         (see analysis::msi_rate_bounds), so no scheme is run"
    )]
    MsiRegime { id: String, class: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub mus: Vec<usize>,
    pub ks: Vec<usize>,
    #[serde(default = "one")]
    pub symbol_len: usize,
    /// Smallest adequate field when absent.
    #[serde(default)]
    pub q: Option<u32>,
}

/// Every profile with `Γ ∈ gammas`, `1 ≤ μ_i ≤ max_mu`, `0 ≤ k_i < μ_i`,
/// for each symbol length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub gammas: Vec<usize>,
    pub max_mu: usize,
    #[serde(default)]
    pub max_total: Option<usize>,
    #[serde(default = "default_symbol_lens")]
    pub symbol_lens: Vec<usize>,
    #[serde(default)]
    pub q: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Brute-force budget in (candidate matrix × client) checks.
    #[serde(default = "default_budget")]
    pub budget: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditSetting {
    #[default]
    Off,
    Exact,
    Statistical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default)]
    pub mode: AuditSetting,
    #[serde(default = "default_audit_trials")]
    pub trials: u64,
    #[serde(default = "default_exact_cap")]
    pub cap: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            mode: AuditSetting::Off,
            trials: default_audit_trials(),
            cap: default_exact_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub lambda: usize,
    #[serde(default = "one")]
    pub nu: usize,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Keep every trial record in the report, not only failing ones.
    #[serde(default = "yes")]
    pub keep_records: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_symbol_lens() -> Vec<usize> {
    vec![1]
}
fn default_budget() -> u64 {
    1 << 24
}
fn default_audit_trials() -> u64 {
    10_000
}
fn default_exact_cap() -> usize {
    DEFAULT_EXACT_CAP
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Explicit instances followed by the grid, each validated.
    pub fn expand(&self) -> Result<Vec<Instance>, HarnessError> {
        match self.scheme {
            Scheme::Usi if self.lambda != 1 || self.nu != 1 => {
                return Err(HarnessError::Config(
                    "USI runs use lambda = nu = 1; choose M_USI otherwise".into(),
                ))
            }
            Scheme::Fsi if self.lambda != 1 || self.nu != 1 => {
                return Err(HarnessError::Config("FSI runs use lambda = nu = 1".into()))
            }
            _ if self.lambda == 0 || self.nu == 0 => {
                return Err(HarnessError::Config(
                    "lambda and nu must be positive".into(),
                ))
            }
            _ => {}
        }
        let mut specs = self.instances.clone();
        if let Some(grid) = &self.grid {
            if grid.gammas.iter().any(|&g| g < 2) || grid.max_mu == 0 || grid.symbol_lens.is_empty()
            {
                return Err(HarnessError::Config(
                    "grid needs gammas >= 2, max_mu >= 1 and at least one symbol length".into(),
                ));
            }
            for &gamma in &grid.gammas {
                let total = grid.max_total.unwrap_or(gamma * grid.max_mu);
                for (mus, ks) in enumerate_profiles(gamma, grid.max_mu, total) {
                    if self.scheme == Scheme::MUsi
                        && mus.iter().zip(&ks).any(|(&m, &k)| m < k + self.lambda)
                    {
                        continue;
                    }
                    for &symbol_len in &grid.symbol_lens {
                        specs.push(InstanceSpec {
                            mus: mus.clone(),
                            ks: ks.clone(),
                            symbol_len,
                            q: grid.q,
                        });
                    }
                }
            }
        }
        if specs.is_empty() {
            return Err(HarnessError::Config("no instances configured".into()));
        }
        specs.iter().map(|s| self.instance(s)).collect()
    }

    fn instance(&self, spec: &InstanceSpec) -> Result<Instance, HarnessError> {
        let provisional = format!(
            "{}:mu={}:k={}:L={}",
            scheme_tag(self.scheme),
            join(&spec.mus),
            join(&spec.ks),
            spec.symbol_len
        );
        if spec.mus.len() != spec.ks.len() {
            return Err(HarnessError::Instance {
                id: provisional,
                source: ModelError::ClassCountMismatch {
                    gamma: spec.mus.len(),
                    mus: spec.mus.len(),
                    ks: spec.ks.len(),
                },
            });
        }
        if let Some(class) = spec.mus.iter().zip(&spec.ks).position(|(m, k)| m == k) {
            return Err(HarnessError::MsiRegime {
                id: provisional,
                class,
            });
        }
        let q = match spec.q {
            Some(q) => q,
            None => smallest_field(self.required_code_length(&spec.mus, &spec.ks)),
        };
        let id = format!("{provisional}:q={q}");
        let params = InstanceParams::new(spec.mus.clone(), spec.ks.clone(), spec.symbol_len, q)
            .map_err(|source| HarnessError::Instance {
                id: id.clone(),
                source,
            })?;
        if self.scheme == Scheme::MUsi {
            if self.nu > params.gamma {
                return Err(HarnessError::Config(format!(
                    "{id}: nu = {} exceeds the number of classes",
                    self.nu
                )));
            }
            if let Some(class) =
                (0..params.gamma).find(|&i| params.mus[i] < params.ks[i] + self.lambda)
            {
                return Err(HarnessError::Config(format!(
                    "{id}: class {class} cannot supply lambda = {} new messages",
                    self.lambda
                )));
            }
        }
        Ok(Instance { id, params })
    }

    /// Longest MDS code the scheme will build, ignoring codes that exist over any field.
    fn required_code_length(&self, mus: &[usize], ks: &[usize]) -> usize {
        match self.scheme {
            Scheme::Fsi => {
                let gamma = mus.len();
                let eta = fsi_eta(ks);
                if eta == gamma {
                    2
                } else {
                    2 * gamma - eta + 1
                }
            }
            Scheme::Usi | Scheme::MUsi => class_modes(mus, ks, self.lambda)
                .iter()
                .enumerate()
                .filter(|(i, m)| **m == ClassMode::Parity && mus[*i] - ks[*i] > 1)
                .map(|(i, _)| 2 * mus[i] - ks[i])
                .max()
                .unwrap_or(2),
        }
    }
}

fn scheme_tag(scheme: Scheme) -> &'static str {
    match scheme {
        Scheme::Usi => "USI",
        Scheme::Fsi => "FSI",
        Scheme::MUsi => "M_USI",
    }
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(".")
}

fn spaced(values: &[usize]) -> String {
    join(values).replace('.', " ")
}

/// Smallest supported field with at least `n` elements.
pub fn smallest_field(n: usize) -> u32 {
    (n.max(2) as u64..)
        .find(|&q| FiniteField::new(q).is_ok())
        .expect("fields of every large enough order exist") as u32
}

fn io_error(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub params: InstanceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub instance_id: String,
    pub trial: u64,
    pub seed: u64,
    pub desired: Vec<usize>,
    pub download_cost: usize,
    #[serde(with = "rational::option")]
    pub achieved_rate: Option<Rational>,
    pub new_from_class: Vec<usize>,
    pub decode_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Not serialized, so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub lower_bound: usize,
    pub scheme_columns: usize,
    pub scheme_rank: usize,
    pub all_clients_satisfied: bool,
    /// `ϱ_Γ` from the certificate, when it was produced.
    pub certificate_varrho: Option<usize>,
    pub certificate_error: Option<String>,
    pub bruteforce_min_length: Option<usize>,
    pub bruteforce_note: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub status: AuditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<AuditVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub id: String,
    pub params: InstanceParams,
    pub trials: u64,
    pub expected_download: usize,
    #[serde(with = "rational::string")]
    pub expected_rate: Rational,
    /// The common achieved rate when every trial hit the same value.
    #[serde(with = "rational::option")]
    pub achieved_rate: Option<Rational>,
    pub rate_exact: bool,
    pub decode_failures: u64,
    pub oracle: Option<OracleSummary>,
    pub audit: Option<AuditSummary>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub instances: Vec<InstanceReport>,
    pub failures: Vec<TrialRecord>,
    pub records: Vec<TrialRecord>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "id",
                "scheme",
                "gamma",
                "mus",
                "ks",
                "symbol_len",
                "q",
                "trials",
                "expected_download",
                "expected_rate",
                "achieved_rate",
                "rate_exact",
                "decode_failures",
                "oracle",
                "audit",
                "passed",
            ])
            .expect("in-memory write");
        for r in &self.instances {
            let oracle = match &r.oracle {
                None => "off".to_string(),
                Some(o) if o.passed => "pass".into(),
                Some(_) => "fail".into(),
            };
            let audit = match &r.audit {
                None => "off".to_string(),
                Some(a) => format!("{:?}", a.status).to_lowercase(),
            };
            writer
                .write_record([
                    r.id.clone(),
                    scheme_tag(self.config.scheme).to_string(),
                    r.params.gamma.to_string(),
                    spaced(&r.params.mus),
                    spaced(&r.params.ks),
                    r.params.symbol_len.to_string(),
                    r.params.q.to_string(),
                    r.trials.to_string(),
                    r.expected_download.to_string(),
                    rational::format(&r.expected_rate),
                    r.achieved_rate
                        .as_ref()
                        .map(rational::format)
                        .unwrap_or_default(),
                    r.rate_exact.to_string(),
                    r.decode_failures.to_string(),
                    oracle,
                    audit,
                    r.passed.to_string(),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
    }

    /// Writes `report.json` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(|e| io_error(&json, e))?;
        let csv = dir.join("summary.csv");
        fs::write(&csv, self.summary_csv()).map_err(|e| io_error(&csv, e))?;
        Ok(())
    }
}

/// Expected `(D, rate)` of the configured scheme.
fn expected(
    config: &ExperimentConfig,
    params: &InstanceParams,
) -> Result<(usize, Rational), HarnessError> {
    let l = params.symbol_len;
    let rate_err = |e: crate::analysis::AnalysisError| HarnessError::Config(e.to_string());
    Ok(match config.scheme {
        Scheme::Usi | Scheme::MUsi => (
            l * usi_denominator(&params.mus, &params.ks, config.lambda),
            mppir_rate(&params.mus, &params.ks, config.lambda, config.nu).map_err(rate_err)?,
        ),
        Scheme::Fsi => {
            let eta = fsi_eta(&params.ks);
            (
                l * (params.gamma - eta + 1),
                fsi_rate(params.gamma, eta).map_err(rate_err)?,
            )
        }
    })
}

/// Runs every trial, then the oracle and audit stages.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let instances = config.expand()?;
    let expectations = instances
        .iter()
        .map(|i| expected(config, &i.params))
        .collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(usize, u64)> = (0..instances.len())
        .flat_map(|i| (0..config.trials).map(move |t| (i, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(i, t)| run_trial(config, &instances[i], expectations[i].0, t))
        .collect();

    let mut reports = Vec::with_capacity(instances.len());
    let per = config.trials as usize;
    for (i, instance) in instances.iter().enumerate() {
        let chunk = &records[i * per..(i + 1) * per];
        let (expected_download, expected_rate) = expectations[i];
        let rates: BTreeSet<Option<Rational>> = chunk.iter().map(|r| r.achieved_rate).collect();
        let achieved_rate = match rates.len() {
            1 => *rates.iter().next().expect("one element"),
            _ => None,
        };
        let rate_exact = chunk.iter().all(|r| {
            r.achieved_rate == Some(expected_rate) && r.download_cost == expected_download
        });
        let decode_failures = chunk.iter().filter(|r| !r.decode_ok).count() as u64;
        let oracle = if config.oracle.enabled && config.scheme == Scheme::Usi {
            Some(run_oracle(config, instance)?)
        } else {
            None
        };
        let audit = match config.audit.mode {
            AuditSetting::Off => None,
            mode => Some(run_audit(config, instance, mode)?),
        };
        let passed = rate_exact
            && decode_failures == 0
            && oracle.as_ref().is_none_or(|o| o.passed)
            && audit.as_ref().is_none_or(|a| a.status != AuditStatus::Fail);
        reports.push(InstanceReport {
            id: instance.id.clone(),
            params: instance.params.clone(),
            trials: config.trials,
            expected_download,
            expected_rate,
            achieved_rate,
            rate_exact,
            decode_failures,
            oracle,
            audit,
            passed,
        });
    }
    let failures: Vec<TrialRecord> = records
        .iter()
        .zip(&jobs)
        .filter(|(r, (i, _))| !r.decode_ok || r.download_cost != expectations[*i].0)
        .map(|(r, _)| r.clone())
        .collect();
    let passed = reports.iter().all(|r| r.passed);
    Ok(ExperimentReport {
        version: REPORT_VERSION,
        config: config.clone(),
        instances: reports,
        failures,
        records: if config.keep_records {
            records
        } else {
            Vec::new()
        },
        passed,
    })
}

/// The randomness of one trial, all derived from its seed.
struct TrialDraw {
    layout: DatabaseLayout,
    store: MessageStore,
    side: crate::model::SideInfo,
    desired: Vec<usize>,
    user_seed: u64,
    server_seed: u64,
}

fn draw(
    config: &ExperimentConfig,
    params: &InstanceParams,
    seed: u64,
) -> Result<TrialDraw, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = DatabaseLayout::build(params, rng.random())?;
    let store = MessageStore::random(&layout, rng.random())?;
    let side = sample_side_info(&layout, &params.ks, rng.random())?;
    let mut desired = index::sample(&mut rng, params.gamma, config.nu).into_vec();
    desired.sort_unstable();
    Ok(TrialDraw {
        layout,
        store,
        side,
        desired,
        user_seed: rng.random(),
        server_seed: rng.random(),
    })
}

/// Derived seed of trial `trial` of instance `id`.
pub fn trial_seed(master: u64, id: &str, trial: u64) -> u64 {
    derive_seed(master, id, trial)
}

fn run_trial(
    config: &ExperimentConfig,
    instance: &Instance,
    expected_download: usize,
    trial: u64,
) -> TrialRecord {
    let started = Instant::now();
    let seed = trial_seed(config.seed, &instance.id, trial);
    let mut record = TrialRecord {
        instance_id: instance.id.clone(),
        trial,
        seed,
        desired: Vec::new(),
        download_cost: 0,
        achieved_rate: None,
        new_from_class: Vec::new(),
        decode_ok: false,
        error: None,
        wall_time: Duration::ZERO,
    };
    match execute(config, &instance.params, seed, &mut record) {
        Ok(()) if record.download_cost != expected_download => {
            record.decode_ok = false;
            record.error = Some(format!(
                "download cost {} differs from {expected_download}",
                record.download_cost
            ));
        }
        Ok(()) => {}
        Err(e) => {
            record.decode_ok = false;
            record.error = Some(e.to_string());
        }
    }
    record.wall_time = started.elapsed();
    record
}

fn execute(
    config: &ExperimentConfig,
    params: &InstanceParams,
    seed: u64,
    record: &mut TrialRecord,
) -> Result<(), HarnessError> {
    let d = draw(config, params, seed)?;
    record.desired = d.desired.clone();
    let need = config.lambda;
    match config.scheme {
        Scheme::Usi | Scheme::MUsi => {
            let held = d.store.held_messages(&d.side);
            let (answer, result) = if config.scheme == Scheme::Usi {
                let query = usi_query(d.desired[0], &held);
                let answer = usi_answer(&query, &d.store, d.server_seed)?;
                let result = usi_decode(&answer, &held, d.desired[0]);
                (answer, result)
            } else {
                let query = musi_query(&d.desired, &held, config.lambda);
                let answer = musi_answer(&query, &d.store, d.server_seed)?;
                let result = musi_decode(&answer, &held, &d.desired, config.lambda);
                (answer, result)
            };
            record.download_cost = download_cost(&answer);
            record.achieved_rate = achieved_rate_multi(&answer, config.lambda * config.nu);
            let result = result?;
            record.new_from_class = result.new_from_class.clone();
            let verified = result.decoded.iter().all(|m| {
                let label = LabelPair {
                    class: m.class,
                    id: m.id.unwrap_or(u64::MAX),
                };
                d.layout.message_with_label(label).is_some_and(|i| {
                    d.store.message(i) == m.symbols.as_slice() && !held.contains(&label)
                })
            });
            let kappa = params.kappa();
            record.decode_ok = verified
                && result.new_from_class.iter().all(|&n| n >= need)
                && result.total_new() <= params.f - kappa;
            if !record.decode_ok {
                record.error = Some("decoded messages failed verification".into());
            }
        }
        Scheme::Fsi => {
            let v = d.desired[0];
            let holdings = d.store.positional_holdings(&d.side);
            let plan = fsi_query(v, &holdings, d.user_seed)?;
            let answer = fsi_answer(&plan.query, &d.store)?;
            record.download_cost = download_cost(&answer);
            record.achieved_rate = achieved_rate_multi(&answer, 1);
            let result = fsi_decode(&plan, &answer, &holdings)?;
            record.new_from_class = result.new_from_class.clone();
            let beta = plan.betas()[v];
            let target = d.layout.class_members(v)[beta];
            record.decode_ok = result.decoded.iter().any(|m| {
                m.class == v
                    && m.position == Some(beta)
                    && m.symbols.as_slice() == d.store.message(target)
            });
            if !record.decode_ok {
                record.error = Some("message at the desired position was not recovered".into());
            }
        }
    }
    Ok(())
}

fn instance_store(
    config: &ExperimentConfig,
    instance: &Instance,
    label: &str,
) -> Result<MessageStore, HarnessError> {
    let stage = format!("{}/{label}", instance.id);
    let layout = DatabaseLayout::build(&instance.params, derive_seed(config.seed, &stage, 0))?;
    Ok(MessageStore::random(
        &layout,
        derive_seed(config.seed, &stage, 1),
    )?)
}

fn run_oracle(
    config: &ExperimentConfig,
    instance: &Instance,
) -> Result<OracleSummary, HarnessError> {
    let params = &instance.params;
    let store = instance_store(config, instance, "oracle")?;
    let layout = store.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &format!("{}/oracle", instance.id),
        2,
    ));
    let side = sample_side_info(layout, &params.ks, rng.random())?;
    let query = usi_query(0, &store.held_messages(&side));
    let answer = usi_answer(&query, &store, rng.random())?;
    let g = answer_to_encoding_matrix(&answer, layout)?;
    let picod = PicodInstance::from_layout(layout, params.gamma)?;
    let bound = restricted_lower_bound(&params.mus, &params.ks);
    let satisfied = all_clients_satisfied(&g, &picod, DEFAULT_CLIENT_CAP)?;
    let (certificate_varrho, certificate_error) =
        match rank_lower_bound_certificate(&g, &picod, DEFAULT_CLIENT_CAP, DEFAULT_CANDIDATE_CAP) {
            Ok(report) => (Some(report.varrho), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let (bruteforce_min_length, bruteforce_note) =
        match min_code_length_bruteforce(&picod, bound, u128::from(config.oracle.budget)) {
            Ok(outcome) => (outcome.min_length, None),
            Err(OracleError::BudgetExceeded { .. })
            | Err(OracleError::EnumerationTooLarge { .. }) => (
                None,
                Some("skipped: search exceeds the configured budget".into()),
            ),
            Err(e) => return Err(e.into()),
        };
    let passed = satisfied
        && g.l() == bound
        && g.rank() == bound
        && certificate_varrho == Some(bound)
        && bruteforce_note.is_some() == bruteforce_min_length.is_none()
        && bruteforce_min_length.is_none_or(|l| l == bound);
    Ok(OracleSummary {
        lower_bound: bound,
        scheme_columns: g.l(),
        scheme_rank: g.rank(),
        all_clients_satisfied: satisfied,
        certificate_varrho,
        certificate_error,
        bruteforce_min_length,
        bruteforce_note,
        passed,
    })
}

fn run_audit(
    config: &ExperimentConfig,
    instance: &Instance,
    mode: AuditSetting,
) -> Result<AuditSummary, HarnessError> {
    let summarize = |result: Result<AuditVerdict, AuditError>| match result {
        Ok(v) => Ok(AuditSummary {
            status: if v.passed() {
                AuditStatus::Pass
            } else {
                AuditStatus::Fail
            },
            note: None,
            verdict: Some(v),
        }),
        Err(e @ (AuditError::TooLarge { .. } | AuditError::Degenerate))
        | Err(e @ AuditError::Model(ModelError::EnumerationTooLarge { .. })) => Ok(AuditSummary {
            status: AuditStatus::Skipped,
            note: Some(e.to_string()),
            verdict: None,
        }),
        Err(e) => Err(HarnessError::from(e)),
    };
    let scheme = UsiScheme {
        lambda: config.lambda,
    };
    match (config.scheme, mode) {
        (_, AuditSetting::Off) => unreachable!("caller filters Off"),
        (Scheme::Fsi, _) => {
            let store = instance_store(config, instance, "audit")?;
            summarize(audit_fsi_queries(&store, config.audit.cap))
        }
        (_, AuditSetting::Exact) => {
            let store = instance_store(config, instance, "audit")?;
            summarize(audit_exact(&scheme, &store, config.audit.cap))
        }
        (_, AuditSetting::Statistical) => {
            let stat = StatisticalConfig {
                trials: config.audit.trials,
                seed: derive_seed(config.seed, &format!("{}/audit", instance.id), 2),
                ..Default::default()
            };
            summarize(audit_statistical(&scheme, &instance.params, &stat))
        }
    }
}

/// Decodes saved wire files. Only labelled (USI and M_USI) answers can be
/// replayed: FSI decoding needs the user's private plan.
pub fn replay(
    query_json: &str,
    answer_json: &str,
    held_json: &str,
) -> Result<RetrievalResult, ProtocolError> {
    let query = Query::from_json(query_json)?;
    let answer = Answer::from_json(answer_json)?;
    let held = HeldMessages::from_json(held_json)?;
    if answer.scheme != query.scheme {
        return Err(ProtocolError::ProtocolViolation(format!(
            "answer scheme {:?} does not match query scheme {:?}",
            answer.scheme, query.scheme
        )));
    }
    match query.scheme {
        Scheme::Fsi => Err(ProtocolError::UnsupportedParameters(
            "FSI answers cannot be replayed without the user's plan".into(),
        )),
        Scheme::Usi | Scheme::MUsi => {
            if query.ks.as_deref() != Some(held.counts()) {
                return Err(ProtocolError::DecodeMetadata(
                    "side information counts differ from the query".into(),
                ));
            }
            let result = decode_labelled(&answer, &held)?;
            if let Some(class) = result.new_from_class.iter().position(|&n| n < query.lambda) {
                return Err(ProtocolError::NoNewMessage { class });
            }
            Ok(result)
        }
    }
}

/// One complete USI or M_USI exchange, for writing wire files.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub query: Query,
    pub answer: Answer,
    pub held: HeldMessages,
    pub result: RetrievalResult,
}

pub fn run_session(
    params: &InstanceParams,
    lambda: usize,
    seed: u64,
) -> Result<Session, HarnessError> {
    let config = ExperimentConfig {
        scheme: if lambda == 1 {
            Scheme::Usi
        } else {
            Scheme::MUsi
        },
        lambda,
        nu: 1,
        trials: 1,
        seed,
        instances: Vec::new(),
        grid: None,
        oracle: OracleConfig::default(),
        audit: AuditConfig::default(),
        keep_records: true,
        output: None,
    };
    let d = draw(&config, params, seed)?;
    let held = d.store.held_messages(&d.side);
    let (query, answer) = if lambda == 1 {
        let query = usi_query(d.desired[0], &held);
        let answer = usi_answer(&query, &d.store, d.server_seed)?;
        (query, answer)
    } else {
        let query = musi_query(&d.desired, &held, lambda);
        let answer = musi_answer(&query, &d.store, d.server_seed)?;
        (query, answer)
    };
    let result = replay(&query.to_json(), &answer.to_json(), &held.to_json())?;
    Ok(Session {
        query,
        answer,
        held,
        result,
    })
}
