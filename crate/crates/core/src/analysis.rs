//! Closed-form capacities, rates and bounds as exact rationals.

use std::collections::BTreeSet;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{self, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(
        "classes {classes:?} are fully contained in the side information (mu = k); \
         this is the mixed-side-information regime, use msi_rate_bounds"
    )]
    MixedSideInformation { classes: Vec<usize> },
}

fn check_shape(mus: &[usize], ks: &[usize]) -> Result<(), AnalysisError> {
    if mus.len() != ks.len() {
        return Err(AnalysisError::InvalidInstance(format!(
            "{} class sizes, {} counts",
            mus.len(),
            ks.len()
        )));
    }
    if mus.len() < 2 {
        return Err(AnalysisError::InvalidInstance(
            "at least two classes are required".into(),
        ));
    }
    if let Some(i) = mus.iter().zip(ks).position(|(&mu, &k)| k > mu || mu == 0) {
        return Err(AnalysisError::InvalidInstance(format!(
            "class {i} has k > mu or mu = 0"
        )));
    }
    Ok(())
}

fn check_usi(mus: &[usize], ks: &[usize]) -> Result<(), AnalysisError> {
    check_shape(mus, ks)?;
    let classes: Vec<usize> = (0..mus.len()).filter(|&i| mus[i] == ks[i]).collect();
    if !classes.is_empty() {
        return Err(AnalysisError::MixedSideInformation { classes });
    }
    Ok(())
}

/// `Σ min{k_i + λ, μ_i − k_i}`.
pub fn usi_denominator(mus: &[usize], ks: &[usize], lambda: usize) -> usize {
    mus.iter()
        .zip(ks)
        .map(|(&mu, &k)| (k + lambda).min(mu - k))
        .sum()
}

/// `1 / Σ min{k_i + 1, μ_i − k_i}`.
pub fn capacity_usi(mus: &[usize], ks: &[usize]) -> Result<Rational, AnalysisError> {
    check_usi(mus, ks)?;
    Ok(Ratio::new(1, usi_denominator(mus, ks, 1) as u64))
}

/// `λν / Σ min{k_i + λ, μ_i − k_i}`, requiring `μ_i ≥ k_i + λ`.
pub fn mppir_rate(
    mus: &[usize],
    ks: &[usize],
    lambda: usize,
    nu: usize,
) -> Result<Rational, AnalysisError> {
    check_usi(mus, ks)?;
    if lambda == 0 || nu == 0 || nu > mus.len() {
        return Err(AnalysisError::InvalidInstance(format!(
            "lambda = {lambda}, nu = {nu}"
        )));
    }
    if let Some(i) = (0..mus.len()).find(|&i| mus[i] < ks[i] + lambda) {
        return Err(AnalysisError::InvalidInstance(format!(
            "class {i} has mu < k + lambda"
        )));
    }
    Ok(Ratio::new(
        (lambda * nu) as u64,
        usi_denominator(mus, ks, lambda) as u64,
    ))
}

/// `1/Γ`.
pub fn ppir_rate(gamma: usize) -> Rational {
    Ratio::new(1, gamma as u64)
}

/// `1/(f − κ)`.
pub fn pir_si_rate(f: usize, kappa: usize) -> Result<Rational, AnalysisError> {
    if kappa >= f {
        return Err(AnalysisError::InvalidInstance(format!(
            "kappa = {kappa} leaves nothing to retrieve from f = {f}"
        )));
    }
    Ok(Ratio::new(1, (f - kappa) as u64))
}

/// `1/(Γ − η + 1)`, achievable with fully identifiable side information.
pub fn fsi_rate(gamma: usize, eta: usize) -> Result<Rational, AnalysisError> {
    if eta == 0 || eta > gamma {
        return Err(AnalysisError::InvalidInstance(format!(
            "eta = {eta} outside 1..={gamma}"
        )));
    }
    Ok(Ratio::new(1, (gamma - eta + 1) as u64))
}

/// `η` of the FSI construction for a side-information profile.
pub fn fsi_eta(ks: &[usize]) -> usize {
    ks.iter().filter(|&&k| k > 0).count().max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundStatus {
    Proved,
    AchievableOnly,
    Conjecture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsiBounds {
    #[serde(with = "rational::string")]
    pub lower: Rational,
    #[serde(with = "rational::string")]
    pub upper: Rational,
    pub status: BoundStatus,
}

/// `1/(f − κ) ≤ R ≤ 1/(Γ − η + 1)` with `η = |{i : μ_i = k_i}|`. Unproved.
pub fn msi_rate_bounds(
    f: usize,
    kappa: usize,
    gamma: usize,
    eta: usize,
) -> Result<MsiBounds, AnalysisError> {
    if eta > gamma {
        return Err(AnalysisError::InvalidInstance(format!(
            "eta = {eta} exceeds gamma = {gamma}"
        )));
    }
    Ok(MsiBounds {
        lower: pir_si_rate(f, kappa)?,
        upper: Ratio::new(1, (gamma - eta + 1) as u64),
        status: BoundStatus::Conjecture,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    NoSideInfo,
    MaxSideInfo,
    PirSiEquivalent,
    Interior,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::NoSideInfo => "no-side-info",
            Regime::MaxSideInfo => "max-side-info",
            Regime::PirSiEquivalent => "pir-si-equivalent",
            Regime::Interior => "interior",
        }
    }
}

pub fn regime_classify(mus: &[usize], ks: &[usize]) -> BTreeSet<Regime> {
    let mut tags = BTreeSet::new();
    if ks.iter().all(|&k| k == 0) {
        tags.insert(Regime::NoSideInfo);
    }
    if mus.iter().zip(ks).all(|(&mu, &k)| k + 1 == mu) {
        tags.insert(Regime::MaxSideInfo);
    }
    if mus
        .iter()
        .zip(ks)
        .all(|(&mu, &k)| k + 1 >= mu.saturating_sub(k))
    {
        tags.insert(Regime::PirSiEquivalent);
    }
    if tags.is_empty() {
        tags.insert(Regime::Interior);
    }
    tags
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateReport {
    pub mus: Vec<usize>,
    pub ks: Vec<usize>,
    /// `None` in the mixed-side-information regime.
    #[serde(with = "rational::option")]
    pub capacity_usi: Option<Rational>,
    #[serde(with = "rational::string")]
    pub ppir_rate: Rational,
    #[serde(with = "rational::string")]
    pub pir_si_rate: Rational,
    pub fsi_eta: usize,
    #[serde(with = "rational::string")]
    pub fsi_rate: Rational,
    pub fsi_status: BoundStatus,
    pub lambda: usize,
    pub nu: usize,
    #[serde(with = "rational::option")]
    pub mppir_rate: Option<Rational>,
    pub msi_bounds: Option<MsiBounds>,
    pub regime: Vec<Regime>,
}

/// All closed-form rates for one instance. `μ_i = k_i` is accepted and
/// reported through the MSI bounds only.
pub fn rate_report(
    mus: &[usize],
    ks: &[usize],
    lambda: usize,
    nu: usize,
) -> Result<RateReport, AnalysisError> {
    check_shape(mus, ks)?;
    let f: usize = mus.iter().sum();
    let kappa: usize = ks.iter().sum();
    let gamma = mus.len();
    let msi_eta = (0..gamma).filter(|&i| mus[i] == ks[i]).count();
    let usi = msi_eta == 0;
    let eta = fsi_eta(ks);
    Ok(RateReport {
        mus: mus.to_vec(),
        ks: ks.to_vec(),
        capacity_usi: usi.then(|| capacity_usi(mus, ks)).transpose()?,
        ppir_rate: ppir_rate(gamma),
        pir_si_rate: pir_si_rate(f, kappa)?,
        fsi_eta: eta,
        fsi_rate: fsi_rate(gamma, eta)?,
        fsi_status: BoundStatus::AchievableOnly,
        lambda,
        nu,
        mppir_rate: if usi {
            mppir_rate(mus, ks, lambda, nu).ok()
        } else {
            None
        },
        msi_bounds: (!usi)
            .then(|| msi_rate_bounds(f, kappa, gamma, msi_eta))
            .transpose()?,
        regime: if usi {
            regime_classify(mus, ks).into_iter().collect()
        } else {
            Vec::new()
        },
    })
}

#[derive(Debug, Serialize)]
struct RateRow {
    mus: String,
    ks: String,
    capacity_usi: String,
    regime: String,
    pir_si_rate: String,
    ppir_rate: String,
    fsi_rate: String,
    mppir_rate: String,
    msi_lower: String,
    msi_upper: String,
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// CSV table of rate reports.
pub fn rate_table_csv(reports: &[RateReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let opt = |r: &Option<Rational>| r.as_ref().map(rational::format).unwrap_or_default();
    for r in reports {
        writer
            .serialize(RateRow {
                mus: join(&r.mus),
                ks: join(&r.ks),
                capacity_usi: opt(&r.capacity_usi),
                regime: r
                    .regime
                    .iter()
                    .map(|t| t.tag())
                    .collect::<Vec<_>>()
                    .join(" "),
                pir_si_rate: rational::format(&r.pir_si_rate),
                ppir_rate: rational::format(&r.ppir_rate),
                fsi_rate: rational::format(&r.fsi_rate),
                mppir_rate: opt(&r.mppir_rate),
                msi_lower: r
                    .msi_bounds
                    .as_ref()
                    .map(|b| rational::format(&b.lower))
                    .unwrap_or_default(),
                msi_upper: r
                    .msi_bounds
                    .as_ref()
                    .map(|b| rational::format(&b.upper))
                    .unwrap_or_default(),
            })
            .expect("in-memory CSV write");
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::enumerate_profiles;

    fn r(n: u64, d: u64) -> Rational {
        Ratio::new(n, d)
    }

    #[test]
    fn worked_capacities() {
        assert_eq!(capacity_usi(&[3, 3], &[1, 1]), Ok(r(1, 4)));
        assert_eq!(capacity_usi(&[4, 5, 6], &[0, 0, 0]), Ok(r(1, 3)));
        assert_eq!(capacity_usi(&[3, 3], &[2, 2]), Ok(r(1, 2)));
        assert_eq!(capacity_usi(&[4, 2], &[0, 1]), Ok(r(1, 2)));
        assert_eq!(
            capacity_usi(&[3, 2], &[1, 2]),
            Err(AnalysisError::MixedSideInformation { classes: vec![1] })
        );
        assert!(capacity_usi(&[3], &[1]).is_err());
    }

    #[test]
    fn regimes() {
        use Regime::*;
        let set = |xs: &[Regime]| xs.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(regime_classify(&[3, 4], &[0, 0]), set(&[NoSideInfo]));
        assert_eq!(
            regime_classify(&[2, 2], &[1, 1]),
            set(&[MaxSideInfo, PirSiEquivalent])
        );
        assert_eq!(regime_classify(&[4, 2], &[0, 1]), set(&[Interior]));
        // all classes of one message: no side info, max side info and PIR-SI at once
        assert_eq!(
            regime_classify(&[1, 1], &[0, 0]),
            set(&[NoSideInfo, MaxSideInfo, PirSiEquivalent])
        );
    }

    #[test]
    fn msi_bounds() {
        let b = msi_rate_bounds(6, 3, 3, 1).unwrap();
        assert_eq!((b.lower, b.upper), (r(1, 3), r(1, 3)));
        assert_eq!(b.status, BoundStatus::Conjecture);
        assert_eq!(msi_rate_bounds(6, 3, 3, 3).unwrap().upper, r(1, 1));
        let b = msi_rate_bounds(5, 2, 2, 1).unwrap();
        assert_eq!((b.lower, b.upper), (r(1, 3), r(1, 2)));
        assert!(msi_rate_bounds(5, 2, 2, 3).is_err());
    }

    #[test]
    fn multi_message_rates() {
        assert_eq!(mppir_rate(&[4, 4], &[1, 1], 2, 1), Ok(r(1, 3)));
        assert_eq!(mppir_rate(&[3, 3], &[1, 1], 2, 1), Ok(r(1, 2)));
        assert!(mppir_rate(&[3, 3], &[2, 1], 2, 1).is_err());
    }

    #[test]
    fn fsi_rates() {
        assert_eq!(fsi_rate(3, 2), Ok(r(1, 2)));
        assert_eq!(fsi_rate(4, 4), Ok(r(1, 1)));
        assert_eq!(fsi_rate(2, 1), Ok(r(1, 2)));
        assert!(fsi_rate(2, 0).is_err());
        assert_eq!(fsi_eta(&[0, 0, 0]), 1);
        assert_eq!(fsi_eta(&[1, 0, 2]), 2);
    }

    #[test]
    fn sandwich_and_endpoints_up_to_f8() {
        let mut checked = 0;
        for gamma in 2..=8 {
            for (mus, ks) in enumerate_profiles(gamma, 8, 8) {
                let c = capacity_usi(&mus, &ks).unwrap();
                let f: usize = mus.iter().sum();
                let kappa: usize = ks.iter().sum();
                let lower = pir_si_rate(f, kappa).unwrap();
                let upper = ppir_rate(gamma);
                assert!(lower <= c && c <= upper, "{mus:?} {ks:?}");
                let tags = regime_classify(&mus, &ks);
                if tags.contains(&Regime::NoSideInfo) || tags.contains(&Regime::MaxSideInfo) {
                    assert_eq!(c, upper);
                }
                if tags.contains(&Regime::PirSiEquivalent) {
                    assert_eq!(c, lower);
                }
                assert_eq!(mppir_rate(&mus, &ks, 1, 1), Ok(c));
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn report_and_table() {
        let report = rate_report(&[3, 3], &[1, 1], 1, 1).unwrap();
        assert_eq!(report.capacity_usi, Some(r(1, 4)));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["capacity_usi"], "1/4");
        assert_eq!(json["fsi_status"], "ACHIEVABLE_ONLY");
        let msi = rate_report(&[3, 2], &[1, 2], 1, 1).unwrap();
        assert_eq!(msi.capacity_usi, None);
        assert_eq!(
            msi.msi_bounds.as_ref().unwrap().status,
            BoundStatus::Conjecture
        );
        let csv = rate_table_csv(&[report, msi]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("mus,ks,capacity_usi,regime,pir_si_rate,ppir_rate,fsi_rate,mppir_rate,msi_lower,msi_upper")
        );
        assert_eq!(
            lines.next(),
            Some("3 3,1 1,1/4,pir-si-equivalent,1/4,1/2,1/1,1/4,,")
        );
        assert_eq!(lines.next(), Some("3 2,1 2,,,1/2,1/2,1/1,,1/2,1/2"));
    }
}
