//! Fixed-threshold decisions, per-class APCER/BPCER and the MSE aggregate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::PresentationClass;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    BonaFide,
    Attack,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::BonaFide => "bona_fide",
            Decision::Attack => "attack",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bona_fide" => Ok(Decision::BonaFide),
            "attack" => Ok(Decision::Attack),
            other => Err(ScoringError::UnknownDecision(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("confidence {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("class `{0}` has no verdicts")]
    MissingClass(PresentationClass),
    #[error("unknown decision `{0}`")]
    UnknownDecision(String),
    #[error("no verdicts to score")]
    Empty,
}

/// `Attack` iff `confidence >= threshold`. An exactly ambivalent answer is
/// flagged as an attack.
pub fn classify(confidence: f64, threshold: f64) -> Result<Decision, ScoringError> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ScoringError::OutOfRange(confidence));
    }
    Ok(if confidence >= threshold {
        Decision::Attack
    } else {
        Decision::BonaFide
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub sample_id: String,
    pub class: PresentationClass,
    pub confidence: f64,
    pub decision: Decision,
}

impl Verdict {
    pub fn new(
        sample_id: impl Into<String>,
        class: PresentationClass,
        confidence: f64,
        threshold: f64,
    ) -> Result<Self, ScoringError> {
        Ok(Verdict {
            sample_id: sample_id.into(),
            class,
            confidence,
            decision: classify(confidence, threshold)?,
        })
    }

    /// A verdict is an error when it disagrees with the ground truth.
    pub fn is_error(&self) -> bool {
        match self.decision {
            Decision::Attack => self.class.is_bona_fide(),
            Decision::BonaFide => self.class.is_attack(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub errors: usize,
    pub total: usize,
}

/// BPCER for `live`, APCER for every attack class.
///
/// Rates built from verdicts keep their `(errors, total)` counts; rates taken
/// from a published table have none. Classes without samples are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassErrorRates {
    rates: BTreeMap<PresentationClass, f64>,
    counts: BTreeMap<PresentationClass, ErrorCount>,
}

impl ClassErrorRates {
    /// Rates in canonical class order, e.g. one row of a results table.
    pub fn from_canonical_row(row: [f64; 8]) -> Result<Self, ScoringError> {
        Self::from_rates(PresentationClass::ALL.into_iter().zip(row))
    }

    pub fn from_rates(
        rates: impl IntoIterator<Item = (PresentationClass, f64)>,
    ) -> Result<Self, ScoringError> {
        let mut out = ClassErrorRates::default();
        for (class, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(ScoringError::OutOfRange(r));
            }
            out.rates.insert(class, r);
        }
        Ok(out)
    }

    pub fn rate(&self, class: PresentationClass) -> Option<f64> {
        self.rates.get(&class).copied()
    }

    pub fn counts(&self, class: PresentationClass) -> Option<ErrorCount> {
        self.counts.get(&class).copied()
    }

    pub fn bpcer(&self) -> Option<f64> {
        self.rate(PresentationClass::Live)
    }

    pub fn apcer(&self, class: PresentationClass) -> Option<f64> {
        class.is_attack().then(|| self.rate(class)).flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PresentationClass, f64)> + '_ {
        self.rates.iter().map(|(c, r)| (*c, *r))
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

pub fn error_rates(verdicts: &[Verdict]) -> ClassErrorRates {
    let mut counts: BTreeMap<PresentationClass, ErrorCount> = BTreeMap::new();
    for v in verdicts {
        let c = counts.entry(v.class).or_insert(ErrorCount { errors: 0, total: 0 });
        c.total += 1;
        if v.is_error() {
            c.errors += 1;
        }
    }
    let rates = counts
        .iter()
        .map(|(class, c)| (*class, c.errors as f64 / c.total as f64))
        .collect();
    ClassErrorRates { rates, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MseScore(pub f64);

impl MseScore {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn rounded(self, decimals: i32) -> f64 {
        let scale = 10f64.powi(decimals);
        (self.0 * scale).round() / scale
    }
}

/// Mean of squared per-class error rates over all eight classes.
pub fn aggregate_mse(rates: &ClassErrorRates) -> Result<MseScore, ScoringError> {
    let mut sum = 0.0;
    for class in PresentationClass::ALL {
        let r = rates.rate(class).ok_or(ScoringError::MissingClass(class))?;
        sum += r * r;
    }
    Ok(MseScore(sum / PresentationClass::ALL.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

/// Equal-width bins over [0, 1]; the last bin is closed at 1.0.
pub fn confidence_histogram(verdicts: &[Verdict], bins: usize) -> Vec<HistogramBin> {
    assert!(bins >= 1, "histogram needs at least one bin");
    let mut counts = vec![0usize; bins];
    let width = bins as f64;
    for v in verdicts {
        // the product can land just below an edge (0.29 * 100 = 28.99..),
        // so settle against the reported edges k / bins
        let mut idx = ((v.confidence * width).floor() as usize).min(bins - 1);
        if idx + 1 < bins && v.confidence >= (idx + 1) as f64 / width {
            idx += 1;
        } else if idx > 0 && v.confidence < idx as f64 / width {
            idx -= 1;
        }
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 / bins as f64,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PresentationClass::*;

    fn verdicts(class: PresentationClass, errors: usize, total: usize) -> Vec<Verdict> {
        (0..total)
            .map(|i| {
                let wrong = i < errors;
                let conf = match (class.is_bona_fide(), wrong) {
                    (true, false) | (false, true) => 0.1,
                    _ => 0.9,
                };
                Verdict::new(format!("{class}_{i}"), class, conf, DEFAULT_THRESHOLD).unwrap()
            })
            .collect()
    }

    #[test]
    fn threshold_boundary_flags_attack() {
        assert_eq!(classify(0.49, 0.5).unwrap(), Decision::BonaFide);
        assert_eq!(classify(0.51, 0.5).unwrap(), Decision::Attack);
        assert_eq!(classify(0.50, 0.5).unwrap(), Decision::Attack);
        assert_eq!(classify(1.2, 0.5), Err(ScoringError::OutOfRange(1.2)));
        assert!(classify(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn rates_from_verdict_counts() {
        let r = error_rates(&verdicts(Live, 0, 30));
        assert_eq!(r.bpcer(), Some(0.0));
        let r = error_rates(&verdicts(TexturedContact, 9, 30));
        assert!((r.apcer(TexturedContact).unwrap() - 0.300).abs() < 1e-12);
        assert_eq!(r.counts(TexturedContact), Some(ErrorCount { errors: 9, total: 30 }));
        assert_eq!(r.rate(Live), None);
    }

    #[test]
    fn all_correct_gives_zero_rates() {
        let all: Vec<Verdict> = PresentationClass::ALL
            .iter()
            .flat_map(|&c| verdicts(c, 0, 5))
            .collect();
        let r = error_rates(&all);
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|(_, x)| x == 0.0));
        assert_eq!(aggregate_mse(&r).unwrap().value(), 0.0);
    }

    #[test]
    fn mse_from_published_rows() {
        let row = [0.000, 0.769, 0.700, 0.833, 0.833, 0.267, 0.833, 0.300];
        let mse = aggregate_mse(&ClassErrorRates::from_canonical_row(row).unwrap()).unwrap();
        assert_eq!(mse.rounded(3), 0.416);
        let degenerate = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mse = aggregate_mse(&ClassErrorRates::from_canonical_row(degenerate).unwrap()).unwrap();
        assert_eq!(mse.value(), 0.125);
        let human = [0.437, 0.349, 0.057, 0.020, 0.162, 0.298, 0.118, 0.227];
        let mse = aggregate_mse(&ClassErrorRates::from_canonical_row(human).unwrap()).unwrap();
        assert_eq!(mse.rounded(3), 0.062);
    }

    #[test]
    fn mse_requires_all_classes() {
        let r = ClassErrorRates::from_rates([(Live, 0.1), (Printout, 0.2)]).unwrap();
        assert_eq!(aggregate_mse(&r), Err(ScoringError::MissingClass(Artificial)));
    }

    #[test]
    fn histogram_binning() {
        let vs: Vec<Verdict> = [0.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| Verdict::new(i.to_string(), Live, c, 0.5).unwrap())
            .collect();
        let h = confidence_histogram(&vs, 2);
        assert_eq!(
            h,
            vec![
                HistogramBin { lower: 0.0, count: 1 },
                HistogramBin { lower: 0.5, count: 2 }
            ]
        );
        // 0.29 * 100 rounds below 29 in floating point
        let edge = [Verdict::new("e", Live, 0.29, 0.5).unwrap()];
        assert_eq!(confidence_histogram(&edge, 100)[29].count, 1);
        let empty = confidence_histogram(&[], 20);
        assert_eq!(empty.len(), 20);
        assert!(empty.iter().all(|b| b.count == 0));
    }

    fn arb_verdicts() -> impl Strategy<Value = Vec<(usize, f64)>> {
        proptest::collection::vec((0usize..8, 0.0f64..=1.0), 0..200)
    }

    proptest! {
        #[test]
        fn histogram_conserves_count(vs in arb_verdicts(), bins in 1usize..50) {
            let vs: Vec<Verdict> = vs.iter().enumerate()
                .map(|(i, &(c, x))| Verdict::new(i.to_string(), PresentationClass::ALL[c], x, 0.5).unwrap())
                .collect();
            let total: usize = confidence_histogram(&vs, bins).iter().map(|b| b.count).sum();
            prop_assert_eq!(total, vs.len());
        }

        #[test]
        fn rates_match_brute_force_counts(vs in arb_verdicts(), threshold in 0.05f64..0.95) {
            let vs: Vec<Verdict> = vs.iter().enumerate()
                .map(|(i, &(c, x))| Verdict::new(i.to_string(), PresentationClass::ALL[c], x, threshold).unwrap())
                .collect();
            let rates = error_rates(&vs);
            for class in PresentationClass::ALL {
                let members: Vec<&Verdict> = vs.iter().filter(|v| v.class == class).collect();
                let wrong = members.iter().filter(|v| {
                    let said_attack = v.confidence >= threshold;
                    said_attack != class.is_attack()
                }).count();
                match rates.counts(class) {
                    None => prop_assert!(members.is_empty()),
                    Some(c) => {
                        prop_assert_eq!(c, ErrorCount { errors: wrong, total: members.len() });
                        prop_assert_eq!(rates.rate(class).unwrap(), wrong as f64 / members.len() as f64);
                    }
                }
            }
        }

        #[test]
        fn mse_bounded_and_monotone(row in proptest::array::uniform8(0.0f64..=1.0), idx in 0usize..8, bump in 0.001f64..1.0) {
            let base = aggregate_mse(&ClassErrorRates::from_canonical_row(row).unwrap()).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&base));
            if row[idx] < 1.0 {
                let mut up = row;
                up[idx] = (row[idx] + bump).min(1.0);
                let raised = aggregate_mse(&ClassErrorRates::from_canonical_row(up).unwrap()).unwrap().value();
                prop_assert!(raised > base);
            }
        }
    }
}
