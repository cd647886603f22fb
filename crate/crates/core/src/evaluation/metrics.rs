//! Retrieval rate, information deviation (MAPE) and accounting deviation.
//!
//! Range-valued answers are scored at their worst boundary for information
//! deviation; accounting deviation is reported signed at both boundaries plus
//! the larger magnitude.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvaluationError;
use crate::accounting::{FootprintResult, UnitTable};
use crate::estimate::Estimate;
use crate::generation::ExtractedFact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub fact_key: String,
    pub true_value: f64,
    pub unit: String,
    #[serde(default)]
    pub industry: String,
}

/// Signed deviations at each boundary of the computed footprint, and the larger magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingDeviation {
    pub at_lower_pct: f64,
    pub at_upper_pct: f64,
    pub ad_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactScore {
    pub fact_key: String,
    pub retrieved: bool,
    pub value: Option<Estimate>,
    pub unit: Option<String>,
    pub true_value: f64,
    pub true_unit: String,
    pub deviation_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdOutcome {
    /// `None` when no retrieved fact matched a usable truth.
    pub id_pct: Option<f64>,
    pub per_fact: Vec<FactScore>,
    pub warnings: Vec<String>,
}

/// `100 × |retrieved ∩ truth| / |truth|`.
pub fn compute_irr(retrieved: &BTreeSet<String>, truth: &BTreeSet<String>) -> Result<f64, EvaluationError> {
    if truth.is_empty() {
        return Err(EvaluationError::Definition("ground truth has no keys".into()));
    }
    let hit = truth.intersection(retrieved).count();
    Ok(100.0 * hit as f64 / truth.len() as f64)
}

/// Absolute percentage error of a fact against its truth, after converting the
/// fact into the truth's unit. Ranges score their worse boundary.
pub fn fact_deviation(
    fact: &ExtractedFact,
    truth: &GroundTruthRecord,
    units: &UnitTable,
) -> Result<f64, EvaluationError> {
    let t = truth.true_value;
    if t == 0.0 || !t.is_finite() {
        return Err(EvaluationError::ZeroTruth(truth.fact_key.clone()));
    }
    let value = units
        .convert_estimate(fact.value, &fact.unit, &truth.unit)
        .map_err(|source| EvaluationError::Unit { fact_key: fact.fact_key.clone(), source })?;
    let err = |v: f64| 100.0 * (v - t).abs() / t.abs();
    Ok(match value {
        Estimate::Point(v) => err(v),
        Estimate::Range { lower, upper } => err(lower).max(err(upper)),
    })
}

/// Arithmetic mean, `None` for an empty slice.
pub fn mean_deviation(deviations: &[f64]) -> Option<f64> {
    (!deviations.is_empty()).then(|| deviations.iter().sum::<f64>() / deviations.len() as f64)
}

/// Mean of [`fact_deviation`] over facts whose key has a truth record.
///
/// Unretrieved truths appear in `per_fact` with no deviation and do not enter
/// the mean. Zero-valued truths are excluded with a warning. If a key occurs
/// more than once among `facts`, the first occurrence is scored.
pub fn compute_id(
    facts: &[ExtractedFact],
    truths: &[GroundTruthRecord],
    units: &UnitTable,
) -> Result<IdOutcome, EvaluationError> {
    let mut by_key: BTreeMap<&str, &ExtractedFact> = BTreeMap::new();
    for f in facts {
        by_key.entry(f.fact_key.as_str()).or_insert(f);
    }
    let mut per_fact = Vec::with_capacity(truths.len());
    let mut warnings = Vec::new();
    let mut deviations = Vec::new();
    for truth in truths {
        let fact = by_key.get(truth.fact_key.as_str()).copied();
        let deviation = match fact {
            Some(_) if truth.true_value == 0.0 => {
                warnings.push(format!("{}: true value is 0, excluded from ID", truth.fact_key));
                None
            }
            Some(f) => Some(fact_deviation(f, truth, units)?),
            None => None,
        };
        deviations.extend(deviation);
        per_fact.push(FactScore {
            fact_key: truth.fact_key.clone(),
            retrieved: fact.is_some(),
            value: fact.map(|f| f.value),
            unit: fact.map(|f| f.unit.clone()),
            true_value: truth.true_value,
            true_unit: truth.unit.clone(),
            deviation_pct: deviation,
        });
    }
    Ok(IdOutcome {
        id_pct: mean_deviation(&deviations),
        per_fact,
        warnings,
    })
}

/// Signed `100 × (C_r − C_t) / C_t` at each boundary of the computed total.
pub fn compute_ad(total: &Estimate, true_footprint: f64) -> Result<AccountingDeviation, EvaluationError> {
    if true_footprint == 0.0 || !true_footprint.is_finite() {
        return Err(EvaluationError::Definition("true footprint must be finite and non-zero".into()));
    }
    let signed = |c: f64| 100.0 * (c - true_footprint) / true_footprint;
    let (at_lower_pct, at_upper_pct) = (signed(total.lower()), signed(total.upper()));
    Ok(AccountingDeviation {
        at_lower_pct,
        at_upper_pct,
        ad_pct: at_lower_pct.abs().max(at_upper_pct.abs()),
    })
}

pub fn compute_ad_for(result: &FootprintResult, true_footprint: f64) -> Result<AccountingDeviation, EvaluationError> {
    compute_ad(&result.total, true_footprint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(range: std::ops::Range<usize>) -> BTreeSet<String> {
        range.map(|i| format!("k{i}")).collect()
    }

    fn fact(key: &str, value: Estimate, unit: &str) -> ExtractedFact {
        ExtractedFact {
            fact_key: key.into(),
            value,
            unit: unit.into(),
            sources: vec![],
            provenance: vec![],
            raw_span: String::new(),
        }
    }

    fn truth(key: &str, v: f64, unit: &str) -> GroundTruthRecord {
        GroundTruthRecord { fact_key: key.into(), true_value: v, unit: unit.into(), industry: "al".into() }
    }

    #[test]
    fn irr_cases() {
        assert_eq!(compute_irr(&keys(0..5), &keys(0..5)).unwrap(), 100.0);
        assert_eq!(compute_irr(&keys(10..15), &keys(0..5)).unwrap(), 0.0);
        let irr = compute_irr(&keys(0..47), &keys(0..56)).unwrap();
        assert!((irr - 83.93).abs() < 0.005, "{irr}");
        // keys outside truth never help
        assert_eq!(compute_irr(&keys(0..100), &keys(0..56)).unwrap(), 100.0);
        assert!(compute_irr(&keys(0..3), &BTreeSet::new()).is_err());
    }

    #[test]
    fn deviation_cases() {
        let u = UnitTable::default();
        let t = truth("k", 100.0, "kWh/t");
        assert_eq!(fact_deviation(&fact("k", Estimate::Point(100.0), "kWh/t"), &t, &u).unwrap(), 0.0);
        assert!((fact_deviation(&fact("k", Estimate::Point(110.0), "kWh/t"), &t, &u).unwrap() - 10.0).abs() < 1e-12);
        let r = fact("k", Estimate::range(90.0, 130.0).unwrap(), "kWh/t");
        assert!((fact_deviation(&r, &t, &u).unwrap() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_reconciles_units() {
        let u = UnitTable::default();
        let t = truth("k", 13500.0, "kWh/t");
        let f = fact("k", Estimate::Point(13.5), "MWh/t");
        assert!(fact_deviation(&f, &t, &u).unwrap().abs() < 1e-12);
        let bad = fact("k", Estimate::Point(13.5), "kg/t");
        assert!(matches!(fact_deviation(&bad, &t, &u), Err(EvaluationError::Unit { .. })));
    }

    #[test]
    fn id_mean_and_absence() {
        let u = UnitTable::default();
        let truths = [truth("a", 100.0, "kg"), truth("b", 100.0, "kg"), truth("c", 5.0, "kg")];
        let facts = [fact("a", Estimate::Point(110.0), "kg"), fact("b", Estimate::Point(95.0), "kg")];
        let out = compute_id(&facts, &truths, &u).unwrap();
        assert!((out.id_pct.unwrap() - 7.5).abs() < 1e-12);
        assert!(!out.per_fact[2].retrieved);
        let none = compute_id(&[], &truths, &u).unwrap();
        assert_eq!(none.id_pct, None);
    }

    #[test]
    fn zero_truth_excluded() {
        let u = UnitTable::default();
        let out = compute_id(&[fact("z", Estimate::Point(1.0), "kg")], &[truth("z", 0.0, "kg")], &u).unwrap();
        assert_eq!(out.id_pct, None);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn ad_cases() {
        let zero = compute_ad(&Estimate::Point(100.0), 100.0).unwrap();
        assert_eq!((zero.at_lower_pct, zero.at_upper_pct, zero.ad_pct), (0.0, 0.0, 0.0));
        let p = compute_ad(&Estimate::Point(102.35), 100.0).unwrap();
        assert!((p.ad_pct - 2.35).abs() < 1e-9);
        assert_eq!(p.at_lower_pct, p.at_upper_pct);
        let r = compute_ad(&Estimate::range(95.0, 110.0).unwrap(), 100.0).unwrap();
        assert!((r.at_lower_pct + 5.0).abs() < 1e-12);
        assert!((r.at_upper_pct - 10.0).abs() < 1e-12);
        assert!((r.ad_pct - 10.0).abs() < 1e-12);
        assert!(compute_ad(&Estimate::Point(1.0), 0.0).is_err());
    }
}
