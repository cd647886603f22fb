//! Rule-based footprint calculation: inventory quantities times emission
//! factors, summed per functional unit, with interval propagation.

mod factors;
mod units;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use factors::{EmissionFactor, FactorDb, FACTOR_CSV_HEADER};
pub use units::{convert_unit, Dimension, UnitError, UnitTable};

use crate::estimate::Estimate;

#[derive(Debug, Error)]
pub enum AccountingError {
    #[error("no emission factor for: {}", .0.join(", "))]
    MissingFactors(Vec<String>),
    #[error("activity {activity}: {source}")]
    Unit {
        activity: String,
        #[source]
        source: UnitError,
    },
    #[error("activity {activity}: quantity {quantity} must be finite and non-negative")]
    NegativeQuantity { activity: String, quantity: Estimate },
    #[error("activity {activity} is in stage {stage:?}, outside the {scope:?} boundary")]
    OutOfScope {
        activity: String,
        stage: LifecycleStage,
        scope: Scope,
    },
    #[error("factor database {path}: {reason}")]
    FactorDb { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleStage {
    RawMaterial,
    Manufacturing,
    Distribution,
    Use,
    EndOfLife,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    CradleToGate,
    CradleToGrave,
}

impl Scope {
    pub fn includes(self, stage: LifecycleStage) -> bool {
        match self {
            Scope::CradleToGrave => true,
            Scope::CradleToGate => {
                matches!(stage, LifecycleStage::RawMaterial | LifecycleStage::Manufacturing)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub activity: String,
    pub quantity: Estimate,
    pub unit: String,
    #[serde(default = "default_stage")]
    pub lifecycle_stage: LifecycleStage,
}

fn default_stage() -> LifecycleStage {
    LifecycleStage::Manufacturing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub activity: String,
    /// kgCO₂-eq per functional unit.
    pub contribution: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintResult {
    /// kgCO₂-eq per functional unit.
    pub total: Estimate,
    pub per_item: Vec<Contribution>,
    pub functional_unit: String,
    pub scope: Scope,
}

impl FootprintResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("footprint serializes")
    }

    /// `activity,lower_kgco2e,upper_kgco2e` rows followed by a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["activity", "lower_kgco2e", "upper_kgco2e"]).expect("in-memory csv");
        let rows = self
            .per_item
            .iter()
            .map(|c| (c.activity.as_str(), c.contribution))
            .chain(std::iter::once(("TOTAL", self.total)));
        for (activity, value) in rows {
            w.write_record([activity, &value.lower().to_string(), &value.upper().to_string()])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Computes a footprint with the built-in unit table.
pub fn compute_footprint(
    items: &[InventoryItem],
    factors: &FactorDb,
    scope: Scope,
    functional_unit: &str,
) -> Result<FootprintResult, AccountingError> {
    compute_footprint_with(items, factors, scope, functional_unit, &UnitTable::default())
}

/// `contribution_i = quantity_i × factor_i` after converting to the factor's
/// canonical unit; ranges propagate bound-wise, valid because factors are
/// non-negative. Missing factors abort with the full list of unmatched activities.
pub fn compute_footprint_with(
    items: &[InventoryItem],
    factors: &FactorDb,
    scope: Scope,
    functional_unit: &str,
    units: &UnitTable,
) -> Result<FootprintResult, AccountingError> {
    let mut missing: Vec<String> = items
        .iter()
        .filter(|i| factors.get(&i.activity).is_none())
        .map(|i| i.activity.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(AccountingError::MissingFactors(missing));
    }

    let mut per_item = Vec::with_capacity(items.len());
    for item in items {
        if !scope.includes(item.lifecycle_stage) {
            return Err(AccountingError::OutOfScope {
                activity: item.activity.clone(),
                stage: item.lifecycle_stage,
                scope,
            });
        }
        if !item.quantity.is_finite() || item.quantity.lower() < 0.0 || item.quantity.lower() > item.quantity.upper() {
            return Err(AccountingError::NegativeQuantity {
                activity: item.activity.clone(),
                quantity: item.quantity,
            });
        }
        let factor = factors.get(&item.activity).expect("checked above");
        let quantity = units
            .convert_estimate(item.quantity, &item.unit, &factor.canonical_unit)
            .map_err(|source| AccountingError::Unit {
                activity: item.activity.clone(),
                source,
            })?;
        per_item.push(Contribution {
            activity: item.activity.clone(),
            contribution: quantity.scale(factor.factor),
        });
    }

    Ok(FootprintResult {
        total: per_item.iter().map(|c| c.contribution).sum(),
        per_item,
        functional_unit: functional_unit.to_string(),
        scope,
    })
}
