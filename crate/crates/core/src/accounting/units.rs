//! Multiplicative unit table with dimension checking.
//!
//! Each unit maps to a dimension and a factor relative to that dimension's
//! base unit. Base units are chosen so every built-in factor is an integer
//! (J, g, mL, m, piece), which keeps table conversions exact. Compound units
//! of the form `a/b` are supported for per-functional-unit quantities.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Energy,
    Mass,
    Volume,
    Distance,
    Count,
}

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("unknown unit {unit:?} (converting {from:?} to {to:?})")]
    Unknown { unit: String, from: String, to: String },
    #[error("cannot convert {from:?} to {to:?}: incompatible dimensions")]
    Incompatible { from: String, to: String },
    #[error("invalid unit definition {0:?}")]
    BadDefinition(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UnitDef {
    dimension: Dimension,
    to_base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    units: HashMap<String, UnitDef>,
}

const BUILTIN: &[(&str, Dimension, f64)] = &[
    ("J", Dimension::Energy, 1.0),
    ("kJ", Dimension::Energy, 1e3),
    ("MJ", Dimension::Energy, 1e6),
    ("GJ", Dimension::Energy, 1e9),
    ("Wh", Dimension::Energy, 3.6e3),
    ("kWh", Dimension::Energy, 3.6e6),
    ("MWh", Dimension::Energy, 3.6e9),
    ("GWh", Dimension::Energy, 3.6e12),
    ("g", Dimension::Mass, 1.0),
    ("kg", Dimension::Mass, 1e3),
    ("t", Dimension::Mass, 1e6),
    ("tonne", Dimension::Mass, 1e6),
    ("mL", Dimension::Volume, 1.0),
    ("L", Dimension::Volume, 1e3),
    ("l", Dimension::Volume, 1e3),
    ("m3", Dimension::Volume, 1e6),
    ("m³", Dimension::Volume, 1e6),
    ("m", Dimension::Distance, 1.0),
    ("km", Dimension::Distance, 1e3),
    ("piece", Dimension::Count, 1.0),
    ("pcs", Dimension::Count, 1.0),
    ("unit", Dimension::Count, 1.0),
];

impl Default for UnitTable {
    fn default() -> Self {
        Self {
            units: BUILTIN
                .iter()
                .map(|&(name, dimension, to_base)| (name.to_string(), UnitDef { dimension, to_base }))
                .collect(),
        }
    }
}

type Signature = (Dimension, Option<Dimension>);

impl UnitTable {
    /// Adds or overrides a unit.
    pub fn with_unit(mut self, name: &str, dimension: Dimension, to_base: f64) -> Result<Self, UnitError> {
        if name.is_empty() || name.contains('/') || !(to_base.is_finite() && to_base > 0.0) {
            return Err(UnitError::BadDefinition(name.to_string()));
        }
        self.units.insert(name.to_string(), UnitDef { dimension, to_base });
        Ok(self)
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.resolve(unit, unit, unit).is_ok()
    }

    fn lookup(&self, name: &str, from: &str, to: &str) -> Result<UnitDef, UnitError> {
        self.units.get(name.trim()).copied().ok_or_else(|| UnitError::Unknown {
            unit: name.trim().to_string(),
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    // (signature, numerator factor, denominator factor)
    fn resolve(&self, unit: &str, from: &str, to: &str) -> Result<(Signature, f64, f64), UnitError> {
        match unit.split_once('/') {
            Some((num, den)) => {
                let n = self.lookup(num, from, to)?;
                let d = self.lookup(den, from, to)?;
                Ok(((n.dimension, Some(d.dimension)), n.to_base, d.to_base))
            }
            None => {
                let n = self.lookup(unit, from, to)?;
                Ok(((n.dimension, None), n.to_base, 1.0))
            }
        }
    }

    /// Converts a plain value between dimensionally compatible units.
    pub fn convert(&self, value: f64, from: &str, to: &str) -> Result<f64, UnitError> {
        if from.trim() == to.trim() {
            return Ok(value);
        }
        let (sig_from, num_from, den_from) = self.resolve(from, from, to)?;
        let (sig_to, num_to, den_to) = self.resolve(to, from, to)?;
        if sig_from != sig_to {
            return Err(UnitError::Incompatible { from: from.to_string(), to: to.to_string() });
        }
        Ok(value * num_from / num_to * den_to / den_from)
    }

    /// Converts both bounds of an estimate. Factors are positive, so order is kept.
    pub fn convert_estimate(&self, value: Estimate, from: &str, to: &str) -> Result<Estimate, UnitError> {
        Ok(match value {
            Estimate::Point(v) => Estimate::Point(self.convert(v, from, to)?),
            Estimate::Range { lower, upper } => Estimate::Range {
                lower: self.convert(lower, from, to)?,
                upper: self.convert(upper, from, to)?,
            },
        })
    }
}

/// Converts with the built-in unit table.
pub fn convert_unit(value: f64, from: &str, to: &str) -> Result<f64, UnitError> {
    UnitTable::default().convert(value, from, to)
}
