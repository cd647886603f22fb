use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AccountingError;

pub const FACTOR_CSV_HEADER: [&str; 4] = ["activity", "factor_kgco2e", "canonical_unit", "source_note"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionFactor {
    pub activity: String,
    /// kgCO₂-eq per `canonical_unit`.
    #[serde(rename = "factor_kgco2e")]
    pub factor: f64,
    pub canonical_unit: String,
    #[serde(default)]
    pub source_note: String,
}

impl EmissionFactor {
    pub fn new(activity: &str, factor: f64, canonical_unit: &str, source_note: &str) -> Self {
        Self {
            activity: activity.into(),
            factor,
            canonical_unit: canonical_unit.into(),
            source_note: source_note.into(),
        }
    }
}

/// One factor per activity. `version` is taken from a leading
/// `# version: ...` comment, or else is the SHA-256 of the file content.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDb {
    pub version: String,
    factors: BTreeMap<String, EmissionFactor>,
}

impl FactorDb {
    pub fn from_factors(version: &str, factors: Vec<EmissionFactor>) -> Result<Self, AccountingError> {
        let mut map = BTreeMap::new();
        for f in factors {
            if !(f.factor.is_finite() && f.factor >= 0.0) {
                return Err(AccountingError::FactorDb {
                    path: version.into(),
                    reason: format!("factor for {} must be finite and >= 0, got {}", f.activity, f.factor),
                });
            }
            if map.contains_key(&f.activity) {
                return Err(AccountingError::FactorDb {
                    path: version.into(),
                    reason: format!("duplicate activity {}", f.activity),
                });
            }
            map.insert(f.activity.clone(), f);
        }
        Ok(Self { version: version.into(), factors: map })
    }

    pub fn get(&self, activity: &str) -> Option<&EmissionFactor> {
        self.factors.get(activity)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmissionFactor> {
        self.factors.values()
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self, AccountingError> {
        let err = |reason: String| AccountingError::FactorDb { path: origin.into(), reason };
        let version = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("version:").map(|v| v.trim().to_string()))
            .unwrap_or_else(|| hex::encode(Sha256::digest(text.as_bytes())));

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != FACTOR_CSV_HEADER {
            return Err(err(format!(
                "header must be `{}`, found `{}`",
                FACTOR_CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut factors = Vec::new();
        for (line, row) in reader.deserialize::<EmissionFactor>().enumerate() {
            factors.push(row.map_err(|e| err(format!("record {}: {e}", line + 1)))?);
        }
        Self::from_factors(&version, factors).map_err(|e| match e {
            AccountingError::FactorDb { reason, .. } => err(reason),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AccountingError> {
        let text = fs::read_to_string(path).map_err(|e| AccountingError::FactorDb {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse_csv(&text, &path.display().to_string())
    }
}
