//! Point-or-interval quantities shared by extracted facts, inventories and footprints.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

/// A quantity that is either a single value or a closed interval `[lower, upper]`.
///
/// Serialized as a bare number for points and `{"lower": .., "upper": ..}` for ranges,
/// which is also the value shape of the structured answer block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Estimate {
    Point(f64),
    Range { lower: f64, upper: f64 },
}

impl Estimate {
    pub const ZERO: Estimate = Estimate::Point(0.0);

    /// Builds a range, rejecting `lower > upper` and non-finite bounds.
    pub fn range(lower: f64, upper: f64) -> Option<Self> {
        (lower.is_finite() && upper.is_finite() && lower <= upper)
            .then_some(Estimate::Range { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        match *self {
            Estimate::Point(v) => v,
            Estimate::Range { lower, .. } => lower,
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            Estimate::Point(v) => v,
            Estimate::Range { upper, .. } => upper,
        }
    }

    pub fn is_range(&self) -> bool {
        matches!(self, Estimate::Range { .. })
    }

    pub fn is_finite(&self) -> bool {
        self.lower().is_finite() && self.upper().is_finite()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower() <= value && value <= self.upper()
    }

    /// Applies a monotone non-decreasing map to both bounds.
    pub fn map_monotone(self, f: impl Fn(f64) -> f64) -> Self {
        match self {
            Estimate::Point(v) => Estimate::Point(f(v)),
            Estimate::Range { lower, upper } => Estimate::Range {
                lower: f(lower),
                upper: f(upper),
            },
        }
    }

    /// Multiplies by a factor `>= 0`; bounds keep their order.
    pub fn scale(self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0, "negative scale would swap interval bounds");
        self.map_monotone(|v| v * factor)
    }
}

impl Default for Estimate {
    fn default() -> Self {
        Estimate::ZERO
    }
}

impl Add for Estimate {
    type Output = Estimate;

    fn add(self, rhs: Estimate) -> Estimate {
        match (self, rhs) {
            (Estimate::Point(a), Estimate::Point(b)) => Estimate::Point(a + b),
            (a, b) => Estimate::Range {
                lower: a.lower() + b.lower(),
                upper: a.upper() + b.upper(),
            },
        }
    }
}

impl Mul<f64> for Estimate {
    type Output = Estimate;

    fn mul(self, rhs: f64) -> Estimate {
        self.scale(rhs)
    }
}

impl std::iter::Sum for Estimate {
    fn sum<I: Iterator<Item = Estimate>>(iter: I) -> Self {
        iter.fold(Estimate::ZERO, Add::add)
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // forwards `{:.N}` to both bounds
        match (self, f.precision()) {
            (Estimate::Point(v), None) => write!(f, "{v}"),
            (Estimate::Point(v), Some(p)) => write!(f, "{v:.p$}"),
            (Estimate::Range { lower, upper }, None) => write!(f, "[{lower}, {upper}]"),
            (Estimate::Range { lower, upper }, Some(p)) => write!(f, "[{lower:.p$}, {upper:.p$}]"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_honours_precision() {
        assert_eq!(Estimate::Point(1.5).to_string(), "1.5");
        assert_eq!(format!("{:.2}", Estimate::Point(12626.869999999999)), "12626.87");
        assert_eq!(format!("{:.1}", Estimate::range(1.0, 2.25).unwrap()), "[1.0, 2.2]");
    }

    #[test]
    fn sum_promotes_to_range() {
        let total: Estimate = [Estimate::Point(1.0), Estimate::range(2.0, 3.0).unwrap()]
            .into_iter()
            .sum();
        assert_eq!(total, Estimate::Range { lower: 3.0, upper: 4.0 });
    }

    #[test]
    fn inverted_range_rejected() {
        assert!(Estimate::range(2.0, 1.0).is_none());
        assert!(Estimate::range(f64::NAN, 1.0).is_none());
    }

    #[test]
    fn serde_shapes() {
        let p: Estimate = serde_json::from_str("13500").unwrap();
        assert_eq!(p, Estimate::Point(13500.0));
        let r: Estimate = serde_json::from_str(r#"{"lower": 12500, "upper": 14000}"#).unwrap();
        assert_eq!(r, Estimate::Range { lower: 12500.0, upper: 14000.0 });
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"lower":12500.0,"upper":14000.0}"#);
    }
}
