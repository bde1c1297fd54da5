use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::grid::DyadicDomain;
use crate::operators::LevelRange;

use super::sweep::DecaySweep;

/// Version of the report line layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Descriptor of the input a check ran on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub family: String,
    pub d: u32,
    #[serde(rename = "K")]
    pub depth: u32,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<LevelRange>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl Instance {
    pub fn new(family: &str, domain: &DyadicDomain, n: usize, seed: u64) -> Self {
        Self { family: family.into(), d: domain.dim(), depth: domain.depth(), n, seed, ..Self::default() }
    }

    pub fn of(inst: &CorpusInstance) -> Self {
        let f = &inst.field;
        Self { params: inst.params.clone(), ..Self::new(&inst.family, f.domain(), f.dim(), inst.seed) }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_range(mut self, range: LevelRange) -> Self {
        self.range = Some(range);
        self
    }
}

/// The bound a measurement is compared against: a number, or `"empirical"`
/// when the check reports a constant or fits a slope inside a window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Value(f64),
    Empirical,
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::Value(v) => s.serialize_f64(*v),
            Bound::Empirical => s.serialize_str("empirical"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Bound;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a number or \"empirical\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Bound, E> {
                Ok(Bound::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bound, E> {
                Ok(Bound::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bound, E> {
                Ok(Bound::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bound, E> {
                if v == "empirical" {
                    Ok(Bound::Empirical)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn nullable_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One line of a check report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub check_id: String,
    /// Sub-claim within the check, empty when the check has a single part.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub part: String,
    pub instance: Instance,
    /// Written as `null` when not finite and read back as `NaN`.
    #[serde(deserialize_with = "nullable_f64")]
    pub measured: f64,
    pub bound: Bound,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub pass: bool,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<DecaySweep>,
    /// Why the check could not run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckReport {
    fn base(check_id: &str, part: &str, instance: &Instance, measured: f64, bound: Bound, tolerance: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            check_id: check_id.into(),
            part: part.into(),
            instance: instance.clone(),
            measured,
            bound,
            ratio: None,
            pass: false,
            tolerance,
            details: BTreeMap::new(),
            sweep: None,
            error: None,
        }
    }

    /// Passes when `measured <= bound * (1 + tolerance)`.
    pub fn bounded(check_id: &str, part: &str, instance: &Instance, measured: f64, bound: f64, tolerance: f64) -> Self {
        let mut r = Self::base(check_id, part, instance, measured, Bound::Value(bound), tolerance);
        r.ratio = (bound != 0.0).then(|| measured / bound);
        r.pass = measured.is_finite() && measured <= bound * (1.0 + tolerance);
        r
    }

    /// An identity whose residual must not exceed `threshold`.
    pub fn residual(check_id: &str, part: &str, instance: &Instance, residual: f64, threshold: f64) -> Self {
        let mut r = Self::base(check_id, part, instance, residual, Bound::Value(threshold), 0.0);
        r.pass = residual.is_finite() && residual <= threshold;
        r
    }

    /// A measured constant or slope that passes inside `[lo, hi]`; open ends
    /// are unbounded.
    pub fn empirical(check_id: &str, part: &str, instance: &Instance, measured: f64, lo: Option<f64>, hi: Option<f64>) -> Self {
        let mut r = Self::base(check_id, part, instance, measured, Bound::Empirical, 0.0);
        r.pass = measured.is_finite() && lo.is_none_or(|l| measured >= l) && hi.is_none_or(|h| measured <= h);
        if let Some(l) = lo {
            r.details.insert("window_lo".into(), l);
        }
        if let Some(h) = hi {
            r.details.insert("window_hi".into(), h);
        }
        r
    }

    /// A fitted decay slope that must not exceed `max_slope`.
    pub fn slope(check_id: &str, part: &str, instance: &Instance, sweep: DecaySweep, max_slope: f64) -> Self {
        let mut r = Self::empirical(check_id, part, instance, sweep.fitted_log2_slope, None, Some(max_slope));
        r.details.insert("fit_residual".into(), sweep.residual);
        r.sweep = Some(sweep);
        r
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    /// Failure report for a check that could not run.
    pub fn failed(check_id: &str, instance: &Instance, error: String) -> Self {
        let mut r = Self::base(check_id, "", instance, f64::NAN, Bound::Empirical, 0.0);
        r.error = Some(error);
        r
    }

    /// Re-evaluates a report with an explicit bound under a new relative
    /// tolerance; empirical reports are left alone.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        if let (Bound::Value(b), false) = (self.bound, self.error.is_some()) {
            self.tolerance = tolerance;
            self.pass = self.measured.is_finite() && self.measured <= b * (1.0 + tolerance);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst() -> Instance {
        Instance::new("smooth", &DyadicDomain::periodic(1, 4).unwrap(), 2, 7)
    }

    #[test]
    fn pass_rules() {
        assert!(CheckReport::bounded("c", "", &inst(), 1.0, 1.0, 0.0).pass);
        assert!(CheckReport::bounded("c", "", &inst(), 1.0 + 1e-12, 1.0, 1e-9).pass);
        assert!(!CheckReport::bounded("c", "", &inst(), 1.1, 1.0, 1e-9).pass);
        assert!(!CheckReport::bounded("c", "", &inst(), f64::NAN, 1.0, 1e-9).pass);
        assert!(CheckReport::residual("c", "", &inst(), 1e-12, 1e-10).pass);
        assert!(!CheckReport::residual("c", "", &inst(), 1e-9, 1e-10).pass);
        assert!(CheckReport::empirical("c", "", &inst(), -0.5, None, Some(-0.4)).pass);
        assert!(!CheckReport::empirical("c", "", &inst(), -0.3, None, Some(-0.4)).pass);
        assert!(CheckReport::empirical("c", "", &inst(), 3.0, Some(0.0), None).pass);
        assert!(!CheckReport::failed("c", &inst(), "boom".into()).pass);
        let r = CheckReport::bounded("c", "", &inst(), 1.05, 1.0, 0.0);
        assert!(!r.pass);
        assert!(r.with_tolerance(0.1).pass);
    }
}
