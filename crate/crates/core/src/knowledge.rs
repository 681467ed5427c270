//! Expert knowledge intervals and their construction from weighted rule
//! tables.
//!
//! A knowledge interval states where the mean of the target is expected to
//! lie while one feature is inside a given range. Feature ranges are
//! half-open `(lo, hi]`, except the lowest range of each feature, which is
//! closed `[lo, hi]`; this makes lookup unambiguous at shared boundaries.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RADIUS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("malformed JSON document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown label `{label}` for feature `{feature}`")]
    UnknownLabel { feature: String, label: String },
    #[error("no evidence for interval {feature}={label}: total rule weight is zero")]
    NoEvidence { feature: String, label: String },
    #[error("feature `{feature}`: ranges {first} and {second} overlap")]
    OverlappingRanges {
        feature: String,
        first: String,
        second: String,
    },
    #[error("feature `{feature}` label `{label}`: empty range [{lo}, {hi}]")]
    EmptyRange {
        feature: String,
        label: String,
        lo: f64,
        hi: f64,
    },
    #[error("interval {feature}={label}: target range [{lo}, {hi}] outside bounds [{min}, {max}]")]
    TargetOutOfBounds {
        feature: String,
        label: String,
        lo: f64,
        hi: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid target bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("rule {index}: {reason}")]
    MalformedRule { index: usize, reason: String },
    #[error("duplicate {what} `{name}`")]
    Duplicate { what: &'static str, name: String },
}

/// A feature range: `(lo, hi]`, or `[lo, hi]` when `lower_closed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub lower_closed: bool,
}

impl FeatureRange {
    pub fn contains(&self, value: f64) -> bool {
        (self.lo < value || (self.lower_closed && self.lo == value)) && value <= self.hi
    }

    fn overlaps(&self, other: &FeatureRange) -> bool {
        (self.lo < other.hi && other.lo < self.hi)
            || (self.hi == other.lo && other.lower_closed)
            || (other.hi == self.lo && self.lower_closed)
    }
}

impl std::fmt::Display for FeatureRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let open = if self.lower_closed { '[' } else { '(' };
        write!(f, "{open}{}, {}]", self.lo, self.hi)
    }
}

/// Closed target range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRange {
    pub lo: f64,
    pub hi: f64,
}

impl TargetRange {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeInterval {
    pub feature: String,
    pub label: String,
    pub feature_range: FeatureRange,
    pub target_range: TargetRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub name: String,
    pub target_bounds: TargetRange,
    pub intervals: Vec<KnowledgeInterval>,
}

impl IntervalSet {
    pub fn new(
        name: impl Into<String>,
        target_bounds: TargetRange,
        intervals: Vec<KnowledgeInterval>,
    ) -> Result<Self, KnowledgeError> {
        let set = Self {
            name: name.into(),
            target_bounds,
            intervals,
        };
        set.validate()?;
        Ok(set)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let TargetRange { lo: min, hi: max } = self.target_bounds;
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(KnowledgeError::InvalidBounds(min, max));
        }
        let mut seen = HashSet::new();
        for (i, iv) in self.intervals.iter().enumerate() {
            if !seen.insert((iv.feature.as_str(), iv.label.as_str())) {
                return Err(KnowledgeError::Duplicate {
                    what: "interval",
                    name: format!("{}={}", iv.feature, iv.label),
                });
            }
            let fr = iv.feature_range;
            if !(fr.lo.is_finite() && fr.hi.is_finite() && fr.lo < fr.hi) {
                return Err(KnowledgeError::EmptyRange {
                    feature: iv.feature.clone(),
                    label: iv.label.clone(),
                    lo: fr.lo,
                    hi: fr.hi,
                });
            }
            let tr = iv.target_range;
            if !(tr.lo < tr.hi) || tr.lo < min || tr.hi > max {
                return Err(KnowledgeError::TargetOutOfBounds {
                    feature: iv.feature.clone(),
                    label: iv.label.clone(),
                    lo: tr.lo,
                    hi: tr.hi,
                    min,
                    max,
                });
            }
            for other in &self.intervals[..i] {
                if other.feature == iv.feature && other.feature_range.overlaps(&fr) {
                    return Err(KnowledgeError::OverlappingRanges {
                        feature: iv.feature.clone(),
                        first: format!("{}{}", other.label, other.feature_range),
                        second: format!("{}{}", iv.label, fr),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn for_feature<'a>(
        &'a self,
        feature: &'a str,
    ) -> impl Iterator<Item = &'a KnowledgeInterval> {
        self.intervals
            .iter()
            .filter(move |iv| iv.feature == feature)
    }

    pub fn features(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for iv in &self.intervals {
            if !out.contains(&iv.feature.as_str()) {
                out.push(&iv.feature);
            }
        }
        out
    }
}

/// The interval of `feature` whose range contains `value`, if any.
pub fn lookup_interval<'a>(
    set: &'a IntervalSet,
    feature: &str,
    value: f64,
) -> Option<&'a KnowledgeInterval> {
    set.intervals
        .iter()
        .find(|iv| iv.feature == feature && iv.feature_range.contains(value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRange {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

/// A rule-table input feature with its labelled ranges, lowest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleFeature {
    pub name: String,
    pub labels: Vec<LabelRange>,
}

impl RuleFeature {
    /// The range of `label`; the first label's range is closed below.
    pub fn range_of(&self, label: &str) -> Option<FeatureRange> {
        self.labels
            .iter()
            .position(|l| l.label == label)
            .map(|i| FeatureRange {
                lo: self.labels[i].lo,
                hi: self.labels[i].hi,
                lower_closed: i == 0,
            })
    }
}

/// One IF-THEN rule: a label for every feature, an output, and the number of
/// times its input combination was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub labels: BTreeMap<String, String>,
    pub output: f64,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub features: Vec<RuleFeature>,
    pub rules: Vec<Rule>,
}

impl RuleTable {
    pub fn new(features: Vec<RuleFeature>, rules: Vec<Rule>) -> Result<Self, KnowledgeError> {
        let table = Self { features, rules };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(KnowledgeError::Duplicate {
                    what: "feature",
                    name: f.name.clone(),
                });
            }
            let mut labels = HashSet::new();
            for (i, l) in f.labels.iter().enumerate() {
                if !labels.insert(l.label.as_str()) {
                    return Err(KnowledgeError::Duplicate {
                        what: "label",
                        name: format!("{}={}", f.name, l.label),
                    });
                }
                if !(l.lo.is_finite() && l.hi.is_finite() && l.lo < l.hi) {
                    return Err(KnowledgeError::EmptyRange {
                        feature: f.name.clone(),
                        label: l.label.clone(),
                        lo: l.lo,
                        hi: l.hi,
                    });
                }
                if i > 0 && f.labels[i - 1].hi > l.lo {
                    return Err(KnowledgeError::OverlappingRanges {
                        feature: f.name.clone(),
                        first: f.labels[i - 1].label.clone(),
                        second: l.label.clone(),
                    });
                }
            }
        }
        for (index, rule) in self.rules.iter().enumerate() {
            if rule.labels.len() != self.features.len() {
                return Err(KnowledgeError::MalformedRule {
                    index,
                    reason: format!(
                        "assigns {} labels for {} features",
                        rule.labels.len(),
                        self.features.len()
                    ),
                });
            }
            if !rule.output.is_finite() {
                return Err(KnowledgeError::MalformedRule {
                    index,
                    reason: "non-finite output".into(),
                });
            }
            for f in &self.features {
                match rule.labels.get(&f.name) {
                    None => {
                        return Err(KnowledgeError::MalformedRule {
                            index,
                            reason: format!("no label for feature `{}`", f.name),
                        })
                    }
                    Some(l) if f.range_of(l).is_none() => {
                        return Err(KnowledgeError::MalformedRule {
                            index,
                            reason: format!("unknown label `{l}` for feature `{}`", f.name),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&RuleFeature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn total_weight(&self) -> u64 {
        self.rules.iter().map(|r| u64::from(r.weight)).sum()
    }
}

/// Occurrence-weighted mean output of the rules that assign `label` to
/// `feature`.
pub fn weighted_quality_mean(
    rules: &RuleTable,
    feature: &str,
    label: &str,
) -> Result<f64, KnowledgeError> {
    let f = rules
        .feature(feature)
        .ok_or_else(|| KnowledgeError::UnknownFeature(feature.to_owned()))?;
    if f.range_of(label).is_none() {
        return Err(KnowledgeError::UnknownLabel {
            feature: feature.to_owned(),
            label: label.to_owned(),
        });
    }
    let (weighted, total) = rules
        .rules
        .iter()
        .filter(|r| r.labels.get(feature).map(String::as_str) == Some(label))
        .fold((0.0, 0u64), |(s, w), r| {
            (s + f64::from(r.weight) * r.output, w + u64::from(r.weight))
        });
    if total == 0 {
        return Err(KnowledgeError::NoEvidence {
            feature: feature.to_owned(),
            label: label.to_owned(),
        });
    }
    Ok(weighted / total as f64)
}

/// A label that [`build_intervals`] could not turn into an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OmittedInterval {
    pub feature: String,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltIntervals {
    pub set: IntervalSet,
    pub omitted: Vec<OmittedInterval>,
}

/// One interval per (feature, label) with positive evidence: target range
/// `[wqm - radius, wqm + radius]` clamped to `target_bounds`.
pub fn build_intervals(
    rules: &RuleTable,
    radius: f64,
    target_bounds: TargetRange,
) -> Result<BuiltIntervals, KnowledgeError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(KnowledgeError::InvalidRadius(radius));
    }
    if !(target_bounds.lo.is_finite()
        && target_bounds.hi.is_finite()
        && target_bounds.lo < target_bounds.hi)
    {
        return Err(KnowledgeError::InvalidBounds(
            target_bounds.lo,
            target_bounds.hi,
        ));
    }
    rules.validate()?;
    let mut intervals = Vec::new();
    let mut omitted = Vec::new();
    for f in &rules.features {
        for l in &f.labels {
            let wqm = match weighted_quality_mean(rules, &f.name, &l.label) {
                Ok(v) => v,
                Err(KnowledgeError::NoEvidence { .. }) => {
                    omitted.push(OmittedInterval {
                        feature: f.name.clone(),
                        label: l.label.clone(),
                        reason: "no rule with positive weight".into(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let lo = (wqm - radius).max(target_bounds.lo);
            let hi = (wqm + radius).min(target_bounds.hi);
            if lo >= hi {
                omitted.push(OmittedInterval {
                    feature: f.name.clone(),
                    label: l.label.clone(),
                    reason: format!("weighted mean {wqm} leaves an empty range after clamping"),
                });
                continue;
            }
            intervals.push(KnowledgeInterval {
                feature: f.name.clone(),
                label: l.label.clone(),
                feature_range: f.range_of(&l.label).expect("label from feature"),
                target_range: TargetRange { lo, hi },
            });
        }
    }
    let set = IntervalSet::new(format!("rules_r{radius}"), target_bounds, intervals)?;
    Ok(BuiltIntervals { set, omitted })
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn parse_versioned<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, KnowledgeError> {
    let doc: Versioned<T> = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(KnowledgeError::SchemaVersion {
            found: doc.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(doc.body)
}

fn write_versioned<T: Serialize>(body: &T) -> String {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    };
    serde_json::to_string_pretty(&doc).expect("knowledge documents serialize")
}

pub fn parse_interval_file(text: &str) -> Result<IntervalSet, KnowledgeError> {
    let set: IntervalSet = parse_versioned(text)?;
    set.validate()?;
    Ok(set)
}

pub fn interval_file_string(set: &IntervalSet) -> String {
    write_versioned(set)
}

pub fn parse_rule_file(text: &str) -> Result<RuleTable, KnowledgeError> {
    let table: RuleTable = parse_versioned(text)?;
    table.validate()?;
    Ok(table)
}

pub fn rule_file_string(table: &RuleTable) -> String {
    write_versioned(table)
}
