//! Agreement between model explanations and knowledge intervals.
//!
//! Each explanation point (one observation, one feature) is located in the
//! knowledge interval covering its feature value and classified by where its
//! expected value falls relative to that interval's target range. Per
//! feature, the fractions of agreeing, disagreeing and uncovered points are
//! weighted by feature importance; the weighted agree fraction is the
//! model's weighted mean agreement (WMA). Uncovered points stay in the
//! denominator, so missing knowledge lowers the WMA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automl::LeaderboardEntry;
use crate::explain::{ExplanationSet, ImportanceVector};
use crate::knowledge::{lookup_interval, IntervalSet, KnowledgeInterval};

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("feature `{0}` has explanations but no importance weight")]
    MissingImportance(String),
    #[error("importance weight for `{0}` has no explanations")]
    UnexplainedFeature(String),
    #[error("model id mismatch: explanations for `{explanations}`, importance for `{importance}`")]
    ModelMismatch {
        explanations: String,
        importance: String,
    },
    #[error("explanation set for `{0}` has no records")]
    NoRecords(String),
    #[error("no leaderboard entry for model `{0}`")]
    MissingLeaderboardEntry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Over,
    Under,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "direction", rename_all = "snake_case")]
pub enum PointClass {
    Agree,
    Disagree(Direction),
    NoKnowledge,
}

/// Endpoints of the target range count as agreement.
pub fn classify_point(expected_value: f64, interval: Option<&KnowledgeInterval>) -> PointClass {
    match interval {
        None => PointClass::NoKnowledge,
        Some(iv) if expected_value > iv.target_range.hi => PointClass::Disagree(Direction::Over),
        Some(iv) if expected_value < iv.target_range.lo => PointClass::Disagree(Direction::Under),
        Some(_) => PointClass::Agree,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPoint {
    pub observation_index: usize,
    pub feature: String,
    /// Label of the covering interval, if any.
    pub interval: Option<String>,
    #[serde(flatten)]
    pub class: PointClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAgreement {
    pub feature: String,
    pub n_points: usize,
    pub agree_fraction: f64,
    pub disagree_fraction: f64,
    pub over_fraction: f64,
    pub under_fraction: f64,
    pub noknowledge_fraction: f64,
    pub importance_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub model_id: String,
    pub interval_set: String,
    pub features: Vec<FeatureAgreement>,
    pub wma: f64,
    pub points: Vec<ClassifiedPoint>,
}

/// Classifies every explanation record and aggregates per feature.
pub fn summarize(
    expl: &ExplanationSet,
    importance: &ImportanceVector,
    intervals: &IntervalSet,
) -> Result<AgreementSummary, AgreementError> {
    if expl.model_id != importance.model_id {
        return Err(AgreementError::ModelMismatch {
            explanations: expl.model_id.clone(),
            importance: importance.model_id.clone(),
        });
    }
    if expl.records.is_empty() {
        return Err(AgreementError::NoRecords(expl.model_id.clone()));
    }
    for f in importance.weights.keys() {
        if !expl.feature_names.contains(f) {
            return Err(AgreementError::UnexplainedFeature(f.clone()));
        }
    }

    let points: Vec<ClassifiedPoint> = expl
        .records
        .iter()
        .map(|r| {
            let iv = lookup_interval(intervals, &r.feature, r.feature_value);
            ClassifiedPoint {
                observation_index: r.observation_index,
                feature: r.feature.clone(),
                interval: iv.map(|iv| iv.label.clone()),
                class: classify_point(r.expected_value, iv),
            }
        })
        .collect();

    let mut features = Vec::with_capacity(expl.feature_names.len());
    for name in &expl.feature_names {
        let weight = *importance
            .weights
            .get(name)
            .ok_or_else(|| AgreementError::MissingImportance(name.clone()))?;
        let mut counts = [0usize; 4];
        for p in points.iter().filter(|p| &p.feature == name) {
            counts[match p.class {
                PointClass::Agree => 0,
                PointClass::Disagree(Direction::Over) => 1,
                PointClass::Disagree(Direction::Under) => 2,
                PointClass::NoKnowledge => 3,
            }] += 1;
        }
        let n: usize = counts.iter().sum();
        let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        features.push(FeatureAgreement {
            feature: name.clone(),
            n_points: n,
            agree_fraction: frac(counts[0]),
            disagree_fraction: frac(counts[1] + counts[2]),
            over_fraction: frac(counts[1]),
            under_fraction: frac(counts[2]),
            noknowledge_fraction: if n == 0 { 1.0 } else { frac(counts[3]) },
            importance_weight: weight,
        });
    }
    let wma = weighted_mean_agreement(&features);
    Ok(AgreementSummary {
        model_id: expl.model_id.clone(),
        interval_set: intervals.name.clone(),
        features,
        wma,
        points,
    })
}

/// `Σ_f importance_f · agree_fraction_f`.
pub fn weighted_mean_agreement(features: &[FeatureAgreement]) -> f64 {
    features
        .iter()
        .map(|f| f.importance_weight * f.agree_fraction)
        .sum()
}

/// Colour band of a Marimekko rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Agree,
    Disagree,
    NoKnowledge,
}

/// A rectangle of the summary plot in unit coordinates: columns are feature
/// importances laid left to right, bands stacked bottom-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarimekkoRect {
    pub feature: String,
    pub band: Band,
    pub x: f64,
    pub width: f64,
    pub y: f64,
    pub height: f64,
}

pub fn marimekko_layout(summary: &AgreementSummary) -> Vec<MarimekkoRect> {
    let mut rects = Vec::with_capacity(summary.features.len() * 3);
    let mut x = 0.0;
    for f in &summary.features {
        let mut y = 0.0;
        for (band, height) in [
            (Band::Agree, f.agree_fraction),
            (Band::Disagree, f.disagree_fraction),
            (Band::NoKnowledge, f.noknowledge_fraction),
        ] {
            rects.push(MarimekkoRect {
                feature: f.feature.clone(),
                band,
                x,
                width: f.importance_weight,
                y,
                height,
            });
            y += height;
        }
        x += f.importance_weight;
    }
    rects
}

/// Total area of the agree band.
pub fn blue_area(rects: &[MarimekkoRect]) -> f64 {
    rects
        .iter()
        .filter(|r| r.band == Band::Agree)
        .map(|r| r.width * r.height)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model_id: String,
    pub alias: String,
    pub wma: f64,
    pub cv_rmse: f64,
    pub cv_rank: usize,
}

/// Descending WMA; ties by ascending CV RMSE, then model id.
pub fn rank_by_wma(
    summaries: &[AgreementSummary],
    board: &[LeaderboardEntry],
) -> Result<Vec<RankedModel>, AgreementError> {
    let mut ranked = summaries
        .iter()
        .map(|s| {
            let e = board
                .iter()
                .find(|e| e.model_id == s.model_id)
                .ok_or_else(|| AgreementError::MissingLeaderboardEntry(s.model_id.clone()))?;
            Ok(RankedModel {
                model_id: s.model_id.clone(),
                alias: e.alias.clone(),
                wma: s.wma,
                cv_rmse: e.cv_rmse,
                cv_rank: e.rank,
            })
        })
        .collect::<Result<Vec<_>, AgreementError>>()?;
    ranked.sort_by(|a, b| {
        b.wma
            .total_cmp(&a.wma)
            .then(a.cv_rmse.total_cmp(&b.cv_rmse))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub agree: usize,
    pub over: usize,
    pub under: usize,
}

impl ClassCounts {
    fn total(&self) -> usize {
        self.agree + self.over + self.under
    }

    /// Direction held by a strict majority of the points, if any.
    fn majority(&self) -> Option<Direction> {
        let n = self.total();
        if 2 * self.over > n {
            Some(Direction::Over)
        } else if 2 * self.under > n {
            Some(Direction::Under)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBias {
    pub feature: String,
    pub label: String,
    /// Point counts pooled over all models.
    pub counts: ClassCounts,
    /// Models with points in this interval.
    pub n_models: usize,
    pub models_over: usize,
    pub models_under: usize,
    pub flag: Option<Direction>,
}

/// Default share of models that must disagree in the same direction.
pub const DEFAULT_MODEL_SHARE: f64 = 0.5;

/// Per-interval Over/Under/Agree counts across models. An interval is
/// flagged when the share of models whose points there are mostly in one
/// disagreeing direction exceeds `model_share`.
pub fn bias_report(
    explanations: &[ExplanationSet],
    intervals: &IntervalSet,
    model_share: f64,
) -> Vec<IntervalBias> {
    let mut out = Vec::new();
    for iv in &intervals.intervals {
        let mut pooled = ClassCounts::default();
        let (mut n_models, mut models_over, mut models_under) = (0, 0, 0);
        for expl in explanations {
            let mut c = ClassCounts::default();
            for r in expl
                .records_for(&iv.feature)
                .filter(|r| iv.feature_range.contains(r.feature_value))
            {
                match classify_point(r.expected_value, Some(iv)) {
                    PointClass::Agree => c.agree += 1,
                    PointClass::Disagree(Direction::Over) => c.over += 1,
                    PointClass::Disagree(Direction::Under) => c.under += 1,
                    PointClass::NoKnowledge => unreachable!("interval supplied"),
                }
            }
            if c.total() == 0 {
                continue;
            }
            n_models += 1;
            match c.majority() {
                Some(Direction::Over) => models_over += 1,
                Some(Direction::Under) => models_under += 1,
                None => {}
            }
            pooled.agree += c.agree;
            pooled.over += c.over;
            pooled.under += c.under;
        }
        let share = |k: usize| {
            if n_models == 0 {
                0.0
            } else {
                k as f64 / n_models as f64
            }
        };
        let flag = if share(models_over) > model_share {
            Some(Direction::Over)
        } else if share(models_under) > model_share {
            Some(Direction::Under)
        } else {
            None
        };
        out.push(IntervalBias {
            feature: iv.feature.clone(),
            label: iv.label.clone(),
            counts: pooled,
            n_models,
            models_over,
            models_under,
            flag,
        });
    }
    out
}

/// Per-model WMA keyed by model id.
pub fn wma_by_model(summaries: &[AgreementSummary]) -> BTreeMap<String, f64> {
    summaries
        .iter()
        .map(|s| (s.model_id.clone(), s.wma))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::ExplanationRecord;
    use crate::knowledge::{FeatureRange, TargetRange};
    use crate::modelzoo::{Family, ModelSpec};

    fn iv(
        feature: &str,
        label: &str,
        lo: f64,
        hi: f64,
        first: bool,
        a: f64,
        b: f64,
    ) -> KnowledgeInterval {
        KnowledgeInterval {
            feature: feature.into(),
            label: label.into(),
            feature_range: FeatureRange {
                lo,
                hi,
                lower_closed: first,
            },
            target_range: TargetRange { lo: a, hi: b },
        }
    }

    fn anth() -> IntervalSet {
        IntervalSet::new(
            "t2",
            TargetRange { lo: 1.0, hi: 5.0 },
            vec![
                iv("Anth", "L", 200.0, 600.0, true, 1.17, 2.17),
                iv("Anth", "M", 600.0, 800.0, false, 2.23, 3.23),
            ],
        )
        .unwrap()
    }

    #[test]
    fn classification() {
        let set = anth();
        assert_eq!(
            classify_point(3.0, Some(&set.intervals[1])),
            PointClass::Agree
        );
        assert_eq!(
            classify_point(3.0, Some(&set.intervals[0])),
            PointClass::Disagree(Direction::Over)
        );
        assert_eq!(
            classify_point(1.0, Some(&set.intervals[0])),
            PointClass::Disagree(Direction::Under)
        );
        assert_eq!(
            classify_point(2.17, Some(&set.intervals[0])),
            PointClass::Agree
        );
        assert_eq!(
            classify_point(1.17, Some(&set.intervals[0])),
            PointClass::Agree
        );
        assert_eq!(classify_point(42.0, None), PointClass::NoKnowledge);
    }

    #[test]
    fn point_class_json() {
        let v = serde_json::to_value(PointClass::Disagree(Direction::Over)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"class": "disagree", "direction": "over"})
        );
        let v = serde_json::to_value(PointClass::NoKnowledge).unwrap();
        assert_eq!(v, serde_json::json!({"class": "no_knowledge"}));
    }

    fn feature(name: &str, w: f64, agree: f64) -> FeatureAgreement {
        FeatureAgreement {
            feature: name.into(),
            n_points: 2,
            agree_fraction: agree,
            disagree_fraction: 1.0 - agree,
            over_fraction: 1.0 - agree,
            under_fraction: 0.0,
            noknowledge_fraction: 0.0,
            importance_weight: w,
        }
    }

    #[test]
    fn wma_hand_arithmetic() {
        let fs = [
            feature("a", 0.5, 1.0),
            feature("b", 0.3, 0.5),
            feature("c", 0.2, 0.0),
        ];
        assert!((weighted_mean_agreement(&fs) - 0.65).abs() < 1e-15);
    }

    fn summary(id: &str, wma: f64) -> AgreementSummary {
        AgreementSummary {
            model_id: id.into(),
            interval_set: "s".into(),
            features: vec![],
            wma,
            points: vec![],
        }
    }

    fn entry(id: &str, rmse: f64, rank: usize) -> LeaderboardEntry {
        LeaderboardEntry {
            model_id: id.into(),
            alias: format!("M{}", rank - 1),
            family: Family::Glm,
            grid_index: rank,
            spec: ModelSpec::Glm { l2_penalty: 1.0 },
            cv_rmse: rmse,
            rank,
        }
    }

    #[test]
    fn ranking_and_ties() {
        let board = vec![
            entry("a", 0.396, 1),
            entry("b", 0.464, 2),
            entry("c", 0.5, 3),
        ];
        let ranked = rank_by_wma(
            &[summary("a", 0.714), summary("b", 0.770), summary("c", 0.69)],
            &board,
        )
        .unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.model_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);

        let ranked = rank_by_wma(
            &[summary("c", 0.5), summary("b", 0.5), summary("a", 0.5)],
            &board,
        )
        .unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.model_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);

        assert!(matches!(
            rank_by_wma(&[summary("zz", 0.5)], &board),
            Err(AgreementError::MissingLeaderboardEntry(_))
        ));
    }

    fn expl(id: &str, points: &[(f64, f64)]) -> ExplanationSet {
        ExplanationSet {
            model_id: id.into(),
            base_value: 0.0,
            feature_names: vec!["Anth".into()],
            records: points
                .iter()
                .enumerate()
                .map(|(i, &(v, e))| ExplanationRecord {
                    observation_index: i,
                    feature: "Anth".into(),
                    feature_value: v,
                    shap_value: e,
                    expected_value: e,
                })
                .collect(),
        }
    }

    #[test]
    fn summarize_counts_uncovered_points() {
        let e = expl(
            "m",
            &[(500.0, 2.0), (700.0, 2.0), (150.0, 3.0), (700.0, 3.0)],
        );
        let imp = ImportanceVector {
            model_id: "m".into(),
            weights: [("Anth".to_string(), 1.0)].into(),
        };
        let s = summarize(&e, &imp, &anth()).unwrap();
        let f = &s.features[0];
        assert_eq!(f.agree_fraction, 0.5);
        assert_eq!(f.under_fraction, 0.25);
        assert_eq!(f.noknowledge_fraction, 0.25);
        assert_eq!(s.wma, 0.5);
        assert_eq!(s.points[2].class, PointClass::NoKnowledge);
        assert_eq!(s.points[0].interval.as_deref(), Some("L"));
        assert_eq!(blue_area(&marimekko_layout(&s)), 0.5);
    }

    #[test]
    fn summarize_validates_inputs() {
        let e = expl("m", &[(500.0, 2.0)]);
        let imp = ImportanceVector {
            model_id: "other".into(),
            weights: [("Anth".to_string(), 1.0)].into(),
        };
        assert!(matches!(
            summarize(&e, &imp, &anth()),
            Err(AgreementError::ModelMismatch { .. })
        ));
        let imp = ImportanceVector {
            model_id: "m".into(),
            weights: [("BW".to_string(), 1.0)].into(),
        };
        assert!(matches!(
            summarize(&e, &imp, &anth()),
            Err(AgreementError::UnexplainedFeature(_))
        ));
        let imp = ImportanceVector {
            model_id: "m".into(),
            weights: BTreeMap::new(),
        };
        assert!(matches!(
            summarize(&e, &imp, &anth()),
            Err(AgreementError::MissingImportance(_))
        ));
    }

    #[test]
    fn bias_flags_shared_overestimation() {
        let set = anth();
        let over = [
            expl("a", &[(300.0, 3.0), (400.0, 2.9), (700.0, 3.0)]),
            expl("b", &[(300.0, 2.5), (400.0, 2.0), (700.0, 2.5)]),
            expl("c", &[(300.0, 3.5), (400.0, 3.1), (700.0, 2.3)]),
        ];
        let report = bias_report(&over, &set, DEFAULT_MODEL_SHARE);
        assert_eq!(report[0].label, "L");
        assert_eq!(report[0].flag, Some(Direction::Over));
        assert_eq!(report[0].models_over, 2);
        assert_eq!(
            report[0].counts,
            ClassCounts {
                agree: 1,
                over: 5,
                under: 0
            }
        );
        assert_eq!(report[1].flag, None);

        let agree = [expl("a", &[(300.0, 1.5), (700.0, 3.0)])];
        assert!(bias_report(&agree, &set, DEFAULT_MODEL_SHARE)
            .iter()
            .all(|b| b.flag.is_none()));
    }

    #[test]
    fn bias_mixed_directions_not_flagged() {
        // Per model on Anth-L: a = 1 over / 1 under (no majority),
        // b = 2 over / 1 agree (over), c = 2 under / 1 agree (under).
        // One of three models over, one under: neither exceeds a half.
        let set = anth();
        let mixed = [
            expl("a", &[(300.0, 3.0), (400.0, 1.0)]),
            expl("b", &[(300.0, 3.0), (400.0, 2.5), (500.0, 1.5)]),
            expl("c", &[(300.0, 1.0), (400.0, 1.1), (500.0, 1.5)]),
        ];
        let report = bias_report(&mixed, &set, DEFAULT_MODEL_SHARE);
        assert_eq!(report[0].n_models, 3);
        assert_eq!(report[0].models_over, 1);
        assert_eq!(report[0].models_under, 1);
        assert_eq!(
            report[0].counts,
            ClassCounts {
                agree: 2,
                over: 3,
                under: 3
            }
        );
        assert_eq!(report[0].flag, None);
        // Anth-M has no points at all.
        assert_eq!(report[1].n_models, 0);
        assert_eq!(report[1].flag, None);
    }
}
