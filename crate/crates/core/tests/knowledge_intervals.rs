use std::time::Instant;

use ahmose_core::dataset::synth::{generate_shift_scenario, RuleWeighting, ShiftConfig};
use ahmose_core::knowledge::{
    build_intervals, interval_file_string, parse_interval_file, parse_rule_file, rule_file_string,
    weighted_quality_mean, RuleTable, TargetRange,
};

const VINEYARD: &str = include_str!("../../../fixtures/vineyard_rules.json");

/// (feature, label, WQM rounded to 3 decimals, interval lo, interval hi, label weight).
const REFERENCE: [(&str, &str, f64, f64, f64, u64); 12] = [
    ("TSS", "L", 1.857, 1.36, 2.36, 35),
    ("TSS", "H", 3.128, 2.63, 3.63, 109),
    ("TA", "L", 2.143, 1.64, 2.64, 14),
    ("TA", "M", 2.802, 2.30, 3.30, 106),
    ("TA", "H", 3.292, 2.79, 3.79, 24),
    ("Anth", "L", 1.667, 1.17, 2.17, 39),
    ("Anth", "M", 2.730, 2.23, 3.23, 63),
    ("Anth", "H", 3.853, 3.35, 4.35, 34),
    ("Anth", "VH", 4.750, 4.25, 5.00, 8),
    ("BW", "L", 3.800, 3.30, 4.30, 15),
    ("BW", "M", 2.942, 2.44, 3.44, 103),
    ("BW", "H", 1.769, 1.27, 2.27, 26),
];

fn vineyard() -> RuleTable {
    parse_rule_file(VINEYARD).unwrap()
}

fn label_weight(rules: &RuleTable, feature: &str, label: &str) -> u64 {
    rules
        .rules
        .iter()
        .filter(|r| r.labels[feature] == label)
        .map(|r| u64::from(r.weight))
        .sum()
}

#[test]
fn vineyard_rules_parse_and_round_trip() {
    let rules = vineyard();
    assert_eq!(rules.rules.len(), 33);
    assert_eq!(rules.total_weight(), 144);
    let again = parse_rule_file(&rule_file_string(&rules)).unwrap();
    assert_eq!(again, rules);
}

#[test]
fn vineyard_intervals_match_reference_table() {
    let started = Instant::now();
    let rules = vineyard();
    let built = build_intervals(&rules, 0.5, TargetRange { lo: 1.0, hi: 5.0 }).unwrap();
    assert!(built.omitted.is_empty());
    assert_eq!(built.set.intervals.len(), REFERENCE.len());
    for (feature, label, wqm, lo, hi, weight) in REFERENCE {
        let got = weighted_quality_mean(&rules, feature, label).unwrap();
        assert!((got - wqm).abs() <= 5e-4, "{feature}={label}: {got}");
        assert_eq!(label_weight(&rules, feature, label), weight);
        let iv = built
            .set
            .intervals
            .iter()
            .find(|i| i.feature == feature && i.label == label)
            .unwrap();
        assert!(
            (iv.target_range.lo - lo).abs() <= 5e-3,
            "{feature}={label} lo {}",
            iv.target_range.lo
        );
        assert!(
            (iv.target_range.hi - hi).abs() <= 5e-3,
            "{feature}={label} hi {}",
            iv.target_range.hi
        );
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn interval_file_round_trip() {
    let built = build_intervals(&vineyard(), 0.5, TargetRange { lo: 1.0, hi: 5.0 }).unwrap();
    let text = interval_file_string(&built.set);
    assert_eq!(parse_interval_file(&text).unwrap(), built.set);
}

#[test]
fn wider_radius_only_widens() {
    let rules = vineyard();
    let b = TargetRange { lo: 1.0, hi: 5.0 };
    let narrow = build_intervals(&rules, 0.25, b).unwrap().set;
    let wide = build_intervals(&rules, 1.0, b).unwrap().set;
    for (n, w) in narrow.intervals.iter().zip(&wide.intervals) {
        assert!(w.target_range.lo <= n.target_range.lo && n.target_range.hi <= w.target_range.hi);
        assert!(w.target_range.lo >= 1.0 && w.target_range.hi <= 5.0);
    }
}

/// Brute force: walk every cell of the synthetic grid and average the truth
/// of cells carrying each label, weighted the same way the generator does.
#[test]
fn synthetic_wqm_matches_brute_force() {
    for weighting in [RuleWeighting::Uniform, RuleWeighting::Observed] {
        let cfg = ShiftConfig {
            rule_weighting: weighting,
            ..ShiftConfig::default()
        };
        let sc = generate_shift_scenario(&cfg, 17).unwrap();
        for (fi, f) in cfg.features.iter().enumerate() {
            for (li, l) in f.labels.iter().enumerate() {
                let (mut num, mut den) = (0.0, 0.0);
                for rule in &sc.truth_rules.rules {
                    let cell: Vec<usize> = cfg
                        .features
                        .iter()
                        .map(|g| {
                            g.labels
                                .iter()
                                .position(|x| x.label == rule.labels[&g.name])
                                .unwrap()
                        })
                        .collect();
                    if cell[fi] == li {
                        assert_eq!(rule.output, cfg.cell_truth(&cell));
                        num += f64::from(rule.weight) * rule.output;
                        den += f64::from(rule.weight);
                    }
                }
                if den > 0.0 {
                    let got = weighted_quality_mean(&sc.truth_rules, &f.name, &l.label).unwrap();
                    assert!((got - num / den).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn synthetic_scenario_is_deterministic() {
    let cfg = ShiftConfig::default();
    let a = generate_shift_scenario(&cfg, 93).unwrap();
    let b = generate_shift_scenario(&cfg, 93).unwrap();
    assert_eq!(a.train.to_csv(), b.train.to_csv());
    assert_eq!(a.test.to_csv(), b.test.to_csv());
    assert_eq!(a.truth_rules, b.truth_rules);
    let c = generate_shift_scenario(&cfg, 94).unwrap();
    assert_ne!(a.train.to_csv(), c.train.to_csv());
}

#[test]
fn committed_shift_fixture_matches_generator() {
    let sc = generate_shift_scenario(&ShiftConfig::default(), 93).unwrap();
    assert_eq!(
        sc.train.to_csv(),
        include_str!("../../../fixtures/shift/train.csv")
    );
    assert_eq!(
        sc.test.to_csv(),
        include_str!("../../../fixtures/shift/test.csv")
    );
    assert_eq!(
        sc.truth_rules,
        parse_rule_file(include_str!("../../../fixtures/shift/rules.json")).unwrap()
    );
}
