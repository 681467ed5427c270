use ahmose_core::dataset::{Dataset, Observation};
use ahmose_core::explain::{
    base_value, explain_dataset, feature_importance, shapley_values, ExplainError, FnPredictor,
    Predictor, MAX_EXACT_FEATURES,
};
use ahmose_core::modelzoo::{fit, ModelSpec, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

fn nonlinear(row: &[f64]) -> f64 {
    row[0] * row[1]
        + (row[2] * 1.3).sin()
        + if row[3] > 0.2 { row[0] } else { -row[4] }
        + row[4].powi(2)
}

/// Interventional value of a coalition: features in `mask` come from `x`,
/// the rest from each background row.
fn coalition_value(model: &dyn Predictor, bg: &[Vec<f64>], x: &[f64], mask: &[bool]) -> f64 {
    bg.iter()
        .map(|b| {
            let row: Vec<f64> = (0..x.len())
                .map(|j| if mask[j] { x[j] } else { b[j] })
                .collect();
            model.predict_row(&row)
        })
        .sum::<f64>()
        / bg.len() as f64
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, first);
            out.push(p);
        }
    }
    out
}

/// Shapley values as the average marginal contribution over all orderings.
fn permutation_oracle(model: &dyn Predictor, bg: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let perms = permutations(&(0..m).collect::<Vec<_>>());
    let mut phi = vec![0.0; m];
    for p in &perms {
        let mut mask = vec![false; m];
        let mut prev = coalition_value(model, bg, x, &mask);
        for &j in p {
            mask[j] = true;
            let next = coalition_value(model, bg, x, &mask);
            phi[j] += next - prev;
            prev = next;
        }
    }
    phi.iter().map(|v| v / perms.len() as f64).collect()
}

#[test]
fn matches_permutation_oracle() {
    let model = FnPredictor {
        n_features: 5,
        f: nonlinear,
    };
    let bg = random_rows(20, 5, 1);
    for x in random_rows(4, 5, 2) {
        let got = shapley_values(&model, &bg, &x).unwrap();
        let want = permutation_oracle(&model, &bg, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn efficiency() {
    let model = FnPredictor {
        n_features: 5,
        f: nonlinear,
    };
    let bg = random_rows(30, 5, 3);
    let base = base_value(&model, &bg).unwrap();
    for x in random_rows(10, 5, 4) {
        let phi = shapley_values(&model, &bg, &x).unwrap();
        let total = base + phi.iter().sum::<f64>();
        assert!((total - model.predict_row(&x)).abs() < 1e-9);
    }
}

#[test]
fn dummy_feature_gets_zero() {
    // Feature 2 is ignored by the model.
    let model = FnPredictor {
        n_features: 4,
        f: |r: &[f64]| r[0] * r[1] + r[3].exp(),
    };
    let bg = random_rows(15, 4, 5);
    for x in random_rows(5, 4, 6) {
        assert!(shapley_values(&model, &bg, &x).unwrap()[2].abs() < 1e-12);
    }
}

#[test]
fn constant_training_column_gets_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Observation> = (0..40)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            Observation {
                values: vec![a, 3.0, b],
                target: Some(2.0 * a - b + 0.1 * (a * b)),
                group_tag: None,
            }
        })
        .collect();
    let names = vec!["a".to_owned(), "c".to_owned(), "b".to_owned()];
    let ds = Dataset::new(names, "y", None, rows).unwrap();
    for spec in [
        ModelSpec::Glm { l2_penalty: 0.1 },
        ModelSpec::Gbm {
            n_trees: 20,
            learning_rate: 0.3,
            max_depth: 3,
            min_leaf: 2,
        },
    ] {
        let model = fit(&spec, &ds, 1).unwrap();
        let expl = explain_dataset(&model, "m", &ds, &ds).unwrap();
        assert!(expl.records_for("c").all(|r| r.shap_value.abs() < 1e-12));
    }
}

#[test]
fn symmetric_features_share_credit() {
    let model = FnPredictor {
        n_features: 3,
        f: |r: &[f64]| (r[0] + r[1]).powi(2) + r[2],
    };
    let bg: Vec<Vec<f64>> = random_rows(12, 3, 8)
        .into_iter()
        .map(|r| vec![r[0], r[0], r[2]])
        .collect();
    let x = [0.7, 0.7, -1.0];
    let phi = shapley_values(&model, &bg, &x).unwrap();
    assert!((phi[0] - phi[1]).abs() < 1e-12);
}

#[test]
fn ridge_on_duplicated_columns_splits_credit_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Observation> = (0..50)
        .map(|_| {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            Observation {
                values: vec![a, a, b],
                target: Some(4.0 * a + b + rng.gen_range(-0.1..0.1)),
                group_tag: None,
            }
        })
        .collect();
    let ds = Dataset::new(vec!["a1".into(), "a2".into(), "b".into()], "y", None, rows).unwrap();
    let model = fit(&ModelSpec::Glm { l2_penalty: 0.5 }, &ds, 0).unwrap();
    let expl = explain_dataset(&model, "m", &ds, &ds).unwrap();
    for (r1, r2) in expl.records_for("a1").zip(expl.records_for("a2")) {
        assert!((r1.shap_value - r2.shap_value).abs() < 1e-9);
    }
}

#[test]
fn linear_model_attribution_is_coefficient_times_deviation() {
    let names: Vec<String> = ["p", "q", "r"].map(String::from).into();
    let coefs = vec![1.5, -2.0, 0.25];
    let model = TrainedModel::linear(names, coefs.clone(), 0.7);
    let bg = random_rows(25, 3, 10);
    let means: Vec<f64> = (0..3)
        .map(|j| bg.iter().map(|r| r[j]).sum::<f64>() / 25.0)
        .collect();
    for x in random_rows(6, 3, 11) {
        let phi = shapley_values(&model, &bg, &x).unwrap();
        for j in 0..3 {
            assert!((phi[j] - coefs[j] * (x[j] - means[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn linearity_in_the_model() {
    let f = |r: &[f64]| r[0] * r[1] - r[2];
    let g = |r: &[f64]| (r[1] + r[2]).tanh();
    let sum = FnPredictor {
        n_features: 3,
        f: move |r: &[f64]| 2.0 * f(r) + g(r),
    };
    let (pf, pg) = (
        FnPredictor { n_features: 3, f },
        FnPredictor {
            n_features: 3,
            f: g,
        },
    );
    let bg = random_rows(10, 3, 12);
    let x = [0.3, -1.2, 0.8];
    let (a, b, c) = (
        shapley_values(&pf, &bg, &x).unwrap(),
        shapley_values(&pg, &bg, &x).unwrap(),
        shapley_values(&sum, &bg, &x).unwrap(),
    );
    for j in 0..3 {
        assert!((c[j] - (2.0 * a[j] + b[j])).abs() < 1e-12);
    }
}

#[test]
fn twelve_features_work_thirteen_refused() {
    let model = FnPredictor {
        n_features: MAX_EXACT_FEATURES,
        f: |r: &[f64]| r.iter().enumerate().map(|(i, v)| v * i as f64).sum::<f64>() + r[0] * r[11],
    };
    let bg = random_rows(3, MAX_EXACT_FEATURES, 13);
    let x = vec![1.0; MAX_EXACT_FEATURES];
    let phi = shapley_values(&model, &bg, &x).unwrap();
    let base = base_value(&model, &bg).unwrap();
    assert!((base + phi.iter().sum::<f64>() - model.predict_row(&x)).abs() < 1e-9);

    let big = FnPredictor {
        n_features: MAX_EXACT_FEATURES + 1,
        f: |_: &[f64]| 0.0,
    };
    let bg = random_rows(2, MAX_EXACT_FEATURES + 1, 14);
    let err = shapley_values(&big, &bg, &[0.0; MAX_EXACT_FEATURES + 1]).unwrap_err();
    assert!(matches!(err, ExplainError::TooManyFeatures { .. }));
}

#[test]
fn expected_value_is_shap_plus_base_and_importance_sums_to_one() {
    let model = TrainedModel::linear(vec!["u".into(), "v".into()], vec![1.0, -3.0], 0.0);
    let rows = random_rows(10, 2, 15)
        .into_iter()
        .map(|values| Observation {
            values,
            target: Some(0.0),
            group_tag: None,
        })
        .collect();
    let ds = Dataset::new(vec!["u".into(), "v".into()], "y", None, rows).unwrap();
    let expl = explain_dataset(&model, "lin", &ds, &ds).unwrap();
    assert_eq!(expl.n_observations(), 10);
    for r in &expl.records {
        assert_eq!(r.expected_value, r.shap_value + expl.base_value);
    }
    let imp = feature_importance(&expl).unwrap();
    assert!((imp.weights.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(imp.weights["v"] > imp.weights["u"]);
}

#[test]
fn empty_background_is_an_error() {
    let model = FnPredictor {
        n_features: 2,
        f: |_: &[f64]| 1.0,
    };
    assert!(matches!(
        shapley_values(&model, &[], &[0.0, 0.0]),
        Err(ExplainError::EmptyBackground)
    ));
}
