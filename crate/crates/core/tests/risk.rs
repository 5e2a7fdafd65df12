use proptest::prelude::*;
use sigrisk_core::domain::FeatureVector;
use sigrisk_core::inference::Coefficients;
use sigrisk_core::risk::{adjust_scores, load_paper_model, model_coefficients, roc_auc, score_event, score_strata};
use sigrisk_core::simgen::synthetic::clogit_strata;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fv(names: &[&str], values: &[f64]) -> FeatureVector {
    names.iter().map(|n| n.to_string()).zip(values.iter().copied()).collect()
}

proptest! {
    #[test]
    fn score_moves_with_coefficient_sign(
        b in prop::collection::vec(-2.0f64..2.0, 3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
        c in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
        which in 0usize..3,
        step in 0.01f64..3.0,
    ) {
        let names = ["a", "b", "c"];
        let beta = Coefficients::new(names.iter().map(|s| s.to_string()).collect(), b.clone()).unwrap();
        let controls: Vec<FeatureVector> = c.iter().map(|v| fv(&names, v)).collect();
        let base = score_event(&beta, &fv(&names, &x), &controls).unwrap();
        let mut bumped = x.clone();
        bumped[which] += step;
        let moved = score_event(&beta, &fv(&names, &bumped), &controls).unwrap();
        if b[which] > 0.0 {
            prop_assert!(moved >= base);
        } else if b[which] < 0.0 {
            prop_assert!(moved <= base);
        } else {
            prop_assert_eq!(moved, base);
        }
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms(
        scores in prop::collection::vec(0.001f64..100.0, 4..80),
        flips in prop::collection::vec(any::<bool>(), 80),
    ) {
        let mut labels: Vec<bool> = flips[..scores.len()].to_vec();
        labels[0] = true;
        labels[1] = false;
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
        prop_assert_eq!(roc_auc(&logs, &labels).unwrap().auc, auc);
        prop_assert_eq!(roc_auc(&adjust_scores(&scores), &labels).unwrap().auc, auc);
    }

    #[test]
    fn flipped_labels_give_complementary_auc(
        mut scores in prop::collection::vec(-100.0f64..100.0, 4..80),
        flips in prop::collection::vec(any::<bool>(), 80),
    ) {
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        prop_assume!(scores.len() >= 2);
        let mut labels: Vec<bool> = flips[..scores.len()].to_vec();
        labels[0] = true;
        labels[1] = false;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap().auc + roc_auc(&scores, &flipped).unwrap().auc;
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn paper_model_scores_every_row_of_a_matching_dataset() {
    let model = load_paper_model("within_full").unwrap();
    assert_eq!(model.variables.len(), 14);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let strata = clogit_strata(&model.variables, 40, 4, &[0.0; 14], &mut rng);
    let scores = score_strata(&model_coefficients(&model), &strata).unwrap();
    assert_eq!(scores.len(), 40 * 5);
    assert_eq!(scores.iter().filter(|s| s.label == 1).count(), 40);
    assert!(scores.iter().all(|s| s.odds_ratio > 0.0 && s.adjusted > 0.0 && s.adjusted <= 1.0));
}

#[test]
fn scoring_rejects_a_dataset_missing_model_variables() {
    let model = load_paper_model("entrance_full").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let strata = clogit_strata(&["x".to_string()], 5, 4, &[0.0], &mut rng);
    assert!(score_strata(&model_coefficients(&model), &strata).is_err());
}
