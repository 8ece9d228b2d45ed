mod common;

use common::*;
use proptest::prelude::*;
use tsk_core::{fold_model, BnVariant, Error};

#[test]
fn bn_path_matches_definition() {
    let mut rng = rng(1);
    for variant in VARIANTS {
        for _ in 0..20 {
            let model = random_model(4, 3, 3, variant, &mut rng);
            let x = normal_matrix(5, 3, &mut rng);
            let scores = model.scores_batch(&x).unwrap();
            for i in 0..x.rows() {
                for (a, b) in scores.row(i).iter().zip(naive_scores(&model, x.row(i))) {
                    assert!((a - b).abs() <= 1e-12, "{variant:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn global_bn_cannot_be_folded() {
    let model = random_model(2, 2, 2, BnVariant::Global, &mut rng(0));
    assert!(matches!(fold_model(&model), Err(Error::FoldNotApplicable(BnVariant::Global))));
}

#[test]
fn uninitialized_stats_cannot_be_folded() {
    let mut model = random_model(2, 2, 2, BnVariant::Consequent, &mut rng(0));
    model.bn_state_mut()[0].batches_tracked = 0;
    assert!(matches!(fold_model(&model), Err(Error::UninitializedRunningStats)));
}

#[test]
fn plain_model_folds_to_itself() {
    let model = random_model(3, 2, 2, BnVariant::None, &mut rng(3));
    assert_eq!(fold_model(&model).unwrap(), model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folded_model_reproduces_bn_outputs(
        seed in any::<u64>(),
        rule_specific in any::<bool>(),
        r in 1usize..6,
        d in 1usize..6,
        c in 2usize..5,
    ) {
        let variant = if rule_specific { BnVariant::RuleSpecific } else { BnVariant::Consequent };
        let mut rng = rng(seed);
        let model = random_model(r, d, c, variant, &mut rng);
        let folded = fold_model(&model).unwrap();
        prop_assert_eq!(folded.bn_variant(), BnVariant::None);
        let x = normal_matrix(8, d, &mut rng);
        let plain = folded.scores_batch(&x).unwrap();
        for i in 0..x.rows() {
            for (a, b) in plain.row(i).iter().zip(naive_scores(&model, x.row(i))) {
                prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
