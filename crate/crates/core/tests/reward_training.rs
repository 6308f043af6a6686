use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmlab_core::models::{EncoderDims, RewardModel};
use rmlab_core::prefdata::{
    clean_label, DatasetMeta, LabelMode, PreferenceDataset, PreferencePair,
};
use rmlab_core::reward_training::{
    accuracies, aggregate, aggregate_with_index, bt_loss, bt_loss_grad, head_disagreement,
    init_reward_model, train_reward_model, AggregationObjective, Method, RmTrainConfig,
};

const V: usize = 6;
const LP: usize = 3;
const LC: usize = 8;

fn dims() -> EncoderDims {
    EncoderDims {
        vocab_size: V,
        embed_dim: 8,
        hidden_dim: 16,
        feature_dim: 8,
    }
}

/// Pairs whose true preference is "more zeros in the completion"; ties are
/// skipped. `noise` flips labels independently.
fn planted(n: usize, noise: f64, seed: u64) -> PreferenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    while pairs.len() < n {
        let prompt: Vec<usize> = (0..LP).map(|_| rng.random_range(0..V)).collect();
        let a: Vec<usize> = (0..LC).map(|_| rng.random_range(0..V)).collect();
        let b: Vec<usize> = (0..LC).map(|_| rng.random_range(0..V)).collect();
        let zeros = |c: &[usize]| c.iter().filter(|&&t| t == 0).count() as f64;
        let margin = zeros(&a) - zeros(&b);
        if margin == 0.0 {
            continue;
        }
        let base = clean_label(margin);
        let flipped = rng.random::<f64>() < noise;
        pairs.push(PreferencePair {
            prompt,
            completion_a: a,
            completion_b: b,
            label: if flipped { base.flipped() } else { base },
            flipped,
            gold_margin: margin,
        });
    }
    let n_val = n / 5;
    let meta = DatasetMeta {
        seed,
        noise_rate: noise,
        label_mode: LabelMode::ArgmaxFlip,
        gold_fingerprint: "planted".into(),
        vocab_size: V,
        prompt_len: LP,
        completion_len: LC,
    };
    PreferenceDataset::new(pairs, 0..n - n_val, n - n_val..n, meta).unwrap()
}

fn cfg(epochs: usize, seed: u64) -> RmTrainConfig {
    RmTrainConfig {
        learning_rate: 1e-2,
        epochs,
        batch_size: 32,
        seed,
        per_head_bootstrap: false,
    }
}

#[test]
fn bt_loss_exact_values() {
    assert!((bt_loss(0.0, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    for shift in [-7.5, -1.0, 0.3, 12.0] {
        assert!(
            (bt_loss(1.25 + shift, -0.5 + shift).unwrap() - bt_loss(1.25, -0.5).unwrap()).abs()
                < 1e-12
        );
    }
    let big = bt_loss(50.0, 0.0).unwrap();
    assert!(big.is_finite() && big < 1e-20 && big > 0.0);
    let huge = bt_loss(0.0, 800.0).unwrap();
    assert!((huge - 800.0).abs() < 1e-9);
    assert!(bt_loss(f64::NAN, 0.0).is_err());
}

#[test]
fn bt_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..100 {
        let a: f64 = rng.random_range(-6.0..6.0);
        let b: f64 = rng.random_range(-6.0..6.0);
        let (ga, gb) = bt_loss_grad(a, b);
        let na = (bt_loss(a + h, b).unwrap() - bt_loss(a - h, b).unwrap()) / (2.0 * h);
        let nb = (bt_loss(a, b + h).unwrap() - bt_loss(a, b - h).unwrap()) / (2.0 * h);
        assert!((ga - na).abs() / na.abs().max(1e-8) < 1e-5);
        assert!((gb - nb).abs() / nb.abs().max(1e-8) < 1e-5);
        assert_eq!(ga, -gb);
    }
}

#[test]
fn trained_models_recover_a_planted_preference() {
    let ds = planted(3000, 0.0, 1);
    for method in Method::ALL {
        let mut rm = init_reward_model(method, 3, dims(), None, 2).unwrap();
        let log = train_reward_model(&ds, &mut rm, &cfg(4, 3)).unwrap();
        let acc = accuracies(&rm, ds.validation_pairs()).unwrap();
        assert!(acc.clean > 0.95, "{method}: {acc:?}");
        assert_eq!(log.epochs.len(), 4);
        assert!(log.epochs[3].train_loss < log.epochs[0].train_loss);
        assert_eq!(log.last().unwrap().val_acc_clean, acc.clean);
    }
}

#[test]
fn noisy_accuracy_is_capped_by_the_flip_rate() {
    let ds = planted(3000, 0.25, 4);
    let mut rm = init_reward_model(Method::Multihead, 3, dims(), None, 2).unwrap();
    train_reward_model(&ds, &mut rm, &cfg(4, 3)).unwrap();
    let acc = accuracies(&rm, ds.validation_pairs()).unwrap();
    assert!(acc.noisy <= 0.80, "{acc:?}");
    assert!(acc.clean > acc.noisy, "{acc:?}");
}

#[test]
fn trained_heads_stay_distinct() {
    let ds = planted(1000, 0.25, 8);
    for method in [Method::Multihead, Method::Ensemble] {
        let mut rm = init_reward_model(method, 3, dims(), None, 5).unwrap();
        train_reward_model(&ds, &mut rm, &cfg(1, 6)).unwrap();
        let d = head_disagreement(&rm, ds.validation_pairs()).unwrap();
        assert!(d > 0.0, "{method}: {d}");
    }
}

#[test]
fn one_head_and_one_member_train_identically() {
    let ds = planted(400, 0.1, 6);
    let mut multi = init_reward_model(Method::Multihead, 1, dims(), None, 8).unwrap();
    let mut ens = init_reward_model(Method::Ensemble, 1, dims(), None, 8).unwrap();
    let lm = train_reward_model(&ds, &mut multi, &cfg(2, 9)).unwrap();
    let le = train_reward_model(&ds, &mut ens, &cfg(2, 9)).unwrap();
    let (RewardModel::MultiHead(m), RewardModel::Ensemble(e)) = (&multi, &ens) else {
        panic!("unexpected regimes")
    };
    assert_eq!(&e.members[0].as_single_head(), m);
    assert_eq!(lm, le);
}

#[test]
fn training_is_deterministic_per_seed() {
    let ds = planted(400, 0.1, 6);
    let run = |seed| {
        let mut rm = init_reward_model(Method::Ensemble, 2, dims(), None, 1).unwrap();
        let log = train_reward_model(&ds, &mut rm, &cfg(2, seed)).unwrap();
        (rm, log)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).0, run(4).0);
}

#[test]
fn heads_share_one_encoder_pass() {
    let ds = planted(300, 0.0, 2);
    let encoded = |method, k| {
        let mut rm = init_reward_model(method, k, dims(), None, 1).unwrap();
        train_reward_model(&ds, &mut rm, &cfg(1, 1)).unwrap();
        match rm {
            RewardModel::MultiHead(m) => vec![m.encoder.sequences_encoded()],
            RewardModel::Ensemble(e) => e
                .members
                .iter()
                .map(|m| m.encoder.sequences_encoded())
                .collect(),
        }
    };
    let single = encoded(Method::Single, 1)[0];
    assert!(single >= 2 * ds.train_pairs().len() as u64);
    assert_eq!(encoded(Method::Multihead, 5), vec![single]);
    assert_eq!(encoded(Method::Ensemble, 3), vec![single; 3]);
}

#[test]
fn bootstrap_masks_change_training() {
    let ds = planted(600, 0.2, 3);
    let train = |bootstrap| {
        let mut rm = init_reward_model(Method::Multihead, 3, dims(), None, 1).unwrap();
        let c = RmTrainConfig {
            per_head_bootstrap: bootstrap,
            ..cfg(1, 2)
        };
        train_reward_model(&ds, &mut rm, &c).unwrap()
    };
    assert_ne!(train(true), train(false));
}

#[test]
fn invalid_training_configs_are_rejected() {
    let ds = planted(50, 0.0, 1);
    let mut rm = init_reward_model(Method::Single, 1, dims(), None, 1).unwrap();
    for bad in [
        RmTrainConfig {
            epochs: 0,
            ..cfg(1, 1)
        },
        RmTrainConfig {
            batch_size: 0,
            ..cfg(1, 1)
        },
        RmTrainConfig {
            learning_rate: -1.0,
            ..cfg(1, 1)
        },
    ] {
        assert!(train_reward_model(&ds, &mut rm, &bad).is_err());
    }
}

fn reward_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..9)
}

proptest! {
    #[test]
    fn min_mean_max_are_ordered(v in reward_vec()) {
        let min = aggregate(&v, AggregationObjective::Min).unwrap();
        let mean = aggregate(&v, AggregationObjective::Mean).unwrap();
        let max = aggregate(&v, AggregationObjective::Max).unwrap();
        prop_assert!(min <= mean && mean <= max);
        prop_assert!(v.contains(&min) && v.contains(&max));
    }

    #[test]
    fn aggregation_ignores_member_order(mut v in reward_vec(), seed in any::<u64>()) {
        let before = [AggregationObjective::Min, AggregationObjective::Max].map(|o| aggregate(&v, o).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        let after = [AggregationObjective::Min, AggregationObjective::Max].map(|o| aggregate(&v, o).unwrap());
        prop_assert_eq!(before, after);
    }

    #[test]
    fn single_picks_its_index(v in reward_vec(), i in 0usize..8) {
        let o = AggregationObjective::Single(i);
        if i < v.len() {
            let a = aggregate_with_index(&v, o).unwrap();
            prop_assert_eq!(a.value, v[i]);
            prop_assert_eq!(a.index, Some(i));
        } else {
            prop_assert!(aggregate(&v, o).is_err());
        }
    }

    #[test]
    fn bt_loss_is_softplus_of_the_negated_margin(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let l = bt_loss(a, b).unwrap();
        prop_assert!(l > 0.0);
        prop_assert!((l - bt_loss(b, a).unwrap() + (a - b)).abs() < 1e-9);
    }
}
