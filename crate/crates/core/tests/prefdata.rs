use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmlab_core::models::{EncoderDims, GoldRewardModel, PolicyDims, PolicyModel};
use rmlab_core::prefdata::{
    build_dataset, clean_label, generate_pairs, generate_prompts, gold_label, gold_margins,
    parse_dataset, write_dataset, DataConfig, LabelMode, Preference, World,
};
use rmlab_core::Error;

const FIXTURE: &str = concat!(
    r#"{"format":"rmlab-prefs","version":1,"n_pairs":2,"train":[0,1],"validation":[1,2],"meta":{"seed":5,"noise_rate":0.25,"label_mode":"argmax_flip","gold_fingerprint":"abc","vocab_size":4,"prompt_len":2,"completion_len":3}}"#,
    "\n",
    r#"{"prompt":[0,1],"a":[2,2,3],"b":[1,0,0],"label":"B","flipped":true,"gold_margin":0.5}"#,
    "\n",
    r#"{"prompt":[3,3],"a":[0,1,2],"b":[2,1,0],"label":"B","flipped":false,"gold_margin":-1.25}"#,
    "\n",
);

struct Setup {
    world: World,
    reference: PolicyModel,
    gold: GoldRewardModel,
}

fn setup() -> Setup {
    let world = World::new(12, 4, 6, 1.0, 3).unwrap();
    let reference = PolicyModel::seeded(
        PolicyDims {
            vocab_size: 12,
            embed_dim: 8,
            hidden_dim: 8,
            prompt_len: 4,
            completion_len: 6,
        },
        4,
    );
    let gold = GoldRewardModel::seeded(
        EncoderDims {
            vocab_size: 12,
            embed_dim: 8,
            hidden_dim: 24,
            feature_dim: 8,
        },
        5,
        3.0,
    );
    Setup {
        world,
        reference,
        gold,
    }
}

fn config(n: usize, noise: f64) -> DataConfig {
    DataConfig {
        train_pairs: n,
        validation_pairs: n / 10,
        noise_rate: noise,
        label_mode: LabelMode::ArgmaxFlip,
    }
}

#[test]
fn hand_written_file_parses_and_writes_back_identically() {
    let ds = parse_dataset(FIXTURE).unwrap();
    assert_eq!(ds.pairs.len(), 2);
    assert_eq!(ds.train, 0..1);
    assert_eq!(ds.validation, 1..2);
    let p = &ds.pairs[0];
    assert_eq!(
        (
            p.prompt.clone(),
            p.completion_a.clone(),
            p.completion_b.clone()
        ),
        (vec![0, 1], vec![2, 2, 3], vec![1, 0, 0])
    );
    assert_eq!(p.clean_label(), Preference::A);
    assert_eq!(p.label, Preference::B);
    assert_eq!(ds.pairs[1].clean_label(), Preference::B);
    assert_eq!(ds.flipped_fraction(), 0.5);
    assert_eq!(ds.validation_pairs()[0].gold_margin, -1.25);
    let mut out = Vec::new();
    write_dataset(&ds, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), FIXTURE);
}

fn parse_line(text: &str) -> usize {
    match parse_dataset(text) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_files_report_the_line() {
    let lines: Vec<&str> = FIXTURE.lines().collect();
    assert_eq!(parse_line(&format!("{}\n{}\n", lines[0], lines[1])), 3);
    assert_eq!(parse_line(&FIXTURE.replace("[2,1,0]", "[2,1,9]")), 3);
    assert_eq!(parse_line(&FIXTURE.replace("[2,2,3]", "[2,2]")), 2);
    assert_eq!(
        parse_line(&FIXTURE.replace("\"flipped\":true", "\"flipped\":false")),
        2
    );
    assert_eq!(parse_line(FIXTURE.trim_end()), 3);
    assert!(matches!(
        parse_dataset(&FIXTURE.replace("\"version\":1", "\"version\":2")),
        Err(Error::Version {
            found: 2,
            expected: 1
        })
    ));
}

#[test]
fn swapping_slots_negates_margins_and_clean_labels() {
    let s = setup();
    let prompts = generate_prompts(&s.world, 300, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let pairs = generate_pairs(&prompts, &s.reference, 2).unwrap();
    let swapped: Vec<_> = pairs.iter().map(|p| p.swapped()).collect();
    let m = gold_margins(&pairs, &s.gold).unwrap();
    let ms = gold_margins(&swapped, &s.gold).unwrap();
    for (a, b) in m.iter().zip(&ms) {
        assert_eq!(*a, -*b);
        if a.abs() > 1e-12 {
            assert_eq!(clean_label(*a), clean_label(*b).flipped());
        }
    }
    let labeled = gold_label(&pairs, &s.gold, 0.25, LabelMode::ArgmaxFlip, 9).unwrap();
    let relabeled = gold_label(&swapped, &s.gold, 0.25, LabelMode::ArgmaxFlip, 9).unwrap();
    for (a, b) in labeled.iter().zip(&relabeled) {
        assert_eq!(a.flipped, b.flipped);
        if a.gold_margin.abs() > 1e-12 {
            assert_eq!(a.label, b.label.flipped());
        }
    }
}

#[test]
fn flip_rate_sits_inside_the_binomial_band() {
    let s = setup();
    let ds = build_dataset(
        &s.world,
        &s.reference,
        &s.gold,
        "g",
        &config(10_000, 0.25),
        21,
    )
    .unwrap();
    let rate = ds.pairs.iter().filter(|p| p.flipped).count() as f64 / ds.pairs.len() as f64;
    let sigma = (0.25f64 * 0.75 / ds.pairs.len() as f64).sqrt();
    assert!((rate - 0.25).abs() < 3.0 * sigma, "{rate}");
    for p in &ds.pairs {
        assert_eq!(p.flipped, p.label != p.clean_label());
    }
}

#[test]
fn zero_noise_reproduces_clean_labels() {
    let s = setup();
    let ds = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(2000, 0.0), 4).unwrap();
    assert!(ds
        .pairs
        .iter()
        .all(|p| !p.flipped && p.label == p.clean_label()));
}

#[test]
fn preferred_slot_is_balanced() {
    let s = setup();
    let ds = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(4000, 0.0), 8).unwrap();
    let n = ds.pairs.len() as f64;
    let a = ds.pairs.iter().filter(|p| p.label == Preference::A).count() as f64 / n;
    assert!((a - 0.5).abs() < 4.0 * (0.25 / n).sqrt(), "{a}");
}

#[test]
fn prompt_tokens_follow_the_natural_distribution() {
    let s = setup();
    let prompts = generate_prompts(&s.world, 20_000, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let mut counts = vec![0usize; 12];
    for p in &prompts {
        assert_eq!(p.len(), 4);
        for &t in p {
            counts[t] += 1;
        }
    }
    let n = (prompts.len() * 4) as f64;
    assert!((s.world.natural.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (c, p) in counts.iter().zip(&s.world.natural) {
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (*c as f64 / n - p).abs() < 4.0 * sigma + 1e-12,
            "{counts:?} vs {:?}",
            s.world.natural
        );
    }
}

#[test]
fn bradley_terry_labels_track_the_sigmoid_of_the_margin() {
    let s = setup();
    let prompts = generate_prompts(&s.world, 6000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let pairs = generate_pairs(&prompts, &s.reference, 4).unwrap();
    let labeled = gold_label(&pairs, &s.gold, 0.0, LabelMode::BradleyTerry, 5).unwrap();
    let expected: f64 = labeled
        .iter()
        .map(|p| 1.0 / (1.0 + (-p.gold_margin).exp()))
        .sum();
    let observed = labeled.iter().filter(|p| p.label == Preference::A).count() as f64;
    let var: f64 = labeled
        .iter()
        .map(|p| {
            let q = 1.0 / (1.0 + (-p.gold_margin).exp());
            q * (1.0 - q)
        })
        .sum();
    assert!((observed - expected).abs() < 4.0 * var.sqrt());
}

#[test]
fn noise_rate_outside_range_is_rejected() {
    let s = setup();
    for bad in [-0.1, 0.5, 0.9] {
        assert!(build_dataset(&s.world, &s.reference, &s.gold, "g", &config(100, bad), 1).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_deterministic_and_round_trips(seed in 0u64..1000, noise in 0.0f64..0.49) {
        let s = setup();
        let a = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(60, noise), seed).unwrap();
        let b = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(60, noise), seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut buf = Vec::new();
        write_dataset(&a, &mut buf).unwrap();
        prop_assert_eq!(parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap(), a);
    }

    #[test]
    fn noise_only_touches_labels(seed in 0u64..1000, noise in 0.0f64..0.49) {
        let s = setup();
        let clean = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(60, 0.0), seed).unwrap();
        let noisy = build_dataset(&s.world, &s.reference, &s.gold, "g", &config(60, noise), seed).unwrap();
        for (c, n) in clean.pairs.iter().zip(&noisy.pairs) {
            prop_assert_eq!(&c.prompt, &n.prompt);
            prop_assert_eq!(&c.completion_a, &n.completion_a);
            prop_assert_eq!(&c.completion_b, &n.completion_b);
            prop_assert_eq!(c.gold_margin, n.gold_margin);
            prop_assert_eq!(n.label == c.label, !n.flipped);
        }
    }
}
