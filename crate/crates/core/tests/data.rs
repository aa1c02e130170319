use lnlab_core::data::*;
use lnlab_core::Error;
use proptest::prelude::*;

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        num_classes: 4,
        seq_len: 10,
        vocab_size: 24,
        samples_per_class: 50,
        motif_len: 3,
    }
}

#[test]
fn generator_is_deterministic_and_balanced() {
    let a = generate_synthetic_dataset(&spec(3)).unwrap();
    let b = generate_synthetic_dataset(&spec(3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, generate_synthetic_dataset(&spec(4)).unwrap().samples);
    assert_eq!(a.class_counts(), vec![50; 4]);
    assert!(a.samples.iter().all(|s| s.tokens[0] == CLS_TOKEN && s.tokens.len() == 10));
}

#[test]
fn rule_based_oracle_is_perfect() {
    let ds = generate_synthetic_dataset(&spec(9)).unwrap();
    for s in &ds.samples {
        assert_eq!(motif_oracle(&s.tokens, 4, 3), Some(s.label));
    }
}

#[test]
fn generator_rejects_too_small_vocabulary() {
    let s = SyntheticSpec {
        vocab_size: 10,
        ..spec(0)
    };
    assert!(matches!(
        generate_synthetic_dataset(&s),
        Err(Error::VocabularyTooSmall { .. })
    ));
}

fn balanced(classes: usize, per_class: usize) -> LabeledDataset {
    generate_synthetic_dataset(&SyntheticSpec {
        seed: 1,
        num_classes: classes,
        seq_len: 8,
        vocab_size: 2 + 3 * classes,
        samples_per_class: per_class,
        motif_len: 3,
    })
    .unwrap()
}

#[test]
fn per_class_noise_count() {
    let ds = balanced(2, 1600);
    let inj = inject_noisy_labels(
        &ds,
        5,
        &NoiseSpec {
            mode: NoiseMode::PerClass,
            fraction: 0.01,
            target_class: Some(1),
        },
    )
    .unwrap();
    assert_eq!(inj.manifest.len(), 16);
    for r in &inj.manifest {
        assert_eq!(r.true_label, 1);
        assert_ne!(r.noisy_label, r.true_label);
        assert_eq!(inj.dataset.samples[r.sample_id].label, r.noisy_label);
    }
    let changed = (0..ds.len())
        .filter(|&i| ds.samples[i].label != inj.dataset.samples[i].label)
        .count();
    assert_eq!(changed, 16);
}

#[test]
fn global_fractions_and_errors() {
    let ds = balanced(4, 100);
    for (f, n) in [(0.02, 8), (0.05, 20), (0.0, 0)] {
        let inj = inject_noisy_labels(
            &ds,
            1,
            &NoiseSpec {
                mode: NoiseMode::GlobalFraction,
                fraction: f,
                target_class: None,
            },
        )
        .unwrap();
        assert_eq!(inj.manifest.len(), n);
        if n == 0 {
            assert_eq!(inj.dataset, ds);
        }
    }
    let missing = NoiseSpec {
        mode: NoiseMode::PerClass,
        fraction: 0.1,
        target_class: None,
    };
    assert!(matches!(inject_noisy_labels(&ds, 1, &missing), Err(Error::MissingTargetClass)));
}

#[test]
fn noise_touches_only_train_split() {
    let ds = split_dataset(&balanced(3, 40), SplitRatios::new(0.5, 0.0, 0.5), 2, true).unwrap();
    let inj = inject_noisy_labels(
        &ds,
        2,
        &NoiseSpec {
            mode: NoiseMode::GlobalFraction,
            fraction: 0.5,
            target_class: None,
        },
    )
    .unwrap();
    for r in &inj.manifest {
        assert_eq!(ds.splits[r.sample_id], Split::Train);
    }
}

#[test]
fn split_examples() {
    let ds = balanced(10, 20);
    let all = split_dataset(&ds, SplitRatios::new(1.0, 0.0, 0.0), 0, false).unwrap();
    assert_eq!(all.indices(Split::Train).len(), 200);
    let s = split_dataset(&ds, SplitRatios::new(0.8, 0.1, 0.1), 4, true).unwrap();
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut counts = vec![0; 10];
        for i in s.indices(split) {
            counts[s.samples[i].label] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{split:?}: {counts:?}");
    }
    assert_eq!(s, split_dataset(&ds, SplitRatios::new(0.8, 0.1, 0.1), 4, true).unwrap());
    assert!(split_dataset(&ds, SplitRatios::new(0.8, 0.1, 0.2), 4, true).is_err());
}

#[test]
fn csv_fixture_parses() {
    let text = "tokens,label\nthe cat sat,0\nsat the dog,1\ndog dog cat,1\n";
    let schema = CsvSchema {
        vocab: Some(["the", "cat", "sat", "dog"].map(String::from).to_vec()),
        num_classes: Some(2),
        vocab_size: None,
    };
    let ds = read_csv_dataset(text.as_bytes(), &schema, "fixture").unwrap();
    let got: Vec<(Vec<u32>, usize)> = ds.samples.iter().map(|s| (s.tokens.clone(), s.label)).collect();
    assert_eq!(
        got,
        vec![(vec![0, 1, 2], 0), (vec![2, 0, 3], 1), (vec![3, 3, 1], 1)]
    );
    assert_eq!((ds.vocab_size, ds.seq_len, ds.num_classes), (4, 3, 2));
}

#[test]
fn csv_errors_name_the_problem() {
    let schema = CsvSchema {
        vocab: Some(vec!["a".into(), "b".into()]),
        ..Default::default()
    };
    let unknown = "tokens,label\na z,0\nq b,1\n";
    match read_csv_dataset(unknown.as_bytes(), &schema, "x") {
        Err(Error::UnknownTokens(t)) => assert_eq!(t, vec!["q".to_string(), "z".to_string()]),
        other => panic!("{other:?}"),
    }
    let bad = "tokens,label\na b,0\na b,x\n";
    assert!(matches!(
        read_csv_dataset(bad.as_bytes(), &schema, "x"),
        Err(Error::MalformedRow { line: 3, .. })
    ));
}

#[test]
fn empty_csv_is_empty_dataset() {
    let ds = read_csv_dataset(&b""[..], &CsvSchema::default(), "empty").unwrap();
    assert!(ds.is_empty());
    let ds = read_csv_dataset(&b"tokens,label\n"[..], &CsvSchema::default(), "empty").unwrap();
    assert!(ds.is_empty());
}

#[test]
fn csv_round_trip() {
    let ds = balanced(3, 7);
    let mut buf = Vec::new();
    write_csv_dataset(&ds, &mut buf, None).unwrap();
    let schema = CsvSchema {
        vocab: None,
        num_classes: Some(ds.num_classes),
        vocab_size: Some(ds.vocab_size),
    };
    let back = read_csv_dataset(&buf[..], &schema, "rt").unwrap();
    assert_eq!(back.samples, ds.samples);
    let mut again = Vec::new();
    write_csv_dataset(&back, &mut again, None).unwrap();
    assert_eq!(buf, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn stratified_split_is_a_disjoint_balanced_cover(seed in 0u64..1000, per_class in 3usize..30) {
        let ds = balanced(3, per_class);
        let s = split_dataset(&ds, SplitRatios::new(0.6, 0.2, 0.2), seed, true).unwrap();
        let total: usize = [Split::Train, Split::Val, Split::Test].iter().map(|&t| s.indices(t).len()).sum();
        prop_assert_eq!(total, ds.len());
        for c in 0..3 {
            let n = s.indices(Split::Train).iter().filter(|&&i| s.samples[i].label == c).count();
            prop_assert!((n as f64 - 0.6 * per_class as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn injected_labels_always_differ(seed in 0u64..1000, fraction in 0.0f64..1.0) {
        let ds = balanced(4, 25);
        let inj = inject_noisy_labels(&ds, seed, &NoiseSpec { mode: NoiseMode::GlobalFraction, fraction, target_class: None }).unwrap();
        prop_assert_eq!(inj.manifest.len(), noisy_count(fraction, ds.len()));
        for r in &inj.manifest {
            prop_assert!(r.noisy_label != r.true_label && r.noisy_label < 4);
        }
    }
}
