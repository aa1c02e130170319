mod common;

use common::*;
use lnlab_core::analysis::*;
use lnlab_core::data::*;
use lnlab_core::model::transformer::HEAD_BIAS;
use lnlab_core::model::{AblationMode, Model, ModelConfig, Variant};
use lnlab_core::numerics::Tensor;
use lnlab_core::train::TrainConfig;
use rand::Rng;

#[test]
fn confident_correct_sample_has_vanishing_gradients() {
    let cfg = tiny_config(Variant::PostLn);
    let mut m = Model::new(cfg, 4).unwrap();
    m.set_param(HEAD_BIAS, Tensor::vector(vec![200.0, 0.0, 0.0, 0.0])).unwrap();
    let n = per_sample_ln_input_norms(&m, &[&[1, 2, 3]], &[0]).unwrap();
    assert!(n.norms.iter().all(|s| s[0] < 1e-60), "{:?}", n.norms);
}

#[test]
fn per_sample_norms_match_finite_differences() {
    let mut r = test_rng("norms-fd");
    for variant in [Variant::PreLn, Variant::PostLn] {
        let cfg = tiny_config(variant);
        let mut m = Model::new(cfg.clone(), 8).unwrap();
        randomize_ln(&mut m, 8);
        let tokens = random_tokens(&mut r, &cfg);
        let label = r.random_range(0..cfg.num_classes);
        let n = per_sample_ln_input_norms(&m, &[&tokens], &[label]).unwrap();
        for (k, site) in n.sites.iter().enumerate() {
            let fd = norm(&fd_ln_input_grad(&m, &tokens, label, *site));
            assert!(rel_err(n.norms[k][0], fd, 1e-12) < 1e-3, "{site:?}");
            let rows: f64 = n.positions[k][0].iter().map(|x| x * x).sum();
            assert!((rows.sqrt() - n.norms[k][0]).abs() < 1e-12);
        }
    }
}

#[test]
fn batching_does_not_change_per_sample_norms() {
    let mut r = test_rng("batching");
    let cfg = tiny_config(Variant::PreLn);
    let m = Model::new(cfg.clone(), 8).unwrap();
    let seqs: Vec<Vec<u32>> = (0..40).map(|_| random_tokens(&mut r, &cfg)).collect();
    let labels: Vec<usize> = (0..40).map(|_| r.random_range(0..4)).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(|s| &s[..]).collect();
    let all = per_sample_ln_input_norms(&m, &refs, &labels).unwrap();
    for i in [0, 31, 32, 39] {
        let one = per_sample_ln_input_norms(&m, &[refs[i]], &[labels[i]]).unwrap();
        for k in 0..all.sites.len() {
            assert!((all.norms[k][i] - one.norms[k][0]).abs() < 1e-12);
        }
    }
}

fn small_setup() -> (ModelConfig, Injection) {
    let ds = generate_synthetic_dataset(&SyntheticSpec {
        seed: 3,
        num_classes: 3,
        seq_len: 6,
        vocab_size: 12,
        samples_per_class: 12,
        motif_len: 3,
    })
    .unwrap();
    let ds = split_dataset(&ds, SplitRatios::new(0.75, 0.0, 0.25), 3, true).unwrap();
    let inj = inject_noisy_labels(
        &ds,
        3,
        &NoiseSpec {
            mode: NoiseMode::GlobalFraction,
            fraction: 0.1,
            target_class: None,
        },
    )
    .unwrap();
    let cfg = ModelConfig {
        num_layers: 3,
        vocab_size: 12,
        seq_len: 6,
        num_classes: 3,
        init_std: 0.02,
        ..tiny_config(Variant::PostLn)
    };
    (cfg, inj)
}

#[test]
fn gradient_profile_populations_and_csv() {
    let (cfg, inj) = small_setup();
    let m = Model::new(cfg, 1).unwrap();
    let p = gradient_profile(&m, &inj.dataset, &inj.manifest, 5, 1).unwrap();
    assert_eq!(p.learning.n_samples, 5);
    assert_eq!(p.memorization.n_samples, inj.manifest.len());
    assert_eq!(p.sites.len(), 6);
    let again = gradient_profile(&m, &inj.dataset, &inj.manifest, 5, 1).unwrap();
    assert_eq!(p, again);
    let mut buf = Vec::new();
    write_gradient_csv(&p, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,site,population,mean_norm,n_samples"));
    assert_eq!(lines.count(), 12);
    assert!(text.contains("\n1,ln1,learning,"));
}

#[test]
fn group_ablation_shares_init_and_order() {
    let (cfg, inj) = small_setup();
    let train = TrainConfig {
        max_epochs: 2,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let rep = run_group_ablation_experiment(&cfg, 1, &train, &inj.dataset, &inj.manifest).unwrap();
    assert_eq!(rep.runs.len(), 5);
    assert!(rep.identical_init && rep.identical_batch_order);
    assert!(rep.run(AblationMode::Middle).is_some());
    let o = rep.ordering;
    assert!(!(o.early_gt_middle_gt_later && o.early_lt_middle_lt_later));
    let two = ModelConfig {
        num_layers: 2,
        ..cfg
    };
    assert!(run_group_ablation_experiment(&two, 1, &train, &inj.dataset, &inj.manifest).is_err());
}
