mod common;

use common::*;
use lnlab_core::model::{layer_norm_forward, LayerNormParams};
use lnlab_core::numerics::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn normalized_statistics_on_random_vectors() {
    let mut r = test_rng("ln-contract");
    let p = |d| LayerNormParams::disabled(d, 1e-5);
    let mut checked = 0;
    while checked < 1000 {
        let d = r.random_range(2..64);
        let scale = 10f64.powf(r.random_range(-1.0..2.0));
        let x = normal_tensor(&mut r, &[d], scale);
        let m = x.data().iter().sum::<f64>() / d as f64;
        let var = x.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        // Output variance is var / (var + ε).
        if var < 1.0 {
            continue;
        }
        let y = layer_norm_forward(&x, &p(d)).unwrap();
        let mean = y.data().iter().sum::<f64>() / d as f64;
        let v = y.data().iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((v - 1.0).abs() < 1e-4, "variance {v} at input variance {var}");
        checked += 1;
    }
}

#[test]
fn constant_input_maps_to_bias() {
    let b = vec![0.5, -1.0, 2.0];
    let p = LayerNormParams {
        weight: Tensor::vector(vec![3.0, -2.0, 7.0]),
        bias: Tensor::vector(b.clone()),
        affine_enabled: true,
        epsilon: 1e-5,
    };
    for c in [0.0, 5.0, -1e3] {
        let y = layer_norm_forward(&Tensor::vector(vec![c; 3]), &p).unwrap();
        assert_eq!(y.data(), &b[..]);
    }
}

#[test]
fn worked_examples() {
    let id = |d| LayerNormParams::identity(d, 1e-5);
    let y = layer_norm_forward(&Tensor::vector(vec![-1.0, 1.0]), &id(2)).unwrap();
    assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
    let y = layer_norm_forward(&Tensor::vector(vec![5.0, 5.0]), &id(2)).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0]);
}

#[test]
fn rows_are_independent() {
    let p = LayerNormParams::disabled(3, 1e-5);
    let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![10.0, 0.0, -4.0]]).unwrap();
    let y = layer_norm_forward(&x, &p).unwrap();
    let r0 = layer_norm_forward(&Tensor::vector(vec![1.0, 2.0, 3.0]), &p).unwrap();
    assert_eq!(y.row(0), r0.data());
}

proptest! {
    #[test]
    fn shift_and_scale_invariance(
        xs in prop::collection::vec(-50.0f64..50.0, 2..24),
        shift in -100.0f64..100.0,
        scale in 0.5f64..20.0,
    ) {
        let d = xs.len();
        let m = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        prop_assume!(var > 1e-2);
        let p = LayerNormParams::disabled(d, 0.0);
        let y = layer_norm_forward(&Tensor::vector(xs.clone()), &p).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| x * scale + shift).collect();
        let z = layer_norm_forward(&Tensor::vector(moved), &p).unwrap();
        prop_assert!(y.max_abs_diff(&z) < 1e-8);
    }

    #[test]
    fn affine_is_applied_after_normalization(
        xs in prop::collection::vec(-5.0f64..5.0, 4),
        w in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let plain = layer_norm_forward(&Tensor::vector(xs.clone()), &LayerNormParams::disabled(4, 1e-5)).unwrap();
        let p = LayerNormParams {
            weight: Tensor::vector(w.clone()),
            bias: Tensor::vector(b.clone()),
            affine_enabled: true,
            epsilon: 1e-5,
        };
        let y = layer_norm_forward(&Tensor::vector(xs), &p).unwrap();
        for j in 0..4 {
            prop_assert!((y.data()[j] - (w[j] * plain.data()[j] + b[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_rows_map_to_bias_exactly(
        c in -1e6f64..1e6,
        wb in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..64),
    ) {
        let d = wb.len();
        let (w, b): (Vec<f64>, Vec<f64>) = wb.into_iter().unzip();
        let p = LayerNormParams {
            weight: Tensor::vector(w.clone()),
            bias: Tensor::vector(b.clone()),
            affine_enabled: true,
            epsilon: 1e-5,
        };
        let x = Tensor::vector(vec![c; d]);
        let y = layer_norm_forward(&x, &p).unwrap();
        prop_assert_eq!(y.data(), &b[..]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(Tensor::vector(w)), g.constant(Tensor::vector(b.clone())));
        let y = g.layer_norm(xv, Some((wv, bv)), 1e-5).unwrap();
        prop_assert_eq!(g.value(y).data(), &b[..]);
    }
}
