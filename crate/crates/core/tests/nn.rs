mod common;

use common::*;
use molcom::demod::{build_network, CnnConfig};
use molcom::nn::*;
use molcom::testbed::stream;
use rand::Rng;

fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

#[test]
fn conv_identity_kernel() {
    let x = t(vec![1, 5, 1], vec![0.3, -1.0, 2.0, 0.0, 7.5]);
    let w = t(vec![1, 1, 1], vec![1.0]);
    let b = t(vec![1], vec![0.0]);
    let (y, cols) = conv1d_forward(&x, &w, &b).unwrap();
    assert_eq!(y, x);
    let g = t(vec![1, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let (gx, _, _) = conv1d_backward(&cols, x.shape(), &w, &g).unwrap();
    assert_eq!(gx, g);
}

#[test]
fn conv_zero_padding_edges() {
    let x = t(vec![1, 5, 1], vec![1.0; 5]);
    let w = t(vec![1, 1, 3], vec![1.0; 3]);
    let (y, _) = conv1d_forward(&x, &w, &t(vec![1], vec![0.0])).unwrap();
    assert_eq!(y.data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = stream(17, 0);
    let x = Tensor::from_fn(vec![2, 8, 2], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(vec![3, 2, 5], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::from_fn(vec![3], |_| rng.random_range(-1.0..1.0));
    let (y, _) = conv1d_forward(&x, &w, &b).unwrap();
    let reference = naive_conv(&x, &w, &b);
    for (a, r) in y.data().iter().zip(reference.data()) {
        assert!((a - r).abs() < 1e-12);
    }
    let xf = Tensor::new(vec![2, 8, 2], x.data().iter().map(|&v| v as f32).collect()).unwrap();
    let wf = Tensor::new(vec![3, 2, 5], w.data().iter().map(|&v| v as f32).collect()).unwrap();
    let bf = Tensor::new(vec![3], b.data().iter().map(|&v| v as f32).collect()).unwrap();
    let (yf, _) = conv1d_forward(&xf, &wf, &bf).unwrap();
    for (a, r) in yf.data().iter().zip(reference.data()) {
        assert!((*a as f64 - r).abs() < 1e-6);
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let x = t(vec![1, 4, 2], vec![0.0; 8]);
    let b = t(vec![1], vec![0.0]);
    assert!(conv1d_forward(&x, &t(vec![1, 1, 3], vec![0.0; 3]), &b).is_err());
    assert!(conv1d_forward(&x, &t(vec![1, 2, 2], vec![0.0; 4]), &b).is_err());
    assert!(conv1d_forward(&t(vec![4, 2], vec![0.0; 8]), &t(vec![1, 2, 3], vec![0.0; 6]), &b).is_err());
}

#[test]
fn maxpool_examples() {
    let (y, _) = maxpool1d_forward(&t(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    assert_eq!(y.data(), &[2.0, 4.0]);
    let (y, argmax) = maxpool1d_forward(&t(vec![1, 6, 1], vec![5.0; 6])).unwrap();
    assert_eq!(y.data(), &[5.0; 3]);
    assert_eq!(argmax, vec![0, 2, 4]);
    assert!(maxpool1d_forward(&t(vec![1, 3, 1], vec![0.0; 3])).is_err());
}

#[test]
fn maxpool_matches_pairwise_max_and_conserves_gradient() {
    let mut rng = stream(3, 0);
    let x: Tensor<f64> = Tensor::from_fn(vec![1, 128, 64], |_| rng.random_range(-1.0..1.0));
    let (y, argmax) = maxpool1d_forward(&x).unwrap();
    for p in 0..64 {
        for c in 0..64 {
            let a = x.data()[(2 * p) * 64 + c];
            let b = x.data()[(2 * p + 1) * 64 + c];
            assert_eq!(y.data()[p * 64 + c], a.max(b));
        }
    }
    // Integer-valued gradients keep the sums exact.
    let g = Tensor::from_fn(vec![1, 64, 64], |i| (i % 13) as f64 - 6.0);
    let gx = maxpool1d_backward(&argmax, x.shape(), &g).unwrap();
    assert_eq!(gx.data().iter().sum::<f64>(), g.data().iter().sum::<f64>());
}

#[test]
fn relu_and_its_subgradient() {
    let x = t(vec![1, 3], vec![-1.0, 0.0, 2.0]);
    assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    let g = relu_backward(&x, &t(vec![1, 3], vec![5.0, 5.0, 5.0])).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
}

#[test]
fn dropout_inference_is_identity_and_training_preserves_mean() {
    let x = t(vec![1, 100_000], vec![1.0; 100_000]);
    for p in [0.0, 0.5, 0.9] {
        let (y, mask) = dropout_forward::<f64, rand_chacha::ChaCha8Rng>(&x, p, None).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }
    let (y, _) = dropout_forward(&x, 0.5, Some(&mut stream(1, 0))).unwrap();
    let mean = y.data().iter().sum::<f64>() / y.len() as f64;
    // Each output is 0 or 2, so the standard error of the mean is 1/sqrt(n).
    let sigma = 1.0 / (y.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "{mean}");
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(dropout_forward(&x, 1.0, Some(&mut stream(1, 0))).is_err());
}

#[test]
fn flatten_is_position_major() {
    let x = t(vec![1, 2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let y = flatten_forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 6]);
    // Element (position 1, channel 2) lands at 1 * 3 + 2.
    assert_eq!(y.data()[5], 5.0);
}

#[test]
fn backward_without_cache_is_an_error() {
    let g = t(vec![1, 2], vec![0.0; 2]);
    assert!(matches!(
        Layer::<f64>::Relu.backward(None, &g),
        Err(molcom::Error::MissingCache(_))
    ));
}

#[test]
fn every_layer_matches_finite_differences() {
    for (kind, worst) in gradient_report(10) {
        assert!(worst < 1e-4, "{kind}: max relative error {worst:e}");
    }
}

#[test]
fn small_network_matches_finite_differences() {
    let specs = [
        LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 3,
            kernel_size: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_features: 12,
            out_features: 5,
        },
        LayerSpec::Dropout { p: 0.3 },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_features: 5,
            out_features: 4,
        },
    ];
    let mut rng = stream(8, 0);
    let mut net = Network::<f64>::zeros(&specs).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let x = Tensor::from_fn(vec![3, 8, 1], |_| rng.random_range(0.0..1.0));
    let worst = network_grad_error(&net, &x, &[0, 3, 1], 5);
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn reference_architecture_shapes() {
    let expected = [
        ("CONV", "128×1", "128×64", Some(7), Some(1), false),
        ("MAX", "128×64", "64×64", Some(2), Some(2), false),
        ("CONV", "64×64", "64×128", Some(5), Some(1), false),
        ("MAX", "64×128", "32×128", Some(2), Some(2), false),
        ("CONV", "32×128", "32×256", Some(3), Some(1), false),
        ("MAX", "32×256", "16×256", Some(2), Some(2), false),
        ("FC", "16×256", "1×4096", None, None, true),
        ("FC", "1×4096", "1×4096", None, None, true),
    ];
    for c in [6usize, 8] {
        let specs = CnnConfig::new(c, 4096).layer_specs().unwrap();
        let net = Network::<f32>::zeros(&specs).unwrap();
        let rows = net.architecture(&[128, 1]).unwrap();
        assert_eq!(rows.len(), 9);
        for (row, &(kind, input, output, kernel, stride, dropout)) in rows.iter().zip(&expected) {
            assert_eq!(
                (row.kind, row.input.as_str(), row.output.as_str()),
                (kind, input, output)
            );
            assert_eq!((row.kernel, row.stride, row.dropout), (kernel, stride, dropout));
        }
        let last = &rows[8];
        assert_eq!(
            (last.kind, last.input.as_str(), last.output.clone(), last.dropout),
            ("FC", "1×4096", format!("1×{c}"), false)
        );
        assert_eq!(net.param_count(), reference_param_count(4096, c));
    }
    // Term-by-term: 64*7+64 + 128*64*5+128 + 256*128*3+256
    // + 2 * (4096*4096+4096) + 8*4096+8.
    assert_eq!(reference_param_count(4096, 8), 33_735_560);
}

#[test]
fn zero_input_gives_finite_class_scores() {
    let net: Network<f32> = build_network(&CnnConfig::new(8, 256), &mut stream(1, 0)).unwrap();
    let y = net.infer(&Tensor::zeros(vec![1, 128, 1])).unwrap();
    assert_eq!(y.shape(), &[1, 8]);
    assert!(y.all_finite());
    let net6: Network<f32> = build_network(&CnnConfig::new(6, 64), &mut stream(1, 0)).unwrap();
    let mut rng = stream(2, 0);
    let x = Tensor::from_fn(vec![4, 128, 1], |_| rng.random_range(0.0..1.0f32));
    let y = net6.infer(&x).unwrap();
    assert_eq!(y.shape(), &[4, 6]);
    assert!(y.all_finite());
}

#[test]
fn weights_roundtrip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let net: Network<f32> = build_network(&CnnConfig::new(6, 32), &mut stream(9, 0)).unwrap();
    net.save(dir.path()).unwrap();
    let back = Network::<f32>::load(dir.path()).unwrap();
    assert_eq!(back, net);
    let mut rng = stream(4, 0);
    let x = Tensor::from_fn(vec![3, 128, 1], |_| rng.random_range(0.0..1.0f32));
    let a = net.infer(&x).unwrap();
    let b = back.infer(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["dtype"], "f32");
    assert_eq!(
        manifest["total_bytes"].as_u64().unwrap() as usize,
        std::fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len() as usize
    );
}

#[test]
fn corrupt_weight_files_are_rejected() {
    let net: Network<f32> = build_network(&CnnConfig::new(2, 8), &mut stream(9, 0)).unwrap();
    let (manifest, blob) = net.to_bytes().unwrap();
    assert!(Network::<f32>::from_bytes(manifest.as_bytes(), &blob[1..]).is_err());
    assert!(Network::<f64>::from_bytes(manifest.as_bytes(), &blob).is_err());
    let wrong_shape = manifest.replacen("256", "255", 1);
    assert!(Network::<f32>::from_bytes(wrong_shape.as_bytes(), &blob).is_err());
    assert!(Network::<f32>::from_bytes(b"{}", &blob).is_err());
    let huge = manifest.replacen("\"in_features\": 4096", "\"in_features\": 18446744073709551615", 1);
    assert!(Network::<f32>::from_bytes(huge.as_bytes(), &blob).is_err());
}
