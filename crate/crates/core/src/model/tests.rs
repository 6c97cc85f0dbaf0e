use super::*;
use crate::tensor::relative_error;
use rand::Rng;

fn random_input<S: Scalar>(c: usize, t: usize, seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c * t).map(|_| S::of_f64(rng.random_range(-1.0..1.0))).collect();
    Tensor::from_vec(&[c, t], data).unwrap()
}

#[test]
fn seeded_init_is_deterministic() {
    let a = build_model(ModelConfig::new(36, 10, 128, 7)).unwrap();
    let b = build_model(ModelConfig::new(36, 10, 128, 7)).unwrap();
    let c = build_model(ModelConfig::new(36, 10, 128, 8)).unwrap();
    for ((na, ta), (nb, tb)) in a.parameters().iter().zip(b.parameters()) {
        assert_eq!(na, &nb);
        let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "{na}");
    }
    assert_ne!(a.conv1.weight.data(), c.conv1.weight.data());
}

#[test]
fn biases_start_at_zero_and_weights_within_bound() {
    let m = build_model(ModelConfig::new(36, 10, 128, 1)).unwrap();
    for (name, t) in m.parameters() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        } else {
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = if name == "fc.weight" { (1.0 / fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
            assert!(t.data().iter().all(|&v| (v as f64).abs() <= bound), "{name}");
            assert!(t.data().iter().any(|&v| v != 0.0), "{name}");
        }
    }
}

#[test]
fn inception_widths() {
    assert_eq!(InceptionWidths::INCEPTION_3A.output(), 256);
    assert_eq!(InceptionWidths::INCEPTION_3B.output(), 480);

    let mut block = InceptionBlock::<f64>::zeros(InceptionWidths::INCEPTION_3A);
    let out = block.forward(&Tensor::zeros(&[64, 32])).unwrap();
    assert_eq!(out.shape(), &[256, 32]);
    assert!(out.data().iter().all(|&v| v == 0.0));

    // Nonzero weights with zero input and zero biases still give zeros.
    for layer in block.layers_mut() {
        layer.weight.data_mut().iter_mut().for_each(|v| *v = 0.3);
    }
    let out = block.forward(&Tensor::zeros(&[64, 32])).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));

    let block = InceptionBlock::<f64>::zeros(InceptionWidths::INCEPTION_3B);
    assert_eq!(block.forward(&Tensor::zeros(&[256, 32])).unwrap().shape(), &[480, 32]);
    assert!(block.forward(&Tensor::zeros(&[64, 32])).is_err());
}

#[test]
fn conv1_matches_input_channels() {
    let m = build_model(ModelConfig::new(256, 10, 512, 0)).unwrap();
    assert_eq!(m.conv1.weight.shape(), &[64, 256, 7]);
    let m = build_model(ModelConfig::new(36, 10, 128, 0)).unwrap();
    assert_eq!(m.conv1.weight.shape(), &[64, 36, 7]);
}

#[test]
fn stage_lengths_follow_the_floor_chain() {
    let cases: [(usize, [usize; 8]); 3] = [
        (64, [64, 32, 16, 16, 16, 8, 8, 1]),
        (128, [128, 64, 32, 32, 32, 16, 16, 1]),
        (512, [512, 256, 128, 128, 128, 64, 64, 1]),
    ];
    for (t, expected) in cases {
        assert_eq!(ModelConfig::new(36, 10, t, 0).stage_lengths().unwrap(), expected.to_vec());
    }
}

#[test]
fn too_short_input_is_a_config_error() {
    assert!(matches!(build_model(ModelConfig::new(36, 10, 4, 0)), Err(ModelError::Config(_))));
    assert!(matches!(build_model(ModelConfig::new(0, 10, 128, 0)), Err(ModelError::Config(_))));
    assert!(build_model(ModelConfig::new(36, 10, MIN_INPUT_LENGTH, 0)).is_ok());
}

#[test]
fn param_count_matches_tally() {
    assert_eq!(build_model(ModelConfig::new(36, 10, 128, 0)).unwrap().param_count(), 280_570);
    assert_eq!(build_model(ModelConfig::new(256, 10, 512, 0)).unwrap().param_count(), 379_130);
    // Input length does not change the parameter count.
    assert_eq!(build_model(ModelConfig::new(36, 10, 64, 0)).unwrap().param_count(), 280_570);
}

#[test]
fn parameter_names_are_unique_and_ordered() {
    let m = build_model(ModelConfig::new(36, 10, 64, 0)).unwrap();
    let names: Vec<String> = m.parameters().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 30);
    assert_eq!(names[0], "conv1.weight");
    assert_eq!(names[2], "inception3a.branch1.weight");
    assert_eq!(names[names.len() - 1], "fc.bias");
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}

#[test]
fn forward_shapes_and_batch_equivariance() {
    let m = build_model(ModelConfig::new(36, 10, 64, 3)).unwrap();
    let a = random_input::<f32>(36, 64, 1);
    let b = random_input::<f32>(36, 64, 2);
    let single = m.forward(&Tensor::stack(&[a.clone()]).unwrap()).unwrap();
    assert_eq!(single.shape(), &[1, 10]);
    assert!(single.all_finite());

    let dup = m.forward(&Tensor::stack(&[a.clone(), b.clone(), a.clone()]).unwrap()).unwrap();
    assert_eq!(&dup.data()[..10], &dup.data()[20..]);
    assert_eq!(&dup.data()[..10], single.data());

    let swapped = m.forward(&Tensor::stack(&[b, a]).unwrap()).unwrap();
    assert_eq!(&swapped.data()[..10], &dup.data()[10..20]);
    assert_eq!(&swapped.data()[10..], &dup.data()[..10]);
}

#[test]
fn forward_rejects_wrong_shapes() {
    let m = build_model(ModelConfig::new(36, 10, 64, 3)).unwrap();
    assert!(m.forward_sample(&random_input(256, 64, 0)).is_err());
    assert!(m.forward_sample(&random_input(36, 65, 0)).is_err());
    assert!(m.forward(&random_input(36, 64, 0)).is_err());
}

#[test]
fn zero_model_gives_zero_logits() {
    let m = Model::<f64>::zeros(ModelConfig::new(36, 10, 64, 0)).unwrap();
    let logits = m.forward_sample(&random_input(36, 64, 5)).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let config = ModelConfig::new(36, 10, 64, 11);
    let model = Model::<f64>::new(config).unwrap();
    let x = random_input::<f64>(36, 64, 12);
    let label = 3;
    let (_, grads) = model.loss_and_grad(&x, label).unwrap();
    let sizes: Vec<usize> = model.parameters().iter().map(|(_, t)| t.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let eps = 1e-3;
    for _ in 0..10 {
        let p = rng.random_range(0..sizes.len());
        let i = rng.random_range(0..sizes[p]);
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            m.parameters_mut()[p].1.data_mut()[i] += delta;
            m.loss_and_grad(&x, label).unwrap().0
        };
        let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
        let err = relative_error(grads[p][i], numeric);
        assert!(err < 1e-2, "param {p}[{i}]: analytic {} numeric {numeric} err {err}", grads[p][i]);
    }
}

#[test]
fn gradient_lengths_match_parameters() {
    let m = build_model(ModelConfig::new(36, 10, 64, 0)).unwrap();
    let (loss, grads) = m.loss_and_grad(&random_input(36, 64, 1), 9).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    let params = m.parameters();
    assert_eq!(grads.len(), params.len());
    for (g, (name, t)) in grads.iter().zip(params) {
        assert_eq!(g.len(), t.len(), "{name}");
        assert!(g.iter().all(|v| v.is_finite()), "{name}");
    }
    assert!(m.loss_and_grad(&random_input(36, 64, 1), 10).is_err());
}

mod file_format {
    use super::*;
    use crate::dataio::{standardize_fit, Modality, SampleMeta, TimeSeriesSample};
    use crate::dataio::GestureLabel;

    fn model() -> Model<f32> {
        build_model(ModelConfig::new(36, 10, 64, 21)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = model();
        save_model(&m, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, m);
        let batch = Tensor::stack(&[random_input(36, 64, 4), random_input(36, 64, 5)]).unwrap();
        let a: Vec<u32> = m.forward(&batch).unwrap().data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = loaded.forward(&batch).unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(&std::fs::read(&path).unwrap()[..8], MAGIC);
    }

    #[test]
    fn stats_survive_round_trip() {
        let meta = SampleMeta {
            path: "x.csv".into(),
            label: GestureLabel::E,
            person: "p".into(),
            environment: "home".into(),
            orientation_deg: 0,
            modality: Modality::BeamSnr,
            session: "s".into(),
        };
        let sample = TimeSeriesSample::new(random_input(36, 10, 3), meta).unwrap();
        let stats = standardize_fit(&[sample]).unwrap();
        let saved = SavedModel { model: model(), input_stats: Some(stats) };
        let bytes = io::encode(&saved.model, saved.input_stats.as_ref()).unwrap();
        assert_eq!(io::decode(&bytes).unwrap(), saved);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = io::encode(&model(), None).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(io::decode(&bad), Err(ModelError::BadMagic)));

        assert!(matches!(io::decode(&bytes[..bytes.len() - 3]), Err(ModelError::Truncated(_))));
        assert!(matches!(io::decode(&bytes[..20]), Err(ModelError::Truncated(_))));
        assert!(matches!(io::decode(&bytes[..4]), Err(ModelError::Truncated(_))));

        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x01;
        assert!(matches!(io::decode(&bad), Err(ModelError::ChecksumMismatch { .. })));

        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        let bumped = header.replace("\"format_version\":1", "\"format_version\":9");
        assert_eq!(bumped.len(), header.len());
        let mut bad = bytes.clone();
        bad[12..12 + header_len].copy_from_slice(bumped.as_bytes());
        assert!(matches!(io::decode(&bad), Err(ModelError::VersionMismatch { found: 9, expected: 1 })));
    }

    #[test]
    fn channel_mismatch_surfaces_at_forward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&model(), &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let err = loaded.forward_sample(&random_input(256, 64, 0)).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
    }
}
