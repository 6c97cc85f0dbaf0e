use super::*;
use crate::model::Model;
use crate::synth::{generate, preset};

fn tiny_config(modality: Modality, seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, input_length: 32, ..TrainConfig::new(modality, seed) }
}

fn synthetic(preset_name: &str, instances: usize) -> Vec<TimeSeriesSample> {
    let mut config = preset(preset_name).unwrap();
    config.instances_per_label = instances;
    config.modalities = vec![Modality::BeamSnr];
    generate(&config).unwrap()
}

#[test]
fn default_hyperparameters() {
    let beam = TrainConfig::new(Modality::BeamSnr, 0);
    assert_eq!((beam.epochs, beam.batch_size, beam.input_length), (150, 16, 128));
    assert_eq!(beam.adam.lr, 3e-4);
    assert_eq!(beam.plateau.patience, 25);
    let csi = TrainConfig::new(Modality::Csi, 0);
    assert_eq!((csi.batch_size, csi.input_length), (64, 512));
}

#[test]
fn invalid_configs_are_rejected() {
    let samples = synthetic("single-env", 1);
    let bad = [
        TrainConfig { epochs: 0, ..tiny_config(Modality::BeamSnr, 0) },
        TrainConfig { batch_size: 0, ..tiny_config(Modality::BeamSnr, 0) },
        TrainConfig { input_length: 4, ..tiny_config(Modality::BeamSnr, 0) },
        TrainConfig { split_ratio: 1.0, ..tiny_config(Modality::BeamSnr, 0) },
    ];
    for config in bad {
        assert!(matches!(train(&samples, &config), Err(ExperimentError::Config(_) | ExperimentError::Model(_))));
    }
    assert!(matches!(train(&[], &tiny_config(Modality::BeamSnr, 0)), Err(ExperimentError::Insufficient(_))));
    assert!(matches!(train(&samples, &tiny_config(Modality::Csi, 0)), Err(ExperimentError::Config(_))));
}

#[test]
fn confusion_matrix_arithmetic() {
    let mut cm = ConfusionMatrix::new();
    for l in GestureLabel::ALL {
        cm.record(l, l);
    }
    assert_eq!(cm.total(), 10);
    assert_eq!(cm.accuracy(), Some(1.0));
    assert_eq!(cm.to_csv().lines().count(), 10);
    let trace: u64 = cm.to_csv().lines().enumerate().map(|(i, line)| line.split(',').nth(i).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(trace, 10);

    let mut cm = ConfusionMatrix::new();
    cm.record(GestureLabel::RS, GestureLabel::LS);
    cm.record(GestureLabel::RS, GestureLabel::RS);
    cm.record(GestureLabel::E, GestureLabel::E);
    assert_eq!(cm.row_total(GestureLabel::RS), 2);
    assert_eq!(cm.class_accuracy(GestureLabel::RS), Some(0.5));
    assert_eq!(cm.class_accuracy(GestureLabel::AU), None);
    assert_eq!(cm.accuracy(), Some(2.0 / 3.0));
    assert_eq!(ConfusionMatrix::new().accuracy(), None);

    let (mirror, other) = mirror_confusion(&cm);
    assert_eq!((mirror, other), (0.5, 0.0));
}

#[test]
fn constant_model_scores_one_tenth() {
    let samples = synthetic("single-env", 3);
    let model = Model::<f32>::zeros(ModelConfig::new(36, 10, 32, 0)).unwrap();
    let stats = standardize_fit(&samples).unwrap();
    let saved = SavedModel { model, input_stats: Some(stats) };
    let cm = evaluate(&saved, &samples).unwrap();
    assert_eq!(cm.total(), 30);
    assert_eq!(cm.accuracy(), Some(0.1));
    assert!(GestureLabel::ALL.iter().all(|&l| cm.count(l, GestureLabel::E) == 3));
}

#[test]
fn evaluate_rejects_other_modalities() {
    let mut config = preset("single-env").unwrap();
    config.instances_per_label = 1;
    config.modalities = vec![Modality::Csi];
    let csi = generate(&config).unwrap();
    let model = Model::<f32>::zeros(ModelConfig::new(36, 10, 32, 0)).unwrap();
    let stats = standardize_fit(&synthetic("single-env", 1)).unwrap();
    let saved = SavedModel { model, input_stats: Some(stats) };
    assert!(matches!(evaluate(&saved, &csi), Err(ExperimentError::Tensor(_))));
    let bare = SavedModel { input_stats: None, ..saved };
    assert!(evaluate(&bare, &synthetic("single-env", 1)).is_err());
}

#[test]
fn training_is_deterministic_and_records_history() {
    let samples = synthetic("single-env", 2);
    let config = TrainConfig { epochs: 3, batch_size: 6, ..tiny_config(Modality::BeamSnr, 4) };
    let a = train(&samples, &config).unwrap();
    let b = train(&samples, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.loss_history.len(), 3);
    assert!(a.loss_history.iter().all(|l| l.is_finite()));
    assert_eq!(a.lr_history, vec![3e-4; 3]);
    let c = train(&samples, &TrainConfig { seed: 5, ..config }).unwrap();
    assert_ne!(a.loss_history, c.loss_history);
}

#[test]
fn single_env_split_is_disjoint() {
    let samples = synthetic("two-env", 4);
    let report = run_single_env(&samples, Some("office"), None, &tiny_config(Modality::BeamSnr, 1)).unwrap();
    assert_eq!((report.train_ids.len(), report.test_ids.len()), (30, 10));
    assert!(report.train_ids.iter().chain(&report.test_ids).all(|id| id.contains("/office/")));
    assert!(report.test_ids.iter().all(|id| !report.train_ids.contains(id)));
    assert_eq!(report.confusion.total(), 10);
}

#[test]
fn single_env_needs_every_class() {
    let samples: Vec<TimeSeriesSample> =
        synthetic("single-env", 2).into_iter().filter(|s| s.meta.label != GestureLabel::AW).collect();
    match run_single_env(&samples, None, None, &tiny_config(Modality::BeamSnr, 1)) {
        Err(ExperimentError::MissingClasses { present }) => {
            assert_eq!(present.len(), 9);
            assert!(!present.contains(&GestureLabel::AW));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        run_single_env(&samples, Some("lab"), None, &tiny_config(Modality::BeamSnr, 1)),
        Err(ExperimentError::Insufficient(_))
    ));
}

#[test]
fn cross_domain_uses_whole_environments() {
    let samples = synthetic("two-env", 2);
    let config = tiny_config(Modality::BeamSnr, 2);
    let report = run_cross_domain(&samples, "home", "office", &config).unwrap();
    assert_eq!((report.train_ids.len(), report.test_ids.len()), (20, 20));
    assert!(report.train_ids.iter().all(|id| id.contains("/home/")));
    assert!(report.test_ids.iter().all(|id| id.contains("/office/")));
    assert!(matches!(run_cross_domain(&samples, "home", "home", &config), Err(ExperimentError::Config(_))));
    assert!(matches!(run_cross_domain(&samples, "home", "lab", &config), Err(ExperimentError::Insufficient(_))));
}

#[test]
fn adaptation_moves_k_per_gesture_into_training() {
    let samples = synthetic("two-env", 3);
    let config = tiny_config(Modality::BeamSnr, 3);
    let report = run_adaptation(&samples, "home", "office", 2, &config).unwrap();
    assert_eq!((report.train_ids.len(), report.test_ids.len()), (50, 10));
    let adapted: Vec<&String> = report.train_ids.iter().filter(|id| id.contains("/office/")).collect();
    assert_eq!(adapted.len(), 20);
    for l in GestureLabel::ALL {
        let prefix = format!("/office/beamsnr/{l}_");
        assert_eq!(adapted.iter().filter(|id| id.contains(&prefix)).count(), 2);
    }
    assert!(report.test_ids.iter().all(|id| !report.train_ids.contains(id)));
    assert!(matches!(run_adaptation(&samples, "home", "office", 4, &config), Err(ExperimentError::Insufficient(_))));
}

#[test]
fn adaptation_without_target_samples_is_cross_domain() {
    let samples = synthetic("two-env", 2);
    let config = tiny_config(Modality::BeamSnr, 6);
    let xenv = run_cross_domain(&samples, "home", "office", &config).unwrap();
    let adapt = run_adaptation(&samples, "home", "office", 0, &config).unwrap();
    assert_eq!(xenv.train_ids, adapt.train_ids);
    assert_eq!(xenv.test_ids, adapt.test_ids);
    assert_eq!(xenv.confusion, adapt.confusion);
    assert_eq!(xenv.loss_history, adapt.loss_history);
    assert_eq!(xenv.model, adapt.model);
}

#[test]
fn orientation_protocols() {
    let samples = synthetic("two-orientation", 2);
    let config = tiny_config(Modality::BeamSnr, 1);
    let deg = OrientationSel::Degrees;
    let cross = run_orientation(&samples, deg(0), deg(90), None, &config).unwrap();
    assert_eq!((cross.train_ids.len(), cross.test_ids.len()), (20, 20));
    assert!(cross.test_ids.iter().all(|id| id.contains("_o90_")));

    let both = run_orientation(&samples, OrientationSel::Both, OrientationSel::Both, None, &config).unwrap();
    assert_eq!((both.train_ids.len(), both.test_ids.len()), (30, 10));

    assert!(matches!(
        run_orientation(&samples, OrientationSel::Both, deg(90), None, &config),
        Err(ExperimentError::Config(_))
    ));
    assert!(matches!(run_orientation(&samples, deg(0), deg(45), None, &config), Err(ExperimentError::Insufficient(_))));
    assert_eq!("both".parse::<OrientationSel>(), Ok(OrientationSel::Both));
    assert_eq!("90".parse::<OrientationSel>(), Ok(deg(90)));
    assert!("sideways".parse::<OrientationSel>().is_err());
}

#[test]
fn report_files_are_reproducible() {
    let samples = synthetic("single-env", 4);
    let config = tiny_config(Modality::BeamSnr, 8);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = run_single_env(&samples, None, None, &config).unwrap();
    report_write(&report, a.path()).unwrap();
    report_write(&run_single_env(&samples, None, None, &config).unwrap(), b.path()).unwrap();
    for name in ["report.txt", "confusion.csv", "loss.csv", "model.bin", "config.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let loaded = crate::model::load_saved(&a.path().join("model.bin")).unwrap();
    assert_eq!(loaded, report.model);
    let echoed: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["seed"], 8);
    assert_eq!(echoed["protocol"], "single-env");
    let loss = std::fs::read_to_string(a.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
}

#[test]
fn summary_marks_absent_classes() {
    let samples = synthetic("single-env", 4);
    let mut report = run_single_env(&samples, None, None, &tiny_config(Modality::BeamSnr, 8)).unwrap();
    let mut cm = ConfusionMatrix::new();
    for l in GestureLabel::ALL.iter().take(9) {
        cm.record(*l, *l);
    }
    report.confusion = cm;
    let text = report.summary();
    assert!(text.contains("HRR  n/a (0/0)"));
    assert!(text.contains("overall accuracy: 1.0000 (9/9)"));
}
