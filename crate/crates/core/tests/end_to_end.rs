use emofuse::evaluation::{confusion_matrix, evaluate, macro_f1};
use emofuse::fusion::{build_fusion_vectors, svm_predict, train_svm, SvmConfig};
use emofuse::losses::{JeffreysParams, LossKind};
use emofuse::pooling::PoolingKind;
use emofuse::synth::{complementary_subsystems, generate, SyntheticSpec};
use emofuse::trainer::{predict, train, TrainConfig};
use emofuse::EmotionLabel;

fn separable_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        per_class_count: 200,
        dev_per_class_count: 20,
        feature_dim: 16,
        streams: 1,
        separation: 3.0,
        seed,
        ..SyntheticSpec::default()
    }
}

fn labels(samples: &[emofuse::SampleRecord]) -> Vec<EmotionLabel> {
    samples.iter().map(|s| s.label.unwrap()).collect()
}

#[test]
fn separable_clusters_are_learned() {
    let data = generate(&separable_spec(42)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (model, history) = train(&data.train, &data.train, &cfg).unwrap();
    let preds: Vec<_> = predict(&model, &data.train)
        .unwrap()
        .iter()
        .map(|(_, p)| p.argmax())
        .collect();
    let f1 = macro_f1(&confusion_matrix(&labels(&data.train), &preds).unwrap());
    eprintln!(
        "train macro-F1 {f1} after {} epochs in {:?}",
        history.len(),
        start.elapsed()
    );
    assert!(f1 >= 0.99);
    for w in history.windows(2) {
        assert!(w[1].lr_head <= w[0].lr_head);
    }
}

#[test]
fn jeffreys_and_attention_presets_train() {
    let spec = SyntheticSpec {
        per_class_count: 40,
        streams: 2,
        separation: 1.0,
        ..separable_spec(3)
    };
    let data = generate(&spec).unwrap();
    for (loss, pooling) in [
        (LossKind::Jeffreys(JeffreysParams::default()), PoolingKind::Mean),
        (LossKind::Nll, PoolingKind::Attention),
    ] {
        let cfg = TrainConfig {
            loss,
            pooling,
            max_epochs: 15,
            learning_rate_head: 1e-2,
            learning_rate_pooling: 1e-3,
            ..TrainConfig::default()
        };
        let (model, history) = train(&data.train, &data.dev, &cfg).unwrap();
        let best = history.iter().map(|h| h.dev_macro_f1).fold(0.0, f64::max);
        let preds: Vec<_> = predict(&model, &data.dev)
            .unwrap()
            .iter()
            .map(|(_, p)| p.argmax())
            .collect();
        let f1 = macro_f1(&confusion_matrix(&labels(&data.dev), &preds).unwrap());
        assert_eq!(f1, best, "returned model is the best dev epoch");
        assert!(f1 > 0.5, "{loss:?} {pooling:?}: {f1}");
    }
}

#[test]
fn chance_level_without_separation() {
    for seed in 0..5 {
        let spec = SyntheticSpec {
            separation: 0.0,
            per_class_count: 100,
            dev_per_class_count: 100,
            ..separable_spec(seed)
        };
        let data = generate(&spec).unwrap();
        let (model, _) = train(&data.train, &[], &TrainConfig::default()).unwrap();
        let preds: Vec<_> = predict(&model, &data.dev)
            .unwrap()
            .iter()
            .map(|(_, p)| p.argmax())
            .collect();
        let f1 = macro_f1(&confusion_matrix(&labels(&data.dev), &preds).unwrap());
        eprintln!("seed {seed}: held-out macro-F1 {f1}");
        assert!((f1 - 0.125).abs() <= 0.05);
    }
}

#[test]
fn fusion_beats_every_subsystem() {
    let (train_truth, train_out) = complementary_subsystems(200, 0.4, 0.03, 1);
    let (test_truth, test_out) = complementary_subsystems(200, 0.4, 0.03, 2);
    let refs: Vec<EmotionLabel> = test_truth.iter().map(|(_, l)| *l).collect();
    let best_single = test_out
        .iter()
        .map(|o| {
            let preds: Vec<_> = o.posteriors.iter().map(|(_, p)| p.argmax()).collect();
            evaluate(&refs, &preds).unwrap().0.macro_f1
        })
        .fold(0.0, f64::max);
    let start = std::time::Instant::now();
    let model = train_svm(
        &build_fusion_vectors(&train_out).unwrap(),
        &train_truth.iter().map(|(_, l)| *l).collect::<Vec<_>>(),
        &SvmConfig::default(),
    )
    .unwrap();
    let test_vectors = build_fusion_vectors(&test_out).unwrap();
    // fusion vectors are sorted by id; ids were generated in sorted order
    assert!(test_vectors
        .iter()
        .zip(&test_truth)
        .all(|(v, (id, _))| &v.sample_id == id));
    let fused: Vec<_> = svm_predict(&model, &test_vectors)
        .unwrap()
        .iter()
        .map(|p| p.label)
        .collect();
    let fused_f1 = evaluate(&refs, &fused).unwrap().0.macro_f1;
    eprintln!("best single {best_single}, fused {fused_f1}, svm {:?}", start.elapsed());
    assert!(fused_f1 >= best_single + 0.05);
}
