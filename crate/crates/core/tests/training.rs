use curvete::curriculum::build_schedule;
use curvete::data::{synth_dataset, ImageSample, SynthSpec};
use curvete::decomposition::{class_decompose, map_to_parent, sample_decompose, GranularityLadder, KMeansParams};
use curvete::nn::{LayerSpec, NetworkModel, OptimizerConfig, Tensor};
use curvete::training::*;
use proptest::prelude::*;

struct Fixture {
    samples: Vec<ImageSample>,
    labels: Vec<usize>,
    data: TrainData,
    ladder: GranularityLadder,
}

fn fixture(k_max: usize) -> Fixture {
    let spec = SynthSpec {
        classes: 3,
        samples_per_class: 12,
        image_size: 12,
        noise_sigma: 10.0,
        intra_class_modes: 2,
    };
    let samples = synth_dataset(&spec, 4).unwrap();
    let labels: Vec<usize> = samples.iter().map(|s| s.label.unwrap()).collect();
    let refs: Vec<&ImageSample> = samples.iter().collect();
    let data = TrainData::new(&refs).unwrap();
    // Raw pixels stand in for autoencoder features here.
    let features = curvete::cae::FeatureMatrix::new(
        data.ids.clone(),
        144,
        samples.iter().flat_map(|s| s.to_unit_f32()).collect(),
    )
    .unwrap();
    let ladder = class_decompose(&features, &labels, k_max, 7, &KMeansParams::default()).unwrap();
    Fixture {
        samples,
        labels,
        data,
        ladder,
    }
}

fn backbone() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(3, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { out_dim: 8 },
        LayerSpec::Relu,
    ]
}

fn config(optimizer: OptimizerConfig) -> TrainConfig {
    TrainConfig {
        optimizer,
        epochs_per_level: 2,
        batch_size: 8,
        seed: 11,
    }
}

fn param_bits(m: &NetworkModel) -> Vec<u32> {
    m.named_params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

fn resume_matches_uninterrupted(optimizer: OptimizerConfig) {
    let f = fixture(3);
    let cfg = config(optimizer);
    let walk = Walk::from_schedule(&build_schedule(3, 2, 2).unwrap());
    let runner = CurriculumRunner {
        phase: Phase::Downstream,
        ladder: &f.ladder,
        walk: walk.clone(),
        data: &f.data,
        val: None,
        config: &cfg,
    };
    let init = random_model(&[1, 12, 12], &backbone(), 5).unwrap();
    let mut full = runner.start(init.clone()).unwrap();
    assert!(runner.run(&mut full, None, &mut |_| Ok(())).unwrap());
    let total = full.history.len();
    assert_eq!(total, 2 * 5 * 2);

    for cut in [1, 3, 4, 9, total - 1] {
        let mut first = runner.start(init.clone()).unwrap();
        assert!(!runner.run(&mut first, Some(cut), &mut |_| Ok(())).unwrap());
        let bytes = first.to_checkpoint([7; 32], &walk, cfg.seed).encode();
        let restored = Checkpoint::decode(&bytes).unwrap();
        let mut second = RunState::from_checkpoint(&restored, &[1, 12, 12], &backbone(), &cfg.optimizer).unwrap();
        assert!(runner.run(&mut second, None, &mut |_| Ok(())).unwrap());
        assert_eq!(param_bits(&second.model), param_bits(&full.model), "cut at {cut}");
        let mut history = first.history.clone();
        history.extend(second.history);
        assert_eq!(history, full.history, "cut at {cut}");
    }
}

#[test]
fn resume_is_bit_exact_with_momentum() {
    resume_matches_uninterrupted(OptimizerConfig {
        momentum: 0.9,
        ..OptimizerConfig::msgd(0.05)
    });
}

#[test]
fn resume_is_bit_exact_with_adam() {
    resume_matches_uninterrupted(OptimizerConfig::adam(0.01));
}

#[test]
fn degenerate_curriculum_is_plain_fine_tuning() {
    let f = fixture(2);
    let cfg = config(OptimizerConfig::msgd(0.05));
    let original = original_ladder(f.data.ids.clone(), f.labels.clone()).unwrap();
    let schedule = build_schedule(1, 1, 6).unwrap();
    let (a, level_a, ha) = run_downstream(
        &original,
        &Walk::from_schedule(&schedule),
        random_model(&[1, 12, 12], &backbone(), 3).unwrap(),
        &f.data,
        None,
        &cfg,
    )
    .unwrap();
    let (b, level_b, hb) = run_downstream(
        &original,
        &Walk::fixed(1, 1, 6),
        random_model(&[1, 12, 12], &backbone(), 3).unwrap(),
        &f.data,
        None,
        &cfg,
    )
    .unwrap();
    assert_eq!(param_bits(&a), param_bits(&b));
    assert_eq!(ha, hb);
    assert_eq!(level_a, level_b);
    assert_eq!(ha.len(), 6);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let f = fixture(2);
    let cfg = TrainConfig {
        epochs_per_level: 4,
        ..config(OptimizerConfig::msgd(0.0))
    };
    let mut model = random_model(&[1, 12, 12], &backbone(), 1).unwrap();
    model.reinit_head(3, 2).unwrap();
    let before = param_bits(&model);
    let history = train_level(&mut model, f.ladder.level(1).unwrap(), &f.data, None, &cfg).unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|r| r.train_loss == history[0].train_loss));
    assert_eq!(param_bits(&model), before);
}

#[test]
fn head_mismatch_is_a_state_error() {
    let f = fixture(3);
    let cfg = config(OptimizerConfig::msgd(0.1));
    let mut model = random_model(&[1, 12, 12], &backbone(), 1).unwrap();
    let err = train_level(&mut model, f.ladder.level(3).unwrap(), &f.data, None, &cfg).unwrap_err();
    assert!(matches!(err, curvete::Error::State(_)), "{err}");
}

#[test]
fn walk_records_one_entry_per_epoch() {
    let f = fixture(3);
    let cfg = config(OptimizerConfig::msgd(0.05));
    let walk = Walk::from_schedule(&build_schedule(3, 2, 2).unwrap());
    let (_, level, history) = run_downstream(
        &f.ladder,
        &walk,
        random_model(&[1, 12, 12], &backbone(), 2).unwrap(),
        &f.data,
        None,
        &cfg,
    )
    .unwrap();
    assert_eq!(history.len(), 2 * (2 * 3 - 1) * 2);
    assert_eq!(level.j, 3);
    let levels: Vec<usize> = history.iter().step_by(2).map(|r| r.level).collect();
    assert_eq!(levels, [3, 2, 1, 2, 3, 3, 2, 1, 2, 3]);
}

#[test]
fn pretext_skips_the_single_pseudo_class() {
    let f = fixture(2);
    let features = curvete::cae::FeatureMatrix::new(
        f.data.ids.clone(),
        144,
        f.samples.iter().flat_map(|s| s.to_unit_f32()).collect(),
    )
    .unwrap();
    let ladder = sample_decompose(&features, 5, 3, &KMeansParams::default()).unwrap();
    let walk = Walk::from_schedule(&build_schedule(5, 1, 1).unwrap());
    let cfg = TrainConfig {
        epochs_per_level: 1,
        ..config(OptimizerConfig::msgd(0.05))
    };
    let (model, history) = run_pretext(&ladder, &walk, &[1, 12, 12], &backbone(), &f.data, &cfg).unwrap();
    let levels: Vec<usize> = history.iter().map(|r| r.level).collect();
    assert_eq!(levels, [5, 4, 3, 2, 2, 3, 4, 5]);
    assert_eq!(model.class_count(), 5);
}

#[test]
fn head_reset_counts_follow_the_walk() {
    for k in 1..=10 {
        for cycles in 1..=6 {
            let walk = Walk::from_schedule(&build_schedule(k, cycles, 1).unwrap());
            assert_eq!(walk.head_resets(Phase::Downstream).len(), cycles * (2 * k - 2));
            let pretext = if k >= 2 { cycles * (2 * k - 4) } else { 0 };
            assert_eq!(walk.head_resets(Phase::Pretext).len(), pretext, "k {k} cycles {cycles}");
        }
    }
}

#[test]
fn perfect_sub_class_predictor_recovers_parents() {
    let f = fixture(5);
    for j in 1..=5 {
        let level = f.ladder.level(j).unwrap();
        for (i, &sub) in level.sub_labels.iter().enumerate() {
            assert_eq!(map_to_parent(level, sub).unwrap(), f.labels[i]);
        }
    }
}

#[test]
fn relabel_maps_logit_winner_to_its_parent() {
    // Dense head on a flat input: logits equal the input when weights are the identity.
    let mut model = NetworkModel::new(&[1, 1, 10], &[LayerSpec::Flatten], 10, 0).unwrap();
    let mut eye = vec![0f32; 100];
    (0..10).for_each(|i| eye[i * 11] = 1.0);
    model.set_param("head.weight", Tensor::new(vec![10, 10], eye).unwrap()).unwrap();
    let level = curvete::decomposition::LevelView {
        j: 5,
        class_count: 2,
        sub_labels: vec![],
        parent_map: (0..10).map(|s| s / 5).collect(),
    };
    let mut rows = vec![];
    for winner in [7usize, 2, 9, 0] {
        let mut r = vec![0u8; 10];
        r[winner] = 255;
        rows.push(ImageSample::new(format!("w{winner}"), 10, 1, r, None).unwrap());
    }
    let refs: Vec<&ImageSample> = rows.iter().collect();
    let data = TrainData::new(&refs).unwrap();
    assert_eq!(predict_with_relabel(&model, &data, &level).unwrap(), [1, 0, 1, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn relabelled_predictions_are_valid_classes(seed in any::<u64>(), j in 1usize..=4) {
        let classes = 3;
        let model = NetworkModel::new(&[1, 12, 12], &backbone(), classes * j, seed).unwrap();
        let level = curvete::decomposition::LevelView {
            j,
            class_count: classes,
            sub_labels: vec![],
            parent_map: (0..classes * j).map(|s| s / j).collect(),
        };
        let f = fixture(2);
        let pred = predict_with_relabel(&model, &f.data, &level).unwrap();
        prop_assert_eq!(pred.len(), f.data.len());
        prop_assert!(pred.iter().all(|&p| p < classes));
    }
}
