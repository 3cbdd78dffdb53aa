use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use curvete::experiment::{build_report, Experiment, ExperimentManifest, Outcome, Which};
use curvete::training::{random_model, AblationMode, Checkpoint};
use curvete::Error;

fn tiny(seed: u64) -> ExperimentManifest {
    ExperimentManifest::from_toml(&format!(
        r#"
seed = {seed}
data_seed = 3
input_size = 16

[dataset]
kind = "synth"
classes = 3
samples_per_class = 12
image_size = 16
noise_sigma = 20.0
intra_class_modes = 2

[cae]
encoder_filters = [4, 2]
epochs = 1

[decomposition]
pretext_k = 3
downstream_k = 2

[schedule]
cycles = 1
epochs_per_level = 1

[train]
batch_size = 8

[backbone]
layers = ["conv2d(4,3)", "relu", "maxpool(2)", "flatten", "dense(8)", "relu"]
"#
    ))
    .unwrap()
}

fn run_chain(exp: &Experiment) -> Vec<Outcome> {
    vec![
        exp.pretrain_cae().unwrap(),
        exp.decompose(Which::Pretext).unwrap(),
        exp.decompose(Which::Downstream).unwrap(),
        exp.pretext().unwrap(),
        exp.finetune().unwrap(),
        exp.evaluate(None).unwrap(),
        exp.ablate(AblationMode::TraditionalTransfer).unwrap(),
    ]
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn dependency_command(err: Error) -> String {
    match err {
        Error::Dependency { command, .. } => command,
        other => panic!("expected a dependency error, got {other}"),
    }
}

#[test]
fn missing_upstream_artifacts_name_their_command() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(1), Some(dir.path().to_path_buf())).unwrap();
    assert_eq!(dependency_command(exp.decompose(Which::Pretext).unwrap_err()), "pretrain-cae");
    assert_eq!(dependency_command(exp.pretext().unwrap_err()), "decompose --which pretext");
    assert_eq!(dependency_command(exp.finetune().unwrap_err()), "pretext");
    assert_eq!(dependency_command(exp.evaluate(None).unwrap_err()), "finetune");
    exp.pretrain_cae().unwrap();
    exp.decompose(Which::Pretext).unwrap();
    exp.pretext().unwrap();
    assert_eq!(dependency_command(exp.finetune().unwrap_err()), "decompose --which downstream");
}

#[test]
fn second_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(1), Some(dir.path().to_path_buf())).unwrap();
    assert!(run_chain(&exp).iter().all(|o| *o == Outcome::Computed));
    let before = snapshot(dir.path());
    assert!(before.keys().all(|k| !k.contains("partial")));
    let exp = Experiment::new(tiny(1), Some(dir.path().to_path_buf())).unwrap();
    assert!(run_chain(&exp).iter().all(|o| *o == Outcome::UpToDate));
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn changed_manifest_invalidates_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(1), Some(dir.path().to_path_buf())).unwrap();
    exp.pretrain_cae().unwrap();
    exp.decompose(Which::Pretext).unwrap();
    let exp = Experiment::new(tiny(2), Some(dir.path().to_path_buf())).unwrap();
    assert_eq!(dependency_command(exp.decompose(Which::Pretext).unwrap_err()), "pretrain-cae");
    assert_eq!(exp.pretrain_cae().unwrap(), Outcome::Computed);
}

#[test]
fn report_refuses_mixed_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ea = Experiment::new(tiny(1), Some(a.path().to_path_buf())).unwrap();
    let eb = Experiment::new(tiny(2), Some(b.path().to_path_buf())).unwrap();
    for e in [&ea, &eb] {
        e.pretrain_cae().unwrap();
    }
    ea.ablate(AblationMode::TraditionalTransfer).unwrap();
    eb.ablate(AblationMode::TraditionalTransfer).unwrap();
    let report = build_report(a.path()).unwrap();
    assert!(report.contains("traditional_transfer") || report.contains("Traditional"));
    fs::copy(
        b.path().join("metrics_traditional_transfer.json"),
        a.path().join("metrics_curvete.json"),
    )
    .unwrap();
    let err = build_report(a.path()).unwrap_err();
    assert!(err.to_string().contains("manifest"), "{err}");
}

#[test]
fn untrained_model_scores_at_chance() {
    let mut m = tiny(4);
    m.dataset = match m.dataset {
        curvete::experiment::manifest::DatasetSource::Synth {
            classes,
            image_size,
            noise_sigma,
            intra_class_modes,
            equalize,
            ..
        } => curvete::experiment::manifest::DatasetSource::Synth {
            classes,
            samples_per_class: 220,
            image_size,
            noise_sigma,
            intra_class_modes,
            equalize,
        },
        other => other,
    };
    m.split.train = 0.1;
    m.split.validation = 0.1;
    m.split.test = 0.8;
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(m.clone(), Some(dir.path().to_path_buf())).unwrap();
    exp.pretrain_cae().unwrap();
    let model = random_model(&m.input_shape(), &m.backbone_specs().unwrap(), 99).unwrap();
    let mut ckpt = Checkpoint::new(m.hash());
    for (name, t) in model.named_params() {
        ckpt.push(name, t.clone());
    }
    let path = dir.path().join("random.crvt");
    ckpt.save(&path).unwrap();
    exp.evaluate(Some(&path)).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("metrics_random.json")).unwrap()).unwrap();
    let n = metrics["correct"].as_array().unwrap().len();
    let acc = metrics["report"]["accuracy"].as_f64().unwrap();
    assert!(n >= 500, "{n} test samples");
    assert!((acc - 1.0 / 3.0).abs() <= 0.10, "accuracy {acc}");
}

#[test]
fn evaluate_rejects_foreign_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny(1);
    let exp = Experiment::new(m.clone(), Some(dir.path().to_path_buf())).unwrap();
    let model = random_model(&m.input_shape(), &m.backbone_specs().unwrap(), 1).unwrap();
    let mut ckpt = Checkpoint::new([0; 32]);
    for (name, t) in model.named_params() {
        ckpt.push(name, t.clone());
    }
    let path = dir.path().join("foreign.crvt");
    ckpt.save(&path).unwrap();
    assert!(exp.evaluate(Some(&path)).is_err());
}
