//! Round trips through real files on disk.

use ultr_lab::data::{load_annotations, load_click_log, write_annotations, write_click_log};
use ultr_lab::gbdt::{fit_gbdt, GbdtModel, GbdtParams, Objective};
use ultr_lab::models::{impressions_to_ranking_dataset, NaiveModel, PolicyTarget, TwoTowerModel, Variant};
use ultr_lab::nn::checkpoint::Checkpoint;
use ultr_lab::nn::DenseNet;
use ultr_lab::seed::rng_for;
use ultr_lab::simulation::{
    apply_logging_policy, generate_world, simulate_clicks, ClickConfig, PolicyConfig, SyntheticWorld, WorldConfig,
};

fn world() -> SyntheticWorld {
    generate_world(&WorldConfig {
        n_queries: 25,
        seed: 4,
        ..WorldConfig::default()
    })
    .unwrap()
}

#[test]
fn click_log_survives_disk() {
    let w = world();
    let logged = apply_logging_policy(&w, &PolicyConfig::default()).unwrap();
    let clicks = simulate_clicks(&w, &logged, &ClickConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.tsv");
    write_click_log(std::fs::File::create(&path).unwrap(), 16, &clicks).unwrap();

    let back = load_click_log(&path).unwrap();
    assert_eq!(back.dim, 16);
    assert_eq!(back.impressions.len(), clicks.len());
    for (a, b) in clicks.iter().zip(&back.impressions) {
        assert_eq!(a.query_id, b.query_id);
        let mut expected = a.entries.clone();
        expected.sort_by_key(|e| e.position);
        assert_eq!(expected, b.entries);
    }
}

#[test]
fn annotations_survive_disk() {
    let annotations = world().annotations();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grades.svm");
    write_annotations(std::fs::File::create(&path).unwrap(), &annotations).unwrap();
    assert_eq!(load_annotations(&path, 16).unwrap(), annotations);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent");
    assert!(matches!(load_click_log(&absent), Err(ultr_lab::Error::Io(_))));
    assert!(matches!(load_annotations(&absent, 3), Err(ultr_lab::Error::Io(_))));
    assert!(Checkpoint::read(&absent).is_err());
}

#[test]
fn neural_checkpoints_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng_for(3, "init");
    let naive = NaiveModel {
        relevance: DenseNet::glorot(&[16, 8, 1], &mut rng).unwrap(),
    };
    let mut two_tower = TwoTowerModel::zeros(&[16, 8, 1], 10, Variant::Dropout { tau: 0.25 }).unwrap();
    two_tower.relevance = naive.relevance.clone();
    two_tower.bias.weights[3] = -1.5;

    let naive_path = dir.path().join("naive.ckpt");
    naive.to_checkpoint(serde_json::json!({})).write(&naive_path).unwrap();
    let tt_path = dir.path().join("two_tower.ckpt");
    two_tower.to_checkpoint(serde_json::json!({ "epochs": 3 })).write(&tt_path).unwrap();

    assert_eq!(NaiveModel::from_checkpoint(&Checkpoint::read(&naive_path).unwrap()).unwrap(), naive);
    let ckpt = Checkpoint::read(&tt_path).unwrap();
    assert_eq!(ckpt.header.meta["epochs"], 3);
    assert_eq!(TwoTowerModel::from_checkpoint(&ckpt).unwrap(), two_tower);
    // A checkpoint of the wrong kind is refused rather than misread.
    assert!(TwoTowerModel::from_checkpoint(&Checkpoint::read(&naive_path).unwrap()).is_err());
}

#[test]
fn tree_ensembles_survive_json() {
    let w = world();
    let logged = apply_logging_policy(&w, &PolicyConfig::default()).unwrap();
    let data = impressions_to_ranking_dataset(&logged, PolicyTarget::LambdaRank).unwrap();
    let params = GbdtParams {
        n_trees: 15,
        early_stop_rounds: None,
        ..GbdtParams::default()
    };
    let model = fit_gbdt(&data, None, Objective::lambdarank(), &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    std::fs::write(&path, model.to_json().unwrap()).unwrap();
    let back = GbdtModel::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.predict_dataset(&data).unwrap(), model.predict_dataset(&data).unwrap());
}
