//! The pipeline stages. Each one reads its inputs from the run directory,
//! refuses to clobber earlier outputs unless asked to, and records every
//! file it touched in the manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use ultr_lab::data::{
    load_click_log, query_groups, scale_features_log1p, split_by_query, write_click_log, AnnotatedExample, Impression,
};
use ultr_lab::eval::{
    bucket_analysis, per_query_metric, policy_accuracy, random_scores, MetricResult, ModelScores, RankMetric,
};
use ultr_lab::gbdt::{kfold_fit, KFoldModels, Objective, RankingDataset};
use ultr_lab::models::{
    annotation_matrix, empirical_ctr_logits, estimate_logging_policy_gbdt, estimate_logging_policy_neural,
    train_backdoor_variant, train_naive, train_two_tower, ClickRows, CurvePoint, ExamLogitSource, NaiveModel,
    PolicyEstimator, RelevanceModel, TwoTowerModel, Variant,
};
use ultr_lab::nn::checkpoint::Checkpoint;
use ultr_lab::simulation::{apply_logging_policy, generate_world, simulate_clicks};

use crate::config::{Arm, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, StageLog, MANIFEST_FILE};

pub const CLICKS_FILE: &str = "clicks.tsv";
pub const GRADES_FILE: &str = "grades.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const TABLE1_FILE: &str = "table1.csv";
pub const TABLE2_FILE: &str = "table2.csv";
pub const BUCKETS_FILE: &str = "buckets.csv";
pub const POLICY_GBDT_FILE: &str = "checkpoints/policy_gbdt.json";
pub const POLICY_NEURAL_FILE: &str = "checkpoints/policy_neural.ckpt";

pub const TABLE1_HEADER: [&str; 5] = ["method", "accuracy_mean", "accuracy_ci", "strength_mean", "strength_ci"];
pub const TABLE2_HEADER: [&str; 7] = ["model", "metric", "k", "mean", "ci_low", "ci_high", "n"];
pub const BUCKETS_HEADER: [&str; 7] = [
    "bucket_index",
    "boundary_low",
    "boundary_high",
    "model",
    "mean",
    "relative_to_random",
    "n",
];
pub const CURVE_HEADER: [&str; 3] = ["epoch", "split", "loss"];

/// Where an arm's trained model lives inside the run directory.
pub fn checkpoint_file(arm: Arm) -> String {
    match arm {
        Arm::PolicyEstimator => POLICY_GBDT_FILE.to_string(),
        Arm::GbdtExpert => "checkpoints/gbdt_expert.json".to_string(),
        other => format!("checkpoints/{other}.ckpt"),
    }
}

pub fn curve_file(arm: Arm) -> String {
    format!("curves/{arm}.csv")
}

/// Reads `ULTR_LAB_THREADS`. Every stage runs on one thread; the value is
/// validated and recorded so that runs state what they were given.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("ULTR_LAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!(
                "ULTR_LAB_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn lib(context: &str) -> impl Fn(ultr_lab::Error) -> CliError + '_ {
    move |e| CliError::from_lib(context, e)
}

/// Query-level partition recorded in `split.tsv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    query_id: String,
    split: Part,
}

#[derive(Debug, Serialize, Deserialize)]
struct GradeRow {
    query_id: String,
    doc_id: String,
    grade: u8,
}

/// The k-fold expert model with the queries it was fit on, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertCheckpoint {
    pub query_ids: Vec<String>,
    pub folds: KFoldModels,
}

/// An opened run directory plus the config that must match it.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    overwrite: bool,
}

impl<'a> Run<'a> {
    fn open(cfg: &'a ExperimentConfig, overwrite: bool) -> CliResult<(Self, RunManifest)> {
        cfg.validate()?;
        let threads = threads_from_env()?;
        let dir = cfg.output_dir.clone();
        let mut manifest = RunManifest::load(&dir)?;
        if manifest.config.fingerprint() != cfg.fingerprint() {
            return Err(CliError::Validation(format!(
                "the config differs from the one recorded in {}",
                dir.join(MANIFEST_FILE).display()
            )));
        }
        manifest.threads = threads;
        Ok((Run { cfg, dir, overwrite }, manifest))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn require(&self, rel: &str, log: &mut StageLog) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(CliError::Validation(format!("missing input {}", path.display())));
        }
        log.input(rel);
        Ok(path)
    }

    fn read(&self, rel: &str, log: &mut StageLog) -> CliResult<Vec<u8>> {
        let path = self.require(rel, log)?;
        fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    /// Fails if any output already exists and `--overwrite` was not given.
    fn guard(&self, rels: &[String]) -> CliResult<()> {
        if self.overwrite {
            return Ok(());
        }
        for rel in rels {
            let path = self.path(rel);
            if path.exists() {
                return Err(CliError::Validation(format!(
                    "{} already exists; pass --overwrite to replace it",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn write(&self, rel: &str, bytes: &[u8], log: &mut StageLog) -> CliResult<()> {
        write_file(&self.dir, rel, bytes)?;
        log.output(rel);
        Ok(())
    }
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> CliResult<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

fn tsv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new())
}

fn csv_bytes<const N: usize>(header: [&str; N], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn read_tsv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))))
        .collect()
}

/// Everything the later stages read back from `simulate`.
struct RunData {
    impressions: Vec<Impression>,
    split: HashMap<String, Part>,
    grades: HashMap<(String, String), u8>,
}

impl RunData {
    fn load(run: &Run<'_>, log: &mut StageLog) -> CliResult<Self> {
        let clicks_path = run.require(CLICKS_FILE, log)?;
        let mut impressions = load_click_log(&clicks_path).map_err(lib(CLICKS_FILE))?.impressions;
        if run.cfg.scale_features {
            for e in impressions.iter_mut().flat_map(|i| i.entries.iter_mut()) {
                e.features = scale_features_log1p(&e.features).map_err(lib(CLICKS_FILE))?;
            }
        }
        let split: HashMap<String, Part> = read_tsv::<SplitRow>(&run.require(SPLIT_FILE, log)?)?
            .into_iter()
            .map(|r| (r.query_id, r.split))
            .collect();
        if let Some(imp) = impressions.iter().find(|i| !split.contains_key(&i.query_id)) {
            return Err(CliError::Validation(format!(
                "query {} of {CLICKS_FILE} has no entry in {SPLIT_FILE}",
                imp.query_id
            )));
        }
        let grades = read_tsv::<GradeRow>(&run.require(GRADES_FILE, log)?)?
            .into_iter()
            .map(|r| ((r.query_id, r.doc_id), r.grade))
            .collect();
        Ok(RunData {
            impressions,
            split,
            grades,
        })
    }

    fn part(&self, part: Part) -> Vec<Impression> {
        self.impressions
            .iter()
            .filter(|i| self.split[&i.query_id] == part)
            .cloned()
            .collect()
    }

    /// Test-split documents with their grades: queries in click-log order,
    /// documents by doc id so that stored display order cannot leak into
    /// tie-breaks.
    fn test_annotations(&self) -> CliResult<Vec<AnnotatedExample>> {
        self.part(Part::Test)
            .into_iter()
            .flat_map(|imp| {
                let query_id = imp.query_id;
                let mut entries = imp.entries;
                entries.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
                entries.into_iter().map(move |e| {
                    let key = (query_id.clone(), e.doc_id);
                    match self.grades.get(&key) {
                        Some(&grade) => Ok(AnnotatedExample {
                            query_id: key.0,
                            doc_id: key.1,
                            features: e.features,
                            grade,
                        }),
                        None => Err(CliError::Validation(format!(
                            "{GRADES_FILE} has no grade for doc {} of query {}",
                            key.1, key.0
                        ))),
                    }
                })
            })
            .collect()
    }
}

fn summarize(cfg: &ExperimentConfig, values: &[f64], key: &str, purpose: &str) -> CliResult<MetricResult> {
    cfg.eval
        .ci_method
        .summarize(values, cfg.seed(key, purpose))
        .map_err(lib(key))
}

fn annotation_dataset(annotations: &[AnnotatedExample]) -> CliResult<RankingDataset> {
    let features = annotation_matrix(annotations).map_err(lib("annotations"))?;
    let targets = annotations.iter().map(|a| f64::from(a.grade)).collect();
    RankingDataset::new(features, targets, query_groups(annotations)).map_err(lib("annotations"))
}

fn query_sizes(annotations: &[AnnotatedExample]) -> Vec<usize> {
    query_groups(annotations).iter().map(|g| g.len()).collect()
}

fn impression_sizes(impressions: &[Impression]) -> Vec<usize> {
    impressions.iter().map(|i| i.entries.len()).collect()
}

fn unix_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// The configured directory, or a timestamped sibling when it already holds
/// something and `overwrite` is off.
fn choose_run_dir(dir: &Path, overwrite: bool) -> CliResult<PathBuf> {
    let occupied = match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => dir.exists(),
    };
    if overwrite || !occupied {
        return Ok(dir.to_path_buf());
    }
    let stamp = unix_secs();
    let base = format!("{}-{stamp}", dir.display());
    let mut candidate = PathBuf::from(&base);
    let mut n = 2;
    while candidate.exists() {
        candidate = PathBuf::from(format!("{base}-{n}"));
        n += 1;
    }
    Ok(candidate)
}

/// Removes outputs of later stages so a re-simulated run cannot mix old
/// models with new data.
fn clear_downstream(dir: &Path) -> CliResult<()> {
    for rel in [TABLE1_FILE, TABLE2_FILE, BUCKETS_FILE] {
        let path = dir.join(rel);
        if path.is_file() {
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    for rel in ["checkpoints", "curves"] {
        let path = dir.join(rel);
        if path.is_dir() {
            fs::remove_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(())
}

/// Generates the world, logs it with the policy, samples clicks and writes
/// `clicks.tsv`, `grades.tsv`, `split.tsv` and a fresh manifest. Returns the
/// run directory actually used.
pub fn cmd_simulate(cfg: &ExperimentConfig, overwrite: bool) -> CliResult<PathBuf> {
    cfg.validate()?;
    let threads = threads_from_env()?;
    let mut log = StageLog::start("simulate", None);

    let world = generate_world(&cfg.world_config()).map_err(lib("simulate"))?;
    let logged = apply_logging_policy(&world, &cfg.policy_config()).map_err(lib("simulate"))?;
    let impressions = simulate_clicks(&world, &logged, &cfg.click_config()).map_err(lib("simulate"))?;
    let split = split_by_query(
        &impressions,
        (cfg.split.train, cfg.split.validation, cfg.split.test),
        cfg.split_seed(),
    )
    .map_err(lib("simulate"))?;

    let mut clicks = Vec::new();
    write_click_log(&mut clicks, cfg.world.feature_dim, &impressions).map_err(lib(CLICKS_FILE))?;

    let mut grades = tsv_writer();
    for q in &world.queries {
        for d in &q.docs {
            grades
                .serialize(GradeRow {
                    query_id: q.query_id.clone(),
                    doc_id: d.doc_id.clone(),
                    grade: d.grade,
                })
                .expect("in-memory write");
        }
    }
    let grades = grades.into_inner().expect("in-memory flush");

    let mut part_of: HashMap<&str, Part> = HashMap::new();
    for (part, imps) in [
        (Part::Train, &split.train),
        (Part::Validation, &split.validation),
        (Part::Test, &split.test),
    ] {
        for imp in imps {
            part_of.insert(&imp.query_id, part);
        }
    }
    let mut split_tsv = tsv_writer();
    for imp in &impressions {
        split_tsv
            .serialize(SplitRow {
                query_id: imp.query_id.clone(),
                split: part_of[imp.query_id.as_str()],
            })
            .expect("in-memory write");
    }
    let split_tsv = split_tsv.into_inner().expect("in-memory flush");

    let dir = choose_run_dir(&cfg.output_dir, overwrite)?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    clear_downstream(&dir)?;
    for (rel, bytes) in [(CLICKS_FILE, &clicks), (GRADES_FILE, &grades), (SPLIT_FILE, &split_tsv)] {
        write_file(&dir, rel, bytes)?;
        log.output(rel);
    }
    let mut snapshot = cfg.clone();
    snapshot.output_dir = dir.clone();
    let mut manifest = RunManifest::new(&snapshot, threads);
    manifest.record(log.finish(&dir)?);
    manifest.save(&dir)?;
    Ok(dir)
}

/// Estimator scores per impression, aligned with `entries`.
fn impression_scores(est: &PolicyEstimator, impressions: &[Impression]) -> CliResult<Vec<Vec<f64>>> {
    let rows = ClickRows::from_impressions(impressions).map_err(lib("policy_estimator"))?;
    let flat = est.score_batch(rows.features.view()).map_err(lib("policy_estimator"))?;
    Ok(rows.groups.iter().map(|g| flat[g.clone()].to_vec()).collect())
}

fn split_flat(flat: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            start += n;
            flat[start - n..start].to_vec()
        })
        .collect()
}

/// Fits the GBDT and neural logging-policy estimators on the training
/// split and writes Table 1: how well each (and a random ranker) reproduces
/// the logged order on test queries, and how well each ranks by true grade.
pub fn cmd_estimate_policy(cfg: &ExperimentConfig, overwrite: bool) -> CliResult<()> {
    let (run, mut manifest) = Run::open(cfg, overwrite)?;
    run.guard(&[POLICY_GBDT_FILE.into(), POLICY_NEURAL_FILE.into(), TABLE1_FILE.into()])?;
    let mut log = StageLog::start("estimate_policy", None);
    let data = RunData::load(&run, &mut log)?;
    let train = data.part(Part::Train);
    let validation = data.part(Part::Validation);
    let test = data.part(Part::Test);
    let annotations = data.test_annotations()?;
    let k = cfg.eval.k;

    let gbdt = estimate_logging_policy_gbdt(&train, &validation, &cfg.policy_gbdt).map_err(lib("policy_gbdt"))?;
    let neural = estimate_logging_policy_neural(&train, &cfg.neural_policy_config()).map_err(lib("policy_neural"))?;

    let features = annotation_matrix(&annotations).map_err(lib("annotations"))?;
    let random_key = Arm::Random.seed_key();
    let sizes = impression_sizes(&test);
    let random_flat = random_scores(&sizes, cfg.seed(random_key, "rank"));
    let mut rows = Vec::new();
    let mut table_row = |name: &str, per_impression: Vec<Vec<f64>>, flat: Vec<f64>| -> CliResult<()> {
        let accuracy = policy_accuracy(&test, &per_impression, k).map_err(lib(name))?;
        let accuracy = summarize(cfg, &accuracy.per_query, name, "bootstrap_accuracy")?;
        let strength = per_query_metric(&annotations, &flat, k, RankMetric::Ndcg).map_err(lib(name))?;
        let strength = summarize(cfg, &strength, name, "bootstrap_strength")?;
        rows.push(vec![
            name.to_string(),
            accuracy.mean.to_string(),
            accuracy.ci_half_width.to_string(),
            strength.mean.to_string(),
            strength.ci_half_width.to_string(),
        ]);
        Ok(())
    };
    for (name, est) in [("policy_gbdt", &gbdt), ("policy_neural", &neural)] {
        let flat = est.score_batch(features.view()).map_err(lib(name))?;
        table_row(name, impression_scores(est, &test)?, flat)?;
    }
    table_row(
        random_key,
        split_flat(&random_flat, &sizes),
        random_flat.clone(),
    )?;

    let gbdt_bytes = gbdt.to_bytes(json!({})).map_err(lib("policy_gbdt"))?;
    run.write(POLICY_GBDT_FILE, &gbdt_bytes, &mut log)?;
    let neural_meta = json!({ "config": cfg.neural_policy_config() });
    let neural_bytes = neural.to_bytes(neural_meta).map_err(lib("policy_neural"))?;
    run.write(POLICY_NEURAL_FILE, &neural_bytes, &mut log)?;
    run.write(TABLE1_FILE, &csv_bytes(TABLE1_HEADER, &rows), &mut log)?;
    manifest.record(log.finish(&run.dir)?);
    manifest.save(&run.dir)
}

fn curve_bytes(curve: &[CurvePoint]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| vec![p.epoch.to_string(), p.split.clone(), p.loss.to_string()])
        .collect();
    csv_bytes(CURVE_HEADER, &rows)
}

fn read_checkpoint(run: &Run<'_>, rel: &str, log: &mut StageLog) -> CliResult<Checkpoint> {
    Checkpoint::from_bytes(&run.read(rel, log)?).map_err(lib(rel))
}

/// Trains one arm and writes its checkpoint and curve.
fn train_arm(run: &Run<'_>, data: &RunData, arm: Arm, log: &mut StageLog) -> CliResult<()> {
    let cfg = run.cfg;
    let name = arm.name();
    let tc = cfg.train_config(arm);
    let train = data.part(Part::Train);
    let validation = data.part(Part::Validation);
    let meta = json!({ "train": tc });
    let (bytes, curve) = match arm {
        Arm::Naive => {
            let t = train_naive(&train, &validation, &tc).map_err(lib(name))?;
            (t.model.to_checkpoint(meta).to_bytes(), t.curve)
        }
        Arm::TwoTower | Arm::TwoTowerDropout => {
            let variant = match arm {
                Arm::TwoTower => Variant::Standard,
                _ => Variant::Dropout { tau: cfg.dropout.tau },
            };
            let t = train_two_tower(&train, &validation, variant, &tc).map_err(lib(name))?;
            (t.model.to_checkpoint(meta).to_bytes(), t.curve)
        }
        Arm::TwoTowerBackdoor => {
            let policy = PolicyEstimator::from_bytes(&run.read(POLICY_NEURAL_FILE, log)?).map_err(lib(POLICY_NEURAL_FILE))?;
            let logits = match cfg.backdoor.exam_logit_source {
                ExamLogitSource::TwoTower => {
                    let rel = checkpoint_file(Arm::TwoTower);
                    let ckpt = read_checkpoint(run, &rel, log)?;
                    TwoTowerModel::from_checkpoint(&ckpt).map_err(lib(&rel))?.bias.logits()
                }
                ExamLogitSource::EmpiricalCtr => empirical_ctr_logits(&train, tc.max_position).map_err(lib(name))?,
            };
            let (t, artifacts) = train_backdoor_variant(&train, &validation, &policy, &logits, &tc, &cfg.backdoor)
                .map_err(lib(name))?;
            let meta = json!({ "train": tc, "backdoor": cfg.backdoor, "policy": POLICY_NEURAL_FILE });
            (artifacts.checkpoint(&t.model, meta).to_bytes(), t.curve)
        }
        Arm::GbdtExpert => {
            let annotations = data.test_annotations()?;
            let dataset = annotation_dataset(&annotations)?;
            let folds = kfold_fit(
                &dataset,
                cfg.gbdt_expert.k_folds,
                Objective::lambdarank(),
                &cfg.gbdt_expert.params,
                cfg.seed(arm.seed_key(), "folds"),
            )
            .map_err(lib(name))?;
            let scores = folds.predict_out_of_fold(&dataset).map_err(lib(name))?;
            let per_query = per_query_metric(&annotations, &scores, cfg.eval.k, RankMetric::Ndcg).map_err(lib(name))?;
            // One curve point per fold: 1 - mean held-out nDCG@k.
            let curve = (0..cfg.gbdt_expert.k_folds)
                .map(|fold| {
                    let held: Vec<f64> = per_query
                        .iter()
                        .zip(&folds.fold_of_group)
                        .filter(|(_, f)| **f == fold)
                        .map(|(v, _)| *v)
                        .collect();
                    CurvePoint {
                        epoch: fold + 1,
                        split: "held_out".into(),
                        loss: 1.0 - held.iter().sum::<f64>() / held.len() as f64,
                    }
                })
                .collect();
            let ckpt = ExpertCheckpoint {
                query_ids: query_groups(&annotations)
                    .iter()
                    .map(|g| annotations[g.start].query_id.clone())
                    .collect(),
                folds,
            };
            let text = serde_json::to_string(&ckpt).expect("expert serializes");
            (Ok(text.into_bytes()), curve)
        }
        Arm::Random | Arm::PolicyEstimator | Arm::Oracle => unreachable!("not trained here"),
    };
    let bytes = bytes.map_err(lib(name))?;
    run.write(&checkpoint_file(arm), &bytes, log)?;
    run.write(&curve_file(arm), &curve_bytes(&curve), log)?;
    Ok(())
}

/// Trains `arm`, or every configured arm with a training step. `random`
/// and `oracle` have nothing to train; `policy_estimator` runs
/// [`cmd_estimate_policy`]. Returns the arms that were trained.
pub fn cmd_train(cfg: &ExperimentConfig, arm: Option<Arm>, overwrite: bool) -> CliResult<Vec<Arm>> {
    let arms: Vec<Arm> = match arm {
        Some(Arm::PolicyEstimator) => {
            cmd_estimate_policy(cfg, overwrite)?;
            return Ok(vec![Arm::PolicyEstimator]);
        }
        Some(a) if !a.is_trained() => {
            cfg.validate()?;
            return Ok(Vec::new());
        }
        Some(a) => vec![a],
        None => cfg.ordered_arms().into_iter().filter(|a| a.is_trained()).collect(),
    };
    let (run, mut manifest) = Run::open(cfg, overwrite)?;
    let outputs: Vec<String> = arms
        .iter()
        .flat_map(|&a| [checkpoint_file(a), curve_file(a)])
        .collect();
    run.guard(&outputs)?;
    let mut data_log = StageLog::start("train", None);
    let data = RunData::load(&run, &mut data_log)?;
    for &a in &arms {
        let mut log = StageLog::start("train", Some(a.name()));
        for rel in [CLICKS_FILE, SPLIT_FILE, GRADES_FILE] {
            log.input(rel);
        }
        train_arm(&run, &data, a, &mut log)?;
        manifest.record(log.finish(&run.dir)?);
        manifest.save(&run.dir)?;
    }
    Ok(arms)
}

/// Test-set scores of one arm, aligned with `annotations`.
fn arm_scores(
    run: &Run<'_>,
    arm: Arm,
    annotations: &[AnnotatedExample],
    policy_scores: &[f64],
    log: &mut StageLog,
) -> CliResult<Vec<f64>> {
    let name = arm.name();
    let features = annotation_matrix(annotations).map_err(lib("annotations"))?;
    let rel = checkpoint_file(arm);
    match arm {
        Arm::Random => Ok(random_scores(
            &query_sizes(annotations),
            run.cfg.seed(arm.seed_key(), "rank"),
        )),
        Arm::Oracle => Ok(annotations.iter().map(|a| f64::from(a.grade)).collect()),
        Arm::PolicyEstimator => Ok(policy_scores.to_vec()),
        Arm::Naive => {
            let model = NaiveModel::from_checkpoint(&read_checkpoint(run, &rel, log)?).map_err(lib(&rel))?;
            model.relevance_scores(features.view()).map_err(lib(name))
        }
        Arm::TwoTower | Arm::TwoTowerDropout | Arm::TwoTowerBackdoor => {
            let model = TwoTowerModel::from_checkpoint(&read_checkpoint(run, &rel, log)?).map_err(lib(&rel))?;
            model.relevance_scores(features.view()).map_err(lib(name))
        }
        Arm::GbdtExpert => {
            let bytes = run.read(&rel, log)?;
            let ckpt: ExpertCheckpoint = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Runtime(format!("{rel}: {e}")))?;
            let ids: Vec<&str> = query_groups(annotations)
                .iter()
                .map(|g| annotations[g.start].query_id.as_str())
                .collect();
            if ckpt.query_ids != ids {
                return Err(CliError::Validation(format!(
                    "{rel} was fit on different test queries; retrain gbdt_expert"
                )));
            }
            ckpt.folds
                .predict_out_of_fold(&annotation_dataset(annotations)?)
                .map_err(lib(name))
        }
    }
}

/// Scores every configured arm on the test annotations and writes Table 2
/// (nDCG@k and DCG@k with intervals) and the bucketed comparison.
pub fn cmd_evaluate(cfg: &ExperimentConfig, overwrite: bool) -> CliResult<()> {
    let (run, mut manifest) = Run::open(cfg, overwrite)?;
    run.guard(&[TABLE2_FILE.into(), BUCKETS_FILE.into()])?;
    let mut log = StageLog::start("evaluate", None);
    let data = RunData::load(&run, &mut log)?;
    let annotations = data.test_annotations()?;
    let k = cfg.eval.k;

    let policy = PolicyEstimator::from_bytes(&run.read(POLICY_GBDT_FILE, &mut log)?).map_err(lib(POLICY_GBDT_FILE))?;
    let features = annotation_matrix(&annotations).map_err(lib("annotations"))?;
    let policy_scores = policy.score_batch(features.view()).map_err(lib(POLICY_GBDT_FILE))?;

    let models = cfg
        .ordered_arms()
        .into_iter()
        .map(|arm| {
            Ok(ModelScores {
                name: arm.name().to_string(),
                scores: arm_scores(&run, arm, &annotations, &policy_scores, &mut log)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut table2 = Vec::new();
    for m in &models {
        for metric in [RankMetric::Ndcg, RankMetric::Dcg] {
            let values = per_query_metric(&annotations, &m.scores, k, metric).map_err(lib(&m.name))?;
            let r = summarize(cfg, &values, &m.name, &format!("bootstrap_{}", metric.name()))?;
            table2.push(vec![
                m.name.clone(),
                metric.name().to_string(),
                k.to_string(),
                r.mean.to_string(),
                r.ci_low().to_string(),
                r.ci_high().to_string(),
                r.n_queries.to_string(),
            ]);
        }
    }

    let report = bucket_analysis(
        &annotations,
        &models,
        Arm::Random.name(),
        &policy_scores,
        k,
        cfg.eval.n_buckets,
    )
    .map_err(lib("buckets"))?;
    let mut buckets = Vec::new();
    for (b, ((low, high), stats)) in report.boundaries.iter().zip(&report.stats).enumerate() {
        for s in stats {
            buckets.push(vec![
                b.to_string(),
                low.to_string(),
                high.to_string(),
                s.model.clone(),
                s.mean.to_string(),
                s.relative_to_random.to_string(),
                s.n.to_string(),
            ]);
        }
    }

    run.write(TABLE2_FILE, &csv_bytes(TABLE2_HEADER, &table2), &mut log)?;
    run.write(BUCKETS_FILE, &csv_bytes(BUCKETS_HEADER, &buckets), &mut log)?;
    manifest.record(log.finish(&run.dir)?);
    manifest.save(&run.dir)
}
