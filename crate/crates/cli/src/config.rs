//! Experiment configuration: one TOML document describing the world, the
//! logging policy, the click model, the arms to train and how to evaluate.
//!
//! Every random stream is keyed off `master_seed`. Section-level `seed`
//! fields exist in the library types, but here they must stay at zero; the
//! pipeline fills them in with `derive_seed(master_seed, arm, purpose)`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ultr_lab::eval::CiMethod;
use ultr_lab::gbdt::GbdtParams;
use ultr_lab::models::{BackdoorConfig, ExamLogitSource, NeuralPolicyConfig, PolicyGbdtConfig, TrainConfig};
use ultr_lab::seed::derive_seed;
use ultr_lab::simulation::{ClickConfig, PolicyConfig, WorldConfig};

use crate::error::{CliError, CliResult};

/// A ranker that gets a row in the evaluation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Random,
    PolicyEstimator,
    Naive,
    TwoTower,
    TwoTowerDropout,
    TwoTowerBackdoor,
    GbdtExpert,
    /// Ranks by the true grades; an upper bound for sanity checks.
    Oracle,
}

impl Arm {
    /// Every arm, in the order stages process them. The standard two-tower
    /// arm precedes the backdoor arm, whose examination logits it supplies.
    pub const ALL: [Arm; 8] = [
        Arm::Random,
        Arm::PolicyEstimator,
        Arm::Naive,
        Arm::TwoTower,
        Arm::TwoTowerDropout,
        Arm::TwoTowerBackdoor,
        Arm::GbdtExpert,
        Arm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Random => "random",
            Arm::PolicyEstimator => "policy_estimator",
            Arm::Naive => "naive",
            Arm::TwoTower => "two_tower",
            Arm::TwoTowerDropout => "two_tower_dropout",
            Arm::TwoTowerBackdoor => "two_tower_backdoor",
            Arm::GbdtExpert => "gbdt_expert",
            Arm::Oracle => "oracle",
        }
    }

    /// Key used for seed derivation. All two-tower variants share one key so
    /// that they start from identical weights and see identical batches.
    pub fn seed_key(self) -> &'static str {
        match self {
            Arm::TwoTower | Arm::TwoTowerDropout | Arm::TwoTowerBackdoor => "two_tower",
            other => other.name(),
        }
    }

    /// Arms whose model comes out of `train`.
    pub fn is_trained(self) -> bool {
        matches!(
            self,
            Arm::Naive | Arm::TwoTower | Arm::TwoTowerDropout | Arm::TwoTowerBackdoor | Arm::GbdtExpert
        )
    }

    fn valid_names() -> String {
        Arm::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CliError::Validation(format!("unknown arm {s:?}; valid arms: {}", Arm::valid_names())))
    }
}

/// Query-level split of the simulated log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Click-model and policy-estimator training.
    pub train: f64,
    /// Early stopping and validation curves.
    pub validation: f64,
    /// Expert-annotated queries every arm is evaluated on.
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            validation: 0.1,
            test: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub tau: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig { tau: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub k_folds: usize,
    pub params: GbdtParams,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            k_folds: 5,
            params: GbdtParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rank cutoff for nDCG and DCG.
    pub k: usize,
    /// Only 0.95 is supported.
    pub ci_level: f64,
    pub ci_method: CiMethod,
    pub n_buckets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            ci_level: 0.95,
            ci_method: CiMethod::Normal,
            n_buckets: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Apply `sign(x) * ln(1 + |x|)` to every feature before modeling.
    pub scale_features: bool,
    pub arms: Vec<Arm>,
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    pub clicks: ClickConfig,
    pub split: SplitConfig,
    /// Shared by the naive and two-tower arms.
    pub train: TrainConfig,
    pub dropout: DropoutConfig,
    pub backdoor: BackdoorConfig,
    pub policy_gbdt: PolicyGbdtConfig,
    pub policy_neural: NeuralPolicyConfig,
    pub gbdt_expert: ExpertConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            output_dir: PathBuf::from("runs/ultr-lab"),
            scale_features: true,
            arms: vec![
                Arm::Random,
                Arm::PolicyEstimator,
                Arm::Naive,
                Arm::TwoTower,
                Arm::TwoTowerDropout,
                Arm::TwoTowerBackdoor,
                Arm::GbdtExpert,
            ],
            world: WorldConfig::default(),
            policy: PolicyConfig::default(),
            clicks: ClickConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            dropout: DropoutConfig::default(),
            backdoor: BackdoorConfig::default(),
            policy_gbdt: PolicyGbdtConfig::default(),
            policy_neural: NeuralPolicyConfig::default(),
            gbdt_expert: ExpertConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every field a stage could trip over, so that a bad config
    /// fails before anything is written.
    pub fn validate(&self) -> CliResult<()> {
        let lib = |e: ultr_lab::Error| CliError::Config(e.to_string());
        self.world.validate().map_err(lib)?;
        self.policy.validate().map_err(lib)?;
        self.clicks.validate().map_err(lib)?;
        self.train.validate().map_err(lib)?;
        self.policy_neural.validate().map_err(lib)?;
        self.policy_gbdt.params.validate().map_err(lib)?;
        self.gbdt_expert.params.validate().map_err(lib)?;

        for (section, seed) in [
            ("world", self.world.seed),
            ("policy", self.policy.seed),
            ("clicks", self.clicks.seed),
            ("train", self.train.seed),
            ("policy_neural", self.policy_neural.seed),
        ] {
            if seed != 0 {
                return Err(CliError::Config(format!(
                    "{section}.seed is derived from master_seed; remove it from the config"
                )));
            }
        }

        let s = &self.split;
        let parts = [s.train, s.validation, s.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "split fractions must be non-negative and sum to 1, got {} + {} + {}",
                s.train, s.validation, s.test
            )));
        }
        if s.train <= 0.0 || s.test <= 0.0 {
            return Err(CliError::Config("split.train and split.test must be positive".into()));
        }

        if !(0.0..1.0).contains(&self.dropout.tau) {
            return Err(CliError::Config(format!(
                "dropout.tau must lie in [0, 1), got {}",
                self.dropout.tau
            )));
        }
        let b = &self.backdoor;
        if b.head_epochs == 0 || !(b.head_learning_rate > 0.0 && b.head_learning_rate.is_finite()) {
            return Err(CliError::Config(
                "backdoor.head_epochs and backdoor.head_learning_rate must be positive".into(),
            ));
        }
        if self.gbdt_expert.k_folds < 2 {
            return Err(CliError::Config("gbdt_expert.k_folds must be at least 2".into()));
        }

        let e = &self.eval;
        if e.k == 0 || e.n_buckets == 0 {
            return Err(CliError::Config("eval.k and eval.n_buckets must be positive".into()));
        }
        if e.ci_level != 0.95 {
            return Err(CliError::Config(format!(
                "eval.ci_level must be 0.95, got {}",
                e.ci_level
            )));
        }

        if self.arms.is_empty() {
            return Err(CliError::Config("arms must list at least one arm".into()));
        }
        for (i, a) in self.arms.iter().enumerate() {
            if self.arms[..i].contains(a) {
                return Err(CliError::Config(format!("arm {a} is listed twice")));
            }
        }
        if !self.arms.contains(&Arm::Random) {
            return Err(CliError::Config(
                "arms must include random; bucket results are relative to it".into(),
            ));
        }
        if self.arms.contains(&Arm::TwoTowerBackdoor)
            && b.exam_logit_source == ExamLogitSource::TwoTower
            && !self.arms.contains(&Arm::TwoTower)
        {
            return Err(CliError::Config(
                "two_tower_backdoor reads its examination logits from the two_tower arm; add two_tower to arms".into(),
            ));
        }

        let n_queries = self.world.n_queries as f64;
        let test_queries = (n_queries * s.test).floor() as usize;
        if test_queries < e.n_buckets.max(self.gbdt_expert.k_folds).max(2) {
            return Err(CliError::Config(format!(
                "about {test_queries} test queries cannot fill {} buckets or {} folds",
                e.n_buckets, self.gbdt_expert.k_folds
            )));
        }
        Ok(())
    }

    /// Arms in stage order, whatever order the config lists them in.
    pub fn ordered_arms(&self) -> Vec<Arm> {
        Arm::ALL.into_iter().filter(|a| self.arms.contains(a)).collect()
    }

    pub fn seed(&self, key: &str, purpose: &str) -> u64 {
        derive_seed(self.master_seed, key, purpose)
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed("world", "generate"),
            ..self.world.clone()
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            seed: self.seed("policy", "rank"),
            ..self.policy.clone()
        }
    }

    pub fn click_config(&self) -> ClickConfig {
        ClickConfig {
            seed: self.seed("clicks", "sample"),
            ..self.clicks.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.seed("split", "split")
    }

    pub fn train_config(&self, arm: Arm) -> TrainConfig {
        TrainConfig {
            seed: self.seed(arm.seed_key(), "train"),
            ..self.train.clone()
        }
    }

    pub fn neural_policy_config(&self) -> NeuralPolicyConfig {
        NeuralPolicyConfig {
            seed: self.seed(Arm::PolicyEstimator.seed_key(), "neural"),
            ..self.policy_neural.clone()
        }
    }

    /// The config as JSON without `output_dir`, which legitimately differs
    /// between a config file and the run directory it produced.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }
}
