//! Experiment configuration files.
//!
//! Configs are TOML; `train.lr = 0.05` at top level and `lr = 0.05` under a
//! `[train]` table mean the same thing. Every table rejects unknown keys.
//! Omitted keys take the desk-scale defaults: two-moons with 1000 points, a
//! 2-16-16-2 network, ε = 0.1 with step 0.025, PGD-10 for training, PGD-100
//! for evaluation and seeds 0, 1, 2.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, DistortionSearchConfig};
use crate::certify::{GridCheck, NormPair};
use crate::data::{gen_blobs, gen_circles, gen_two_moons, load_mnist_idx, Dataset};
use crate::error::{Error, Result};
use crate::iwi::IwiConfig;
use crate::lottery::{LotteryConfig, LotteryMethod, RatioSchedule};
use crate::pruning::PruneMethod;
use crate::training::{StopMode, TrainConfig, ValidationLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    Blobs {
        n: usize,
        classes: usize,
        spread: f64,
    },
    Circles {
        n: usize,
        noise: f64,
        factor: f64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n: 1000,
            noise: 0.1,
        }
    }
}

impl DatasetSpec {
    /// Builds the dataset; synthetic generators draw from `seed`.
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::TwoMoons { n, noise } => gen_two_moons(*n, *noise, seed),
            DatasetSpec::Blobs { n, classes, spread } => gen_blobs(*n, *classes, *spread, seed),
            DatasetSpec::Circles { n, noise, factor } => gen_circles(*n, *noise, *factor, seed),
            DatasetSpec::Mnist {
                images,
                labels,
                limit,
            } => load_mnist_idx(images, labels, *limit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub dims: Vec<usize>,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            dims: vec![2, 16, 16, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    StopE,
    StopC,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: Option<usize>,
    pub mode: ModeKind,
    /// Epoch budget for Stop-E and fixed schedules.
    pub epochs: usize,
    pub patience: usize,
    pub threshold: f64,
    pub max_decays: usize,
    pub max_epochs: usize,
    pub ns_l1: f64,
    pub validation_loss: ValidationLoss,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: None,
            mode: ModeKind::StopE,
            epochs: 60,
            patience: 10,
            threshold: 1e-3,
            max_decays: 2,
            max_epochs: 300,
            ns_l1: 1e-4,
            validation_loss: ValidationLoss::Adversarial,
        }
    }
}

impl TrainSection {
    pub fn stop_mode(&self) -> StopMode {
        self.stop_mode_with(self.epochs)
    }

    /// Schedule of the configured kind with `epochs` replacing the budget.
    pub fn stop_mode_with(&self, epochs: usize) -> StopMode {
        match self.mode {
            ModeKind::StopE => StopMode::StopE {
                total_epochs: epochs,
            },
            ModeKind::Fixed => StopMode::Fixed { epochs },
            ModeKind::StopC => StopMode::StopC {
                patience: self.patience,
                relative_threshold: self.threshold,
                max_decays: self.max_decays,
                max_epochs: self.max_epochs,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub eps: f64,
    pub step: f64,
    pub iters: usize,
    pub random_start: bool,
    pub restarts: usize,
    /// Input range; the dataset's own hint is used when absent.
    pub clamp: Option<(f64, f64)>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            eps: 0.1,
            step: 0.025,
            iters: 10,
            random_start: false,
            restarts: 1,
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iters: usize,
    pub random_start: bool,
    pub restarts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iters: 100,
            random_start: true,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub methods: Vec<PruneMethod>,
    /// Ratios in percent.
    pub ratios: Vec<f64>,
    /// Adversarial retraining epochs after pruning.
    pub retrain_epochs: usize,
    /// Whether GUP/LUP also prune the classifier layer.
    pub include_final: bool,
    /// Also train each pruned structure from a fresh random initialization.
    pub rand_reinit: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            methods: vec![
                PruneMethod::Gup,
                PruneMethod::Lup,
                PruneMethod::Fp,
                PruneMethod::Ns,
            ],
            ratios: vec![50.0, 80.0],
            retrain_epochs: 30,
            include_final: true,
            rand_reinit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotterySection {
    pub p: f64,
    pub k: usize,
    /// Training epochs before each pruning step.
    pub n: usize,
    /// Epochs for training the final ticket.
    pub train_epochs: usize,
    pub method: LotteryMethod,
    pub schedule: RatioSchedule,
}

impl Default for LotterySection {
    fn default() -> Self {
        Self {
            p: 20.0,
            k: 3,
            n: 5,
            train_epochs: 60,
            method: LotteryMethod::Gup,
            schedule: RatioSchedule::Original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IwiSection {
    pub nf: usize,
    pub continue_epochs: usize,
    /// Continue with Stop-C (using the train section's settings) instead of Stop-E.
    pub stop_c: bool,
    pub resume_lr: bool,
}

impl Default for IwiSection {
    fn default() -> Self {
        Self {
            nf: 30,
            continue_epochs: 12,
            stop_c: false,
            resume_lr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub pairs: Vec<NormPair>,
    /// Number of test points certified.
    pub points: usize,
    pub grid: bool,
    pub grid_step_fraction: f64,
    pub r_max: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            pairs: NormPair::ALL.to_vec(),
            points: 64,
            grid: true,
            grid_step_fraction: 1.0 / 50.0,
            r_max: 10.0,
        }
    }
}

impl CertifySection {
    pub fn grid_check(&self) -> Option<GridCheck> {
        self.grid.then_some(GridCheck {
            step_fraction: self.grid_step_fraction,
            r_max: self.r_max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSection {
    pub eps_max: f64,
    pub resolution: f64,
    /// Number of test points searched.
    pub points: usize,
    pub iters: usize,
}

impl Default for DistortionSection {
    fn default() -> Self {
        Self {
            eps_max: 2.0,
            resolution: 1e-3,
            points: 50,
            iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistSection {
    pub bins: usize,
    pub range: (f64, f64),
}

impl Default for HistSection {
    fn default() -> Self {
        Self {
            bins: 40,
            range: (-2.0, 2.0),
        }
    }
}

/// Phases `run_experiment` can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Prune,
    Lottery,
    Iwi,
    Certify,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Prune => "prune",
            Phase::Lottery => "lottery",
            Phase::Iwi => "iwi",
            Phase::Certify => "certify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub pipeline: Vec<Phase>,
    pub dataset: DatasetSpec,
    pub net: NetSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub prune: PruneSection,
    pub lottery: LotterySection,
    pub iwi: IwiSection,
    pub certify: CertifySection,
    pub distortion: DistortionSection,
    pub hist: HistSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
            pipeline: vec![
                Phase::Train,
                Phase::Prune,
                Phase::Lottery,
                Phase::Iwi,
                Phase::Certify,
            ],
            dataset: DatasetSpec::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
            attack: AttackSection::default(),
            eval: EvalSection::default(),
            prune: PruneSection::default(),
            lottery: LotterySection::default(),
            iwi: IwiSection::default(),
            certify: CertifySection::default(),
            distortion: DistortionSection::default(),
            hist: HistSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 over the canonical JSON form, as lowercase hex. The output
    /// directory is left out so relocated runs share a digest.
    pub fn digest(&self) -> String {
        let located = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let canonical = serde_json::to_vec(&located).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.net.dims.len() < 2 || self.net.dims.contains(&0) {
            return bad("net.dims needs at least input and output widths, all positive");
        }
        if self.prune.ratios.iter().any(|&p| !(p > 0.0 && p < 100.0)) {
            return bad("prune.ratios must lie in (0, 100)");
        }
        if self.prune.retrain_epochs == 0 || self.lottery.train_epochs == 0 {
            return bad("retrain and ticket epochs must be positive");
        }
        if self.certify.points == 0 || self.distortion.points == 0 {
            return bad("certify.points and distortion.points must be positive");
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.certify.grid_step_fraction) || !positive(self.certify.r_max) {
            return bad("certify.grid_step_fraction and certify.r_max must be positive");
        }
        self.train_config(0, None).validate()?;
        self.eval_attack(None).validate()?;
        self.distortion_config(None).validate()?;
        self.iwi_config(0, None).validate()?;
        if self.hist.bins == 0 || !positive(self.hist.range.1 - self.hist.range.0) {
            return bad("hist needs bins >= 1 and a nonempty range");
        }
        Ok(())
    }

    fn clamp(&self, dataset_clamp: Option<(f64, f64)>) -> Option<(f64, f64)> {
        self.attack.clamp.or(dataset_clamp)
    }

    pub fn train_attack(&self, dataset_clamp: Option<(f64, f64)>) -> AttackConfig {
        AttackConfig {
            epsilon: self.attack.eps,
            step_size: self.attack.step,
            iterations: self.attack.iters,
            random_start: self.attack.random_start,
            clamp: self.clamp(dataset_clamp),
            restarts: self.attack.restarts,
        }
    }

    pub fn eval_attack(&self, dataset_clamp: Option<(f64, f64)>) -> AttackConfig {
        AttackConfig {
            iterations: self.eval.iters,
            random_start: self.eval.random_start,
            restarts: self.eval.restarts,
            ..self.train_attack(dataset_clamp)
        }
    }

    pub fn distortion_config(&self, dataset_clamp: Option<(f64, f64)>) -> DistortionSearchConfig {
        DistortionSearchConfig {
            epsilon_max: self.distortion.eps_max,
            resolution: self.distortion.resolution,
            attack: AttackConfig {
                iterations: self.distortion.iters,
                ..self.eval_attack(dataset_clamp)
            },
        }
    }

    pub fn train_config(&self, seed: u64, dataset_clamp: Option<(f64, f64)>) -> TrainConfig {
        TrainConfig {
            initial_lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            mode: self.train.stop_mode(),
            attack: self.train_attack(dataset_clamp),
            ns_l1_lambda: self.train.ns_l1,
            validation_loss: self.train.validation_loss,
            seed,
        }
    }

    pub fn lottery_config(&self, seed: u64, dataset_clamp: Option<(f64, f64)>) -> LotteryConfig {
        LotteryConfig {
            method: self.lottery.method,
            schedule: self.lottery.schedule,
            include_final: self.prune.include_final,
            ..LotteryConfig::new(
                self.lottery.p,
                self.lottery.k,
                self.lottery.n,
                self.train_config(seed, dataset_clamp),
            )
        }
    }

    pub fn iwi_config(&self, seed: u64, dataset_clamp: Option<(f64, f64)>) -> IwiConfig {
        let continuation = if self.iwi.stop_c {
            StopMode::StopC {
                patience: self.train.patience,
                relative_threshold: self.train.threshold,
                max_decays: self.train.max_decays,
                max_epochs: self.train.max_epochs,
            }
        } else {
            StopMode::StopE {
                total_epochs: self.iwi.continue_epochs,
            }
        };
        IwiConfig {
            lottery: self.lottery_config(seed, dataset_clamp),
            finetune_epochs: self.iwi.nf,
            continuation,
            resume_lr: self.iwi.resume_lr,
        }
    }
}
