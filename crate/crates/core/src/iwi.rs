//! Inverse weights inheritance: a trained winning ticket seeds the dense
//! network, whose pruned positions fall back to the original initialization,
//! and the dense network then continues adversarial training with no mask.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::lottery::{find_winning_ticket, schedule_for, LotteryConfig, WinningTicket};
use crate::net::{Mask, Network};
use crate::rng::derive_seed;
use crate::training::{adversarial_train, ExperimentRecord, StopMode, TrainConfig};

const FINETUNE_STREAM: u64 = 0x4654;
const CONTINUE_STREAM: u64 = 0x434e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwiConfig {
    pub lottery: LotteryConfig,
    /// Adversarial fine-tuning epochs of the ticket.
    pub finetune_epochs: usize,
    /// Schedule of the dense continuation phase.
    pub continuation: StopMode,
    /// Start the continuation at the fine-tune's final rate instead of the initial one.
    pub resume_lr: bool,
}

impl IwiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.finetune_epochs == 0 {
            return Err(Error::InvalidConfig(
                "fine-tune epochs must be at least 1".into(),
            ));
        }
        self.lottery.validate()?;
        self.continuation_config(None).validate()
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            mode: schedule_for(self.finetune_epochs),
            seed: derive_seed(self.lottery.train.seed, &[FINETUNE_STREAM]),
            ..self.lottery.train.clone()
        }
    }

    /// Dense-phase configuration; `resume_from` is the fine-tune's final rate.
    pub fn continuation_config(&self, resume_from: Option<f64>) -> TrainConfig {
        let initial_lr = match (self.resume_lr, resume_from) {
            (true, Some(lr)) => lr,
            _ => self.lottery.train.initial_lr,
        };
        TrainConfig {
            mode: self.continuation,
            initial_lr,
            seed: derive_seed(self.lottery.train.seed, &[CONTINUE_STREAM]),
            ..self.lottery.train.clone()
        }
    }

    /// Epochs spent before the dense phase: search plus fine-tune.
    pub fn pre_continuation_epochs(&self) -> usize {
        self.lottery.iterations * self.lottery.epochs_per_iteration + self.finetune_epochs
    }

    /// Baseline configuration: the dense-phase configuration with its budget
    /// stretched to the whole pipeline's epoch count.
    pub fn baseline_config(&self, continuation_epochs: usize) -> TrainConfig {
        let budget = self.pre_continuation_epochs() + continuation_epochs;
        let mode = match self.continuation {
            StopMode::StopE { .. } => StopMode::StopE {
                total_epochs: budget,
            },
            StopMode::Fixed { .. } => StopMode::Fixed { epochs: budget },
            StopMode::StopC {
                patience,
                relative_threshold,
                max_decays,
                ..
            } => StopMode::StopC {
                patience,
                relative_threshold,
                max_decays,
                max_epochs: budget,
            },
        };
        TrainConfig {
            mode,
            ..self.continuation_config(None)
        }
    }
}

/// `θ' ⊙ M + θ_0 ⊙ (1 − M)`, entry by entry. Scaling factors come from `θ'`.
pub fn compose_inherited(
    trained_ticket: &Network,
    theta0: &Network,
    mask: &Mask,
) -> Result<Network> {
    if !trained_ticket.same_layout(theta0) {
        return Err(Error::shape(
            "compose_inherited",
            "ticket and initialization differ in layout",
        ));
    }
    mask.check_matches(theta0.weights())?;
    let mut out = trained_ticket.clone();
    for ((w, w0), m) in out
        .weights_mut()
        .iter_mut()
        .zip(theta0.weights())
        .zip(mask.layers())
    {
        for ((v, &v0), &keep) in w.as_mut_slice().iter_mut().zip(w0.as_slice()).zip(m.bits()) {
            if !keep {
                *v = v0;
            }
        }
    }
    Ok(out)
}

/// Artifacts of every phase.
#[derive(Debug, Clone, PartialEq)]
pub struct IwiOutcome {
    pub ticket: WinningTicket,
    /// `θ'`, the fine-tuned ticket.
    pub finetuned: Network,
    pub finetune_record: ExperimentRecord,
    /// Dense network right after composition, before any continuation step.
    pub inherited: Network,
    /// `θ''`.
    pub network: Network,
    pub continuation_record: ExperimentRecord,
}

impl IwiOutcome {
    pub fn total_epochs(&self) -> usize {
        self.ticket
            .iterations
            .iter()
            .map(|it| it.record.rows.len())
            .sum::<usize>()
            + self.finetune_record.rows.len()
            + self.continuation_record.rows.len()
    }
}

pub fn inverse_weights_inheritance(
    theta0: &Network,
    train: &[Example],
    val: &[Example],
    cfg: &IwiConfig,
) -> Result<IwiOutcome> {
    cfg.validate()?;
    let ticket = find_winning_ticket(theta0, train, val, &cfg.lottery)?;
    let (finetuned, finetune_record) = adversarial_train(
        &ticket.ticket,
        Some(&ticket.mask),
        train,
        val,
        &cfg.finetune_config(),
    )?;
    let inherited = compose_inherited(&finetuned, theta0, &ticket.mask)?;
    let cont_cfg = cfg.continuation_config(finetune_record.final_lr());
    let (network, continuation_record) =
        adversarial_train(&inherited, None, train, val, &cont_cfg)?;
    Ok(IwiOutcome {
        ticket,
        finetuned,
        finetune_record,
        inherited,
        network,
        continuation_record,
    })
}

/// Dense adversarial training from `theta0` with the same total budget as the pipeline.
pub fn baseline_train(
    theta0: &Network,
    train: &[Example],
    val: &[Example],
    cfg: &IwiConfig,
    continuation_epochs: usize,
) -> Result<(Network, ExperimentRecord)> {
    cfg.validate()?;
    adversarial_train(
        theta0,
        None,
        train,
        val,
        &cfg.baseline_config(continuation_epochs),
    )
}
