//! Iterative adversarial lottery-ticket search with rewinding to the
//! original initialization.
//!
//! Each iteration adversarially trains the current ticket, prunes the
//! smallest surviving weights of the trained network and resets every
//! survivor to its initial value.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::net::{rewind, Mask, Network};
use crate::pruning::{gup_count, lup_counts, unstructured_count};
use crate::rng::derive_seed;
use crate::training::{adversarial_train, ExperimentRecord, StopMode, TrainConfig};

const ITERATION_STREAM: u64 = 0x4c54;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LotteryMethod {
    #[default]
    Gup,
    Lup,
}

/// What the per-iteration ratio is a fraction of.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioSchedule {
    /// `p`% of the original weight count per iteration, so `K` iterations reach `K·p`%.
    #[default]
    Original,
    /// `p`% of the weights still alive at each iteration.
    Remaining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryConfig {
    /// Pruning ratio per iteration, in percent.
    pub p_percent: f64,
    /// Number of prune-and-rewind iterations.
    pub iterations: usize,
    /// Training epochs before each pruning step.
    pub epochs_per_iteration: usize,
    /// Template for each iteration's training; its schedule is replaced.
    pub train: TrainConfig,
    pub method: LotteryMethod,
    pub schedule: RatioSchedule,
    /// Whether the classifier layer joins the pruning pool.
    pub include_final: bool,
}

impl LotteryConfig {
    pub fn new(
        p_percent: f64,
        iterations: usize,
        epochs_per_iteration: usize,
        train: TrainConfig,
    ) -> Self {
        Self {
            p_percent,
            iterations,
            epochs_per_iteration,
            train,
            method: LotteryMethod::Gup,
            schedule: RatioSchedule::Original,
            include_final: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.p_percent > 0.0 && self.p_percent < 100.0) {
            return bad(format!("lottery p {} must lie in (0, 100)", self.p_percent));
        }
        if self.iterations == 0 || self.epochs_per_iteration == 0 {
            return bad("lottery needs at least one iteration and one epoch per iteration".into());
        }
        if self.schedule == RatioSchedule::Original
            && self.iterations as f64 * self.p_percent >= 100.0
        {
            return bad(format!(
                "{} iterations of {}% reach or exceed 100%",
                self.iterations, self.p_percent
            ));
        }
        self.train.validate()
    }

    /// Final cumulative ratio the search aims for, in percent.
    pub fn final_ratio_percent(&self) -> f64 {
        match self.schedule {
            RatioSchedule::Original => self.iterations as f64 * self.p_percent,
            RatioSchedule::Remaining => {
                100.0 * (1.0 - (1.0 - self.p_percent / 100.0).powi(self.iterations as i32))
            }
        }
    }

    /// Training configuration of iteration `k` (1-based).
    pub fn iteration_train_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            mode: schedule_for(self.epochs_per_iteration),
            seed: derive_seed(self.train.seed, &[ITERATION_STREAM, k as u64]),
            ..self.train.clone()
        }
    }
}

/// Stop-E over `epochs`, or a constant rate when there are too few epochs for thirds.
pub fn schedule_for(epochs: usize) -> StopMode {
    if epochs >= 3 {
        StopMode::StopE {
            total_epochs: epochs,
        }
    } else {
        StopMode::Fixed { epochs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryIteration {
    pub iteration: usize,
    /// Fraction of the pool pruned after this iteration.
    pub cumulative_ratio: f64,
    pub pruned_weights: usize,
    pub post_train_clean_acc: f64,
    pub post_train_adv_acc: f64,
    pub record: ExperimentRecord,
}

/// Outcome of the search: the final mask and the rewound network.
#[derive(Debug, Clone, PartialEq)]
pub struct WinningTicket {
    pub mask: Mask,
    /// `θ_0 ⊙ M_K`.
    pub ticket: Network,
    pub iterations: Vec<LotteryIteration>,
}

impl WinningTicket {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,cumulative_ratio,post_train_clean_acc,post_train_adv_acc\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                it.iteration, it.cumulative_ratio, it.post_train_clean_acc, it.post_train_adv_acc
            ));
        }
        out
    }
}

fn pool_layers(net: &Network, include_final: bool) -> Vec<usize> {
    let n = net.weights().len();
    let last = if include_final || n == 1 { n } else { n - 1 };
    (0..last).collect()
}

fn next_mask(trained: &Network, mask: &Mask, k: usize, cfg: &LotteryConfig) -> Result<Mask> {
    let layers = pool_layers(trained, cfg.include_final);
    match cfg.method {
        LotteryMethod::Gup => {
            let pool: usize = layers.iter().map(|&l| mask.layer(l).len()).sum();
            let alive: usize = layers.iter().map(|&l| mask.layer(l).kept()).sum();
            let count = match cfg.schedule {
                RatioSchedule::Original => {
                    unstructured_count(k as f64 * cfg.p_percent, pool).saturating_sub(pool - alive)
                }
                RatioSchedule::Remaining => unstructured_count(cfg.p_percent, alive),
            };
            gup_count(trained, mask, count, cfg.include_final)
        }
        LotteryMethod::Lup => {
            let counts: Vec<usize> = (0..trained.weights().len())
                .map(|l| {
                    if !layers.contains(&l) {
                        return 0;
                    }
                    let (size, alive) = (mask.layer(l).len(), mask.layer(l).kept());
                    match cfg.schedule {
                        RatioSchedule::Original => {
                            unstructured_count(k as f64 * cfg.p_percent, size)
                                .saturating_sub(size - alive)
                        }
                        RatioSchedule::Remaining => unstructured_count(cfg.p_percent, alive),
                    }
                })
                .collect();
            lup_counts(trained, mask, &counts)
        }
    }
}

/// Runs `K` rounds of train, prune and rewind starting from `theta0`.
pub fn find_winning_ticket(
    theta0: &Network,
    train: &[Example],
    val: &[Example],
    cfg: &LotteryConfig,
) -> Result<WinningTicket> {
    cfg.validate()?;
    let layers = pool_layers(theta0, cfg.include_final);
    let pool: usize = layers
        .iter()
        .map(|&l| theta0.weights()[l].as_slice().len())
        .sum();
    let mut mask = Mask::ones(theta0.dims());
    let mut ticket = theta0.clone();
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let (trained, record) = adversarial_train(
            &ticket,
            Some(&mask),
            train,
            val,
            &cfg.iteration_train_config(k),
        )?;
        mask = next_mask(&trained, &mask, k, cfg)?;
        ticket = rewind(&trained, theta0, &mask)?;
        let pruned = pool - layers.iter().map(|&l| mask.layer(l).kept()).sum::<usize>();
        let last = record.last().copied();
        iterations.push(LotteryIteration {
            iteration: k,
            cumulative_ratio: pruned as f64 / pool as f64,
            pruned_weights: pruned,
            post_train_clean_acc: last.map_or(0.0, |r| r.clean_acc),
            post_train_adv_acc: last.map_or(0.0, |r| r.adv_acc),
            record,
        });
    }
    Ok(WinningTicket {
        mask,
        ticket,
        iterations,
    })
}

/// Adversarially trains the ticket to completion with its mask held fixed.
pub fn train_ticket(
    ticket: &Network,
    mask: &Mask,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<(Network, ExperimentRecord)> {
    adversarial_train(ticket, Some(mask), train, val, cfg)
}
