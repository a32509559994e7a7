//! SGD-with-momentum adversarial training with fixed-epoch (Stop-E) and
//! plateau-driven (Stop-C) learning-rate control.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, AttackConfig};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::net::{Gradients, Mask, Network};
use crate::rng::derive_rng;

const SHUFFLE_STREAM: u64 = 0x5348;
const TRAIN_ATTACK_STREAM: u64 = 0x4154;
const VAL_ATTACK_STREAM: u64 = 0x5641;

/// How the number of epochs and the learning rate are controlled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopMode {
    /// Fixed budget; the rate is divided by 10 at each third of the epochs.
    StopE { total_epochs: usize },
    /// Rate divided by 10 whenever validation loss stagnates for `patience`
    /// epochs; training stops after `max_decays` decays and one more stagnation window.
    StopC {
        patience: usize,
        relative_threshold: f64,
        max_decays: usize,
        /// Hard cap in case the loss keeps creeping down.
        max_epochs: usize,
    },
    /// Fixed budget at a constant rate.
    Fixed { epochs: usize },
}

impl StopMode {
    pub fn stop_c(patience: usize, relative_threshold: f64, max_decays: usize) -> Self {
        StopMode::StopC {
            patience,
            relative_threshold,
            max_decays,
            max_epochs: 1000,
        }
    }
}

/// Which validation loss drives Stop-C.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationLoss {
    #[default]
    Adversarial,
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` picks `min(128, |train| / 4)`.
    pub batch_size: Option<usize>,
    pub mode: StopMode,
    /// Inner maximisation attack.
    pub attack: AttackConfig,
    /// L1 penalty on the scaling factors; 0 disables it.
    pub ns_l1_lambda: f64,
    pub validation_loss: ValidationLoss,
    pub seed: u64,
}

impl TrainConfig {
    /// lr 0.1, momentum 0.9, weight decay 5e-4, automatic batch size.
    pub fn standard(mode: StopMode, attack: AttackConfig, seed: u64) -> Self {
        Self {
            initial_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: None,
            mode,
            attack,
            ns_l1_lambda: 0.0,
            validation_loss: ValidationLoss::Adversarial,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        let non_negative = |x: f64| x >= 0.0;
        if !non_negative(self.weight_decay) || !non_negative(self.ns_l1_lambda) {
            return bad("weight decay and L1 penalty must be nonnegative".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive".into());
        }
        match self.mode {
            StopMode::StopE { total_epochs } if total_epochs < 3 => {
                return bad(format!(
                    "Stop-E needs at least 3 epochs, got {total_epochs}"
                ))
            }
            StopMode::StopC {
                patience,
                relative_threshold,
                max_decays,
                max_epochs,
            } if patience == 0
                || relative_threshold.is_nan()
                || relative_threshold <= 0.0
                || max_decays == 0
                || max_epochs == 0 =>
            {
                return bad("Stop-C needs patience >= 1, threshold > 0, max_decays >= 1".into())
            }
            StopMode::Fixed { epochs: 0 } => return bad("fixed schedule needs epochs >= 1".into()),
            _ => {}
        }
        self.attack.validate()
    }

    pub fn effective_batch_size(&self, train_len: usize) -> usize {
        self.batch_size
            .unwrap_or_else(|| (train_len / 4).clamp(1, 128))
    }
}

/// Stop-E learning rate: `initial_lr / 10^floor(3 * epoch / total_epochs)`.
pub fn lr_schedule_stop_e(total_epochs: usize, initial_lr: f64, epoch: usize) -> f64 {
    let k = (3 * epoch / total_epochs.max(1)) as i32;
    initial_lr / 10f64.powi(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCAction {
    Continue,
    DecayLr,
    Stop,
}

/// Plateau detector behind Stop-C.
///
/// An epoch improves when its loss is strictly below `best · (1 − threshold)`,
/// where `best` is the lowest loss seen before it. After `patience` epochs
/// without improvement the rate decays and the counter resets; once
/// `max_decays` decays have happened the next full window stops training.
#[derive(Debug, Clone)]
pub struct StopCController {
    patience: usize,
    relative_threshold: f64,
    max_decays: usize,
    best: f64,
    stagnant: usize,
    decays: usize,
}

impl StopCController {
    pub fn new(patience: usize, relative_threshold: f64, max_decays: usize) -> Self {
        Self {
            patience,
            relative_threshold,
            max_decays,
            best: f64::INFINITY,
            stagnant: 0,
            decays: 0,
        }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn observe(&mut self, loss: f64) -> StopCAction {
        if loss < self.best * (1.0 - self.relative_threshold) {
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        self.best = self.best.min(loss);
        if self.stagnant < self.patience {
            return StopCAction::Continue;
        }
        self.stagnant = 0;
        if self.decays >= self.max_decays {
            StopCAction::Stop
        } else {
            self.decays += 1;
            StopCAction::DecayLr
        }
    }
}

/// Runs the controller over a loss history; the output ends at the first `Stop`.
pub fn stop_c_controller(
    losses: &[f64],
    patience: usize,
    relative_threshold: f64,
    max_decays: usize,
) -> Vec<StopCAction> {
    let mut ctl = StopCController::new(patience, relative_threshold, max_decays);
    let mut out = Vec::with_capacity(losses.len());
    for &l in losses {
        let a = ctl.observe(l);
        out.push(a);
        if a == StopCAction::Stop {
            break;
        }
    }
    out
}

/// Momentum buffers plus the optimiser hyper-parameters.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub ns_l1_lambda: f64,
    velocity: Gradients,
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64, ns_l1_lambda: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            ns_l1_lambda,
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    /// `v ← μ v + g + λ w; w ← w − lr v`. Masked weights and their velocity are held at 0.
    /// Scaling factors skip weight decay and take the L1 subgradient `λ₁ sign(γ)` instead.
    pub fn step(
        &mut self,
        net: &mut Network,
        mask: Option<&Mask>,
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        net.check_mask(mask)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (l, (w, (v, g))) in net
            .weights_mut()
            .iter_mut()
            .zip(self.velocity.weights.iter_mut().zip(&grads.weights))
            .enumerate()
        {
            let keep = mask.map(|m| m.layer(l).bits());
            let ws = w.as_mut_slice();
            let vs = v.as_mut_slice();
            for (i, (wi, (vi, &gi))) in ws
                .iter_mut()
                .zip(vs.iter_mut().zip(g.as_slice()))
                .enumerate()
            {
                if keep.is_some_and(|k| !k[i]) {
                    *wi = 0.0;
                    *vi = 0.0;
                    continue;
                }
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= lr * *vi;
            }
        }
        for (gamma, (v, g)) in net
            .scaling_mut()
            .iter_mut()
            .zip(self.velocity.scaling.iter_mut().zip(&grads.scaling))
        {
            for (c, (vi, &gi)) in gamma.iter_mut().zip(v.iter_mut().zip(g)) {
                *vi = self.momentum * *vi + gi + self.ns_l1_lambda * signum0(*c);
                *c -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_adv_loss: f64,
    pub val_loss: f64,
    pub clean_acc: f64,
    pub adv_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub l0: usize,
    pub l1: f64,
    pub l2: f64,
}

/// Per-layer norms of the effective (masked) weights.
pub fn layer_norms(net: &Network, mask: Option<&Mask>) -> Vec<LayerNorms> {
    net.weights()
        .iter()
        .enumerate()
        .map(|(l, w)| {
            let keep = mask.map(|m| m.layer(l).bits());
            let vals = w
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(i, _)| keep.is_none_or(|k| k[*i]))
                .map(|(_, &v)| v);
            let (mut l0, mut l1, mut sq) = (0, 0.0, 0.0);
            for v in vals {
                if v != 0.0 {
                    l0 += 1;
                }
                l1 += v.abs();
                sq += v * v;
            }
            LayerNorms {
                l0,
                l1,
                l2: sq.sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalSummary {
    pub layers: Vec<LayerNorms>,
    pub wall_clock_secs: f64,
}

/// Epoch history of one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub rows: Vec<EpochRow>,
    /// Epoch with the highest clean + adversarial validation accuracy.
    pub best_sum_epoch: Option<usize>,
    pub summary: Option<FinalSummary>,
}

/// Wall-clock time is not part of equality.
impl PartialEq for ExperimentRecord {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.best_sum_epoch == other.best_sum_epoch
            && self.summary.as_ref().map(|s| &s.layers) == other.summary.as_ref().map(|s| &s.layers)
    }
}

pub const HISTORY_CSV_HEADER: &str = "epoch,lr,train_adv_loss,val_loss,clean_acc,adv_acc";

impl ExperimentRecord {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_adv_loss, r.val_loss, r.clean_acc, r.adv_acc
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn final_lr(&self) -> Option<f64> {
        self.rows.last().map(|r| r.lr)
    }

    fn update_best(&mut self) {
        self.best_sum_epoch = self
            .rows
            .iter()
            .fold(None::<&EpochRow>, |best, r| match best {
                Some(b) if b.clean_acc + b.adv_acc >= r.clean_acc + r.adv_acc => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch);
    }
}

struct ValStats {
    adv_loss: f64,
    clean_loss: f64,
    clean_acc: f64,
    adv_acc: f64,
}

fn validation_stats(
    net: &Network,
    mask: Option<&Mask>,
    val: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<ValStats> {
    let per = val
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<(f64, f64, bool, bool)> {
            let mut rng = derive_rng(cfg.seed, &[VAL_ATTACK_STREAM, epoch as u64, i as u64]);
            let adv = pgd_attack(net, mask, &ex.x, ex.label, &cfg.attack, &mut rng)?;
            let clean_logits = net.forward(mask, &ex.x)?;
            let adv_logits = net.forward(mask, &adv)?;
            let clean_ok = crate::net::unique_argmax(&clean_logits) == Some(ex.label);
            let adv_ok = clean_ok && crate::net::unique_argmax(&adv_logits) == Some(ex.label);
            Ok((
                crate::net::cross_entropy(&adv_logits, ex.label).0,
                crate::net::cross_entropy(&clean_logits, ex.label).0,
                clean_ok,
                adv_ok,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = val.len() as f64;
    Ok(ValStats {
        adv_loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        clean_loss: per.iter().map(|p| p.1).sum::<f64>() / n,
        clean_acc: per.iter().filter(|p| p.2).count() as f64 / n,
        adv_acc: per.iter().filter(|p| p.3).count() as f64 / n,
    })
}

/// Adversarial training: every minibatch is replaced by its PGD perturbation
/// before the gradient step. Masked weights stay exactly zero throughout.
///
/// Shuffling and attack randomness derive from `(cfg.seed, epoch, sample)`,
/// so identical inputs give bit-identical weights and records.
pub fn adversarial_train(
    net: &Network,
    mask: Option<&Mask>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<(Network, ExperimentRecord)> {
    cfg.validate()?;
    net.check_mask(mask)?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let started = Instant::now();
    let mut net = match mask {
        Some(m) => net.apply_mask(m)?,
        None => net.clone(),
    };
    let mut opt = Sgd::new(&net, cfg.momentum, cfg.weight_decay, cfg.ns_l1_lambda);
    let batch = cfg.effective_batch_size(train.len());
    let mut record = ExperimentRecord::default();
    let mut lr = cfg.initial_lr;
    let mut plateau = match cfg.mode {
        StopMode::StopC {
            patience,
            relative_threshold,
            max_decays,
            ..
        } => Some(StopCController::new(
            patience,
            relative_threshold,
            max_decays,
        )),
        _ => None,
    };

    for epoch in 0.. {
        match cfg.mode {
            StopMode::StopE { total_epochs } => {
                if epoch >= total_epochs {
                    break;
                }
                lr = lr_schedule_stop_e(total_epochs, cfg.initial_lr, epoch);
            }
            StopMode::Fixed { epochs } if epoch >= epochs => break,
            StopMode::StopC { max_epochs, .. } if epoch >= max_epochs => break,
            _ => {}
        }

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let adv_batch = chunk
                .par_iter()
                .map(|&i| -> Result<Example> {
                    let ex = &train[i];
                    let mut rng =
                        derive_rng(cfg.seed, &[TRAIN_ATTACK_STREAM, epoch as u64, i as u64]);
                    Ok(Example {
                        x: pgd_attack(&net, mask, &ex.x, ex.label, &cfg.attack, &mut rng)?,
                        label: ex.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = net.loss_and_grads(mask, &adv_batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                record.update_best();
                return Err(Error::Diverged {
                    epoch,
                    record: Box::new(record),
                });
            }
            opt.step(&mut net, mask, &grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }

        let stats = validation_stats(&net, mask, val, cfg, epoch)?;
        let val_loss = match cfg.validation_loss {
            ValidationLoss::Adversarial => stats.adv_loss,
            ValidationLoss::Natural => stats.clean_loss,
        };
        if !val_loss.is_finite() {
            record.update_best();
            return Err(Error::Diverged {
                epoch,
                record: Box::new(record),
            });
        }
        record.rows.push(EpochRow {
            epoch,
            lr,
            train_adv_loss: loss_sum / train.len() as f64,
            val_loss,
            clean_acc: stats.clean_acc,
            adv_acc: stats.adv_acc,
        });

        if let Some(ctl) = plateau.as_mut() {
            match ctl.observe(val_loss) {
                StopCAction::Continue => {}
                StopCAction::DecayLr => lr /= 10.0,
                StopCAction::Stop => break,
            }
        }
    }

    record.update_best();
    record.summary = Some(FinalSummary {
        layers: layer_norms(&net, mask),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    });
    Ok((net, record))
}
