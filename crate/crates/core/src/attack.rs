//! L∞ projected gradient descent adversary and the distortion-bound metric.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::net::{Mask, Network};
use crate::rng::derive_rng;

/// Threat model and optimiser settings for one PGD run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L∞ radius in input units.
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    /// Valid input interval, if any.
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
    /// Independent starts; the first one that flips the prediction wins.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

impl AttackConfig {
    pub fn new(epsilon: f64, step_size: f64, iterations: usize) -> Self {
        Self {
            epsilon,
            step_size,
            iterations,
            random_start: false,
            clamp: None,
            restarts: 1,
        }
    }

    /// Image protocol used for adversarial training: ε = 8/255, step 2/255, 10 iterations.
    pub fn image_training() -> Self {
        Self {
            clamp: Some((0.0, 1.0)),
            ..Self::new(8.0 / 255.0, 2.0 / 255.0, 10)
        }
    }

    /// Image evaluation protocol: as training but 100 iterations with a random start.
    pub fn image_evaluation() -> Self {
        Self {
            iterations: 100,
            random_start: true,
            ..Self::image_training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack epsilon {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack step size {} must be > 0",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "attack iterations must be >= 1".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("attack restarts must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.clamp {
            if lo.partial_cmp(&hi) != Some(Ordering::Less) {
                return Err(Error::InvalidConfig(format!("clamp [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Same attack at a different radius, keeping the step-to-radius ratio.
    pub fn at_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            step_size: epsilon * (self.step_size / self.epsilon),
            ..*self
        }
    }
}

/// Largest value `≤ center + eps` whose computed distance to `center` does not exceed `eps`,
/// and symmetrically below.
fn ball_bounds(center: f64, eps: f64) -> (f64, f64) {
    let mut hi = center + eps;
    while hi - center > eps {
        hi = hi.next_down();
    }
    let mut lo = center - eps;
    while center - lo > eps {
        lo = lo.next_up();
    }
    (lo, hi)
}

fn project(point: &mut [f64], center: &[f64], eps: f64, clamp: Option<(f64, f64)>) {
    for (p, &c) in point.iter_mut().zip(center) {
        let (lo, hi) = ball_bounds(c, eps);
        *p = p.clamp(lo, hi);
        if let Some((a, b)) = clamp {
            *p = p.clamp(a, b);
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_in_clamp(x: &[f64], clamp: Option<(f64, f64)>) -> Result<()> {
    if let Some((lo, hi)) = clamp {
        if x.iter().any(|&v| v < lo || v > hi) {
            return Err(Error::InvalidConfig(format!(
                "input outside clamp range [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Untargeted L∞ PGD on the cross-entropy of `label`.
///
/// Every iterate is projected onto the ε-ball around `x` and then onto the
/// clamp interval, so the returned point always satisfies both constraints.
pub fn pgd_attack<R: Rng + ?Sized>(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_in_clamp(x, cfg.clamp)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.restarts {
        let mut adv = x.to_vec();
        if cfg.random_start {
            for v in adv.iter_mut() {
                *v += rng.random_range(-cfg.epsilon..=cfg.epsilon);
            }
            project(&mut adv, x, cfg.epsilon, cfg.clamp);
        }
        for _ in 0..cfg.iterations {
            let (_, grad) = net.loss_input_grad(mask, &adv, label)?;
            for (a, g) in adv.iter_mut().zip(&grad) {
                *a += cfg.step_size * sign(*g);
            }
            project(&mut adv, x, cfg.epsilon, cfg.clamp);
        }
        if cfg.restarts == 1 {
            return Ok(adv);
        }
        if net.predict(mask, &adv)? != Some(label) {
            return Ok(adv);
        }
        let loss = net.loss_input_grad(mask, &adv, label)?.0;
        if best.as_ref().is_none_or(|(l, _)| loss > *l) {
            best = Some((loss, adv));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Clean and adversarial accuracy of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub clean_correct: usize,
    pub adversarial_correct: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

/// Clean / adversarial accuracy. A sample is adversarially correct only if it
/// is cleanly correct and the attack leaves the prediction unchanged; ties
/// count as errors. Sample `i` draws its attack randomness from `(seed, i)`.
pub fn evaluate(
    net: &Network,
    mask: Option<&Mask>,
    data: &[Example],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    cfg.validate()?;
    let outcomes = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<(bool, bool)> {
            let clean = net.predict(mask, &ex.x)? == Some(ex.label);
            if !clean {
                return Ok((false, false));
            }
            let mut rng = derive_rng(seed, &[i as u64]);
            let adv = pgd_attack(net, mask, &ex.x, ex.label, cfg, &mut rng)?;
            Ok((true, net.predict(mask, &adv)? == Some(ex.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let clean_correct = outcomes.iter().filter(|o| o.0).count();
    let adversarial_correct = outcomes.iter().filter(|o| o.1).count();
    let n = data.len() as f64;
    Ok(Evaluation {
        samples: data.len(),
        clean_correct,
        adversarial_correct,
        clean_accuracy: clean_correct as f64 / n,
        adversarial_accuracy: adversarial_correct as f64 / n,
    })
}

/// Settings for the minimum-ε search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSearchConfig {
    pub epsilon_max: f64,
    /// Absolute tolerance on the returned radius.
    pub resolution: f64,
    /// Template attack; its ε is replaced per probe and its step scaled along.
    pub attack: AttackConfig,
}

impl DistortionSearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.resolution.is_nan() || self.resolution <= 0.0 {
            return Err(Error::InvalidConfig(
                "distortion resolution must be > 0".into(),
            ));
        }
        if self.epsilon_max.partial_cmp(&self.resolution) != Some(Ordering::Greater) {
            return Err(Error::InvalidConfig(
                "distortion epsilon_max must exceed the resolution".into(),
            ));
        }
        Ok(())
    }
}

/// Smallest PGD radius that changes the prediction of `x`, to within `resolution`.
///
/// Returns `Some(0.0)` if `x` is already misclassified and `None` if even
/// `epsilon_max` does not flip it. The search brackets by doubling from the
/// resolution, then bisects; the upper (flipping) end is returned.
pub fn distortion_bound(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    label: usize,
    cfg: &DistortionSearchConfig,
    seed: u64,
) -> Result<Option<f64>> {
    cfg.validate()?;
    if net.predict(mask, x)? != Some(label) {
        return Ok(Some(0.0));
    }
    let flips = |eps: f64| -> Result<bool> {
        let attack = cfg.attack.at_epsilon(eps);
        let mut rng = derive_rng(seed, &[eps.to_bits()]);
        let adv = pgd_attack(net, mask, x, label, &attack, &mut rng)?;
        Ok(net.predict(mask, &adv)? != Some(label))
    };

    let mut lo = 0.0;
    let mut hi = cfg.resolution;
    loop {
        if hi >= cfg.epsilon_max {
            hi = cfg.epsilon_max;
            if !flips(hi)? {
                return Ok(None);
            }
            break;
        }
        if flips(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > cfg.resolution {
        let mid = 0.5 * (lo + hi);
        if flips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSample {
    pub index: usize,
    pub clean_correct: bool,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub samples: Vec<DistortionSample>,
    /// Mean over samples with a finite bound; `None` if there are none.
    pub mean: Option<f64>,
    pub none_count: usize,
}

impl DistortionSummary {
    /// CSV with columns `sample_index,clean_correct,bound_or_NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_index,clean_correct,bound_or_NA\n");
        for s in &self.samples {
            let bound = s.bound.map_or_else(|| "NA".to_string(), |b| format!("{b}"));
            out.push_str(&format!(
                "{},{},{}\n",
                s.index,
                u8::from(s.clean_correct),
                bound
            ));
        }
        out
    }
}

/// Per-sample distortion bounds and their average.
pub fn mean_distortion(
    net: &Network,
    mask: Option<&Mask>,
    data: &[Example],
    cfg: &DistortionSearchConfig,
    seed: u64,
) -> Result<DistortionSummary> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let samples = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<DistortionSample> {
            let clean_correct = net.predict(mask, &ex.x)? == Some(ex.label);
            let bound = distortion_bound(
                net,
                mask,
                &ex.x,
                ex.label,
                cfg,
                crate::rng::derive_seed(seed, &[i as u64]),
            )?;
            Ok(DistortionSample {
                index: i,
                clean_correct,
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = samples.iter().filter_map(|s| s.bound).collect();
    let none_count = samples.len() - finite.len();
    let mean = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    Ok(DistortionSummary {
        samples,
        mean,
        none_count,
    })
}
