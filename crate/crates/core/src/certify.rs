//! Lipschitz-based robustness certificates and the empirical checks that
//! keep them honest.
//!
//! For a prediction `ŷ` and rival class `k`, the margin `g_ŷ(x) − g_k(x)`
//! divided by an upper bound on the Lipschitz constant of `g_ŷ − g_k` gives a
//! radius inside which the prediction cannot change. The bound used here is
//! global: `‖w_ŷ − w_k‖_q · Π_j ‖W_j‖_p`, where each hidden-layer norm is the
//! `p`-induced norm of the layer map `a ↦ W_jᵀ a` and scaling factors are
//! folded into the following matrix.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::linalg::{induced_norm, Matrix, NormOrder};
use crate::net::{unique_argmax, Mask, Network};
use crate::rng::derive_rng;

const SAMPLE_STREAM: u64 = 0x454c;

/// Perturbation norm `p` together with its dual `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPair {
    /// `p = 2`, `q = 2`.
    L2,
    /// `p = ∞`, `q = 1`.
    Linf,
}

impl NormPair {
    pub const ALL: [NormPair; 2] = [NormPair::L2, NormPair::Linf];

    pub fn p(self) -> NormOrder {
        match self {
            NormPair::L2 => NormOrder::L2,
            NormPair::Linf => NormOrder::Linf,
        }
    }

    pub fn q(self) -> NormOrder {
        match self {
            NormPair::L2 => NormOrder::L2,
            NormPair::Linf => NormOrder::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormPair::L2 => "l2",
            NormPair::Linf => "linf",
        }
    }
}

impl std::str::FromStr for NormPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "2" => Ok(NormPair::L2),
            "linf" | "inf" => Ok(NormPair::Linf),
            other => Err(Error::InvalidConfig(format!(
                "unknown norm pair {other:?} (use l2 or linf)"
            ))),
        }
    }
}

/// Effective weights with the mask applied and every scaling vector folded
/// into the rows of the next matrix, so the network computes
/// `Wᵈᵀ relu(… relu(W¹ᵀ x))`.
pub fn folded_weights(net: &Network, mask: Option<&Mask>) -> Result<Vec<Matrix>> {
    let net = match mask {
        Some(m) => net.apply_mask(m)?,
        None => net.clone(),
    };
    let mut weights = net.weights().to_vec();
    for (j, gamma) in net.scaling().iter().enumerate() {
        let next = &mut weights[j + 1];
        let cols = next.cols();
        for (r, &g) in gamma.iter().enumerate() {
            for v in &mut next.as_mut_slice()[r * cols..(r + 1) * cols] {
                *v *= g;
            }
        }
    }
    Ok(weights)
}

/// `p`-induced norm of the map `a ↦ Wᵀ a`.
pub fn layer_operator_norm(w: &Matrix, p: NormOrder) -> Result<f64> {
    match p {
        NormOrder::L2 => induced_norm(w, NormOrder::L2),
        NormOrder::Linf => induced_norm(w, NormOrder::L1),
        NormOrder::L1 => induced_norm(w, NormOrder::Linf),
    }
}

/// Product of the hidden layers' operator norms; 1 for a linear model.
pub fn hidden_norm_product(folded: &[Matrix], pair: NormPair) -> Result<f64> {
    folded[..folded.len() - 1]
        .iter()
        .map(|w| layer_operator_norm(w, pair.p()))
        .product()
}

fn class_difference(w: &Matrix, y_hat: usize, k: usize) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.get(r, y_hat) - w.get(r, k))
        .collect()
}

fn check_pair(net: &Network, y_hat: usize, k: usize) -> Result<()> {
    let classes = net.num_classes();
    for index in [y_hat, k] {
        if index >= classes {
            return Err(Error::ClassOutOfRange { index, classes });
        }
    }
    if y_hat == k {
        return Err(Error::SameClass(k));
    }
    Ok(())
}

/// Global upper bound on the `q`-norm of `∇(g_ŷ − g_k)`.
pub fn lipschitz_bound(
    net: &Network,
    mask: Option<&Mask>,
    y_hat: usize,
    k: usize,
    pair: NormPair,
) -> Result<f64> {
    check_pair(net, y_hat, k)?;
    let folded = folded_weights(net, mask)?;
    let last = folded.last().expect("at least one layer");
    Ok(pair.q().vector_norm(&class_difference(last, y_hat, k))
        * hidden_norm_product(&folded, pair)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBound {
    pub class: usize,
    pub margin: f64,
    pub bound: f64,
    /// `margin / bound`, `+∞` when the bound is zero and the margin positive.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub x: Vec<f64>,
    /// Top class; the lowest index among tied maxima.
    pub y_hat: usize,
    pub classes: Vec<ClassBound>,
    pub radius: f64,
    pub pair: NormPair,
}

impl LipschitzCertificate {
    pub fn margin_min(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bound_min(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.bound)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Certified radius in the `p`-norm around `x`; zero when the top score is tied.
pub fn certified_radius(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    pair: NormPair,
) -> Result<LipschitzCertificate> {
    let logits = net.forward(mask, x)?;
    let y_hat = (1..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let folded = folded_weights(net, mask)?;
    let product = hidden_norm_product(&folded, pair)?;
    let last = folded.last().expect("at least one layer");
    let classes: Vec<ClassBound> = (0..logits.len())
        .filter(|&k| k != y_hat)
        .map(|k| {
            let margin = logits[y_hat] - logits[k];
            let bound = pair.q().vector_norm(&class_difference(last, y_hat, k)) * product;
            let ratio = if margin <= 0.0 {
                0.0
            } else if bound == 0.0 {
                f64::INFINITY
            } else {
                margin / bound
            };
            ClassBound {
                class: k,
                margin,
                bound,
                ratio,
            }
        })
        .collect();
    let radius = classes
        .iter()
        .map(|c| c.ratio)
        .fold(f64::INFINITY, f64::min);
    Ok(LipschitzCertificate {
        x: x.to_vec(),
        y_hat,
        classes,
        radius,
        pair,
    })
}

/// Uniform draw from the `p`-ball of radius `r` around `x`.
pub fn sample_ball<R: Rng + ?Sized>(x: &[f64], r: f64, pair: NormPair, rng: &mut R) -> Vec<f64> {
    match pair {
        NormPair::Linf => x.iter().map(|&xi| xi + rng.random_range(-r..=r)).collect(),
        NormPair::L2 => {
            let dir: Vec<f64> = x.iter().map(|_| StandardNormal.sample(rng)).collect();
            let norm = NormOrder::L2.vector_norm(&dir);
            let u: f64 = rng.random();
            let scale = if norm > 0.0 {
                r * u.powf(1.0 / x.len() as f64) / norm
            } else {
                0.0
            };
            x.iter().zip(&dir).map(|(xi, d)| xi + scale * d).collect()
        }
    }
}

/// Largest `‖∇(g_ŷ − g_k)‖_q` over `samples` points drawn uniformly from the
/// `p`-ball of radius `radius` around `x`: a lower estimate of the local constant.
#[allow(clippy::too_many_arguments)]
pub fn empirical_lipschitz<R: Rng + ?Sized>(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    k: usize,
    y_hat: usize,
    radius: f64,
    samples: usize,
    pair: NormPair,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 || radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidConfig(
            "need samples >= 1 and radius > 0".into(),
        ));
    }
    let mut best = 0.0f64;
    for _ in 0..samples {
        let xs = sample_ball(x, radius, pair, rng);
        best = best.max(pair.q().vector_norm(&net.grad_input(mask, &xs, k, y_hat)?));
    }
    Ok(best)
}

fn grid_offsets(dim: usize, steps: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-steps..=steps).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Counts grid points in the `p`-ball of radius `r·(1 − 1e-9)` around `x`
/// whose prediction differs from `x`'s top class. Tied predictions count as
/// violations. Only inputs of dimension at most 3 are supported.
pub fn grid_soundness_check(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    r: f64,
    pair: NormPair,
    grid_step: f64,
) -> Result<usize> {
    if x.len() > 3 {
        return Err(Error::GridDimension { dim: x.len() });
    }
    if !grid_step.is_finite() || grid_step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "grid step {grid_step} must be positive"
        )));
    }
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "grid radius {r} must be finite and nonnegative"
        )));
    }
    let logits = net.forward(mask, x)?;
    let y_hat = (1..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let shrunk = r * (1.0 - 1e-9);
    if shrunk == 0.0 {
        return Ok(0);
    }
    let steps = (shrunk / grid_step).floor() as i64;
    let mut violations = 0;
    for offset in grid_offsets(x.len(), steps) {
        let delta: Vec<f64> = offset.iter().map(|&i| i as f64 * grid_step).collect();
        if pair.p().vector_norm(&delta) > shrunk {
            continue;
        }
        let point: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        if unique_argmax(&net.forward(mask, &point)?) != Some(y_hat) {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Settings for the exhaustive grid check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    /// Grid spacing as a fraction of the certified radius.
    pub step_fraction: f64,
    /// Radius used in place of an infinite certificate.
    pub r_max: f64,
}

impl Default for GridCheck {
    fn default() -> Self {
        Self {
            step_fraction: 1.0 / 50.0,
            r_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyRow {
    pub sample: usize,
    pub y_hat: usize,
    pub margin_min: f64,
    pub l_min: f64,
    pub radius: f64,
    pub grid_violations: Option<usize>,
}

pub const CERTIFY_CSV_HEADER: &str = "sample,yhat,margin_min,L_min,radius,grid_violations";

pub fn certify_csv(rows: &[CertifyRow]) -> String {
    let mut out = format!("{CERTIFY_CSV_HEADER}\n");
    for r in rows {
        let grid = r
            .grid_violations
            .map_or_else(|| "NA".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sample, r.y_hat, r.margin_min, r.l_min, r.radius, grid
        ));
    }
    out
}

/// Certifies every example, optionally running the grid check at each radius.
pub fn certify_examples(
    net: &Network,
    mask: Option<&Mask>,
    examples: &[Example],
    pair: NormPair,
    grid: Option<GridCheck>,
) -> Result<Vec<CertifyRow>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(sample, ex)| {
            let cert = certified_radius(net, mask, &ex.x, pair)?;
            let grid_violations = match grid {
                Some(g) => {
                    let r = cert.radius.min(g.r_max);
                    Some(if r > 0.0 {
                        grid_soundness_check(net, mask, &ex.x, r, pair, r * g.step_fraction)?
                    } else {
                        0
                    })
                }
                None => None,
            };
            Ok(CertifyRow {
                sample,
                y_hat: cert.y_hat,
                margin_min: cert.margin_min(),
                l_min: cert.bound_min(),
                radius: cert.radius,
                grid_violations,
            })
        })
        .collect()
}

/// `(k, empirical estimate, bound)` for every rival `k` of the top class at `x`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_for_point(
    net: &Network,
    mask: Option<&Mask>,
    x: &[f64],
    radius: f64,
    samples: usize,
    pair: NormPair,
    seed: u64,
    point: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    let logits = net.forward(mask, x)?;
    let y_hat = (1..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let mut out = Vec::new();
    for k in (0..logits.len()).filter(|&k| k != y_hat) {
        let mut rng = derive_rng(seed, &[SAMPLE_STREAM, point, k as u64]);
        let est = empirical_lipschitz(net, mask, x, k, y_hat, radius, samples, pair, &mut rng)?;
        out.push((k, est, lipschitz_bound(net, mask, y_hat, k, pair)?));
    }
    Ok(out)
}

/// Weight histogram over a closed range with shared edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
    /// Masked positions, excluded from the bins.
    pub masked: usize,
}

impl Histogram {
    pub fn surviving(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    pub fn total(&self) -> usize {
        self.surviving() + self.masked
    }

    /// Share of surviving weights in the bin that contains zero, if any does.
    pub fn near_zero_fraction(&self) -> Option<f64> {
        let bin = self.bin_of(0.0)?;
        let s = self.surviving();
        (s > 0).then(|| self.counts[bin] as f64 / s as f64)
    }

    fn bin_of(&self, v: f64) -> Option<usize> {
        let (lo, hi) = (self.edges[0], *self.edges.last().unwrap());
        if !(v >= lo && v <= hi) {
            return None;
        }
        let bins = self.counts.len();
        let mut i = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        i = i.min(bins - 1);
        while i > 0 && v < self.edges[i] {
            i -= 1;
        }
        while i + 1 < bins && v >= self.edges[i + 1] {
            i += 1;
        }
        Some(i)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "bin,{},{},{c}\n",
                self.edges[i],
                self.edges[i + 1]
            ));
        }
        out.push_str(&format!(
            "underflow,,{},{}\n",
            self.edges[0], self.underflow
        ));
        out.push_str(&format!(
            "overflow,{},,{}\n",
            self.edges[self.counts.len()],
            self.overflow
        ));
        out.push_str(&format!("masked,,,{}\n", self.masked));
        out
    }
}

pub fn weight_histogram(
    net: &Network,
    mask: Option<&Mask>,
    bins: usize,
    range: (f64, f64),
) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "degenerate histogram range [{lo}, {hi}]"
        )));
    }
    if let Some(m) = mask {
        m.check_matches(net.weights())?;
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|i| {
            if i == bins {
                hi
            } else {
                lo + (hi - lo) * i as f64 / bins as f64
            }
        })
        .collect();
    let mut hist = Histogram {
        edges,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
        masked: 0,
    };
    for (l, w) in net.weights().iter().enumerate() {
        for (i, &v) in w.as_slice().iter().enumerate() {
            if mask.is_some_and(|m| !m.layer(l).bits()[i]) {
                hist.masked += 1;
            } else if let Some(b) = hist.bin_of(v) {
                hist.counts[b] += 1;
            } else if v < lo {
                hist.underflow += 1;
            } else {
                hist.overflow += 1;
            }
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn linear_two_class() -> Network {
        // w_1 = (1, 0), w_2 = (0, 1) as columns
        Network::from_weights(vec![Matrix::identity(2)]).unwrap()
    }

    #[test]
    fn linear_radius_closed_form() {
        let c = certified_radius(&linear_two_class(), None, &[1.0, 0.0], NormPair::L2).unwrap();
        assert_eq!(c.y_hat, 0);
        assert!((c.radius - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let c = certified_radius(&linear_two_class(), None, &[1.0, 0.0], NormPair::Linf).unwrap();
        assert!((c.radius - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tie_gives_zero_radius() {
        let c = certified_radius(&linear_two_class(), None, &[0.5, 0.5], NormPair::L2).unwrap();
        assert_eq!(c.radius, 0.0);
        assert_eq!(
            grid_soundness_check(
                &linear_two_class(),
                None,
                &[0.5, 0.5],
                0.0,
                NormPair::L2,
                0.1
            )
            .unwrap(),
            0
        );
    }

    #[test]
    fn dead_network_certifies_nothing() {
        let mut net = Network::he_uniform(&[2, 3, 2], &mut rng_from_seed(0)).unwrap();
        net.weights_mut()[1] = Matrix::zeros(3, 2);
        let c = certified_radius(&net, None, &[1.0, 1.0], NormPair::L2).unwrap();
        assert_eq!((c.radius, c.bound_min()), (0.0, 0.0));
    }

    #[test]
    fn linear_bound_is_exact_difference_norm() {
        let net = Network::he_uniform(&[3, 4], &mut rng_from_seed(5)).unwrap();
        let w = &net.weights()[0];
        for pair in NormPair::ALL {
            let d: Vec<f64> = (0..3).map(|r| w.get(r, 2) - w.get(r, 0)).collect();
            assert_eq!(
                lipschitz_bound(&net, None, 2, 0, pair).unwrap(),
                pair.q().vector_norm(&d)
            );
            let est = empirical_lipschitz(
                &net,
                None,
                &[0.1, 0.2, 0.3],
                0,
                2,
                0.5,
                7,
                pair,
                &mut rng_from_seed(1),
            )
            .unwrap();
            assert!((est - pair.q().vector_norm(&d)).abs() < 1e-14);
        }
    }

    #[test]
    fn doubling_hidden_layers_scales_bound() {
        let net = Network::he_uniform(&[2, 4, 4, 3], &mut rng_from_seed(6)).unwrap();
        let mut doubled = net.clone();
        for j in 0..2 {
            doubled.weights_mut()[j] = doubled.weights()[j].scale(2.0);
        }
        for pair in NormPair::ALL {
            let a = lipschitz_bound(&net, None, 0, 1, pair).unwrap();
            let b = lipschitz_bound(&doubled, None, 0, 1, pair).unwrap();
            assert!((b - 4.0 * a).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn linf_bound_uses_operator_orientation() {
        // Two inputs feeding one hidden unit: ‖J‖∞ = 2, although every row sum of W_1 is 1.
        let w1 = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let net = Network::from_weights(vec![w1, w2]).unwrap();
        let bound = lipschitz_bound(&net, None, 0, 1, NormPair::Linf).unwrap();
        let grad = net.grad_input(None, &[1.0, 1.0], 1, 0).unwrap();
        assert_eq!(NormOrder::L1.vector_norm(&grad), 2.0);
        assert_eq!(bound, 2.0);
    }

    #[test]
    fn scaling_factors_are_folded() {
        let mut net = Network::he_uniform(&[2, 3, 2], &mut rng_from_seed(9)).unwrap();
        let base = lipschitz_bound(&net, None, 0, 1, NormPair::L2).unwrap();
        net.scaling_mut()[0] = vec![3.0; 3];
        let scaled = lipschitz_bound(&net, None, 0, 1, NormPair::L2).unwrap();
        assert!((scaled - 3.0 * base).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn prefix_monotone_sampling() {
        let net = Network::he_uniform(&[2, 6, 3], &mut rng_from_seed(2)).unwrap();
        let mut last = 0.0;
        for n in [1, 5, 20, 80] {
            let est = empirical_lipschitz(
                &net,
                None,
                &[0.2, -0.1],
                1,
                0,
                0.3,
                n,
                NormPair::L2,
                &mut rng_from_seed(4),
            )
            .unwrap();
            assert!(est >= last);
            last = est;
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = rng_from_seed(3);
        for pair in NormPair::ALL {
            for _ in 0..500 {
                let s = sample_ball(&[1.0, 2.0, 3.0], 0.25, pair, &mut rng);
                let d: Vec<f64> = s.iter().zip([1.0, 2.0, 3.0]).map(|(a, b)| a - b).collect();
                assert!(pair.p().vector_norm(&d) <= 0.25 + 1e-12);
            }
        }
    }

    #[test]
    fn grid_check_dimension_guard() {
        let net = Network::he_uniform(&[4, 2], &mut rng_from_seed(0)).unwrap();
        assert!(matches!(
            grid_soundness_check(&net, None, &[0.0; 4], 0.1, NormPair::L2, 0.01),
            Err(Error::GridDimension { dim: 4 })
        ));
    }

    #[test]
    fn grid_check_detects_inflated_radius() {
        let net = linear_two_class();
        let x = [0.6, 0.4];
        let c = certified_radius(&net, None, &x, NormPair::Linf).unwrap();
        assert_eq!(
            grid_soundness_check(&net, None, &x, c.radius, NormPair::Linf, c.radius / 50.0)
                .unwrap(),
            0
        );
        let big = 10.0 * c.radius;
        assert!(grid_soundness_check(&net, None, &x, big, NormPair::Linf, big / 50.0).unwrap() > 0);
    }

    #[test]
    fn histogram_basics() {
        let w = Matrix::from_fn(2, 2, |_, _| 0.5);
        let net = Network::from_weights(vec![w]).unwrap();
        let h = weight_histogram(&net, None, 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![0, 4]);
        let h = weight_histogram(&net, None, 2, (0.0, 0.5)).unwrap();
        assert_eq!(h.counts, vec![0, 4]);
        assert!(weight_histogram(&net, None, 2, (1.0, 1.0)).is_err());
        assert!(weight_histogram(&net, None, 0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn histogram_conservation_with_mask() {
        let net = Network::he_uniform(&[3, 5, 2], &mut rng_from_seed(1)).unwrap();
        let mut mask = Mask::ones(net.dims());
        mask.layer_mut(0).set(0, 0, false);
        mask.layer_mut(1).set(4, 1, false);
        let h = weight_histogram(&net, Some(&mask), 7, (-0.3, 0.3)).unwrap();
        assert_eq!(h.masked, 2);
        assert_eq!(h.total(), net.prunable_count());
        assert_eq!(h.surviving(), mask.kept());
        assert!(h.to_csv().starts_with("kind,bin_lo,bin_hi,count\n"));
    }
}
