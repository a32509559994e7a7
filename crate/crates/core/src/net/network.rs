//! Bias-free dense ReLU network.
//!
//! Layer `j` holds a matrix `W_j` of shape `n_{j-1} x n_j` and computes
//! `a_j = γ_j ⊙ relu(W_jᵀ a_{j-1})`. The last matrix maps to the `c` class
//! scores with no activation, so `g_k(x) = w_kᵀ a_{d-1}` where `w_k` is the
//! k-th column of the last matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::Mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    /// One factor per hidden unit, hidden layers only.
    scaling: Vec<Vec<f64>>,
}

/// Which hidden units were strictly active for one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    /// The diagonal 0/1 matrix of hidden layer `j` (0-based).
    pub fn diagonal(&self, j: usize) -> Matrix {
        let d = &self.layers[j];
        Matrix::from_fn(
            d.len(),
            d.len(),
            |r, c| {
                if r == c && d[r] {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().flatten().filter(|&&a| a).count()
    }
}

/// Gradients shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub scaling: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            scaling: net.scaling.iter().map(|g| vec![0.0; g.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.scaling.iter().flatten().all(|v| v.is_finite())
    }

    fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        self.scaling.iter_mut().flatten().for_each(|v| *v *= s);
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    /// `a_0 = x, a_1, .., a_{d-1}`.
    activations: Vec<Vec<f64>>,
    /// Hidden pre-activations `z_1..z_{d-1}`.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Network {
    /// Validates shapes: consecutive matrices chain, at least one matrix,
    /// every width ≥ 1, at least two classes, and one scaling vector per hidden layer.
    pub fn new(weights: Vec<Matrix>, scaling: Vec<Vec<f64>>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::shape("network", "no weight matrices"))?;
        let mut dims = vec![first.rows()];
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != *dims.last().unwrap() {
                return Err(Error::shape(
                    format!("layer {}", l + 1),
                    format!("expected {} rows, found {}", dims.last().unwrap(), w.rows()),
                ));
            }
            dims.push(w.cols());
        }
        if dims.contains(&0) {
            return Err(Error::shape("network", format!("zero width in {dims:?}")));
        }
        if *dims.last().unwrap() < 2 {
            return Err(Error::shape("network", "need at least two classes"));
        }
        let hidden = &dims[1..dims.len() - 1];
        if scaling.len() != hidden.len() || scaling.iter().zip(hidden).any(|(g, &n)| g.len() != n) {
            return Err(Error::shape(
                "scaling factors",
                format!("expected widths {hidden:?}"),
            ));
        }
        Ok(Self {
            dims,
            weights,
            scaling,
        })
    }

    /// Network with unit scaling factors.
    pub fn from_weights(weights: Vec<Matrix>) -> Result<Self> {
        let scaling = weights
            .iter()
            .take(weights.len().saturating_sub(1))
            .map(|w| vec![1.0; w.cols()])
            .collect();
        Self::new(weights, scaling)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape("network", "dims needs at least two entries"));
        }
        Self::from_weights(dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect())
    }

    /// He-style uniform initialisation `U(-√(6/fan_in), √(6/fan_in))`, unit scaling.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for w in &mut net.weights {
            let bound = (6.0 / w.rows() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn scaling(&self) -> &[Vec<f64>] {
        &self.scaling
    }

    pub fn scaling_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.scaling
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of hidden layers (`d - 1`).
    pub fn num_hidden(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn prunable_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    pub fn same_layout(&self, other: &Network) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn check_mask(&self, mask: Option<&Mask>) -> Result<()> {
        match mask {
            Some(m) => m.check_matches(&self.weights),
            None => Ok(()),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "layer 1 input",
                format!("expected length {}, found {}", self.input_dim(), x.len()),
            ));
        }
        Ok(())
    }

    #[inline]
    fn effective(&self, mask: Option<&Mask>, layer: usize, idx: usize) -> f64 {
        match mask {
            Some(m) if !m.layer(layer).bits()[idx] => 0.0,
            _ => self.weights[layer].as_slice()[idx],
        }
    }

    /// `Wᵀ a` with masked entries read as zero; summation runs over rows in order.
    fn layer_product(&self, mask: Option<&Mask>, layer: usize, a: &[f64]) -> Vec<f64> {
        let w = &self.weights[layer];
        let cols = w.cols();
        let mut z = vec![0.0; cols];
        for (r, &ar) in a.iter().enumerate() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.effective(mask, layer, r * cols + c) * ar;
            }
        }
        z
    }

    fn trace(&self, mask: Option<&Mask>, x: &[f64]) -> Trace {
        let hidden = self.num_hidden();
        let mut activations = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        activations.push(x.to_vec());
        for j in 0..hidden {
            let z = self.layer_product(mask, j, activations.last().unwrap());
            let a = z
                .iter()
                .zip(&self.scaling[j])
                .map(|(&zi, &g)| if zi > 0.0 { zi * g } else { 0.0 })
                .collect();
            pre.push(z);
            activations.push(a);
        }
        let logits = self.layer_product(mask, hidden, activations.last().unwrap());
        Trace {
            activations,
            pre,
            logits,
        }
    }

    /// Class scores `g_k(x)` for every class.
    pub fn forward(&self, mask: Option<&Mask>, x: &[f64]) -> Result<Vec<f64>> {
        self.check_mask(mask)?;
        self.check_input(x)?;
        Ok(self.trace(mask, x).logits)
    }

    pub fn forward_with_pattern(
        &self,
        mask: Option<&Mask>,
        x: &[f64],
    ) -> Result<(Vec<f64>, ActivationPattern)> {
        self.check_mask(mask)?;
        self.check_input(x)?;
        let t = self.trace(mask, x);
        let layers = t
            .pre
            .iter()
            .map(|z| z.iter().map(|&v| v > 0.0).collect())
            .collect();
        Ok((t.logits, ActivationPattern { layers }))
    }

    /// Index of the unique largest score, or `None` on a tie.
    pub fn predict(&self, mask: Option<&Mask>, x: &[f64]) -> Result<Option<usize>> {
        Ok(unique_argmax(&self.forward(mask, x)?))
    }

    /// Backpropagates `upstream = ∂L/∂logits` through one traced pass.
    /// Accumulates parameter gradients into `grads` (if given) and returns `∂L/∂x`.
    fn backward(
        &self,
        mask: Option<&Mask>,
        trace: &Trace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        let hidden = self.num_hidden();
        let mut delta = upstream.to_vec();
        for layer in (0..=hidden).rev() {
            let a_in = &trace.activations[layer];
            let w = &self.weights[layer];
            let cols = w.cols();
            if let Some(g) = grads.as_deref_mut() {
                let gw = g.weights[layer].as_mut_slice();
                let keep = mask.map(|m| m.layer(layer).bits());
                for (r, &ar) in a_in.iter().enumerate() {
                    for (c, &dc) in delta.iter().enumerate() {
                        let idx = r * cols + c;
                        if keep.is_none_or(|k| k[idx]) {
                            gw[idx] += ar * dc;
                        }
                    }
                }
            }
            // ∂L/∂a_{layer} = W δ
            let mut da = vec![0.0; w.rows()];
            for (r, dr) in da.iter_mut().enumerate() {
                for (c, &dc) in delta.iter().enumerate() {
                    *dr += self.effective(mask, layer, r * cols + c) * dc;
                }
            }
            if layer == 0 {
                return da;
            }
            let j = layer - 1;
            let z = &trace.pre[j];
            let gamma = &self.scaling[j];
            if let Some(g) = grads.as_deref_mut() {
                for (i, gs) in g.scaling[j].iter_mut().enumerate() {
                    if z[i] > 0.0 {
                        *gs += da[i] * z[i];
                    }
                }
            }
            delta = da
                .iter()
                .enumerate()
                .map(|(i, &d)| if z[i] > 0.0 { d * gamma[i] } else { 0.0 })
                .collect();
        }
        unreachable!("loop returns at the input layer")
    }

    /// Mean softmax cross-entropy over the batch and its exact gradients.
    /// Gradient entries at masked positions are exactly zero.
    pub fn loss_and_grads(
        &self,
        mask: Option<&Mask>,
        batch: &[Example],
    ) -> Result<(f64, Gradients)> {
        self.check_mask(mask)?;
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for ex in batch {
            self.check_input(&ex.x)?;
            self.check_label(ex.label)?;
            let trace = self.trace(mask, &ex.x);
            let (loss, dlogits) = cross_entropy(&trace.logits, ex.label);
            total += loss;
            self.backward(mask, &trace, &dlogits, Some(&mut grads));
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Cross-entropy of one sample and its gradient with respect to the input.
    pub fn loss_input_grad(
        &self,
        mask: Option<&Mask>,
        x: &[f64],
        label: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_mask(mask)?;
        self.check_input(x)?;
        self.check_label(label)?;
        let trace = self.trace(mask, x);
        let (loss, dlogits) = cross_entropy(&trace.logits, label);
        Ok((loss, self.backward(mask, &trace, &dlogits, None)))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, mask: Option<&Mask>, batch: &[Example]) -> Result<f64> {
        self.check_mask(mask)?;
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_input(&ex.x)?;
            self.check_label(ex.label)?;
            total += cross_entropy(&self.trace(mask, &ex.x).logits, ex.label).0;
        }
        Ok(total / batch.len() as f64)
    }

    /// `∇_x (g_ŷ(x) − g_k(x))`, using the strict-positivity subgradient at kinks.
    pub fn grad_input(
        &self,
        mask: Option<&Mask>,
        x: &[f64],
        k: usize,
        y_hat: usize,
    ) -> Result<Vec<f64>> {
        self.check_mask(mask)?;
        self.check_input(x)?;
        self.check_class(k)?;
        self.check_class(y_hat)?;
        if k == y_hat {
            return Err(Error::SameClass(k));
        }
        let trace = self.trace(mask, x);
        let mut upstream = vec![0.0; self.num_classes()];
        upstream[y_hat] = 1.0;
        upstream[k] = -1.0;
        Ok(self.backward(mask, &trace, &upstream, None))
    }

    /// Copy of the network with masked weights set to exactly zero.
    pub fn apply_mask(&self, mask: &Mask) -> Result<Network> {
        mask.check_matches(&self.weights)?;
        let mut out = self.clone();
        for (w, m) in out.weights.iter_mut().zip(mask.layers()) {
            for (v, &keep) in w.as_mut_slice().iter_mut().zip(m.bits()) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    fn check_class(&self, index: usize) -> Result<()> {
        if index >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                index,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }
}

/// Resets the surviving weights to the initial network: returns `initial ⊙ mask`.
/// `current` only has to share the layout.
pub fn rewind(current: &Network, initial: &Network, mask: &Mask) -> Result<Network> {
    if !current.same_layout(initial) {
        return Err(Error::shape(
            "rewind",
            format!("{:?} vs {:?}", current.dims(), initial.dims()),
        ));
    }
    initial.apply_mask(mask)
}

/// Numerically stable softmax cross-entropy; returns the loss and `∂loss/∂logits`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

/// Index of the strictly largest entry; ties (or NaN) yield `None`.
pub fn unique_argmax(v: &[f64]) -> Option<usize> {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    let unique = v.iter().enumerate().all(|(i, &x)| i == best || x < v[best]);
    unique.then_some(best)
}
