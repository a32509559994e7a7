use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Keep/prune pattern for one weight matrix, row-major like the matrix itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLayer {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl MaskLayer {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![false; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::shape(
                "mask layer",
                format!("{} bits for {rows}x{cols}", keep.len()),
            ));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        self.keep[r * self.cols + c] = keep;
    }

    pub fn bits(&self) -> &[bool] {
        &self.keep
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// True when every entry of column `c` is pruned.
    pub fn column_pruned(&self, c: usize) -> bool {
        (0..self.rows).all(|r| !self.get(r, c))
    }

    pub fn row_pruned(&self, r: usize) -> bool {
        (0..self.cols).all(|c| !self.get(r, c))
    }
}

/// Binary mask over every prunable weight of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    layers: Vec<MaskLayer>,
}

impl Mask {
    /// All-ones mask for the layout described by `dims`.
    pub fn ones(dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| MaskLayer::ones(w[0], w[1]))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<MaskLayer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[MaskLayer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &MaskLayer {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut MaskLayer {
        &mut self.layers[l]
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(MaskLayer::len).sum()
    }

    pub fn kept(&self) -> usize {
        self.layers.iter().map(MaskLayer::kept).sum()
    }

    pub fn zero_count(&self) -> usize {
        self.total() - self.kept()
    }

    /// Fraction of prunable weights that are masked.
    pub fn pruning_ratio(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.zero_count() as f64 / self.total() as f64
        }
    }

    /// Entrywise AND.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_same_layout(other)?;
        Ok(Mask {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| MaskLayer {
                    rows: a.rows,
                    cols: a.cols,
                    keep: a.keep.iter().zip(&b.keep).map(|(x, y)| *x && *y).collect(),
                })
                .collect(),
        })
    }

    /// True when every pruned entry of `other` is also pruned here.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.shape() == b.shape() && a.keep.iter().zip(&b.keep).all(|(x, y)| !*x || *y)
            })
    }

    pub fn check_same_layout(&self, other: &Mask) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                "mask",
                format!("{} vs {} layers", self.layers.len(), other.layers.len()),
            ));
        }
        for (l, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    format!("mask layer {l}"),
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Checks that the mask matches a list of weight matrices one-to-one.
    pub fn check_matches(&self, weights: &[Matrix]) -> Result<()> {
        if self.layers.len() != weights.len() {
            return Err(Error::shape(
                "mask",
                format!(
                    "{} mask layers for {} weight matrices",
                    self.layers.len(),
                    weights.len()
                ),
            ));
        }
        for (l, (m, w)) in self.layers.iter().zip(weights).enumerate() {
            if m.shape() != w.shape() {
                return Err(Error::shape(
                    format!("layer {}", l + 1),
                    format!("mask {:?} vs weights {:?}", m.shape(), w.shape()),
                ));
            }
        }
        Ok(())
    }
}
