//! Labelled datasets: synthetic 2-D generators and the IDX (MNIST) reader.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, rng_from_seed};

/// One input with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Disjoint index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle of `0..n`, cut into train / val / test by fractions.
    pub fn random(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_val = ((n as f64) * val_frac).round() as usize;
        let n_val = n_val.min(n - n_train.min(n));
        let test = idx.split_off((n_train + n_val).min(n));
        let val = idx.split_off(n_train.min(idx.len()));
        Split {
            train: idx,
            val,
            test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Valid input range, e.g. `[0, 1]` for images; `None` for unbounded synthetic data.
    pub clamp: Option<(f64, f64)>,
}

impl Dataset {
    /// Checks dimensions, label range and that the splits are non-empty and disjoint.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{} inputs vs {} labels",
                    self.inputs.len(),
                    self.labels.len()
                ),
            ));
        }
        let dim = self.dim();
        if let Some(i) = self.inputs.iter().position(|x| x.len() != dim) {
            return Err(Error::shape(
                "dataset",
                format!("sample {i} has wrong dimension"),
            ));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.num_classes,
            });
        }
        let s = &self.split;
        if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
            return Err(Error::InvalidConfig("empty split".into()));
        }
        let mut seen = vec![false; self.inputs.len()];
        for &i in s.train.iter().chain(&s.val).chain(&s.test) {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidConfig(format!(
                    "split index {i} invalid or shared"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn examples(&self, indices: &[usize]) -> Vec<Example> {
        indices
            .iter()
            .map(|&i| Example {
                x: self.inputs[i].clone(),
                label: self.labels[i],
            })
            .collect()
    }

    pub fn train(&self) -> Vec<Example> {
        self.examples(&self.split.train)
    }

    pub fn val(&self) -> Vec<Example> {
        self.examples(&self.split.val)
    }

    pub fn test(&self) -> Vec<Example> {
        self.examples(&self.split.test)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "n must be even and at least 4, got {n}"
        )));
    }
    Ok(())
}

fn noise(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma {sigma}")));
    }
    Ok(if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("valid sigma"))
    } else {
        None
    })
}

fn assemble(
    name: String,
    points: Vec<(Vec<f64>, usize)>,
    num_classes: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<Dataset> {
    let normal = noise(noise_sigma)?;
    let mut rng = derive_rng(seed, &[1]);
    let (mut inputs, labels): (Vec<_>, Vec<_>) = points.into_iter().unzip();
    if let Some(d) = normal {
        for x in &mut inputs {
            for v in x.iter_mut() {
                *v += d.sample(&mut rng);
            }
        }
    }
    let n = inputs.len();
    let ds = Dataset {
        name,
        inputs,
        labels,
        num_classes,
        split: Split::random(n, 0.5, 0.25, derive_seed_split(seed)),
        clamp: None,
    };
    ds.validate()?;
    Ok(ds)
}

fn derive_seed_split(seed: u64) -> u64 {
    crate::rng::derive_seed(seed, &[2])
}

/// Two interleaving half-circles of radius 1: class 0 on the upper arc
/// centred at the origin, class 1 on the lower arc centred at `(1, 0.5)`.
/// Split 50/25/25 into train/val/test.
pub fn gen_two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let half = n / 2;
    let step = PI / (half.max(2) - 1) as f64;
    let mut points = Vec::with_capacity(n);
    for i in 0..half {
        let t = step * i as f64;
        points.push((vec![t.cos(), t.sin()], 0));
    }
    for i in 0..half {
        let t = step * i as f64;
        points.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    assemble("two_moons".into(), points, 2, seed, noise_sigma)
}

/// Isotropic Gaussian blobs whose centres sit on a circle of radius 2 around the
/// origin, so classes are separable by a bias-free linear map.
pub fn gen_blobs(n: usize, num_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    if num_classes < 2 || !n.is_multiple_of(num_classes) {
        return Err(Error::InvalidConfig(format!(
            "{n} samples cannot be balanced over {num_classes} classes"
        )));
    }
    let per = n / num_classes;
    let points = (0..num_classes)
        .flat_map(|k| {
            let a = 2.0 * PI * k as f64 / num_classes as f64 + PI / 4.0;
            std::iter::repeat_n((vec![2.0 * a.cos(), 2.0 * a.sin()], k), per)
        })
        .collect();
    assemble("blobs".into(), points, num_classes, seed, spread)
}

/// Concentric circles: class 0 on radius 1, class 1 on radius `factor`.
pub fn gen_circles(n: usize, noise_sigma: f64, factor: f64, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "factor must lie in (0,1), got {factor}"
        )));
    }
    let half = n / 2;
    let step = 2.0 * PI / half as f64;
    let mut points = Vec::with_capacity(n);
    for (label, r) in [(0, 1.0), (1, factor)] {
        for i in 0..half {
            let t = step * i as f64;
            points.push((vec![r * t.cos(), r * t.sin()], label));
        }
    }
    assemble("circles".into(), points, 2, seed, noise_sigma)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| Error::Idx(format!("{what}: truncated header")))
}

/// Parses in-memory IDX image and label files. Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad image magic 0x{magic:08x}")));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad label magic 0x{magic:08x}")));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if count != label_count {
        return Err(Error::Idx(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let pixels = rows * cols;
    let body = &images[16..];
    let label_body = &labels[8..];
    if body.len() < count * pixels {
        return Err(Error::Idx(format!(
            "image payload truncated: {} of {} bytes",
            body.len(),
            count * pixels
        )));
    }
    if label_body.len() < count {
        return Err(Error::Idx(format!(
            "label payload truncated: {} of {count} bytes",
            label_body.len()
        )));
    }
    let take = limit.map_or(count, |l| l.min(count));
    let inputs: Vec<Vec<f64>> = body
        .chunks_exact(pixels.max(1))
        .take(take)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let labels: Vec<usize> = label_body[..take].iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let split = if take >= 3 {
        Split::random(take, 0.8, 0.1, 0)
    } else {
        Split {
            train: (0..take).collect(),
            val: vec![],
            test: vec![],
        }
    };
    Ok(Dataset {
        name: "mnist".into(),
        inputs,
        labels,
        num_classes,
        split,
        clamp: Some((0.0, 1.0)),
    })
}

pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels, limit)
}
