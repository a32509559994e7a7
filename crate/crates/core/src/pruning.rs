//! One-shot pruning of dense networks.
//!
//! Unstructured methods (GUP, LUP) mask individual weights by magnitude and
//! round the per-pool count half-up. Structured methods (FP, NS) remove whole
//! hidden units, meaning the unit's incoming column and outgoing row, and
//! round down. Every method prunes only among weights that `mask_in` keeps
//! and returns a mask that is a subset of it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix};
use crate::net::{Mask, Network};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    /// Global unstructured magnitude pruning.
    Gup,
    /// Layer-local unstructured magnitude pruning.
    Lup,
    /// Neuron ("filter") pruning by incoming L1 norm.
    Fp,
    /// Network slimming on per-neuron scaling factors.
    Ns,
}

impl PruneMethod {
    pub fn name(self) -> &'static str {
        match self {
            PruneMethod::Gup => "gup",
            PruneMethod::Lup => "lup",
            PruneMethod::Fp => "fp",
            PruneMethod::Ns => "ns",
        }
    }

    pub fn is_structured(self) -> bool {
        matches!(self, PruneMethod::Fp | PruneMethod::Ns)
    }
}

impl std::str::FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gup" => Ok(PruneMethod::Gup),
            "lup" => Ok(PruneMethod::Lup),
            "fp" => Ok(PruneMethod::Fp),
            "ns" => Ok(PruneMethod::Ns),
            other => Err(Error::InvalidConfig(format!(
                "unknown pruning method {other:?}"
            ))),
        }
    }
}

/// Mask plus bookkeeping returned by [`prune`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub mask: Mask,
    /// For structured methods, fraction of live units removed; otherwise fraction of surviving weights removed.
    pub achieved_ratio: f64,
    /// Set when a guard kept the requested ratio from being reached.
    pub warning: Option<String>,
}

fn check_percent(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidConfig(format!(
            "pruning ratio {p} must lie in (0, 100)"
        )));
    }
    Ok(())
}

/// `round(p% of n)`, halves rounded up.
pub fn unstructured_count(p: f64, n: usize) -> usize {
    (p * n as f64 / 100.0 + 0.5).floor() as usize
}

/// `floor(p% of n)`.
pub fn structured_count(p: f64, n: usize) -> usize {
    (p * n as f64 / 100.0).floor() as usize
}

#[derive(Clone, Copy)]
struct Candidate {
    magnitude: f64,
    layer: usize,
    index: usize,
}

fn by_magnitude_then_position(a: &Candidate, b: &Candidate) -> Ordering {
    a.magnitude
        .total_cmp(&b.magnitude)
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

fn surviving(net: &Network, mask: &Mask, layers: impl Iterator<Item = usize>) -> Vec<Candidate> {
    let mut out = Vec::new();
    for l in layers {
        let keep = mask.layer(l).bits();
        for (index, &w) in net.weights()[l].as_slice().iter().enumerate() {
            if keep[index] {
                out.push(Candidate {
                    magnitude: w.abs(),
                    layer: l,
                    index,
                });
            }
        }
    }
    out
}

fn prune_smallest(mask: &mut Mask, mut pool: Vec<Candidate>, count: usize) {
    pool.sort_by(by_magnitude_then_position);
    for c in pool.into_iter().take(count) {
        mask.layer_mut(c.layer).bits_mut()[c.index] = false;
    }
}

fn guard_no_empty_layer(mask: &Mask) -> Result<()> {
    if let Some(l) = mask.layers().iter().position(|m| m.kept() == 0) {
        return Err(Error::Pruning(format!(
            "layer {} would lose every weight",
            l + 1
        )));
    }
    Ok(())
}

fn prunable_layers(net: &Network, include_final: bool) -> std::ops::Range<usize> {
    let n = net.weights().len();
    if include_final || n == 1 {
        0..n
    } else {
        0..n - 1
    }
}

/// Masks exactly `count` of the surviving weights, smallest magnitude first
/// across every considered layer. Ties break by (layer, row, column).
pub fn gup_count(net: &Network, mask_in: &Mask, count: usize, include_final: bool) -> Result<Mask> {
    mask_in.check_matches(net.weights())?;
    let pool = surviving(net, mask_in, prunable_layers(net, include_final));
    if count > pool.len() {
        return Err(Error::Pruning(format!(
            "{count} weights requested, {} survive",
            pool.len()
        )));
    }
    let mut mask = mask_in.clone();
    prune_smallest(&mut mask, pool, count);
    guard_no_empty_layer(&mask)?;
    Ok(mask)
}

/// Global unstructured pruning of `p`% of the surviving weights, final layer included.
pub fn gup(net: &Network, mask_in: &Mask, p_percent: f64) -> Result<Mask> {
    gup_with(net, mask_in, p_percent, true)
}

pub fn gup_with(
    net: &Network,
    mask_in: &Mask,
    p_percent: f64,
    include_final: bool,
) -> Result<Mask> {
    check_percent(p_percent)?;
    mask_in.check_matches(net.weights())?;
    let survivors = surviving(net, mask_in, prunable_layers(net, include_final)).len();
    gup_count(
        net,
        mask_in,
        unstructured_count(p_percent, survivors),
        include_final,
    )
}

/// Per-layer counts version of LUP; `counts[l]` weights are removed from layer `l`.
pub fn lup_counts(net: &Network, mask_in: &Mask, counts: &[usize]) -> Result<Mask> {
    mask_in.check_matches(net.weights())?;
    let mut mask = mask_in.clone();
    for (l, &count) in counts.iter().enumerate() {
        let pool = surviving(net, mask_in, l..l + 1);
        if count > pool.len() {
            return Err(Error::Pruning(format!(
                "layer {}: {count} weights requested, {} survive",
                l + 1,
                pool.len()
            )));
        }
        prune_smallest(&mut mask, pool, count);
    }
    guard_no_empty_layer(&mask)?;
    Ok(mask)
}

/// Local unstructured pruning: each layer loses `p`% of its own surviving weights.
pub fn lup(net: &Network, mask_in: &Mask, p_percent: f64) -> Result<Mask> {
    lup_with(net, mask_in, p_percent, true)
}

pub fn lup_with(
    net: &Network,
    mask_in: &Mask,
    p_percent: f64,
    include_final: bool,
) -> Result<Mask> {
    check_percent(p_percent)?;
    mask_in.check_matches(net.weights())?;
    let layers = prunable_layers(net, include_final);
    let counts: Vec<usize> = (0..net.weights().len())
        .map(|l| {
            if layers.contains(&l) {
                unstructured_count(p_percent, mask_in.layer(l).kept())
            } else {
                0
            }
        })
        .collect();
    lup_counts(net, mask_in, &counts)
}

/// Hidden unit `unit` of hidden layer `j` (0-based) is live while any incoming weight survives.
fn unit_alive(mask: &Mask, j: usize, unit: usize) -> bool {
    !mask.layer(j).column_pruned(unit)
}

fn remove_unit(mask: &mut Mask, j: usize, unit: usize) {
    let incoming = mask.layer_mut(j);
    for r in 0..incoming.shape().0 {
        incoming.set(r, unit, false);
    }
    let outgoing = mask.layer_mut(j + 1);
    for c in 0..outgoing.shape().1 {
        outgoing.set(unit, c, false);
    }
}

fn incoming_l1(w: &Matrix, mask: &Mask, j: usize, unit: usize) -> f64 {
    (0..w.rows())
        .filter(|&r| mask.layer(j).get(r, unit))
        .map(|r| w.get(r, unit).abs())
        .sum()
}

/// Filter pruning: in every hidden layer, remove the `floor(p%)` live units
/// with the smallest incoming L1 norm (ties by unit index).
pub fn fp(net: &Network, mask_in: &Mask, p_percent: f64) -> Result<Mask> {
    check_percent(p_percent)?;
    mask_in.check_matches(net.weights())?;
    let mut mask = mask_in.clone();
    for j in 0..net.num_hidden() {
        let w = &net.weights()[j];
        let mut live: Vec<(f64, usize)> = (0..w.cols())
            .filter(|&u| unit_alive(mask_in, j, u))
            .map(|u| (incoming_l1(w, mask_in, j, u), u))
            .collect();
        if live.is_empty() {
            return Err(Error::Pruning(format!(
                "hidden layer {} has no live units",
                j + 1
            )));
        }
        let count = structured_count(p_percent, live.len());
        if count >= live.len() {
            return Err(Error::Pruning(format!(
                "hidden layer {} would lose every unit",
                j + 1
            )));
        }
        live.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, u) in live.iter().take(count) {
            remove_unit(&mut mask, j, u);
        }
    }
    Ok(mask)
}

/// Result of network slimming.
#[derive(Debug, Clone, PartialEq)]
pub struct NsOutcome {
    pub mask: Mask,
    pub removed_units: usize,
    pub live_units: usize,
    /// `removed_units / live_units`.
    pub achieved_ratio: f64,
    /// True when the layer guard kept the target from being reached.
    pub guard_limited: bool,
}

/// Network slimming: pool `|γ|` of every live hidden unit and remove the
/// `floor(p%)` smallest, never leaving a layer without a live unit. When a
/// layer is down to its last unit, the next-smallest candidate elsewhere is
/// taken instead.
pub fn ns(net: &Network, mask_in: &Mask, p_percent: f64) -> Result<NsOutcome> {
    check_percent(p_percent)?;
    mask_in.check_matches(net.weights())?;
    let mut candidates = Vec::new();
    let mut live_per_layer = vec![0usize; net.num_hidden()];
    for (j, gamma) in net.scaling().iter().enumerate() {
        for (u, &g) in gamma.iter().enumerate() {
            if unit_alive(mask_in, j, u) {
                live_per_layer[j] += 1;
                candidates.push(Candidate {
                    magnitude: g.abs(),
                    layer: j,
                    index: u,
                });
            }
        }
    }
    let live_units = candidates.len();
    let target = structured_count(p_percent, live_units);
    candidates.sort_by(by_magnitude_then_position);
    let mut mask = mask_in.clone();
    let mut removed = 0;
    for c in candidates {
        if removed == target {
            break;
        }
        if live_per_layer[c.layer] > 1 {
            live_per_layer[c.layer] -= 1;
            remove_unit(&mut mask, c.layer, c.index);
            removed += 1;
        }
    }
    Ok(NsOutcome {
        mask,
        removed_units: removed,
        live_units,
        achieved_ratio: if live_units == 0 {
            0.0
        } else {
            removed as f64 / live_units as f64
        },
        guard_limited: removed < target,
    })
}

/// Dispatches to one of the four methods, final layer included for GUP/LUP.
pub fn prune(
    method: PruneMethod,
    net: &Network,
    mask_in: &Mask,
    p_percent: f64,
) -> Result<PruneOutcome> {
    prune_with(method, net, mask_in, p_percent, true)
}

/// As [`prune`]; `include_final` only affects the unstructured methods.
pub fn prune_with(
    method: PruneMethod,
    net: &Network,
    mask_in: &Mask,
    p_percent: f64,
    include_final: bool,
) -> Result<PruneOutcome> {
    let before = mask_in.kept();
    let ratio = |m: &Mask| {
        if before == 0 {
            0.0
        } else {
            (before - m.kept()) as f64 / before as f64
        }
    };
    match method {
        PruneMethod::Gup | PruneMethod::Lup | PruneMethod::Fp => {
            let mask = match method {
                PruneMethod::Gup => gup_with(net, mask_in, p_percent, include_final)?,
                PruneMethod::Lup => lup_with(net, mask_in, p_percent, include_final)?,
                _ => fp(net, mask_in, p_percent)?,
            };
            Ok(PruneOutcome {
                achieved_ratio: ratio(&mask),
                mask,
                warning: None,
            })
        }
        PruneMethod::Ns => {
            let out = ns(net, mask_in, p_percent)?;
            let warning = out.guard_limited.then(|| {
                format!(
                    "layer guard limited slimming to {:.2}% of units (requested {p_percent}%)",
                    100.0 * out.achieved_ratio
                )
            });
            Ok(PruneOutcome {
                mask: out.mask,
                achieved_ratio: out.achieved_ratio,
                warning,
            })
        }
    }
}

/// Same structure, fresh He-uniform weights on the surviving positions and unit scaling.
pub fn rand_reinit(net: &Network, mask: &Mask, seed: u64) -> Result<Network> {
    mask.check_matches(net.weights())?;
    Network::he_uniform(net.dims(), &mut rng_from_seed(seed))?.apply_mask(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    /// Nonzero effective weights.
    pub l0: usize,
    pub density: f64,
    pub l1: f64,
    /// Frobenius norm.
    pub l2: f64,
    /// ∞-induced norm of the layer map `a ↦ Wᵀa` (max absolute column sum of `W`).
    pub linf_induced: f64,
    pub spectral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub total: usize,
    pub l0: usize,
    pub density: f64,
    pub l1: f64,
    pub l2: f64,
    /// Products over layers of the per-layer induced norms.
    pub linf_induced_product: f64,
    pub spectral_product: f64,
}

impl SparsityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,rows,cols,l0,density,l1,l2,linf_induced,spectral\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                l.layer, l.rows, l.cols, l.l0, l.density, l.l1, l.l2, l.linf_induced, l.spectral
            ));
        }
        out.push_str(&format!(
            "global,,{},{},{},{},{},{},{}\n",
            self.total,
            self.l0,
            self.density,
            self.l1,
            self.l2,
            self.linf_induced_product,
            self.spectral_product
        ));
        out
    }
}

/// Counts and norms of the masked weights, per layer and overall.
pub fn sparsity_report(net: &Network, mask: Option<&Mask>) -> Result<SparsityReport> {
    let effective = match mask {
        Some(m) => net.apply_mask(m)?,
        None => net.clone(),
    };
    let mut layers = Vec::new();
    for (l, w) in effective.weights().iter().enumerate() {
        let vals = w.as_slice();
        let l0 = vals.iter().filter(|&&v| v != 0.0).count();
        layers.push(LayerSparsity {
            layer: l + 1,
            rows: w.rows(),
            cols: w.cols(),
            l0,
            density: l0 as f64 / vals.len() as f64,
            l1: vals.iter().map(|v| v.abs()).sum(),
            l2: vals.iter().map(|v| v * v).sum::<f64>().sqrt(),
            linf_induced: w.max_abs_col_sum(),
            spectral: spectral_norm(w),
        });
    }
    let total = net.prunable_count();
    let l0 = layers.iter().map(|l| l.l0).sum();
    Ok(SparsityReport {
        total,
        l0,
        density: l0 as f64 / total as f64,
        l1: layers.iter().map(|l| l.l1).sum(),
        l2: layers.iter().map(|l| l.l2 * l.l2).sum::<f64>().sqrt(),
        linf_induced_product: layers.iter().map(|l| l.linf_induced).product(),
        spectral_product: layers.iter().map(|l| l.spectral).product(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single_layer(values: &[f64]) -> Network {
        Network::from_weights(vec![
            Matrix::from_vec(values.len() / 2, 2, values.to_vec()).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn gup_magnitude_sort() {
        let net = single_layer(&[0.1, -0.5, 0.3, -0.2]);
        let m = gup(&net, &Mask::ones(net.dims()), 50.0).unwrap();
        assert_eq!(m.layer(0).bits(), &[false, true, true, false]);
    }

    #[test]
    fn ratio_bounds_rejected() {
        let net = single_layer(&[0.1, -0.5, 0.3, -0.2]);
        let ones = Mask::ones(net.dims());
        for p in [0.0, 100.0, -1.0, f64::NAN] {
            assert!(gup(&net, &ones, p).is_err());
            assert!(fp(&net, &ones, p).is_err());
        }
    }

    #[test]
    fn single_layer_lup_equals_gup() {
        let net = Network::he_uniform(&[6, 3], &mut rng_from_seed(2)).unwrap();
        let ones = Mask::ones(net.dims());
        for p in [10.0, 33.0, 50.0, 75.0] {
            assert_eq!(gup(&net, &ones, p).unwrap(), lup(&net, &ones, p).unwrap());
        }
    }

    #[test]
    fn lup_spreads_gup_concentrates() {
        let w1 = Matrix::from_fn(2, 4, |r, c| 0.01 * (1 + r * 4 + c) as f64);
        let w2 = Matrix::from_fn(4, 2, |r, c| 10.0 + (r * 2 + c) as f64);
        let net = Network::from_weights(vec![w1, w2]).unwrap();
        let ones = Mask::ones(net.dims());
        let g = gup(&net, &ones, 25.0).unwrap();
        let l = lup(&net, &ones, 25.0).unwrap();
        assert_eq!(g.layer(0).kept(), 4);
        assert_eq!(g.layer(1).kept(), 8);
        assert_eq!(l.layer(0).kept(), 6);
        assert_eq!(l.layer(1).kept(), 6);
    }

    #[test]
    fn gup_guard_refuses_to_empty_a_layer() {
        let w1 = Matrix::from_fn(1, 2, |_, _| 1e-3);
        let w2 = Matrix::from_fn(2, 2, |_, _| 5.0);
        let net = Network::from_weights(vec![w1, w2]).unwrap();
        assert!(matches!(
            gup(&net, &Mask::ones(net.dims()), 40.0),
            Err(Error::Pruning(_))
        ));
    }

    #[test]
    fn fp_removes_weakest_unit_with_row() {
        // incoming L1 norms 1, 2, 3, 4
        let w1 = Matrix::from_rows(&[vec![1.0, -2.0, 3.0, 4.0]]).unwrap();
        let w2 = Matrix::from_fn(4, 2, |_, _| 1.0);
        let net = Network::from_weights(vec![w1, w2]).unwrap();
        let m = fp(&net, &Mask::ones(net.dims()), 25.0).unwrap();
        assert!(m.layer(0).column_pruned(0));
        assert!(m.layer(1).row_pruned(0));
        assert_eq!(m.zero_count(), 3);
    }

    #[test]
    fn fp_floors_the_count() {
        let net = Network::he_uniform(&[2, 3, 2], &mut rng_from_seed(8)).unwrap();
        let m = fp(&net, &Mask::ones(net.dims()), 50.0).unwrap();
        let removed = (0..3).filter(|&u| m.layer(0).column_pruned(u)).count();
        assert_eq!(removed, 1);
    }

    #[test]
    fn ns_picks_smallest_gamma() {
        let mut net = Network::he_uniform(&[2, 2, 2, 2], &mut rng_from_seed(1)).unwrap();
        net.scaling_mut()[0] = vec![0.01, 1.0];
        net.scaling_mut()[1] = vec![0.5, 0.6];
        let out = ns(&net, &Mask::ones(net.dims()), 25.0).unwrap();
        assert_eq!(out.removed_units, 1);
        assert!(out.mask.layer(0).column_pruned(0));
        assert!(!out.guard_limited);
    }

    #[test]
    fn ns_guard_keeps_one_unit_per_layer() {
        let net = Network::he_uniform(&[2, 2, 2, 2], &mut rng_from_seed(1)).unwrap();
        let out = ns(&net, &Mask::ones(net.dims()), 75.0).unwrap();
        assert_eq!(out.achieved_ratio, 0.5);
        assert!(out.guard_limited);
        let p = prune(PruneMethod::Ns, &net, &Mask::ones(net.dims()), 75.0).unwrap();
        assert!(p.warning.is_some());
    }

    #[test]
    fn ns_equal_gammas_break_ties_by_position() {
        let net = Network::he_uniform(&[2, 4, 4, 2], &mut rng_from_seed(1)).unwrap();
        let out = ns(&net, &Mask::ones(net.dims()), 50.0).unwrap();
        assert_eq!(out.removed_units, 4);
        let removed: Vec<bool> = (0..4).map(|u| out.mask.layer(0).column_pruned(u)).collect();
        assert_eq!(removed, vec![true, true, true, false]);
        assert!(out.mask.layer(1).column_pruned(0));
    }

    #[test]
    fn rand_reinit_respects_mask_and_seed() {
        let net = Network::he_uniform(&[3, 4, 2], &mut rng_from_seed(0)).unwrap();
        let mask = gup(&net, &Mask::ones(net.dims()), 50.0).unwrap();
        let a = rand_reinit(&net, &mask, 5).unwrap();
        assert_eq!(a, rand_reinit(&net, &mask, 5).unwrap());
        for (w, m) in a.weights().iter().zip(mask.layers()) {
            for (v, k) in w.as_slice().iter().zip(m.bits()) {
                if !k {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn report_on_identity_and_zero() {
        let net = Network::from_weights(vec![Matrix::identity(3), Matrix::zeros(3, 2)]).unwrap();
        let r = sparsity_report(&net, None).unwrap();
        let id = &r.layers[0];
        assert_eq!((id.l0, id.l1, id.linf_induced), (3, 3.0, 1.0));
        assert!((id.l2 - 3f64.sqrt()).abs() < 1e-15);
        assert!((id.spectral - 1.0).abs() < 1e-12);
        let z = &r.layers[1];
        assert_eq!(
            (z.l0, z.l1, z.l2, z.linf_induced, z.spectral),
            (0, 0.0, 0.0, 0.0, 0.0)
        );
        assert!(r.to_csv().lines().count() == 4);
    }
}
