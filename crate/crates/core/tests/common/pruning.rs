//! Reference oracles for the pruning operators.

use rand::Rng;
use srl_core::net::{Mask, Network};
use srl_core::pruning::{fp, gup, lup, ns, unstructured_count};
use srl_core::rng::rng_from_seed;

use super::{random_dims, random_net};

/// Positions removed by sorting `(|w|, layer, index)` over the given layers.
pub fn sort_oracle(net: &Network, layers: &[usize], count: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, usize, usize)> = layers
        .iter()
        .flat_map(|&l| {
            net.weights()[l]
                .as_slice()
                .iter()
                .enumerate()
                .map(move |(i, w)| (w.abs(), l, i))
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter()
        .take(count)
        .map(|(_, l, i)| (l, i))
        .collect()
}

pub fn pruned_positions(mask: &Mask) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = mask
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, m)| {
            m.bits()
                .iter()
                .enumerate()
                .filter(|(_, &b)| !b)
                .map(move |(i, _)| (l, i))
        })
        .collect();
    out.sort();
    out
}

pub fn removed_units(before: &Mask, after: &Mask, j: usize) -> Vec<usize> {
    let cols = after.layer(j).shape().1;
    (0..cols)
        .filter(|&u| !before.layer(j).column_pruned(u) && after.layer(j).column_pruned(u))
        .collect()
}

/// Every removed unit has its incoming column and outgoing row fully masked,
/// and nothing else changed.
pub fn check_structural(before: &Mask, after: &Mask, hidden: usize) {
    assert!(after.is_subset_of(before));
    let mut expect = before.clone();
    for j in 0..hidden {
        for u in removed_units(before, after, j) {
            let (rows, _) = expect.layer(j).shape();
            for r in 0..rows {
                expect.layer_mut(j).set(r, u, false);
            }
            let (_, cols) = expect.layer(j + 1).shape();
            for c in 0..cols {
                expect.layer_mut(j + 1).set(u, c, false);
            }
        }
    }
    assert_eq!(&expect, after);
}

pub fn incoming_l1(net: &Network, mask: &Mask, j: usize, u: usize) -> f64 {
    let w = &net.weights()[j];
    (0..w.rows())
        .filter(|&r| mask.layer(j).get(r, u))
        .map(|r| w.get(r, u).abs())
        .sum()
}

/// Lexicographically smallest feasible removal set of size `m` by brute force over subsets.
pub fn ns_oracle(net: &Network, live: &[Vec<usize>], target: usize) -> Vec<(usize, usize)> {
    let mut units: Vec<(f64, usize, usize)> = live
        .iter()
        .enumerate()
        .flat_map(|(j, us)| us.iter().map(move |&u| (net.scaling()[j][u].abs(), j, u)))
        .collect();
    units.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n = units.len();
    let feasible = |set: u32| {
        live.iter().enumerate().all(|(j, us)| {
            let removed = (0..n)
                .filter(|&i| set & (1 << i) != 0 && units[i].1 == j)
                .count();
            removed < us.len()
        })
    };
    let max_size = (0..1u32 << n)
        .filter(|&s| feasible(s))
        .map(u32::count_ones)
        .max()
        .unwrap() as usize;
    let size = target.min(max_size);
    // smallest rank sequence first: compare sorted index lists lexicographically
    let best = (0..1u32 << n)
        .filter(|&s| s.count_ones() as usize == size && feasible(s))
        .min_by_key(|&s| (0..n).filter(|&i| s & (1 << i) != 0).collect::<Vec<_>>())
        .unwrap();
    let mut out: Vec<(usize, usize)> = (0..n)
        .filter(|&i| best & (1 << i) != 0)
        .map(|i| (units[i].1, units[i].2))
        .collect();
    out.sort();
    out
}

pub fn live_units(mask: &Mask, hidden: usize) -> Vec<Vec<usize>> {
    (0..hidden)
        .map(|j| {
            (0..mask.layer(j).shape().1)
                .filter(|&u| !mask.layer(j).column_pruned(u))
                .collect()
        })
        .collect()
}

/// GUP against the sort oracle on `nets` random networks.
pub fn check_gup(seed: u64, nets: usize) {
    let mut rng = rng_from_seed(seed);
    for _ in 0..nets {
        let dims = random_dims(&mut rng, 10, 4);
        let net = random_net(&mut rng, &dims);
        let p = rng.random_range(1.0..90.0);
        let total = net.prunable_count();
        let layers: Vec<usize> = (0..net.weights().len()).collect();
        let mut expect = sort_oracle(&net, &layers, unstructured_count(p, total));
        expect.sort();
        match gup(&net, &Mask::ones(net.dims()), p) {
            Ok(mask) => assert_eq!(pruned_positions(&mask), expect),
            Err(_) => {
                let emptied = layers.iter().any(|&l| {
                    expect.iter().filter(|(el, _)| *el == l).count()
                        == net.weights()[l].as_slice().len()
                });
                assert!(emptied, "GUP refused a feasible request");
            }
        }
    }
}

/// LUP against the per-layer sort oracle on `nets` random networks.
pub fn check_lup(seed: u64, nets: usize) {
    let mut rng = rng_from_seed(seed);
    for _ in 0..nets {
        let dims = random_dims(&mut rng, 10, 4);
        let net = random_net(&mut rng, &dims);
        let p = rng.random_range(1.0..90.0);
        let mut expect: Vec<(usize, usize)> = (0..net.weights().len())
            .flat_map(|l| {
                sort_oracle(
                    &net,
                    &[l],
                    unstructured_count(p, net.weights()[l].as_slice().len()),
                )
            })
            .collect();
        expect.sort();
        match lup(&net, &Mask::ones(net.dims()), p) {
            Ok(mask) => assert_eq!(pruned_positions(&mask), expect),
            Err(_) => assert!(net
                .weights()
                .iter()
                .any(|w| unstructured_count(p, w.as_slice().len()) == w.as_slice().len())),
        }
    }
}

/// FP and NS over every hidden-width pair in `2..=4`, with ties and dead units.
pub fn check_structured_exhaustive(seed: u64) {
    let mut rng = rng_from_seed(seed);
    let ratios = [10.0, 25.0, 34.0, 50.0, 66.0, 75.0, 90.0];
    for h1 in 2..=4 {
        for h2 in 2..=4 {
            let dims = [3, h1, h2, 2];
            for trial in 0..20 {
                let mut net = random_net(&mut rng, &dims);
                if trial % 4 == 0 {
                    // exact ties in |γ|
                    for g in net.scaling_mut().iter_mut().flatten() {
                        *g = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    }
                }
                let mut start = Mask::ones(&dims);
                if trial % 3 == 0 {
                    // one unit of the first layer is already dead
                    for r in 0..3 {
                        start.layer_mut(0).set(r, 0, false);
                    }
                    for c in 0..h2 {
                        start.layer_mut(1).set(0, c, false);
                    }
                }
                let live = live_units(&start, 2);
                for &p in &ratios {
                    match fp(&net, &start, p) {
                        Ok(mask) => {
                            check_structural(&start, &mask, 2);
                            for (j, live_j) in live.iter().enumerate() {
                                let removed = removed_units(&start, &mask, j);
                                assert_eq!(
                                    removed.len(),
                                    (p * live_j.len() as f64 / 100.0).floor() as usize
                                );
                                let kept: Vec<usize> = live_j
                                    .iter()
                                    .copied()
                                    .filter(|u| !removed.contains(u))
                                    .collect();
                                assert!(!kept.is_empty());
                                for &r in &removed {
                                    for &k in &kept {
                                        let (lr, lk) = (
                                            incoming_l1(&net, &start, j, r),
                                            incoming_l1(&net, &start, j, k),
                                        );
                                        assert!(lr < lk || (lr == lk && r < k));
                                    }
                                }
                            }
                        }
                        Err(_) => assert!(live
                            .iter()
                            .any(|l| (p * l.len() as f64 / 100.0).floor() as usize >= l.len())),
                    }

                    let out = ns(&net, &start, p).unwrap();
                    check_structural(&start, &out.mask, 2);
                    let after = live_units(&out.mask, 2);
                    assert!(after.iter().all(|l| !l.is_empty()));
                    let total_live: usize = live.iter().map(Vec::len).sum();
                    let target = (p * total_live as f64 / 100.0).floor() as usize;
                    let mut got: Vec<(usize, usize)> = (0..2)
                        .flat_map(|j| {
                            removed_units(&start, &out.mask, j)
                                .into_iter()
                                .map(move |u| (j, u))
                        })
                        .collect();
                    got.sort();
                    assert_eq!(got, ns_oracle(&net, &live, target), "dims {dims:?} p {p}");
                    assert_eq!(out.live_units, total_live);
                    assert_eq!(out.removed_units, got.len());
                    assert_eq!(out.guard_limited, got.len() < target);
                    assert_eq!(out.achieved_ratio, got.len() as f64 / total_live as f64);
                }
            }
        }
    }
}
