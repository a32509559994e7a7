//! Central finite-difference checks of every analytical gradient.

use rand::Rng;
use srl_core::data::Example;
use srl_core::net::{Mask, Network};
use srl_core::rng::rng_from_seed;

use super::{random_dims, random_mask, random_net, random_vec};

const H: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Analytical gradients of masked weights that were not exactly zero.
    pub masked_nonzero: usize,
}

impl GradCheck {
    fn record(&mut self, analytical: f64, fd: f64) {
        self.max_rel_error = self.max_rel_error.max(rel_err(analytical, fd));
        self.checked += 1;
    }
}

fn same_patterns(net: &Network, mask: Option<&Mask>, xs: &[&[f64]], base: &Network) -> bool {
    xs.iter().all(|x| {
        net.forward_with_pattern(mask, x).unwrap().1
            == base.forward_with_pattern(mask, x).unwrap().1
    })
}

/// Perturbations that flip an activation pattern are skipped: the loss is
/// not differentiable across that kink.
pub fn check_gradients(
    seed: u64,
    nets: usize,
    max_width: usize,
    max_depth: usize,
    keep: Option<f64>,
) -> GradCheck {
    let mut rng = rng_from_seed(seed);
    let mut out = GradCheck::default();
    for _ in 0..nets {
        let dims = random_dims(&mut rng, max_width, max_depth);
        let net = random_net(&mut rng, &dims);
        let mask = keep.map(|k| random_mask(&mut rng, &net, k));
        let mask = mask.as_ref();
        let classes = *dims.last().unwrap();
        let batch: Vec<Example> = (0..3)
            .map(|_| Example {
                x: random_vec(&mut rng, dims[0]),
                label: rng.random_range(0..classes),
            })
            .collect();
        let xs: Vec<&[f64]> = batch.iter().map(|e| e.x.as_slice()).collect();
        let (_, grads) = net.loss_and_grads(mask, &batch).unwrap();
        let fd = |plus: &Network, minus: &Network| {
            (plus.loss(mask, &batch).unwrap() - minus.loss(mask, &batch).unwrap()) / (2.0 * H)
        };

        for l in 0..net.weights().len() {
            for i in 0..net.weights()[l].as_slice().len() {
                let an = grads.weights[l].as_slice()[i];
                if mask.is_some_and(|m| !m.layer(l).bits()[i]) {
                    out.masked_nonzero += usize::from(an != 0.0);
                    continue;
                }
                let mut plus = net.clone();
                plus.weights_mut()[l].as_mut_slice()[i] += H;
                let mut minus = net.clone();
                minus.weights_mut()[l].as_mut_slice()[i] -= H;
                if same_patterns(&plus, mask, &xs, &net) && same_patterns(&minus, mask, &xs, &net) {
                    out.record(an, fd(&plus, &minus));
                }
            }
        }
        for j in 0..net.scaling().len() {
            for u in 0..net.scaling()[j].len() {
                let mut plus = net.clone();
                plus.scaling_mut()[j][u] += H;
                let mut minus = net.clone();
                minus.scaling_mut()[j][u] -= H;
                if same_patterns(&plus, mask, &xs, &net) && same_patterns(&minus, mask, &xs, &net) {
                    out.record(grads.scaling[j][u], fd(&plus, &minus));
                }
            }
        }

        let ex = &batch[0];
        let other = (ex.label + 1) % classes;
        let (_, g) = net.loss_input_grad(mask, &ex.x, ex.label).unwrap();
        let gm = net.grad_input(mask, &ex.x, other, ex.label).unwrap();
        let pattern = net.forward_with_pattern(mask, &ex.x).unwrap().1;
        let loss = |v: &[f64]| {
            net.loss(
                mask,
                &[Example {
                    x: v.to_vec(),
                    label: ex.label,
                }],
            )
            .unwrap()
        };
        let margin = |v: &[f64]| {
            let o = net.forward(mask, v).unwrap();
            o[ex.label] - o[other]
        };
        for i in 0..ex.x.len() {
            let mut xp = ex.x.clone();
            xp[i] += H;
            let mut xm = ex.x.clone();
            xm[i] -= H;
            if net.forward_with_pattern(mask, &xp).unwrap().1 != pattern
                || net.forward_with_pattern(mask, &xm).unwrap().1 != pattern
            {
                continue;
            }
            out.record(g[i], (loss(&xp) - loss(&xm)) / (2.0 * H));
            out.record(gm[i], (margin(&xp) - margin(&xm)) / (2.0 * H));
        }
    }
    out
}
