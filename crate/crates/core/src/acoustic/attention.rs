//! GMM attention with softplus-parameterized forward advance.
//!
//! Each decoder step maps its state to `3K` raw values: mixture logits,
//! raw advances and raw widths. Means move by `softplus(raw_delta) >= 0`,
//! which makes the alignment monotone by construction; widths are floored
//! and the per-position weights renormalized after an additive floor.

use crate::nn::{Graph, NodeId};
use crate::{Mat, Real};

/// Width floor applied after softplus.
pub const SIGMA_FLOOR: Real = 1e-3;
/// Additive floor applied to position weights before renormalization.
pub const WEIGHT_FLOOR: Real = 1e-8;
/// Initial mixture mean, slightly before the first memory position.
pub const MU_INIT: Real = -0.5;

/// Mixture state after one attention step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    /// Component means over memory positions; nondecreasing across steps.
    pub mu: Vec<Real>,
    /// Advance applied this step (softplus of the raw advance).
    pub delta: Vec<Real>,
    /// Component widths (> SIGMA_FLOOR).
    pub sigma: Vec<Real>,
    /// Mixture weights (simplex over components).
    pub weights: Vec<Real>,
}

impl AttentionState {
    /// Fresh state with `k` components at the initial mean.
    pub fn initial(k: usize) -> Self {
        AttentionState {
            mu: vec![MU_INIT; k],
            delta: vec![0.0; k],
            sigma: vec![1.0; k],
            weights: vec![1.0 / k as Real; k],
        }
    }
}

fn softplus(x: Real) -> Real {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Pure-math attention step: from previous means and the raw `3K` vector
/// `[w_logits | raw_delta | raw_sigma]`, produce normalized weights over
/// `n` positions and the advanced state. This is the reference route the
/// graph implementation is checked against.
pub fn gmm_attention_math(mu_prev: &[Real], raw: &[Real], n: usize) -> (Vec<Real>, AttentionState) {
    let k = mu_prev.len();
    assert_eq!(raw.len(), 3 * k, "raw attention vector must be 3K wide");
    let max_logit = raw[..k].iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = raw[..k].iter().map(|x| (x - max_logit).exp()).collect();
    let norm: Real = exps.iter().sum();
    let weights: Vec<Real> = exps.iter().map(|e| e / norm).collect();
    let delta: Vec<Real> = raw[k..2 * k].iter().map(|&x| softplus(x)).collect();
    let sigma: Vec<Real> = raw[2 * k..].iter().map(|&x| softplus(x) + SIGMA_FLOOR).collect();
    let mu: Vec<Real> = mu_prev.iter().zip(&delta).map(|(m, d)| m + d).collect();

    let mut pos = vec![0.0; n];
    for (j, p) in pos.iter_mut().enumerate() {
        let mut acc = 0.0;
        for c in 0..k {
            let z = (j as Real - mu[c]) / sigma[c];
            acc += weights[c] * (-0.5 * z * z).exp();
        }
        *p = acc + WEIGHT_FLOOR;
    }
    let total: Real = pos.iter().sum();
    for p in pos.iter_mut() {
        *p /= total;
    }
    (
        pos,
        AttentionState {
            mu,
            delta,
            sigma,
            weights,
        },
    )
}

/// Graph-side attention step mirroring [`gmm_attention_math`].
/// `raw`: 1 x 3K, `mu_prev`: 1 x K. Returns (weights as N x 1, mu as 1 x K).
pub(crate) fn gmm_attention_graph(
    g: &mut Graph,
    raw: NodeId,
    mu_prev: NodeId,
    n: usize,
) -> (NodeId, NodeId) {
    let k = g.value(mu_prev).ncols();
    debug_assert_eq!(g.value(raw).ncols(), 3 * k);

    let logits = g.slice_cols(raw, 0, k);
    let weights = g.row_softmax(logits); // 1 x K
    let raw_delta = g.slice_cols(raw, k, k);
    let delta = g.softplus(raw_delta);
    let mu = g.add(mu_prev, delta); // 1 x K
    let raw_sigma = g.slice_cols(raw, 2 * k, k);
    let sp_sigma = g.softplus(raw_sigma);
    let sigma = g.add_scalar(sp_sigma, SIGMA_FLOOR); // 1 x K

    let ones = g.constant(Mat::from_elem((n, 1), 1.0));
    let grid = g.constant(Mat::from_shape_fn((n, k), |(j, _)| j as Real));
    let mu_b = g.matmul(ones, mu); // N x K
    let diff = g.sub(grid, mu_b);
    let sq = g.mul(diff, diff);
    let sigma_b = g.matmul(ones, sigma); // N x K
    let var = g.mul(sigma_b, sigma_b);
    let var2 = g.scale(var, 2.0);
    let inv = g.recip(var2);
    let expo_arg = g.mul(sq, inv);
    let neg = g.scale(expo_arg, -1.0);
    let gauss = g.exp(neg); // N x K
    let w_col = g.transpose(weights); // K x 1
    let mixed = g.matmul(gauss, w_col); // N x 1
    let floored = g.add_scalar(mixed, WEIGHT_FLOOR);
    let total = g.sum_all(floored); // 1 x 1
    let total_b = g.matmul(ones, total); // N x 1
    let inv_total = g.recip(total_b);
    let normalized = g.mul(floored, inv_total);
    (normalized, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_raw_advance_moves_means_by_ln_two() {
        let (_, state) = gmm_attention_math(&[0.0, 1.0, 2.0], &[0.0; 9], 5);
        for (m, prev) in state.mu.iter().zip([0.0, 1.0, 2.0]) {
            assert!((m - prev - (2.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn tight_single_component_peaks_at_its_mean() {
        // One component advanced to mu' = 3 with a tight width.
        // raw: logits (any), raw_delta with softplus = 3.5, raw_sigma very negative.
        let mu_prev = [-0.5];
        let raw_delta = (3.5f64.exp() - 1.0).ln(); // softplus^{-1}(3.5)
        let raw = [0.0, raw_delta, -30.0];
        let (w, state) = gmm_attention_math(&mu_prev, &raw, 7);
        assert!((state.mu[0] - 3.0).abs() < 1e-9);
        let argmax = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 3);
    }

    #[test]
    fn weights_always_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mu = vec![-0.5; 3];
        for _ in 0..50 {
            let raw: Vec<Real> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (w, state) = gmm_attention_math(&mu, &raw, 11);
            let sum: Real = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|x| *x >= 0.0));
            for (new, old) in state.mu.iter().zip(&mu) {
                assert!(new >= old, "means must not decrease");
            }
            mu = state.mu;
        }
    }

    #[test]
    fn graph_route_matches_math_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1usize, 4, 9] {
            let mu_prev: Vec<Real> = (0..3).map(|_| rng.random_range(-1.0..4.0)).collect();
            let raw: Vec<Real> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (w_math, state) = gmm_attention_math(&mu_prev, &raw, n);

            let mut g = Graph::new();
            let raw_node = g.constant_row(&raw);
            let mu_node = g.constant_row(&mu_prev);
            let (w_node, mu_next) = gmm_attention_graph(&mut g, raw_node, mu_node, n);
            for (j, expect) in w_math.iter().enumerate() {
                assert!((g.value(w_node)[[j, 0]] - expect).abs() < 1e-12);
            }
            for (c, expect) in state.mu.iter().enumerate() {
                assert!((g.value(mu_next)[[0, c]] - expect).abs() < 1e-12);
            }
        }
    }
}
