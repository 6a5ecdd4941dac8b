//! Soft-gated mixture of attention experts on small dense tensors.
//!
//! The fused input `z` (LQ features concatenated with the current HQ
//! estimate) is mean-pooled over tokens, routed by a softmax over
//! `g_i · z̄`, and the expert outputs are combined convexly with those
//! weights. A hard top-k variant is provided for ablation.

mod experts;
mod io;
mod layer;
mod router;
mod tensor;

pub use experts::{expert_forward, ExpertKind, ExpertParams, DEFAULT_KEEP_FRACTION};
pub use io::{read_tensors, write_tensors};
pub use layer::{
    gradient_check, moe_backward, moe_forward, GatingMode, GradCheckReport, GradComponent, MoeGradients, MoeOutput,
    MoeParams, Trainable,
};
pub use router::{router_weights, router_weights_unnormalized, ExpertWeights, RouterParams};
pub use tensor::{fuse, FeatureTensor, Matrix};

use crate::rng::SeededRng;

/// Uniform `[-scale, scale]` entries from `seed`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.uniform_f64() - 1.0))
}

/// Random router and experts of the given kinds, projection entries scaled
/// by `1/√dim`.
pub fn random_params(kinds: &[ExpertKind], dim: usize, seed: u64) -> crate::Result<MoeParams> {
    let mut rng = SeededRng::new(seed);
    let router = RouterParams::new(random_matrix(kinds.len(), dim, 1.0, &mut rng))?;
    let s = 1.0 / (dim as f64).sqrt();
    let experts = kinds
        .iter()
        .map(|&kind| {
            let wq = random_matrix(dim, dim, s, &mut rng);
            let wk = random_matrix(dim, dim, s, &mut rng);
            let wv = random_matrix(dim, dim, s, &mut rng);
            ExpertParams::new(kind, wq, wk, wv)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(MoeParams { router, experts })
}

/// The three expert types in canonical order.
pub const STANDARD_EXPERTS: [ExpertKind; 3] = [ExpertKind::Spatial, ExpertKind::Channel, ExpertKind::Sparse];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(tokens: usize, dim: usize, seed: u64) -> FeatureTensor {
        random_matrix(tokens, dim, 1.0, &mut SeededRng::new(seed))
    }

    /// Weighted sum written independently of the layer code.
    fn reference_combination(z: &FeatureTensor, p: &MoeParams) -> Vec<f64> {
        let pooled: Vec<f64> = (0..z.dim())
            .map(|c| (0..z.tokens()).map(|t| z.get(t, c)).sum::<f64>() / z.tokens() as f64)
            .collect();
        let logits: Vec<f64> = (0..p.experts.len())
            .map(|i| (0..z.dim()).map(|c| p.router.gates().get(i, c) * pooled[c]).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let outs: Vec<FeatureTensor> = p.experts.iter().map(|x| expert_forward(x, z).unwrap()).collect();
        (0..z.tokens() * z.dim())
            .map(|k| (0..outs.len()).map(|i| e[i] / s * outs[i].data()[k]).sum())
            .collect()
    }

    #[test]
    fn single_expert_is_that_expert() {
        let z = input(4, 3, 1);
        let p = random_params(&[ExpertKind::Channel], 3, 2).unwrap();
        let out = moe_forward(&z, &p.experts, &p.router, GatingMode::Soft).unwrap();
        assert_eq!(out.weights.weights(), &[1.0]);
        assert_eq!(out.output, expert_forward(&p.experts[0], &z).unwrap());
    }

    #[test]
    fn identical_experts_ignore_routing() {
        let z = input(5, 4, 3);
        let base = random_params(&[ExpertKind::Spatial], 4, 4).unwrap();
        let e = base.experts[0].clone();
        let common = expert_forward(&e, &z).unwrap();
        for seed in 0..5 {
            let router = RouterParams::new(random_matrix(3, 4, 3.0, &mut SeededRng::new(seed))).unwrap();
            let out = moe_forward(&z, &[e.clone(), e.clone(), e.clone()], &router, GatingMode::Soft).unwrap();
            for (a, b) in out.output.data().iter().zip(common.data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_independent_recomputation() {
        let z = input(6, 5, 7);
        let p = random_params(&STANDARD_EXPERTS, 5, 8).unwrap();
        let out = moe_forward(&z, &p.experts, &p.router, GatingMode::Soft).unwrap();
        let reference = reference_combination(&z, &p);
        for (a, b) in out.output.data().iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn top_all_is_soft() {
        let z = input(4, 3, 9);
        let p = random_params(&STANDARD_EXPERTS, 3, 10).unwrap();
        let soft = moe_forward(&z, &p.experts, &p.router, GatingMode::Soft).unwrap();
        let hard = moe_forward(&z, &p.experts, &p.router, GatingMode::TopK(3)).unwrap();
        assert_eq!(soft, hard);
        assert!(moe_forward(&z, &p.experts, &p.router, GatingMode::TopK(0)).is_err());
        assert!(moe_forward(&z, &p.experts, &p.router, GatingMode::TopK(4)).is_err());
    }

    #[test]
    fn top_one_keeps_the_heaviest() {
        let z = input(4, 3, 11);
        let p = random_params(&STANDARD_EXPERTS, 3, 12).unwrap();
        let soft = router_weights(&p.router, &z).unwrap();
        let best = (0..3).max_by(|&a, &b| soft.weights()[a].total_cmp(&soft.weights()[b])).unwrap();
        let out = moe_forward(&z, &p.experts, &p.router, GatingMode::TopK(1)).unwrap();
        assert_eq!(out.weights.weights()[best], 1.0);
        assert_eq!(out.output, expert_forward(&p.experts[best], &z).unwrap());
    }

    #[test]
    fn gradient_checks_pass() {
        let z = input(5, 4, 13);
        let p = random_params(&STANDARD_EXPERTS, 4, 14).unwrap();
        let soft = gradient_check(GradComponent::Moe(GatingMode::Soft), &z, &p, 1e-5).unwrap();
        assert!(soft.max_relative_error < 1e-4, "{soft:?}");
        assert_eq!(soft.checked + soft.skipped, p.parameter_count());
        let router = gradient_check(GradComponent::Router, &z, &p, 1e-5).unwrap();
        assert!(router.max_relative_error < 1e-4, "{router:?}");
        for i in 0..3 {
            let e = gradient_check(GradComponent::Expert(i), &z, &p, 1e-5).unwrap();
            assert!(e.max_relative_error < 1e-4, "expert {i}: {e:?}");
            let v = gradient_check(GradComponent::ValueProjection(i), &z, &p, 1e-5).unwrap();
            assert!(v.max_relative_error < 1e-8, "value {i}: {v:?}");
        }
        let hard = gradient_check(GradComponent::Moe(GatingMode::TopK(2)), &z, &p, 1e-5).unwrap();
        assert!(hard.max_relative_error < 1e-4, "{hard:?}");
        assert!(gradient_check(GradComponent::Router, &z, &p, 1e-2).is_err());
    }

    #[test]
    fn top_k_tie_is_reported() {
        let z = input(4, 3, 15);
        let mut p = random_params(&STANDARD_EXPERTS, 3, 16).unwrap();
        // Experts 1 and 2 share a gate, so they tie for the second slot.
        let g = p.router.gates().clone();
        let gates = Matrix::from_fn(3, 3, |r, c| if r == 0 { g.get(0, c) + 10.0 * z.mean_rows()[c].signum() } else { g.get(1, c) });
        p.router = RouterParams::new(gates).unwrap();
        let w = router_weights(&p.router, &z).unwrap();
        assert_eq!(w.weights()[1], w.weights()[2]);
        let rep = gradient_check(GradComponent::Moe(GatingMode::TopK(2)), &z, &p, 1e-5).unwrap();
        assert!(rep.hit_nondifferentiable(), "{rep:?}");
    }

    #[test]
    fn frozen_groups_get_zero_gradients() {
        let z = input(3, 3, 17);
        let p = random_params(&STANDARD_EXPERTS, 3, 18).unwrap();
        let ones = Matrix::from_fn(3, 3, |_, _| 1.0);
        let only_router = moe_backward(&z, &p, GatingMode::Soft, &ones, Trainable { router: true, experts: false }).unwrap();
        assert!(only_router.experts.iter().flatten().all(|m| m.data().iter().all(|x| *x == 0.0)));
        assert!(only_router.router.data().iter().any(|x| *x != 0.0));
        let only_experts = moe_backward(&z, &p, GatingMode::Soft, &ones, Trainable { router: false, experts: true }).unwrap();
        assert!(only_experts.router.data().iter().all(|x| *x == 0.0));
    }

    proptest! {
        #[test]
        fn weights_on_simplex_and_shift_invariant(
            seed in any::<u64>(),
            tokens in 1usize..6,
            dim in 1usize..6,
            n in 1usize..5,
            shift in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let mut rng = SeededRng::new(seed);
            let z = random_matrix(tokens, dim, 2.0, &mut rng);
            let router = RouterParams::new(random_matrix(n, dim, 2.0, &mut rng)).unwrap();
            let w = router_weights(&router, &z).unwrap();
            prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(w.weights().iter().all(|x| *x >= 0.0));
            let shifted = router_weights(&router.shifted(&shift[..dim]), &z).unwrap();
            for (a, b) in w.weights().iter().zip(shifted.weights()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn expert_permutation_leaves_output(seed in any::<u64>()) {
            let z = input(4, 3, seed);
            let p = random_params(&STANDARD_EXPERTS, 3, seed ^ 1).unwrap();
            let perm = [2usize, 0, 1];
            let experts: Vec<ExpertParams> = perm.iter().map(|&i| p.experts[i].clone()).collect();
            let gates = Matrix::from_fn(3, 3, |r, c| p.router.gates().get(perm[r], c));
            let router = RouterParams::new(gates).unwrap();
            let a = moe_forward(&z, &p.experts, &p.router, GatingMode::Soft).unwrap();
            let b = moe_forward(&z, &experts, &router, GatingMode::Soft).unwrap();
            prop_assert_eq!(a.output.shape(), z.shape());
            for (r, &i) in perm.iter().enumerate() {
                prop_assert!((b.weights.weights()[r] - a.weights.weights()[i]).abs() <= 1e-15);
            }
            for (x, y) in a.output.data().iter().zip(b.output.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
