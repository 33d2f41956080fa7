//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built eagerly: every builder call computes its value and
//! records the primitive. [`Graph::gradient`] then walks the record
//! backwards. Primitives: elementwise add/sub/mul/div (with broadcasting),
//! scaling by a constant, (batched) matrix multiply, transpose, reshape,
//! concatenate, slice, full and per-axis sums, mean, and the elementwise
//! functions tanh, SiLU, square, sqrt, cos and softplus.

mod check;
mod graph;
mod kernels;

pub use check::{
    central_differences, finite_difference_check, finite_difference_check_with, FD_EPS,
};
pub use graph::{Gradients, Graph, NodeId};

#[cfg(test)]
pub(crate) use graph::{fault, Unary};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn add_is_componentwise() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let m = g.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[3, 2]));
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t), &Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn square_gradient_power_rule() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(3.0), true).unwrap();
        let y = g.square(x).unwrap();
        let grads = g.gradient(y).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let mut g = Graph::new();
        let x = g
            .input("x", Tensor::vector(vec![1.5, -2.0, 0.25]), true)
            .unwrap();
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx).unwrap();
        let grads = g.gradient(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn split_paths_sum_their_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = random(&mut rng, &[4]);
        let path = |g: &mut Graph, x: NodeId, which: u8| -> NodeId {
            match which {
                0 => {
                    let t = g.tanh(x).unwrap();
                    g.sum(t).unwrap()
                }
                _ => {
                    let c = g.cos(x).unwrap();
                    let s = g.square(c).unwrap();
                    g.sum(s).unwrap()
                }
            }
        };
        let grad_of = |which: Option<u8>| {
            let mut g = Graph::new();
            let x = g.input("x", xv.clone(), true).unwrap();
            let loss = match which {
                Some(w) => path(&mut g, x, w),
                None => {
                    let a = path(&mut g, x, 0);
                    let b = path(&mut g, x, 1);
                    g.add(a, b).unwrap()
                }
            };
            g.gradient(loss).unwrap().get("x").unwrap().clone()
        };
        let (ga, gb, both) = (grad_of(Some(0)), grad_of(Some(1)), grad_of(None));
        for i in 0..4 {
            assert!((ga.data()[i] + gb.data()[i] - both.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let a = g.input("a", random(&mut rng, &[3, 3]), true).unwrap();
        let b = g.input("b", random(&mut rng, &[3, 3]), true).unwrap();
        let p = g.matmul(a, b).unwrap();
        let loss = g.sum(p).unwrap();
        for leaf in ["a", "b"] {
            let err = finite_difference_check(&mut g, loss, leaf, 1e-5).unwrap();
            assert!(err < 1e-6, "{leaf}: {err}");
        }
    }

    #[test]
    fn tanh_layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let w = g
            .input("w", random(&mut rng, &[4, 3]).map(|v| 0.3 * v), true)
            .unwrap();
        let x = g.constant(random(&mut rng, &[3, 2]));
        let wx = g.matmul(w, x).unwrap();
        let t = g.tanh(wx).unwrap();
        let loss = g.sum(t).unwrap();
        let err = finite_difference_check(&mut g, loss, "w", 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn affine_loss_has_exact_central_difference() {
        let mut g = Graph::new();
        let x = g
            .input("x", Tensor::vector(vec![0.3, -1.2, 2.0]), true)
            .unwrap();
        let c = g.constant(Tensor::vector(vec![2.0, -1.0, 0.5]));
        let cx = g.mul(c, x).unwrap();
        let s = g.sum(cx).unwrap();
        let loss = g.scale(s, 3.0).unwrap();
        let err = finite_difference_check(&mut g, loss, "x", 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::scalar(1.0), true).unwrap();
        let y = g.square(x).unwrap();
        assert!(finite_difference_check(&mut g, y, "x", 0.0).is_err());
    }

    #[test]
    fn gradient_needs_scalar_loss_and_fresh_values() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let y = g.square(x).unwrap();
        assert!(g.gradient(y).is_err());
        let s = g.sum(y).unwrap();
        g.set_input("x", Tensor::vector(vec![3.0, 4.0])).unwrap();
        assert!(g.gradient(s).is_err());
        g.replay().unwrap();
        assert_eq!(g.value(s).data(), &[25.0]);
        assert!(g.gradient(s).is_ok());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.matmul(a, b).is_ok());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(
            g.div(a, b),
            Err(crate::error::KaeError::NonFinite { op: "div", .. })
        ));
    }

    #[test]
    fn evaluate_returns_named_outputs() {
        let mut g = Graph::new();
        let x = g.input("x", Tensor::vector(vec![1.0, 2.0]), false).unwrap();
        let y = g.square(x).unwrap();
        g.set_output("y", y);
        let out = g
            .evaluate(&[("x", Tensor::vector(vec![3.0, -1.0]))])
            .unwrap();
        assert_eq!(out["y"].data(), &[9.0, 1.0]);
    }

    /// Builds a graph exercising every primitive; returns the scalar loss.
    fn all_primitives(g: &mut Graph, rng: &mut ChaCha8Rng) -> NodeId {
        let a = g.input("a", random(rng, &[2, 3, 4]), true).unwrap();
        let b = g.input("b", random(rng, &[4, 3]), true).unwrap();
        let row = g.input("row", random(rng, &[1, 3]), true).unwrap();
        let ab = g.matmul(a, b).unwrap(); // [2,3,3]
        let bt = g.transpose(b).unwrap(); // [3,4]
        let left = g.matmul(bt, a).unwrap_err(); // [3,4] x [2,3,4] mismatched
        drop(left);
        let flat = g.reshape(ab, &[6, 3]).unwrap();
        let shifted = g.add(flat, row).unwrap();
        let prod = g.mul(shifted, row).unwrap();
        let sq = g.square(prod).unwrap();
        let one = g.scalar(1.0);
        let pos = g.add(sq, one).unwrap();
        let rt = g.sqrt(pos).unwrap();
        let q = g.div(prod, rt).unwrap();
        let t = g.tanh(q).unwrap();
        let s = g.silu(shifted).unwrap();
        let c = g.cos(s).unwrap();
        let sp = g.softplus(c).unwrap();
        let cat = g.concat(&[t, sp], 1).unwrap(); // [6,6]
        let sl = g.slice(cat, 0, 1, 4).unwrap(); // [4,6]
        let sa = g.sum_axis(sl, 1).unwrap(); // [4,1]
        let diff = g.sub(sl, sa).unwrap();
        let scaled = g.scale(diff, 0.7).unwrap();
        let m = g.mean(scaled).unwrap();
        let sq2 = g.square(scaled).unwrap();
        let total = g.sum(sq2).unwrap();
        g.add(total, m).unwrap()
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let loss = all_primitives(&mut g, &mut rng);
        for leaf in ["a", "b", "row"] {
            let err = finite_difference_check(&mut g, loss, leaf, 1e-5).unwrap();
            assert!(err < 1e-5, "{leaf}: {err}");
        }
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let loss = all_primitives(&mut g, &mut rng);
        fault::corrupt(Some(Unary::Silu));
        let err = finite_difference_check(&mut g, loss, "a", 1e-5).unwrap();
        fault::corrupt(None);
        assert!(err > 1e-3, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn replay_is_bit_identical(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let loss = all_primitives(&mut g, &mut rng);
            let before = g.value(loss).clone();
            let grads = g.gradient(loss).unwrap();
            g.replay().unwrap();
            prop_assert_eq!(g.value(loss).data()[0].to_bits(), before.data()[0].to_bits());
            prop_assert_eq!(g.gradient(loss).unwrap(), grads);
        }

        #[test]
        fn elementwise_primitives_match_central_differences(seed in any::<u64>(), which in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let x = g.input("x", random(&mut rng, &[3, 2]), true).unwrap();
            let y = g.input("y", random(&mut rng, &[1, 2]).map(|v| v + 2.5), true).unwrap();
            let out = match which {
                0 => g.add(x, y),
                1 => g.sub(x, y),
                2 => g.mul(x, y),
                3 => g.div(x, y),
                4 => g.tanh(x),
                5 => g.silu(x),
                6 => g.cos(x),
                7 => g.softplus(x),
                8 => g.sqrt(y),
                _ => g.square(x),
            }.unwrap();
            let w = g.constant(random(&mut rng, g.shape(out)));
            let wo = g.mul(out, w).unwrap();
            let loss = g.sum(wo).unwrap();
            for leaf in ["x", "y"] {
                let err = finite_difference_check(&mut g, loss, leaf, 1e-5).unwrap();
                prop_assert!(err < 1e-5, "{} {}: {}", which, leaf, err);
            }
        }
    }
}
