//! Training objectives as graph builders.
//!
//! Fields are `[B, C·H·W]` rows laid out channel-major; latents are
//! `[B, Nz]`. Reductions: sum over channels and weighted time, mean over
//! batch (and space for the mean-squared terms).

mod spectral;
mod terms;
mod weights;

pub use spectral::{loss_spectral, loss_spectral_value};
pub use terms::{
    loss_cosine_dir, loss_energy, loss_latent_consistency, loss_linearity, loss_pred, loss_recon,
    loss_sobolev_space, loss_sobolev_time, COSINE_EPS,
};
pub use weights::{
    cosine_weights, temporal_weights, LossReport, LossTerms, LossWeights, TemporalWeighting,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Graph, NodeId};
    use crate::linalg::{fft2, matrix_exp, SquareMatrix};
    use crate::tensor::{FieldShape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(g: &mut Graph, b: usize, data: Vec<f64>) -> NodeId {
        let n = data.len() / b;
        g.constant(Tensor::new(vec![b, n], data).unwrap())
    }

    fn val(g: &Graph, n: NodeId) -> f64 {
        g.value(n).item().unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn recon_examples() {
        let shape = FieldShape::new(1, 1, 2);
        let mut g = Graph::new();
        let a = rows(&mut g, 1, vec![1.0, 2.0]);
        let z = rows(&mut g, 1, vec![0.0, 0.0]);
        let r = loss_recon(&mut g, a, z, shape).unwrap();
        assert_eq!(val(&g, r), 2.5);
        let same = loss_recon(&mut g, a, a, shape).unwrap();
        assert_eq!(val(&g, same), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = FieldShape::new(2, 2, 3);
        let (x, y) = (random(&mut rng, 24), random(&mut rng, 24));
        let c = 3.0;
        let xa = rows(&mut g, 2, x.clone());
        let ya = rows(&mut g, 2, y.clone());
        let xc = rows(&mut g, 2, x.iter().map(|v| c * v).collect());
        let yc = rows(&mut g, 2, y.iter().map(|v| c * v).collect());
        let base = loss_recon(&mut g, xa, ya, shape).unwrap();
        let scaled = loss_recon(&mut g, xc, yc, shape).unwrap();
        assert!((val(&g, scaled) - c * c * val(&g, base)).abs() < 1e-12);
        let bad = rows(&mut g, 1, vec![0.0; 3]);
        assert!(loss_recon(&mut g, a, bad, FieldShape::new(1, 1, 2)).is_err());
    }

    #[test]
    fn cosine_weight_examples() {
        for n in 2..20 {
            let w = cosine_weights(n).unwrap();
            let raw1 = 0.5 * (1.0 + 0f64.cos());
            let raw_n = 0.5 * (1.0 + std::f64::consts::PI.cos());
            assert_eq!(raw1, 1.0);
            assert_eq!(raw_n, 0.0);
            assert_eq!(*w.last().unwrap(), 0.0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        let w = cosine_weights(8).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15, "{}", w[0]);
        assert_eq!(w[7], 0.0);
        assert!(cosine_weights(1).is_err());
        assert_eq!(
            temporal_weights(TemporalWeighting::Uniform, 4).unwrap(),
            vec![0.25; 4]
        );
    }

    #[test]
    fn pred_examples() {
        let shape = FieldShape::new(1, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let targets: Vec<NodeId> = (0..8)
            .map(|_| rows(&mut g, 1, random(&mut rng, 4)))
            .collect();
        let w = cosine_weights(8).unwrap();
        let exact = loss_pred(&mut g, &targets, &targets, &w, shape).unwrap();
        assert_eq!(val(&g, exact), 0.0);

        let mut preds = targets.clone();
        let off = {
            let t = g.value(targets[0]).data().to_vec();
            rows(&mut g, 1, t.iter().map(|v| v + 0.5).collect())
        };
        preds[0] = off;
        let m = loss_recon(&mut g, off, targets[0], shape).unwrap();
        let m = val(&g, m);
        let p = loss_pred(&mut g, &preds, &targets, &w, shape).unwrap();
        assert!((val(&g, p) - 0.25 * m).abs() < 1e-15);

        let preds: Vec<NodeId> = (0..8)
            .map(|_| rows(&mut g, 1, random(&mut rng, 4)))
            .collect();
        let mut perm_p = preds.clone();
        let mut perm_t = targets.clone();
        perm_p.reverse();
        perm_t.reverse();
        let u = temporal_weights(TemporalWeighting::Uniform, 8).unwrap();
        let a = loss_pred(&mut g, &preds, &targets, &u, shape).unwrap();
        let b = loss_pred(&mut g, &perm_p, &perm_t, &u, shape).unwrap();
        assert!((val(&g, a) - val(&g, b)).abs() < 1e-14);
        let a = loss_pred(&mut g, &preds, &targets, &w, shape).unwrap();
        let b = loss_pred(&mut g, &perm_p, &perm_t, &w, shape).unwrap();
        assert!((val(&g, a) - val(&g, b)).abs() > 1e-6);

        let one = loss_pred(&mut g, &preds[..1], &targets[..1], &[1.0], shape).unwrap();
        let r = loss_recon(&mut g, preds[0], targets[0], shape).unwrap();
        assert_eq!(val(&g, one), val(&g, r));
        assert!(loss_pred(&mut g, &preds[..2], &targets[..2], &[1.0], shape).is_err());
    }

    #[test]
    fn consistency_examples_and_both_gradient_paths() {
        let mut g = Graph::new();
        let a = rows(&mut g, 1, vec![1.0, 0.0]);
        let z = rows(&mut g, 1, vec![0.0, 0.0]);
        let one = loss_latent_consistency(&mut g, &[a], &[z]).unwrap();
        assert_eq!(val(&g, one), 1.0);
        let zero = loss_latent_consistency(&mut g, &[a, z], &[a, z]).unwrap();
        assert_eq!(val(&g, zero), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let kt = g
            .input(
                "kt",
                Tensor::new(vec![3, 3], random(&mut rng, 9)).unwrap(),
                true,
            )
            .unwrap();
        let enc = g
            .input(
                "enc",
                Tensor::new(vec![4, 3], random(&mut rng, 12)).unwrap(),
                true,
            )
            .unwrap();
        let z0 = rows(&mut g, 2, random(&mut rng, 6));
        let x1 = rows(&mut g, 2, random(&mut rng, 8));
        let zhat = g.matmul(z0, kt).unwrap();
        let target = g.matmul(x1, enc).unwrap();
        let l = loss_latent_consistency(&mut g, &[zhat], &[target]).unwrap();
        let grads = g.gradient(l).unwrap();
        assert!(grads.get("kt").unwrap().norm_l2() > 0.0);
        assert!(grads.get("enc").unwrap().norm_l2() > 0.0);
    }

    #[test]
    fn linearity_examples() {
        let mut g = Graph::new();
        let z = rows(&mut g, 1, vec![0.3, -0.2]);
        let kt = g.constant(Tensor::zeros(&[2, 2]));
        let euler = |g: &mut Graph, z: NodeId, dt: f64| {
            let f = g.matmul(z, kt)?;
            let f = g.scale(f, dt)?;
            g.add(z, f)
        };
        let l = loss_linearity(&mut g, z, z, 0.1, euler).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut k = SquareMatrix::zeros(4);
        for i in 0..4 {
            for j in 0..i {
                let v = rng.random_range(-1.0..1.0);
                k.set(i, j, v);
                k.set(j, i, -v);
            }
            k.set(i, i, -0.1);
        }
        let dt = 0.1;
        let fwd = matrix_exp(&k.scaled(dt)).unwrap();
        let bwd = matrix_exp(&k.scaled(-dt)).unwrap();
        let z0 = random(&mut rng, 4);
        let z1 = fwd.matvec(&z0).unwrap();
        let mut g = Graph::new();
        let pf = g.constant(fwd.transpose().to_tensor());
        let pb = g.constant(bwd.transpose().to_tensor());
        let a = rows(&mut g, 1, z0);
        let b = rows(&mut g, 1, z1);
        let exp_step =
            |g: &mut Graph, z: NodeId, h: f64| g.matmul(z, if h > 0.0 { pf } else { pb });
        let l = loss_linearity(&mut g, a, b, dt, exp_step).unwrap();
        assert!(val(&g, l) < 1e-12);

        // The degenerate all-zero latent satisfies the loss for any operator.
        let zero = rows(&mut g, 1, vec![0.0; 4]);
        let l = loss_linearity(&mut g, zero, zero, dt, exp_step).unwrap();
        assert_eq!(val(&g, l), 0.0);
        assert!(loss_linearity(&mut g, a, b, 0.0, exp_step).is_err());
    }

    #[test]
    fn cosine_examples() {
        let mut g = Graph::new();
        let a = rows(&mut g, 1, vec![1.0, 2.0]);
        let par = rows(&mut g, 1, vec![2.0, 4.0]);
        let orth = rows(&mut g, 1, vec![-2.0, 1.0]);
        let anti = rows(&mut g, 1, vec![-1.0, -2.0]);
        let zero = rows(&mut g, 1, vec![0.0, 0.0]);
        let v = |g: &mut Graph, x, y| {
            let l = loss_cosine_dir(g, x, y).unwrap();
            val(g, l)
        };
        assert!(v(&mut g, a, par).abs() < 1e-8);
        assert!((v(&mut g, a, orth) - 1.0).abs() < 1e-12);
        assert!((v(&mut g, a, anti) - 2.0).abs() < 1e-8);
        assert_eq!(v(&mut g, zero, zero), 1.0);
    }

    #[test]
    fn energy_examples() {
        let mut g = Graph::new();
        let a = rows(&mut g, 1, vec![3.0, 4.0]);
        let b = rows(&mut g, 1, vec![0.0, 5.0]);
        let z = rows(&mut g, 1, vec![0.0, 0.0]);
        let l = loss_energy(&mut g, a, b).unwrap();
        assert_eq!(val(&g, l), 0.0);
        let l = loss_energy(&mut g, a, z).unwrap();
        assert_eq!(val(&g, l), 25.0);

        let (c, s) = (0.6f64, 0.8f64);
        let rot = |v: [f64; 2]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let p = rows(&mut g, 1, vec![1.0, -2.0]);
        let q = rows(&mut g, 1, vec![0.5, 0.25]);
        let rp = rows(&mut g, 1, rot([1.0, -2.0]));
        let rq = rows(&mut g, 1, rot([0.5, 0.25]));
        let l1 = loss_energy(&mut g, p, q).unwrap();
        let l2 = loss_energy(&mut g, rp, rq).unwrap();
        assert!((val(&g, l1) - val(&g, l2)).abs() < 1e-14);
    }

    #[test]
    fn sobolev_time_examples() {
        let shape = FieldShape::new(1, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random(&mut rng, 3)).collect();
        let offset = [0.7, -1.0, 2.0];
        let x: Vec<NodeId> = xs.iter().map(|v| rows(&mut g, 1, v.clone())).collect();
        let shifted: Vec<NodeId> = xs
            .iter()
            .map(|v| {
                rows(
                    &mut g,
                    1,
                    v.iter().zip(&offset).map(|(a, b)| a + b).collect(),
                )
            })
            .collect();
        let l = loss_sobolev_time(&mut g, &shifted, &x, shape).unwrap();
        assert!(val(&g, l) < 1e-28);
        let l = loss_sobolev_time(&mut g, &x, &x, shape).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let delta = [0.5, -1.0, 2.0];
        let moving: Vec<NodeId> = (0..4)
            .map(|j| rows(&mut g, 1, delta.iter().map(|d| d * j as f64).collect()))
            .collect();
        let still: Vec<NodeId> = (0..4).map(|_| rows(&mut g, 1, vec![0.0; 3])).collect();
        let l = loss_sobolev_time(&mut g, &still, &moving, shape).unwrap();
        assert!((val(&g, l) - 5.25).abs() < 1e-14);
        assert!(loss_sobolev_time(&mut g, &x[..1], &x[..1], shape).is_err());
    }

    #[test]
    fn sobolev_space_examples() {
        let shape = FieldShape::new(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = Graph::new();
        let x = random(&mut rng, 24);
        let xn = rows(&mut g, 1, x.clone());
        let xc = rows(&mut g, 1, x.iter().map(|v| v + 1.5).collect());
        let l = loss_sobolev_space(&mut g, xc, xn, shape).unwrap();
        assert!(val(&g, l) < 1e-28);
        let l = loss_sobolev_space(&mut g, xn, xn, shape).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let ramp: Vec<f64> = (0..24).map(|i| (i % 4) as f64).collect();
        let rn = rows(&mut g, 1, ramp);
        let zn = rows(&mut g, 1, vec![0.0; 24]);
        let l = loss_sobolev_space(&mut g, zn, rn, shape).unwrap();
        assert_eq!(val(&g, l), (2 * 3 * 3) as f64);

        let thin = FieldShape::new(1, 1, 4);
        let a = rows(&mut g, 1, vec![0.0; 4]);
        assert!(loss_sobolev_space(&mut g, a, a, thin).is_err());
    }

    fn spectrum(x: &[f64], shape: FieldShape) -> Vec<num_complex::Complex64> {
        x.chunks(shape.spatial())
            .flat_map(|c| fft2(c, shape.height, shape.width).unwrap().data)
            .collect()
    }

    #[test]
    fn spectral_examples() {
        let shape = FieldShape::new(2, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 48);
        let mut g = Graph::new();
        let xn = rows(&mut g, 1, x.clone());
        let l = loss_spectral(&mut g, xn, xn, shape).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let neg = rows(&mut g, 1, x.iter().map(|v| -v).collect());
        let l = loss_spectral(&mut g, neg, xn, shape).unwrap();
        let energy: f64 = spectrum(&x, shape).iter().map(|c| c.norm_sqr()).sum();
        assert!((val(&g, l) - 4.0 * energy).abs() < 1e-10 * energy);

        // Periodic shift by one column: same amplitudes, different phases.
        let shifted: Vec<f64> = (0..48)
            .map(|i| {
                let (c, r, col) = (i / 24, (i % 24) / 6, i % 6);
                x[c * 24 + r * 6 + (col + 5) % 6]
            })
            .collect();
        let (fa, fb) = (spectrum(&shifted, shape), spectrum(&x, shape));
        let amplitude: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .sum();
        let phase: f64 = fa.iter().zip(&fb).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(amplitude < 1e-12);
        assert!(phase > 1e-3);
        let sn = rows(&mut g, 1, shifted.clone());
        let l = loss_spectral(&mut g, sn, xn, shape).unwrap();
        assert!((val(&g, l) - (amplitude + phase)).abs() < 1e-10 * phase);
    }

    #[test]
    fn spectral_graph_and_fft_routes_agree_and_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (c, h, w) in [(1, 4, 4), (2, 3, 5), (2, 8, 6)] {
            let shape = FieldShape::new(c, h, w);
            let n = 3 * shape.numel();
            let (a, b) = (random(&mut rng, n), random(&mut rng, n));
            let mut g = Graph::new();
            let an = rows(&mut g, 3, a.clone());
            let bn = rows(&mut g, 3, b.clone());
            let ab = loss_spectral(&mut g, an, bn, shape).unwrap();
            let ba = loss_spectral(&mut g, bn, an, shape).unwrap();
            let v = loss_spectral_value(&a, &b, 3, shape).unwrap();
            assert!((val(&g, ab) - v).abs() < 1e-10 * v);
            assert!((val(&g, ab) - val(&g, ba)).abs() < 1e-10 * v);
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let shape = FieldShape::new(2, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut g = Graph::new();
            let a = rows(&mut g, 2, random(&mut rng, 36));
            let b = rows(&mut g, 2, random(&mut rng, 36));
            let c = rows(&mut g, 2, random(&mut rng, 36));
            let ls = [
                loss_recon(&mut g, a, b, shape).unwrap(),
                loss_cosine_dir(&mut g, a, b).unwrap(),
                loss_energy(&mut g, a, b).unwrap(),
                loss_sobolev_time(&mut g, &[a, c], &[b, a], shape).unwrap(),
                loss_sobolev_space(&mut g, a, b, shape).unwrap(),
                loss_spectral(&mut g, a, b, shape).unwrap(),
                loss_latent_consistency(&mut g, &[a], &[b]).unwrap(),
            ];
            for l in ls {
                assert!(val(&g, l) >= 0.0);
            }
        }
    }

    #[test]
    fn losses_pass_finite_difference_checks() {
        let shape = FieldShape::new(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        type Builder = fn(&mut Graph, NodeId, NodeId, FieldShape) -> NodeId;
        let builders: [(&str, Builder); 8] = [
            ("recon", |g, a, b, s| loss_recon(g, a, b, s).unwrap()),
            ("cosine", |g, a, b, _| loss_cosine_dir(g, a, b).unwrap()),
            ("energy", |g, a, b, _| loss_energy(g, a, b).unwrap()),
            ("time", |g, a, b, s| {
                loss_sobolev_time(g, &[a, b], &[b, a], s).unwrap()
            }),
            ("space", |g, a, b, s| {
                loss_sobolev_space(g, a, b, s).unwrap()
            }),
            ("spectral", |g, a, b, s| loss_spectral(g, a, b, s).unwrap()),
            ("consistency", |g, a, b, _| {
                loss_latent_consistency(g, &[a], &[b]).unwrap()
            }),
            ("pred", |g, a, b, s| {
                loss_pred(g, &[a, b], &[b, a], &[0.7, 0.3], s).unwrap()
            }),
        ];
        for (name, build) in builders {
            let mut g = Graph::new();
            let a = g
                .input(
                    "a",
                    Tensor::new(vec![2, 24], random(&mut rng, 48)).unwrap(),
                    true,
                )
                .unwrap();
            let b = rows(&mut g, 2, random(&mut rng, 48));
            let l = build(&mut g, a, b, shape);
            let err = finite_difference_check(&mut g, l, "a", 1e-6).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn total_combination_and_report_identity() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut terms = LossTerms::default();
        let mut leaf = || {
            let v: f64 = rng.random_range(0.0..2.0);
            Some(g.scalar(v))
        };
        terms.recon = leaf();
        terms.pred = leaf();
        terms.consistency = leaf();
        terms.linearity = leaf();
        terms.cosine = leaf();
        terms.energy = leaf();
        terms.sobolev_time = leaf();
        terms.sobolev_space = leaf();
        terms.spectral = leaf();
        terms.stability = leaf();

        let w = LossWeights {
            stability: 0.3,
            w_spectral: 0.2,
            ..LossWeights::default()
        };
        let total = terms.total(&mut g, &w).unwrap();
        let report = terms.report(&g, total);
        assert!((report.recomputed_total(&w) - report.total).abs() < 1e-12);

        let recon_only = terms.total(&mut g, &LossWeights::recon_only()).unwrap();
        assert_eq!(val(&g, recon_only), report.recon);

        let mut perfect = terms;
        perfect.pred = Some(g.scalar(0.0));
        let w = LossWeights {
            alpha: 1.0,
            ..LossWeights::recon_only()
        };
        let t = perfect.total(&mut g, &w).unwrap();
        assert_eq!(val(&g, t), report.recon);

        let bad = LossWeights {
            beta: -0.1,
            ..LossWeights::default()
        };
        assert!(matches!(
            terms.total(&mut g, &bad),
            Err(crate::error::KaeError::Config(_))
        ));
    }
}
