use super::*;
use ndarray::array;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> DenoiserConfig {
    DenoiserConfig {
        num_layers: 2,
        hidden_dim: 16,
        fourier_freqs: 4,
        time_embed_dim: 8,
        text_proj_dim: 8,
        text_raw_dim: 12,
        atom_embed_dim: 8,
        k_classes: 6,
        activation: Activation::Silu,
        normalize_gram: true,
        init_seed: 0,
    }
}

fn random_input(rng: &mut impl Rng, cfg: &DenoiserConfig, n: usize) -> BatchItem {
    use rand_distr::StandardNormal;
    let lattice = crate::crystal::tests::random_lattice(rng);
    BatchItem {
        atom_types: (0..n).map(|_| rng.random_range(0..=cfg.k_classes)).collect(),
        frac: Array2::from_shape_fn((n, 3), |_| rng.random::<f64>()),
        lattice,
        t: rng.random_range(1..=50),
        alpha_bar_t: rng.random_range(0.01..0.99),
        sigma_t: rng.random_range(0.01..0.8),
        text: Some(Array1::from_shape_fn(cfg.text_raw_dim, |_| {
            rng.sample::<f64, _>(StandardNormal)
        })),
    }
}

fn run(params: &DenoiserParams, item: &BatchItem) -> DenoiserOutput {
    let input = DenoiserInput {
        atom_types: &item.atom_types,
        frac: &item.frac,
        lattice: &item.lattice,
        t: item.t,
        t_max: 50,
        alpha_bar_t: item.alpha_bar_t,
        sigma_t: item.sigma_t,
        text: match &item.text {
            Some(v) => TextInput::Raw(v),
            None => TextInput::Null,
        },
    };
    forward(params, &input).unwrap()
}

#[test]
fn fourier_feature_examples() {
    let f = fourier_features(0.0, 3);
    assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let f = fourier_features(0.25, 2);
    assert!((f[0] - 1.0).abs() < 1e-15);
    assert!(f[1].abs() < 1e-15);
    assert!(f[2].abs() < 1e-15);
    assert!((f[3] + 1.0).abs() < 1e-15);
    // Period 1.
    for d in [-0.7, 0.1, 0.49] {
        let a = fourier_features(d, 5);
        let b = fourier_features(d + 1.0, 5);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn time_embedding_injective_and_deterministic() {
    let a = time_embedding(17, 500, 64);
    let b = time_embedding(17, 500, 64);
    assert_eq!(a, b);
    let t0 = time_embedding(0, 500, 8);
    assert_eq!(t0[0], 0.0);
    assert_eq!(t0[1], 1.0);
    let mut seen: Vec<Array1<f64>> = Vec::new();
    for t in 0..=500 {
        let e = time_embedding(t, 500, 8);
        for prev in &seen {
            let d: f64 = (&e - prev).iter().map(|v| v * v).sum();
            assert!(d > 1e-12, "t = {t} collides");
        }
        seen.push(e);
    }
}

#[test]
fn init_is_deterministic_and_seeded() {
    let cfg = small_cfg();
    let a = init_denoiser(&cfg, 7).unwrap();
    let b = init_denoiser(&cfg, 7).unwrap();
    assert_eq!(a.to_flat(), b.to_flat());
    let c = init_denoiser(&cfg, 8).unwrap();
    assert_ne!(a.to_flat(), c.to_flat());

    let mut bad = cfg.clone();
    bad.time_embed_dim = 7;
    assert!(init_denoiser(&bad, 0).is_err());
}

#[test]
fn init_output_magnitudes_are_order_one() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let item = random_input(&mut rng, &cfg, 5);
        let out = run(&params, &item);
        let max_logit = out.a0_logits.iter().fold(0f64, |m, v| m.max(v.abs()));
        let max_x = out.eps_hat_x.iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(max_logit < 30.0, "logits blow up at init: {max_logit}");
        assert!(max_x < 30.0);
        assert!(out.eps_hat_l.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let item = random_input(&mut rng, &cfg, 4);
    let a = run(&params, &item);
    let b = run(&params, &item);
    assert_eq!(a.eps_hat_l, b.eps_hat_l);
    assert_eq!(a.a0_logits, b.a0_logits);
    assert_eq!(a.eps_hat_x, b.eps_hat_x);
}

#[test]
fn permutation_equivariance() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let n = 5;
        let item = random_input(&mut rng, &cfg, n);
        let out = run(&params, &item);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let pitem = BatchItem {
            atom_types: perm.iter().map(|&p| item.atom_types[p]).collect(),
            frac: {
                let mut f = Array2::zeros((n, 3));
                for (new, &old) in perm.iter().enumerate() {
                    f.row_mut(new).assign(&item.frac.row(old));
                }
                f
            },
            lattice: item.lattice.clone(),
            t: item.t,
            text: item.text.clone(),
        };
        let pout = run(&params, &pitem);
        for (x, y) in pout.eps_hat_l.iter().zip(out.eps_hat_l.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..cfg.k_classes {
                assert!((pout.a0_logits[[new, k]] - out.a0_logits[[old, k]]).abs() < 1e-10);
            }
            for k in 0..3 {
                assert!((pout.eps_hat_x[[new, k]] - out.eps_hat_x[[old, k]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn rotation_behavior() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let item = random_input(&mut rng, &cfg, 4);
        let out = run(&params, &item);
        let q = crate::crystal::tests::random_rotation(&mut rng);
        // Rigid rotation in row convention: L -> L Q^T.
        let ritem = BatchItem {
            lattice: item.lattice.dot(&q.t()),
            ..item.clone()
        };
        let rout = run(&params, &ritem);
        let scale = out
            .eps_hat_l
            .iter()
            .fold(0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        // Logits and coordinate head invariant.
        for (x, y) in rout.a0_logits.iter().zip(out.a0_logits.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
        for (x, y) in rout.eps_hat_x.iter().zip(out.eps_hat_x.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
        // Lattice head equivariant: eps_hat(L Q^T) = eps_hat(L) Q^T.
        let expect = out.eps_hat_l.dot(&q.t());
        for (x, y) in rout.eps_hat_l.iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-8 * scale, "{x} vs {y}");
        }
    }
}

#[test]
fn common_shift_invariance() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..20 {
        let item = random_input(&mut rng, &cfg, 4);
        let out = run(&params, &item);
        let tau = [
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
        ];
        let mut frac = item.frac.clone();
        for mut row in frac.rows_mut() {
            for (x, t) in row.iter_mut().zip(&tau) {
                *x = crate::crystal::wrap_scalar(*x + t);
            }
        }
        let sitem = BatchItem { frac, ..item.clone() };
        let sout = run(&params, &sitem);
        for (x, y) in sout.eps_hat_l.iter().zip(out.eps_hat_l.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
        for (x, y) in sout.a0_logits.iter().zip(out.a0_logits.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
        for (x, y) in sout.eps_hat_x.iter().zip(out.eps_hat_x.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
    }
}

/// Scalar loss over all three heads used by the gradient checks.
fn test_loss(out: &DenoiserOutput) -> (f64, OutputGrads) {
    let l: f64 = out.eps_hat_l.iter().map(|v| v * v).sum::<f64>()
        + out.a0_logits.iter().map(|v| v * v).sum::<f64>()
        + out.eps_hat_x.iter().map(|v| v * v).sum::<f64>();
    (
        l,
        OutputGrads {
            d_eps_l: &out.eps_hat_l * 2.0,
            d_logits: &out.a0_logits * 2.0,
            d_eps_x: &out.eps_hat_x * 2.0,
        },
    )
}

#[test]
fn gradients_match_finite_differences_every_group() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let batch: Vec<BatchItem> = (0..2)
        .map(|i| {
            let mut item = random_input(&mut rng, &cfg, 3);
            if i == 1 {
                item.text = None; // exercise the null-text path
            }
            item
        })
        .collect();
    let loss_fn =
        |_: usize, out: &DenoiserOutput| -> crate::Result<(f64, OutputGrads)> { Ok(test_loss(out)) };
    let (_, grads) = gradients(&params, 50, &batch, loss_fn).unwrap();

    let eval = |p: &DenoiserParams| -> f64 {
        batch.iter().map(|item| test_loss(&run(p, item)).0).sum()
    };

    let groups = grads.visit();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for (name, gslice) in &groups {
        // A few random entries per group.
        for _ in 0..3 {
            let idx = rng.random_range(0..gslice.len());
            let g = gslice[idx];
            let h = 1e-5;
            let mut up = params.clone();
            let mut dn = params.clone();
            {
                let mut v = up.visit_mut();
                let slot = v.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1[idx] += h;
            }
            {
                let mut v = dn.visit_mut();
                let slot = v.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1[idx] -= h;
            }
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            let denom = fd.abs().max(g.abs()).max(1e-8);
            assert!(
                (g - fd).abs() / denom < 1e-4,
                "group {name}[{idx}]: analytic {g} vs fd {fd}"
            );
        }
    }
}

#[test]
fn zero_output_grads_give_zero_param_grads() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let item = random_input(&mut rng, &cfg, 3);
    let loss_fn = |_: usize, out: &DenoiserOutput| -> crate::Result<(f64, OutputGrads)> {
        Ok((
            0.0,
            OutputGrads {
                d_eps_l: Array2::zeros(out.eps_hat_l.raw_dim()),
                d_logits: Array2::zeros(out.a0_logits.raw_dim()),
                d_eps_x: Array2::zeros(out.eps_hat_x.raw_dim()),
            },
        ))
    };
    let (loss, grads) = gradients(&params, 50, std::slice::from_ref(&item), loss_fn).unwrap();
    assert_eq!(loss, 0.0);
    for (_, s) in grads.visit() {
        assert!(s.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn flat_round_trip_and_shapes() {
    let cfg = small_cfg();
    let params = init_denoiser(&cfg, 41).unwrap();
    let flat = params.to_flat();
    assert_eq!(flat.len(), params.num_params());
    let mut other = init_denoiser(&cfg, 99).unwrap();
    other.from_flat(&flat).unwrap();
    assert_eq!(other.to_flat(), flat);
    assert!(other.from_flat(&flat[1..]).is_err());

    // Bad inputs are rejected.
    let item = BatchItem {
        atom_types: vec![cfg.k_classes + 1],
        frac: array![[0.0, 0.0, 0.0]],
        lattice: Array2::eye(3),
        t: 1,
        alpha_bar_t: 0.5,
        sigma_t: 0.1,
        text: None,
    };
    let input = DenoiserInput {
        atom_types: &item.atom_types,
        frac: &item.frac,
        lattice: &item.lattice,
        t: 1,
        t_max: 10,
        alpha_bar_t: 0.5,
        sigma_t: 0.1,
        text: TextInput::Null,
    };
    assert!(forward(&params, &input).is_err());
    let bad = DenoiserInput {
        atom_types: &[0],
        frac: &item.frac,
        lattice: &item.lattice,
        t: 1,
        t_max: 10,
        alpha_bar_t: 1.0,
        sigma_t: 0.1,
        text: TextInput::Null,
    };
    assert!(forward(&params, &bad).is_err());
    let bad = DenoiserInput {
        atom_types: &[0],
        frac: &item.frac,
        lattice: &item.lattice,
        t: 1,
        t_max: 10,
        alpha_bar_t: 0.5,
        sigma_t: 0.0,
        text: TextInput::Null,
    };
    assert!(forward(&params, &bad).is_err());
}
