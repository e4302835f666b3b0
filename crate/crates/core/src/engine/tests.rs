use super::*;
use crate::denoiser::Activation;
use crate::prompts::{encode_text_hash, make_short_prompt};
use crate::toydata::perovskite_dataset;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        t_steps: 20,
        // A gentle ramp: barely-trained nets survive reverse diffusion,
        // which these plumbing tests rely on.
        ddpm: DdpmKind::Linear {
            beta_start: 1e-4,
            beta_end: 0.05,
        },
        denoiser: DenoiserConfig {
            num_layers: 2,
            hidden_dim: 16,
            fourier_freqs: 4,
            time_embed_dim: 8,
            text_proj_dim: 8,
            text_raw_dim: 16,
            atom_embed_dim: 8,
            k_classes: 100,
            activation: Activation::Silu,
            normalize_gram: true,
            init_seed: 0,
        },
        ..TrainConfig::default()
    }
}

pub(crate) fn embeddings_for(
    dataset: &[LabeledCrystal],
    d: usize,
) -> BTreeMap<String, Array1<f64>> {
    dataset
        .iter()
        .map(|lc| {
            let text = make_short_prompt(&lc.crystal.meta).unwrap();
            (lc.id.clone(), encode_text_hash(&text, d, 0).unwrap())
        })
        .collect()
}

#[test]
fn one_epoch_records_one_history_row() {
    let data = perovskite_dataset(8, 1);
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_train_config()
    };
    let emb = embeddings_for(&data, cfg.denoiser.text_raw_dim);
    let ckpt = train(&data, &emb, &cfg).unwrap();
    assert_eq!(ckpt.loss_history.len(), 1);
    assert!(ckpt.loss_history[0].total.is_finite());
    assert_eq!(ckpt.epoch, 1);
    assert_eq!(ckpt.n_atoms_hist.get(&5), Some(&8));
}

#[test]
fn training_is_deterministic() {
    let data = perovskite_dataset(6, 2);
    let cfg = tiny_train_config();
    let emb = embeddings_for(&data, cfg.denoiser.text_raw_dim);
    let a = train(&data, &emb, &cfg).unwrap();
    let b = train(&data, &emb, &cfg).unwrap();
    assert_eq!(a.params.to_flat(), b.params.to_flat());
    assert_eq!(a.loss_history, b.loss_history);
    let mut cfg2 = cfg.clone();
    cfg2.seed = 99;
    let c = train(&data, &emb, &cfg2).unwrap();
    assert_ne!(a.params.to_flat(), c.params.to_flat());
}

#[test]
fn training_requires_embeddings() {
    let data = perovskite_dataset(3, 3);
    let cfg = tiny_train_config();
    let mut emb = embeddings_for(&data, cfg.denoiser.text_raw_dim);
    emb.remove(&data[1].id);
    assert!(matches!(train(&data, &emb, &cfg), Err(Error::Embedding(_))));
}

/// Training loss of one item assembled from the public pieces, with the
/// lattice noise passed in explicitly so its frame can be rotated.
pub(crate) fn manual_item_loss(
    params: &crate::denoiser::DenoiserParams,
    cfg: &TrainConfig,
    sched: &Schedules,
    crystal: &Crystal,
    embedding: &Array1<f64>,
    t: usize,
    draws: &NoiseDraws,
) -> LossBreakdown {
    let l_t = forward_lattice(crystal.lattice(), t, &sched.ddpm, &draws.eps_l);
    let x_t = forward_coords(crystal.frac_coords(), t, &sched.sigma, &draws.eps_x);
    let a_t = forward_types(crystal.atom_types(), t, &sched.d3pm, &draws.type_draw);
    let sigma_t = sched.sigma.sigma_at(t);
    let target = wn_score(&x_t, crystal.frac_coords(), sigma_t, wn_k_max(sigma_t)).unwrap();
    let out = crate::denoiser::forward(
        params,
        &DenoiserInput {
            atom_types: &a_t,
            frac: &x_t,
            lattice: &l_t,
            t,
            t_max: cfg.t_steps,
            alpha_bar_t: sched.ddpm.alpha_bar_at(t),
            sigma_t: sched.sigma.sigma_at(t),
            text: crate::denoiser::TextInput::Raw(embedding),
        },
    )
    .unwrap();
    let lat = lattice_loss(&draws.eps_l, &out.eps_hat_l);
    let coord = coord_loss(&target, &out.eps_hat_x, sigma_t, cfg.coord_weighting).unwrap();
    let ((vb, ce), _) = type_loss(&out.a0_logits, crystal.atom_types(), &a_t, t, &sched.d3pm)
        .unwrap();
    combine_losses(
        lat, coord, vb, ce, cfg.lambda_l, cfg.lambda_a, cfg.lambda_x, cfg.lambda_ce,
    )
}

#[test]
fn training_loss_invariant_under_batch_rotation() {
    // Rotate every crystal AND the lattice noise frame by one common
    // rotation: every loss term is unchanged because the denoiser's
    // lattice head is equivariant and its other heads are invariant.
    let data = perovskite_dataset(4, 4);
    let cfg = tiny_train_config();
    let emb = embeddings_for(&data, cfg.denoiser.text_raw_dim);
    let sched = build_schedules(&cfg).unwrap();
    let params = crate::denoiser::init_denoiser(&cfg.denoiser, 3).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = crate::crystal::tests::random_rotation(&mut rng);
    for (i, lc) in data.iter().enumerate() {
        let t = 1 + (i * 5) % cfg.t_steps;
        let draws = NoiseDraws::sample(&mut rng, lc.crystal.num_atoms());
        let base = manual_item_loss(&params, &cfg, &sched, &lc.crystal, &emb[&lc.id], t, &draws);

        let rotated = lc.crystal.apply_rotation(&q).unwrap();
        let rotated_draws = NoiseDraws {
            eps_l: draws.eps_l.dot(&q.t()),
            eps_x: draws.eps_x.clone(),
            type_draw: draws.type_draw.clone(),
        };
        let rot = manual_item_loss(
            &params,
            &cfg,
            &sched,
            &rotated,
            &emb[&lc.id],
            t,
            &rotated_draws,
        );
        assert!((base.lattice_loss - rot.lattice_loss).abs() < 1e-8, "lattice");
        assert!((base.coord_loss - rot.coord_loss).abs() < 1e-8, "coord");
        assert!((base.type_vb_loss - rot.type_vb_loss).abs() < 1e-8);
        assert!((base.type_ce_loss - rot.type_ce_loss).abs() < 1e-8);
        assert!((base.total - rot.total).abs() < 1e-8);
    }
}

#[test]
fn step_schedule_subsampling() {
    assert_eq!(step_schedule(5, None), vec![5, 4, 3, 2, 1]);
    assert_eq!(step_schedule(500, Some(50)).len(), 50);
    let s = step_schedule(500, Some(50));
    assert_eq!(s[0], 500);
    assert_eq!(*s.last().unwrap(), 10);
    assert!(s.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(step_schedule(10, Some(100)), step_schedule(10, None));
    let one = step_schedule(100, Some(1));
    assert_eq!(one, vec![100]);
}

fn quick_checkpoint() -> Checkpoint {
    let data = perovskite_dataset(6, 5);
    let cfg = TrainConfig {
        epochs: 3,
        ..tiny_train_config()
    };
    let emb = embeddings_for(&data, cfg.denoiser.text_raw_dim);
    train(&data, &emb, &cfg).unwrap()
}

#[test]
fn sampling_is_deterministic_and_valid() {
    let ckpt = quick_checkpoint();
    let prompt = encode_text_hash("The chemical formula is BaTiO3.", 16, 0).unwrap();
    let opts = SamplerOptions {
        seed: 42,
        ..SamplerOptions::default()
    };
    let (a, timing) = sample(&ckpt, Some(&prompt), 5, None, &opts).unwrap();
    let (b, _) = sample(&ckpt, Some(&prompt), 5, None, &opts).unwrap();
    assert_eq!(a.frac_coords(), b.frac_coords());
    assert_eq!(a.lattice(), b.lattice());
    assert_eq!(a.atom_types(), b.atom_types());
    assert_eq!(timing.per_step_seconds.len(), 20);
    assert!(a.frac_coords().iter().all(|&v| (0.0..1.0).contains(&v)));
    assert!(a.volume() > 0.0);
    assert!(a.atom_types().iter().all(|&t| t < 100));

    let opts2 = SamplerOptions {
        seed: 43,
        ..SamplerOptions::default()
    };
    let (c, _) = sample(&ckpt, Some(&prompt), 5, None, &opts2).unwrap();
    assert_ne!(a.frac_coords(), c.frac_coords());
}

#[test]
fn csp_mode_keeps_types_fixed() {
    let ckpt = quick_checkpoint();
    let prompt = encode_text_hash("The chemical formula is SrZrO3.", 16, 0).unwrap();
    let fixed = vec![37usize, 39, 7, 7, 7];
    let opts = SamplerOptions {
        mode: SampleMode::Csp,
        seed: 7,
        ..SamplerOptions::default()
    };
    let (c, _) = sample(&ckpt, Some(&prompt), 5, Some(&fixed), &opts).unwrap();
    assert_eq!(c.atom_types(), fixed.as_slice());
    // Missing fixed types is a config error.
    assert!(sample(&ckpt, Some(&prompt), 5, None, &opts).is_err());
}

#[test]
fn gen_mode_resolves_all_masks() {
    let ckpt = quick_checkpoint();
    for steps in [None, Some(7)] {
        let opts = SamplerOptions {
            steps,
            seed: 9,
            ..SamplerOptions::default()
        };
        let (c, timing) = sample(&ckpt, None, 5, None, &opts).unwrap();
        assert!(c.atom_types().iter().all(|&t| t < 100));
        if let Some(s) = steps {
            assert_eq!(timing.per_step_seconds.len(), s);
        }
    }
}

#[test]
fn alg2_softmax_strategy_runs() {
    let ckpt = quick_checkpoint();
    for pick in [Alg2Pick::Argmax, Alg2Pick::Sample] {
        let opts = SamplerOptions {
            type_strategy: TypeStrategy::Alg2Softmax,
            alg2_pick: pick,
            seed: 11,
            ..SamplerOptions::default()
        };
        let (c, _) = sample(&ckpt, None, 4, None, &opts).unwrap();
        assert!(c.atom_types().iter().all(|&t| t < 100));
    }
}

#[test]
fn type_update_rules() {
    let d3pm = make_d3pm(6, 4, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // Point-mass logits, non-mask state: both strategies keep the label.
    let mut logits = Array2::from_elem((1, 4), -20.0);
    logits[[0, 2]] = 20.0;
    for strategy in [TypeStrategy::D3pmAncestral, TypeStrategy::Alg2Softmax] {
        let next = type_update(&logits, &[2], 3, &d3pm, strategy, Alg2Pick::Argmax, 0.05, &mut rng)
            .unwrap();
        assert_eq!(next, vec![2]);
    }
    // Ancestral from mask at t = 1 samples the clean label directly.
    let next = type_update(
        &logits,
        &[d3pm.mask_index],
        1,
        &d3pm,
        TypeStrategy::D3pmAncestral,
        Alg2Pick::Argmax,
        0.05,
        &mut rng,
    )
    .unwrap();
    assert_eq!(next, vec![2]);
    // Ancestral from mask matches the marginalized reverse distribution.
    let logits = Array2::from_shape_vec((1, 4), vec![0.3, -0.2, 0.9, 0.1]).unwrap();
    let probs = diffusion::softmax(&logits.row(0).to_owned());
    let t = 4usize;
    let n = 200_000;
    let mut counts = vec![0usize; d3pm.num_states()];
    for _ in 0..n {
        let next = type_update(
            &logits,
            &[d3pm.mask_index],
            t,
            &d3pm,
            TypeStrategy::D3pmAncestral,
            Alg2Pick::Argmax,
            0.05,
            &mut rng,
        )
        .unwrap();
        counts[next[0]] += 1;
    }
    let expect = diffusion::d3pm_model_reverse(&probs, d3pm.mask_index, t - 1, t, &d3pm);
    for j in 0..d3pm.num_states() {
        let freq = counts[j] as f64 / n as f64;
        assert!(
            (freq - expect[j]).abs() < 0.01,
            "state {j}: {freq} vs {}",
            expect[j]
        );
    }
}

#[test]
fn checkpoint_round_trip_reproduces_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = quick_checkpoint();
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.params.to_flat(), ckpt.params.to_flat());
    assert_eq!(loaded.loss_history, ckpt.loss_history);
    assert_eq!(loaded.n_atoms_hist, ckpt.n_atoms_hist);

    let prompt = encode_text_hash("The chemical formula is BaTiO3.", 16, 0).unwrap();
    let opts = SamplerOptions {
        seed: 5,
        ..SamplerOptions::default()
    };
    let (a, _) = sample(&ckpt, Some(&prompt), 5, None, &opts).unwrap();
    let (b, _) = sample(&loaded, Some(&prompt), 5, None, &opts).unwrap();
    assert_eq!(a.frac_coords(), b.frac_coords());
    assert_eq!(a.lattice(), b.lattice());
    assert_eq!(a.atom_types(), b.atom_types());
}

#[test]
fn checkpoint_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = quick_checkpoint();
    save_checkpoint(&ckpt, &path).unwrap();

    // Truncated blob.
    let bytes = std::fs::read(&path).unwrap();
    let tr_path = dir.path().join("truncated.ckpt");
    std::fs::write(&tr_path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(
        load_checkpoint(&tr_path),
        Err(Error::Checkpoint(_))
    ));

    // Version mismatch.
    let text = String::from_utf8_lossy(&bytes);
    let newline = text.find('\n').unwrap();
    let header = text[..newline].replace("\"version\":1", "\"version\":999");
    let mut patched = header.into_bytes();
    patched.push(b'\n');
    patched.extend_from_slice(&bytes[newline + 1..]);
    let v_path = dir.path().join("version.ckpt");
    std::fs::write(&v_path, patched).unwrap();
    assert!(matches!(load_checkpoint(&v_path), Err(Error::Checkpoint(_))));
}

#[test]
fn draw_n_atoms_follows_histogram() {
    let mut ckpt = quick_checkpoint();
    ckpt.n_atoms_hist = BTreeMap::from([(3usize, 1usize), (7, 3)]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut sevens = 0;
    for _ in 0..1000 {
        let n = draw_n_atoms(&ckpt, &mut rng);
        assert!(n == 3 || n == 7);
        if n == 7 {
            sevens += 1;
        }
    }
    assert!((sevens as f64 / 1000.0 - 0.75).abs() < 0.05);
}
