//! Per-timestep lattice/coord loss profile for a trained toy model.

use std::collections::BTreeMap;
use ndarray::Array2;
use xtalgen::denoiser::{Activation, DenoiserConfig, DenoiserInput, TextInput};
use xtalgen::diffusion::*;
use xtalgen::engine::*;
use xtalgen::prompts::{encode_text_hash, make_short_prompt};
use xtalgen::schedule::DdpmKind;
use xtalgen::toydata::perovskite_dataset;
use xtalgen::util::stream_rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let t_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(25);
    let hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(96);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5e-4);

    let data = perovskite_dataset(10, 42);
    let cfg = TrainConfig {
        epochs,
        batch_size: 10,
        t_steps,
        lr,
        seed: 11,
        text_dropout: 0.0,
        plateau: PlateauConfig { factor: 0.5, patience: 120, min_lr: 1e-5 },
        ddpm: DdpmKind::Cosine { s: 0.008 },
        denoiser: DenoiserConfig {
            num_layers: 4,
            hidden_dim: hidden,
            fourier_freqs: 10,
            time_embed_dim: 64,
            text_proj_dim: 64,
            text_raw_dim: 64,
            atom_embed_dim: 64,
            k_classes: 100,
            activation: Activation::Silu,
            normalize_gram: true,
            init_seed: 0,
        },
        ..TrainConfig::default()
    };
    let emb: BTreeMap<_, _> = data
        .iter()
        .map(|lc| {
            let text = make_short_prompt(&lc.crystal.meta).unwrap();
            (lc.id.clone(), encode_text_hash(&text, 64, 0).unwrap())
        })
        .collect();
    let ckpt = train(&data, &emb, &cfg).unwrap();
    println!("final loss {:.4}", ckpt.loss_history.last().unwrap().total);

    let sched = build_schedules(&cfg).unwrap();
    let mut rng = stream_rng(999, &[1]);
    for t in [1usize, 3, 6, 12, 18, 22, 24, 25] {
        if t > t_steps { continue; }
        let mut lat_sum = 0.0;
        let mut coord_sum = 0.0;
        let mut n = 0.0;
        for lc in &data {
            for _ in 0..20 {
                let c = &lc.crystal;
                let draws = NoiseDraws::sample(&mut rng, c.num_atoms());
                let l_t = forward_lattice(c.lattice(), t, &sched.ddpm, &draws.eps_l);
                let x_t = forward_coords(c.frac_coords(), t, &sched.sigma, &draws.eps_x);
                let a_t = forward_types(c.atom_types(), t, &sched.d3pm, &draws.type_draw);
                let sigma_t = sched.sigma.sigma_at(t);
                let target = wn_score(&x_t, c.frac_coords(), sigma_t, wn_k_max(sigma_t)).unwrap();
                let out = xtalgen::denoiser::forward(
                    &ckpt.params,
                    &DenoiserInput {
                        atom_types: &a_t,
                        frac: &x_t,
                        lattice: &l_t,
                        t,
                        t_max: t_steps,
                        alpha_bar_t: sched.ddpm.alpha_bar_at(t),
                        sigma_t: sched.sigma.sigma_at(t),
                        text: TextInput::Raw(&emb[&lc.id]),
                    },
                )
                .unwrap();
                lat_sum += lattice_loss(&draws.eps_l, &out.eps_hat_l);
                coord_sum +=
                    coord_loss(&target, &out.eps_hat_x, sigma_t, CoordWeighting::SigmaSq).unwrap();
                n += 1.0;
            }
        }
        let amp = {
            let ab_t = sched.ddpm.alpha_bar_at(t);
            let ab_s = sched.ddpm.alpha_bar_at(t - 1);
            let alpha = ab_t / ab_s;
            (1.0 - alpha) / ((1.0 - ab_t).sqrt() * alpha.sqrt())
        };
        println!(
            "t={t:3}  lat {:.4} (rmse-per-entry {:.3}, step-amp {:.1}, mu-err {:.3})  coord {:.4}",
            lat_sum / n,
            (lat_sum / n as f64).sqrt(),
            amp,
            amp * (lat_sum / n as f64).sqrt(),
            coord_sum / n
        );
    }
    let _ = Array2::<f64>::zeros((1, 1));
}
