//! Experiment harness for the overfit-recovery setup.

use std::collections::BTreeMap;
use xtalgen::denoiser::{Activation, DenoiserConfig};
use xtalgen::engine::*;
use xtalgen::eval::{match_structures, MatcherConfig};
use xtalgen::prompts::{encode_text_hash, make_short_prompt};
use xtalgen::schedule::DdpmKind;
use xtalgen::toydata::perovskite_dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(800);
    let t_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(64);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let data = perovskite_dataset(10, 42);
    let cfg = TrainConfig {
        epochs,
        batch_size: 10,
        t_steps,
        lr,
        seed: 11,
        plateau: PlateauConfig { factor: 0.5, patience: 400, min_lr: 5e-5 },
        text_dropout: 0.0,
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
    let t0 = std::time::Instant::now();
    let ckpt = train(&data, &emb, &cfg).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let first = ckpt.loss_history.first().unwrap();
    let last = ckpt.loss_history.last().unwrap();
    for (e, l) in ckpt.loss_history.iter().enumerate() {
        if e % (cfg.epochs / 10).max(1) == 0 {
            println!(
                "  epoch {e}: total {:.4} lat {:.4} coord {:.4} vb {:.4} ce {:.4}",
                l.total, l.lattice_loss, l.coord_loss, l.type_vb_loss, l.type_ce_loss
            );
        }
    }
    println!(
        "train {train_secs:.1}s  loss {:.4} -> {:.4} (lat {:.4} coord {:.4} vb {:.4} ce {:.4})",
        first.total, last.total, last.lattice_loss, last.coord_loss, last.type_vb_loss, last.type_ce_loss
    );

    let mcfg = MatcherConfig::default();
    let mut matched = 0;
    for (i, lc) in data.iter().enumerate() {
        let text = make_short_prompt(&lc.crystal.meta).unwrap();
        let embv = encode_text_hash(&text, 64, 0).unwrap();
        let opts = SamplerOptions {
            mode: SampleMode::Csp,
            seed: 1000 + i as u64,
            ..SamplerOptions::default()
        };
        match sample(&ckpt, Some(&embv), 5, Some(lc.crystal.atom_types()), &opts) {
            Ok((c, _)) => {
                let r = match_structures(&c, &lc.crystal, &mcfg);
                let p = xtalgen::crystal::params_from_lattice(&c.lattice().view());
                println!(
                    "  {}: rmse {:?}  cell ({:.3},{:.3},{:.3},{:.1},{:.1},{:.1}) want a={:.3}",
                    lc.id, r, p.a, p.b, p.c, p.alpha, p.beta, p.gamma,
                    xtalgen::crystal::params_from_lattice(&lc.crystal.lattice().view()).a
                );
                if std::env::var("SHOW_COORDS").is_ok() {
                    for i in 0..5 {
                        println!(
                            "      atom {i} type {:3}: ({:.3},{:.3},{:.3})",
                            c.atom_types()[i],
                            c.frac_coords()[[i, 0]],
                            c.frac_coords()[[i, 1]],
                            c.frac_coords()[[i, 2]]
                        );
                    }
                }
                if let Some(r) = r {
                    if r < 0.05 {
                        matched += 1;
                    }
                }
            }
            Err(e) => println!("  {}: sample error {e}", lc.id),
        }
    }
    println!("matched {matched}/10 with rmse < 0.05");
}
