//! `xtalgen train`: run the training loop, write a checkpoint and a
//! loss-history CSV (one row per epoch: epoch, lattice, coord, type_vb,
//! type_ce, total).

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;
use ndarray::Array1;

use crate::config::{load_config, thread_pool, Provenance, HASH_ENCODER_SEED};
use xtalgen::crystal::io::read_jsonl_dataset;
use xtalgen::engine::{save_checkpoint, train};
use xtalgen::prompts::{encode_text_hash, load_external_embeddings, make_short_prompt, read_prompts};
use xtalgen::{Error, Result};

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-history CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Externally computed raw text embeddings ({"id","vector"} JSONL).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Prompt texts to hash-encode (default: derived from metadata).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Force deterministic mode (always on; recorded in the config echo).
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if args.deterministic {
        cfg.train.deterministic = true;
    }
    cfg.train.validate()?;
    let pool = thread_pool(args.jobs)?;

    let dataset = read_jsonl_dataset(&args.dataset)?;
    let d_raw = cfg.train.denoiser.text_raw_dim;

    let embeddings: BTreeMap<String, Array1<f64>> = match &args.embeddings {
        Some(path) => {
            let map = load_external_embeddings(path)?;
            if let Some((id, v)) = map.iter().next() {
                if v.len() != d_raw {
                    return Err(Error::Config(format!(
                        "external embedding dim {} (id {id:?}) != configured text_raw_dim {d_raw}; \
                         set denoiser.text_raw_dim accordingly",
                        v.len()
                    )));
                }
            }
            map
        }
        None => {
            let texts: BTreeMap<String, String> = match &args.prompts {
                Some(p) => read_prompts(p)?
                    .into_iter()
                    .map(|w| (w.id, w.text))
                    .collect(),
                None => dataset
                    .iter()
                    .filter_map(|lc| {
                        make_short_prompt(&lc.crystal.meta)
                            .ok()
                            .map(|t| (lc.id.clone(), t))
                    })
                    .collect(),
            };
            let mut map = BTreeMap::new();
            for (id, text) in texts {
                map.insert(id, encode_text_hash(&text, d_raw, HASH_ENCODER_SEED)?);
            }
            map
        }
    };

    let ckpt = pool.install(|| train(&dataset, &embeddings, &cfg.train))?;
    save_checkpoint(&ckpt, &args.out)?;

    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", args.out.display())));
    let rows: Vec<String> = ckpt
        .loss_history
        .iter()
        .enumerate()
        .map(|(epoch, l)| {
            format!(
                "{},{},{},{},{},{}",
                epoch, l.lattice_loss, l.coord_loss, l.type_vb_loss, l.type_ce_loss, l.total
            )
        })
        .collect();
    super::write_lines(&history_path, &rows)?;

    let provenance = Provenance::new("train", &cfg, cfg.train.seed);
    eprintln!(
        "trained {} epochs on {} structures (config {}) -> {}",
        ckpt.epoch,
        dataset.len(),
        provenance.config_hash,
        args.out.display()
    );
    Ok(())
}
