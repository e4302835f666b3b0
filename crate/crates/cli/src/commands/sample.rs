//! `xtalgen sample`: draw crystals from a checkpoint, one group of
//! `--num-samples` per prompt; ids are `{prompt_id}#{index}`. Structures
//! go to `--out`; wall-clock timings to `<out>.timings.json`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;
use ndarray::Array1;
use rayon::prelude::*;

use crate::config::{load_config, thread_pool, Provenance, HASH_ENCODER_SEED};
use xtalgen::crystal::io::record_to_json_line;
use xtalgen::crystal::LabeledCrystal;
use xtalgen::engine::{draw_n_atoms, load_checkpoint, sample, SampleMode, SamplerOptions};
use xtalgen::formula::parse_formula;
use xtalgen::prompts::{encode_text_hash, load_external_embeddings, parse_prompt, read_prompts};
use xtalgen::util::{mix_seed, stream_rng};
use xtalgen::{Error, Result};

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gen (free generation) or csp (fixed types from the prompt record).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub num_samples: usize,
    /// Subsample the reverse chain to this many steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Type update rule: d3pm_ancestral or alg2_softmax.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// External raw embeddings keyed by prompt id.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.sampler.steps = Some(steps);
    }
    if let Some(ss) = args.step_size {
        cfg.sampler.step_size = ss;
    }
    if let Some(mode) = &args.mode {
        cfg.sampler.mode = match mode.as_str() {
            "gen" => SampleMode::Gen,
            "csp" => SampleMode::Csp,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        };
    }
    if let Some(s) = &args.strategy {
        cfg.sampler.type_strategy = match s.as_str() {
            "d3pm_ancestral" => xtalgen::engine::TypeStrategy::D3pmAncestral,
            "alg2_softmax" => xtalgen::engine::TypeStrategy::Alg2Softmax,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        };
    }
    if args.num_samples == 0 {
        return Err(Error::Config("--num-samples must be >= 1".into()));
    }

    let ckpt = load_checkpoint(&args.ckpt)?;
    let prompts = read_prompts(&args.prompts)?;
    let d_raw = ckpt.train_config.denoiser.text_raw_dim;
    let external: Option<BTreeMap<String, Array1<f64>>> = match &args.embeddings {
        Some(p) => Some(load_external_embeddings(p)?),
        None => None,
    };

    // Resolve per-prompt embedding, atom count, and fixed types up front.
    struct Task {
        id: String,
        embedding: Array1<f64>,
        n_atoms: usize,
        fixed_types: Option<Vec<usize>>,
    }
    let mut tasks = Vec::new();
    for (pi, prompt) in prompts.iter().enumerate() {
        let embedding = match &external {
            Some(map) => xtalgen::prompts::lookup_embedding(map, &prompt.id)?.clone(),
            None => encode_text_hash(&prompt.text, d_raw, HASH_ENCODER_SEED)?,
        };
        if embedding.len() != d_raw {
            return Err(Error::Embedding(format!(
                "embedding dim {} for prompt {:?} != model text_raw_dim {d_raw}",
                embedding.len(),
                prompt.id
            )));
        }
        let fixed_types = match cfg.sampler.mode {
            SampleMode::Csp => Some(prompt.types.clone().ok_or_else(|| {
                Error::Prompt(format!(
                    "csp mode requires a types field on prompt {:?}",
                    prompt.id
                ))
            })?),
            SampleMode::Gen => None,
        };
        let n_atoms = match (&fixed_types, parse_formula_atoms(&prompt.text)) {
            (Some(t), _) => t.len(),
            (None, Some(n)) => n,
            (None, None) => {
                let mut rng = stream_rng(cfg.sampler.seed, &[0xA7, pi as u64]);
                draw_n_atoms(&ckpt, &mut rng)
            }
        };
        tasks.push(Task {
            id: prompt.id.clone(),
            embedding,
            n_atoms,
            fixed_types,
        });
    }

    let pool = thread_pool(args.jobs)?;
    let results: Vec<Result<(LabeledCrystal, f64, usize)>> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .flat_map(|(pi, task)| {
                (0..args.num_samples)
                    .into_par_iter()
                    .map(move |k| (pi, task, k))
            })
            .map(|(pi, task, k)| {
                let opts = SamplerOptions {
                    seed: mix_seed(cfg.sampler.seed, &[pi as u64, k as u64]),
                    ..cfg.sampler.clone()
                };
                let (crystal, timing) = sample(
                    &ckpt,
                    Some(&task.embedding),
                    task.n_atoms,
                    task.fixed_types.as_deref(),
                    &opts,
                )?;
                Ok((
                    LabeledCrystal {
                        id: format!("{}#{k}", task.id),
                        crystal,
                    },
                    timing.total_seconds,
                    timing.per_step_seconds.len(),
                ))
            })
            .collect()
    });

    let mut lines = vec![Provenance::new("sample", &cfg, cfg.sampler.seed).jsonl_line()];
    let mut timing_entries = Vec::new();
    for r in results {
        let (lc, total, steps) = r?;
        timing_entries.push(serde_json::json!({
            "id": lc.id,
            "total_seconds": total,
            "steps": steps,
        }));
        lines.push(record_to_json_line(&lc));
    }
    super::write_lines(&args.out, &lines)?;

    let timing_path = PathBuf::from(format!("{}.timings.json", args.out.display()));
    let timing_doc = serde_json::json!({
        "provenance": Provenance::new("sample", &cfg, cfg.sampler.seed),
        "samples": timing_entries,
    });
    std::fs::write(
        &timing_path,
        serde_json::to_string_pretty(&timing_doc).expect("timing serialization"),
    )
    .map_err(|e| Error::io(timing_path.display().to_string(), e))?;

    eprintln!(
        "wrote {} structures to {}",
        lines.len() - 1,
        args.out.display()
    );
    Ok(())
}

/// Atom count implied by the formula clause of a prompt, if present.
fn parse_formula_atoms(text: &str) -> Option<usize> {
    let constraints = parse_prompt(text).ok()?;
    let formula = constraints.formula?;
    let comp = parse_formula(&formula).ok()?;
    let total: u32 = comp.values().sum();
    Some(total as usize)
}
