//! `xtalgen evaluate`: the full metric protocol over generated and
//! reference JSONL sets, with optional prompt-correctness checks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{load_config, thread_pool, Provenance};
use xtalgen::crystal::io::read_jsonl_dataset;
use xtalgen::eval::{evaluate, report_csv_rows, validate_report_json};
use xtalgen::prompts::{parse_prompt, read_prompts, PromptConstraints};
use xtalgen::{Error, Result};

#[derive(Parser)]
pub struct Args {
    /// Generated structures JSONL (ids `{ref_id}#{k}`).
    #[arg(long)]
    pub gens: PathBuf,
    /// Reference structures JSONL.
    #[arg(long)]
    pub refs: PathBuf,
    /// Prompts for the correctness section (omitted when absent).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV flattening (name, value, count rows).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let gens = read_jsonl_dataset(&args.gens)?;
    let refs = read_jsonl_dataset(&args.refs)?;

    let constraints: Option<BTreeMap<String, PromptConstraints>> = match &args.prompts {
        Some(path) => {
            let mut map = BTreeMap::new();
            for wire in read_prompts(path)? {
                map.insert(wire.id.clone(), parse_prompt(&wire.text)?);
            }
            Some(map)
        }
        None => None,
    };

    let pool = thread_pool(args.jobs)?;
    let report =
        pool.install(|| evaluate(&gens, &refs, constraints.as_ref(), &cfg.eval, None))?;

    let mut doc = serde_json::to_value(&report).expect("report serialization");
    validate_report_json(&doc)?;
    doc.as_object_mut().expect("report object").insert(
        "provenance".to_string(),
        serde_json::to_value(Provenance::new("evaluate", &cfg, args.seed))
            .expect("provenance serialization"),
    );
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&doc).expect("report serialization"),
    )
    .map_err(|e| Error::io(args.out.display().to_string(), e))?;

    if let Some(csv_path) = &args.csv {
        let rows: Vec<String> = report_csv_rows(&report, gens.len())
            .into_iter()
            .map(|(name, value, count)| format!("{name},{value},{count}"))
            .collect();
        super::write_lines(csv_path, &rows)?;
    }

    eprintln!("wrote report to {}", args.out.display());
    Ok(())
}
