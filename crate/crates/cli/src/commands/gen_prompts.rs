//! `xtalgen gen-prompts`: one short prompt per dataset record.

use std::path::PathBuf;

use clap::Parser;

use crate::config::{load_config, Provenance};
use xtalgen::crystal::io::read_jsonl_dataset;
use xtalgen::prompts::{make_short_prompt, PromptWire};
use xtalgen::Result;

#[derive(Parser)]
pub struct Args {
    /// Input dataset JSONL.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output prompt JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional run config (echoed into provenance).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dataset = read_jsonl_dataset(&args.dataset)?;
    let mut lines = vec![Provenance::new("gen-prompts", &cfg, args.seed).jsonl_line()];
    let mut skipped = 0usize;
    for lc in &dataset {
        match make_short_prompt(&lc.crystal.meta) {
            Ok(text) => {
                let wire = PromptWire {
                    id: lc.id.clone(),
                    text,
                    types: Some(lc.crystal.atom_types().to_vec()),
                };
                lines.push(serde_json::to_string(&wire).expect("prompt serialization"));
            }
            Err(_) => skipped += 1,
        }
    }
    super::write_lines(&args.out, &lines)?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} records without a formula");
    }
    eprintln!(
        "wrote {} prompts to {}",
        lines.len() - 1,
        args.out.display()
    );
    Ok(())
}
