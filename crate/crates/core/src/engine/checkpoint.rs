//! Self-contained checkpoint files.
//!
//! Layout: one JSON header line (version, full train config, epoch, loss
//! history, atom-count histogram, rng seed, parameter count), a newline,
//! then a little-endian u64 float count followed by the parameters as
//! little-endian f32 in the fixed `DenoiserParams::visit` order. Training
//! quantizes parameters to f32 before building the checkpoint, so the
//! round trip is lossless.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{init_denoiser, DenoiserParams};
use crate::diffusion::LossBreakdown;
use crate::error::{Error, Result};

use super::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

/// A trained model plus everything needed to sample from it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub loss_history: Vec<LossBreakdown>,
    /// Training-set atom counts, used to draw N in gen mode.
    pub n_atoms_hist: BTreeMap<usize, usize>,
    pub rng_seed: u64,
    pub params: DenoiserParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    train_config: TrainConfig,
    epoch: usize,
    loss_history: Vec<LossBreakdown>,
    n_atoms_hist: BTreeMap<usize, usize>,
    rng_seed: u64,
    param_count: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let flat = ckpt.params.to_flat();
    let header = Header {
        version: ckpt.version,
        train_config: ckpt.train_config.clone(),
        epoch: ckpt.epoch,
        loss_history: ckpt.loss_history.clone(),
        n_atoms_hist: ckpt.n_atoms_hist.clone(),
        rng_seed: ckpt.rng_seed,
        param_count: flat.len() as u64,
    };
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{header_json}").map_err(io_err)?;
    w.write_all(&(flat.len() as u64).to_le_bytes()).map_err(io_err)?;
    for v in &flat {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut header_line = Vec::new();
    {
        let mut byte = [0u8; 1];
        loop {
            match r.read_exact(&mut byte) {
                Ok(()) => {
                    if byte[0] == b'\n' {
                        break;
                    }
                    header_line.push(byte[0]);
                }
                Err(e) => return Err(Error::io(path.display().to_string(), e)),
            }
            if header_line.len() > 64 * 1024 * 1024 {
                return Err(Error::Checkpoint("header line runs away".into()));
            }
        }
    }
    let header: Header = serde_json::from_slice(&header_line)
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file {} vs supported {FORMAT_VERSION}",
            header.version
        )));
    }

    let mut count_bytes = [0u8; 8];
    r.read_exact(&mut count_bytes)
        .map_err(|_| Error::Checkpoint("truncated file: missing parameter count".into()))?;
    let count = u64::from_le_bytes(count_bytes);
    if count != header.param_count {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: blob {count} vs header {}",
            header.param_count
        )));
    }
    let mut flat = Vec::with_capacity(count as usize);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated parameter blob".into()))?;
        flat.push(f32::from_le_bytes(buf) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path.display().to_string(), e))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter blob".into()));
    }

    let mut params = init_denoiser(&header.train_config.denoiser, 0)?;
    params.from_flat(&flat)?;
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameters in blob".into()));
    }
    Ok(Checkpoint {
        version: header.version,
        train_config: header.train_config,
        epoch: header.epoch,
        loss_history: header.loss_history,
        n_atoms_hist: header.n_atoms_hist,
        rng_seed: header.rng_seed,
        params,
    })
}
