//! Training loop, predictor-corrector sampler, and checkpointing.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crystal::{det3, wrap_frac, Crystal, CrystalMeta, LabeledCrystal};
use crate::denoiser::{
    self, BatchItem, DenoiserConfig, DenoiserInput, DenoiserOutput, DenoiserParams,
    OutputGrads, TextInput,
};
use crate::diffusion::{
    self, combine_losses, coord_loss, coord_loss_grad, forward_coords, forward_lattice,
    forward_types, lattice_loss, lattice_loss_grad, type_loss, wn_k_max, wn_score,
    CoordWeighting, LossBreakdown, NoiseDraws,
};
use crate::error::{Error, Result};
use crate::schedule::{
    make_d3pm, make_ddpm, make_sigma, D3pmSchedule, DdpmKind, DdpmSchedule, SigmaSchedule,
};
use crate::util::stream_rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

// Stream labels for derived RNGs.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE_ITEM: u64 = 3;
const STREAM_SAMPLING: u64 = 4;

/// Learning-rate decay on plateau of the epoch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.6,
            patience: 30,
            min_lr: 1e-4,
        }
    }
}

/// Full training configuration, including schedule and network settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub lambda_l: f64,
    pub lambda_a: f64,
    pub lambda_x: f64,
    /// Cross-entropy weight inside the type loss.
    pub lambda_ce: f64,
    pub lr: f64,
    pub plateau: PlateauConfig,
    pub seed: u64,
    /// Diffusion steps T.
    pub t_steps: usize,
    pub ddpm: DdpmKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub coord_weighting: CoordWeighting,
    /// Probability of replacing the prompt with the learned null vector.
    pub text_dropout: f64,
    pub freeze_text_proj: bool,
    /// Kept for config compatibility; execution is always deterministic
    /// (ordered reductions independent of thread count).
    pub deterministic: bool,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 512,
            lambda_l: 1.0,
            lambda_a: 1.0,
            lambda_x: 10.0,
            lambda_ce: 0.01,
            lr: 1e-3,
            plateau: PlateauConfig::default(),
            seed: 0,
            t_steps: 500,
            ddpm: DdpmKind::default(),
            sigma_min: 0.005,
            sigma_max: 0.5,
            coord_weighting: CoordWeighting::default(),
            text_dropout: 0.1,
            freeze_text_proj: false,
            deterministic: true,
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lambda_l", self.lambda_l),
            ("lambda_a", self.lambda_a),
            ("lambda_x", self.lambda_x),
            ("lambda_ce", self.lambda_ce),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if self.t_steps < 2 {
            return Err(Error::Config("t_steps must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.text_dropout) {
            return Err(Error::Config("text_dropout must lie in [0, 1]".into()));
        }
        self.denoiser.validate()
    }
}

/// The three built schedules for one run.
#[derive(Debug, Clone)]
pub struct Schedules {
    pub ddpm: DdpmSchedule,
    pub sigma: SigmaSchedule,
    pub d3pm: D3pmSchedule,
}

pub fn build_schedules(cfg: &TrainConfig) -> Result<Schedules> {
    Ok(Schedules {
        ddpm: make_ddpm(cfg.t_steps, cfg.ddpm)?,
        sigma: make_sigma(cfg.t_steps, cfg.sigma_min, cfg.sigma_max)?,
        d3pm: make_d3pm(cfg.t_steps, cfg.denoiser.k_classes, cfg.lambda_ce)?,
    })
}

/// Adam state over the flattened parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(
        &mut self,
        params: &mut DenoiserParams,
        grads: &DenoiserParams,
        lr: f64,
        freeze_text_proj: bool,
    ) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        let gslices = grads.visit();
        let mut off = 0;
        for ((name, p), (_, g)) in params.visit_mut().into_iter().zip(gslices) {
            let frozen = freeze_text_proj && name.starts_with("text_proj");
            for (i, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                let k = off + i;
                self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * gv;
                self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * gv * gv;
                if !frozen {
                    let mhat = self.m[k] / bc1;
                    let vhat = self.v[k] / bc2;
                    *pv -= lr * mhat / (vhat.sqrt() + Self::EPS);
                }
            }
            off += p.len();
        }
    }
}

/// Per-item corruption state prepared before the network call.
struct PreparedItem {
    batch: BatchItem,
    eps_l: Array2<f64>,
    score_target: Array2<f64>,
    sigma_t: f64,
    a0: Vec<usize>,
    a_t: Vec<usize>,
    id: String,
}

fn prepare_item(
    lc: &LabeledCrystal,
    embedding: &Array1<f64>,
    cfg: &TrainConfig,
    sched: &Schedules,
    rng: &mut impl Rng,
) -> Result<PreparedItem> {
    let c = &lc.crystal;
    let n = c.num_atoms();
    let t = rng.random_range(1..=cfg.t_steps);
    let draws = NoiseDraws::sample(rng, n);
    let drop_text = cfg.text_dropout > 0.0 && rng.random::<f64>() < cfg.text_dropout;

    let l_t = forward_lattice(c.lattice(), t, &sched.ddpm, &draws.eps_l);
    let x_t = forward_coords(c.frac_coords(), t, &sched.sigma, &draws.eps_x);
    let a_t = forward_types(c.atom_types(), t, &sched.d3pm, &draws.type_draw);
    let sigma_t = sched.sigma.sigma_at(t);
    let score_target = wn_score(&x_t, c.frac_coords(), sigma_t, wn_k_max(sigma_t))?;

    Ok(PreparedItem {
        batch: BatchItem {
            atom_types: a_t.clone(),
            frac: x_t,
            lattice: l_t,
            t,
            alpha_bar_t: sched.ddpm.alpha_bar_at(t),
            sigma_t: sched.sigma.sigma_at(t),
            text: if drop_text {
                None
            } else {
                Some(embedding.clone())
            },
        },
        eps_l: draws.eps_l,
        score_target,
        sigma_t,
        a0: c.atom_types().to_vec(),
        a_t,
        id: lc.id.clone(),
    })
}

/// Loss and output gradients for one prepared item. Returns the per-term
/// breakdown alongside the weighted total.
fn item_loss(
    item: &PreparedItem,
    out: &DenoiserOutput,
    cfg: &TrainConfig,
    sched: &Schedules,
) -> Result<(LossBreakdown, OutputGrads)> {
    let lat = lattice_loss(&item.eps_l, &out.eps_hat_l);
    let coord = coord_loss(
        &item.score_target,
        &out.eps_hat_x,
        item.sigma_t,
        cfg.coord_weighting,
    )?;
    let ((vb, ce), type_grad) =
        type_loss(&out.a0_logits, &item.a0, &item.a_t, item.batch.t, &sched.d3pm)?;
    let breakdown = combine_losses(
        lat, coord, vb, ce, cfg.lambda_l, cfg.lambda_a, cfg.lambda_x, cfg.lambda_ce,
    );
    for (name, v) in [
        ("lattice", lat),
        ("coord", coord),
        ("type_vb", vb),
        ("type_ce", ce),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {name} loss on item {:?} at t = {} (lattice={lat:.3e}, coord={coord:.3e}, vb={vb:.3e}, ce={ce:.3e})",
                item.id, item.batch.t
            )));
        }
    }
    let grads = OutputGrads {
        d_eps_l: lattice_loss_grad(&item.eps_l, &out.eps_hat_l) * cfg.lambda_l,
        d_logits: type_grad * cfg.lambda_a,
        d_eps_x: coord_loss_grad(
            &item.score_target,
            &out.eps_hat_x,
            item.sigma_t,
            cfg.coord_weighting,
        ) * cfg.lambda_x,
    };
    Ok((breakdown, grads))
}

/// Train a denoiser on a dataset. Every crystal id must have a raw text
/// embedding in `embeddings`. Deterministic given the config seed.
pub fn train(
    dataset: &[LabeledCrystal],
    embeddings: &BTreeMap<String, Array1<f64>>,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty training dataset".into()));
    }
    for lc in dataset {
        let e = embeddings.get(&lc.id).ok_or_else(|| {
            Error::Embedding(format!("no embedding for crystal id {:?}", lc.id))
        })?;
        if e.len() != cfg.denoiser.text_raw_dim {
            return Err(Error::Embedding(format!(
                "embedding dim {} != configured text_raw_dim {}",
                e.len(),
                cfg.denoiser.text_raw_dim
            )));
        }
    }

    let sched = build_schedules(cfg)?;
    let mut params = denoiser::init_denoiser(
        &cfg.denoiser,
        crate::util::mix_seed(cfg.seed, &[STREAM_INIT, cfg.denoiser.init_seed]),
    )?;
    let mut adam = Adam::new(params.num_params());
    let batch_size = cfg.batch_size.min(dataset.len());

    let mut history: Vec<LossBreakdown> = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        // Epoch-seeded shuffle.
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = stream_rng(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_sum = LossBreakdown::default();
        let mut epoch_items = 0usize;
        for batch_idx in order.chunks(batch_size) {
            let mut prepared = Vec::with_capacity(batch_idx.len());
            for &di in batch_idx {
                let lc = &dataset[di];
                let mut rng =
                    stream_rng(cfg.seed, &[STREAM_SAMPLE_ITEM, epoch as u64, di as u64]);
                prepared.push(prepare_item(
                    lc,
                    &embeddings[&lc.id],
                    cfg,
                    &sched,
                    &mut rng,
                )?);
            }
            let batch: Vec<BatchItem> = prepared.iter().map(|p| p.batch.clone()).collect();
            let breakdowns: Vec<Mutex<LossBreakdown>> = (0..prepared.len())
                .map(|_| Mutex::new(LossBreakdown::default()))
                .collect();
            let loss_fn = |idx: usize, out: &DenoiserOutput| -> Result<(f64, OutputGrads)> {
                let (breakdown, grads) = item_loss(&prepared[idx], out, cfg, &sched)?;
                *breakdowns[idx].lock().unwrap() = breakdown;
                Ok((breakdown.total, grads))
            };
            let (_, mut grads) =
                denoiser::gradients(&params, cfg.t_steps, &batch, loss_fn)?;
            denoiser::scale_params(&mut grads, 1.0 / batch.len() as f64);
            adam.update(&mut params, &grads, lr, cfg.freeze_text_proj);

            for b in &breakdowns {
                let b = b.lock().unwrap();
                epoch_sum.lattice_loss += b.lattice_loss;
                epoch_sum.coord_loss += b.coord_loss;
                epoch_sum.type_vb_loss += b.type_vb_loss;
                epoch_sum.type_ce_loss += b.type_ce_loss;
                epoch_sum.total += b.total;
            }
            epoch_items += batch.len();
        }
        let scale = 1.0 / epoch_items as f64;
        let epoch_loss = LossBreakdown {
            lattice_loss: epoch_sum.lattice_loss * scale,
            coord_loss: epoch_sum.coord_loss * scale,
            type_vb_loss: epoch_sum.type_vb_loss * scale,
            type_ce_loss: epoch_sum.type_ce_loss * scale,
            total: epoch_sum.total * scale,
        };
        history.push(epoch_loss);

        // Plateau decay on the epoch total.
        if epoch_loss.total < best - 1e-12 {
            best = epoch_loss.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau.patience {
                lr = (lr * cfg.plateau.factor).max(cfg.plateau.min_lr);
                stale = 0;
            }
        }
    }

    // Quantize to f32 precision so the checkpoint wire format is exact and
    // saved models reproduce in-memory sampling bitwise.
    let flat: Vec<f64> = params.to_flat().iter().map(|&v| v as f32 as f64).collect();
    params.from_flat(&flat)?;

    let mut n_atoms_hist = BTreeMap::new();
    for lc in dataset {
        *n_atoms_hist.entry(lc.crystal.num_atoms()).or_insert(0usize) += 1;
    }

    Ok(Checkpoint {
        version: checkpoint::FORMAT_VERSION,
        train_config: cfg.clone(),
        epoch: cfg.epochs,
        loss_history: history,
        n_atoms_hist,
        rng_seed: cfg.seed,
        params,
    })
}

/// Sampling task mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Free generation of types, coordinates, and lattice.
    Gen,
    /// Structure prediction: types fixed, never updated.
    Csp,
}

/// Reverse-step rule for atom types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeStrategy {
    /// Sample a clean label from the logits, then the chain posterior.
    /// Consistent with the discrete-diffusion training objective.
    D3pmAncestral,
    /// Perturb logits with sigma-scaled noise and pick (argmax or sample).
    Alg2Softmax,
}

/// How `Alg2Softmax` picks the class from perturbed logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alg2Pick {
    Argmax,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOptions {
    pub mode: SampleMode,
    /// Subsample the reverse chain to this many steps (uniform stride).
    pub steps: Option<usize>,
    /// Corrector step-size scale.
    pub step_size: f64,
    pub type_strategy: TypeStrategy,
    pub alg2_pick: Alg2Pick,
    pub seed: u64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            mode: SampleMode::Gen,
            steps: None,
            step_size: 1e-5,
            type_strategy: TypeStrategy::D3pmAncestral,
            alg2_pick: Alg2Pick::Argmax,
            seed: 0,
        }
    }
}

/// Wall-clock record of one sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleTiming {
    pub per_step_seconds: Vec<f64>,
    pub total_seconds: f64,
}

/// One reverse step of atom types (spec op `type_update`; the chain runs
/// from t to t-1).
pub fn type_update(
    logits: &Array2<f64>,
    a_t: &[usize],
    t: usize,
    d3pm: &D3pmSchedule,
    strategy: TypeStrategy,
    pick: Alg2Pick,
    sigma_t: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    type_update_strided(logits, a_t, t - 1, t, d3pm, strategy, pick, sigma_t, rng)
}

/// Strided variant: one reverse jump from t to s < t.
#[allow(clippy::too_many_arguments)]
pub fn type_update_strided(
    logits: &Array2<f64>,
    a_t: &[usize],
    s: usize,
    t: usize,
    d3pm: &D3pmSchedule,
    strategy: TypeStrategy,
    pick: Alg2Pick,
    sigma_t: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let k = d3pm.k_classes;
    let mut out = Vec::with_capacity(a_t.len());
    for (i, &state) in a_t.iter().enumerate() {
        let row = logits.row(i).to_owned();
        let next = match strategy {
            TypeStrategy::D3pmAncestral => {
                if state != d3pm.mask_index {
                    // Revealed labels are frozen by the absorbing chain.
                    state
                } else {
                    let probs = diffusion::softmax(&row);
                    let a0 = sample_categorical(&probs, rng.random::<f64>());
                    if s == 0 {
                        a0
                    } else {
                        let post = diffusion::d3pm_posterior_strided(state, a0, s, t, d3pm)?;
                        sample_categorical(&post, rng.random::<f64>())
                    }
                }
            }
            TypeStrategy::Alg2Softmax => {
                let perturbed = Array1::from_shape_fn(k, |j| {
                    row[j] + sigma_t * rng.sample::<f64, _>(StandardNormal)
                });
                match pick {
                    Alg2Pick::Argmax => {
                        let mut best = 0;
                        for j in 1..k {
                            if perturbed[j] > perturbed[best] {
                                best = j;
                            }
                        }
                        best
                    }
                    Alg2Pick::Sample => {
                        let probs = diffusion::softmax(&perturbed);
                        sample_categorical(&probs, rng.random::<f64>())
                    }
                }
            }
        };
        out.push(next);
    }
    Ok(out)
}

fn sample_categorical(probs: &Array1<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Reverse-time step list: either the full chain T..1 or a uniform
/// subsample of `steps` values ending at 1.
pub fn step_schedule(t_max: usize, steps: Option<usize>) -> Vec<usize> {
    match steps {
        None => (1..=t_max).rev().collect(),
        Some(s) if s >= t_max => (1..=t_max).rev().collect(),
        Some(s) => {
            let s = s.max(1);
            let mut list: Vec<usize> = (1..=s)
                .map(|i| ((t_max as f64) * i as f64 / s as f64).round() as usize)
                .map(|t| t.clamp(1, t_max))
                .collect();
            list.dedup();
            list.reverse();
            list
        }
    }
}

/// Predictor-corrector sampling of one crystal.
///
/// In `Csp` mode `fixed_types` must be given; the type head is ignored and
/// types never change. In `Gen` mode the type chain starts from its
/// stationary state (all masked) under `D3pmAncestral`, or from uniformly
/// random labels under the literal `Alg2Softmax` rule.
pub fn sample(
    ckpt: &Checkpoint,
    prompt: Option<&Array1<f64>>,
    n_atoms: usize,
    fixed_types: Option<&[usize]>,
    opts: &SamplerOptions,
) -> Result<(Crystal, SampleTiming)> {
    let cfg = &ckpt.train_config;
    let sched = build_schedules(cfg)?;
    let params = &ckpt.params;
    let k = cfg.denoiser.k_classes;
    let t_max = cfg.t_steps;
    if n_atoms == 0 {
        return Err(Error::Config("n_atoms must be >= 1".into()));
    }
    if let Some(p) = prompt {
        if p.len() != cfg.denoiser.text_raw_dim {
            return Err(Error::Config(format!(
                "prompt embedding dim {} != configured {}",
                p.len(),
                cfg.denoiser.text_raw_dim
            )));
        }
    }

    let mut rng = stream_rng(opts.seed, &[STREAM_SAMPLING, ckpt.rng_seed]);

    // Initial noisy state.
    let mut lattice = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let mut frac = Array2::from_shape_fn((n_atoms, 3), |_| rng.random::<f64>());
    let mut types: Vec<usize> = match opts.mode {
        SampleMode::Csp => {
            let ft = fixed_types.ok_or_else(|| {
                Error::Config("csp mode requires fixed atom types".into())
            })?;
            if ft.len() != n_atoms {
                return Err(Error::Config("fixed_types length != n_atoms".into()));
            }
            if ft.iter().any(|&a| a >= k) {
                return Err(Error::Config("fixed type label out of range".into()));
            }
            ft.to_vec()
        }
        SampleMode::Gen => match opts.type_strategy {
            TypeStrategy::D3pmAncestral => vec![sched.d3pm.mask_index; n_atoms],
            TypeStrategy::Alg2Softmax => (0..n_atoms).map(|_| rng.random_range(0..k)).collect(),
        },
    };

    let t_list = step_schedule(t_max, opts.steps);
    let mut per_step = Vec::with_capacity(t_list.len());
    let started = Instant::now();

    for (si, &t) in t_list.iter().enumerate() {
        let step_started = Instant::now();
        let t_next = t_list.get(si + 1).copied().unwrap_or(0);

        let text_input = match prompt {
            Some(p) => TextInput::Raw(p),
            None => TextInput::Null,
        };
        let out = denoiser::forward(
            params,
            &DenoiserInput {
                atom_types: &types,
                frac: &frac,
                lattice: &lattice,
                t,
                t_max,
                alpha_bar_t: sched.ddpm.alpha_bar_at(t),
                sigma_t: sched.sigma.sigma_at(t),
                text: text_input,
            },
        )
        .map_err(|e| Error::Numeric(format!("reverse step {si} (t = {t}): {e}")))?;

        // Lattice ancestral update (strided when t_next < t - 1).
        let ab_t = sched.ddpm.alpha_bar_at(t);
        let ab_s = sched.ddpm.alpha_bar_at(t_next);
        let alpha_eff = ab_t / ab_s;
        let beta_eff = 1.0 - alpha_eff;
        let noise_scale = (beta_eff * (1.0 - ab_s) / (1.0 - ab_t)).sqrt();
        let eps_l = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let mean = (&lattice - &(&out.eps_hat_l * (beta_eff / (1.0 - ab_t).sqrt())))
            / alpha_eff.sqrt();
        let new_lattice = &mean + &(&eps_l * noise_scale);

        // Type update (gen mode only; csp types are frozen by contract).
        if matches!(opts.mode, SampleMode::Gen) {
            types = type_update_strided(
                &out.a0_logits,
                &types,
                t_next,
                t,
                &sched.d3pm,
                opts.type_strategy,
                opts.alg2_pick,
                sched.sigma.sigma_at(t),
                &mut rng,
            )?;
        }

        // Coordinate predictor.
        let sigma_t = sched.sigma.sigma_at(t);
        let sigma_s = sched.sigma.sigma_at(t_next);
        let var_gap = (sigma_t * sigma_t - sigma_s * sigma_s).max(0.0);
        let eps_x = Array2::from_shape_fn((n_atoms, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let x_half = wrap_frac(
            &(&frac
                + &(&out.eps_hat_x * var_gap)
                + &(&eps_x * (sigma_s * var_gap.sqrt() / sigma_t))),
        )?;

        // Corrector: re-invoke on the mixed-time state, Langevin step.
        let out2 = denoiser::forward(
            params,
            &DenoiserInput {
                atom_types: &types,
                frac: &x_half,
                lattice: &new_lattice,
                t,
                t_max,
                alpha_bar_t: sched.ddpm.alpha_bar_at(t),
                sigma_t: sched.sigma.sigma_at(t),
                text: text_input,
            },
        )
        .map_err(|e| Error::Numeric(format!("corrector at step {si} (t = {t}): {e}")))?;
        let eta = opts.step_size * sigma_s / sigma_t;
        let eps_x2 = Array2::from_shape_fn((n_atoms, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let x_next = wrap_frac(
            &(&x_half + &(&out2.eps_hat_x * eta) + &(&eps_x2 * (2.0 * eta).sqrt())),
        )?;

        if !new_lattice.iter().all(|v| v.is_finite()) || !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite sampling state at step index {si} (t = {t})"
            )));
        }
        lattice = new_lattice;
        frac = x_next;
        per_step.push(step_started.elapsed().as_secs_f64());
    }

    // Degenerate-lattice guard: retry the final lattice draw once, then
    // give up rather than emit a singular cell.
    let mean_row_norm = (0..3)
        .map(|i| (0..3).map(|j| lattice[[i, j]] * lattice[[i, j]]).sum::<f64>().sqrt())
        .sum::<f64>()
        / 3.0;
    let degenerate = |l: &Array2<f64>| det3(&l.view()).abs() < 1e-6 * mean_row_norm.powi(3);
    if degenerate(&lattice) {
        let eps_l = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
        // Kick at the beta_1 noise scale relative to the cell size.
        let kick = sched.ddpm.beta_at(1).sqrt() * mean_row_norm.max(1e-6);
        let retry = &lattice + &(&eps_l * kick);
        if degenerate(&retry) {
            return Err(Error::Numeric(
                "degenerate lattice at the end of sampling".into(),
            ));
        }
        lattice = retry;
    }
    // A left-handed basis describes the same lattice; flip to positive
    // orientation (third row and coordinate component together).
    if det3(&lattice.view()) < 0.0 {
        for j in 0..3 {
            lattice[[2, j]] = -lattice[[2, j]];
        }
        for i in 0..n_atoms {
            frac[[i, 2]] = -frac[[i, 2]];
        }
        frac = wrap_frac(&frac)?;
    }

    let crystal = Crystal::new(types, frac, lattice, CrystalMeta::default())?;
    Ok((
        crystal,
        SampleTiming {
            per_step_seconds: per_step,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Draw a gen-mode atom count from the checkpoint's training histogram.
pub fn draw_n_atoms(ckpt: &Checkpoint, rng: &mut impl Rng) -> usize {
    let total: usize = ckpt.n_atoms_hist.values().sum();
    if total == 0 {
        return 1;
    }
    let mut u = rng.random_range(0..total);
    for (&n, &count) in &ckpt.n_atoms_hist {
        if u < count {
            return n;
        }
        u -= count;
    }
    *ckpt.n_atoms_hist.keys().next_back().unwrap_or(&1)
}

#[cfg(test)]
mod tests;
