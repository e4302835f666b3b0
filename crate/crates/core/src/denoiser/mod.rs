//! Text-guided periodic-equivariant denoising network.
//!
//! Node inputs fuse a learned atom embedding, a sinusoidal time embedding,
//! and the projected text vector. Message passing runs over the fully
//! connected atom graph; each message sees both endpoint embeddings, the
//! (volume-normalized) lattice Gram matrix, and Fourier features of the
//! fractional coordinate difference, so node states are invariant to
//! rotation and to common fractional shifts. Three heads read out the
//! lattice noise (as an invariant 3x3 times the lattice), per-atom clean
//! class logits, and the coordinate score.
//!
//! The backward pass is hand-written and validated against central finite
//! differences.

pub mod nn;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::stream_rng;
pub use nn::Activation;
use nn::{Mlp, MlpCache};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Message-passing layers K.
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Fourier frequency count n_f; each scalar difference expands to
    /// 2 n_f features.
    pub fourier_freqs: usize,
    /// Sinusoidal time embedding width (even).
    pub time_embed_dim: usize,
    /// Projected text dimension d.
    pub text_proj_dim: usize,
    /// Raw text embedding dimension fed to the projection.
    pub text_raw_dim: usize,
    pub atom_embed_dim: usize,
    /// Real atom classes k (the mask state is k).
    pub k_classes: usize,
    pub activation: Activation,
    /// Feed the Gram matrix shape-normalized by volume^(2/3); the cell
    /// scale then travels through a separate bounded log-volume channel.
    /// The combination carries the same information as the raw Gram but
    /// stays well-conditioned across decades of cell size. `false` feeds
    /// raw Gram entries instead.
    pub normalize_gram: bool,
    pub init_seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            num_layers: 4,
            hidden_dim: 512,
            fourier_freqs: 10,
            time_embed_dim: 64,
            text_proj_dim: 64,
            text_raw_dim: 64,
            atom_embed_dim: 128,
            k_classes: 100,
            activation: Activation::Silu,
            normalize_gram: true,
            init_seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("fourier_freqs", self.fourier_freqs),
            ("time_embed_dim", self.time_embed_dim),
            ("text_proj_dim", self.text_proj_dim),
            ("text_raw_dim", self.text_raw_dim),
            ("atom_embed_dim", self.atom_embed_dim),
            ("k_classes", self.k_classes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        Ok(())
    }

    fn fuse_in_dim(&self) -> usize {
        self.atom_embed_dim + self.time_embed_dim + self.text_proj_dim
    }

    fn pair_in_dim(&self) -> usize {
        2 * self.hidden_dim + GEOM_FEATURES + 6 * self.fourier_freqs
    }
}

/// One message-passing layer: message MLP and update MLP.
#[derive(Debug, Clone)]
pub struct Egcl {
    pub msg: Mlp,
    pub upd: Mlp,
}

/// All learnable weights.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub cfg: DenoiserConfig,
    /// (k + 1) x emb; the extra row embeds the mask state.
    pub atom_embed: Array2<f64>,
    /// Two-layer projection raw -> d.
    pub text_proj: Mlp,
    /// Learned stand-in for the projected text when no prompt is given.
    pub null_text: Array1<f64>,
    /// Input fusion MLP.
    pub fuse: Mlp,
    pub layers: Vec<Egcl>,
    pub head_lattice: Mlp,
    pub head_type: Mlp,
    pub head_coord: Mlp,
}

/// Deterministic fan-in-scaled initialization.
pub fn init_denoiser(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, &[0xD0]);
    use rand::Rng;
    use rand_distr::StandardNormal;
    let h = cfg.hidden_dim;
    let atom_embed = Array2::from_shape_fn((cfg.k_classes + 1, cfg.atom_embed_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let text_proj = Mlp::init(
        &mut rng,
        cfg.text_raw_dim,
        cfg.text_proj_dim,
        cfg.text_proj_dim,
        cfg.activation,
    );
    let null_text = Array1::from_shape_fn(cfg.text_proj_dim, |_| {
        rng.sample::<f64, _>(StandardNormal) / (cfg.text_proj_dim as f64).sqrt()
    });
    let fuse = Mlp::init(&mut rng, cfg.fuse_in_dim(), h, h, cfg.activation);
    let layers = (0..cfg.num_layers)
        .map(|_| Egcl {
            msg: Mlp::init(&mut rng, cfg.pair_in_dim(), h, h, cfg.activation),
            upd: Mlp::init(&mut rng, 2 * h, h, h, cfg.activation),
        })
        .collect();
    // The lattice head reads the pooled embedding plus a skip connection
    // of the geometric features and time embedding (the same invariants
    // the messages see); its zero-initialized final layer makes it start
    // as the identity clean-lattice predictor.
    let mut head_lattice = Mlp::init(
        &mut rng,
        h + GEOM_FEATURES + cfg.time_embed_dim,
        h,
        9,
        cfg.activation,
    );
    head_lattice.l2.w.fill(0.0);
    let head_type = Mlp::init(&mut rng, h, h, cfg.k_classes, cfg.activation);
    let head_coord = Mlp::init(&mut rng, h, h, 3, cfg.activation);
    Ok(DenoiserParams {
        cfg: cfg.clone(),
        atom_embed,
        text_proj,
        null_text,
        fuse,
        layers,
        head_lattice,
        head_type,
        head_coord,
    })
}

impl DenoiserParams {
    pub fn zeros_like(&self) -> DenoiserParams {
        DenoiserParams {
            cfg: self.cfg.clone(),
            atom_embed: Array2::zeros(self.atom_embed.raw_dim()),
            text_proj: self.text_proj.zeros_like(),
            null_text: Array1::zeros(self.null_text.raw_dim()),
            fuse: self.fuse.zeros_like(),
            layers: self
                .layers
                .iter()
                .map(|l| Egcl {
                    msg: l.msg.zeros_like(),
                    upd: l.upd.zeros_like(),
                })
                .collect(),
            head_lattice: self.head_lattice.zeros_like(),
            head_type: self.head_type.zeros_like(),
            head_coord: self.head_coord.zeros_like(),
        }
    }

    /// Visit all parameter tensors as flat slices in the fixed order used
    /// by serialization, the optimizer state, and finite-difference tests:
    /// atom_embed, text_proj (l1.w, l1.b, l2.w, l2.b), null_text, fuse,
    /// layers in order (msg then upd), head_lattice, head_type, head_coord.
    pub fn visit<'a>(&'a self) -> Vec<(String, &'a [f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        let mlp = |name: &str, m: &'a Mlp, out: &mut Vec<(String, &'a [f64])>| {
            out.push((format!("{name}.l1.w"), m.l1.w.as_slice().unwrap()));
            out.push((format!("{name}.l1.b"), m.l1.b.as_slice().unwrap()));
            out.push((format!("{name}.l2.w"), m.l2.w.as_slice().unwrap()));
            out.push((format!("{name}.l2.b"), m.l2.b.as_slice().unwrap()));
        };
        out.push(("atom_embed".into(), self.atom_embed.as_slice().unwrap()));
        mlp("text_proj", &self.text_proj, &mut out);
        out.push(("null_text".into(), self.null_text.as_slice().unwrap()));
        mlp("fuse", &self.fuse, &mut out);
        for (i, layer) in self.layers.iter().enumerate() {
            mlp(&format!("layer{i}.msg"), &layer.msg, &mut out);
            mlp(&format!("layer{i}.upd"), &layer.upd, &mut out);
        }
        mlp("head_lattice", &self.head_lattice, &mut out);
        mlp("head_type", &self.head_type, &mut out);
        mlp("head_coord", &self.head_coord, &mut out);
        out
    }

    /// Mutable variant of [`visit`], same order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn mlp<'a>(name: &str, m: &'a mut Mlp, out: &mut Vec<(String, &'a mut [f64])>) {
            out.push((format!("{name}.l1.w"), m.l1.w.as_slice_mut().unwrap()));
            out.push((format!("{name}.l1.b"), m.l1.b.as_slice_mut().unwrap()));
            out.push((format!("{name}.l2.w"), m.l2.w.as_slice_mut().unwrap()));
            out.push((format!("{name}.l2.b"), m.l2.b.as_slice_mut().unwrap()));
        }
        out.push(("atom_embed".into(), self.atom_embed.as_slice_mut().unwrap()));
        mlp("text_proj", &mut self.text_proj, &mut out);
        out.push(("null_text".into(), self.null_text.as_slice_mut().unwrap()));
        mlp("fuse", &mut self.fuse, &mut out);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            mlp(&format!("layer{i}.msg"), &mut layer.msg, &mut out);
            mlp(&format!("layer{i}.upd"), &mut layer.upd, &mut out);
        }
        mlp("head_lattice", &mut self.head_lattice, &mut out);
        mlp("head_type", &mut self.head_type, &mut out);
        mlp("head_coord", &mut self.head_coord, &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.visit().iter().map(|(_, s)| s.len()).sum()
    }

    /// Concatenate all parameters in visit order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (_, s) in self.visit() {
            v.extend_from_slice(s);
        }
        v
    }

    /// Load parameters from a flat vector in visit order.
    pub fn from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for (_, s) in self.visit_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }
}

/// Text conditioning for one forward call.
#[derive(Debug, Clone, Copy)]
pub enum TextInput<'a> {
    /// Raw text embedding, projected inside the network.
    Raw(&'a Array1<f64>),
    /// Use the learned null vector (prompt dropped or absent).
    Null,
}

/// Inputs to one denoiser evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    /// Atom states in 0..=k (k is the mask).
    pub atom_types: &'a [usize],
    /// N x 3 fractional coordinates.
    pub frac: &'a Array2<f64>,
    /// 3 x 3 row-vector lattice.
    pub lattice: &'a Array2<f64>,
    /// Diffusion step, 1..=t_max.
    pub t: usize,
    pub t_max: usize,
    /// Cumulative alpha_bar at step t; conditions the lattice head's
    /// clean-lattice parameterization.
    pub alpha_bar_t: f64,
    /// Coordinate noise scale at step t; the coordinate head's raw output
    /// is divided by it so the network regresses order-one quantities at
    /// every step.
    pub sigma_t: f64,
    pub text: TextInput<'a>,
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    /// 3 x 3 lattice noise prediction.
    pub eps_hat_l: Array2<f64>,
    /// N x k clean-class logits.
    pub a0_logits: Array2<f64>,
    /// N x 3 coordinate score prediction.
    pub eps_hat_x: Array2<f64>,
}

/// Gradients of a scalar loss with respect to the three outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub d_eps_l: Array2<f64>,
    pub d_logits: Array2<f64>,
    pub d_eps_x: Array2<f64>,
}

/// Interleaved sin/cos Fourier features of a scalar: for m = 1..n_f the
/// pair (sin(2 pi m d), cos(2 pi m d)). Exactly period-1 in `d`.
pub fn fourier_features(d: f64, n_f: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_f);
    for m in 1..=n_f {
        let arg = 2.0 * std::f64::consts::PI * m as f64 * d;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Standard sinusoidal embedding of an integer step.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Array1<f64> {
    debug_assert!(t <= t_max);
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    out
}

struct LayerCache {
    msg: MlpCache,
    upd: MlpCache,
}

pub struct ForwardCache {
    n: usize,
    atom_types: Vec<usize>,
    lattice: Array2<f64>,
    /// -sqrt(ab)/sqrt(1-ab), the factor on the predicted clean lattice.
    l0_coeff: f64,
    sigma_t: f64,
    used_null: bool,
    text: Option<MlpCache>,
    fuse: MlpCache,
    layers: Vec<LayerCache>,
    head_lattice: MlpCache,
    head_type: MlpCache,
    head_coord: MlpCache,
}

/// Geometric message features: six (shape-normalized) Gram entries, six
/// entries of the ridged inverse Gram, and one log-scale channel. The
/// inverse entries matter: the optimal lattice denoiser for near-isotropic
/// data is close to a linear combination of I, G and G^-1 acting on L, so
/// exposing G^-1 directly keeps the head's job easy.
const GEOM_FEATURES: usize = 13;

fn gram_features(lattice: &Array2<f64>, normalize: bool) -> [f64; GEOM_FEATURES] {
    let g = lattice.dot(&lattice.t());
    let det = crate::crystal::det3(&lattice.view()).abs();
    let scale = if normalize {
        // Volume^(2/3), floored at trace/9 (one third of the AM-GM bound)
        // so the features stay within a few units when reverse diffusion
        // passes through a flat or near-singular cell.
        let trace = g[[0, 0]] + g[[1, 1]] + g[[2, 2]];
        det.powf(2.0 / 3.0).max(trace / 9.0).max(1e-12)
    } else {
        1.0
    };
    let gn = &g / scale;
    // Ridged inverse keeps the entries bounded near singular cells.
    let ridged = &gn + &(Array2::<f64>::eye(3) * 0.1);
    let gn_inv = crate::crystal::inv3(&ridged.view())
        .unwrap_or_else(|_| Array2::eye(3) * 10.0);
    // Log edge length: bounded scale signal across decades of cell size.
    let log_scale = det.max(1e-12).ln() / 3.0;
    [
        gn[[0, 0]],
        gn[[0, 1]],
        gn[[0, 2]],
        gn[[1, 1]],
        gn[[1, 2]],
        gn[[2, 2]],
        gn_inv[[0, 0]],
        gn_inv[[0, 1]],
        gn_inv[[0, 2]],
        gn_inv[[1, 1]],
        gn_inv[[1, 2]],
        gn_inv[[2, 2]],
        log_scale,
    ]
}

/// Run the network. See the module docs for the architecture.
pub fn forward(params: &DenoiserParams, input: &DenoiserInput) -> Result<DenoiserOutput> {
    Ok(forward_cached(params, input)?.0)
}

pub fn forward_cached(
    params: &DenoiserParams,
    input: &DenoiserInput,
) -> Result<(DenoiserOutput, ForwardCache)> {
    let cfg = &params.cfg;
    let n = input.atom_types.len();
    if n == 0 {
        return Err(Error::Config("denoiser needs at least one atom".into()));
    }
    if input.frac.shape() != [n, 3] || input.lattice.shape() != [3, 3] {
        return Err(Error::Config("denoiser input shape mismatch".into()));
    }
    if !input.frac.iter().all(|v| v.is_finite()) || !input.lattice.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("denoiser input"));
    }
    if let Some(&bad) = input.atom_types.iter().find(|&&a| a > cfg.k_classes) {
        return Err(Error::Config(format!("atom state {bad} out of range")));
    }
    if !(input.alpha_bar_t > 0.0 && input.alpha_bar_t < 1.0) {
        return Err(Error::Config(format!(
            "alpha_bar_t = {} must lie in (0, 1)",
            input.alpha_bar_t
        )));
    }
    if !(input.sigma_t > 0.0 && input.sigma_t.is_finite()) {
        return Err(Error::Config(format!(
            "sigma_t = {} must be positive",
            input.sigma_t
        )));
    }

    // Text projection (or the learned null vector).
    let (cp, text_cache, used_null) = match input.text {
        TextInput::Raw(raw) => {
            if raw.len() != cfg.text_raw_dim {
                return Err(Error::Config(format!(
                    "raw text dim {} != configured {}",
                    raw.len(),
                    cfg.text_raw_dim
                )));
            }
            if !raw.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("text embedding"));
            }
            let x = raw.clone().insert_axis(Axis(0));
            let (y, cache) = params.text_proj.forward_cached(x);
            (y.row(0).to_owned(), Some(cache), false)
        }
        TextInput::Null => (params.null_text.clone(), None, true),
    };

    // Fused node inputs.
    let t_emb = time_embedding(input.t, input.t_max, cfg.time_embed_dim);
    let mut fuse_in = Array2::zeros((n, cfg.fuse_in_dim()));
    for i in 0..n {
        let emb = params.atom_embed.row(input.atom_types[i]);
        let mut row = fuse_in.row_mut(i);
        for (j, &v) in emb.iter().enumerate() {
            row[j] = v;
        }
        for (j, &v) in t_emb.iter().enumerate() {
            row[cfg.atom_embed_dim + j] = v;
        }
        for (j, &v) in cp.iter().enumerate() {
            row[cfg.atom_embed_dim + cfg.time_embed_dim + j] = v;
        }
    }
    let (mut h, fuse_cache) = params.fuse.forward_cached(fuse_in);

    let gram = gram_features(input.lattice, cfg.normalize_gram);

    // Pairwise Fourier features are fixed across layers (coordinates do
    // not update), so build them once.
    let n_f = cfg.fourier_freqs;
    let mut pair_geom = Array2::zeros((n * n, GEOM_FEATURES + 6 * n_f));
    for i in 0..n {
        for j in 0..n {
            let mut row = pair_geom.row_mut(i * n + j);
            for (k, &g) in gram.iter().enumerate() {
                row[k] = g;
            }
            for axis in 0..3 {
                let d = input.frac[[i, axis]] - input.frac[[j, axis]];
                for (k, v) in fourier_features(d, n_f).into_iter().enumerate() {
                    row[GEOM_FEATURES + axis * 2 * n_f + k] = v;
                }
            }
        }
    }

    let hdim = cfg.hidden_dim;
    let mut layer_caches = Vec::with_capacity(cfg.num_layers);
    for layer in &params.layers {
        // Pair features: h_i || h_j || gram || fourier(x_i - x_j).
        let mut pair_in = Array2::zeros((n * n, cfg.pair_in_dim()));
        for i in 0..n {
            for j in 0..n {
                let mut row = pair_in.row_mut(i * n + j);
                for (k, &v) in h.row(i).iter().enumerate() {
                    row[k] = v;
                }
                for (k, &v) in h.row(j).iter().enumerate() {
                    row[hdim + k] = v;
                }
                for (k, &v) in pair_geom.row(i * n + j).iter().enumerate() {
                    row[2 * hdim + k] = v;
                }
            }
        }
        let (msgs, msg_cache) = layer.msg.forward_cached(pair_in);
        // Aggregate: m_i = sum_j msg[i, j].
        let mut m = Array2::zeros((n, hdim));
        for i in 0..n {
            for j in 0..n {
                let src = msgs.row(i * n + j);
                let mut dst = m.row_mut(i);
                dst += &src;
            }
        }
        // Residual update: h <- h + upd(h || m).
        let mut upd_in = Array2::zeros((n, 2 * hdim));
        for i in 0..n {
            let mut row = upd_in.row_mut(i);
            for (k, &v) in h.row(i).iter().enumerate() {
                row[k] = v;
            }
            for (k, &v) in m.row(i).iter().enumerate() {
                row[hdim + k] = v;
            }
        }
        let (delta, upd_cache) = layer.upd.forward_cached(upd_in);
        h = &h + &delta;
        layer_caches.push(LayerCache {
            msg: msg_cache,
            upd: upd_cache,
        });
    }

    // Heads. The lattice head runs in the clean-lattice parameterization:
    // the MLP's 3x3 output S predicts L0 as (I + S) L, and the emitted
    // noise estimate is eps_hat = (L - sqrt(ab) L0_hat) / sqrt(1 - ab).
    // This keeps the reverse-step error multiplier near one even where a
    // single step carries most of the generation (alpha_bar ~ 0), and the
    // zero-initialized head starts as the identity denoiser.
    let ab = input.alpha_bar_t;
    let inv_root = 1.0 / (1.0 - ab).sqrt();
    let l0_coeff = -ab.sqrt() * inv_root;
    let pooled = h.sum_axis(Axis(0)) / n as f64;
    let mut head_in = Array2::zeros((1, hdim + GEOM_FEATURES + cfg.time_embed_dim));
    for (k, &v) in pooled.iter().enumerate() {
        head_in[[0, k]] = v;
    }
    for (k, &v) in gram.iter().enumerate() {
        head_in[[0, hdim + k]] = v;
    }
    for (k, &v) in t_emb.iter().enumerate() {
        head_in[[0, hdim + GEOM_FEATURES + k]] = v;
    }
    let (s9, head_lattice_cache) = params.head_lattice.forward_cached(head_in);
    let s = Array2::from_shape_fn((3, 3), |(i, j)| s9[[0, 3 * i + j]]);
    let eps_hat_l =
        input.lattice * (inv_root + l0_coeff) + s.dot(input.lattice) * l0_coeff;
    let (a0_logits, head_type_cache) = params.head_type.forward_cached(h.clone());
    let (raw_coord, head_coord_cache) = params.head_coord.forward_cached(h.clone());
    let eps_hat_x = raw_coord / input.sigma_t;

    let out = DenoiserOutput {
        eps_hat_l,
        a0_logits,
        eps_hat_x,
    };
    if !out.eps_hat_l.iter().all(|v| v.is_finite())
        || !out.a0_logits.iter().all(|v| v.is_finite())
        || !out.eps_hat_x.iter().all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("denoiser output"));
    }
    let cache = ForwardCache {
        n,
        atom_types: input.atom_types.to_vec(),
        lattice: input.lattice.clone(),
        l0_coeff,
        sigma_t: input.sigma_t,
        used_null,
        text: text_cache,
        fuse: fuse_cache,
        layers: layer_caches,
        head_lattice: head_lattice_cache,
        head_type: head_type_cache,
        head_coord: head_coord_cache,
    };
    Ok((out, cache))
}

/// Backpropagate output gradients, accumulating parameter gradients.
pub fn backward(
    params: &DenoiserParams,
    cache: &ForwardCache,
    d_out: &OutputGrads,
    grads: &mut DenoiserParams,
) {
    let cfg = &params.cfg;
    let n = cache.n;
    let hdim = cfg.hidden_dim;

    // Lattice head: eps_L = inv_root L + l0_coeff S L  =>
    // dS = l0_coeff dEps . L^T.
    let ds = d_out.d_eps_l.dot(&cache.lattice.t()) * cache.l0_coeff;
    let ds9 = Array2::from_shape_fn((1, 9), |(_, k)| ds[[k / 3, k % 3]]);
    let d_head_in = params
        .head_lattice
        .backward(&cache.head_lattice, &ds9, &mut grads.head_lattice);
    // Only the pooled slice feeds back into the trunk; the geometric and
    // time features carry no parameters.
    let mut dh = Array2::from_shape_fn((n, hdim), |(_, j)| d_head_in[[0, j]] / n as f64);

    dh += &params
        .head_type
        .backward(&cache.head_type, &d_out.d_logits, &mut grads.head_type);
    let d_raw_coord = &d_out.d_eps_x / cache.sigma_t;
    dh += &params
        .head_coord
        .backward(&cache.head_coord, &d_raw_coord, &mut grads.head_coord);

    // Message-passing layers, reversed.
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let lc = &cache.layers[li];
        // h_out = h_in + upd(h_in || m): residual plus update path.
        let d_upd_in = layer.upd.backward(&lc.upd, &dh, &mut grads.layers[li].upd);
        let mut dh_prev = dh.clone();
        let mut dm = Array2::zeros((n, hdim));
        for i in 0..n {
            for k in 0..hdim {
                dh_prev[[i, k]] += d_upd_in[[i, k]];
                dm[[i, k]] = d_upd_in[[i, hdim + k]];
            }
        }
        // dmsg[(i,j)] = dm[i]; backprop through the message MLP.
        let mut dmsg = Array2::zeros((n * n, hdim));
        for i in 0..n {
            for j in 0..n {
                for k in 0..hdim {
                    dmsg[[i * n + j, k]] = dm[[i, k]];
                }
            }
        }
        let d_pair = layer.msg.backward(&lc.msg, &dmsg, &mut grads.layers[li].msg);
        for i in 0..n {
            for j in 0..n {
                let row = d_pair.row(i * n + j);
                for k in 0..hdim {
                    dh_prev[[i, k]] += row[k];
                    dh_prev[[j, k]] += row[hdim + k];
                }
            }
        }
        dh = dh_prev;
    }

    // Fusion and inputs.
    let d_fuse_in = params.fuse.backward(&cache.fuse, &dh, &mut grads.fuse);
    let emb = cfg.atom_embed_dim;
    let text_off = emb + cfg.time_embed_dim;
    let mut d_cp = Array1::<f64>::zeros(cfg.text_proj_dim);
    for i in 0..n {
        let a = cache.atom_types[i];
        for k in 0..emb {
            grads.atom_embed[[a, k]] += d_fuse_in[[i, k]];
        }
        for k in 0..cfg.text_proj_dim {
            d_cp[k] += d_fuse_in[[i, text_off + k]];
        }
    }
    if cache.used_null {
        grads.null_text += &d_cp;
    } else if let Some(tc) = &cache.text {
        let d = d_cp.insert_axis(Axis(0));
        params.text_proj.backward(tc, &d, &mut grads.text_proj);
    }
}

/// One training item: a corrupted crystal state plus its text embedding.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub atom_types: Vec<usize>,
    pub frac: Array2<f64>,
    pub lattice: Array2<f64>,
    pub t: usize,
    pub alpha_bar_t: f64,
    pub sigma_t: f64,
    /// Raw text embedding; `None` selects the learned null vector.
    pub text: Option<Array1<f64>>,
}

/// Forward + backward over a batch. `loss_fn(index, output)` returns the
/// scalar loss and output gradients for one item; the result is the summed
/// loss and summed parameter gradients. Items are processed in fixed-size
/// chunks folded in order, so the reduction is deterministic regardless of
/// thread count.
pub fn gradients<F>(
    params: &DenoiserParams,
    t_max: usize,
    batch: &[BatchItem],
    loss_fn: F,
) -> Result<(f64, DenoiserParams)>
where
    F: Fn(usize, &DenoiserOutput) -> Result<(f64, OutputGrads)> + Sync,
{
    const CHUNK: usize = 8;
    let chunks: Vec<(usize, &[BatchItem])> = batch.chunks(CHUNK).enumerate().collect();
    let partials: Vec<Result<(f64, DenoiserParams)>> = chunks
        .into_par_iter()
        .map(|(ci, chunk)| {
            let mut grads = params.zeros_like();
            let mut loss_sum = 0.0;
            for (k, item) in chunk.iter().enumerate() {
                let idx = ci * CHUNK + k;
                let input = DenoiserInput {
                    atom_types: &item.atom_types,
                    frac: &item.frac,
                    lattice: &item.lattice,
                    t: item.t,
                    t_max,
                    alpha_bar_t: item.alpha_bar_t,
                    sigma_t: item.sigma_t,
                    text: match &item.text {
                        Some(v) => TextInput::Raw(v),
                        None => TextInput::Null,
                    },
                };
                let (out, cache) = forward_cached(params, &input)?;
                let (loss, d_out) = loss_fn(idx, &out)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at batch item {idx}"
                    )));
                }
                loss_sum += loss;
                backward(params, &cache, &d_out, &mut grads);
            }
            Ok((loss_sum, grads))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for partial in partials {
        let (l, g) = partial?;
        total += l;
        add_params(&mut grads, &g);
    }
    Ok((total, grads))
}

/// Elementwise in-place addition of two parameter containers.
pub fn add_params(dst: &mut DenoiserParams, src: &DenoiserParams) {
    let srcs = src.visit();
    for ((_, d), (_, s)) in dst.visit_mut().into_iter().zip(srcs) {
        for (x, y) in d.iter_mut().zip(s) {
            *x += y;
        }
    }
}

/// Elementwise in-place scaling.
pub fn scale_params(p: &mut DenoiserParams, factor: f64) {
    for (_, s) in p.visit_mut() {
        for x in s.iter_mut() {
            *x *= factor;
        }
    }
}

#[cfg(test)]
mod tests;
