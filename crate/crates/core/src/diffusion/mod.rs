//! Forward corruption, reverse-step statistics, score targets, and the
//! three loss terms of the joint diffusion.
//!
//! Reductions are means: over the 9 lattice entries for the lattice loss,
//! over the N x 3 coordinate entries for the coordinate loss, and over
//! atoms for the type losses. This keeps the loss weights interpretable
//! independently of system size.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crystal::{wrap_centered, wrap_frac};
use crate::error::{Error, Result};
use crate::schedule::{D3pmSchedule, DdpmSchedule, SigmaSchedule};

/// Per-sample noise draws with shapes matching the target crystal.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    pub eps_l: Array2<f64>,
    pub eps_x: Array2<f64>,
    /// Per-atom uniform randoms for categorical corruption.
    pub type_draw: Vec<f64>,
}

impl NoiseDraws {
    pub fn sample(rng: &mut impl Rng, n_atoms: usize) -> NoiseDraws {
        use rand_distr::StandardNormal;
        NoiseDraws {
            eps_l: Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal)),
            eps_x: Array2::from_shape_fn((n_atoms, 3), |_| rng.sample::<f64, _>(StandardNormal)),
            type_draw: (0..n_atoms).map(|_| rng.random::<f64>()).collect(),
        }
    }
}

/// Weighting applied to the coordinate score-matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordWeighting {
    /// Plain mean squared error against the raw score target.
    Unit,
    /// Multiply by sigma_t^2, equalizing per-step magnitudes.
    SigmaSq,
}

impl Default for CoordWeighting {
    fn default() -> Self {
        CoordWeighting::SigmaSq
    }
}

/// The individual loss terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lattice_loss: f64,
    pub coord_loss: f64,
    pub type_vb_loss: f64,
    pub type_ce_loss: f64,
    pub total: f64,
}

/// Weighted combination `total = wl*lattice + wa*(vb + lambda*ce) + wx*coord`.
pub fn combine_losses(
    lattice: f64,
    coord: f64,
    type_vb: f64,
    type_ce: f64,
    lambda_l: f64,
    lambda_a: f64,
    lambda_x: f64,
    lambda_ce: f64,
) -> LossBreakdown {
    LossBreakdown {
        lattice_loss: lattice,
        coord_loss: coord,
        type_vb_loss: type_vb,
        type_ce_loss: type_ce,
        total: lambda_l * lattice + lambda_a * (type_vb + lambda_ce * type_ce) + lambda_x * coord,
    }
}

/// Gaussian forward corruption of the lattice:
/// `L_t = sqrt(alpha_bar_t) L_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_lattice(
    l0: &Array2<f64>,
    t: usize,
    sched: &DdpmSchedule,
    eps_l: &Array2<f64>,
) -> Array2<f64> {
    let ab = sched.alpha_bar_at(t);
    l0 * ab.sqrt() + eps_l * (1.0 - ab).sqrt()
}

/// Wrapped-normal forward corruption of fractional coordinates:
/// `X_t = wrap(X_0 + sigma_t eps)`.
pub fn forward_coords(
    x0: &Array2<f64>,
    t: usize,
    sched: &SigmaSchedule,
    eps_x: &Array2<f64>,
) -> Array2<f64> {
    let sigma = sched.sigma_at(t);
    wrap_frac(&(x0 + &(eps_x * sigma))).expect("finite forward coordinates")
}

/// Absorbing-chain forward corruption of atom types: each atom samples its
/// state at time t from its row of Q_bar_t using a provided uniform draw.
pub fn forward_types(
    a0: &[usize],
    t: usize,
    d3pm: &D3pmSchedule,
    type_draw: &[f64],
) -> Vec<usize> {
    assert_eq!(a0.len(), type_draw.len());
    let q_bar = d3pm.q_bar_at(t);
    a0.iter()
        .zip(type_draw)
        .map(|(&start, &u)| {
            let row = q_bar.row(start);
            let mut acc = 0.0;
            for (state, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return state;
                }
            }
            d3pm.mask_index
        })
        .collect()
}

/// Automatic truncation width for the wrapped-normal image sum: the error
/// is below 1e-12 for sigma <= 1 at k_max = 5; wider sigmas get more terms.
pub fn wn_k_max(sigma: f64) -> usize {
    if sigma <= 1.0 {
        5
    } else {
        (5.0 * sigma).ceil() as usize + 2
    }
}

/// Scalar wrapped-normal score: d/dx log sum_k exp(-(wrap(x - x0) + k)^2 /
/// (2 sigma^2)), with the difference wrapped to [-0.5, 0.5) so the result
/// is exactly periodic. Terms pair +-k so that odd symmetry about x0 holds
/// bitwise.
pub fn wn_score_scalar(x_t: f64, x0: f64, sigma: f64, k_max: usize) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Numeric(format!("sigma = {sigma} must be positive")));
    }
    if k_max < 1 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    let d = wrap_centered(x_t - x0);
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    // Normalize by the k = 0 exponent (the largest for |d| <= 0.5); the
    // normalizer is symmetric in d so pair sums stay exactly odd.
    let c2 = d * d;
    let term = |k: f64| {
        let dk = d + k;
        let w = ((c2 - dk * dk) * inv2s2).exp();
        (w, -dk * w)
    };
    let (w0, n0) = term(0.0);
    let mut denom = w0;
    let mut numer = n0;
    for k in 1..=k_max {
        let (wp, np) = term(k as f64);
        let (wm, nm) = term(-(k as f64));
        denom += wp + wm;
        numer += np + nm;
    }
    Ok(numer / denom / (sigma * sigma))
}

/// Elementwise wrapped-normal score for a coordinate matrix.
pub fn wn_score(
    x_t: &Array2<f64>,
    x0: &Array2<f64>,
    sigma: f64,
    k_max: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x_t.raw_dim());
    for ((o, &xt), &x0v) in out.iter_mut().zip(x_t.iter()).zip(x0.iter()) {
        *o = wn_score_scalar(xt, x0v, sigma, k_max)?;
    }
    Ok(out)
}

/// Mean squared error over the 9 lattice entries.
pub fn lattice_loss(eps_l: &Array2<f64>, eps_hat_l: &Array2<f64>) -> f64 {
    let diff = eps_hat_l - eps_l;
    diff.iter().map(|v| v * v).sum::<f64>() / 9.0
}

/// Gradient of [`lattice_loss`] with respect to the prediction.
pub fn lattice_loss_grad(eps_l: &Array2<f64>, eps_hat_l: &Array2<f64>) -> Array2<f64> {
    (eps_hat_l - eps_l) * (2.0 / 9.0)
}

/// Weighted coordinate score-matching loss: `w_t * mean((target - pred)^2)`
/// over the N x 3 entries, `w_t = sigma_t^2` by default.
pub fn coord_loss(
    score_target: &Array2<f64>,
    eps_hat_x: &Array2<f64>,
    sigma_t: f64,
    weighting: CoordWeighting,
) -> Result<f64> {
    if score_target.shape() != eps_hat_x.shape() {
        return Err(Error::Numeric("coordinate loss shape mismatch".into()));
    }
    let w = match weighting {
        CoordWeighting::Unit => 1.0,
        CoordWeighting::SigmaSq => sigma_t * sigma_t,
    };
    let n = score_target.len() as f64;
    let sum: f64 = score_target
        .iter()
        .zip(eps_hat_x.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(w * sum / n)
}

/// Gradient of [`coord_loss`] with respect to the prediction.
pub fn coord_loss_grad(
    score_target: &Array2<f64>,
    eps_hat_x: &Array2<f64>,
    sigma_t: f64,
    weighting: CoordWeighting,
) -> Array2<f64> {
    let w = match weighting {
        CoordWeighting::Unit => 1.0,
        CoordWeighting::SigmaSq => sigma_t * sigma_t,
    };
    let n = score_target.len() as f64;
    (eps_hat_x - score_target) * (2.0 * w / n)
}

/// Posterior of the absorbing chain, `q(a_{t-1} = j | a_t, a_0)`, computed
/// by Bayes from the one-step and cumulative transition matrices. Errors
/// when the conditioning pair has zero probability.
pub fn d3pm_posterior(
    a_t: usize,
    a0: usize,
    t: usize,
    d3pm: &D3pmSchedule,
) -> Result<Array1<f64>> {
    d3pm_posterior_strided(a_t, a0, t - 1, t, d3pm)
}

/// Generalized posterior `q(a_s = j | a_t, a_0)` for s < t, used by strided
/// sampling. `s = t - 1` recovers the single-step posterior.
pub fn d3pm_posterior_strided(
    a_t: usize,
    a0: usize,
    s: usize,
    t: usize,
    d3pm: &D3pmSchedule,
) -> Result<Array1<f64>> {
    assert!(s < t && t <= d3pm.t_steps);
    let states = d3pm.num_states();
    let marginal = d3pm.q_bar_at(t)[[a0, a_t]];
    if marginal <= 0.0 {
        return Err(Error::ZeroProbability { a0, a_t, t });
    }
    // Transition from s to t for the absorbing chain: stay probability is
    // the ratio of cumulative stay probabilities.
    let stay_ratio = if d3pm.stay_prob(s) > 0.0 {
        d3pm.stay_prob(t) / d3pm.stay_prob(s)
    } else {
        0.0
    };
    let mask = d3pm.mask_index;
    let seg = |j: usize, to: usize| -> f64 {
        // Q_{s->t}[j, to]
        if j == mask {
            if to == mask {
                1.0
            } else {
                0.0
            }
        } else if to == j {
            stay_ratio
        } else if to == mask {
            1.0 - stay_ratio
        } else {
            0.0
        }
    };
    let q_bar_s = |from: usize, j: usize| -> f64 {
        if s == 0 {
            if from == j {
                1.0
            } else {
                0.0
            }
        } else {
            d3pm.q_bar_at(s)[[from, j]]
        }
    };
    let mut post = Array1::zeros(states);
    for j in 0..states {
        post[j] = seg(j, a_t) * q_bar_s(a0, j) / marginal;
    }
    // Guard against rounding drift; the analytic rows sum to one.
    let sum: f64 = post.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Numeric(format!(
            "posterior normalization drifted: sum = {sum}"
        )));
    }
    Ok(post)
}

/// Model reverse distribution `p(a_{t-1} = j | a_t)` induced by the clean-
/// label prediction `probs` (softmax over the k real classes), mixing the
/// joint `q(a_{t-1}, a_t | a_0')` over predicted `a_0'`. Always well
/// defined, also for conditioning pairs single posteriors reject.
pub fn d3pm_model_reverse(
    probs: &Array1<f64>,
    a_t: usize,
    s: usize,
    t: usize,
    d3pm: &D3pmSchedule,
) -> Array1<f64> {
    let states = d3pm.num_states();
    let mask = d3pm.mask_index;
    let stay_ratio = if d3pm.stay_prob(s) > 0.0 {
        d3pm.stay_prob(t) / d3pm.stay_prob(s)
    } else {
        0.0
    };
    let seg = |j: usize, to: usize| -> f64 {
        if j == mask {
            if to == mask {
                1.0
            } else {
                0.0
            }
        } else if to == j {
            stay_ratio
        } else if to == mask {
            1.0 - stay_ratio
        } else {
            0.0
        }
    };
    let stay_s = d3pm.stay_prob(s);
    let mask_s = 1.0 - stay_s;
    let mut weights = Array1::zeros(states);
    for j in 0..states {
        // sum_{a0'} probs[a0'] * Q_bar_s[a0', j]
        let mix = if j == mask {
            mask_s
        } else {
            probs[j] * stay_s
        };
        weights[j] = seg(j, a_t) * mix;
    }
    let z: f64 = weights.sum();
    if z > 0.0 {
        weights.mapv_inplace(|w| w / z);
    }
    weights
}

/// Variational-bound and cross-entropy type losses for one atom, plus the
/// gradient of each with respect to the k class logits.
///
/// vb is `KL(q(a_{t-1} | a_t, a_0) || p(a_{t-1} | a_t))` for t >= 2 and the
/// decoder term `-log p(a_0 | a_1)` at t = 1. ce is `-log softmax[a_0]`.
pub fn type_loss_atom(
    logits: &Array1<f64>,
    a0: usize,
    a_t: usize,
    t: usize,
    d3pm: &D3pmSchedule,
) -> Result<(f64, f64, Array1<f64>, Array1<f64>)> {
    let k = d3pm.k_classes;
    assert_eq!(logits.len(), k);
    assert!(a0 < k, "clean label must be a real class");
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("type logits"));
    }
    let probs = softmax(logits);
    let log_probs = log_softmax(logits);

    // Cross-entropy and its gradient.
    let ce = -log_probs[a0];
    let mut d_ce = probs.clone();
    d_ce[a0] -= 1.0;

    if t == 1 {
        // Decoder term: identical form to the cross-entropy.
        return Ok((ce, ce, d_ce.clone(), d_ce));
    }

    let q_post = d3pm_posterior(a_t, a0, t, d3pm)?;
    let p_rev = d3pm_model_reverse(&probs, a_t, t - 1, t, d3pm);

    let mut vb = 0.0;
    for j in 0..d3pm.num_states() {
        if q_post[j] > 0.0 {
            vb += q_post[j] * (q_post[j].ln() - p_rev[j].max(1e-300).ln());
        }
    }

    // Gradient through p_rev(j) = seg(j, a_t) * mix_j / Z with
    // mix_j = probs[j] * stay_{t-1} for real classes. d vb / d probs then
    // chains through the softmax.
    let mask = d3pm.mask_index;
    let stay_s = d3pm.stay_prob(t - 1);
    let stay_ratio = if stay_s > 0.0 {
        d3pm.stay_prob(t) / stay_s
    } else {
        0.0
    };
    let seg = |j: usize| -> f64 {
        if j == mask {
            if a_t == mask {
                1.0
            } else {
                0.0
            }
        } else if a_t == j {
            stay_ratio
        } else if a_t == mask {
            1.0 - stay_ratio
        } else {
            0.0
        }
    };
    let mut weights = Array1::zeros(d3pm.num_states());
    for j in 0..d3pm.num_states() {
        let mix = if j == mask { 1.0 - stay_s } else { probs[j] * stay_s };
        weights[j] = seg(j) * mix;
    }
    let z: f64 = weights.sum();
    // d vb / d weights_j = (-q_j / w_j) + (sum_i q_i) / Z ; dw_j/dprobs_j =
    // seg(j) * stay_s for real classes.
    let mut d_probs = Array1::zeros(k);
    if z > 0.0 {
        for j in 0..k {
            let dw = seg(j) * stay_s;
            if dw == 0.0 {
                continue;
            }
            let term = if weights[j] > 0.0 && q_post[j] > 0.0 {
                -q_post[j] / weights[j]
            } else {
                0.0
            };
            d_probs[j] = dw * (term + 1.0 / z);
        }
    }
    // Softmax Jacobian: d logits_i = probs_i * (d_probs_i - sum_j d_probs_j probs_j).
    let dot: f64 = d_probs
        .iter()
        .zip(probs.iter())
        .map(|(&g, &p)| g * p)
        .sum();
    let d_vb = Array1::from_shape_fn(k, |i| probs[i] * (d_probs[i] - dot));

    Ok((vb, ce, d_vb, d_ce))
}

/// Mean type losses over all atoms, with per-atom logits as rows.
/// Returns ((vb, ce), gradient of `vb + lambda_ce * ce` wrt logits).
pub fn type_loss(
    logits: &Array2<f64>,
    a0: &[usize],
    a_t: &[usize],
    t: usize,
    d3pm: &D3pmSchedule,
) -> Result<((f64, f64), Array2<f64>)> {
    let n = a0.len();
    assert_eq!(logits.nrows(), n);
    let mut vb_sum = 0.0;
    let mut ce_sum = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for i in 0..n {
        let row = logits.row(i).to_owned();
        let (vb, ce, d_vb, d_ce) = type_loss_atom(&row, a0[i], a_t[i], t, d3pm)?;
        vb_sum += vb;
        ce_sum += ce;
        let scale = 1.0 / n as f64;
        for j in 0..logits.ncols() {
            grad[[i, j]] = (d_vb[j] + d3pm.lambda_ce * d_ce[j]) * scale;
        }
    }
    Ok(((vb_sum / n as f64, ce_sum / n as f64), grad))
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - m).exp());
    let z = exps.sum();
    exps / z
}

pub fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    logits.mapv(|v| v - m - z.ln())
}
