//! Time-discretized noise machinery: DDPM beta/alpha-bar schedules, the
//! exponential sigma schedule for coordinate noise, and absorbing-state
//! discrete transition matrices with their cumulative products.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DDPM schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DdpmKind {
    /// Squared-cosine alpha-bar profile with offset `s`.
    Cosine { s: f64 },
    /// Linear beta ramp between the two endpoints.
    Linear { beta_start: f64, beta_end: f64 },
}

impl Default for DdpmKind {
    fn default() -> Self {
        DdpmKind::Cosine { s: 0.008 }
    }
}

/// Gaussian diffusion schedule: beta_t in (0,1), alpha = 1 - beta, and
/// alpha_bar the running product. Index 0 of the stored vectors is t = 1.
#[derive(Debug, Clone)]
pub struct DdpmSchedule {
    pub t_steps: usize,
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub alpha_bar: Array1<f64>,
}

impl DdpmSchedule {
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }
    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }
    /// Alpha-bar with the convention `alpha_bar(0) = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// Build a DDPM schedule with `T >= 2` steps.
pub fn make_ddpm(t_steps: usize, kind: DdpmKind) -> Result<DdpmSchedule> {
    if t_steps < 2 {
        return Err(Error::Config(format!("T = {t_steps} must be >= 2")));
    }
    let beta: Vec<f64> = match kind {
        DdpmKind::Linear { beta_start, beta_end } => (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect(),
        DdpmKind::Cosine { s } => {
            let f = |t: f64| {
                let x = (t / t_steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0.0);
            (1..=t_steps)
                .map(|t| {
                    let b = 1.0 - f(t as f64) / f((t - 1) as f64);
                    let _ = f0;
                    b.clamp(1e-8, 0.999)
                })
                .collect()
        }
    };
    if beta.iter().any(|&b| !(0.0..1.0).contains(&b) || b <= 0.0) {
        return Err(Error::Config("beta values must lie in (0, 1)".into()));
    }
    let beta = Array1::from_vec(beta);
    let alpha = beta.mapv(|b| 1.0 - b);
    let mut alpha_bar = alpha.clone();
    for i in 1..t_steps {
        alpha_bar[i] = alpha_bar[i - 1] * alpha[i];
    }
    Ok(DdpmSchedule {
        t_steps,
        beta,
        alpha,
        alpha_bar,
    })
}

/// Exponential (geometric) sigma schedule; `sigma[t] = min * (max/min)^(t/T)`
/// stored for t = 0..=T, so `sigma[0] = sigma_min` and `sigma[T] = sigma_max`.
#[derive(Debug, Clone)]
pub struct SigmaSchedule {
    pub t_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma: Array1<f64>,
}

impl SigmaSchedule {
    pub fn sigma_at(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

pub fn make_sigma(t_steps: usize, sigma_min: f64, sigma_max: f64) -> Result<SigmaSchedule> {
    if t_steps < 1 {
        return Err(Error::Config("T must be >= 1".into()));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min) {
        return Err(Error::Config(format!(
            "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    let ratio = sigma_max / sigma_min;
    let sigma = Array1::from_iter(
        (0..=t_steps).map(|t| sigma_min * ratio.powf(t as f64 / t_steps as f64)),
    );
    Ok(SigmaSchedule {
        t_steps,
        sigma_min,
        sigma_max,
        sigma,
    })
}

/// Absorbing-state discrete diffusion schedule over `k` real classes plus
/// one [MASK] state (index `k`). `q[t-1]` is the one-step transition matrix
/// at step t, `q_bar[t-1]` the cumulative product Q_1 ... Q_t; both are
/// row-stochastic with rows indexed by the source state.
#[derive(Debug, Clone)]
pub struct D3pmSchedule {
    pub t_steps: usize,
    pub k_classes: usize,
    pub mask_index: usize,
    pub beta_type: Array1<f64>,
    pub q: Vec<Array2<f64>>,
    pub q_bar: Vec<Array2<f64>>,
    /// Cross-entropy weight lambda in the type loss.
    pub lambda_ce: f64,
}

impl D3pmSchedule {
    pub fn num_states(&self) -> usize {
        self.k_classes + 1
    }

    pub fn q_at(&self, t: usize) -> &Array2<f64> {
        &self.q[t - 1]
    }

    pub fn q_bar_at(&self, t: usize) -> &Array2<f64> {
        &self.q_bar[t - 1]
    }

    /// Probability of still carrying the original label after t steps
    /// (diagonal of Q_bar_t for non-mask states); `stay(0) = 1`.
    pub fn stay_prob(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.q_bar[t - 1][[0, 0]]
        }
    }

    /// Mask probability after t steps from any non-mask start.
    pub fn mask_prob(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.q_bar[t - 1][[0, self.mask_index]]
        }
    }
}

/// Build the absorbing-state schedule. The default absorption rate
/// `beta_t = 1/(T - t + 1)` telescopes so that the mask marginal after t
/// steps is exactly t/T.
pub fn make_d3pm(t_steps: usize, k_classes: usize, lambda_ce: f64) -> Result<D3pmSchedule> {
    let beta: Vec<f64> = (1..=t_steps)
        .map(|t| 1.0 / (t_steps - t + 1) as f64)
        .collect();
    make_d3pm_with_beta(t_steps, k_classes, lambda_ce, beta)
}

/// Build an absorbing-state schedule from explicit per-step absorption
/// probabilities in (0, 1].
pub fn make_d3pm_with_beta(
    t_steps: usize,
    k_classes: usize,
    lambda_ce: f64,
    beta: Vec<f64>,
) -> Result<D3pmSchedule> {
    if t_steps < 1 {
        return Err(Error::Config("T must be >= 1".into()));
    }
    if k_classes < 2 {
        return Err(Error::Config("k must be >= 2".into()));
    }
    if beta.len() != t_steps {
        return Err(Error::Config("beta length must equal T".into()));
    }
    if beta.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::Config("type beta values must lie in (0, 1]".into()));
    }
    let states = k_classes + 1;
    let mask = k_classes;
    let mut q = Vec::with_capacity(t_steps);
    for &b in &beta {
        let mut m = Array2::zeros((states, states));
        for i in 0..k_classes {
            m[[i, i]] = 1.0 - b;
            m[[i, mask]] = b;
        }
        m[[mask, mask]] = 1.0;
        q.push(m);
    }
    let mut q_bar: Vec<Array2<f64>> = Vec::with_capacity(t_steps);
    q_bar.push(q[0].clone());
    for t in 1..t_steps {
        let next = q_bar[t - 1].dot(&q[t]);
        q_bar.push(next);
    }
    Ok(D3pmSchedule {
        t_steps,
        k_classes,
        mask_index: mask,
        beta_type: Array1::from_vec(beta),
        q,
        q_bar,
        lambda_ce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ddpm_linear_direct_product() {
        let s = make_ddpm(
            2,
            DdpmKind::Linear {
                beta_start: 0.1,
                beta_end: 0.2,
            },
        )
        .unwrap();
        assert!((s.alpha_bar_at(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar_at(2) - 0.72).abs() < 1e-15);
        assert_eq!(s.alpha_bar_at(0), 1.0);
    }

    #[test]
    fn ddpm_cosine_terminal_mass() {
        let s = make_ddpm(1000, DdpmKind::Cosine { s: 0.008 }).unwrap();
        assert!(s.alpha_bar_at(1000) < 1e-4, "{}", s.alpha_bar_at(1000));
        // Closed-form check at an interior step: alpha_bar ~ f(t)/f(0).
        let f = |t: f64| {
            let x = (t / 1000.0 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let expect = f(500.0) / f(0.0);
        assert!((s.alpha_bar_at(500) - expect).abs() < 1e-10);
    }

    #[test]
    fn ddpm_monotone_and_exact_products() {
        for kind in [
            DdpmKind::Cosine { s: 0.008 },
            DdpmKind::Linear {
                beta_start: 1e-4,
                beta_end: 0.02,
            },
        ] {
            let s = make_ddpm(500, kind).unwrap();
            let mut prod = 1.0;
            for t in 1..=500 {
                prod *= s.alpha_at(t);
                assert_eq!(s.alpha_bar_at(t), prod);
                if t > 1 {
                    assert!(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
                }
                assert!(s.beta_at(t) > 0.0 && s.beta_at(t) < 1.0);
            }
            assert!(s.alpha_bar_at(500) < 0.01);
        }
        assert!(make_ddpm(1, DdpmKind::default()).is_err());
        assert!(make_ddpm(
            10,
            DdpmKind::Linear {
                beta_start: 0.0,
                beta_end: 1.5
            }
        )
        .is_err());
    }

    #[test]
    fn sigma_examples() {
        let s = make_sigma(1, 0.1, 10.0).unwrap();
        assert!((s.sigma_at(1) - 10.0).abs() < 1e-12);
        assert!((s.sigma_at(0) - 0.1).abs() < 1e-12);

        let s = make_sigma(100, 0.005, 0.5).unwrap();
        // Constant geometric ratio.
        let r0 = s.sigma_at(1) / s.sigma_at(0);
        for t in 1..=100 {
            assert!((s.sigma_at(t) / s.sigma_at(t - 1) - r0).abs() < 1e-12);
        }
        // Midpoint is the geometric mean.
        assert!((s.sigma_at(50) - (0.005f64 * 0.5).sqrt()).abs() < 1e-9);
        assert!(make_sigma(10, 0.5, 0.1).is_err());
    }

    #[test]
    fn d3pm_invariants() {
        let s = make_d3pm(4, 3, 0.01).unwrap();
        let states = s.num_states();
        for t in 1..=4 {
            // Row-stochastic one-step and cumulative matrices.
            for m in [s.q_at(t), s.q_bar_at(t)] {
                for i in 0..states {
                    let sum: f64 = (0..states).map(|j| m[[i, j]]).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
            // Absorbing row.
            assert_eq!(s.q_at(t)[[s.mask_index, s.mask_index]], 1.0);
            // Structure of the one-step matrix.
            for i in 0..3 {
                assert!((s.q_at(t)[[i, i]] - (1.0 - s.beta_type[t - 1])).abs() < 1e-15);
                assert!((s.q_at(t)[[i, s.mask_index]] - s.beta_type[t - 1]).abs() < 1e-15);
            }
            // Telescoped diagonal: exactly 1 - t/T for the default beta.
            for i in 0..3 {
                assert!(
                    (s.q_bar_at(t)[[i, i]] - (1.0 - t as f64 / 4.0)).abs() < 1e-12,
                    "t={t}"
                );
            }
        }
        // Chapman-Kolmogorov: q_bar_t = q_bar_{t-1} . q_t.
        for t in 2..=4 {
            let prod = s.q_bar_at(t - 1).dot(s.q_at(t));
            for (x, y) in prod.iter().zip(s.q_bar_at(t).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // Terminal mass on the mask state.
        let s = make_d3pm(500, 100, 0.01).unwrap();
        for i in 0..100 {
            assert!(s.q_bar_at(500)[[i, s.mask_index]] >= 0.999);
        }
    }
}
