//! Coordinate reverse-chain probe with the exact wrapped-normal score of
//! known target sites.

use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use xtalgen::crystal::wrap_frac;
use xtalgen::diffusion::{wn_k_max, wn_score};
use xtalgen::schedule::make_sigma;
use xtalgen::util::stream_rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t_steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(25);
    let step_size: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-5);
    let x0 = array![
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5]
    ];
    let sched = make_sigma(t_steps, 0.005, 0.5).unwrap();
    let mut rng = stream_rng(7, &[2]);
    for trial in 0..4 {
        let mut x = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());
        for t in (1..=t_steps).rev() {
            let s_t = sched.sigma_at(t);
            let s_s = sched.sigma_at(t - 1);
            let gap = s_t * s_t - s_s * s_s;
            let score = wn_score(&x, &x0, s_t, wn_k_max(s_t)).unwrap();
            let noise = Array2::from_shape_fn((5, 3), |_| rng.sample::<f64, _>(StandardNormal));
            x = wrap_frac(&(&x + &(&score * gap) + &(&noise * (s_s * gap.sqrt() / s_t)))).unwrap();
            // corrector with fresh score at the half state
            let score2 = wn_score(&x, &x0, s_t, wn_k_max(s_t)).unwrap();
            let eta = step_size * s_s / s_t;
            let noise2 = Array2::from_shape_fn((5, 3), |_| rng.sample::<f64, _>(StandardNormal));
            x = wrap_frac(&(&x + &(&score2 * eta) + &(&noise2 * (2.0 * eta).sqrt()))).unwrap();
        }
        // max wrapped deviation from target
        let mut max_d = 0f64;
        for i in 0..5 {
            for j in 0..3 {
                let d = xtalgen::crystal::wrap_centered(x[[i, j]] - x0[[i, j]]).abs();
                max_d = max_d.max(d);
            }
        }
        println!("trial {trial}: max |dx| = {max_d:.4} frac");
    }
}
