//! Reverse-chain sanity probe with an analytic oracle denoiser for a
//! known cubic target: eps_hat = (L_t - sqrt(ab) a* G^{-1/2} L_t) / sqrt(1-ab).

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use xtalgen::schedule::{make_ddpm, DdpmKind};
use xtalgen::util::stream_rng;

fn sqrt_inv_gram(l: &Array2<f64>) -> Array2<f64> {
    // G = L L^T symmetric positive definite; G^{-1/2} via eigen iteration
    // (Denman-Beavers on G).
    let g = l.dot(&l.t());
    let mut y = g.clone();
    let mut z: Array2<f64> = Array2::eye(3);
    for _ in 0..60 {
        let yi = xtalgen::crystal::inv3(&y.view()).unwrap();
        let zi = xtalgen::crystal::inv3(&z.view()).unwrap();
        let y2 = (&y + &zi) * 0.5;
        let z2 = (&z + &yi) * 0.5;
        y = y2;
        z = z2;
    }
    // y ~ G^{1/2}, z ~ G^{-1/2}
    z
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t_steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(25);
    let a_star: f64 = 4.2;
    let sched = make_ddpm(t_steps, DdpmKind::Cosine { s: 0.008 }).unwrap();
    let mut rng = stream_rng(123, &[1]);

    for trial in 0..5 {
        let mut l = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
        for t in (1..=t_steps).rev() {
            let ab_t = sched.alpha_bar_at(t);
            let ab_s = sched.alpha_bar_at(t - 1);
            let alpha = ab_t / ab_s;
            let beta = 1.0 - alpha;
            let g_inv_half = sqrt_inv_gram(&l);
            let l0_hat = g_inv_half.dot(&l) * a_star;
            let eps_hat = (&l - &(&l0_hat * ab_t.sqrt())) / (1.0 - ab_t).sqrt();
            let noise = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let scale = (beta * (1.0 - ab_s) / (1.0 - ab_t)).sqrt();
            l = (&l - &(&eps_hat * (beta / (1.0 - ab_t).sqrt()))) / alpha.sqrt() + &(&noise * scale);
        }
        let p = xtalgen::crystal::params_from_lattice(&l.view());
        println!(
            "trial {trial}: cell ({:.3},{:.3},{:.3},{:.1},{:.1},{:.1}) det {:.3}",
            p.a, p.b, p.c, p.alpha, p.beta, p.gamma,
            xtalgen::crystal::det3(&l.view())
        );
    }
}
