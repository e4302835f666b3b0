//! Niggli cell reduction (Krivy-Gruber algorithm).
//!
//! Operates on the lattice metric, tracked through explicit unimodular
//! row operations so callers can re-express fractional coordinates in the
//! reduced basis. The reduced cell satisfies a <= b <= c with the usual
//! all-acute / all-non-acute angle normalization.

use ndarray::Array2;

use super::{det3, inv3, wrap_scalar};

/// Result of a reduction: `lattice = transform . original`, with
/// `transform` integer unimodular (det +1 after the final handedness fix).
#[derive(Debug, Clone)]
pub struct ReducedLattice {
    pub lattice: Array2<f64>,
    /// Integer row-operation matrix M with `L_red = M . L`.
    pub transform: Array2<f64>,
}

/// Reduced geometry for distance work: reduced lattice plus re-expressed,
/// wrapped fractional coordinates.
#[derive(Debug, Clone)]
pub struct ReducedGeometry {
    pub lattice: Array2<f64>,
    pub frac: Array2<f64>,
}

struct State {
    basis: Array2<f64>,
    m: [[i64; 3]; 3],
}

impl State {
    fn apply(&mut self, op: [[i64; 3]; 3]) {
        let opf = Array2::from_shape_fn((3, 3), |(i, j)| op[i][j] as f64);
        self.basis = opf.dot(&self.basis);
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, row) in self.m.iter().enumerate() {
                    out[i][j] += op[i][k] * row[j];
                }
            }
        }
        self.m = out;
    }

    fn metric(&self) -> (f64, f64, f64, f64, f64, f64) {
        let dot = |i: usize, j: usize| {
            (0..3).map(|k| self.basis[[i, k]] * self.basis[[j, k]]).sum::<f64>()
        };
        (
            dot(0, 0),
            dot(1, 1),
            dot(2, 2),
            2.0 * dot(1, 2),
            2.0 * dot(0, 2),
            2.0 * dot(0, 1),
        )
    }
}

const SWAP_AB: [[i64; 3]; 3] = [[0, -1, 0], [-1, 0, 0], [0, 0, -1]];
const SWAP_BC: [[i64; 3]; 3] = [[-1, 0, 0], [0, 0, -1], [0, -1, 0]];

fn flip(fa: bool, fb: bool, fc: bool) -> [[i64; 3]; 3] {
    let s = |f: bool| if f { -1 } else { 1 };
    [[s(fa), 0, 0], [0, s(fb), 0], [0, 0, s(fc)]]
}

/// Krivy-Gruber reduction of a row-vector lattice.
pub fn niggli_reduce(lattice: &Array2<f64>) -> ReducedLattice {
    let mut st = State {
        basis: lattice.clone(),
        m: [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    };
    let (a0, b0, c0, ..) = st.metric();
    let eps = 1e-10 * ((a0 + b0 + c0) / 3.0).max(1e-300);
    let gt = |x: f64, y: f64| x > y + eps;
    let eq = |x: f64, y: f64| (x - y).abs() <= eps;

    for _ in 0..200 {
        // Step 1: order a, b.
        {
            let (a, b, _, xi, eta, _) = st.metric();
            if gt(a, b) || (eq(a, b) && gt(xi.abs(), eta.abs())) {
                st.apply(SWAP_AB);
            }
        }
        // Step 2: order b, c; restart the ordering if applied.
        {
            let (_, b, c, _, eta, zeta) = st.metric();
            if gt(b, c) || (eq(b, c) && gt(eta.abs(), zeta.abs())) {
                st.apply(SWAP_BC);
                continue;
            }
        }

        // Steps 3/4: normalize angle signs (all non-negative when the
        // product is positive, else all non-positive). Realized by trying
        // the eight sign-flip combinations.
        {
            let (_, _, _, xi, eta, zeta) = st.metric();
            let zero = |x: f64| x.abs() <= eps;
            let pos_branch = xi * eta * zeta > 0.0 && !(zero(xi) || zero(eta) || zero(zeta));
            let achieved = |x: (f64, f64, f64)| {
                if pos_branch {
                    x.0 >= -eps && x.1 >= -eps && x.2 >= -eps
                } else {
                    x.0 <= eps && x.1 <= eps && x.2 <= eps
                }
            };
            if !achieved((xi, eta, zeta)) {
                'search: for fa in [false, true] {
                    for fb in [false, true] {
                        for fc in [false, true] {
                            let sx = if fb ^ fc { -xi } else { xi };
                            let sy = if fa ^ fc { -eta } else { eta };
                            let sz = if fa ^ fb { -zeta } else { zeta };
                            if achieved((sx, sy, sz)) {
                                st.apply(flip(fa, fb, fc));
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        let (a, b, _, xi, eta, zeta) = st.metric();

        // Step 5.
        if gt(xi.abs(), b) || (eq(xi, b) && gt(zeta, 2.0 * eta)) || (eq(xi, -b) && zeta < -eps) {
            let s = if xi > 0.0 { 1 } else { -1 };
            st.apply([[1, 0, 0], [0, 1, 0], [0, -s, 1]]);
            continue;
        }
        // Step 6.
        if gt(eta.abs(), a) || (eq(eta, a) && gt(zeta, 2.0 * xi)) || (eq(eta, -a) && zeta < -eps) {
            let s = if eta > 0.0 { 1 } else { -1 };
            st.apply([[1, 0, 0], [0, 1, 0], [-s, 0, 1]]);
            continue;
        }
        // Step 7.
        if gt(zeta.abs(), a) || (eq(zeta, a) && gt(eta, 2.0 * xi)) || (eq(zeta, -a) && eta < -eps)
        {
            let s = if zeta > 0.0 { 1 } else { -1 };
            st.apply([[1, 0, 0], [-s, 1, 0], [0, 0, 1]]);
            continue;
        }
        // Step 8.
        let total = xi + eta + zeta + a + b;
        if total < -eps || (eq(total, 0.0) && gt(2.0 * (a + eta) + zeta, 0.0)) {
            st.apply([[1, 0, 0], [0, 1, 0], [1, 1, 1]]);
            continue;
        }
        break;
    }

    // Restore right-handedness; negating all rows leaves the metric alone.
    if det3(&st.basis.view()) < 0.0 {
        st.apply(flip(true, true, true));
    }

    let transform = Array2::from_shape_fn((3, 3), |(i, j)| st.m[i][j] as f64);
    ReducedLattice {
        lattice: st.basis,
        transform,
    }
}

/// Reduce a lattice and re-express wrapped fractional coordinates in the
/// reduced basis: with `L_red = M . L`, coordinates map as `x . M^-1`.
pub fn reduce_crystal_geometry(lattice: &Array2<f64>, frac: &Array2<f64>) -> ReducedGeometry {
    let red = niggli_reduce(lattice);
    let m_inv = inv3(&red.transform.view()).expect("unimodular transform is invertible");
    // Round to exact integers; the inverse of an integer matrix with
    // det +/-1 is integer.
    let m_inv = m_inv.mapv(|v| v.round());
    let frac_new = frac.dot(&m_inv).mapv(wrap_scalar);
    ReducedGeometry {
        lattice: red.lattice,
        frac: frac_new,
    }
}
