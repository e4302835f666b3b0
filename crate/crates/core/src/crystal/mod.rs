//! Crystal data model and periodic geometry.
//!
//! A crystal is a minimal unit cell: `N` atom type labels (integers in
//! `0..100`, label i = atomic number i+1), an `N x 3` matrix of fractional
//! coordinates in `[0, 1)`, and a `3 x 3` lattice matrix whose *rows* are
//! the cell vectors in Angstrom. Cartesian positions are `frac . L` (row
//! convention); all internal math follows that convention.

pub mod io;
pub mod reduce;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::elements::NUM_CLASSES;
use crate::error::{Error, Result};

/// Optional per-material metadata carried through datasets and prompts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacegroup: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crystal_system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_above_hull: Option<f64>,
}

/// One material: atom types, wrapped fractional coordinates, row-vector
/// lattice. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Crystal {
    atom_types: Vec<usize>,
    frac_coords: Array2<f64>,
    lattice: Array2<f64>,
    pub meta: CrystalMeta,
}

/// A crystal together with its dataset id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCrystal {
    pub id: String,
    pub crystal: Crystal,
}

impl Crystal {
    /// Build a crystal, wrapping coordinates into `[0, 1)` and validating
    /// the invariants: N >= 1, labels in range, finite inputs, lattice
    /// nonsingular with positive determinant.
    pub fn new(
        atom_types: Vec<usize>,
        frac_coords: Array2<f64>,
        lattice: Array2<f64>,
        meta: CrystalMeta,
    ) -> Result<Self> {
        let n = atom_types.len();
        if n == 0 {
            return Err(Error::InvalidCrystal("no atoms".into()));
        }
        if let Some(&bad) = atom_types.iter().find(|&&t| t >= NUM_CLASSES) {
            return Err(Error::InvalidCrystal(format!(
                "atom type label {bad} out of range 0..{NUM_CLASSES}"
            )));
        }
        if frac_coords.shape() != [n, 3] {
            return Err(Error::InvalidCrystal(format!(
                "frac_coords shape {:?} does not match {n} atoms",
                frac_coords.shape()
            )));
        }
        if lattice.shape() != [3, 3] {
            return Err(Error::InvalidCrystal("lattice must be 3x3".into()));
        }
        let frac = wrap_frac(&frac_coords)?;
        if !lattice.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("lattice"));
        }
        let det = det3(&lattice.view());
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::InvalidCrystal(format!(
                "lattice determinant {det:.3e} is not positive"
            )));
        }
        Ok(Crystal {
            atom_types,
            frac_coords: frac,
            lattice,
            meta,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_types.len()
    }

    pub fn atom_types(&self) -> &[usize] {
        &self.atom_types
    }

    pub fn frac_coords(&self) -> &Array2<f64> {
        &self.frac_coords
    }

    pub fn lattice(&self) -> &Array2<f64> {
        &self.lattice
    }

    /// Cell volume in cubic Angstrom.
    pub fn volume(&self) -> f64 {
        det3(&self.lattice.view())
    }

    /// Cartesian coordinates, `frac . L`.
    pub fn cart_coords(&self) -> Array2<f64> {
        self.frac_coords.dot(&self.lattice)
    }

    /// Minimum distance between atom `i` and any periodic image of atom
    /// `j`. For `i == j` the zero image is excluded, so this is the
    /// distance to the nearest self-image. Works on the reduced cell so a
    /// `{-1,0,1}^3` image shell suffices.
    pub fn min_periodic_distance(&self, i: usize, j: usize) -> f64 {
        let red = reduce::reduce_crystal_geometry(&self.lattice, &self.frac_coords);
        min_image_distance(&red.lattice, &red.frac, i, j)
    }

    /// Rotate the crystal rigidly: cartesian positions become `cart . Q^T`
    /// (each position rotated by Q), so the lattice rows become `L . Q^T`
    /// and fractional coordinates are unchanged.
    pub fn apply_rotation(&self, q: &Array2<f64>) -> Result<Crystal> {
        check_orthogonal(q, 1e-10)?;
        let lattice = self.lattice.dot(&q.t());
        Crystal::new(
            self.atom_types.clone(),
            self.frac_coords.clone(),
            lattice,
            self.meta.clone(),
        )
    }

    /// Permute atom rows (types and coordinates together). `perm[new] = old`.
    pub fn apply_permutation(&self, perm: &[usize]) -> Result<Crystal> {
        let n = self.num_atoms();
        if perm.len() != n {
            return Err(Error::InvalidCrystal("permutation length mismatch".into()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidCrystal("not a permutation".into()));
            }
            seen[p] = true;
        }
        let atom_types: Vec<usize> = perm.iter().map(|&p| self.atom_types[p]).collect();
        let mut frac = Array2::zeros((n, 3));
        for (new, &old) in perm.iter().enumerate() {
            frac.row_mut(new).assign(&self.frac_coords.row(old));
        }
        Crystal::new(atom_types, frac, self.lattice.clone(), self.meta.clone())
    }

    /// Add a common fractional shift to every atom, then wrap.
    pub fn apply_periodic_shift(&self, tau: &[f64; 3]) -> Result<Crystal> {
        let mut frac = self.frac_coords.clone();
        for mut row in frac.rows_mut() {
            for (x, t) in row.iter_mut().zip(tau) {
                *x += t;
            }
        }
        Crystal::new(
            self.atom_types.clone(),
            frac,
            self.lattice.clone(),
            self.meta.clone(),
        )
    }
}

/// Wrap every entry to `[0, 1)` via `x - floor(x)`. Idempotent; rejects
/// non-finite input. Values that round up to 1.0 are clamped to 0.0 so the
/// half-open range holds exactly.
pub fn wrap_frac(x: &Array2<f64>) -> Result<Array2<f64>> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("frac coords"));
    }
    Ok(x.mapv(wrap_scalar))
}

/// Scalar wrap to `[0, 1)`.
pub fn wrap_scalar(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Wrap to the centered interval `[-0.5, 0.5)`.
pub fn wrap_centered(x: f64) -> f64 {
    let w = x - (x + 0.5).floor();
    if w >= 0.5 {
        -0.5
    } else {
        w
    }
}

/// Cell lengths (Angstrom) and angles (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LatticeParams {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        LatticeParams {
            a,
            b,
            c,
            alpha,
            beta,
            gamma,
        }
    }
}

/// Build a row-vector lattice in canonical orientation: `l1` along x,
/// `l2` in the xy plane. Errors when the angle triple is not realizable
/// (Gram matrix not positive definite).
pub fn lattice_from_params(p: &LatticeParams) -> Result<Array2<f64>> {
    for (name, v) in [("a", p.a), ("b", p.b), ("c", p.c)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidLatticeParams(format!("length {name} = {v}")));
        }
    }
    for (name, v) in [("alpha", p.alpha), ("beta", p.beta), ("gamma", p.gamma)] {
        if !(v.is_finite() && v > 0.0 && v < 180.0) {
            return Err(Error::InvalidLatticeParams(format!("angle {name} = {v}")));
        }
    }
    let (ca, cb, cg) = (
        p.alpha.to_radians().cos(),
        p.beta.to_radians().cos(),
        p.gamma.to_radians().cos(),
    );
    let sg = p.gamma.to_radians().sin();
    let l2y = (ca - cb * cg) / sg;
    let z2 = 1.0 - cb * cb - l2y * l2y;
    if z2 <= 0.0 {
        return Err(Error::InvalidLatticeParams(format!(
            "angle triple ({}, {}, {}) is not realizable",
            p.alpha, p.beta, p.gamma
        )));
    }
    let mut l = Array2::zeros((3, 3));
    l[[0, 0]] = p.a;
    l[[1, 0]] = p.b * cg;
    l[[1, 1]] = p.b * sg;
    l[[2, 0]] = p.c * cb;
    l[[2, 1]] = p.c * l2y;
    l[[2, 2]] = p.c * z2.sqrt();
    Ok(l)
}

/// Recover cell parameters from a row-vector lattice.
pub fn params_from_lattice(l: &ArrayView2<f64>) -> LatticeParams {
    let row = |i: usize| Array1::from_iter(l.row(i).iter().copied());
    let (v1, v2, v3) = (row(0), row(1), row(2));
    let norm = |v: &Array1<f64>| v.dot(v).sqrt();
    let (a, b, c) = (norm(&v1), norm(&v2), norm(&v3));
    let angle = |u: &Array1<f64>, w: &Array1<f64>, nu: f64, nw: f64| {
        (u.dot(w) / (nu * nw)).clamp(-1.0, 1.0).acos().to_degrees()
    };
    LatticeParams {
        a,
        b,
        c,
        alpha: angle(&v2, &v3, b, c),
        beta: angle(&v1, &v3, a, c),
        gamma: angle(&v1, &v2, a, b),
    }
}

/// Determinant of a 3x3 matrix.
pub fn det3(m: &ArrayView2<f64>) -> f64 {
    m[[0, 0]] * (m[[1, 1]] * m[[2, 2]] - m[[1, 2]] * m[[2, 1]])
        - m[[0, 1]] * (m[[1, 0]] * m[[2, 2]] - m[[1, 2]] * m[[2, 0]])
        + m[[0, 2]] * (m[[1, 0]] * m[[2, 1]] - m[[1, 1]] * m[[2, 0]])
}

/// Inverse of a 3x3 matrix via the adjugate.
pub fn inv3(m: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let det = det3(m);
    if det.abs() < 1e-300 || !det.is_finite() {
        return Err(Error::Numeric("singular 3x3 matrix".into()));
    }
    let mut inv = Array2::zeros((3, 3));
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[[r0, c0]] * m[[r1, c1]] - m[[r0, c1]] * m[[r1, c0]];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[[j, i]] = sign * minor / det;
        }
    }
    Ok(inv)
}

fn check_orthogonal(q: &Array2<f64>, tol: f64) -> Result<()> {
    if q.shape() != [3, 3] {
        return Err(Error::Config("rotation matrix must be 3x3".into()));
    }
    let qtq = q.t().dot(q);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (qtq[[i, j]] - expect).abs() > tol {
                return Err(Error::Config(format!(
                    "matrix is not orthogonal within {tol:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Minimum-image distance between rows `i` and `j` of wrapped fractional
/// coordinates under the given (already reduced) lattice; `i == j` searches
/// nonzero images only.
pub(crate) fn min_image_distance(
    lattice: &Array2<f64>,
    frac: &Array2<f64>,
    i: usize,
    j: usize,
) -> f64 {
    let d = [
        frac[[i, 0]] - frac[[j, 0]],
        frac[[i, 1]] - frac[[j, 1]],
        frac[[i, 2]] - frac[[j, 2]],
    ];
    let mut best = f64::INFINITY;
    for k0 in -1..=1i64 {
        for k1 in -1..=1i64 {
            for k2 in -1..=1i64 {
                if i == j && k0 == 0 && k1 == 0 && k2 == 0 {
                    continue;
                }
                let f = [d[0] + k0 as f64, d[1] + k1 as f64, d[2] + k2 as f64];
                let mut dist2 = 0.0;
                for axis in 0..3 {
                    let x = f[0] * lattice[[0, axis]]
                        + f[1] * lattice[[1, axis]]
                        + f[2] * lattice[[2, axis]];
                    dist2 += x * x;
                }
                best = best.min(dist2);
            }
        }
    }
    best.sqrt()
}

/// The seven crystal systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    Trigonal,
    Hexagonal,
    Cubic,
}

impl CrystalSystem {
    pub fn as_str(&self) -> &'static str {
        match self {
            CrystalSystem::Triclinic => "triclinic",
            CrystalSystem::Monoclinic => "monoclinic",
            CrystalSystem::Orthorhombic => "orthorhombic",
            CrystalSystem::Tetragonal => "tetragonal",
            CrystalSystem::Trigonal => "trigonal",
            CrystalSystem::Hexagonal => "hexagonal",
            CrystalSystem::Cubic => "cubic",
        }
    }

    pub fn from_str_loose(s: &str) -> Option<CrystalSystem> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triclinic" => Some(CrystalSystem::Triclinic),
            "monoclinic" => Some(CrystalSystem::Monoclinic),
            "orthorhombic" => Some(CrystalSystem::Orthorhombic),
            "tetragonal" => Some(CrystalSystem::Tetragonal),
            "trigonal" | "rhombohedral" => Some(CrystalSystem::Trigonal),
            "hexagonal" => Some(CrystalSystem::Hexagonal),
            "cubic" => Some(CrystalSystem::Cubic),
        _ => None,
        }
    }
}

impl std::fmt::Display for CrystalSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classify the crystal system from the equality pattern of the reduced
/// cell parameters. `len_tol` is relative on lengths, `ang_tol` absolute in
/// degrees. Ties break toward the higher-symmetry system by check order.
pub fn classify_crystal_system(lattice: &Array2<f64>, len_tol: f64, ang_tol: f64) -> CrystalSystem {
    let red = reduce::niggli_reduce(lattice);
    let p = params_from_lattice(&red.lattice.view());
    let len_eq = |x: f64, y: f64| (x - y).abs() <= len_tol * 0.5 * (x + y);
    let ang_eq = |x: f64, y: f64| (x - y).abs() <= ang_tol;

    let ab = len_eq(p.a, p.b);
    let bc = len_eq(p.b, p.c);
    let a90 = ang_eq(p.alpha, 90.0);
    let b90 = ang_eq(p.beta, 90.0);
    let g90 = ang_eq(p.gamma, 90.0);
    let all90 = a90 && b90 && g90;

    if ab && bc && all90 {
        return CrystalSystem::Cubic;
    }
    // Hexagonal: the 120-degree angle sits between the two equal vectors.
    if (ab && a90 && b90 && ang_eq(p.gamma, 120.0))
        || (bc && b90 && g90 && ang_eq(p.alpha, 120.0))
    {
        return CrystalSystem::Hexagonal;
    }
    if ab && bc && ang_eq(p.alpha, p.beta) && ang_eq(p.beta, p.gamma) && !a90 {
        return CrystalSystem::Trigonal;
    }
    if (ab || bc) && all90 {
        return CrystalSystem::Tetragonal;
    }
    if all90 {
        return CrystalSystem::Orthorhombic;
    }
    if [a90, b90, g90].iter().filter(|&&x| x).count() == 2 {
        return CrystalSystem::Monoclinic;
    }
    CrystalSystem::Triclinic
}
