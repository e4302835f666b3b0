//! Synthetic desk-scale datasets for tests, examples, and smoke runs.

use ndarray::array;

use crate::crystal::{
    classify_crystal_system, lattice_from_params, Crystal, CrystalMeta, LabeledCrystal,
    LatticeParams,
};
use crate::elements::symbol_for_label;
use crate::util::stream_rng;
use rand::Rng;

/// Cubic perovskite-like structures (5 atoms: corner, center, three face
/// centers). Species combinations are enumerated so the first 108 records
/// all have distinct formulas; lattice constants vary per record.
pub fn perovskite_dataset(count: usize, seed: u64) -> Vec<LabeledCrystal> {
    // Type labels (atomic number - 1).
    let a_site = [55usize, 37, 19, 54, 56, 18]; // Ba Sr Ca Cs La K
    let b_site = [21usize, 39, 40, 25, 24, 12]; // Ti Zr Nb Fe Mn Al
    let x_site = [7usize, 8, 16]; // O F Cl
    let mut rng = stream_rng(seed, &[0x70]);
    let mut out = Vec::with_capacity(count);
    let mut combos: Vec<(usize, usize, usize)> = Vec::new();
    for &a in &a_site {
        for &b in &b_site {
            for &x in &x_site {
                combos.push((a, b, x));
            }
        }
    }
    for i in 0..count {
        let (a, b, x) = combos[i % combos.len()];
        let cell = rng.random_range(3.8..4.6);
        let lattice =
            lattice_from_params(&LatticeParams::new(cell, cell, cell, 90.0, 90.0, 90.0)).unwrap();
        let frac = array![
            [0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.5, 0.5, 0.0],
            [0.5, 0.0, 0.5],
            [0.0, 0.5, 0.5]
        ];
        let formula = format!(
            "{}{}{}3",
            symbol_for_label(a).unwrap(),
            symbol_for_label(b).unwrap(),
            symbol_for_label(x).unwrap()
        );
        let system = classify_crystal_system(&lattice, 1e-2, 0.5);
        let meta = CrystalMeta {
            formula: Some(formula),
            spacegroup: Some(221),
            crystal_system: Some(system.as_str().to_string()),
            formation_energy: Some(-rng.random_range(0.5..3.0)),
            band_gap: if rng.random::<f64>() < 0.5 {
                Some(0.0)
            } else {
                Some(rng.random_range(0.5..4.0))
            },
            e_above_hull: Some(0.0),
        };
        let crystal = Crystal::new(vec![a, b, x, x, x], frac, lattice, meta).unwrap();
        out.push(LabeledCrystal {
            id: format!("perov-{i}"),
            crystal,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_distinct() {
        let a = perovskite_dataset(20, 7);
        let b = perovskite_dataset(20, 7);
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
        let formulas: std::collections::BTreeSet<String> = a
            .iter()
            .map(|lc| lc.crystal.meta.formula.clone().unwrap())
            .collect();
        assert_eq!(formulas.len(), 20);
        for lc in &a {
            assert_eq!(lc.crystal.num_atoms(), 5);
            assert_eq!(lc.crystal.meta.crystal_system.as_deref(), Some("cubic"));
        }
    }
}
