//! Static element data for atomic numbers 1..=100.
//!
//! Type labels used throughout the crate are integers `0..k` (k = 100);
//! label `i` maps to atomic number `i + 1`. All tables below are indexed by
//! atomic number minus one.

/// Number of atom type classes.
pub const NUM_CLASSES: usize = 100;

/// Element symbols for Z = 1..=100.
pub const SYMBOLS: [&str; NUM_CLASSES] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", //
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca", //
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", //
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", //
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", //
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", //
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", //
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", //
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", //
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
];

/// Standard atomic weights in unified atomic mass units (CIAAW conventional
/// values; for elements without stable isotopes, the mass number of the
/// longest-lived isotope is used).
pub const ATOMIC_MASS: [f64; NUM_CLASSES] = [
    1.008, 4.002602, 6.94, 9.0121831, 10.81, 12.011, 14.007, 15.999, 18.998403163, 20.1797, //
    22.98976928, 24.305, 26.9815385, 28.085, 30.973761998, 32.06, 35.45, 39.948, 39.0983,
    40.078, //
    44.955908, 47.867, 50.9415, 51.9961, 54.938044, 55.845, 58.933194, 58.6934, 63.546, 65.38, //
    69.723, 72.630, 74.921595, 78.971, 79.904, 83.798, 85.4678, 87.62, 88.90584, 91.224, //
    92.90637, 95.95, 98.0, 101.07, 102.90550, 106.42, 107.8682, 112.414, 114.818, 118.710, //
    121.760, 127.60, 126.90447, 131.293, 132.90545196, 137.327, 138.90547, 140.116, 140.90766,
    144.242, //
    145.0, 150.36, 151.964, 157.25, 158.92535, 162.500, 164.93033, 167.259, 168.93422, 173.045, //
    174.9668, 178.49, 180.94788, 183.84, 186.207, 190.23, 192.217, 195.084, 196.966569,
    200.592, //
    204.38, 207.2, 208.98040, 209.0, 210.0, 222.0, 223.0, 226.0, 227.0, 232.0377, //
    231.03588, 238.02891, 237.0, 244.0, 243.0, 247.0, 247.0, 251.0, 252.0, 257.0,
];

/// Pauling electronegativities, used to order element lists in prompts.
/// Noble gases without a tabulated value get a large sentinel so they sort
/// last, mirroring the usual composition-printing convention.
pub const ELECTRONEGATIVITY: [f64; NUM_CLASSES] = [
    2.20, 10.0, 0.98, 1.57, 2.04, 2.55, 3.04, 3.44, 3.98, 10.0, //
    0.93, 1.31, 1.61, 1.90, 2.19, 2.58, 3.16, 10.0, 0.82, 1.00, //
    1.36, 1.54, 1.63, 1.66, 1.55, 1.83, 1.88, 1.91, 1.90, 1.65, //
    1.81, 2.01, 2.18, 2.55, 2.96, 3.00, 0.82, 0.95, 1.22, 1.33, //
    1.60, 2.16, 1.90, 2.20, 2.28, 2.20, 1.93, 1.69, 1.78, 1.96, //
    2.05, 2.10, 2.66, 2.60, 0.79, 0.89, 1.10, 1.12, 1.13, 1.14, //
    1.13, 1.17, 1.20, 1.20, 1.10, 1.22, 1.23, 1.24, 1.25, 1.10, //
    1.27, 1.30, 1.50, 2.36, 1.90, 2.20, 2.20, 2.28, 2.54, 2.00, //
    1.62, 2.33, 2.02, 2.00, 2.20, 2.20, 0.70, 0.90, 1.10, 1.30, //
    1.50, 1.38, 1.36, 1.28, 1.13, 1.28, 1.30, 1.30, 1.30, 1.30,
];

/// Common oxidation states per element, used by the charge-neutrality
/// (compositional validity) check. Pragmatic "common states" in the spirit
/// of the SMACT/pymatgen tables; empty slice means no tabulated state.
pub const OXIDATION_STATES: [&[i8]; NUM_CLASSES] = [
    &[-1, 1],            // H
    &[],                 // He
    &[1],                // Li
    &[2],                // Be
    &[3],                // B
    &[-4, 4],            // C
    &[-3, 3, 5],         // N
    &[-2],               // O
    &[-1],               // F
    &[],                 // Ne
    &[1],                // Na
    &[2],                // Mg
    &[3],                // Al
    &[-4, 4],            // Si
    &[-3, 3, 5],         // P
    &[-2, 2, 4, 6],      // S
    &[-1, 1, 3, 5, 7],   // Cl
    &[],                 // Ar
    &[1],                // K
    &[2],                // Ca
    &[3],                // Sc
    &[2, 3, 4],          // Ti
    &[2, 3, 4, 5],       // V
    &[2, 3, 6],          // Cr
    &[2, 3, 4, 6, 7],    // Mn
    &[2, 3],             // Fe
    &[2, 3],             // Co
    &[2, 3],             // Ni
    &[1, 2],             // Cu
    &[2],                // Zn
    &[3],                // Ga
    &[-4, 2, 4],         // Ge
    &[-3, 3, 5],         // As
    &[-2, 2, 4, 6],      // Se
    &[-1, 1, 3, 5, 7],   // Br
    &[],                 // Kr
    &[1],                // Rb
    &[2],                // Sr
    &[3],                // Y
    &[4],                // Zr
    &[3, 5],             // Nb
    &[2, 3, 4, 5, 6],    // Mo
    &[4, 7],             // Tc
    &[2, 3, 4, 6, 8],    // Ru
    &[3],                // Rh
    &[2, 4],             // Pd
    &[1],                // Ag
    &[2],                // Cd
    &[1, 3],             // In
    &[-4, 2, 4],         // Sn
    &[-3, 3, 5],         // Sb
    &[-2, 2, 4, 6],      // Te
    &[-1, 1, 3, 5, 7],   // I
    &[2, 4, 6],          // Xe
    &[1],                // Cs
    &[2],                // Ba
    &[3],                // La
    &[3, 4],             // Ce
    &[3],                // Pr
    &[3],                // Nd
    &[3],                // Pm
    &[2, 3],             // Sm
    &[2, 3],             // Eu
    &[3],                // Gd
    &[3, 4],             // Tb
    &[3],                // Dy
    &[3],                // Ho
    &[3],                // Er
    &[2, 3],             // Tm
    &[2, 3],             // Yb
    &[3],                // Lu
    &[4],                // Hf
    &[5],                // Ta
    &[4, 6],             // W
    &[4, 7],             // Re
    &[2, 3, 4, 6, 8],    // Os
    &[3, 4],             // Ir
    &[2, 4],             // Pt
    &[1, 3],             // Au
    &[1, 2],             // Hg
    &[1, 3],             // Tl
    &[2, 4],             // Pb
    &[3, 5],             // Bi
    &[-2, 2, 4],         // Po
    &[-1, 1],            // At
    &[],                 // Rn
    &[1],                // Fr
    &[2],                // Ra
    &[3],                // Ac
    &[4],                // Th
    &[4, 5],             // Pa
    &[3, 4, 5, 6],       // U
    &[3, 4, 5, 6, 7],    // Np
    &[3, 4, 5, 6],       // Pu
    &[3],                // Am
    &[3],                // Cm
    &[3, 4],             // Bk
    &[3],                // Cf
    &[3],                // Es
    &[3],                // Fm
];

/// Symbol for a type label (`label` in 0..100 maps to Z = label + 1).
pub fn symbol_for_label(label: usize) -> Option<&'static str> {
    SYMBOLS.get(label).copied()
}

/// Type label for an element symbol (case-sensitive, e.g. "Fe").
pub fn label_for_symbol(symbol: &str) -> Option<usize> {
    SYMBOLS.iter().position(|&s| s == symbol)
}

/// Atomic mass in u for a type label.
pub fn mass_for_label(label: usize) -> Option<f64> {
    ATOMIC_MASS.get(label).copied()
}

/// Electronegativity sort key for a type label.
pub fn electronegativity_for_label(label: usize) -> Option<f64> {
    ELECTRONEGATIVITY.get(label).copied()
}

/// Common oxidation states for a type label; `None` if out of range,
/// `Some(&[])` if no states are tabulated.
pub fn oxidation_states_for_label(label: usize) -> Option<&'static [i8]> {
    OXIDATION_STATES.get(label).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_round_trip() {
        for (i, s) in SYMBOLS.iter().enumerate() {
            assert_eq!(label_for_symbol(s), Some(i));
        }
        assert_eq!(label_for_symbol("Xx"), None);
    }

    #[test]
    fn known_entries() {
        assert_eq!(symbol_for_label(0), Some("H"));
        assert_eq!(symbol_for_label(55), Some("Ba"));
        assert_eq!(symbol_for_label(99), Some("Fm"));
        assert_eq!(mass_for_label(83), Some(209.0)); // Po
        assert_eq!(oxidation_states_for_label(10), Some(&[1_i8][..])); // Na
    }

    #[test]
    fn electronegativity_ordering_matches_conventions() {
        // La < Ni < Ge and Sc < Hg < N < O < F, the orderings used by the
        // short-prompt element lists.
        let en = |sym: &str| electronegativity_for_label(label_for_symbol(sym).unwrap()).unwrap();
        assert!(en("La") < en("Ni") && en("Ni") < en("Ge"));
        assert!(en("Sc") < en("Hg") && en("Hg") < en("N") && en("N") < en("O") && en("O") < en("F"));
    }
}
