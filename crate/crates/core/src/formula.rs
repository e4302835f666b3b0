//! Chemical formula parsing and canonical reduced forms.
//!
//! Supports element symbols with integer counts and nested parenthesized
//! groups with multipliers, e.g. `La(NiGe)2` or `Ba(Pd2O3)4`. Counts are
//! keyed by type label (atomic number minus one).

use std::collections::BTreeMap;

use crate::elements;
use crate::error::{Error, Result};

/// Element-count map keyed by type label.
pub type Composition = BTreeMap<usize, u32>;

/// Parse a formula string into an element-count map.
pub fn parse_formula(formula: &str) -> Result<Composition> {
    let chars: Vec<char> = formula.chars().collect();
    let (comp, used) = parse_group(&chars, 0, formula)?;
    if used != chars.len() {
        return Err(Error::Prompt(format!(
            "unexpected character {:?} in formula {:?}",
            chars[used], formula
        )));
    }
    if comp.is_empty() {
        return Err(Error::Prompt(format!("empty formula {:?}", formula)));
    }
    Ok(comp)
}

fn parse_group(chars: &[char], mut pos: usize, full: &str) -> Result<(Composition, usize)> {
    let mut comp = Composition::new();
    while pos < chars.len() {
        let c = chars[pos];
        if c == '(' {
            let (inner, next) = parse_group(chars, pos + 1, full)?;
            if next >= chars.len() || chars[next] != ')' {
                return Err(Error::Prompt(format!("unbalanced '(' in formula {:?}", full)));
            }
            let (mult, next) = parse_count(chars, next + 1);
            for (label, n) in inner {
                *comp.entry(label).or_insert(0) += n * mult;
            }
            pos = next;
        } else if c == ')' {
            return Ok((comp, pos));
        } else if c.is_ascii_uppercase() {
            let mut sym = c.to_string();
            if pos + 1 < chars.len() && chars[pos + 1].is_ascii_lowercase() {
                sym.push(chars[pos + 1]);
                pos += 1;
            }
            pos += 1;
            let label = elements::label_for_symbol(&sym).ok_or_else(|| {
                Error::Prompt(format!("unknown element {:?} in formula {:?}", sym, full))
            })?;
            let (count, next) = parse_count(chars, pos);
            *comp.entry(label).or_insert(0) += count;
            pos = next;
        } else {
            return Err(Error::Prompt(format!(
                "unexpected character {:?} in formula {:?}",
                c, full
            )));
        }
    }
    Ok((comp, pos))
}

fn parse_count(chars: &[char], mut pos: usize) -> (u32, usize) {
    let start = pos;
    while pos < chars.len() && chars[pos].is_ascii_digit() {
        pos += 1;
    }
    if pos == start {
        (1, pos)
    } else {
        let n: u32 = chars[start..pos].iter().collect::<String>().parse().unwrap_or(1);
        (n.max(1), pos)
    }
}

/// Composition of a list of type labels.
pub fn composition_of(atom_types: &[usize]) -> Composition {
    let mut comp = Composition::new();
    for &label in atom_types {
        *comp.entry(label).or_insert(0) += 1;
    }
    comp
}

/// Divide all counts by their gcd.
pub fn reduce(comp: &Composition) -> Composition {
    let g = comp.values().fold(0u32, |acc, &n| gcd(acc, n));
    if g <= 1 {
        return comp.clone();
    }
    comp.iter().map(|(&l, &n)| (l, n / g)).collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// True if the two compositions are equal after gcd reduction.
pub fn same_reduced_composition(a: &Composition, b: &Composition) -> bool {
    reduce(a) == reduce(b)
}

/// Distinct element labels sorted by ascending electronegativity (ties by
/// atomic number), the ordering used by prompt element lists.
pub fn elements_by_electronegativity(comp: &Composition) -> Vec<usize> {
    let mut labels: Vec<usize> = comp.keys().copied().collect();
    labels.sort_by(|&a, &b| {
        let xa = elements::electronegativity_for_label(a).unwrap_or(f64::MAX);
        let xb = elements::electronegativity_for_label(b).unwrap_or(f64::MAX);
        xa.partial_cmp(&xb).unwrap().then(a.cmp(&b))
    });
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::label_for_symbol;

    fn comp(pairs: &[(&str, u32)]) -> Composition {
        pairs
            .iter()
            .map(|&(s, n)| (label_for_symbol(s).unwrap(), n))
            .collect()
    }

    #[test]
    fn parses_nested_groups() {
        assert_eq!(
            parse_formula("La(NiGe)2").unwrap(),
            comp(&[("La", 1), ("Ni", 2), ("Ge", 2)])
        );
        assert_eq!(
            parse_formula("Ba(Pd2O3)4").unwrap(),
            comp(&[("Ba", 1), ("Pd", 8), ("O", 12)])
        );
        assert_eq!(parse_formula("HgScNOF").unwrap(),
            comp(&[("Hg", 1), ("Sc", 1), ("N", 1), ("O", 1), ("F", 1)]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_formula("La(NiGe").is_err());
        assert!(parse_formula("Xq2").is_err());
        assert!(parse_formula("").is_err());
        assert!(parse_formula("2H").is_err());
    }

    #[test]
    fn reduced_equality() {
        let a = comp(&[("La", 2), ("Ni", 4), ("Ge", 4)]);
        let b = parse_formula("La(NiGe)2").unwrap();
        assert!(same_reduced_composition(&a, &b));
        let c = comp(&[("La", 1), ("Ni", 2), ("Ge", 3)]);
        assert!(!same_reduced_composition(&b, &c));
    }

    #[test]
    fn electronegativity_order() {
        let c = parse_formula("HgScNOF").unwrap();
        let order: Vec<&str> = elements_by_electronegativity(&c)
            .into_iter()
            .map(|l| crate::elements::symbol_for_label(l).unwrap())
            .collect();
        assert_eq!(order, vec!["Sc", "Hg", "N", "O", "F"]);
    }
}
