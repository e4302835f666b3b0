//! Evaluation metrics: structure matching, validity, coverage, property
//! statistics (earth mover's distance), prompt correctness, timing report.

pub mod matcher;

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::crystal::reduce::reduce_crystal_geometry;
use crate::crystal::{classify_crystal_system, det3, Crystal, LabeledCrystal};
use crate::elements;
use crate::error::{Error, Result};
use crate::formula;
use crate::prompts::{EnergySign, PromptConstraints, ZeroSign};

pub use matcher::{match_rate, match_structures, MatcherConfig};

/// 1 u / Angstrom^3 in g/cm^3.
const AMU_PER_A3_TO_G_PER_CM3: f64 = 1.660_539_066_60;

/// Minimum allowed interatomic distance (Angstrom) for structural validity.
const MIN_DISTANCE: f64 = 0.5;

/// Hard bound on the oxidation-state combination search.
const MAX_OXI_COMBOS: usize = 2_000_000;

/// Structural validity: every periodic pairwise distance (including
/// self-images) must exceed 0.5 Angstrom, strictly.
pub fn structural_validity(c: &Crystal) -> bool {
    let red = reduce_crystal_geometry(c.lattice(), c.frac_coords());
    let n = c.num_atoms();
    for i in 0..n {
        for j in i..n {
            let d = crate::crystal::min_image_distance(&red.lattice, &red.frac, i, j);
            if d <= MIN_DISTANCE {
                return false;
            }
        }
    }
    true
}

/// Outcome of the charge-neutrality check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CompValidity {
    Valid,
    Invalid,
    /// Some element has no tabulated oxidation states, or the search space
    /// exceeded its bound. Counted invalid, reported separately.
    Indeterminate,
}

/// Compositional validity: does any assignment of one common oxidation
/// state per element make the cell charge-neutral? Single-element cells
/// are valid by convention (metallic/covalent solids).
pub fn compositional_validity(c: &Crystal) -> CompValidity {
    let comp = formula::composition_of(c.atom_types());
    if comp.len() == 1 {
        return CompValidity::Valid;
    }
    let mut labels = Vec::new();
    let mut counts = Vec::new();
    let mut state_sets: Vec<&[i8]> = Vec::new();
    let mut combos: usize = 1;
    for (&label, &count) in &comp {
        let states = match elements::oxidation_states_for_label(label) {
            Some(s) if !s.is_empty() => s,
            _ => return CompValidity::Indeterminate,
        };
        labels.push(label);
        counts.push(count as i64);
        combos = combos.saturating_mul(states.len());
        state_sets.push(states);
    }
    if combos > MAX_OXI_COMBOS {
        return CompValidity::Indeterminate;
    }
    // Exhaustive product search with early exit.
    let mut idx = vec![0usize; labels.len()];
    loop {
        let total: i64 = idx
            .iter()
            .enumerate()
            .map(|(e, &si)| state_sets[e][si] as i64 * counts[e])
            .sum();
        if total == 0 {
            return CompValidity::Valid;
        }
        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return CompValidity::Invalid;
            }
            idx[pos] += 1;
            if idx[pos] < state_sets[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Composition fingerprint: normalized element-count vector.
pub fn composition_fingerprint(c: &Crystal) -> Array1<f64> {
    let mut v = Array1::zeros(elements::NUM_CLASSES);
    for &t in c.atom_types() {
        v[t] += 1.0;
    }
    v / c.num_atoms() as f64
}

const FP_CUTOFF: f64 = 6.0;
const FP_BINS: usize = 40;

/// Structural fingerprint: L2-normalized histogram (40 bins) of all
/// periodic pairwise distances up to 6 Angstrom, including self-images.
pub fn structure_fingerprint(c: &Crystal) -> Array1<f64> {
    let red = reduce_crystal_geometry(c.lattice(), c.frac_coords());
    let n = c.num_atoms();
    let lattice = &red.lattice;
    // Image shell bound: cell heights give the minimum lattice-plane
    // spacing along each axis.
    let vol = det3(&lattice.view()).abs();
    let mut kmax = [1i64; 3];
    for axis in 0..3 {
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let cross = [
            lattice[[a, 1]] * lattice[[b, 2]] - lattice[[a, 2]] * lattice[[b, 1]],
            lattice[[a, 2]] * lattice[[b, 0]] - lattice[[a, 0]] * lattice[[b, 2]],
            lattice[[a, 0]] * lattice[[b, 1]] - lattice[[a, 1]] * lattice[[b, 0]],
        ];
        let area = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let height = vol / area.max(1e-12);
        kmax[axis] = (FP_CUTOFF / height).ceil() as i64 + 1;
    }
    let mut hist = Array1::<f64>::zeros(FP_BINS);
    let mut add = |dist: f64| {
        if dist > 0.0 && dist <= FP_CUTOFF {
            let bin = ((dist / FP_CUTOFF) * FP_BINS as f64).floor() as usize;
            hist[bin.min(FP_BINS - 1)] += 1.0;
        }
    };
    for i in 0..n {
        for j in i..n {
            for k0 in -kmax[0]..=kmax[0] {
                for k1 in -kmax[1]..=kmax[1] {
                    for k2 in -kmax[2]..=kmax[2] {
                        if i == j {
                            // Count each +-k image vector once.
                            if (k0, k1, k2) <= (0, 0, 0) {
                                continue;
                            }
                        }
                        let d = [
                            red.frac[[i, 0]] - red.frac[[j, 0]] + k0 as f64,
                            red.frac[[i, 1]] - red.frac[[j, 1]] + k1 as f64,
                            red.frac[[i, 2]] - red.frac[[j, 2]] + k2 as f64,
                        ];
                        let mut dist2 = 0.0;
                        for axis in 0..3 {
                            let x = d[0] * lattice[[0, axis]]
                                + d[1] * lattice[[1, axis]]
                                + d[2] * lattice[[2, axis]];
                            dist2 += x * x;
                        }
                        add(dist2.sqrt());
                    }
                }
            }
        }
    }
    let norm = hist.dot(&hist).sqrt();
    if norm > 0.0 {
        hist / norm
    } else {
        hist
    }
}

fn euclid(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|v| v * v).sum().sqrt()
}

/// Coverage: COV-R is the fraction of references with at least one
/// generated structure within both fingerprint thresholds; COV-P swaps the
/// roles. Returned as percentages.
pub fn coverage(
    gens: &[Crystal],
    refs: &[Crystal],
    struct_thresh: f64,
    comp_thresh: f64,
) -> Result<(f64, f64)> {
    if gens.is_empty() || refs.is_empty() {
        return Err(Error::Config("coverage needs nonempty sets".into()));
    }
    let gen_fp: Vec<(Array1<f64>, Array1<f64>)> = gens
        .iter()
        .map(|c| (structure_fingerprint(c), composition_fingerprint(c)))
        .collect();
    let ref_fp: Vec<(Array1<f64>, Array1<f64>)> = refs
        .iter()
        .map(|c| (structure_fingerprint(c), composition_fingerprint(c)))
        .collect();
    let covered = |target: &(Array1<f64>, Array1<f64>), pool: &[(Array1<f64>, Array1<f64>)]| {
        pool.iter().any(|cand| {
            euclid(&cand.0, &target.0) <= struct_thresh && euclid(&cand.1, &target.1) <= comp_thresh
        })
    };
    let cov_r =
        ref_fp.iter().filter(|r| covered(r, &gen_fp)).count() as f64 / ref_fp.len() as f64;
    let cov_p =
        gen_fp.iter().filter(|g| covered(g, &ref_fp)).count() as f64 / gen_fp.len() as f64;
    Ok((100.0 * cov_r, 100.0 * cov_p))
}

/// Exact 1-D earth mover's distance between two empirical distributions,
/// computed as the integral of the CDF gap. For equal sample counts this
/// equals the mean absolute difference of sorted samples.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("emd_1d needs nonempty samples".into()));
    }
    let mut sa: Vec<f64> = a.to_vec();
    let mut sb: Vec<f64> = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Walk the merged support, integrating |F_a - F_b| over each gap.
    let mut points: Vec<f64> = sa.iter().chain(sb.iter()).copied().collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    let cdf = |sorted: &[f64], x: f64| -> f64 {
        // Fraction of samples <= x.
        let mut lo = 0usize;
        let mut hi = sorted.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if sorted[mid] <= x {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo as f64 / sorted.len() as f64
    };
    let mut total = 0.0;
    for w in points.windows(2) {
        let gap = w[1] - w[0];
        total += gap * (cdf(&sa, w[0]) - cdf(&sb, w[0])).abs();
    }
    Ok(total)
}

/// Pluggable property model for metrics the artifact cannot compute from
/// geometry alone.
pub trait PropertyPredictor: Sync {
    fn formation_energy(&self, c: &Crystal) -> Option<f64>;
    fn band_gap(&self, c: &Crystal) -> Option<f64> {
        let _ = c;
        None
    }
    fn e_above_hull(&self, c: &Crystal) -> Option<f64> {
        let _ = c;
        None
    }
}

/// Number of distinct elements in a cell.
pub fn num_elements(c: &Crystal) -> usize {
    formula::composition_of(c.atom_types()).len()
}

/// Mass density in g/cm^3 from the bundled atomic-mass table.
pub fn density(c: &Crystal) -> f64 {
    let mass: f64 = c
        .atom_types()
        .iter()
        .map(|&t| elements::mass_for_label(t).unwrap_or(0.0))
        .sum();
    AMU_PER_A3_TO_G_PER_CM3 * mass / c.volume()
}

/// EMD statistics between generated and reference property distributions:
/// distinct-element count, density, and (with a predictor) formation
/// energy. Missing predictor yields `None` for the energy entry.
pub fn property_stats(
    gens: &[Crystal],
    refs: &[Crystal],
    predictor: Option<&dyn PropertyPredictor>,
) -> Result<BTreeMap<String, Option<f64>>> {
    let mut out = BTreeMap::new();
    let ne_g: Vec<f64> = gens.iter().map(|c| num_elements(c) as f64).collect();
    let ne_r: Vec<f64> = refs.iter().map(|c| num_elements(c) as f64).collect();
    out.insert("num_elems".to_string(), Some(emd_1d(&ne_g, &ne_r)?));
    let rho_g: Vec<f64> = gens.iter().map(density).collect();
    let rho_r: Vec<f64> = refs.iter().map(density).collect();
    out.insert("density".to_string(), Some(emd_1d(&rho_g, &rho_r)?));
    let fe = match predictor {
        Some(p) => {
            let fe_g: Option<Vec<f64>> = gens.iter().map(|c| p.formation_energy(c)).collect();
            let fe_r: Option<Vec<f64>> = refs
                .iter()
                .map(|c| c.meta.formation_energy.or_else(|| p.formation_energy(c)))
                .collect();
            match (fe_g, fe_r) {
                (Some(g), Some(r)) => Some(emd_1d(&g, &r)?),
                _ => None,
            }
        }
        None => None,
    };
    out.insert("formation_energy".to_string(), fe);
    Ok(out)
}

/// Outcome of one prompt-correctness field check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldCheck {
    Matched,
    Mismatched,
    /// The field cannot be evaluated by this artifact (space group).
    Unsupported,
    /// Needs a property predictor that was not supplied.
    Skipped,
}

/// Tolerances used when classifying generated lattices for correctness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyTols {
    pub len_tol: f64,
    pub ang_tol: f64,
}

impl Default for ClassifyTols {
    fn default() -> Self {
        ClassifyTols {
            len_tol: 0.01,
            ang_tol: 1.0,
        }
    }
}

/// Check a generated crystal against parsed prompt constraints. Fields the
/// constraints do not mention are absent from the result.
pub fn prompt_correctness(
    gen: &Crystal,
    constraints: &PromptConstraints,
    tols: ClassifyTols,
    predictor: Option<&dyn PropertyPredictor>,
) -> BTreeMap<String, FieldCheck> {
    let mut out = BTreeMap::new();
    if let Some(f) = &constraints.formula {
        let check = match formula::parse_formula(f) {
            Ok(want) => {
                let have = formula::composition_of(gen.atom_types());
                if formula::same_reduced_composition(&want, &have) {
                    FieldCheck::Matched
                } else {
                    FieldCheck::Mismatched
                }
            }
            Err(_) => FieldCheck::Unsupported,
        };
        out.insert("formula".to_string(), check);
    }
    if let Some(cs) = constraints.crystal_system {
        let got = classify_crystal_system(gen.lattice(), tols.len_tol, tols.ang_tol);
        out.insert(
            "crystal_system".to_string(),
            if got == cs {
                FieldCheck::Matched
            } else {
                FieldCheck::Mismatched
            },
        );
    }
    if constraints.spacegroup.is_some() {
        out.insert("spacegroup".to_string(), FieldCheck::Unsupported);
    }
    if constraints.formation_energy_sign != EnergySign::Unspecified {
        let check = match predictor.and_then(|p| p.formation_energy(gen)) {
            Some(v) => {
                let sign = if v.abs() <= 1e-9 {
                    EnergySign::Zero
                } else if v < 0.0 {
                    EnergySign::Negative
                } else {
                    EnergySign::Positive
                };
                if sign == constraints.formation_energy_sign {
                    FieldCheck::Matched
                } else {
                    FieldCheck::Mismatched
                }
            }
            None => FieldCheck::Skipped,
        };
        out.insert("formation_energy".to_string(), check);
    }
    if constraints.band_gap_sign != ZeroSign::Unspecified {
        let check = match predictor.and_then(|p| p.band_gap(gen)) {
            Some(v) => {
                let sign = if v.abs() <= 1e-9 {
                    ZeroSign::Zero
                } else {
                    ZeroSign::Nonzero
                };
                if sign == constraints.band_gap_sign {
                    FieldCheck::Matched
                } else {
                    FieldCheck::Mismatched
                }
            }
            None => FieldCheck::Skipped,
        };
        out.insert("band_gap".to_string(), check);
    }
    if constraints.e_above_hull_sign != ZeroSign::Unspecified {
        let check = match predictor.and_then(|p| p.e_above_hull(gen)) {
            Some(v) => {
                let sign = if v.abs() <= 1e-9 {
                    ZeroSign::Zero
                } else {
                    ZeroSign::Nonzero
                };
                if sign == constraints.e_above_hull_sign {
                    FieldCheck::Matched
                } else {
                    FieldCheck::Mismatched
                }
            }
            None => FieldCheck::Skipped,
        };
        out.insert("e_above_hull".to_string(), check);
    }
    out
}

/// Aggregated evaluation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Match rate in percent; `None` when no reference had candidates.
    pub match_rate: Option<f64>,
    pub mean_rmse: Option<f64>,
    pub struct_validity: f64,
    /// `None` for fully elemental datasets (mirror of the "-" table cells).
    pub comp_validity: Option<f64>,
    /// Percentage of structures whose neutrality check was indeterminate.
    pub comp_indeterminate: f64,
    pub cov_r: f64,
    pub cov_p: f64,
    pub emd: BTreeMap<String, Option<f64>>,
    /// Field name -> percent matched, over gens where the field applied.
    pub correctness: BTreeMap<String, f64>,
    pub timings: BTreeMap<String, f64>,
}

/// Evaluation thresholds and tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub matcher: MatcherConfig,
    pub coverage_struct_thresh: f64,
    pub coverage_comp_thresh: f64,
    pub classify: ClassifyTols,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            matcher: MatcherConfig::default(),
            coverage_struct_thresh: 0.4,
            coverage_comp_thresh: 0.1,
            classify: ClassifyTols::default(),
        }
    }
}

/// Base id of a generated sample: everything before the last `#`.
pub fn base_id(id: &str) -> &str {
    match id.rfind('#') {
        Some(pos) => &id[..pos],
        None => id,
    }
}

/// Run the full evaluation protocol. Generated samples pair with the
/// reference whose id equals their id prefix before `#`. Prompts, when
/// given, map reference ids to constraint text for the correctness block.
pub fn evaluate(
    gens: &[LabeledCrystal],
    refs: &[LabeledCrystal],
    prompts: Option<&BTreeMap<String, PromptConstraints>>,
    opts: &EvalOptions,
    predictor: Option<&dyn PropertyPredictor>,
) -> Result<EvalReport> {
    if gens.is_empty() || refs.is_empty() {
        return Err(Error::Config("evaluation needs nonempty sets".into()));
    }
    let mut timings = BTreeMap::new();

    // Match rate over references with at least one candidate sample.
    let started = Instant::now();
    let mut gens_per_ref: Vec<Vec<&Crystal>> = vec![Vec::new(); refs.len()];
    let ref_index: BTreeMap<&str, usize> = refs
        .iter()
        .enumerate()
        .map(|(i, lc)| (lc.id.as_str(), i))
        .collect();
    let mut any_candidates = false;
    for g in gens {
        if let Some(&ri) = ref_index.get(base_id(&g.id)) {
            gens_per_ref[ri].push(&g.crystal);
            any_candidates = true;
        }
    }
    let (mr, mean_rmse) = if any_candidates {
        let ref_refs: Vec<&Crystal> = refs.iter().map(|lc| &lc.crystal).collect();
        let (mr, rmse) = match_rate(&gens_per_ref, &ref_refs, &opts.matcher);
        (Some(mr), rmse)
    } else {
        (None, None)
    };
    timings.insert("matching".to_string(), started.elapsed().as_secs_f64());

    // Validity.
    let started = Instant::now();
    let n_gens = gens.len() as f64;
    let struct_valid = gens
        .iter()
        .filter(|g| structural_validity(&g.crystal))
        .count() as f64;
    let mut comp_valid = 0usize;
    let mut comp_indet = 0usize;
    let all_elemental = gens.iter().all(|g| num_elements(&g.crystal) == 1);
    for g in gens {
        match compositional_validity(&g.crystal) {
            CompValidity::Valid => comp_valid += 1,
            CompValidity::Invalid => {}
            CompValidity::Indeterminate => comp_indet += 1,
        }
    }
    timings.insert("validity".to_string(), started.elapsed().as_secs_f64());

    // Coverage.
    let started = Instant::now();
    let gen_crystals: Vec<Crystal> = gens.iter().map(|g| g.crystal.clone()).collect();
    let ref_crystals: Vec<Crystal> = refs.iter().map(|r| r.crystal.clone()).collect();
    let (cov_r, cov_p) = coverage(
        &gen_crystals,
        &ref_crystals,
        opts.coverage_struct_thresh,
        opts.coverage_comp_thresh,
    )?;
    timings.insert("coverage".to_string(), started.elapsed().as_secs_f64());

    // Property statistics.
    let started = Instant::now();
    let emd = property_stats(&gen_crystals, &ref_crystals, predictor)?;
    timings.insert("properties".to_string(), started.elapsed().as_secs_f64());

    // Prompt correctness.
    let started = Instant::now();
    let mut correctness = BTreeMap::new();
    if let Some(prompt_map) = prompts {
        let mut matched: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for g in gens {
            if let Some(constraints) = prompt_map.get(base_id(&g.id)) {
                for (field, check) in
                    prompt_correctness(&g.crystal, constraints, opts.classify, predictor)
                {
                    let entry = matched.entry(field).or_insert((0, 0));
                    match check {
                        FieldCheck::Matched => {
                            entry.0 += 1;
                            entry.1 += 1;
                        }
                        FieldCheck::Mismatched => {
                            entry.1 += 1;
                        }
                        FieldCheck::Unsupported | FieldCheck::Skipped => {}
                    }
                }
            }
        }
        for (field, (hit, total)) in matched {
            if total > 0 {
                correctness.insert(field, 100.0 * hit as f64 / total as f64);
            }
        }
    }
    timings.insert("correctness".to_string(), started.elapsed().as_secs_f64());

    Ok(EvalReport {
        match_rate: mr,
        mean_rmse,
        struct_validity: 100.0 * struct_valid / n_gens,
        comp_validity: if all_elemental {
            None
        } else {
            Some(100.0 * comp_valid as f64 / n_gens)
        },
        comp_indeterminate: 100.0 * comp_indet as f64 / n_gens,
        cov_r,
        cov_p,
        emd,
        correctness,
        timings,
    })
}

/// Flatten a report into (name, value, count) CSV rows.
pub fn report_csv_rows(report: &EvalReport, n_gens: usize) -> Vec<(String, String, usize)> {
    let mut rows = Vec::new();
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x}"),
        None => "-".to_string(),
    };
    rows.push(("match_rate".into(), fmt(report.match_rate), n_gens));
    rows.push(("mean_rmse".into(), fmt(report.mean_rmse), n_gens));
    rows.push((
        "struct_validity".into(),
        format!("{}", report.struct_validity),
        n_gens,
    ));
    rows.push(("comp_validity".into(), fmt(report.comp_validity), n_gens));
    rows.push((
        "comp_indeterminate".into(),
        format!("{}", report.comp_indeterminate),
        n_gens,
    ));
    rows.push(("cov_r".into(), format!("{}", report.cov_r), n_gens));
    rows.push(("cov_p".into(), format!("{}", report.cov_p), n_gens));
    for (k, v) in &report.emd {
        rows.push((format!("emd.{k}"), fmt(*v), n_gens));
    }
    for (k, v) in &report.correctness {
        rows.push((format!("correctness.{k}"), format!("{v}"), n_gens));
    }
    for (k, v) in &report.timings {
        rows.push((format!("timings.{k}"), format!("{v}"), n_gens));
    }
    rows
}

/// JSON schema for the report object, bundled for output validation.
pub const REPORT_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["match_rate", "mean_rmse", "struct_validity", "comp_validity",
               "comp_indeterminate", "cov_r", "cov_p", "emd", "correctness",
               "timings"],
  "properties": {
    "match_rate": {"type": ["number", "null"]},
    "mean_rmse": {"type": ["number", "null"]},
    "struct_validity": {"type": "number"},
    "comp_validity": {"type": ["number", "null"]},
    "comp_indeterminate": {"type": "number"},
    "cov_r": {"type": "number"},
    "cov_p": {"type": "number"},
    "emd": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
    "correctness": {"type": "object", "additionalProperties": {"type": "number"}},
    "timings": {"type": "object", "additionalProperties": {"type": "number"}}
  }
}"#;

/// Validate a JSON value against the bundled report schema (the subset of
/// JSON-Schema keywords the schema uses: type, required, properties,
/// additionalProperties).
pub fn validate_report_json(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value =
        serde_json::from_str(REPORT_SCHEMA).expect("bundled schema parses");
    validate_against(value, &schema, "$")
}

fn validate_against(value: &serde_json::Value, schema: &serde_json::Value, path: &str) -> Result<()> {
    use serde_json::Value;
    let type_ok = |v: &Value, ty: &str| -> bool {
        match ty {
            "object" => v.is_object(),
            "number" => v.is_number(),
            "null" => v.is_null(),
            "string" => v.is_string(),
            "array" => v.is_array(),
            "boolean" => v.is_boolean(),
            _ => false,
        }
    };
    if let Some(ty) = schema.get("type") {
        let allowed: Vec<String> = match ty {
            Value::String(s) => vec![s.clone()],
            Value::Array(a) => a
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
            _ => vec![],
        };
        if !allowed.iter().any(|t| type_ok(value, t)) {
            return Err(Error::Config(format!(
                "schema violation at {path}: expected {allowed:?}"
            )));
        }
    }
    if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
        for key in required.iter().filter_map(|k| k.as_str()) {
            if value.get(key).is_none() {
                return Err(Error::Config(format!(
                    "schema violation at {path}: missing key {key:?}"
                )));
            }
        }
    }
    if let (Some(props), Some(obj)) = (
        schema.get("properties").and_then(|p| p.as_object()),
        value.as_object(),
    ) {
        for (key, sub) in props {
            if let Some(v) = obj.get(key) {
                validate_against(v, sub, &format!("{path}.{key}"))?;
            }
        }
    }
    if let (Some(extra), Some(obj)) = (schema.get("additionalProperties"), value.as_object()) {
        if extra.is_object() {
            let declared: Vec<&String> = schema
                .get("properties")
                .and_then(|p| p.as_object())
                .map(|p| p.keys().collect())
                .unwrap_or_default();
            for (key, v) in obj {
                if !declared.contains(&key) {
                    validate_against(v, extra, &format!("{path}.{key}"))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
