//! Short-prompt template generation and parsing, plus text embeddings.
//!
//! The template emits one sentence per known fact about a material
//! (formula, elements, property signs, space group, crystal system) and the
//! parser recovers those facts from any text that contains the clauses,
//! ignoring everything else. Embeddings come either from the deterministic
//! hash encoder here or from externally computed vectors loaded off disk.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::crystal::{CrystalMeta, CrystalSystem};
use crate::error::{Error, Result};
use crate::formula;
use crate::util::{fnv1a64, mix64};

/// Sign bucket for formation energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergySign {
    Negative,
    Positive,
    Zero,
    Unspecified,
}

/// Zero/nonzero bucket for band gap and energy above hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroSign {
    Zero,
    Nonzero,
    Unspecified,
}

/// Constraint fields carried by a short prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConstraints {
    pub formula: Option<String>,
    /// Distinct element symbols, in emission order.
    pub elements: Vec<String>,
    pub formation_energy_sign: EnergySign,
    pub band_gap_sign: ZeroSign,
    pub e_above_hull_sign: ZeroSign,
    pub spacegroup: Option<u32>,
    pub crystal_system: Option<CrystalSystem>,
}

impl Default for PromptConstraints {
    fn default() -> Self {
        PromptConstraints {
            formula: None,
            elements: Vec::new(),
            formation_energy_sign: EnergySign::Unspecified,
            band_gap_sign: ZeroSign::Unspecified,
            e_above_hull_sign: ZeroSign::Unspecified,
            spacegroup: None,
            crystal_system: None,
        }
    }
}

/// A prompt with its parsed constraints and raw embedding.
#[derive(Debug, Clone)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub constraints: PromptConstraints,
    pub embedding: Array1<f64>,
}

const ZERO_EPS: f64 = 1e-9;

fn energy_sign_of(v: f64) -> EnergySign {
    if v.abs() <= ZERO_EPS {
        EnergySign::Zero
    } else if v < 0.0 {
        EnergySign::Negative
    } else {
        EnergySign::Positive
    }
}

fn zero_sign_of(v: f64) -> ZeroSign {
    if v.abs() <= ZERO_EPS {
        ZeroSign::Zero
    } else {
        ZeroSign::Nonzero
    }
}

/// Emit the canonical short prompt for a material's metadata. Optional
/// clauses are omitted when the corresponding field is absent; the formula
/// is required. Elements are listed by ascending electronegativity.
pub fn make_short_prompt(meta: &CrystalMeta) -> Result<String> {
    let formula = meta
        .formula
        .as_deref()
        .ok_or_else(|| Error::Prompt("metadata has no formula".into()))?;
    let comp = formula::parse_formula(formula)?;
    let element_list: Vec<&str> = formula::elements_by_electronegativity(&comp)
        .into_iter()
        .map(|l| crate::elements::symbol_for_label(l).unwrap())
        .collect();

    let mut s = String::from("Below is a description of a bulk material. ");
    s.push_str(&format!("The chemical formula is {formula}. "));
    s.push_str(&format!("The elements are {}. ", element_list.join(", ")));
    if let Some(fe) = meta.formation_energy {
        let word = match energy_sign_of(fe) {
            EnergySign::Negative => "negative",
            EnergySign::Positive => "positive",
            _ => "zero",
        };
        s.push_str(&format!("The formation energy is {word}. "));
    }
    if let Some(bg) = meta.band_gap {
        let word = match zero_sign_of(bg) {
            ZeroSign::Zero => "zero",
            _ => "nonzero",
        };
        s.push_str(&format!("The band gap is {word}. "));
    }
    if let Some(eh) = meta.e_above_hull {
        let word = match zero_sign_of(eh) {
            ZeroSign::Zero => "zero",
            _ => "nonzero",
        };
        s.push_str(&format!("The energy above the convex hull is {word}. "));
    }
    if let Some(sg) = meta.spacegroup {
        s.push_str(&format!("The spacegroup number is {sg}. "));
    }
    if let Some(cs) = &meta.crystal_system {
        s.push_str(&format!("The crystal system is {cs}. "));
    }
    s.push_str("Generate the material.");
    Ok(s)
}

/// Parse prompt text back into constraints. Clause matching is liberal:
/// sentences are scanned independently, unknown sentences are ignored,
/// numeric property values are bucketed by sign. A formula clause is
/// required.
pub fn parse_prompt(text: &str) -> Result<PromptConstraints> {
    let mut out = PromptConstraints::default();
    for raw in split_sentences(text) {
        let sentence = raw.trim();
        if sentence.is_empty() {
            continue;
        }
        if let Some(rest) = sentence.strip_prefix("The chemical formula is ") {
            out.formula = Some(rest.trim().to_string());
        } else if let Some(rest) = sentence.strip_prefix("The elements are ") {
            out.elements = rest
                .split(',')
                .map(|e| e.trim().to_string())
                .filter(|e| !e.is_empty())
                .collect();
        } else if let Some(rest) = sentence.strip_prefix("The formation energy is ") {
            out.formation_energy_sign = match rest.trim() {
                "negative" => EnergySign::Negative,
                "positive" => EnergySign::Positive,
                "zero" => EnergySign::Zero,
                v => match v.parse::<f64>() {
                    Ok(x) => energy_sign_of(x),
                    Err(_) => out.formation_energy_sign,
                },
            };
        } else if let Some(rest) = sentence.strip_prefix("The band gap is ") {
            out.band_gap_sign = parse_zero_sign(rest, out.band_gap_sign);
        } else if let Some(rest) = sentence.strip_prefix("The energy above the convex hull is ") {
            out.e_above_hull_sign = parse_zero_sign(rest, out.e_above_hull_sign);
        } else if let Some(rest) = sentence.strip_prefix("The spacegroup number is ") {
            if let Ok(sg) = rest.trim().parse::<u32>() {
                out.spacegroup = Some(sg);
            }
        } else if let Some(rest) = sentence.strip_prefix("The crystal system is ") {
            out.crystal_system = CrystalSystem::from_str_loose(rest);
        }
    }
    if out.formula.is_none() {
        return Err(Error::Prompt("no formula clause found".into()));
    }
    if out.elements.is_empty() {
        if let Some(f) = &out.formula {
            if let Ok(comp) = formula::parse_formula(f) {
                out.elements = formula::elements_by_electronegativity(&comp)
                    .into_iter()
                    .map(|l| crate::elements::symbol_for_label(l).unwrap().to_string())
                    .collect();
            }
        }
    }
    Ok(out)
}

/// Split on periods that end a sentence (followed by whitespace or end of
/// text), leaving decimal points inside numbers intact.
fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'.' && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace()) {
            out.push(&text[start..i]);
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn parse_zero_sign(rest: &str, fallback: ZeroSign) -> ZeroSign {
    match rest.trim() {
        "zero" => ZeroSign::Zero,
        "nonzero" | "non-zero" => ZeroSign::Nonzero,
        v => match v.parse::<f64>() {
            Ok(x) => zero_sign_of(x),
            Err(_) => fallback,
        },
    }
}

/// Deterministic feature-hashing text encoder.
///
/// Normalization: lowercase, split on non-alphanumeric characters. Each
/// token maps to a pair of signed slots via seeded FNV hashes; the
/// contribution magnitude is itself hash-derived (in [0.5, 1.5]) so that
/// distinct token sets cannot cancel to the same vector except with
/// negligible probability. Accumulated counts are L2-normalized. Empty or
/// tokenless text yields the all-zero vector (callers detect it by norm).
pub fn encode_text_hash(text: &str, d_text: usize, seed: u64) -> Result<Array1<f64>> {
    if d_text < 8 {
        return Err(Error::Config(format!("d_text = {d_text} must be >= 8")));
    }
    let mut v = Array1::<f64>::zeros(d_text);
    let lower = text.to_lowercase();
    let mut any = false;
    for token in lower.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        any = true;
        let base = {
            let mut b = seed.to_le_bytes().to_vec();
            b.extend_from_slice(token.as_bytes());
            b
        };
        for slot in [0x5au8, 0xa5u8] {
            let mut salted = base.clone();
            salted.push(slot);
            let h1 = mix64(fnv1a64(&salted));
            salted.push(0xff);
            let h2 = mix64(fnv1a64(&salted));
            let idx = (h1 % d_text as u64) as usize;
            let sign = if h2 & 1 == 0 { 1.0 } else { -1.0 };
            let weight = 0.5 + (h2 >> 1) as f64 / (u64::MAX >> 1) as f64;
            v[idx] += sign * weight;
        }
    }
    if !any {
        return Ok(v);
    }
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        let scale = (d_text as f64).sqrt() / norm;
        v.mapv_inplace(|x| x * scale);
    }
    Ok(v)
}

/// Load externally computed embeddings from JSONL lines of
/// `{"id": ..., "vector": [...]}`. All vectors must share one dimension;
/// duplicate ids are an error.
pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, Array1<f64>>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Wire {
        id: String,
        vector: Vec<f64>,
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        if serde_json::from_str::<serde_json::Value>(&line)
            .map(|v| v.get("provenance").is_some())
            .unwrap_or(false)
        {
            continue;
        }
        let wire: Wire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        match dim {
            None => dim = Some(wire.vector.len()),
            Some(d) if d != wire.vector.len() => {
                return Err(Error::Embedding(format!(
                    "dimension mismatch at id {:?}: {} vs {}",
                    wire.id,
                    wire.vector.len(),
                    d
                )))
            }
            _ => {}
        }
        if !wire.vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        if out
            .insert(wire.id.clone(), Array1::from_vec(wire.vector))
            .is_some()
        {
            return Err(Error::Embedding(format!("duplicate id {:?}", wire.id)));
        }
    }
    Ok(out)
}

/// Look up an embedding by id, erroring on absence.
pub fn lookup_embedding<'a>(
    map: &'a BTreeMap<String, Array1<f64>>,
    id: &str,
) -> Result<&'a Array1<f64>> {
    map.get(id)
        .ok_or_else(|| Error::Embedding(format!("no embedding for id {id:?}")))
}

/// Prompt JSONL wire record used by the CLI: `{"id", "text"}` plus an
/// optional `types` list for structure-prediction runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptWire {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<usize>>,
}

/// Read a prompt JSONL file.
pub fn read_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptWire>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        if serde_json::from_str::<serde_json::Value>(&line)
            .map(|v| v.get("provenance").is_some())
            .unwrap_or(false)
        {
            continue;
        }
        let wire: PromptWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(wire);
    }
    Ok(out)
}
