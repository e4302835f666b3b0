//! Dataset I/O: JSON-Lines records and a minimal CIF subset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Crystal, CrystalMeta, LabeledCrystal, LatticeParams};
use crate::elements;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    id: String,
    atom_types: Vec<usize>,
    frac_coords: Vec<[f64; 3]>,
    lattice: [[f64; 3]; 3],
    #[serde(default)]
    meta: CrystalMeta,
}

impl RecordWire {
    fn into_labeled(self) -> Result<LabeledCrystal> {
        let n = self.frac_coords.len();
        let mut frac = Array2::zeros((n, 3));
        for (i, row) in self.frac_coords.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                frac[[i, j]] = *v;
            }
        }
        let lattice = Array2::from_shape_fn((3, 3), |(i, j)| self.lattice[i][j]);
        Ok(LabeledCrystal {
            id: self.id,
            crystal: Crystal::new(self.atom_types, frac, lattice, self.meta)?,
        })
    }

    fn from_labeled(lc: &LabeledCrystal) -> Self {
        let c = &lc.crystal;
        let frac_coords = c
            .frac_coords()
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let l = c.lattice();
        let lattice = [
            [l[[0, 0]], l[[0, 1]], l[[0, 2]]],
            [l[[1, 0]], l[[1, 1]], l[[1, 2]]],
            [l[[2, 0]], l[[2, 1]], l[[2, 2]]],
        ];
        RecordWire {
            id: lc.id.clone(),
            atom_types: c.atom_types().to_vec(),
            frac_coords,
            lattice,
            meta: c.meta.clone(),
        }
    }
}

/// True if a parsed JSON line is a provenance header rather than a record.
fn is_provenance_line(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .map(|v| v.get("provenance").is_some())
        .unwrap_or(false)
}

/// Read a JSONL dataset. Blank lines and a leading provenance header are
/// skipped; malformed records report their line number.
pub fn read_jsonl_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledCrystal>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() || is_provenance_line(&line) {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(wire.into_labeled().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Write a JSONL dataset, one compact object per line.
pub fn write_jsonl_dataset(path: impl AsRef<Path>, records: &[LabeledCrystal]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for lc in records {
        let wire = RecordWire::from_labeled(lc);
        let line = serde_json::to_string(&wire).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Serialize one labeled crystal to its JSONL line (without newline).
pub fn record_to_json_line(lc: &LabeledCrystal) -> String {
    serde_json::to_string(&RecordWire::from_labeled(lc)).expect("record serialization")
}

/// Parse a minimal CIF subset: cell parameter tags plus one atom-site loop
/// with `_atom_site_type_symbol` and `_atom_site_fract_{x,y,z}` columns.
/// Anything outside that subset that would change the structure's meaning
/// (symmetry-operation loops, cartesian sites, occupancies != 1) is an
/// explicit "unsupported" error.
pub fn parse_cif_min(text: &str) -> Result<Crystal> {
    let mut cell: [Option<f64>; 6] = [None; 6];
    let cell_keys = [
        "_cell_length_a",
        "_cell_length_b",
        "_cell_length_c",
        "_cell_angle_alpha",
        "_cell_angle_beta",
        "_cell_angle_gamma",
    ];
    let unsupported_tags = ["_symmetry_equiv_pos", "_space_group_symop"];

    let mut atom_types: Vec<usize> = Vec::new();
    let mut fracs: Vec<[f64; 3]> = Vec::new();

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("data_") {
            i += 1;
            continue;
        }
        if let Some(tag) = unsupported_tags.iter().find(|t| line.starts_with(**t)) {
            return Err(Error::UnsupportedCif(format!("{tag} (symmetry operations)")));
        }
        if line == "loop_" {
            // Gather the column headers.
            let mut cols: Vec<String> = Vec::new();
            let mut j = i + 1;
            while j < lines.len() && lines[j].trim().starts_with('_') {
                cols.push(lines[j].trim().to_string());
                j += 1;
            }
            if cols.iter().any(|c| unsupported_tags.iter().any(|t| c.starts_with(t))) {
                return Err(Error::UnsupportedCif("symmetry-operations loop".into()));
            }
            if cols.iter().any(|c| c.starts_with("_atom_site_")) {
                if cols.iter().any(|c| c.starts_with("_atom_site_Cartn")) {
                    return Err(Error::UnsupportedCif("cartesian atom sites".into()));
                }
                let col = |name: &str| cols.iter().position(|c| c == name);
                let sym_col = col("_atom_site_type_symbol").ok_or_else(|| {
                    Error::UnsupportedCif("atom-site loop without _atom_site_type_symbol".into())
                })?;
                let fx = col("_atom_site_fract_x");
                let fy = col("_atom_site_fract_y");
                let fz = col("_atom_site_fract_z");
                let (fx, fy, fz) = match (fx, fy, fz) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        return Err(Error::UnsupportedCif(
                            "atom-site loop without fractional coordinates".into(),
                        ))
                    }
                };
                let occ_col = col("_atom_site_occupancy");
                // Consume data rows.
                while j < lines.len() {
                    let row = lines[j].trim();
                    if row.is_empty()
                        || row.starts_with('_')
                        || row.starts_with("loop_")
                        || row.starts_with('#')
                        || row.starts_with("data_")
                    {
                        break;
                    }
                    let fields: Vec<&str> = row.split_whitespace().collect();
                    if fields.len() < cols.len() {
                        return Err(Error::Parse {
                            path: "<cif>".into(),
                            line: j + 1,
                            msg: format!(
                                "atom-site row has {} fields, loop declares {}",
                                fields.len(),
                                cols.len()
                            ),
                        });
                    }
                    if let Some(oc) = occ_col {
                        let occ = parse_cif_number(fields[oc], j + 1)?;
                        if (occ - 1.0).abs() > 1e-6 {
                            return Err(Error::UnsupportedCif(format!(
                                "partial occupancy {occ}"
                            )));
                        }
                    }
                    let label = element_label_from_cif_symbol(fields[sym_col], j + 1)?;
                    let x = parse_cif_number(fields[fx], j + 1)?;
                    let y = parse_cif_number(fields[fy], j + 1)?;
                    let z = parse_cif_number(fields[fz], j + 1)?;
                    atom_types.push(label);
                    fracs.push([x, y, z]);
                    j += 1;
                }
            } else {
                // Skip an unrelated loop's data rows.
                while j < lines.len() {
                    let row = lines[j].trim();
                    if row.is_empty()
                        || row.starts_with('_')
                        || row.starts_with("loop_")
                        || row.starts_with("data_")
                    {
                        break;
                    }
                    j += 1;
                }
            }
            i = j;
            continue;
        }
        if line.starts_with('_') {
            let mut parts = line.splitn(2, char::is_whitespace);
            let tag = parts.next().unwrap_or_default();
            if let Some(k) = cell_keys.iter().position(|&t| t == tag) {
                let value = parts
                    .next()
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::Parse {
                        path: "<cif>".into(),
                        line: i + 1,
                        msg: format!("missing value for {tag}"),
                    })?;
                cell[k] = Some(parse_cif_number(value, i + 1)?);
            }
            // Other scalar tags carry no structural information; ignore.
            i += 1;
            continue;
        }
        i += 1;
    }

    let vals: Vec<f64> = cell
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.ok_or_else(|| Error::Parse {
                path: "<cif>".into(),
                line: 0,
                msg: format!("missing {}", cell_keys[k]),
            })
        })
        .collect::<Result<_>>()?;
    if atom_types.is_empty() {
        return Err(Error::Parse {
            path: "<cif>".into(),
            line: 0,
            msg: "no atom-site loop found".into(),
        });
    }
    let params = LatticeParams::new(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]);
    let lattice = super::lattice_from_params(&params)?;
    let n = atom_types.len();
    let mut frac = Array2::zeros((n, 3));
    for (i, row) in fracs.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            frac[[i, j]] = *v;
        }
    }
    Crystal::new(atom_types, frac, lattice, CrystalMeta::default())
}

/// CIF numbers may carry an uncertainty suffix: `0.391(6)` means 0.3916.
fn parse_cif_number(s: &str, line: usize) -> Result<f64> {
    let merged: String = if let Some(open) = s.find('(') {
        if !s.ends_with(')') {
            return Err(Error::Parse {
                path: "<cif>".into(),
                line,
                msg: format!("malformed number {s:?}"),
            });
        }
        format!("{}{}", &s[..open], &s[open + 1..s.len() - 1])
    } else {
        s.to_string()
    };
    merged.parse::<f64>().map_err(|_| Error::Parse {
        path: "<cif>".into(),
        line,
        msg: format!("malformed number {s:?}"),
    })
}

/// Extract the element from a type symbol like `Ba`, `Fe3+` or `O2-`.
fn element_label_from_cif_symbol(sym: &str, line: usize) -> Result<usize> {
    let base: String = sym
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    elements::label_for_symbol(&base).ok_or_else(|| Error::Parse {
        path: "<cif>".into(),
        line,
        msg: format!("unknown element symbol {sym:?}"),
    })
}
