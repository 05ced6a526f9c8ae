//! Text model files (TOML).
//!
//! ```toml
//! format = "flexframe-model"
//! version = 1
//! name = "three masses"
//! units = "mm-Mg-s-N"
//! nodes = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
//!
//! [mass]
//! dense = [ ... ]            # row-major, (3n)² values
//!
//! [stiffness]
//! triplets = [[0, 0, 1.0], [0, 3, -1.0], ...]   # (row, col, value)
//!
//! [modes]                    # optional
//! n_rigid = 6
//! frequencies = [ ... ]      # Hz
//! shapes = [ ... ]           # row-major, 3n × n_modes
//! ```
//!
//! `damping` is an optional third matrix section. Triplets list every
//! stored entry; repeated entries are summed.

use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_modes, ModalBasis, StructuralModel};

pub const FORMAT_TAG: &str = "flexframe-model";
pub const FORMAT_VERSION: u32 = 1;
pub const UNITS_TAG: &str = "mm-Mg-s-N";

/// Fill ratio below which matrices are written as triplets.
const SPARSE_FILL: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    #[serde(default)]
    name: String,
    units: String,
    nodes: Vec<[f64; 3]>,
    mass: MatrixPayload,
    stiffness: MatrixPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    damping: Option<MatrixPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modes: Option<ModesPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    triplets: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModesPayload {
    n_rigid: usize,
    frequencies: Vec<f64>,
    shapes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    pub model: StructuralModel,
    pub basis: Option<ModalBasis>,
    /// True when stored modes failed the orthonormality check and were
    /// recomputed.
    pub modes_recomputed: bool,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn parse_error(source_name: &str, text: &str, e: &toml::de::Error) -> Error {
    let message = match e.span() {
        Some(span) => {
            let (l, c) = line_col(text, span.start);
            format!("line {l}, column {c}: {}", e.message())
        }
        None => e.message().to_string(),
    };
    Error::Parse {
        source_name: source_name.to_string(),
        message,
    }
}

fn decode_matrix(p: &MatrixPayload, what: &'static str, n: usize) -> Result<DMatrix<f64>> {
    match (&p.dense, &p.triplets) {
        (Some(d), None) => {
            if d.len() != n * n {
                return Err(Error::Dimension {
                    what,
                    expected: n * n,
                    found: d.len(),
                });
            }
            Ok(DMatrix::from_row_slice(n, n, d))
        }
        (None, Some(t)) => {
            let mut m = DMatrix::zeros(n, n);
            for &(i, j, v) in t {
                if i >= n || j >= n {
                    return Err(Error::InvalidModel(format!(
                        "{what} triplet ({i}, {j}) outside a {n}×{n} matrix"
                    )));
                }
                m[(i, j)] += v;
            }
            Ok(m)
        }
        _ => Err(Error::InvalidModel(format!(
            "{what} section needs exactly one of `dense` or `triplets`"
        ))),
    }
}

fn encode_matrix(m: &DMatrix<f64>) -> MatrixPayload {
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    if (nnz as f64) < SPARSE_FILL * m.len() as f64 {
        let mut t = Vec::with_capacity(nnz);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        MatrixPayload {
            dense: None,
            triplets: Some(t),
        }
    } else {
        MatrixPayload {
            dense: Some(m.transpose().as_slice().to_vec()),
            triplets: None,
        }
    }
}

/// Parses and validates a model document. `source_name` labels errors.
pub fn parse_model(text: &str, source_name: &str) -> Result<LoadedModel> {
    let doc: ModelDocument = toml::from_str(text).map_err(|e| parse_error(source_name, text, &e))?;
    if doc.format != FORMAT_TAG {
        return Err(Error::Parse {
            source_name: source_name.into(),
            message: format!("format tag is `{}`, expected `{FORMAT_TAG}`", doc.format),
        });
    }
    if doc.version != FORMAT_VERSION {
        return Err(Error::Parse {
            source_name: source_name.into(),
            message: format!("unsupported version {} (this build reads {FORMAT_VERSION})", doc.version),
        });
    }
    if doc.units != UNITS_TAG {
        return Err(Error::Parse {
            source_name: source_name.into(),
            message: format!("units `{}` are not supported; expected `{UNITS_TAG}`", doc.units),
        });
    }
    let n = 3 * doc.nodes.len();
    let coords: Vec<Vector3<f64>> = doc.nodes.iter().map(|p| Vector3::from(*p)).collect();
    let mass = decode_matrix(&doc.mass, "mass", n)?;
    let stiffness = decode_matrix(&doc.stiffness, "stiffness", n)?;
    let damping = doc
        .damping
        .as_ref()
        .map(|p| decode_matrix(p, "damping", n))
        .transpose()?;
    let model = StructuralModel::new(coords, mass, stiffness, damping)?;

    let mut modes_recomputed = false;
    let basis = match &doc.modes {
        None => None,
        Some(mp) => {
            let n_modes = mp.frequencies.len();
            if mp.shapes.len() != n * n_modes {
                return Err(Error::Dimension {
                    what: "mode shapes",
                    expected: n * n_modes,
                    found: mp.shapes.len(),
                });
            }
            let shapes = DMatrix::from_row_slice(n, n_modes, &mp.shapes);
            let basis = ModalBasis::new(&model, shapes, mp.n_rigid, mp.frequencies.clone())?;
            if basis.is_mass_normalized() {
                Some(basis)
            } else {
                log::warn!("{source_name}: stored modes are not mass-orthonormal; recomputing");
                modes_recomputed = true;
                Some(compute_modes(&model, n_modes.saturating_sub(mp.n_rigid))?)
            }
        }
    };
    Ok(LoadedModel {
        name: doc.name,
        model,
        basis,
        modes_recomputed,
    })
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, &path.display().to_string())
}

/// Serializes a model (and optional basis) to a model document.
pub fn model_to_string(model: &StructuralModel, basis: Option<&ModalBasis>, name: &str) -> Result<String> {
    let doc = ModelDocument {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        name: name.into(),
        units: UNITS_TAG.into(),
        nodes: model.node_coords().iter().map(|p| [p.x, p.y, p.z]).collect(),
        mass: encode_matrix(model.mass_matrix()),
        stiffness: encode_matrix(model.stiffness_matrix()),
        damping: model.damping_matrix().map(encode_matrix),
        modes: basis.map(|b| ModesPayload {
            n_rigid: b.n_rigid(),
            frequencies: b.frequencies().to_vec(),
            shapes: b.shapes().transpose().as_slice().to_vec(),
        }),
    };
    toml::to_string(&doc).map_err(|e| Error::Schema(e.to_string()))
}

pub fn save_model(path: &Path, model: &StructuralModel, basis: Option<&ModalBasis>, name: &str) -> Result<()> {
    std::fs::write(path, model_to_string(model, basis, name)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
format = "flexframe-model"
version = 1
name = "three"
units = "mm-Mg-s-N"
nodes = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]

[mass]
triplets = [[0, 0, 1.0], [1, 1, 1.0], [2, 2, 1.0], [3, 3, 1.0], [4, 4, 1.0], [5, 5, 1.0], [6, 6, 1.0], [7, 7, 1.0], [8, 8, 1.0]]

[stiffness]
triplets = [[0, 0, 5.0], [0, 3, -5.0], [3, 0, -5.0], [3, 3, 5.0]]
"#;

    #[test]
    fn minimal_file() {
        let m = parse_model(MINIMAL, "minimal").unwrap();
        assert_eq!(m.model.n_dofs(), 9);
        assert_eq!(m.name, "three");
        assert!(m.basis.is_none());
    }

    #[test]
    fn asymmetric_stiffness_names_entry() {
        let text = MINIMAL.replace("[3, 0, -5.0]", "[3, 0, -5.005]");
        match parse_model(&text, "bad") {
            Err(Error::Asymmetric { matrix, row, col, .. }) => {
                assert_eq!(matrix, "stiffness");
                assert_eq!((row.min(col), row.max(col)), (0, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let text = MINIMAL.replace("version = 1", "version = = 1");
        match parse_model(&text, "broken") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("line 3"), "{message}"),
            other => panic!("{other:?}"),
        }
        assert!(parse_model(&MINIMAL.replace("mm-Mg-s-N", "m-kg-s-N"), "u").is_err());
    }
}
