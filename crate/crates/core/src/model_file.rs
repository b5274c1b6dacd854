//! JSON model files.
//!
//! ```json
//! {"fermi": {"k": 2, "m": 2, "beta": 1.0, "v": [0, 1], "n": [2, 2]}}
//! {"custom": {"k": 2, "m": 2, "phi": [[0, -0.5, "-inf"], [0, 0.1, -1]]}}
//! ```
//!
//! Custom tables list `phi_j(0..=k)`; `"-inf"` marks zero weight. Unknown
//! keys are rejected.

use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{build_custom_raw, build_fermi, FermiSpec, ModelSpec};
use crate::scalar::Real;

/// Explicit potential tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub k: usize,
    pub m: usize,
    #[serde(serialize_with = "ser_tables", deserialize_with = "de_tables")]
    pub phi: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelFile {
    Fermi(FermiSpec),
    Custom(CustomSpec),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Entry {
    Num(f64),
    Token(String),
}

fn de_tables<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let raw: Vec<Vec<Entry>> = Vec::deserialize(d)?;
    raw.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|e| match e {
                    Entry::Num(x) => Ok(x),
                    Entry::Token(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
                    Entry::Token(t) => Err(de::Error::custom(format!("unexpected token {t:?} (only \"-inf\")"))),
                })
                .collect()
        })
        .collect()
}

struct Row<'a>(&'a [f64]);

impl Serialize for Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for &x in self.0 {
            if x == f64::NEG_INFINITY {
                seq.serialize_element("-inf")?;
            } else {
                seq.serialize_element(&x)?;
            }
        }
        seq.end()
    }
}

fn ser_tables<S: Serializer>(t: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(t.len()))?;
    for row in t {
        seq.serialize_element(&Row(row))?;
    }
    seq.end()
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::ModelFile(msg) => Error::ModelFile(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn build<T: Real>(&self) -> Result<ModelSpec<T>> {
        match self {
            Self::Fermi(spec) => build_fermi(spec),
            Self::Custom(c) => {
                if c.phi.len() != c.m {
                    return Err(Error::ModelFile(format!("m = {} but {} phi tables given", c.m, c.phi.len())));
                }
                let tables: Vec<Vec<T>> = c.phi.iter().map(|r| r.iter().map(|&x| T::of(x)).collect()).collect();
                build_custom_raw(c.k, &tables)
            }
        }
    }

    /// Reconstructs the file describing `model`.
    pub fn from_model<T: Real>(model: &ModelSpec<T>) -> Self {
        match model.fermi() {
            Some(spec) => Self::Fermi(spec.clone()),
            None => Self::Custom(CustomSpec {
                k: model.k(),
                m: model.m(),
                phi: model
                    .potentials()
                    .iter()
                    .map(|p| p.table().iter().map(|x| x.value().as_f64()).collect())
                    .collect(),
            }),
        }
    }

    /// Compact JSON with a fixed key order; the input to model hashes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("model files always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fermi_round_trip() {
        let f = ModelFile::parse(r#"{"fermi": {"k": 2, "m": 2, "beta": 1.0, "v": [0, 1], "n": [2, 2]}}"#).unwrap();
        let model: ModelSpec<f64> = f.build().unwrap();
        assert_eq!(model.delta(), 1.0);
        let again = ModelFile::parse(&f.canonical_json()).unwrap();
        assert_eq!(again, f);
        assert_eq!(ModelFile::from_model(&model), f);
    }

    #[test]
    fn custom_with_neg_inf() {
        let f = ModelFile::parse(r#"{"custom": {"k": 2, "m": 2, "phi": [[0, -0.5, "-inf"], [0, -0.1, -1]]}}"#).unwrap();
        let model: ModelSpec<f64> = f.build().unwrap();
        assert_eq!(model.potentials()[0].support(), (0, 1));
        let json = f.canonical_json();
        assert!(json.contains("\"-inf\""));
        assert_eq!(ModelFile::parse(&json).unwrap(), f);
        assert_eq!(ModelFile::from_model(&model), f);
    }

    #[test]
    fn rejects_unknown_keys_and_tokens() {
        let bad = [
            r#"{"fermi": {"k": 2, "m": 2, "beta": 1.0, "v": [0, 1], "n": [2, 2], "x": 1}}"#,
            r#"{"custom": {"k": 1, "m": 1, "phi": [[0, "inf"]]}}"#,
            r#"{"other": {}}"#,
            r#"{"custom": {"k": 1, "m": 1, "phi": [[0, 0]], "extra": true}}"#,
        ];
        for b in bad {
            assert!(matches!(ModelFile::parse(b), Err(Error::ModelFile(_))), "{b}");
        }
        let f = ModelFile::parse(r#"{"custom": {"k": 1, "m": 2, "phi": [[0, 0]]}}"#).unwrap();
        assert!(f.build::<f64>().is_err());
    }
}
