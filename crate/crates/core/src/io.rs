//! JSON file formats.
//!
//! A matrix is stored as `{"rows": r, "cols": c, "data": [...]}` with `data`
//! in row-major order. A model is an object with the matrices `a_hat`,
//! `c_hat` and the optional `b_hat`, `b` (target input matrix) and `c`
//! (target output matrix).
//!
//! The `parse_*` functions are the entry points for untrusted input. They
//! never panic; every malformed document becomes an [`Error::Parse`] or a
//! dimension error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// Upper bound on `rows * cols` accepted from a file.
pub const MAX_MATRIX_ENTRIES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect();
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        let expected = self
            .rows
            .checked_mul(self.cols)
            .filter(|&len| len <= MAX_MATRIX_ENTRIES)
            .ok_or_else(|| {
                Error::Parse(format!("matrix {}x{} is too large", self.rows, self.cols))
            })?;
        if expected != self.data.len() {
            return Err(Error::Parse(format!(
                "matrix declares {}x{} but has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse("matrix has non-finite entries".into()));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// `#[serde(with = ...)]` adapter storing a `DMatrix` as [`MatrixJson`].
pub mod matrix_serde {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        MatrixJson::deserialize(d)?
            .into_matrix()
            .map_err(D::Error::custom)
    }
}

/// Optional variant of [`matrix_serde`].
pub mod option_matrix_serde {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(MatrixJson::from_matrix).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<MatrixJson>::deserialize(d)?
            .map(|m| m.into_matrix().map_err(D::Error::custom))
            .transpose()
    }
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    serde_json::from_str::<MatrixJson>(text)?.into_matrix()
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> String {
    serde_json::to_string_pretty(&MatrixJson::from_matrix(m)).expect("matrix serializes")
}

#[derive(Debug, Deserialize)]
struct ModelJson {
    a_hat: MatrixJson,
    #[serde(default)]
    b_hat: Option<MatrixJson>,
    c_hat: MatrixJson,
    #[serde(default, alias = "b_target")]
    b: Option<MatrixJson>,
    #[serde(default, alias = "c_target")]
    c: Option<MatrixJson>,
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<StateSpaceModel> {
    let raw: ModelJson = serde_json::from_str(text)?;
    let opt = |m: Option<MatrixJson>| m.map(MatrixJson::into_matrix).transpose();
    StateSpaceModel::new(
        raw.a_hat.into_matrix()?,
        opt(raw.b_hat)?,
        raw.c_hat.into_matrix()?,
        opt(raw.b)?,
        opt(raw.c)?,
    )
}

pub fn model_to_json(model: &StateSpaceModel) -> String {
    serde_json::to_string_pretty(model).expect("model serializes")
}

/// An `S` matrix pulled out of one of the documents the tools write, plus
/// the output matrix when the document carries one.
#[derive(Debug, Clone)]
pub struct SDocument {
    pub s: DMatrix<f64>,
    pub c_target: Option<DMatrix<f64>>,
}

/// Extracts an admittance matrix from a bare matrix document, a
/// realization (`"s"`), or a generated instance (`"s_true"`).
pub fn parse_s_document(text: &str) -> Result<SDocument> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("expected a JSON object".into()))?;
    let matrix_at = |key: &str| -> Result<Option<DMatrix<f64>>> {
        obj.get(key)
            .map(|v| serde_json::from_value::<MatrixJson>(v.clone())?.into_matrix())
            .transpose()
    };
    let s = if obj.contains_key("data") {
        serde_json::from_value::<MatrixJson>(value.clone())?.into_matrix()?
    } else if let Some(s) = matrix_at("s")? {
        s
    } else if let Some(s) = matrix_at("s_true")? {
        s
    } else {
        return Err(Error::Parse(
            "document has no \"s\", \"s_true\" or matrix data".into(),
        ));
    };
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "S must be square, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let c_target = match matrix_at("c_target")? {
        Some(c) => Some(c),
        None => matrix_at("c")?,
    };
    if let Some(c) = &c_target {
        if c.ncols() != s.nrows() {
            return Err(Error::Dimension("output matrix does not match S".into()));
        }
    }
    Ok(SDocument { s, c_target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = matrix_to_json(&m);
        assert!(text
            .replace([' ', '\n'], "")
            .contains("[1.0,2.0,3.0,4.0,5.0,6.0]"));
        assert_eq!(parse_matrix(&text).unwrap(), m);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(parse_matrix("{").is_err());
        assert!(parse_matrix(r#"{"rows":2,"cols":2,"data":[1,2,3]}"#).is_err());
        assert!(parse_matrix(r#"{"rows":18446744073709551615,"cols":2,"data":[]}"#).is_err());
        assert!(parse_model(
            r#"{"a_hat":{"rows":2,"cols":1,"data":[1,2]},"c_hat":{"rows":0,"cols":2,"data":[]}}"#
        )
        .is_err());
    }

    #[test]
    fn model_round_trip() {
        let text = r#"{"a_hat":{"rows":2,"cols":2,"data":[-1,0,0,-2]},
                       "c_hat":{"rows":1,"cols":2,"data":[1,1]},
                       "c":{"rows":1,"cols":2,"data":[1,0]}}"#;
        let model = parse_model(text).unwrap();
        assert!(model.c_target.is_some() && model.b_target.is_none());
        let again = parse_model(&model_to_json(&model)).unwrap();
        assert_eq!(again.a_hat, model.a_hat);
        assert_eq!(again.c_target, model.c_target);
    }

    #[test]
    fn s_document_variants() {
        let bare = r#"{"rows":1,"cols":1,"data":[-1]}"#;
        assert_eq!(parse_s_document(bare).unwrap().s[(0, 0)], -1.0);
        let real = r#"{"s":{"rows":1,"cols":1,"data":[-2]},"c":{"rows":1,"cols":1,"data":[1]}}"#;
        let doc = parse_s_document(real).unwrap();
        assert_eq!(doc.s[(0, 0)], -2.0);
        assert!(doc.c_target.is_some());
        assert!(parse_s_document("[]").is_err());
    }
}
