use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::is_finite;

/// An identified model `(A_hat, B_hat, C_hat)` together with the structural
/// input and output matrices the realization must reproduce.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpaceModel {
    #[serde(with = "crate::io::matrix_serde")]
    pub a_hat: DMatrix<f64>,
    #[serde(
        default,
        with = "crate::io::option_matrix_serde",
        skip_serializing_if = "Option::is_none"
    )]
    pub b_hat: Option<DMatrix<f64>>,
    #[serde(with = "crate::io::matrix_serde")]
    pub c_hat: DMatrix<f64>,
    #[serde(
        default,
        rename = "b",
        with = "crate::io::option_matrix_serde",
        skip_serializing_if = "Option::is_none"
    )]
    pub b_target: Option<DMatrix<f64>>,
    #[serde(
        default,
        rename = "c",
        with = "crate::io::option_matrix_serde",
        skip_serializing_if = "Option::is_none"
    )]
    pub c_target: Option<DMatrix<f64>>,
}

impl StateSpaceModel {
    pub fn new(
        a_hat: DMatrix<f64>,
        b_hat: Option<DMatrix<f64>>,
        c_hat: DMatrix<f64>,
        b_target: Option<DMatrix<f64>>,
        c_target: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let model = StateSpaceModel {
            a_hat,
            b_hat,
            c_hat,
            b_target,
            c_target,
        };
        model.validate()?;
        Ok(model)
    }

    /// Autonomous model with an output constraint only.
    pub fn with_output(
        a_hat: DMatrix<f64>,
        c_hat: DMatrix<f64>,
        c_target: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(a_hat, None, c_hat, None, Some(c_target))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a_hat.nrows();
        if n == 0 || !self.a_hat.is_square() {
            return Err(Error::Dimension(format!(
                "A_hat must be a non-empty square matrix, got {}x{}",
                self.a_hat.nrows(),
                self.a_hat.ncols()
            )));
        }
        if self.c_hat.ncols() != n {
            return Err(Error::Dimension(format!("C_hat must have {n} columns")));
        }
        if let Some(c) = &self.c_target {
            if c.shape() != self.c_hat.shape() {
                return Err(Error::Dimension(format!(
                    "C ({}x{}) and C_hat ({}x{}) differ in shape",
                    c.nrows(),
                    c.ncols(),
                    self.c_hat.nrows(),
                    self.c_hat.ncols()
                )));
            }
        }
        if let Some(b) = &self.b_hat {
            if b.nrows() != n {
                return Err(Error::Dimension(format!("B_hat must have {n} rows")));
            }
        }
        match (&self.b_hat, &self.b_target) {
            (Some(bh), Some(b)) if bh.shape() != b.shape() => {
                return Err(Error::Dimension("B and B_hat differ in shape".into()));
            }
            (None, Some(_)) => {
                return Err(Error::Dimension("target B given without B_hat".into()));
            }
            _ => {}
        }
        let all = [
            Some(&self.a_hat),
            self.b_hat.as_ref(),
            Some(&self.c_hat),
            self.b_target.as_ref(),
            self.c_target.as_ref(),
        ];
        if all.iter().flatten().any(|m| !is_finite(m)) {
            return Err(Error::InvalidInput("model has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `C_hat T = C` is enforced.
    pub fn has_output_constraint(&self) -> bool {
        self.c_target.is_some() && self.c_hat.nrows() > 0
    }

    /// `T^-1 B_hat = G^-1 B` is enforced.
    pub fn has_input_constraint(&self) -> bool {
        matches!((&self.b_hat, &self.b_target), (Some(b), Some(_)) if b.ncols() > 0)
    }

    /// Copy with the structural constraints switched off as requested.
    pub fn restricted(&self, keep_input: bool, keep_output: bool) -> Self {
        let mut out = self.clone();
        if !keep_input {
            out.b_target = None;
        }
        if !keep_output {
            out.c_target = None;
        }
        out
    }

    /// Zero-based indices of the nodes that the output matrix observes.
    pub fn measured_nodes(&self) -> Vec<bool> {
        measured_from_output(self.c_target.as_ref(), self.n())
    }
}

/// A node counts as measured when its column of `C` is nonzero. Without an
/// output matrix every node is treated as measured.
pub fn measured_from_output(c: Option<&DMatrix<f64>>, n: usize) -> Vec<bool> {
    match c {
        Some(c) => (0..n)
            .map(|j| j < c.ncols() && c.column(j).iter().any(|x| *x != 0.0))
            .collect(),
        None => vec![true; n],
    }
}
