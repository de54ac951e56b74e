//! JSON round-tripping of map representations.
//!
//! A fixture carries either a Kraus family or a superoperator matrix, with
//! complex entries as `[re, im]` pairs in row-major nesting:
//!
//! ```json
//! {"dim": 2, "kraus": [[[[1,0],[0,0]],[[0,0],[0.5,0]]]]}
//! {"dim": 2, "superop": [[[1,0], ...sixteen columns...], ...]}
//! ```
//!
//! Exactly one of the two fields must be present.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MapForm, PositiveMap};
use crate::error::Error;
use crate::Result;

/// Serializable map representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFixture {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kraus: Option<Vec<Vec<Vec<[f64; 2]>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superop: Option<Vec<Vec<[f64; 2]>>>,
}

impl MapFixture {
    /// Builds the map, validating shapes against `dim`.
    pub fn resolve(&self) -> Result<PositiveMap> {
        match (&self.kraus, &self.superop) {
            (Some(kraus), None) => {
                let ops = kraus
                    .iter()
                    .map(|rows| read_matrix(rows, self.dim))
                    .collect::<Result<Vec<_>>>()?;
                PositiveMap::kraus(ops)
            }
            (None, Some(rows)) => {
                let side = self.dim * self.dim;
                PositiveMap::superop(read_matrix(rows, side)?)
            }
            _ => Err(Error::InvalidMap(
                "fixture must have exactly one of `kraus` or `superop`".into(),
            )),
        }
    }

    /// Fixture for an existing map.
    pub fn from_map(map: &PositiveMap) -> Self {
        let dim = map.dim();
        match map.form() {
            MapForm::Kraus(ops) => Self {
                dim,
                kraus: Some(ops.iter().map(write_matrix).collect()),
                superop: None,
            },
            MapForm::Superop(s) => Self {
                dim,
                kraus: None,
                superop: Some(write_matrix(s)),
            },
        }
    }
}

fn read_matrix(rows: &[Vec<[f64; 2]>], side: usize) -> Result<DMatrix<Complex64>> {
    if rows.len() != side || rows.iter().any(|r| r.len() != side) {
        return Err(Error::InvalidMap(format!(
            "matrix must be {side} x {side}, found {} rows of lengths {:?}",
            rows.len(),
            rows.iter().map(|r| r.len()).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(side, side, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

fn write_matrix(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

/// Parses a fixture from JSON text and resolves it.
pub fn from_json(text: &str) -> Result<PositiveMap> {
    let fixture: MapFixture = serde_json::from_str(text)
        .map_err(|e| Error::InvalidMap(format!("fixture JSON: {e}")))?;
    fixture.resolve()
}
