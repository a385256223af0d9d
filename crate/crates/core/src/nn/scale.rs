use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature min-max scaling to `[0, 1]`.
///
/// Constant features map to 0. Values outside the fitted range are not
/// clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on rows of equal width.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        let mut seen = false;
        for row in rows {
            if !seen {
                min = row.to_vec();
                max = row.to_vec();
                seen = true;
                continue;
            }
            if row.len() != min.len() {
                return Err(Error::Shape(format!(
                    "row of width {} among rows of width {}",
                    row.len(),
                    min.len()
                )));
            }
            for (j, &x) in row.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        if !seen {
            return Err(Error::InvalidParameter("cannot fit a scaler on no data".into()));
        }
        if min.iter().chain(&max).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn transform_value(&self, j: usize, x: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            (x - self.min[j]) / span
        } else {
            0.0
        }
    }

    pub fn transform_in_place(&self, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.width());
        for (j, x) in row.iter_mut().enumerate() {
            *x = self.transform_value(j, *x);
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.transform_in_place(&mut out);
        out
    }

    /// Inverse map; constant features return their fitted value.
    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &z)| self.min[j] + z * (self.max[j] - self.min[j]))
            .collect()
    }

    /// Stable textual digest used to detect mismatched scalers.
    pub fn fingerprint(&self) -> String {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| format!("{a:e}:{b:e}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}
