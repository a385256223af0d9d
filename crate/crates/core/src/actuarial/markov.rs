//! Two-state (alive = 0, dead = 1) transition matrices and their products.

use std::ops::Mul;

use crate::error::{Error, Result};

pub const ALIVE: usize = 0;
pub const DEAD: usize = 1;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic 2x2 matrix with the absorbing row `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionMatrix([[f64; 2]; 2]);

impl TransitionMatrix {
    pub const IDENTITY: TransitionMatrix = TransitionMatrix([[1.0, 0.0], [0.0, 1.0]]);

    /// Builds the matrix from the one-step death probability of the alive state.
    pub fn from_death_prob(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParameter(format!(
                "death probability {q} outside [0, 1]"
            )));
        }
        Ok(TransitionMatrix([[1.0 - q, q], [0.0, 1.0]]))
    }

    /// Builds the matrix from the alive row `(p00, p01)`, e.g. a softmax output.
    pub fn from_alive_row(p00: f64, p01: f64) -> Result<Self> {
        Self::from_rows([[p00, p01], [0.0, 1.0]])
    }

    pub fn from_rows(p: [[f64; 2]; 2]) -> Result<Self> {
        for row in &p {
            if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidParameter(format!(
                    "transition probabilities {row:?} outside [0, 1]"
                )));
            }
            if (row[0] + row[1] - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "row {row:?} does not sum to one"
                )));
            }
        }
        if p[DEAD] != [0.0, 1.0] {
            return Err(Error::InvalidParameter(format!(
                "terminal row must be [0, 1], got {:?}",
                p[DEAD]
            )));
        }
        Ok(TransitionMatrix(p))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    #[inline]
    pub fn p00(&self) -> f64 {
        self.0[ALIVE][ALIVE]
    }

    #[inline]
    pub fn p01(&self) -> f64 {
        self.0[ALIVE][DEAD]
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.0
    }

    /// Whether rows sum to one within `tol`, entries lie in `[0, 1]` up to
    /// the same tolerance, and the terminal row is exactly `[0, 1]`.
    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.0.iter().all(|row| {
            row.iter().all(|x| (-tol..=1.0 + tol).contains(x)) && (row[0] + row[1] - 1.0).abs() <= tol
        }) && self.0[DEAD] == [0.0, 1.0]
    }
}

impl Mul for TransitionMatrix {
    type Output = TransitionMatrix;

    fn mul(self, rhs: TransitionMatrix) -> TransitionMatrix {
        let a = self.0;
        let b = rhs.0;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        TransitionMatrix(out)
    }
}

/// Multi-step transition matrix `M^(start, steps) = prod_{l < steps} pi^(start + l)`.
///
/// The empty product (`steps == 0`) is the identity.
pub fn multi_step(seq: &[TransitionMatrix], start: usize, steps: usize) -> Result<TransitionMatrix> {
    let end = start
        .checked_add(steps)
        .ok_or_else(|| Error::Range("start + steps overflows".into()))?;
    if end > seq.len() {
        return Err(Error::Range(format!(
            "steps {start}..{end} exceed sequence of length {}",
            seq.len()
        )));
    }
    Ok(seq[start..end]
        .iter()
        .fold(TransitionMatrix::IDENTITY, |acc, p| acc * *p))
}
