//! Spatial grid, the semidiscrete operator and its norm diagnostics.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance on interior row sums of the operator.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Uniform partition `x_i = i h`, `0 <= i <= N`, of `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    length: f64,
    n: usize,
    h: f64,
}

impl Grid1D {
    /// Grid with `n` subintervals. Grids with fewer than three subintervals
    /// have no interior structure and are rejected.
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 subintervals, got {n}"
            )));
        }
        Ok(Grid1D {
            length,
            n,
            h: length / n as f64,
        })
    }

    /// Grid with step `h`; `length / h` must be an integer up to roundoff.
    pub fn from_step(length: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {h}")));
        }
        let ratio = length / h;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "length {length} is not an integer multiple of h = {h}"
            )));
        }
        Self::new(length, n as usize)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of subintervals `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.length
        } else {
            i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(|i| self.node(i))
    }

    /// Dimension of the state vector, `N + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }
}

/// Tridiagonal operator with zero first and last rows, stored as bands.
///
/// `sub[i]`, `diag[i]` and `sup[i]` are the entries `(i, i-1)`, `(i, i)` and
/// `(i, i+1)`; they are zero for `i = 0` and `i = N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl SystemMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for i in 1..dim - 1 {
            m[(i, i - 1)] = self.sub[i];
            m[(i, i)] = self.diag[i];
            m[(i, i + 1)] = self.sup[i];
        }
        m
    }

    /// Largest interior row sum relative to the diagonal magnitude.
    pub fn max_relative_row_sum(&self) -> f64 {
        (1..self.dim() - 1)
            .map(|i| (self.sub[i] + self.diag[i] + self.sup[i]).abs() / self.diag[i].abs())
            .fold(0.0, f64::max)
    }
}

/// Central-difference discretization of `D u_xx + B u_x` on the interior
/// nodes, with the boundary rows left at zero.
pub fn build_system_matrix(
    grid: &Grid1D,
    diffusion: impl Fn(f64) -> f64,
    advection: impl Fn(f64) -> f64,
) -> Result<SystemMatrix> {
    let dim = grid.dim();
    let h = grid.h();
    let inv_h2 = 1.0 / (h * h);
    let mut sub = vec![0.0; dim];
    let mut diag = vec![0.0; dim];
    let mut sup = vec![0.0; dim];
    for i in 1..dim - 1 {
        let x = grid.node(i);
        let d = diffusion(x);
        let b = advection(x);
        if !d.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(format!("coefficient at x = {x}")));
        }
        if d <= 0.0 {
            return Err(Error::NonPositiveDiffusion { node: i, value: d });
        }
        sub[i] = (d - 0.5 * b * h) * inv_h2;
        diag[i] = -2.0 * d * inv_h2;
        sup[i] = (d + 0.5 * b * h) * inv_h2;
    }
    Ok(SystemMatrix { sub, diag, sup })
}

/// True iff every off-diagonal entry is nonnegative.
pub fn is_metzler(m: &SystemMatrix) -> bool {
    (1..m.dim() - 1).all(|i| m.sub[i] >= 0.0 && m.sup[i] >= 0.0)
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Logarithmic infinity norm: `max_i (a_ii + sum_{j != i} |a_ij|)`.
pub fn log_norm_inf(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "logarithmic norm needs a square matrix");
    (0..a.nrows())
        .map(|i| {
            let off: f64 = (0..a.ncols())
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs())
                .sum();
            a[(i, i)] + off
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
