//! Uniform 1D grid and second-order central difference operators.
//!
//! Boundary nodes stay in the state vector. Their operator rows are zero, so
//! they only move through the affine term.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, L)` with `n_points` nodes `x_i = i * dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub length: f64,
    pub n_points: usize,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidGrid(format!("length {length} must be positive")));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points {n_points} must be a power of two >= 8"
            )));
        }
        Ok(Self {
            length,
            n_points,
            dx: length / n_points as f64,
        })
    }

    /// Unit-length grid.
    pub fn unit(n_points: usize) -> Result<Self> {
        Self::new(1.0, n_points)
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Number of data qubits needed to hold one field.
    pub fn n_qubits(&self) -> usize {
        self.n_points.trailing_zeros() as usize
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_points).map(|i| f(self.x(i))).collect()
    }
}

/// Dirichlet data plus an initial profile.
#[derive(Clone)]
pub struct BoundaryCondition {
    pub u_left: f64,
    pub u_right: f64,
    pub length: f64,
    pub initial: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryCondition")
            .field("u_left", &self.u_left)
            .field("u_right", &self.u_right)
            .field("length", &self.length)
            .finish_non_exhaustive()
    }
}

impl BoundaryCondition {
    /// Checks `u_in(0) = u_l` and `u_in(L) = u_r` to 1e-12.
    pub fn new(
        u_left: f64,
        u_right: f64,
        initial: impl Fn(f64) -> f64 + Send + Sync + 'static,
        length: f64,
    ) -> Result<Self> {
        let l = initial(0.0);
        let r = initial(length);
        if (l - u_left).abs() > 1e-12 || (r - u_right).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "initial profile ({l}, {r}) incompatible with boundary values ({u_left}, {u_right})"
            )));
        }
        Ok(Self {
            u_left,
            u_right,
            length,
            initial: std::sync::Arc::new(initial),
        })
    }

    /// `u(0)=1`, `u(L)=-1`, `u_in = cos(pi x / L)`.
    pub fn burgers(length: f64) -> Self {
        Self::new(1.0, -1.0, move |x| (std::f64::consts::PI * x / length).cos(), length)
            .expect("cosine profile matches its boundary data")
    }

    pub fn initial_at(&self, x: f64) -> f64 {
        (self.initial)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeKind {
    First,
    Second,
}

/// Tridiagonal finite-difference operator with frozen boundary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FdOperator {
    pub kind: DerivativeKind,
    pub n: usize,
    pub lower: f64,
    pub diag: f64,
    pub upper: f64,
}

/// Central first derivative, stencil `(-1, 0, 1) / (2 dx)`.
pub fn build_first_derivative(grid: &Grid1D) -> FdOperator {
    let c = 1.0 / (2.0 * grid.dx);
    FdOperator {
        kind: DerivativeKind::First,
        n: grid.n_points,
        lower: -c,
        diag: 0.0,
        upper: c,
    }
}

/// Central second derivative, stencil `(1, -2, 1) / dx^2`.
pub fn build_second_derivative(grid: &Grid1D) -> FdOperator {
    let c = 1.0 / (grid.dx * grid.dx);
    FdOperator {
        kind: DerivativeKind::Second,
        n: grid.n_points,
        lower: c,
        diag: -2.0 * c,
        upper: c,
    }
}

impl FdOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n);
        out[0] = 0.0;
        out[self.n - 1] = 0.0;
        for i in 1..self.n - 1 {
            out[i] = self.lower * v[i - 1] + self.diag * v[i] + self.upper * v[i + 1];
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            return 0.0;
        }
        if j + 1 == i {
            self.lower
        } else if j == i {
            self.diag
        } else if j == i + 1 {
            self.upper
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }

    pub fn inf_norm(&self) -> f64 {
        if self.n < 3 {
            return 0.0;
        }
        self.lower.abs() + self.diag.abs() + self.upper.abs()
    }
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid1D::unit(4).is_err());
        assert!(Grid1D::unit(12).is_err());
        assert!(Grid1D::new(0.0, 8).is_err());
        let g = Grid1D::unit(32).unwrap();
        assert!((g.dx * 32.0 - 1.0).abs() < 1e-15);
        assert_eq!(g.n_qubits(), 5);
    }

    #[test]
    fn stencil_coefficients_n8() {
        let g = Grid1D::unit(8).unwrap();
        let d2 = build_first_derivative(&g);
        assert_eq!((d2.lower, d2.diag, d2.upper), (-4.0, 0.0, 4.0));
        let d1 = build_second_derivative(&g);
        assert_eq!((d1.lower, d1.diag, d1.upper), (64.0, -128.0, 64.0));
    }

    #[test]
    fn norms() {
        let g = Grid1D::unit(8).unwrap();
        assert_eq!(build_second_derivative(&g).inf_norm(), 256.0);
        assert_eq!(build_first_derivative(&g).inf_norm(), 8.0);
        assert_eq!(inf_norm(&build_second_derivative(&g).to_dense()), 256.0);
        assert_eq!(inf_norm(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn boundary_rows_zero() {
        let g = Grid1D::unit(16).unwrap();
        let m = build_second_derivative(&g).to_dense();
        assert!(m.row(0).iter().all(|&x| x == 0.0));
        assert!(m.row(15).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn annihilates_low_degree() {
        let g = Grid1D::unit(16).unwrap();
        let c = vec![3.5; 16];
        assert!(build_first_derivative(&g).apply(&c).iter().all(|v| v.abs() < 1e-12));
        let lin = g.sample(|x| 2.0 * x - 1.0);
        assert!(build_second_derivative(&g).apply(&lin).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn burgers_bc_is_compatible() {
        let bc = BoundaryCondition::burgers(1.0);
        assert_eq!(bc.initial_at(0.0), 1.0);
        assert!(BoundaryCondition::new(1.0, 1.0, |x| 1.0 - 2.0 * x, 1.0).is_err());
    }
}
