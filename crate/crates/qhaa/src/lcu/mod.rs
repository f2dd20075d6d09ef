//! Statevector emulation of the LCU time-marching circuits.
//!
//! A real step operator `J` is applied as `(1/2e) sum_c U_c ~ J` through
//! Hadamard-prepared ancillas and post-selection on the all-zero ancilla
//! pattern. C=2 works on the hermitian dilation of `J`, C=4 on its
//! symmetric/antisymmetric split.

mod circuit;
mod register;
mod shots;

pub use circuit::{
    run_oneshot_emulated, run_tmcqc2, ComplexityReport, EmulationConfig, EmulationRun, GateInputs, OneShotRun, Readout,
    StepRecord,
};
pub use register::{apply_lcu_once, Controls, RegisterLayout, Statevector, QUBIT_CAP};
pub use shots::{sample_shots, write_shots_csv, ShotResult};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::inf_norm;

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LcuMode {
    /// Two unitaries on the hermitian dilation.
    #[default]
    Dilated,
    /// Four unitaries from the symmetric/antisymmetric split.
    Split,
}

impl LcuMode {
    pub fn n_unitaries(self) -> usize {
        match self {
            LcuMode::Dilated => 2,
            LcuMode::Split => 4,
        }
    }

    pub fn from_count(c: usize) -> Result<Self> {
        match c {
            2 => Ok(LcuMode::Dilated),
            4 => Ok(LcuMode::Split),
            _ => Err(Error::InvalidArgument(format!("C must be 2 or 4, got {c}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LcuDecomposition {
    pub mode: LcuMode,
    pub epsilon: f64,
    pub delta: f64,
    pub unitaries: Vec<CMatrix>,
    /// All equal to `1/(2 epsilon)`.
    pub weights: Vec<f64>,
    pub beta: f64,
    /// Unscaled target.
    pub target: DMatrix<f64>,
    /// Dilation of `delta * target` (C=2 only).
    pub dilated: Option<DMatrix<f64>>,
}

impl LcuDecomposition {
    /// Dimension the unitaries act on.
    pub fn dim(&self) -> usize {
        self.unitaries[0].nrows()
    }

    /// `(1/2e) sum_c U_c`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (u, w) in self.unitaries.iter().zip(&self.weights) {
            m += u * Complex64::new(*w, 0.0);
        }
        m
    }

    /// The matrix the reconstruction approximates: `delta*J` or its dilation.
    pub fn scaled_target(&self) -> DMatrix<f64> {
        match &self.dilated {
            Some(d) => d.clone(),
            None => &self.target * self.delta,
        }
    }

    /// Factor between the ancilla-zero branch and `reconstruct() * input`.
    pub fn branch_factor(&self) -> f64 {
        2.0 * self.epsilon / self.mode.n_unitaries() as f64
    }

    /// Two-unitary decomposition of a hermitian matrix given directly.
    pub fn from_hermitian(h: &DMatrix<f64>, epsilon: f64) -> Result<Self> {
        check_square(h)?;
        check_eps(epsilon)?;
        let (u0, u1) = sine_pair(h, epsilon);
        Ok(LcuDecomposition {
            mode: LcuMode::Dilated,
            epsilon,
            delta: 1.0,
            unitaries: vec![u0, u1],
            weights: vec![0.5 / epsilon; 2],
            beta: 1.0 / epsilon,
            target: h.clone(),
            dilated: Some(h.clone()),
        })
    }
}

fn check_square(j: &DMatrix<f64>) -> Result<()> {
    if j.nrows() != j.ncols() {
        return Err(Error::DimensionMismatch {
            expected: j.nrows(),
            got: j.ncols(),
        });
    }
    Ok(())
}

fn check_eps(e: f64) -> Result<()> {
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon {e} must be > 0")));
    }
    Ok(())
}

pub fn split_symmetric(j: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_square(j)?;
    let t = j.transpose();
    Ok(((j + &t) * 0.5, (j - &t) * 0.5))
}

/// `[[0, J], [J^T, 0]]`.
pub fn dilate(j: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = j.shape();
    let mut d = DMatrix::zeros(r + c, r + c);
    d.view_mut((0, r), (r, c)).copy_from(j);
    d.view_mut((r, 0), (c, r)).copy_from(&j.transpose());
    d
}

/// Input vector for the dilated operator: `[0, b]`.
pub fn pad_for_dilation(b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut v = DVector::zeros(2 * n);
    v.rows_mut(n, n).copy_from(b);
    v
}

/// `exp(-i t H)` for real symmetric `H`.
fn exp_i_sym(h: &DMatrix<f64>, t: f64) -> CMatrix {
    let eig = h.clone().symmetric_eigen();
    let q = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let d = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| (-I * t * l).exp()));
    &q * d * q.adjoint()
}

/// `exp(t A)` for real antisymmetric `A`, through the hermitian `iA`.
fn exp_antisym(a: &DMatrix<f64>, t: f64) -> CMatrix {
    let h = a.map(|x| I * x);
    let eig = h.symmetric_eigen();
    let q = eig.eigenvectors;
    // tA = -i t (iA)
    let d = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| (-I * t * l).exp()));
    &q * d * q.adjoint()
}

/// `(i e^{-ieH}, -i e^{ieH})`, whose sum is `2 sin(eH)`.
fn sine_pair(h: &DMatrix<f64>, e: f64) -> (CMatrix, CMatrix) {
    let m = exp_i_sym(h, e);
    let p = m.adjoint();
    (m * I, p * (-I))
}

pub fn build_unitaries(j: &DMatrix<f64>, epsilon: f64, delta: f64, mode: LcuMode) -> Result<LcuDecomposition> {
    check_square(j)?;
    check_eps(epsilon)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be > 0")));
    }
    let scaled = j * delta;
    let c = mode.n_unitaries();
    let (unitaries, dilated) = match mode {
        LcuMode::Dilated => {
            let d = dilate(&scaled);
            let (u0, u1) = sine_pair(&d, epsilon);
            (vec![u0, u1], Some(d))
        }
        LcuMode::Split => {
            let (s, a) = split_symmetric(&scaled)?;
            let (u0, u1) = sine_pair(&s, epsilon);
            let u2 = exp_antisym(&a, epsilon);
            let u3 = exp_antisym(&a, -epsilon) * Complex64::new(-1.0, 0.0);
            (vec![u0, u1, u2, u3], None)
        }
    };
    Ok(LcuDecomposition {
        mode,
        epsilon,
        delta,
        unitaries,
        weights: vec![0.5 / epsilon; c],
        beta: c as f64 * 0.5 / epsilon,
        target: j.clone(),
        dilated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaChoice {
    pub delta: f64,
    /// `epsilon * delta * ||J||_inf`.
    pub q: f64,
    /// `1/q`.
    pub eta: f64,
    pub q_at_least_one: bool,
}

/// Keep `delta ||J|| < 1` with a 1e-3 margin, `delta <= 1/epsilon`, and
/// maximize `Q` under those.
pub fn choose_delta(j: &DMatrix<f64>, epsilon: f64) -> Result<DeltaChoice> {
    check_eps(epsilon)?;
    let n = inf_norm(j);
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("||J|| must be > 0".into()));
    }
    let delta = (0.999 / n).min(1.0 / epsilon);
    let q = epsilon * delta * n;
    Ok(DeltaChoice {
        delta,
        q,
        eta: 1.0 / q,
        q_at_least_one: q >= 1.0,
    })
}

/// `(R1 - g^2 R2) / (1 - g^2)`, `g = e1/e2`.
pub fn richardson(r1: &[f64], r2: &[f64], e1: f64, e2: f64) -> Result<Vec<f64>> {
    if r1.len() != r2.len() {
        return Err(Error::DimensionMismatch {
            expected: r1.len(),
            got: r2.len(),
        });
    }
    if e1 == e2 {
        return Err(Error::DegenerateEpsilons);
    }
    if !(e1 > e2 && e2 > 0.0) {
        return Err(Error::InvalidArgument(format!("need e1 > e2 > 0, got {e1}, {e2}")));
    }
    let g2 = (e1 / e2).powi(2);
    Ok(r1.iter().zip(r2).map(|(a, b)| (a - g2 * b) / (1.0 - g2)).collect())
}

pub fn richardson_scalar(r1: f64, r2: f64, e1: f64, e2: f64) -> Result<f64> {
    Ok(richardson(&[r1], &[r2], e1, e2)?[0])
}

/// Order estimate `(s e + 1)(log2 N + log2^2.5(e/eU)) log2(e/eU)`.
pub fn gate_estimate(s: f64, epsilon: f64, n: f64, eps_u: f64) -> Result<f64> {
    if !(s > 0.0 && epsilon > 0.0 && n > 0.0 && eps_u > 0.0) {
        return Err(Error::InvalidArgument("gate_estimate inputs must be positive".into()));
    }
    if eps_u >= epsilon {
        return Err(Error::InvalidArgument(format!("eps_U {eps_u} must be < epsilon {epsilon}")));
    }
    let l = (epsilon / eps_u).log2();
    Ok((s * epsilon + 1.0) * (n.log2() + l.powf(2.5)) * l)
}

/// Largest number of nonzeros in a row.
pub fn sparsity(m: &DMatrix<f64>) -> usize {
    m.row_iter().map(|r| r.iter().filter(|x| **x != 0.0).count()).max().unwrap_or(0)
}
