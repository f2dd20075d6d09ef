//! Classical integrators for `dv/dt = A v + b` and the matrix diagnostics
//! that go with them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{inf_norm, Grid1D};

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    ExplicitIterative,
    ImplicitIterative,
    ExplicitOneshot,
    ImplicitOneshot,
}

impl SchemeKind {
    pub fn is_explicit(self) -> bool {
        matches!(self, SchemeKind::ExplicitIterative | SchemeKind::ExplicitOneshot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub tau: usize,
    /// Fraction of the stability bound allowed for explicit schemes.
    pub zeta: f64,
    pub neumann_p: usize,
    /// One-shot padding; `None` means `tau`.
    pub padding_c: Option<usize>,
}

impl SchemeConfig {
    pub fn new(scheme: SchemeKind, dt: f64, tau: usize) -> Result<Self> {
        let c = Self {
            scheme,
            dt,
            tau,
            zeta: 0.5,
            neumann_p: 20,
            padding_c: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt {} must be > 0", self.dt)));
        }
        if self.tau == 0 {
            return Err(Error::InvalidArgument("tau must be >= 1".into()));
        }
        if self.neumann_p == 0 {
            return Err(Error::InvalidArgument("Neumann order must be >= 1".into()));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::InvalidArgument("zeta must be > 0".into()));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.padding_c.unwrap_or(self.tau)
    }

    /// Errors when an explicit scheme runs above `zeta * bound`.
    pub fn check_explicit(&self, bound: f64) -> Result<()> {
        if self.scheme.is_explicit() && self.dt > self.zeta * bound {
            return Err(Error::StabilityViolation(format!(
                "dt {} above zeta*bound = {}",
                self.dt,
                self.zeta * bound
            )));
        }
        Ok(())
    }
}

/// `(I + dt A) v + dt b`.
pub fn explicit_step(a: &DMatrix<f64>, b: &DVector<f64>, v: &DVector<f64>, dt: f64) -> DVector<f64> {
    let mut out = a * v;
    out *= dt;
    out += v;
    out.axpy(dt, b, 1.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplicitMethod {
    Direct,
    Neumann(usize),
}

/// Solves `(I - dt A) v' = v + dt b`.
pub fn implicit_step(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    v: &DVector<f64>,
    dt: f64,
    method: ImplicitMethod,
) -> Result<DVector<f64>> {
    let mut rhs = v.clone();
    rhs.axpy(dt, b, 1.0);
    match method {
        ImplicitMethod::Direct => {
            let m = DMatrix::identity(a.nrows(), a.ncols()) - a * dt;
            m.lu().solve(&rhs).ok_or(Error::SingularSystem)
        }
        ImplicitMethod::Neumann(p) => {
            let j = a * dt;
            let nj = inf_norm(&j);
            if nj >= 1.0 {
                return Err(Error::NeumannDivergence(nj));
            }
            Ok(neumann_apply(&j, &rhs, p))
        }
    }
}

/// `sum_{p<P} J^p r` by repeated products.
pub fn neumann_apply(j: &DMatrix<f64>, r: &DVector<f64>, p: usize) -> DVector<f64> {
    let mut acc = r.clone();
    let mut x = r.clone();
    for _ in 1..p {
        x = j * &x;
        acc += &x;
    }
    acc
}

/// `sum_{p<P} J^p`, approximating `(I - J)^{-1}`.
pub fn neumann_inverse(j: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    let nj = inf_norm(j);
    if nj >= 1.0 {
        return Err(Error::NeumannDivergence(nj));
    }
    let n = j.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut pw = DMatrix::identity(n, n);
    for _ in 1..p {
        pw = &pw * j;
        acc += &pw;
    }
    Ok(acc)
}

/// `ceil(log(1/(Gamma eps)) / log(1/(kappa-1)))`, clamped at 0.
pub fn p_min(kappa: f64, gamma: f64, eps: f64) -> Result<usize> {
    if !(kappa > 1.0 && kappa < 2.0) {
        return Err(Error::OutOfDomain(format!("kappa {kappa} outside (1, 2)")));
    }
    if !(gamma > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument("Gamma and eps must be positive".into()));
    }
    let v = ((1.0 / (gamma * eps)).ln() / (1.0 / (kappa - 1.0)).ln()).ceil();
    Ok(if v > 0.0 { v as usize } else { 0 })
}

/// Smallest row dominance margin `|m_ii| - sum_{j != i} |m_ij|`.
pub fn varah_gamma(m: &DMatrix<f64>) -> Result<f64> {
    let g = (0..m.nrows())
        .map(|i| {
            let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            m[(i, i)].abs() - off
        })
        .fold(f64::INFINITY, f64::min);
    if g > 0.0 {
        Ok(g)
    } else {
        Err(Error::NotDiagonallyDominant(g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kappa: f64,
    pub inverse_norm: f64,
    pub gamma: Option<f64>,
    /// `kappa <= 2 / Gamma`, when Gamma exists.
    pub kappa_within_bound: Option<bool>,
    pub varah_holds: Option<bool>,
}

/// Conditioning of `I - J` in the infinity norm.
pub fn condition_diagnostics(j: &DMatrix<f64>) -> Result<ConditionReport> {
    let n = j.nrows();
    let m = DMatrix::identity(n, n) - j;
    let inv = m.clone().try_inverse().ok_or(Error::SingularSystem)?;
    let ni = inf_norm(&inv);
    let kappa = inf_norm(&m) * ni;
    let gamma = varah_gamma(&m).ok();
    Ok(ConditionReport {
        kappa,
        inverse_norm: ni,
        gamma,
        kappa_within_bound: gamma.map(|g| kappa <= 2.0 / g),
        varah_holds: gamma.map(|g| ni <= 1.0 / g * (1.0 + 1e-12)),
    })
}

/// Block one-shot system over `tau + c + 1` time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct OneShotSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub scheme: SchemeKind,
    pub tau: usize,
    pub padding: usize,
    pub block: usize,
}

impl OneShotSystem {
    pub fn slots(&self) -> usize {
        self.tau + self.padding + 1
    }

    pub fn solve_dense(&self) -> Result<DVector<f64>> {
        self.matrix.clone().lu().solve(&self.rhs).ok_or(Error::SingularSystem)
    }

    pub fn slot(&self, x: &DVector<f64>, j: usize) -> DVector<f64> {
        x.rows(j * self.block, self.block).into_owned()
    }
}

/// Step `k` uses `(A_k, b_k)`: explicit rows `x_{k+1} - (I + dt A_k) x_k = dt b_k`,
/// implicit rows `(I - dt A_k) x_{k+1} - x_k = dt b_k`. Padding rows repeat `x_tau`.
pub fn build_oneshot(
    steps: &[(DMatrix<f64>, DVector<f64>)],
    dt: f64,
    padding: usize,
    u_in: &DVector<f64>,
    explicit: bool,
) -> Result<OneShotSystem> {
    let tau = steps.len();
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let n = u_in.len();
    for (a, b) in steps {
        if a.nrows() != n || a.ncols() != n || b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.nrows(),
            });
        }
    }
    let slots = tau + padding + 1;
    let mut m = DMatrix::zeros(slots * n, slots * n);
    let mut r = DVector::zeros(slots * n);
    let id = DMatrix::<f64>::identity(n, n);
    m.view_mut((0, 0), (n, n)).copy_from(&id);
    r.rows_mut(0, n).copy_from(u_in);
    for j in 1..slots {
        let (diag, sub) = if j <= tau {
            let (a, b) = &steps[j - 1];
            r.rows_mut(j * n, n).copy_from(&(b * dt));
            if explicit {
                (id.clone(), -(&id + a * dt))
            } else {
                (&id - a * dt, -id.clone())
            }
        } else {
            (id.clone(), -id.clone())
        };
        m.view_mut((j * n, j * n), (n, n)).copy_from(&diag);
        m.view_mut((j * n, (j - 1) * n), (n, n)).copy_from(&sub);
    }
    Ok(OneShotSystem {
        matrix: m,
        rhs: r,
        scheme: if explicit {
            SchemeKind::ExplicitOneshot
        } else {
            SchemeKind::ImplicitOneshot
        },
        tau,
        padding,
        block: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtBound {
    /// `min_k -Re(l_k) / |l_k|^2` over decaying modes.
    pub eigen: f64,
    /// `1 / ||A||_inf`.
    pub surrogate: f64,
    pub non_decaying_modes: usize,
}

pub fn dt_stability_bound(a: &DMatrix<f64>) -> Result<DtBound> {
    let eig = a.clone().complex_eigenvalues();
    let mut best = f64::INFINITY;
    let mut skipped = 0;
    for l in eig.iter() {
        if l.re < 0.0 {
            best = best.min(-l.re / l.norm_sqr());
        } else {
            skipped += 1;
        }
    }
    if !best.is_finite() {
        return Err(Error::NoDecayingModes);
    }
    let na = inf_norm(a);
    Ok(DtBound {
        eigen: best,
        surrogate: if na > 0.0 { 1.0 / na } else { f64::INFINITY },
        non_decaying_modes: skipped,
    })
}

/// `1 / (||D1|| ||u0||^M (|h| + nu))`.
pub fn dt_bound_closed_form(d1_norm: f64, u0_norm: f64, order: usize, h_hat: f64, nu: f64) -> f64 {
    1.0 / (d1_norm * u0_norm.powi(order as i32) * (h_hat.abs() + nu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    /// First step whose state infinity norm exceeded the divergence threshold.
    pub diverged_at: Option<usize>,
}

/// Iterates `tau` steps; `system(k)` returns `(A_k, b_k)`. Stops early on divergence.
pub fn integrate<F>(mut system: F, v0: &DVector<f64>, dt: f64, tau: usize, scheme: SchemeKind, method: ImplicitMethod) -> Result<Trajectory>
where
    F: FnMut(usize) -> (DMatrix<f64>, DVector<f64>),
{
    let mut states = vec![v0.clone()];
    let mut v = v0.clone();
    for k in 0..tau {
        let (a, b) = system(k);
        v = match scheme {
            SchemeKind::ExplicitIterative | SchemeKind::ExplicitOneshot => explicit_step(&a, &b, &v, dt),
            _ => implicit_step(&a, &b, &v, dt, method)?,
        };
        let norm = v.amax();
        states.push(v.clone());
        if !(norm <= DIVERGENCE_THRESHOLD) {
            return Ok(Trajectory {
                dt,
                states,
                diverged_at: Some(k + 1),
            });
        }
    }
    Ok(Trajectory {
        dt,
        states,
        diverged_at: None,
    })
}

/// CSV `step,t,node,x,variable,value` for stacked states.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory, grid: &Grid1D, labels: &[String]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "t", "node", "x", "variable", "value"])?;
    let n = grid.n_points;
    for (s, v) in traj.states.iter().enumerate() {
        let t = s as f64 * traj.dt;
        for (k, label) in labels.iter().enumerate() {
            for i in 0..n {
                let idx = k * n + i;
                if idx >= v.len() {
                    break;
                }
                wr.write_record([
                    s.to_string(),
                    format!("{t}"),
                    i.to_string(),
                    format!("{}", grid.x(i)),
                    label.clone(),
                    format!("{:e}", v[idx]),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_second_derivative;
    use approx::assert_abs_diff_eq;

    #[test]
    fn euler_steps() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let z = DVector::zeros(2);
        let v = DVector::from_element(2, 1.0);
        let e = explicit_step(&a, &z, &v, 0.1);
        assert_abs_diff_eq!(e[0], 0.9, epsilon = 1e-15);
        let i = implicit_step(&a, &z, &v, 0.1, ImplicitMethod::Direct).unwrap();
        assert_abs_diff_eq!(i[1], 1.0 / 1.1, epsilon = 1e-15);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let e0 = explicit_step(&DMatrix::zeros(2, 2), &b, &v, 0.5);
        assert_eq!(e0, DVector::from_vec(vec![1.5, 2.0]));
        let bad = -DMatrix::<f64>::identity(2, 2) * 20.0;
        assert!(matches!(
            implicit_step(&bad, &z, &v, 0.1, ImplicitMethod::Neumann(5)),
            Err(Error::NeumannDivergence(_))
        ));
    }

    #[test]
    fn neumann_geometric() {
        let j = DMatrix::<f64>::identity(2, 2) * 0.5;
        let r = neumann_inverse(&j, 5).unwrap();
        let exact = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert_abs_diff_eq!(inf_norm(&(exact - r)), 0.0625, epsilon = 1e-15);
        assert_eq!(neumann_inverse(&DMatrix::zeros(3, 3), 4).unwrap(), DMatrix::identity(3, 3));
        assert!(neumann_inverse(&DMatrix::identity(2, 2), 3).is_err());
    }

    #[test]
    fn p_min_values() {
        assert_eq!(p_min(1.5, 1.0, 1e-6).unwrap(), 20);
        assert_eq!(p_min(1.5, 2.0, 0.5).unwrap(), 0);
        assert!(matches!(p_min(2.0, 1.0, 1e-3), Err(Error::OutOfDomain(_))));
        assert!(matches!(p_min(1.0, 1.0, 1e-3), Err(Error::OutOfDomain(_))));
        assert!(p_min(1.25, 1.0, 1e-6).unwrap() <= p_min(1.5, 1.0, 1e-6).unwrap());
    }

    #[test]
    fn varah_and_condition() {
        let m = DMatrix::<f64>::identity(3, 3) * 0.5;
        assert_eq!(varah_gamma(&m).unwrap(), 0.5);
        assert_eq!(varah_gamma(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        assert!(varah_gamma(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).is_err());
        let c = condition_diagnostics(&(DMatrix::identity(2, 2) * 0.5)).unwrap();
        assert_abs_diff_eq!(c.kappa, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.inverse_norm, 2.0, epsilon = 1e-15);
        assert_eq!(c.varah_holds, Some(true));
        let c0 = condition_diagnostics(&DMatrix::zeros(2, 2)).unwrap();
        assert_abs_diff_eq!(c0.kappa, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn oneshot_small() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let b = DVector::from_vec(vec![0.1, 0.0]);
        let u = DVector::from_vec(vec![1.0, -1.0]);
        let sys = build_oneshot(&[(a.clone(), b.clone()), (a.clone(), b.clone())], 0.1, 1, &u, true).unwrap();
        assert_eq!(sys.matrix.shape(), (8, 8));
        let x = sys.solve_dense().unwrap();
        let s1 = explicit_step(&a, &b, &u, 0.1);
        let s2 = explicit_step(&a, &b, &s1, 0.1);
        assert!((sys.slot(&x, 1) - &s1).amax() < 1e-12);
        assert!((sys.slot(&x, 2) - &s2).amax() < 1e-12);
        assert!((sys.slot(&x, 3) - &s2).amax() < 1e-12);
        let sys0 = build_oneshot(&[(a.clone(), b.clone())], 0.1, 0, &u, false).unwrap();
        assert_eq!(sys0.slots(), 2);
        let xi = sys0.solve_dense().unwrap();
        let i1 = implicit_step(&a, &b, &u, 0.1, ImplicitMethod::Direct).unwrap();
        assert!((sys0.slot(&xi, 1) - i1).amax() < 1e-12);
    }

    #[test]
    fn dt_bounds() {
        let a = -DMatrix::<f64>::identity(3, 3) * 4.0;
        let b = dt_stability_bound(&a).unwrap();
        assert_abs_diff_eq!(b.eigen, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b.surrogate, 0.25, epsilon = 1e-12);
        assert!(matches!(dt_stability_bound(&DMatrix::identity(2, 2)), Err(Error::NoDecayingModes)));
        let g = Grid1D::unit(32).unwrap();
        let heat = build_second_derivative(&g).to_dense() * 0.001;
        let hb = dt_stability_bound(&heat).unwrap();
        assert_abs_diff_eq!(hb.surrogate, g.dx * g.dx / 0.004, epsilon = 1e-12);
        // the stiffest interior mode sits just under 4 nu / dx^2
        assert!(hb.eigen >= hb.surrogate && hb.eigen < 1.01 * hb.surrogate, "{hb:?}");
        assert_eq!(hb.non_decaying_modes, 2);
    }

    #[test]
    fn config_checks() {
        assert!(SchemeConfig::new(SchemeKind::ExplicitIterative, 0.1, 0).is_err());
        let c = SchemeConfig::new(SchemeKind::ExplicitIterative, 0.1, 3).unwrap();
        assert_eq!(c.padding(), 3);
        assert!(c.check_explicit(0.1).is_err());
        assert!(c.check_explicit(0.3).is_ok());
    }
}
