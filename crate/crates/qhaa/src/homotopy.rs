//! Deformation hierarchy for viscous Burgers, its sequential solution, and the
//! convergence diagnostics built on the computed terms.
//!
//! Internally every order is carried as `w_p = u_p / p!`. With that scaling
//! the recursion reads
//!
//! ```text
//! dw_1/dt = h a0 * D2 u0
//! dw_p/dt = (1+h) dw_{p-1}/dt
//!         + h [ a0 * D2 w_{p-1} + a1 * w_{p-1}
//!               + 1/2 D2 (sum_{k=1}^{p-2} w_k w_{p-1-k}) - nu D1 w_{p-1} ]
//! ```
//!
//! where `a0 = u0`, `a1 = du0/dx` come from the analytic series.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::diffusion::DiffusionSolution;
use crate::error::{Error, Result};
use crate::grid::{build_first_derivative, build_second_derivative, BoundaryCondition, FdOperator, Grid1D};

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `w_p = u_p / p!`
    #[default]
    Normalized,
    /// `u_p`
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    #[default]
    TimeDependent,
    /// Coefficient fields evaluated once at `t = 0`.
    Frozen,
}

/// How the order-zero field is produced on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GuessMode {
    /// Sampled closed-form solution.
    #[default]
    Analytic,
    /// `nu D1` stepped with the same scheme and frozen rows as the embedded `v0`.
    DiscreteHeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopyConfig {
    pub h_hat: f64,
    pub order: usize,
    pub nu: f64,
    pub normalization: Normalization,
    pub alpha_mode: AlphaMode,
}

impl HomotopyConfig {
    pub fn new(h_hat: f64, order: usize, nu: f64) -> Result<Self> {
        let c = Self {
            h_hat,
            order,
            nu,
            normalization: Normalization::Normalized,
            alpha_mode: AlphaMode::TimeDependent,
        };
        c.validate()?;
        Ok(c)
    }

    /// `h = -0.5`, `nu = 0.001`.
    pub fn baseline(order: usize) -> Self {
        Self::new(-0.5, order, 0.001).expect("valid defaults")
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_hat == 0.0 || !self.h_hat.is_finite() {
            return Err(Error::InvalidArgument("h_hat must be nonzero and finite".into()));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu {} must be >= 0", self.nu)));
        }
        Ok(())
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn with_alpha_mode(mut self, m: AlphaMode) -> Self {
        self.alpha_mode = m;
        self
    }
}

pub fn factorial(p: usize) -> f64 {
    (1..=p).fold(1.0, |a, k| a * k as f64)
}

/// One homotopy term sampled on the grid at steps `0..=tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationTerm {
    pub order: usize,
    pub normalization: Normalization,
    pub dt: f64,
    pub fields: Vec<Vec<f64>>,
}

impl DeformationTerm {
    fn scale_to(&self, target: Normalization) -> f64 {
        match (self.normalization, target) {
            (a, b) if a == b => 1.0,
            (Normalization::Raw, Normalization::Normalized) => 1.0 / factorial(self.order),
            _ => factorial(self.order),
        }
    }

    pub fn field(&self, step: usize, target: Normalization) -> Vec<f64> {
        let s = self.scale_to(target);
        self.fields[step].iter().map(|v| v * s).collect()
    }

    pub fn final_field(&self, target: Normalization) -> Vec<f64> {
        self.field(self.fields.len() - 1, target)
    }

    pub fn n_steps(&self) -> usize {
        self.fields.len() - 1
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Shared pieces needed to evaluate the hierarchy right-hand sides.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub config: HomotopyConfig,
    pub grid: Grid1D,
    pub u0: DiffusionSolution,
    pub guess: GuessMode,
    d_first: FdOperator,
    d_second: FdOperator,
}

struct Coefficients {
    u0: Vec<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
}

impl Hierarchy {
    pub fn new(config: HomotopyConfig, grid: Grid1D, u0: DiffusionSolution) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            grid,
            u0,
            guess: GuessMode::Analytic,
            d_first: build_first_derivative(&grid),
            d_second: build_second_derivative(&grid),
        })
    }

    /// Builds the analytic guess for the cosine problem. Other initial data is rejected.
    pub fn for_problem(config: HomotopyConfig, grid: Grid1D, bc: &BoundaryCondition) -> Result<Self> {
        check_cosine_problem(bc, grid.length)?;
        let u0 = DiffusionSolution::with_defaults(config.nu, grid.length)?;
        Self::new(config, grid, u0)
    }

    pub fn with_guess(mut self, g: GuessMode) -> Self {
        self.guess = g;
        self
    }

    fn coefficients(&self, t: f64, guess: &[f64]) -> Coefficients {
        let ta = match self.config.alpha_mode {
            AlphaMode::TimeDependent => t,
            AlphaMode::Frozen => 0.0,
        };
        Coefficients {
            u0: guess.to_vec(),
            a0: self.u0.sample_derivative(&self.grid, ta, 0),
            a1: self.u0.sample_derivative(&self.grid, ta, 1),
        }
    }

    /// Order-zero field at every step, as used by [`Hierarchy::solve`].
    pub fn guess_trajectory(&self, dt: f64, tau: usize, scheme: TimeScheme) -> Vec<Vec<f64>> {
        let mut g = self.u0.sample(&self.grid, 0.0);
        let mut out = Vec::with_capacity(tau + 1);
        out.push(g.clone());
        for k in 0..tau {
            g = self.advance_guess(&g, (k + 1) as f64 * dt, dt, scheme);
            out.push(g.clone());
        }
        out
    }

    fn advance_guess(&self, g: &[f64], t1: f64, dt: f64, scheme: TimeScheme) -> Vec<f64> {
        match (self.guess, scheme) {
            (GuessMode::Analytic, _) => self.u0.sample(&self.grid, t1),
            (GuessMode::DiscreteHeat, TimeScheme::Explicit) => {
                let d = self.d_second.apply(g);
                g.iter().zip(d).map(|(u, l)| u + dt * self.config.nu * l).collect()
            }
            (GuessMode::DiscreteHeat, TimeScheme::Implicit) => {
                let k = dt * self.config.nu;
                let op = &self.d_second;
                solve_tridiagonal(-k * op.lower, 1.0 - k * op.diag, -k * op.upper, g)
            }
        }
    }

    /// Normalized RHS for order `p >= 1`. `w[k]` holds `w_k` for `k < p`;
    /// `prev` is `dw_{p-1}/dt` (ignored for `p = 1`).
    fn rhs_normalized(&self, p: usize, w: &[Vec<f64>], prev: Option<&[f64]>, c: &Coefficients) -> Result<Vec<f64>> {
        let n = self.grid.n_points;
        let h = self.config.h_hat;
        if p == 0 {
            return Err(Error::InvalidArgument("order 0 is analytic".into()));
        }
        if p == 1 {
            let du = self.d_first.apply(&c.u0);
            return Ok((0..n).map(|i| h * c.a0[i] * du[i]).collect());
        }
        if w.len() < p {
            return Err(Error::MissingTerm(w.len()));
        }
        let prev = prev.ok_or(Error::MissingTerm(p - 1))?;
        let wp = &w[p - 1];
        let mut quad = vec![0.0; n];
        for k in 1..=p - 2 {
            let (a, b) = (&w[k], &w[p - 1 - k]);
            for i in 0..n {
                quad[i] += a[i] * b[i];
            }
        }
        let dquad = self.d_first.apply(&quad);
        let dw = self.d_first.apply(wp);
        let ddw = self.d_second.apply(wp);
        Ok((0..n)
            .map(|i| {
                (1.0 + h) * prev[i]
                    + h * (c.a0[i] * dw[i] + c.a1[i] * wp[i] + 0.5 * dquad[i] - self.config.nu * ddw[i])
            })
            .collect())
    }

    /// Explicit step size below which the per-order update map stays contractive.
    pub fn explicit_dt_bound(&self) -> f64 {
        let h = self.config.h_hat.abs();
        let u = self.u0.norm_inf_t0(&self.grid);
        let k = h * (self.config.nu * self.d_second.inf_norm() + self.d_first.inf_norm() * u + u);
        if k == 0.0 {
            f64::INFINITY
        } else {
            1.0 / k
        }
    }

    pub fn solve(&self, dt: f64, tau: usize, scheme: TimeScheme) -> Result<Vec<DeformationTerm>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt {dt} must be > 0")));
        }
        let m = self.config.order;
        let n = self.grid.n_points;
        let over_bound = scheme == TimeScheme::Explicit && dt > self.explicit_dt_bound();
        let mut w: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
        let mut traj: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(tau + 1); m + 1];
        w[0] = self.u0.sample(&self.grid, 0.0);
        for (p, wp) in w.iter().enumerate() {
            traj[p].push(wp.clone());
        }
        for step in 0..tau {
            let t0 = step as f64 * dt;
            let t1 = t0 + dt;
            match scheme {
                TimeScheme::Explicit => {
                    let c = self.coefficients(t0, &w[0]);
                    let mut rhs: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
                    rhs.push(Vec::new());
                    for p in 1..=m {
                        let r = self.rhs_normalized(p, &w, rhs.last().map(|v| v.as_slice()), &c)?;
                        rhs.push(r);
                    }
                    for p in 1..=m {
                        for i in 0..n {
                            w[p][i] += dt * rhs[p][i];
                        }
                    }
                }
                TimeScheme::Implicit => {
                    // dw_p/dt never depends on w_p, so the implicit update resolves order by order.
                    w[0] = self.advance_guess(&w[0], t1, dt, scheme);
                    let c = self.coefficients(t1, &w[0]);
                    let mut prev: Vec<f64> = Vec::new();
                    for p in 1..=m {
                        let r = self.rhs_normalized(p, &w, Some(&prev), &c)?;
                        for i in 0..n {
                            w[p][i] += dt * r[i];
                        }
                        prev = r;
                    }
                }
            }
            if scheme == TimeScheme::Explicit {
                w[0] = self.advance_guess(&w[0], t1, dt, scheme);
            }
            if over_bound {
                let worst = w.iter().map(|f| max_abs(f)).fold(0.0, f64::max);
                if !(worst <= DIVERGENCE_THRESHOLD) {
                    return Err(Error::StabilityViolation(format!(
                        "dt {dt} exceeds bound {} and term norm reached {worst:e} at step {}",
                        self.explicit_dt_bound(),
                        step + 1
                    )));
                }
            }
            for p in 0..=m {
                traj[p].push(w[p].clone());
            }
        }
        let norm = self.config.normalization;
        Ok(traj
            .into_iter()
            .enumerate()
            .map(|(p, fields)| {
                let s = if norm == Normalization::Raw { factorial(p) } else { 1.0 };
                DeformationTerm {
                    order: p,
                    normalization: norm,
                    dt,
                    fields: if s == 1.0 {
                        fields
                    } else {
                        fields.into_iter().map(|f| f.into_iter().map(|v| v * s).collect()).collect()
                    },
                }
            })
            .collect())
    }
}

/// Thomas algorithm for a constant-band interior with identity boundary rows.
fn solve_tridiagonal(lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    d[0] = rhs[0];
    for i in 1..n {
        let (a, b, cu) = if i == n - 1 { (0.0, 1.0, 0.0) } else { (lower, diag, upper) };
        let m = b - a * c[i - 1];
        c[i] = cu / m;
        d[i] = (rhs[i] - a * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn check_cosine_problem(bc: &BoundaryCondition, length: f64) -> Result<()> {
    let ok = bc.u_left == 1.0
        && bc.u_right == -1.0
        && (0..=16).all(|i| {
            let x = length * i as f64 / 16.0;
            (bc.initial_at(x) - (PI * x / length).cos()).abs() < 1e-12
        });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "only u(0)=1, u(L)=-1, u_in=cos(pi x/L) has an analytic guess".into(),
        ))
    }
}

/// RHS of order `p` at time `t`. `known[k]` is term `k` in the configured
/// normalization; `prev_rhs` is the stored time derivative of term `p-1`.
pub fn deformation_rhs(
    p: usize,
    known: &[Vec<f64>],
    prev_rhs: Option<&[f64]>,
    t: f64,
    hierarchy: &Hierarchy,
) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    if known.len() < p {
        return Err(Error::MissingTerm(known.len()));
    }
    let raw = hierarchy.config.normalization == Normalization::Raw;
    let w: Vec<Vec<f64>> = known[..p]
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let s = if raw { 1.0 / factorial(k) } else { 1.0 };
            f.iter().map(|v| v * s).collect()
        })
        .collect();
    let prev: Option<Vec<f64>> = prev_rhs.map(|r| {
        let s = if raw { 1.0 / factorial(p - 1) } else { 1.0 };
        r.iter().map(|v| v * s).collect()
    });
    let c = hierarchy.coefficients(t, &w[0]);
    let out = hierarchy.rhs_normalized(p, &w, prev.as_deref(), &c)?;
    let s = if raw { factorial(p) } else { 1.0 };
    Ok(out.into_iter().map(|v| v * s).collect())
}

pub fn solve_sequential(
    config: HomotopyConfig,
    grid: Grid1D,
    bc: &BoundaryCondition,
    dt: f64,
    tau: usize,
    scheme: TimeScheme,
) -> Result<Vec<DeformationTerm>> {
    Hierarchy::for_problem(config, grid, bc)?.solve(dt, tau, scheme)
}

/// `u = sum_p w_p` at every step.
pub fn sum_series(terms: &[DeformationTerm]) -> Result<Vec<Vec<f64>>> {
    let first = terms.first().ok_or(Error::MissingTerm(0))?;
    let steps = first.fields.len();
    let n = first.fields[0].len();
    let mut out = vec![vec![0.0; n]; steps];
    for term in terms {
        if term.fields.len() != steps {
            return Err(Error::DimensionMismatch {
                expected: steps,
                got: term.fields.len(),
            });
        }
        let s = term.scale_to(Normalization::Normalized);
        for (o, f) in out.iter_mut().zip(&term.fields) {
            for (a, b) in o.iter_mut().zip(f) {
                *a += s * b;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    Max,
    L2,
}

impl NormKind {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            NormKind::Max => max_abs(v),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// `||u_{p+1}|| / ||u_p||` on raw terms at the final step.
pub fn gamma_ratios(terms: &[DeformationTerm], norm: NormKind) -> Result<Vec<f64>> {
    let norms: Vec<f64> = terms
        .iter()
        .map(|t| norm.eval(&t.final_field(Normalization::Raw)))
        .collect();
    norms
        .windows(2)
        .enumerate()
        .map(|(p, w)| {
            if w[0] < 1e-300 {
                Err(Error::DegenerateTerm(p))
            } else {
                Ok(w[1] / w[0])
            }
        })
        .collect()
}

/// `gamma^{M+1} / (1 - gamma) * ||u0||`.
pub fn truncation_bound(gamma: f64, order: usize, u0_norm: f64) -> Result<f64> {
    if !(gamma < 1.0) {
        return Err(Error::DivergentSeries(gamma));
    }
    Ok(gamma.powi(order as i32 + 1) / (1.0 - gamma) * u0_norm)
}

/// Smallest `M` with `truncation_bound(gamma, M, u0_norm) <= eps`.
pub fn min_order(eps: f64, gamma: f64, u0_norm: f64) -> Result<usize> {
    if !(gamma < 1.0) {
        return Err(Error::DivergentSeries(gamma));
    }
    if !(eps > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidArgument("eps and gamma must be positive".into()));
    }
    let m = ((eps * (1.0 - gamma) / u0_norm).ln() / gamma.ln()).ceil();
    Ok(if m > 0.0 { m as usize } else { 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub t: f64,
    pub h_hat: f64,
    pub d_first_norm: f64,
    pub u0_norm: f64,
    pub analytical: f64,
    pub numerical: f64,
    pub analytical_converges: bool,
    pub numerical_converges: bool,
}

/// `pi |h| t / 2` and `|h| ||D2|| ||u0|| t / 2`.
pub fn gamma_bounds(h_hat: f64, grid: &Grid1D, u0_norm: f64, t: f64) -> GammaBounds {
    let dn = build_first_derivative(grid).inf_norm();
    let analytical = PI * h_hat.abs() * t / 2.0;
    let numerical = h_hat.abs() * dn * u0_norm * t / 2.0;
    GammaBounds {
        t,
        h_hat,
        d_first_norm: dn,
        u0_norm,
        analytical,
        numerical,
        analytical_converges: analytical < 1.0,
        numerical_converges: numerical < 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReH {
    pub value: f64,
    pub dimension: u8,
    /// Set for `d > 1`, where only the 1D closed form is given in the source derivation.
    pub extrapolated: bool,
}

/// `Re/(2 U pi^2) ||u0||_2 N^{3/2}` with `N = Re^e`, `e = 1, 1/2, 3/4` for `d = 1, 2, 3`.
pub fn re_h(re: f64, u_bar: f64, u0_l2: f64, dimension: u8) -> Result<ReH> {
    if !(re >= 0.0 && u_bar > 0.0) {
        return Err(Error::InvalidArgument("need Re >= 0 and U > 0".into()));
    }
    let e = match dimension {
        1 => 1.0,
        2 => 0.5,
        3 => 0.75,
        d => return Err(Error::InvalidArgument(format!("dimension {d} not in 1..=3"))),
    };
    let n = re.powf(e);
    Ok(ReH {
        value: re / (2.0 * u_bar * PI * PI) * u0_l2 * n.powf(1.5),
        dimension,
        extrapolated: dimension != 1,
    })
}

/// `2 / (Re_H |h|)`.
pub fn t_nonlinear(re_h: f64, h_hat: f64) -> f64 {
    let d = re_h * h_hat.abs();
    if d == 0.0 {
        f64::INFINITY
    } else {
        2.0 / d
    }
}

/// `||u0|| ||D2|| / ||D1||`.
pub fn legacy_r(u0_norm: f64, grid: &Grid1D) -> f64 {
    u0_norm * build_first_derivative(grid).inf_norm() / build_second_derivative(grid).inf_norm()
}

/// Order estimate `max(M tau dx^2, M tau dt^2)`.
pub fn fd_error_estimate(order: usize, tau: usize, dx: f64, dt: f64) -> f64 {
    let k = (order * tau) as f64;
    (k * dx * dx).max(k * dt * dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub h_hat: f64,
    pub order: usize,
    pub nu: f64,
    pub t: f64,
    pub n_grid: usize,
    pub gamma_ratios: Vec<f64>,
    pub gamma_max: Option<f64>,
    pub gamma_bounds: GammaBounds,
    pub truncation_bound: Option<f64>,
    pub truncation_bound_analytical: Option<f64>,
    pub min_order_analytical_1e3: Option<usize>,
    pub u0_norm_inf: f64,
    pub u0_norm_l2: f64,
    pub reynolds: f64,
    pub u_bar: f64,
    pub d_bar: f64,
    pub re_h: f64,
    pub t_nonlinear: f64,
    pub legacy_r: f64,
    pub dt: f64,
    pub tau: usize,
    pub fd_error_estimate: f64,
    pub dt_bound_sequential: f64,
}

impl DiagnosticsReport {
    /// `Re = U D / nu`, `U = 1` and `D = L` unless overridden.
    pub fn build(
        hierarchy: &Hierarchy,
        terms: &[DeformationTerm],
        dt: f64,
        tau: usize,
        u_bar: f64,
        d_bar: f64,
    ) -> Result<Self> {
        let grid = hierarchy.grid;
        let c = hierarchy.config;
        let t = dt * tau as f64;
        let u0n = hierarchy.u0.norm_inf_t0(&grid);
        let u0l2 = hierarchy.u0.norm_l2(0.0, 2048);
        let ratios = gamma_ratios(terms, NormKind::Max).unwrap_or_default();
        let gmax = ratios.iter().cloned().fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
        let gb = gamma_bounds(c.h_hat, &grid, u0n, t);
        let reynolds = if c.nu > 0.0 { u_bar * d_bar / c.nu } else { f64::INFINITY };
        let rh = re_h(reynolds, u_bar, u0l2, 1)?.value;
        Ok(Self {
            h_hat: c.h_hat,
            order: c.order,
            nu: c.nu,
            t,
            n_grid: grid.n_points,
            gamma_max: gmax,
            truncation_bound: gmax.and_then(|g| truncation_bound(g, c.order, u0n).ok()),
            truncation_bound_analytical: truncation_bound(gb.analytical, c.order, u0n).ok(),
            min_order_analytical_1e3: min_order(1e-3, gb.analytical, u0n).ok(),
            gamma_ratios: ratios,
            gamma_bounds: gb,
            u0_norm_inf: u0n,
            u0_norm_l2: u0l2,
            reynolds,
            u_bar,
            d_bar,
            re_h: rh,
            t_nonlinear: t_nonlinear(rh, c.h_hat),
            legacy_r: legacy_r(u0n, &grid),
            dt,
            tau,
            fd_error_estimate: fd_error_estimate(c.order, tau, grid.dx, dt),
            dt_bound_sequential: hierarchy.explicit_dt_bound(),
        })
    }
}
