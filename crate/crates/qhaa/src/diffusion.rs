//! Separable solution of the linear diffusion problem used as the zeroth
//! homotopy term, and the coefficient fields built from it.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientSource {
    Quadrature,
    ClosedForm,
}

/// `u0(x,t) = (1 - 2x/L) + sum_n b_n exp(-4 pi^2 n^2 nu t / L^2) sin(2 n pi x / L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSolution {
    pub nu: f64,
    pub length: f64,
    pub n_max: usize,
    /// `b[n-1]` multiplies mode `n`.
    pub b: Vec<f64>,
    pub source: CoefficientSource,
}

pub const DEFAULT_N_MAX: usize = 128;

/// Composite Simpson projection of `cos(pi x) - (1 - 2x)` onto `sin(2 n pi x)`
/// on the unit interval.
pub fn coefficients_quadrature(n_max: usize, quadrature_points: usize) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    if quadrature_points < 16 * n_max {
        return Err(Error::InvalidArgument(format!(
            "quadrature_points {quadrature_points} < 16 * n_max"
        )));
    }
    // Simpson needs an even number of panels.
    let m = quadrature_points + quadrature_points % 2;
    let h = 1.0 / m as f64;
    let f = |x: f64| (PI * x).cos() - (1.0 - 2.0 * x);
    let fx: Vec<f64> = (0..=m).map(|i| f(i as f64 * h)).collect();
    let b = (1..=n_max)
        .map(|n| {
            let k = 2.0 * PI * n as f64;
            let mut s = 0.0;
            for (i, &v) in fx.iter().enumerate() {
                let w = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += w * v * (k * i as f64 * h).sin();
            }
            2.0 * s * h / 3.0
        })
        .collect();
    Ok(b)
}

/// `b_n = 2 / (pi n (4 n^2 - 1))`.
pub fn coefficients_closed_form(n_max: usize) -> Vec<f64> {
    (1..=n_max)
        .map(|n| {
            let n = n as f64;
            2.0 / (PI * n * (4.0 * n * n - 1.0))
        })
        .collect()
}

impl DiffusionSolution {
    pub fn new(nu: f64, length: f64, n_max: usize, source: CoefficientSource) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu {nu} must be >= 0")));
        }
        if !(length > 0.0) {
            return Err(Error::InvalidArgument(format!("length {length} must be > 0")));
        }
        let b = match source {
            CoefficientSource::Quadrature => coefficients_quadrature(n_max, 32 * n_max.max(1))?,
            CoefficientSource::ClosedForm => {
                if n_max == 0 {
                    return Err(Error::InvalidArgument("n_max must be >= 1".into()));
                }
                coefficients_closed_form(n_max)
            }
        };
        Ok(Self {
            nu,
            length,
            n_max,
            b,
            source,
        })
    }

    /// Quadrature coefficients, `n_max = 128`.
    pub fn with_defaults(nu: f64, length: f64) -> Result<Self> {
        Self::new(nu, length, DEFAULT_N_MAX, CoefficientSource::Quadrature)
    }

    fn wavenumber(&self, n: usize) -> f64 {
        2.0 * PI * n as f64 / self.length
    }

    fn decay(&self, n: usize, t: f64) -> f64 {
        let k = self.wavenumber(n);
        (-self.nu * k * k * t).exp()
    }

    pub fn eval_u0(&self, x: f64, t: f64) -> f64 {
        self.eval_derivative(x, t, 0)
    }

    /// Spatial derivative of order `d`, differentiated term by term.
    pub fn eval_derivative(&self, x: f64, t: f64, d: u32) -> f64 {
        let steady = match d {
            0 => 1.0 - 2.0 * x / self.length,
            1 => -2.0 / self.length,
            _ => 0.0,
        };
        let shift = d as f64 * PI / 2.0;
        let mut s = 0.0;
        for (i, &bn) in self.b.iter().enumerate() {
            let n = i + 1;
            let k = self.wavenumber(n);
            let e = self.decay(n, t);
            if e == 0.0 {
                break;
            }
            s += bn * e * k.powi(d as i32) * (k * x + shift).sin();
        }
        steady + s
    }

    /// `du0/dt = nu d2u0/dx2`, from the series.
    pub fn eval_dt(&self, x: f64, t: f64) -> f64 {
        self.nu * self.eval_derivative(x, t, 2)
    }

    pub fn sample(&self, grid: &Grid1D, t: f64) -> Vec<f64> {
        grid.sample(|x| self.eval_u0(x, t))
    }

    pub fn sample_derivative(&self, grid: &Grid1D, t: f64, d: u32) -> Vec<f64> {
        grid.sample(|x| self.eval_derivative(x, t, d))
    }

    /// `sum_{n > n_max} |b_n|` from the closed-form decay (about `1/(4 pi n_max^2)`).
    pub fn tail_bound(&self) -> f64 {
        let n = self.n_max as f64;
        // sum_{m>n} 2/(pi m (4m^2-1)) <= int_n^inf 1/(2 pi m^3) dm
        1.0 / (4.0 * PI * n * n)
    }

    /// Max-norm of `u0` on the grid at `t = 0`.
    pub fn norm_inf_t0(&self, grid: &Grid1D) -> f64 {
        self.sample(grid, 0.0).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Continuous L2 norm of `u0(., t)` by Simpson quadrature.
    pub fn norm_l2(&self, t: f64, points: usize) -> f64 {
        let m = points.max(2) + points % 2;
        let h = self.length / m as f64;
        let mut s = 0.0;
        for i in 0..=m {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = self.eval_u0(i as f64 * h, t);
            s += w * v * v;
        }
        (s * h / 3.0).sqrt()
    }

    pub fn alpha(&self, k: usize, grid: &Grid1D, t: f64) -> Result<Vec<f64>> {
        eval_alpha(self, k, grid, t)
    }
}

/// `alpha_0 = u0`, `alpha_1 = u0_x`, `alpha_2 = u0_xx`,
/// `alpha_3 = (u0^2)_x`, `alpha_4 = (u0^2)_xx`.
pub fn eval_alpha(sol: &DiffusionSolution, k: usize, grid: &Grid1D, t: f64) -> Result<Vec<f64>> {
    let a = |d| sol.sample_derivative(grid, t, d);
    Ok(match k {
        0 => a(0),
        1 => a(1),
        2 => a(2),
        3 => {
            let (a0, a1) = (a(0), a(1));
            a0.iter().zip(&a1).map(|(u, ux)| 2.0 * u * ux).collect()
        }
        4 => {
            let (a0, a1, a2) = (a(0), a(1), a(2));
            (0..grid.n_points)
                .map(|i| 2.0 * (a1[i] * a1[i] + a0[i] * a2[i]))
                .collect()
        }
        _ => return Err(Error::InvalidArgument(format!("alpha index {k} not in 0..=4"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_first_coefficient() {
        assert_abs_diff_eq!(coefficients_closed_form(1)[0], 0.21221, epsilon = 1e-5);
        assert_abs_diff_eq!(coefficients_closed_form(1)[0], 2.0 / (3.0 * PI), epsilon = 1e-15);
    }

    #[test]
    fn quadrature_agrees_with_closed_form() {
        let q = coefficients_quadrature(64, 64 * 32).unwrap();
        let c = coefficients_closed_form(64);
        for (a, b) in q.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn quadrature_preconditions() {
        assert!(coefficients_quadrature(0, 100).is_err());
        assert!(coefficients_quadrature(8, 100).is_err());
    }

    #[test]
    fn reconstructs_initial_profile() {
        let s = DiffusionSolution::new(0.001, 1.0, 64, CoefficientSource::Quadrature).unwrap();
        let worst = (0..=512)
            .map(|i| {
                let x = i as f64 / 512.0;
                (s.eval_u0(x, 0.0) - (PI * x).cos()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn coefficient_decay_is_cubic() {
        let b = coefficients_quadrature(64, 64 * 32).unwrap();
        let pts: Vec<(f64, f64)> = (4..=64)
            .map(|n| ((n as f64).ln(), b[n - 1].abs().ln()))
            .collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 3.0).abs() < 0.1, "slope {slope}");
        for n in 2..64 {
            assert!(b[n].abs() <= b[n - 1].abs());
        }
    }

    #[test]
    fn boundary_and_long_time() {
        let s = DiffusionSolution::with_defaults(0.001, 1.0).unwrap();
        for t in [0.0, 0.1, 0.5, 3.0] {
            assert_abs_diff_eq!(s.eval_u0(0.0, t), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(s.eval_u0(1.0, t), -1.0, epsilon = 1e-12);
        }
        for x in [0.1, 0.3, 0.77] {
            assert_abs_diff_eq!(s.eval_u0(x, 1e6), 1.0 - 2.0 * x, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(s.eval_u0(0.25, 0.0), (PI / 4.0).cos(), epsilon = 1e-3);
    }

    #[test]
    fn alpha_fields() {
        let s = DiffusionSolution::with_defaults(0.001, 1.0).unwrap();
        let g = Grid1D::unit(32).unwrap();
        let a0 = s.alpha(0, &g, 0.2).unwrap();
        let a1 = s.alpha(1, &g, 0.2).unwrap();
        let a2 = s.alpha(2, &g, 0.2).unwrap();
        let a3 = s.alpha(3, &g, 0.2).unwrap();
        let a4 = s.alpha(4, &g, 0.2).unwrap();
        for i in 0..32 {
            assert!((a3[i] - 2.0 * a0[i] * a1[i]).abs() < 1e-10);
            assert!((a4[i] - 2.0 * (a1[i] * a1[i] + a0[i] * a2[i])).abs() < 1e-10);
        }
        assert_eq!(a0[0], 1.0);
        assert!(s.alpha(5, &g, 0.0).is_err());
        // alpha_1 at t=0 tracks -pi sin(pi x) away from the endpoints
        let a1_0 = s.alpha(1, &g, 0.0).unwrap();
        for i in 4..28 {
            let x = g.x(i);
            assert!((a1_0[i] + PI * (PI * x).sin()).abs() < 2e-2, "{i}");
        }
    }

    #[test]
    fn closed_form_and_quadrature_solutions_match() {
        let q = DiffusionSolution::new(0.01, 1.0, 32, CoefficientSource::Quadrature).unwrap();
        let c = DiffusionSolution::new(0.01, 1.0, 32, CoefficientSource::ClosedForm).unwrap();
        for x in [0.1, 0.4, 0.9] {
            assert!((q.eval_u0(x, 0.3) - c.eval_u0(x, 0.3)).abs() < 1e-9);
        }
    }
}
