//! Fine-grid reference for the Burgers problem: RK4 in time, central
//! differences in space, Dirichlet ends held fixed. The fine grid has
//! `n_dns + 1` nodes so both boundaries are nodes.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Grid1D};

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnsConfig {
    pub n_dns: usize,
    /// `None`: `0.25 dx^2/nu`, capped at `0.25 dx / max|u0|`.
    pub dt: Option<f64>,
    pub t_final: f64,
    /// Snapshot spacing; `None` keeps only the initial and final fields.
    pub output_dt: Option<f64>,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            n_dns: 512,
            dt: None,
            t_final: 0.5,
            output_dt: None,
        }
    }
}

impl DnsConfig {
    pub fn validate(&self, coarse: Option<&Grid1D>) -> Result<()> {
        if self.n_dns < 2 {
            return Err(Error::InvalidArgument(format!("n_dns {} must be >= 2", self.n_dns)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidArgument(format!("T {} must be >= 0", self.t_final)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!("dt_dns {dt} must be > 0")));
            }
        }
        if let Some(o) = self.output_dt {
            if !(o > 0.0) {
                return Err(Error::InvalidArgument(format!("output_dt {o} must be > 0")));
            }
        }
        if let Some(g) = coarse {
            if !self.n_dns.is_multiple_of(g.n_points) {
                return Err(Error::IncompatibleGrids {
                    fine: self.n_dns,
                    coarse: g.n_points,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsTrajectory {
    pub length: f64,
    pub n_dns: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `n_dns + 1` values per snapshot.
    pub fields: Vec<Vec<f64>>,
}

impl DnsTrajectory {
    pub fn dx(&self) -> f64 {
        self.length / self.n_dns as f64
    }

    pub fn final_field(&self) -> &[f64] {
        self.fields.last().expect("trajectory has the initial field")
    }
}

fn rhs(u: &[f64], nu: f64, dx: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    let (a, b) = (nu / (dx * dx), 0.5 / dx);
    for i in 1..n - 1 {
        out[i] = a * (u[i + 1] - 2.0 * u[i] + u[i - 1]) - u[i] * b * (u[i + 1] - u[i - 1]);
    }
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest stable RK4 step for the linearized operator.
fn rk4_limit(nu: f64, dx: f64, umax: f64) -> f64 {
    // real-axis reach of RK4 is ~2.785, imaginary ~2.828
    let diff = if nu > 0.0 { 2.78 * dx * dx / (4.0 * nu) } else { f64::INFINITY };
    let adv = if umax > 0.0 { 2.82 * dx / umax } else { f64::INFINITY };
    diff.min(adv)
}

pub fn default_dt(nu: f64, dx: f64, umax: f64) -> f64 {
    let diff = if nu > 0.0 { 0.25 * dx * dx / nu } else { f64::INFINITY };
    let adv = if umax > 0.0 { 0.25 * dx / umax } else { f64::INFINITY };
    let dt = diff.min(adv);
    if dt.is_finite() {
        dt
    } else {
        1e-3
    }
}

pub fn run_dns(config: &DnsConfig, nu: f64, bc: &BoundaryCondition) -> Result<DnsTrajectory> {
    config.validate(None)?;
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!("nu {nu} must be > 0")));
    }
    let n = config.n_dns;
    let length = bc.length;
    let dx = length / n as f64;
    let mut u: Vec<f64> = (0..=n).map(|i| bc.initial_at(i as f64 * dx)).collect();
    u[0] = bc.u_left;
    u[n] = bc.u_right;
    let umax = max_abs(&u);
    let limit = rk4_limit(nu, dx, umax);
    let dt_max = match config.dt {
        Some(d) if d > limit => {
            return Err(Error::StabilityViolation(format!("dt_dns {d} exceeds the RK4 limit {limit}")));
        }
        Some(d) => d,
        None => default_dt(nu, dx, umax),
    };
    let span = config.output_dt.unwrap_or(config.t_final).min(config.t_final);
    let n_out = if config.t_final == 0.0 {
        0
    } else {
        (config.t_final / span - 1e-9).ceil() as usize
    };
    let mut times = vec![0.0];
    let mut fields = vec![u.clone()];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut tmp = vec![0.0; n + 1];
    let mut t = 0.0;
    let mut dt_used = dt_max;
    for o in 1..=n_out {
        let target = (o as f64 * span).min(config.t_final);
        let interval = target - t;
        let sub = (interval / dt_max - 1e-9).ceil().max(1.0) as usize;
        let h = interval / sub as f64;
        dt_used = h;
        for _ in 0..sub {
            rhs(&u, nu, dx, &mut k1);
            for i in 0..=n {
                tmp[i] = u[i] + 0.5 * h * k1[i];
            }
            rhs(&tmp, nu, dx, &mut k2);
            for i in 0..=n {
                tmp[i] = u[i] + 0.5 * h * k2[i];
            }
            rhs(&tmp, nu, dx, &mut k3);
            for i in 0..=n {
                tmp[i] = u[i] + h * k3[i];
            }
            rhs(&tmp, nu, dx, &mut k4);
            for i in 0..=n {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let m = max_abs(&u);
            if !(m <= DIVERGENCE_THRESHOLD) {
                return Err(Error::StabilityViolation(format!("DNS state norm reached {m}")));
            }
        }
        t = target;
        times.push(t);
        fields.push(u.clone());
    }
    Ok(DnsTrajectory {
        length,
        n_dns: n,
        dt: dt_used,
        times,
        fields,
    })
}

/// Point sampling at the coarse nodes.
pub fn restrict(fine: &[f64], n_dns: usize, coarse: &Grid1D) -> Result<Vec<f64>> {
    if fine.len() != n_dns + 1 {
        return Err(Error::DimensionMismatch {
            expected: n_dns + 1,
            got: fine.len(),
        });
    }
    if !n_dns.is_multiple_of(coarse.n_points) {
        return Err(Error::IncompatibleGrids {
            fine: n_dns,
            coarse: coarse.n_points,
        });
    }
    let r = n_dns / coarse.n_points;
    Ok((0..coarse.n_points).map(|i| fine[i * r]).collect())
}

/// Linear interpolation of a coarse field onto the fine nodes; the last
/// coarse interval ends at `x = L` with the given right boundary value.
pub fn inject(coarse_field: &[f64], coarse: &Grid1D, n_dns: usize, u_right: f64) -> Result<Vec<f64>> {
    if coarse_field.len() != coarse.n_points {
        return Err(Error::DimensionMismatch {
            expected: coarse.n_points,
            got: coarse_field.len(),
        });
    }
    if !n_dns.is_multiple_of(coarse.n_points) {
        return Err(Error::IncompatibleGrids {
            fine: n_dns,
            coarse: coarse.n_points,
        });
    }
    let r = n_dns / coarse.n_points;
    let mut ext = coarse_field.to_vec();
    ext.push(u_right);
    Ok((0..=n_dns)
        .map(|j| {
            let (i, k) = (j / r, j % r);
            if k == 0 {
                ext[i]
            } else {
                let w = k as f64 / r as f64;
                (1.0 - w) * ext[i] + w * ext[i + 1]
            }
        })
        .collect())
}

pub fn mse(u: &[f64], u_ref: &[f64]) -> Result<f64> {
    if u.len() != u_ref.len() {
        return Err(Error::DimensionMismatch {
            expected: u_ref.len(),
            got: u.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::InvalidArgument("mse of empty fields".into()));
    }
    Ok(u.iter().zip(u_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / u.len() as f64)
}

/// `step,t,node,x,u` rows for every snapshot.
pub fn write_dns_csv<W: Write>(w: W, traj: &DnsTrajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "t", "node", "x", "u"])?;
    let dx = traj.dx();
    for (s, (t, f)) in traj.times.iter().zip(&traj.fields).enumerate() {
        for (i, u) in f.iter().enumerate() {
            out.write_record([s.to_string(), t.to_string(), i.to_string(), (i as f64 * dx).to_string(), u.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
