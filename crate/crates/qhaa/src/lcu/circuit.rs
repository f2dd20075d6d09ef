use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    apply_lcu_once, build_unitaries, choose_delta, gate_estimate, pad_for_dilation, sample_shots, sparsity, Controls,
    LcuDecomposition, LcuMode, RegisterLayout, ShotResult, Statevector,
};
use crate::error::{Error, Result};
use crate::grid::inf_norm;
use crate::marching::{dt_stability_bound, OneShotSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    #[default]
    Exact,
    Shots { n: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmulationConfig {
    pub mode: LcuMode,
    pub epsilon: f64,
    /// `None` picks delta with [`choose_delta`].
    pub delta: Option<f64>,
    pub readout: Readout,
    /// Unitary synthesis accuracy for the gate estimate; defaults to `epsilon/10`.
    pub eps_u: Option<f64>,
}

impl EmulationConfig {
    pub fn new(epsilon: f64) -> Self {
        EmulationConfig {
            mode: LcuMode::Dilated,
            epsilon,
            delta: None,
            readout: Readout::Exact,
            eps_u: None,
        }
    }

    pub fn with_mode(mut self, mode: LcuMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub p_succ_exact: f64,
    pub state_norm: f64,
    pub countdown_value: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateInputs {
    pub s: f64,
    pub epsilon: f64,
    pub n: f64,
    pub eps_u: f64,
}

/// All estimates are order-of-magnitude with unit constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub gate_inputs: GateInputs,
    pub gate_estimate: f64,
    pub delta: f64,
    /// `epsilon * delta * ||J||_inf`.
    pub q: f64,
    pub eta: f64,
    pub p_succ_steps: Vec<f64>,
    pub p_succ_cumulative: f64,
    /// `(2 e d ||J psi|| / sqrt(beta))^2` for the first application.
    pub p_succ_simple_estimate: f64,
    /// `(e d ||J||)^(2 tau) ||Psi_tau||^2 / ||Psi_0||^2`.
    pub p_succ_effective_estimate: f64,
    /// `1 / p_succ_effective_estimate`.
    pub n_s_estimate: f64,
    pub norm_ratio: f64,
    pub p_succ_shots: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EmulationRun {
    pub layout: RegisterLayout,
    /// Rescaled post-selected states, `tau + 1` entries including the input.
    pub trajectory: Vec<DVector<f64>>,
    pub transcript: Vec<StepRecord>,
    pub report: ComplexityReport,
    pub shots: Option<ShotResult>,
    pub final_state: Statevector,
}

fn pow2_at_least(n: usize) -> usize {
    n.next_power_of_two()
}

fn pad_matrix(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), m.shape()).copy_from(m);
    p
}

fn pad_vector(v: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut p = DVector::zeros(n);
    p.rows_mut(0, v.len()).copy_from(v);
    p
}

/// Data-register vector for the decomposition's input convention.
fn encode(v: &DVector<f64>, mode: LcuMode) -> DVector<f64> {
    match mode {
        LcuMode::Dilated => pad_for_dilation(v),
        LcuMode::Split => v.clone(),
    }
}

/// Real part of the success block, undoing the dilation layout.
fn decode(block: &[num_complex::Complex64], mode: LcuMode) -> (DVector<f64>, f64) {
    let imag = block.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let re: Vec<f64> = block.iter().map(|z| z.re).collect();
    let v = match mode {
        LcuMode::Dilated => re[re.len() / 2..].to_vec(),
        LcuMode::Split => re,
    };
    (DVector::from_vec(v), imag)
}

fn estimate_eps_u(cfg: &EmulationConfig) -> f64 {
    cfg.eps_u.unwrap_or(cfg.epsilon / 10.0)
}

/// Iterative explicit marching: each step applies `E_k = I + dt A_k` (with
/// the affine part carried by one extra constant entry) through a
/// countdown-controlled LCU.
pub fn run_tmcqc2(
    steps: &[(DMatrix<f64>, DVector<f64>)],
    v0: &DVector<f64>,
    dt: f64,
    cfg: &EmulationConfig,
) -> Result<EmulationRun> {
    let tau = steps.len();
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let n = v0.len();
    for (a, b) in steps {
        if a.shape() != (n, n) || b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.nrows(),
            });
        }
    }
    if let Ok(bound) = dt_stability_bound(&steps[0].0) {
        if dt > bound.eigen {
            return Err(Error::StabilityViolation(format!("dt {dt} exceeds the explicit bound {}", bound.eigen)));
        }
    }
    let affine = steps.iter().any(|(_, b)| b.iter().any(|x| *x != 0.0));
    let dim = n + affine as usize;
    let p = pow2_at_least(dim);
    let ops: Vec<DMatrix<f64>> = steps
        .iter()
        .map(|(a, b)| {
            let mut e = DMatrix::identity(dim, dim);
            let mut top = e.view_mut((0, 0), (n, n));
            top += a * dt;
            if affine {
                e.view_mut((0, n), (n, 1)).copy_from(&(b * dt));
            }
            pad_matrix(&e, p)
        })
        .collect();
    let e_norm = ops.iter().map(inf_norm).fold(0.0, f64::max);
    let delta = match cfg.delta {
        Some(d) => d,
        None => {
            let widest = ops.iter().max_by(|x, y| inf_norm(x).total_cmp(&inf_norm(y))).unwrap_or(&ops[0]);
            choose_delta(widest, cfg.epsilon)?.delta
        }
    };
    let decomps: Vec<LcuDecomposition> = ops
        .iter()
        .map(|e| build_unitaries(e, cfg.epsilon, delta, cfg.mode))
        .collect::<Result<_>>()?;
    let data_dim = decomps[0].dim();
    let layout = RegisterLayout::for_run(tau, cfg.mode.n_unitaries(), data_dim)?;

    let mut aug = DVector::zeros(dim);
    aug.rows_mut(0, n).copy_from(v0);
    if affine {
        aug[n] = 1.0;
    }
    let psi0 = encode(&pad_vector(&aug, p), cfg.mode);
    let mut state = Statevector::prepare(layout, tau - 1, &psi0)?;
    let step_scale = 1.0 / (decomps[0].branch_factor() * delta);
    let mut scale = aug.norm();
    let mut traj = vec![v0.clone()];
    let mut transcript = Vec::with_capacity(tau);
    let mut p_steps = Vec::with_capacity(tau);
    let mut prev_p = 1.0;
    let mut last_aug = aug.clone();
    for (k, d) in decomps.iter().enumerate() {
        let c = tau - 1 - k;
        let p_cum = apply_lcu_once(&mut state, d, Controls { counter: Some(c) })?;
        if cfg.mode == LcuMode::Dilated {
            state.flip_data_msb(c, 0);
        }
        let next = if k + 1 < tau {
            state.decrement_on_success();
            c - 1
        } else {
            c
        };
        let norm = state.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("statevector norm drifted to {norm}")));
        }
        p_steps.push(if prev_p > 0.0 { p_cum / prev_p } else { 0.0 });
        prev_p = p_cum;
        transcript.push(StepRecord {
            step: k + 1,
            p_succ_exact: p_cum,
            state_norm: norm,
            countdown_value: next,
        });
        scale *= step_scale;
        let (v, _) = decode(&state.block(next, 0), cfg.mode);
        let v = v * scale;
        last_aug = v.rows(0, dim).into_owned();
        traj.push(v.rows(0, n).into_owned());
    }

    let shots = match cfg.readout {
        Readout::Exact => None,
        Readout::Shots { n: ns, seed } => Some(sample_shots(&state, ns, seed)?),
    };
    let beta = decomps[0].beta;
    let first = &ops[0] * pad_vector(&aug, p) / aug.norm();
    let q = cfg.epsilon * delta * e_norm;
    let eff = q.powi(2 * tau as i32) * last_aug.norm_squared() / aug.norm_squared();
    let eps_u = estimate_eps_u(cfg);
    let s = sparsity(&ops[0]) as f64;
    let report = ComplexityReport {
        gate_inputs: GateInputs {
            s,
            epsilon: cfg.epsilon,
            n: data_dim as f64,
            eps_u,
        },
        gate_estimate: gate_estimate(s, cfg.epsilon, data_dim as f64, eps_u)?,
        delta,
        q,
        eta: 1.0 / q,
        p_succ_steps: p_steps,
        p_succ_cumulative: prev_p,
        p_succ_simple_estimate: (2.0 * cfg.epsilon * delta * first.norm() / beta.sqrt()).powi(2),
        p_succ_effective_estimate: eff,
        n_s_estimate: 1.0 / eff,
        norm_ratio: aug.norm() / last_aug.norm(),
        p_succ_shots: shots.as_ref().map(|s| s.p_succ_estimate),
    };
    Ok(EmulationRun {
        layout,
        trajectory: traj,
        transcript,
        report,
        shots,
        final_state: state,
    })
}

#[derive(Debug, Clone)]
pub struct OneShotRun {
    pub layout: RegisterLayout,
    /// Emulated `sum_{p<P} J^p b` with `J = I - A_OS`.
    pub history: DVector<f64>,
    /// Terms actually applied; stops early when a term vanishes.
    pub terms_used: usize,
    pub transcript: Vec<StepRecord>,
    pub report: ComplexityReport,
    pub shots: Option<ShotResult>,
}

/// Truncated Neumann series of the one-shot matrix, each power of `J` applied
/// by one more LCU application on the previous term.
pub fn run_oneshot_emulated(os: &OneShotSystem, p_terms: usize, cfg: &EmulationConfig) -> Result<OneShotRun> {
    if p_terms == 0 {
        return Err(Error::InvalidArgument("P must be >= 1".into()));
    }
    let n = os.rhs.len();
    let j = DMatrix::<f64>::identity(n, n) - &os.matrix;
    let rho = j.clone().complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    if rho >= 1.0 {
        return Err(Error::NeumannDivergence(rho));
    }
    let jn = inf_norm(&j);
    let delta = match cfg.delta {
        Some(d) => d,
        None if jn > 0.0 => choose_delta(&j, cfg.epsilon)?.delta,
        None => 1.0,
    };
    if delta * jn >= 1.0 {
        return Err(Error::NeumannDivergence(delta * jn));
    }
    let p = pow2_at_least(n);
    let jp = pad_matrix(&j, p);
    let decomp = build_unitaries(&jp, cfg.epsilon, delta, cfg.mode)?;
    let layout = RegisterLayout::for_run(1, cfg.mode.n_unitaries(), decomp.dim())?;
    let step_scale = 1.0 / (decomp.branch_factor() * delta);

    let mut history = os.rhs.clone();
    let mut term = os.rhs.clone();
    let mut transcript = Vec::new();
    let mut p_steps = Vec::new();
    let mut used = 1;
    let mut cumulative = 1.0;
    let mut last_state = None;
    for k in 1..p_terms {
        let tn = term.norm();
        if tn == 0.0 {
            break;
        }
        let mut state = Statevector::prepare(layout, 0, &encode(&pad_vector(&term, p), cfg.mode))?;
        let ps = apply_lcu_once(&mut state, &decomp, Controls::default())?;
        if cfg.mode == LcuMode::Dilated {
            state.flip_data_msb(0, 0);
        }
        let (v, _) = decode(&state.block(0, 0), cfg.mode);
        term = v.rows(0, n).into_owned() * (tn * step_scale);
        history += &term;
        used = k + 1;
        cumulative *= ps;
        p_steps.push(ps);
        transcript.push(StepRecord {
            step: k,
            p_succ_exact: ps,
            state_norm: state.norm(),
            countdown_value: 0,
        });
        last_state = Some(state);
    }
    let shots = match (cfg.readout, &last_state) {
        (Readout::Shots { n: ns, seed }, Some(s)) => Some(sample_shots(s, ns, seed)?),
        _ => None,
    };
    let eps_u = estimate_eps_u(cfg);
    let s = sparsity(&jp) as f64;
    let q = cfg.epsilon * delta * jn;
    let b = &os.rhs;
    let first = &j * b / b.norm().max(f64::MIN_POSITIVE);
    let steps = p_steps.len() as i32;
    let eff = q.powi(2 * steps) * term.norm_squared() / b.norm_squared().max(f64::MIN_POSITIVE);
    let report = ComplexityReport {
        gate_inputs: GateInputs {
            s,
            epsilon: cfg.epsilon,
            n: decomp.dim() as f64,
            eps_u,
        },
        gate_estimate: gate_estimate(s.max(1.0), cfg.epsilon, decomp.dim() as f64, eps_u)?,
        delta,
        q,
        eta: if q > 0.0 { 1.0 / q } else { f64::INFINITY },
        p_succ_steps: p_steps,
        p_succ_cumulative: cumulative,
        p_succ_simple_estimate: (2.0 * cfg.epsilon * delta * first.norm() / decomp.beta.sqrt()).powi(2),
        p_succ_effective_estimate: eff,
        n_s_estimate: if eff > 0.0 { 1.0 / eff } else { f64::INFINITY },
        norm_ratio: b.norm() / history.norm(),
        p_succ_shots: shots.as_ref().map(|s| s.p_succ_estimate),
    };
    Ok(OneShotRun {
        layout,
        history,
        terms_used: used,
        transcript,
        report,
        shots,
    })
}
