use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qhaa::diffusion::DiffusionSolution;
use qhaa::dns::{mse, restrict, run_dns, write_dns_csv, DnsConfig, DnsTrajectory};
use qhaa::embedding::{
    assemble_with_guess, derive_embedding_with, extract_solution, write_matrix_market, EmbeddedSystem,
};
use qhaa::grid::{build_second_derivative, inf_norm};
use qhaa::homotopy::{
    gamma_ratios, sum_series, DiagnosticsReport, GuessMode, Hierarchy, NormKind, TimeScheme,
};
use qhaa::lcu::{
    richardson, run_oneshot_emulated, run_tmcqc2, write_shots_csv, ComplexityReport, EmulationConfig, LcuMode,
    Readout, RegisterLayout, StepRecord,
};
use qhaa::marching::{
    build_oneshot, condition_diagnostics, dt_bound_closed_form, dt_stability_bound, integrate, p_min, ConditionReport, DtBound,
    ImplicitMethod, SchemeConfig, SchemeKind, DIVERGENCE_THRESHOLD,
};

use crate::config::{Delta, Mode, ReadoutKind, RunConfig};
use crate::output::{field_rows, OutDir};
use crate::CliError;

fn time_scheme(kind: SchemeKind) -> TimeScheme {
    if kind.is_explicit() {
        TimeScheme::Explicit
    } else {
        TimeScheme::Implicit
    }
}

fn guess_solution(cfg: &RunConfig) -> Result<DiffusionSolution, CliError> {
    Ok(DiffusionSolution::with_defaults(cfg.problem.nu, cfg.problem.length)?)
}

fn hierarchy(cfg: &RunConfig) -> Result<Hierarchy, CliError> {
    let h = Hierarchy::for_problem(cfg.homotopy_config()?, cfg.grid()?, &cfg.boundary()?)?;
    Ok(h.with_guess(cfg.homotopy.guess))
}

fn embedding(cfg: &RunConfig) -> Result<EmbeddedSystem, CliError> {
    Ok(derive_embedding_with(
        &cfg.homotopy_config()?,
        cfg.homotopy.max_vars,
        cfg.homotopy.source_mode,
    )?)
}

fn check_finite(fields: &[Vec<f64>], what: &str) -> Result<(), CliError> {
    for (s, f) in fields.iter().enumerate() {
        let m = f.iter().fold(0.0f64, |a, x| if x.is_finite() { a.max(x.abs()) } else { f64::INFINITY });
        if !(m <= DIVERGENCE_THRESHOLD) {
            return Err(CliError::divergence(format!("{what}: |u| reached {m} at step {s}")));
        }
    }
    Ok(())
}

/// Matrix-side numbers shared by `embed` and `solve`.
#[derive(Debug, Serialize)]
struct MatrixDiagnostics {
    n_vars: usize,
    dim: usize,
    dt: f64,
    dt_bound: Option<DtBound>,
    dt_bound_closed_form: f64,
    zeta: f64,
    /// Conditioning of `I - dt A` at the configured step.
    implicit_block: Option<ConditionReport>,
    /// Same at `dt = zeta / ||A||_inf`.
    implicit_block_at_zeta: Option<ConditionReport>,
    p_min_1e6: Option<usize>,
}

fn matrix_diagnostics(cfg: &RunConfig, sys: &EmbeddedSystem, a: &DMatrix<f64>) -> Result<MatrixDiagnostics, CliError> {
    let g = cfg.grid()?;
    let u0 = guess_solution(cfg)?;
    let dt = cfg.scheme.dt;
    let bound = dt_stability_bound(a).ok();
    let d1 = build_second_derivative(&g).inf_norm();
    let at = condition_diagnostics(&(a * dt)).ok();
    let an = inf_norm(a);
    let at_zeta = if an > 0.0 {
        condition_diagnostics(&(a * (cfg.scheme.zeta / an))).ok()
    } else {
        None
    };
    let pm = at.and_then(|c| c.gamma.and_then(|gm| p_min(c.kappa, gm, 1e-6).ok()));
    Ok(MatrixDiagnostics {
        n_vars: sys.n_vars(),
        dim: sys.dim(&g),
        dt,
        dt_bound: bound,
        dt_bound_closed_form: dt_bound_closed_form(d1, u0.norm_inf_t0(&g), sys.order, sys.h_hat, sys.nu),
        zeta: cfg.scheme.zeta,
        implicit_block: at,
        implicit_block_at_zeta: at_zeta,
        p_min_1e6: pm,
    })
}

pub fn embed(cfg: &RunConfig) -> Result<(), CliError> {
    let sys = embedding(cfg)?;
    let g = cfg.grid()?;
    let u0 = guess_solution(cfg)?;
    let (a, b) = assemble_with_guess(&sys, &g, &u0, 0.0, None);
    let diag = matrix_diagnostics(cfg, &sys, &a)?;
    let mut out = OutDir::create(cfg)?;
    if cfg.wants("json") {
        out.json("embedding.json", "system", &sys.to_document())?;
        out.json("embedding_diagnostics.json", "diagnostics", &diag)?;
    }
    let mut mm = Vec::new();
    write_matrix_market(&a, &mut mm)?;
    out.raw("embedding_A.mtx", "%", &mm, true)?;
    if cfg.wants("csv") {
        out.csv("embedding_b.csv", |w| {
            w.write_record(["row", "value"])?;
            for (i, v) in b.iter().enumerate() {
                w.write_record([i.to_string(), v.to_string()])?;
            }
            Ok(())
        })?;
    }
    println!("{} variables, dimension {}", sys.n_vars(), sys.dim(&g));
    out.report();
    Ok(())
}

type StepSystems = Vec<(DMatrix<f64>, DVector<f64>)>;

/// Per-step `(A_k, b_k)` with the configured guess handling.
fn step_systems(cfg: &RunConfig, sys: &EmbeddedSystem) -> Result<StepSystems, CliError> {
    let g = cfg.grid()?;
    let u0 = guess_solution(cfg)?;
    let (dt, tau) = (cfg.scheme.dt, cfg.scheme.tau);
    let guesses = match cfg.homotopy.guess {
        GuessMode::Analytic => None,
        GuessMode::DiscreteHeat => Some(hierarchy(cfg)?.guess_trajectory(dt, tau, time_scheme(cfg.scheme.kind))),
    };
    // implicit steps use coefficients at the new time
    let shift = usize::from(!cfg.scheme.kind.is_explicit());
    Ok((0..tau)
        .map(|k| {
            let kk = k + shift;
            let gs = guesses.as_ref().map(|v| v[kk].as_slice());
            assemble_with_guess(sys, &g, &u0, kk as f64 * dt, gs)
        })
        .collect())
}

fn emulation_config(cfg: &RunConfig, epsilon: f64) -> EmulationConfig {
    let q = &cfg.quantum;
    let mut e = EmulationConfig::new(epsilon).with_mode(q.lcu_mode);
    if let Delta::Value(d) = q.delta {
        e = e.with_delta(d);
    }
    if q.readout == ReadoutKind::Shots {
        e = e.with_readout(Readout::Shots {
            n: q.shots,
            seed: q.seed,
        });
    }
    e
}

/// Fails fast on the qubit cap before the per-step operators are built.
fn precheck_layout(cfg: &RunConfig, tau_register: usize, data_len: usize) -> Result<RegisterLayout, CliError> {
    let mut data = data_len.next_power_of_two();
    if cfg.quantum.lcu_mode == LcuMode::Dilated {
        data *= 2;
    }
    Ok(RegisterLayout::for_run(tau_register, cfg.quantum.lcu_mode.n_unitaries(), data)?)
}

#[derive(Debug, Serialize)]
struct EmulationRecord<'a> {
    layout: RegisterLayout,
    transcript: &'a [StepRecord],
    report: &'a ComplexityReport,
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let g = cfg.grid()?;
    let (dt, tau) = (cfg.scheme.dt, cfg.scheme.tau);
    match cfg.scheme.mode {
        Mode::Tmcqc2 => {
            let sys = embedding(cfg)?;
            precheck_layout(cfg, tau, sys.dim(&g) + usize::from(sys.has_affine()))?;
        }
        Mode::OneshotLcu => {
            let sys = embedding(cfg)?;
            let c = cfg.scheme.padding_c.unwrap_or(tau);
            precheck_layout(cfg, 1, (tau + c + 1) * sys.dim(&g))?;
        }
        _ => {}
    }
    let h = hierarchy(cfg)?;
    let terms = h.solve(dt, tau, time_scheme(cfg.scheme.kind))?;
    let report = DiagnosticsReport::build(&h, &terms, dt, tau, 1.0, cfg.problem.length)?;
    let mut out = OutDir::create(cfg)?;

    let mut matrix = None;
    let fields: Vec<Vec<f64>> = match cfg.scheme.mode {
        Mode::Sequential => sum_series(&terms)?,
        Mode::Embedded => {
            let sys = embedding(cfg)?;
            let steps = step_systems(cfg, &sys)?;
            let diag = matrix_diagnostics(cfg, &sys, &steps[0].0)?;
            if let Some(b) = diag.dt_bound {
                let sc = SchemeConfig {
                    zeta: cfg.scheme.zeta,
                    ..SchemeConfig::new(cfg.scheme.kind, dt, tau)?
                };
                sc.check_explicit(b.eigen)?;
            }
            let v0 = sys.initial_state(&g, &guess_solution(cfg)?);
            let states: Vec<DVector<f64>> = match cfg.scheme.kind {
                SchemeKind::ExplicitIterative | SchemeKind::ImplicitIterative => {
                    let tr = integrate(|k| steps[k].clone(), &v0, dt, tau, cfg.scheme.kind, ImplicitMethod::Direct)?;
                    if let Some(k) = tr.diverged_at {
                        return Err(CliError::divergence(format!("embedded state exceeded 1e6 at step {k}")));
                    }
                    tr.states
                }
                SchemeKind::ExplicitOneshot | SchemeKind::ImplicitOneshot => {
                    let c = cfg.scheme.padding_c.unwrap_or(tau);
                    let os = build_oneshot(&steps, dt, c, &v0, cfg.scheme.kind.is_explicit())?;
                    let x = os.solve_dense()?;
                    (0..=tau).map(|j| os.slot(&x, j)).collect()
                }
            };
            matrix = Some(diag);
            states
                .iter()
                .map(|s| extract_solution(s.as_slice(), &sys, &g))
                .collect::<Result<_, _>>()?
        }
        Mode::Tmcqc2 => {
            if !cfg.scheme.kind.is_explicit() {
                return Err(CliError::config("tmcqc2 marches explicit steps; use an explicit scheme kind"));
            }
            let sys = embedding(cfg)?;
            let steps = step_systems(cfg, &sys)?;
            matrix = Some(matrix_diagnostics(cfg, &sys, &steps[0].0)?);
            let v0 = sys.initial_state(&g, &guess_solution(cfg)?);
            let run = run_tmcqc2(&steps, &v0, dt, &emulation_config(cfg, cfg.quantum.epsilon))?;
            let rec = EmulationRecord {
                layout: run.layout,
                transcript: &run.transcript,
                report: &run.report,
            };
            out.json("emulation.json", "emulation", &rec)?;
            if let Some(s) = &run.shots {
                let mut buf = Vec::new();
                write_shots_csv(&mut buf, s)?;
                out.raw("shots.csv", "#", &buf, false)?;
            }
            if let Some(e2) = cfg.quantum.epsilon2 {
                let run2 = run_tmcqc2(&steps, &v0, dt, &emulation_config(cfg, e2))?;
                let ex: Vec<Vec<f64>> = run
                    .trajectory
                    .iter()
                    .zip(&run2.trajectory)
                    .map(|(a, b)| {
                        let r = richardson(a.as_slice(), b.as_slice(), cfg.quantum.epsilon, e2)?;
                        extract_solution(&r, &sys, &g)
                    })
                    .collect::<Result<_, _>>()?;
                check_finite(&ex, "richardson trajectory")?;
                out.csv("trajectory_richardson.csv", |w| field_rows(w, dt, g.dx, &ex))?;
            }
            run.trajectory
                .iter()
                .map(|s| extract_solution(s.as_slice(), &sys, &g))
                .collect::<Result<_, _>>()?
        }
        Mode::OneshotLcu => {
            let sys = embedding(cfg)?;
            let c = cfg.scheme.padding_c.unwrap_or(tau);
            let steps = step_systems(cfg, &sys)?;
            matrix = Some(matrix_diagnostics(cfg, &sys, &steps[0].0)?);
            let v0 = sys.initial_state(&g, &guess_solution(cfg)?);
            let os = build_oneshot(&steps, dt, c, &v0, cfg.scheme.kind.is_explicit())?;
            let run = run_oneshot_emulated(&os, cfg.scheme.neumann_p, &emulation_config(cfg, cfg.quantum.epsilon))?;
            let rec = EmulationRecord {
                layout: run.layout,
                transcript: &run.transcript,
                report: &run.report,
            };
            out.json("emulation.json", "emulation", &rec)?;
            if let Some(s) = &run.shots {
                let mut buf = Vec::new();
                write_shots_csv(&mut buf, s)?;
                out.raw("shots.csv", "#", &buf, false)?;
            }
            (0..=tau)
                .map(|j| extract_solution(os.slot(&run.history, j).as_slice(), &sys, &g))
                .collect::<Result<_, _>>()?
        }
    };
    check_finite(&fields, "solution")?;

    let reference = dns_reference(cfg, &mut out)?;
    let final_mse = mse(fields.last().expect("tau + 1 fields"), &reference)?;
    #[derive(Serialize)]
    struct SolveDiagnostics<'a> {
        series: &'a DiagnosticsReport,
        matrix: Option<MatrixDiagnostics>,
        mse_vs_dns: f64,
    }
    out.csv("trajectory.csv", |w| field_rows(w, dt, g.dx, &fields))?;
    out.json(
        "diagnostics.json",
        "diagnostics",
        &SolveDiagnostics {
            series: &report,
            matrix,
            mse_vs_dns: final_mse,
        },
    )?;
    println!("final MSE vs DNS {final_mse:e}");
    out.report();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DnsKey {
    nu: f64,
    length: f64,
    n_grid: usize,
    n_dns: usize,
    dt: Option<f64>,
    t_final: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DnsCache {
    key: DnsKey,
    restricted_final: Vec<f64>,
}

const DNS_CACHE: &str = "dns_cache.json";

fn dns_key(cfg: &RunConfig) -> DnsKey {
    DnsKey {
        nu: cfg.problem.nu,
        length: cfg.problem.length,
        n_grid: cfg.problem.n_grid,
        n_dns: cfg.dns.n_dns,
        dt: cfg.dns.dt,
        t_final: cfg.t_final(),
    }
}

fn run_reference(cfg: &RunConfig, output_dt: Option<f64>) -> Result<DnsTrajectory, CliError> {
    let dc = DnsConfig {
        n_dns: cfg.dns.n_dns,
        dt: cfg.dns.dt,
        t_final: cfg.t_final(),
        output_dt,
    };
    dc.validate(Some(&cfg.grid()?))?;
    Ok(run_dns(&dc, cfg.problem.nu, &cfg.boundary()?)?)
}

/// Restricted DNS field at `T`, reused from `dns_cache.json` when its key matches.
fn dns_reference(cfg: &RunConfig, out: &mut OutDir) -> Result<Vec<f64>, CliError> {
    let key = dns_key(cfg);
    if let Ok(text) = std::fs::read_to_string(out.path(DNS_CACHE)) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
            if let Ok(c) = serde_json::from_value::<DnsCache>(v["dns"].clone()) {
                if c.key == key {
                    return Ok(c.restricted_final);
                }
            }
        }
    }
    let tr = run_reference(cfg, None)?;
    let r = restrict(tr.final_field(), tr.n_dns, &cfg.grid()?)?;
    out.json(
        DNS_CACHE,
        "dns",
        &DnsCache {
            key,
            restricted_final: r.clone(),
        },
    )?;
    Ok(r)
}

pub fn sweep(cfg: &RunConfig, orders: &[usize], h_hats: &[f64], workers: usize) -> Result<(), CliError> {
    let mut out = OutDir::create(cfg)?;
    let reference = dns_reference(cfg, &mut out)?;
    let cells: Vec<(usize, f64)> = orders.iter().flat_map(|&m| h_hats.iter().map(move |&h| (m, h))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::new("error", e.to_string(), 1))?;
    let rows: Vec<Result<(usize, f64, f64, f64), CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, h)| {
                let mut c = cfg.clone();
                c.homotopy.order = m;
                c.homotopy.h_hat = h;
                let hier = hierarchy(&c)?;
                let terms = hier.solve(c.scheme.dt, c.scheme.tau, time_scheme(c.scheme.kind))?;
                let u = sum_series(&terms)?;
                let e = mse(u.last().expect("tau + 1 fields"), &reference)?;
                let gmax = gamma_ratios(&terms, NormKind::Max)
                    .map(|r| r.into_iter().fold(f64::NAN, f64::max))
                    .unwrap_or(f64::NAN);
                Ok((m, h, e, gmax))
            })
            .collect()
    });
    let rows: Vec<_> = rows.into_iter().collect::<Result<_, _>>()?;
    out.csv("sweep.csv", |w| {
        w.write_record(["M", "h_hat", "mse", "gamma_max"])?;
        for (m, h, e, g) in &rows {
            w.write_record([m.to_string(), h.to_string(), e.to_string(), g.to_string()])?;
        }
        Ok(())
    })?;
    println!("{} cells", rows.len());
    out.report();
    Ok(())
}

pub fn dns(cfg: &RunConfig) -> Result<(), CliError> {
    let g = cfg.grid()?;
    let tr = run_reference(cfg, cfg.dns.output_dt)?;
    let mut out = OutDir::create(cfg)?;
    if cfg.wants("csv") {
        let mut buf = Vec::new();
        write_dns_csv(&mut buf, &tr)?;
        out.raw("dns_fine.csv", "#", &buf, false)?;
        let restricted: Vec<Vec<f64>> = tr
            .fields
            .iter()
            .map(|f| restrict(f, tr.n_dns, &g))
            .collect::<Result<_, _>>()?;
        out.csv("dns_restricted.csv", |w| {
            w.write_record(["step", "t", "node", "x", "u"])?;
            for (s, (t, f)) in tr.times.iter().zip(&restricted).enumerate() {
                for (i, u) in f.iter().enumerate() {
                    w.write_record([s.to_string(), t.to_string(), i.to_string(), g.x(i).to_string(), u.to_string()])?;
                }
            }
            Ok(())
        })?;
    }
    let r = restrict(tr.final_field(), tr.n_dns, &g)?;
    out.json(
        DNS_CACHE,
        "dns",
        &DnsCache {
            key: dns_key(cfg),
            restricted_final: r,
        },
    )?;
    println!("dns dt {:e}, {} snapshots", tr.dt, tr.times.len());
    out.report();
    Ok(())
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let h = hierarchy(cfg)?;
    let (dt, tau) = (cfg.scheme.dt, cfg.scheme.tau);
    let terms = h.solve(dt, tau, time_scheme(cfg.scheme.kind))?;
    let report = DiagnosticsReport::build(&h, &terms, dt, tau, 1.0, cfg.problem.length)?;
    let mut stdout = std::io::stdout().lock();
    // a closed pipe is not an error for a report printer
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
