use serde::{Deserialize, Serialize};

use qhaa::embedding::SourceMode;
use qhaa::grid::{BoundaryCondition, Grid1D};
use qhaa::homotopy::{AlphaMode, GuessMode, HomotopyConfig, Normalization};
use qhaa::lcu::LcuMode;
use qhaa::marching::SchemeKind;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Problem {
    pub nu: f64,
    pub length: f64,
    pub n_grid: usize,
    pub u_left: f64,
    pub u_right: f64,
    /// Only `cosine` has an analytic order-zero guess.
    pub initial: String,
}

impl Default for Problem {
    fn default() -> Self {
        Problem {
            nu: 0.001,
            length: 1.0,
            n_grid: 32,
            u_left: 1.0,
            u_right: -1.0,
            initial: "cosine".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Homotopy {
    pub h_hat: f64,
    pub order: usize,
    pub normalization: Normalization,
    pub alpha_mode: AlphaMode,
    pub guess: GuessMode,
    pub source_mode: SourceMode,
    pub max_vars: usize,
}

impl Default for Homotopy {
    fn default() -> Self {
        Homotopy {
            h_hat: -0.5,
            order: 4,
            normalization: Normalization::Normalized,
            alpha_mode: AlphaMode::TimeDependent,
            guess: GuessMode::Analytic,
            source_mode: SourceMode::Affine,
            max_vars: qhaa::embedding::DEFAULT_MAX_VARS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Order-by-order hierarchy on the grid.
    Sequential,
    /// Classical marching of the embedded linear system.
    Embedded,
    /// Emulated countdown circuit, one LCU per step.
    Tmcqc2,
    /// Emulated Neumann series of the one-shot system.
    OneshotLcu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scheme {
    pub mode: Mode,
    pub kind: SchemeKind,
    pub dt: f64,
    pub tau: usize,
    pub zeta: f64,
    pub neumann_p: usize,
    pub padding_c: Option<usize>,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme {
            mode: Mode::Sequential,
            kind: SchemeKind::ExplicitIterative,
            dt: 5e-3,
            tau: 100,
            zeta: 0.5,
            neumann_p: 20,
            padding_c: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delta {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Exact,
    Shots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quantum {
    pub enabled: bool,
    pub epsilon: f64,
    /// Second epsilon for Richardson extrapolation, smaller than `epsilon`.
    pub epsilon2: Option<f64>,
    pub delta: Delta,
    pub lcu_mode: LcuMode,
    pub shots: u64,
    pub seed: u64,
    pub readout: ReadoutKind,
}

impl Default for Quantum {
    fn default() -> Self {
        Quantum {
            enabled: false,
            epsilon: 1e-3,
            epsilon2: None,
            delta: Delta::Auto(AutoTag::Auto),
            lcu_mode: LcuMode::Dilated,
            shots: 100_000,
            seed: 0,
            readout: ReadoutKind::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dns {
    pub n_dns: usize,
    pub dt: Option<f64>,
    /// Snapshot spacing of the fine trajectory file.
    pub output_dt: Option<f64>,
}

impl Default for Dns {
    fn default() -> Self {
        Dns {
            n_dns: 512,
            dt: None,
            output_dt: Some(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            directory: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub homotopy: Homotopy,
    pub scheme: Scheme,
    pub quantum: Quantum,
    pub dns: Dns,
    pub outputs: Outputs,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| bad(format!("config: {e}")))
    }

    pub fn t_final(&self) -> f64 {
        self.scheme.dt * self.scheme.tau as f64
    }

    pub fn grid(&self) -> Result<Grid1D, CliError> {
        Ok(Grid1D::new(self.problem.length, self.problem.n_grid)?)
    }

    pub fn boundary(&self) -> Result<BoundaryCondition, CliError> {
        let p = &self.problem;
        match p.initial.as_str() {
            "cosine" => {
                let l = p.length;
                let bc = BoundaryCondition::new(p.u_left, p.u_right, move |x| (std::f64::consts::PI * x / l).cos(), l)?;
                Ok(bc)
            }
            other => Err(bad(format!("unknown initial profile `{other}`"))),
        }
    }

    pub fn homotopy_config(&self) -> Result<HomotopyConfig, CliError> {
        let h = &self.homotopy;
        Ok(HomotopyConfig::new(h.h_hat, h.order, self.problem.nu)?
            .with_normalization(h.normalization)
            .with_alpha_mode(h.alpha_mode))
    }

    /// Checks every precondition that can be checked without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if !(p.nu > 0.0 && p.nu.is_finite()) {
            return Err(bad(format!("problem.nu {} must be > 0", p.nu)));
        }
        if !(p.length > 0.0 && p.length.is_finite()) {
            return Err(bad(format!("problem.length {} must be > 0", p.length)));
        }
        self.grid()?;
        let bc = self.boundary()?;
        if (bc.u_left, bc.u_right) != (1.0, -1.0) {
            return Err(bad("the analytic guess needs u(0)=1 and u(L)=-1"));
        }
        self.homotopy_config()?;
        if self.homotopy.max_vars <= self.homotopy.order {
            return Err(bad("homotopy.max_vars must exceed the order"));
        }
        let s = &self.scheme;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(bad(format!("scheme.dt {} must be > 0", s.dt)));
        }
        if s.tau == 0 {
            return Err(bad("scheme.tau must be >= 1"));
        }
        if s.neumann_p == 0 {
            return Err(bad("scheme.neumann_p must be >= 1"));
        }
        if !(s.zeta > 0.0) {
            return Err(bad("scheme.zeta must be > 0"));
        }
        let q = &self.quantum;
        if !(q.epsilon > 0.0 && q.epsilon.is_finite()) {
            return Err(bad(format!("quantum.epsilon {} must be > 0", q.epsilon)));
        }
        if let Some(e2) = q.epsilon2 {
            if !(e2 > 0.0 && e2 < q.epsilon) {
                return Err(bad("quantum.epsilon2 must lie in (0, epsilon)"));
            }
        }
        if let Delta::Value(d) = q.delta {
            if !(d > 0.0) {
                return Err(bad("quantum.delta must be > 0 or \"auto\""));
            }
        }
        if q.readout == ReadoutKind::Shots && q.shots == 0 {
            return Err(bad("quantum.shots must be >= 1"));
        }
        let d = &self.dns;
        if d.n_dns == 0 || !d.n_dns.is_multiple_of(p.n_grid) {
            return Err(CliError::from(qhaa::Error::IncompatibleGrids {
                fine: d.n_dns,
                coarse: p.n_grid,
            }));
        }
        if let Some(dt) = d.dt {
            if !(dt > 0.0) {
                return Err(bad("dns.dt must be > 0"));
            }
        }
        if let Some(o) = d.output_dt {
            if !(o > 0.0) {
                return Err(bad("dns.output_dt must be > 0"));
            }
        }
        for f in &self.outputs.formats {
            if f != "csv" && f != "json" {
                return Err(bad(format!("unknown output format `{f}`")));
            }
        }
        Ok(())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.outputs.formats.iter().any(|f| f == format)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
