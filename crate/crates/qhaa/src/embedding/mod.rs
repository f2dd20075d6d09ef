//! Closure of the deformation hierarchy into `dv/dt = A v + b`.
//!
//! Variable 0 is the guess `u0`, variables `1..=M` are `w_p`, and later
//! indices are products of `w` jets registered while closing the system.

pub mod symbolic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use crate::diffusion::DiffusionSolution;
use crate::error::{Error, Result};
use crate::grid::{build_first_derivative, build_second_derivative, Grid1D};
use crate::homotopy::{factorial, AlphaMode, HomotopyConfig, Normalization};
pub use symbolic::{Atom, Coeff, Factor, Monomial, Op};
use symbolic::{compress, hierarchy_rhs, product_rule, Compressed};

/// Where the nested `dw_1/dt` pieces of rows `p >= 2` go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    /// Into `b`, built from the sampled guess.
    #[default]
    Affine,
    /// Into blocks `(p, 0)` acting on `v0`.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    Guess,
    Product(Monomial),
}

impl Variable {
    pub fn label(&self) -> String {
        match self {
            Variable::Guess => "u0".into(),
            Variable::Product(m) => m.to_string(),
        }
    }

    /// Factor from normalized to raw scaling.
    fn raw_scale(&self) -> f64 {
        match self {
            Variable::Guess => 1.0,
            Variable::Product(m) => m.0.iter().map(|f| factorial(f.order)).product(),
        }
    }
}

/// Insertion-ordered bijection between variables and indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableRegistry {
    pub variables: Vec<Variable>,
    #[serde(skip)]
    index: HashMap<Variable, usize>,
}

impl VariableRegistry {
    fn insert(&mut self, v: Variable) -> (usize, bool) {
        if let Some(&i) = self.index.get(&v) {
            return (i, false);
        }
        let i = self.variables.len();
        self.index.insert(v.clone(), i);
        self.variables.push(v);
        (i, true)
    }

    pub fn get(&self, v: &Variable) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

/// One block contribution `num * coeff * op(v_col)`; `col = None` is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsTerm {
    pub col: Option<usize>,
    pub op: Op,
    pub coeff: Coeff,
    pub num: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSystem {
    pub order: usize,
    pub h_hat: f64,
    pub nu: f64,
    pub alpha_mode: AlphaMode,
    pub normalization: Normalization,
    pub source_mode: SourceMode,
    pub registry: VariableRegistry,
    pub rows: Vec<Vec<RhsTerm>>,
}

pub const DEFAULT_MAX_VARS: usize = 64;

pub fn derive_embedding(config: &HomotopyConfig, max_vars: usize) -> Result<EmbeddedSystem> {
    derive_embedding_with(config, max_vars, SourceMode::Affine)
}

pub fn derive_embedding_with(config: &HomotopyConfig, max_vars: usize, source_mode: SourceMode) -> Result<EmbeddedSystem> {
    config.validate()?;
    let m = config.order;
    if m == 0 {
        return Err(Error::InvalidArgument("embedding needs M >= 1".into()));
    }
    if max_vars < m + 1 {
        return Err(Error::InvalidArgument(format!("max_vars {max_vars} < M+1")));
    }
    let rhs = hierarchy_rhs(m);
    let mut reg = VariableRegistry::default();
    reg.insert(Variable::Guess);
    for p in 1..=m {
        reg.insert(Variable::Product(Monomial::single(p)));
    }
    let mut rows: Vec<Vec<RhsTerm>> = Vec::new();
    rows.push(vec![RhsTerm {
        col: Some(0),
        op: Op::D1,
        coeff: Coeff {
            nu: 1,
            ..Coeff::one()
        },
        num: 1.0,
    }]);
    let mut queue: VecDeque<usize> = (1..=m).collect();
    while let Some(idx) = queue.pop_front() {
        let Variable::Product(mono) = reg.variables[idx].clone() else {
            unreachable!("guess row is fixed")
        };
        let is_order = mono.degree() == 1 && mono.0[0].deriv == 0;
        let poly = if is_order {
            rhs[mono.0[0].order].clone()
        } else {
            product_rule(&mono, &rhs)?
        };
        let mut row = Vec::new();
        let mut pending = Vec::new();
        let compressed = compress(&poly).map_err(|e| match e {
            Error::UnrewritableMonomial(s) => Error::UnrewritableMonomial(format!("d/dt {mono}: {s}")),
            e => e,
        })?;
        for c in compressed {
            match c.target {
                None => row.push(source_term(c, is_order && mono.0[0].order == 1, source_mode)),
                Some(t) => {
                    let (col, fresh) = reg.insert(Variable::Product(t.clone()));
                    if fresh {
                        queue.push_back(col);
                        pending.push(t);
                    }
                    row.push(RhsTerm {
                        col: Some(col),
                        op: c.op,
                        coeff: c.coeff,
                        num: c.num,
                    });
                }
            }
        }
        if reg.len() > max_vars {
            let mut names: Vec<String> = reg.variables[max_vars..].iter().map(|v| v.label()).collect();
            names.extend(pending.iter().map(|m| m.to_string()));
            names.sort();
            names.dedup();
            return Err(Error::ClosureLimitExceeded {
                limit: max_vars,
                pending: names,
            });
        }
        if rows.len() <= idx {
            rows.resize(idx + 1, Vec::new());
        }
        rows[idx] = merge(row);
    }
    rows.resize(reg.len(), Vec::new());
    Ok(EmbeddedSystem {
        order: m,
        h_hat: config.h_hat,
        nu: config.nu,
        alpha_mode: config.alpha_mode,
        normalization: config.normalization,
        source_mode,
        registry: reg,
        rows,
    })
}

/// A known-field term. In the first-order row it is the coupling to `v0`.
fn source_term(c: Compressed, first_order_row: bool, mode: SourceMode) -> RhsTerm {
    let couples = c.coeff.atoms == [Atom::Source(0)] && (first_order_row || mode == SourceMode::Coupled);
    if couples {
        RhsTerm {
            col: Some(0),
            op: Op::D2,
            coeff: Coeff {
                atoms: vec![Atom::Alpha(0)],
                ..c.coeff
            },
            num: c.num,
        }
    } else {
        RhsTerm {
            col: None,
            op: Op::Identity,
            coeff: c.coeff,
            num: c.num,
        }
    }
}

fn merge(row: Vec<RhsTerm>) -> Vec<RhsTerm> {
    let mut acc: BTreeMap<(Option<usize>, Op, Coeff), f64> = BTreeMap::new();
    for t in row {
        *acc.entry((t.col, t.op, t.coeff)).or_insert(0.0) += t.num;
    }
    acc.into_iter()
        .filter(|(_, v)| v.abs() > 1e-13)
        .map(|((col, op, coeff), num)| RhsTerm { col, op, coeff, num })
        .collect()
}

impl EmbeddedSystem {
    pub fn n_vars(&self) -> usize {
        self.registry.len()
    }

    pub fn dim(&self, grid: &Grid1D) -> usize {
        self.n_vars() * grid.n_points
    }

    /// Sorted `(row, col)` pairs of nonzero blocks; affine terms excluded.
    pub fn block_pattern(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().filter_map(move |t| t.col.map(|c| (r, c))))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn has_affine(&self) -> bool {
        self.rows.iter().flatten().any(|t| t.col.is_none())
    }

    /// `[u0(x, 0), 0, ...]`.
    pub fn initial_state(&self, grid: &Grid1D, u0: &DiffusionSolution) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim(grid));
        for (i, x) in u0.sample(grid, 0.0).into_iter().enumerate() {
            v[i] = x;
        }
        v
    }

    pub fn to_document(&self) -> EmbeddingDocument {
        EmbeddingDocument {
            order: self.order,
            h_hat: self.h_hat,
            nu: self.nu,
            alpha_mode: self.alpha_mode,
            normalization: self.normalization,
            source_mode: self.source_mode,
            variables: self.registry.variables.iter().map(|v| v.label()).collect(),
            blocks: self
                .rows
                .iter()
                .enumerate()
                .flat_map(|(r, row)| {
                    row.iter().map(move |t| BlockDoc {
                        row: r,
                        col: t.col,
                        operator: t.op.name().into(),
                        coefficient: t.coeff.render(t.num),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub row: usize,
    /// `null` for the affine vector.
    pub col: Option<usize>,
    pub operator: String,
    pub coefficient: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDocument {
    #[serde(rename = "M")]
    pub order: usize,
    pub h_hat: f64,
    pub nu: f64,
    pub alpha_mode: AlphaMode,
    pub normalization: Normalization,
    pub source_mode: SourceMode,
    pub variables: Vec<String>,
    pub blocks: Vec<BlockDoc>,
}

struct FieldCache<'a> {
    grid: &'a Grid1D,
    u0: &'a DiffusionSolution,
    t: f64,
    guess: Option<&'a [f64]>,
    alpha: BTreeMap<u8, Vec<f64>>,
    source: BTreeMap<u8, Vec<f64>>,
}

impl<'a> FieldCache<'a> {
    fn alpha(&mut self, d: u8) -> Vec<f64> {
        let (g, u, t) = (self.grid, self.u0, self.t);
        self.alpha
            .entry(d)
            .or_insert_with(|| u.sample_derivative(g, t, d as u32))
            .clone()
    }

    fn source(&mut self, d: u8) -> Vec<f64> {
        if let Some(v) = self.source.get(&d) {
            return v.clone();
        }
        let n = self.grid.n_points;
        let v = if let Some(g) = self.guess {
            // discrete: s0 = a0 * D2 g, s_d = D2 s_{d-1}
            let op = build_first_derivative(self.grid);
            if d == 0 {
                let a0 = self.alpha(0);
                let du = op.apply(g);
                (0..n).map(|i| a0[i] * du[i]).collect()
            } else {
                let prev = self.source(d - 1);
                op.apply(&prev)
            }
        } else if d == 0 {
            let a0 = self.alpha(0);
            let du = build_first_derivative(self.grid).apply(&a0);
            (0..n).map(|i| a0[i] * du[i]).collect()
        } else {
            // Leibniz on a0 * a1
            let mut acc = vec![0.0; n];
            let mut binom = 1.0;
            for j in 0..=d {
                let a = self.alpha(j);
                let b = self.alpha(d - j + 1);
                for i in 0..n {
                    acc[i] += binom * a[i] * b[i];
                }
                binom = binom * (d - j) as f64 / (j + 1) as f64;
            }
            acc
        };
        self.source.insert(d, v.clone());
        v
    }

    fn coeff_field(&mut self, c: &Coeff, scalar: f64) -> Vec<f64> {
        let mut f = vec![scalar; self.grid.n_points];
        for a in &c.atoms {
            let g = match *a {
                Atom::Alpha(d) => self.alpha(d),
                Atom::Source(d) => self.source(d),
            };
            for (x, y) in f.iter_mut().zip(g) {
                *x *= y;
            }
        }
        f
    }
}

/// Dense `A` and `b` at time `t` (or `t = 0` in frozen mode).
pub fn assemble(system: &EmbeddedSystem, grid: &Grid1D, u0: &DiffusionSolution, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    assemble_with_guess(system, grid, u0, t, None)
}

/// As [`assemble`], but source fields are built from a given guess field on
/// the grid (`s0 = a0 * D2 g`, `s_d = D2^d s0`) instead of the series.
pub fn assemble_with_guess(
    system: &EmbeddedSystem,
    grid: &Grid1D,
    u0: &DiffusionSolution,
    t: f64,
    guess: Option<&[f64]>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = grid.n_points;
    let nv = system.n_vars();
    let ta = match system.alpha_mode {
        AlphaMode::TimeDependent => t,
        AlphaMode::Frozen => 0.0,
    };
    let mut cache = FieldCache {
        grid,
        u0,
        t: ta,
        guess,
        alpha: BTreeMap::new(),
        source: BTreeMap::new(),
    };
    let d1 = build_second_derivative(grid);
    let d2 = build_first_derivative(grid);
    let mut a = DMatrix::zeros(nv * n, nv * n);
    let mut b = DVector::zeros(nv * n);
    for (r, row) in system.rows.iter().enumerate() {
        for term in row {
            let scalar = term.num * term.coeff.scalar(system.h_hat, system.nu);
            let f = cache.coeff_field(&term.coeff, scalar);
            // interior rows only; boundary rows stay frozen
            for i in 1..n - 1 {
                match term.col {
                    None => b[r * n + i] += f[i],
                    Some(c) => match term.op {
                        Op::Identity => a[(r * n + i, c * n + i)] += f[i],
                        Op::D2 | Op::D1 => {
                            let s = if term.op == Op::D2 { &d2 } else { &d1 };
                            a[(r * n + i, c * n + i - 1)] += f[i] * s.lower;
                            a[(r * n + i, c * n + i)] += f[i] * s.diag;
                            a[(r * n + i, c * n + i + 1)] += f[i] * s.upper;
                        }
                    },
                }
            }
        }
    }
    if system.normalization == Normalization::Raw {
        let s: Vec<f64> = system.registry.variables.iter().map(|v| v.raw_scale()).collect();
        for r in 0..nv * n {
            let sr = s[r / n];
            b[r] *= sr;
            for c in 0..nv * n {
                a[(r, c)] *= sr / s[c / n];
            }
        }
    }
    (a, b)
}

/// `u = v0 + sum_{p=1..M} w_p`.
pub fn extract_solution(state: &[f64], system: &EmbeddedSystem, grid: &Grid1D) -> Result<Vec<f64>> {
    let n = grid.n_points;
    let expected = system.dim(grid);
    if state.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: state.len(),
        });
    }
    let mut u = state[..n].to_vec();
    for p in 1..=system.order {
        let s = match system.normalization {
            Normalization::Normalized => 1.0,
            Normalization::Raw => 1.0 / factorial(p),
        };
        for i in 0..n {
            u[i] += s * state[p * n + i];
        }
    }
    Ok(u)
}

/// Slice of variable `var` in a stacked state.
pub fn slice(state: &[f64], var: usize, grid: &Grid1D) -> Vec<f64> {
    let n = grid.n_points;
    state[var * n..(var + 1) * n].to_vec()
}

/// Matrix Market coordinate format, 1-based indices.
pub fn write_matrix_market<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &EmbeddedSystem) -> Vec<String> {
        s.registry.variables.iter().map(|v| v.label()).collect()
    }

    #[test]
    fn fourth_order_variables_and_pattern() {
        let s = derive_embedding(&HomotopyConfig::baseline(4), 64).unwrap();
        assert_eq!(labels(&s), ["u0", "w1", "w2", "w3", "w4", "w1^2", "w1*w2", "w1_x^2"]);
        let expect = vec![
            (0, 0),
            (1, 0),
            (2, 1),
            (3, 1),
            (3, 2),
            (3, 5),
            (4, 1),
            (4, 2),
            (4, 3),
            (4, 5),
            (4, 6),
            (5, 1),
            (6, 1),
            (6, 2),
            (6, 5),
            (6, 7),
            (7, 1),
        ];
        assert_eq!(s.block_pattern(), expect);
    }

    #[test]
    fn small_orders() {
        let s1 = derive_embedding(&HomotopyConfig::baseline(1), 64).unwrap();
        assert_eq!(labels(&s1), ["u0", "w1"]);
        assert_eq!(s1.rows[1].len(), 1);
        assert_eq!((s1.rows[1][0].col, s1.rows[1][0].op), (Some(0), Op::D2));
        assert!(!s1.has_affine());
        let s2 = derive_embedding(&HomotopyConfig::baseline(2), 64).unwrap();
        assert_eq!(s2.n_vars(), 3);
    }

    #[test]
    fn seventh_variable_uses_first_derivative() {
        let s = derive_embedding(&HomotopyConfig::baseline(4), 64).unwrap();
        assert_eq!(s.rows[7].len(), 1);
        let t = &s.rows[7][0];
        assert_eq!((t.col, t.op), (Some(1), Op::D2));
        assert_eq!(t.coeff.atoms, vec![Atom::Source(1)]);
        assert!((t.num - 2.0).abs() < 1e-15);
    }

    #[test]
    fn closure_counts_by_order() {
        let counts: Vec<usize> = (1..=5)
            .map(|m| derive_embedding(&HomotopyConfig::baseline(m), 64).unwrap().n_vars())
            .collect();
        assert_eq!(counts, [2, 3, 5, 8, 17]);
        // d/dt (w1_xx w2_xx) needs w1_xxx, outside the d <= 2 grammar
        for m in 6..=7 {
            match derive_embedding(&HomotopyConfig::baseline(m), 64) {
                Err(Error::UnrewritableMonomial(s)) => assert!(s.contains("w1_xxx"), "{s}"),
                other => panic!("M={m}: {other:?}"),
            }
        }
        // M=8 overflows 64 variables before reaching that monomial
        assert!(matches!(
            derive_embedding(&HomotopyConfig::baseline(8), 64),
            Err(Error::ClosureLimitExceeded { limit: 64, .. })
        ));
    }

    #[test]
    fn closure_limit_reported() {
        let r = derive_embedding(&HomotopyConfig::baseline(4), 6);
        match r {
            Err(Error::ClosureLimitExceeded { limit, pending }) => {
                assert_eq!(limit, 6);
                assert!(!pending.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let a = derive_embedding(&HomotopyConfig::baseline(5), 64).unwrap();
        let b = derive_embedding(&HomotopyConfig::baseline(5), 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extract_and_mismatch() {
        let s = derive_embedding(&HomotopyConfig::baseline(2), 64).unwrap();
        let g = Grid1D::unit(8).unwrap();
        let mut st = vec![0.0; 24];
        st[..8].copy_from_slice(&[1.0; 8]);
        assert_eq!(extract_solution(&st, &s, &g).unwrap(), vec![1.0; 8]);
        assert_eq!(extract_solution(&[0.0; 24], &s, &g).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            extract_solution(&[0.0; 16], &s, &g),
            Err(Error::DimensionMismatch { expected: 24, got: 16 })
        ));
    }

    #[test]
    fn matrix_market_roundtrip_header() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.5]);
        let mut buf = Vec::new();
        write_matrix_market(&m, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("%%MatrixMarket matrix coordinate real general\n2 2 2\n"));
    }
}
