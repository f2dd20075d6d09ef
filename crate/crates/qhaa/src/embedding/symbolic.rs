//! Polynomials in spatial jets of the homotopy terms with known-field
//! coefficients, plus the rewrite that folds products back into
//! `coeff * Op(monomial)` form.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// `d^deriv w_order / dx^deriv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub order: usize,
    pub deriv: u8,
}

impl Factor {
    pub fn new(order: usize, deriv: u8) -> Self {
        Self { order, deriv }
    }

    fn base(self) -> Self {
        Self::new(self.order, 0)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.order)?;
        match self.deriv {
            0 => Ok(()),
            d => write!(f, "_{}", "x".repeat(d as usize)),
        }
    }
}

/// Sorted multiset of factors.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial(pub Vec<Factor>);

impl Monomial {
    pub fn new(mut f: Vec<Factor>) -> Self {
        f.sort();
        Self(f)
    }

    pub fn single(order: usize) -> Self {
        Self(vec![Factor::new(order, 0)])
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn total_deriv(&self) -> u32 {
        self.0.iter().map(|f| f.deriv as u32).sum()
    }

    pub fn max_deriv(&self) -> u8 {
        self.0.iter().map(|f| f.deriv).max().unwrap_or(0)
    }

    fn base(&self) -> Self {
        Self::new(self.0.iter().map(|f| f.base()).collect())
    }

    fn without(&self, i: usize) -> Vec<Factor> {
        let mut v = self.0.clone();
        v.remove(i);
        v
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut i = 0;
        while i < self.0.len() {
            let mut k = 1;
            while i + k < self.0.len() && self.0[i + k] == self.0[i] {
                k += 1;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "{}", self.0[i])?;
            if k > 1 {
                write!(f, "^{k}")?;
            }
            i += k;
        }
        Ok(())
    }
}

/// Known fields: `Alpha(d) = d^d u0/dx^d`, `Source(d) = d^d (u0 du0/dx)/dx^d`.
/// `Source(0)` is evaluated with the finite-difference derivative of the sampled guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Atom {
    Alpha(u8),
    Source(u8),
}

impl Atom {
    fn dx(self) -> Self {
        match self {
            Atom::Alpha(d) => Atom::Alpha(d + 1),
            Atom::Source(d) => Atom::Source(d + 1),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Alpha(d) => write!(f, "a{d}"),
            Atom::Source(d) => write!(f, "s{d}"),
        }
    }
}

/// `h^h * (1+h)^hp1 * nu^nu * prod(atoms)` without the numeric factor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coeff {
    pub h: u32,
    pub hp1: u32,
    pub nu: u32,
    pub atoms: Vec<Atom>,
}

impl Coeff {
    pub fn one() -> Self {
        Self {
            h: 0,
            hp1: 0,
            nu: 0,
            atoms: Vec::new(),
        }
    }

    fn with_atom(mut self, a: Atom) -> Self {
        self.atoms.push(a);
        self.atoms.sort();
        self
    }

    pub fn scalar(&self, h_hat: f64, nu: f64) -> f64 {
        h_hat.powi(self.h as i32) * (1.0 + h_hat).powi(self.hp1 as i32) * nu.powi(self.nu as i32)
    }

    pub fn render(&self, num: f64) -> String {
        let mut parts = vec![format!("{num}")];
        let pw = |s: &str, k: u32| if k == 1 { s.to_string() } else { format!("{s}^{k}") };
        if self.h > 0 {
            parts.push(pw("h", self.h));
        }
        if self.hp1 > 0 {
            parts.push(pw("(1+h)", self.hp1));
        }
        if self.nu > 0 {
            parts.push(pw("nu", self.nu));
        }
        parts.extend(self.atoms.iter().map(|a| a.to_string()));
        parts.join("*")
    }
}

const ZERO_TOL: f64 = 1e-13;

/// Sum of `num * coeff * monomial`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    pub terms: BTreeMap<(Coeff, Monomial), f64>,
}

impl Poly {
    pub fn add(&mut self, c: Coeff, m: Monomial, v: f64) {
        let e = self.terms.entry((c, m)).or_insert(0.0);
        *e += v;
    }

    pub fn add_poly(&mut self, other: &Poly, scale: f64, f: impl Fn(&Coeff) -> Coeff) {
        for ((c, m), v) in &other.terms {
            self.add(f(c), m.clone(), v * scale);
        }
    }

    pub fn prune(mut self) -> Self {
        self.terms.retain(|_, v| v.abs() > ZERO_TOL);
        self
    }

    pub fn dx(&self) -> Poly {
        let mut out = Poly::default();
        for ((c, m), &v) in &self.terms {
            for (i, a) in c.atoms.iter().enumerate() {
                let mut atoms = c.atoms.clone();
                atoms[i] = a.dx();
                atoms.sort();
                out.add(Coeff { atoms, ..c.clone() }, m.clone(), v);
            }
            for i in 0..m.0.len() {
                let mut f = m.0.clone();
                f[i].deriv += 1;
                out.add(c.clone(), Monomial::new(f), v);
            }
        }
        out.prune()
    }

    pub fn dx_n(&self, n: u8) -> Poly {
        (0..n).fold(self.clone(), |p, _| p.dx())
    }

    pub fn mul_factors(&self, f: &[Factor]) -> Poly {
        let mut out = Poly::default();
        for ((c, m), &v) in &self.terms {
            let mut all = m.0.clone();
            all.extend_from_slice(f);
            out.add(c.clone(), Monomial::new(all), v);
        }
        out
    }
}

/// Builds `dw_p/dt` as jet polynomials for `p = 1..=max_order`.
pub fn hierarchy_rhs(max_order: usize) -> Vec<Poly> {
    let mut out: Vec<Poly> = vec![Poly::default()];
    if max_order == 0 {
        return out;
    }
    let mut j1 = Poly::default();
    j1.add(
        Coeff {
            h: 1,
            ..Coeff::one()
        }
        .with_atom(Atom::Source(0)),
        Monomial(vec![]),
        1.0,
    );
    out.push(j1);
    for p in 2..=max_order {
        let mut j = Poly::default();
        j.add_poly(&out[p - 1], 1.0, |c| Coeff {
            hp1: c.hp1 + 1,
            ..c.clone()
        });
        let h = Coeff {
            h: 1,
            ..Coeff::one()
        };
        let q = p - 1;
        j.add(h.clone().with_atom(Atom::Alpha(0)), Monomial(vec![Factor::new(q, 1)]), 1.0);
        j.add(h.clone().with_atom(Atom::Alpha(1)), Monomial(vec![Factor::new(q, 0)]), 1.0);
        j.add(
            Coeff {
                nu: 1,
                ..h.clone()
            },
            Monomial(vec![Factor::new(q, 2)]),
            -1.0,
        );
        for k in 1..=p.saturating_sub(2) {
            let l = q - k;
            j.add(h.clone(), Monomial::new(vec![Factor::new(k, 1), Factor::new(l, 0)]), 0.5);
            j.add(h.clone(), Monomial::new(vec![Factor::new(k, 0), Factor::new(l, 1)]), 0.5);
        }
        out.push(j.prune());
    }
    out
}

/// Time derivative of a product monomial.
pub fn product_rule(m: &Monomial, rhs: &[Poly]) -> Result<Poly> {
    let mut out = Poly::default();
    for (i, f) in m.0.iter().enumerate() {
        let j = rhs.get(f.order).ok_or(Error::MissingTerm(f.order))?;
        let d = j.dx_n(f.deriv).mul_factors(&m.without(i));
        out.add_poly(&d, 1.0, |c| c.clone());
    }
    Ok(out.prune())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    Identity,
    /// first derivative
    D2,
    /// second derivative
    D1,
}

impl Op {
    fn from_deriv(d: u8) -> Option<Self> {
        match d {
            0 => Some(Op::Identity),
            1 => Some(Op::D2),
            2 => Some(Op::D1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Identity => "I",
            Op::D2 => "D2",
            Op::D1 => "D1",
        }
    }
}

/// `num * coeff * op(target)`; `target = None` means a pure known field.
#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub coeff: Coeff,
    pub num: f64,
    pub op: Op,
    pub target: Option<Monomial>,
}

/// Coefficients of the terms of `d^n Q / dx^n`, `n` in 1..=2.
fn derivative_pattern(q: &Monomial, n: u8) -> BTreeMap<Monomial, f64> {
    let mut p = Poly::default();
    p.add(Coeff::one(), q.clone(), 1.0);
    p.dx_n(n).terms.into_iter().map(|((_, m), v)| (m, v)).collect()
}

/// Rewrites one polynomial into operator form.
///
/// Single factors become `Op(w_p)`. For products the part proportional to a
/// total first or second derivative of the undifferentiated monomial is
/// emitted as `D2` or `D1` of that monomial; whatever is left is returned as
/// plain products.
pub fn compress(poly: &Poly) -> Result<Vec<Compressed>> {
    let mut out = Vec::new();
    let poly = lower_high_jets(poly, &mut out)?;
    let mut groups: BTreeMap<(Coeff, Monomial, u32), BTreeMap<Monomial, f64>> = BTreeMap::new();
    for ((c, m), &v) in &poly.terms {
        if m.max_deriv() > 2 {
            return Err(Error::UnrewritableMonomial(format!("{} * {m}", c.render(v))));
        }
        match m.degree() {
            0 => out.push(Compressed {
                coeff: c.clone(),
                num: v,
                op: Op::Identity,
                target: None,
            }),
            1 => out.push(Compressed {
                coeff: c.clone(),
                num: v,
                op: Op::from_deriv(m.0[0].deriv).expect("deriv checked"),
                target: Some(Monomial::single(m.0[0].order)),
            }),
            _ => {
                groups
                    .entry((c.clone(), m.base(), m.total_deriv()))
                    .or_default()
                    .insert(m.clone(), v);
            }
        }
    }
    for ((c, q, d), mut terms) in groups {
        if d == 1 || d == 2 {
            let pattern = derivative_pattern(&q, d as u8);
            // The multiple cancels the entry whose derivative sits on the
            // highest order; leftovers then differentiate lower orders only,
            // and w1 jets evolve by known fields.
            let lead = pattern
                .keys()
                .filter(|m| m.max_deriv() == d as u8)
                .max_by_key(|m| m.0.iter().filter(|f| f.deriv == d as u8).map(|f| f.order).max());
            let lambda = lead.map_or(0.0, |m| terms.get(m).copied().unwrap_or(0.0) / pattern[m]);
            if lambda.abs() > ZERO_TOL {
                out.push(Compressed {
                    coeff: c.clone(),
                    num: lambda,
                    op: Op::from_deriv(d as u8).expect("d <= 2"),
                    target: Some(q.clone()),
                });
                for (m, pv) in &pattern {
                    *terms.entry(m.clone()).or_insert(0.0) -= lambda * pv;
                }
            }
        }
        for (m, v) in terms {
            if v.abs() > ZERO_TOL {
                out.push(Compressed {
                    coeff: c.clone(),
                    num: v,
                    op: Op::Identity,
                    target: Some(m),
                });
            }
        }
    }
    Ok(out)
}

/// Products holding a factor above second derivative are written as a total
/// first or second derivative of a lower jet plus a remainder. Among the
/// possible splits the one with the smallest remainder derivative is taken.
fn lower_high_jets(poly: &Poly, out: &mut Vec<Compressed>) -> Result<Poly> {
    let mut p = poly.clone();
    for _ in 0..256 {
        let Some(((c, m), v)) = p
            .terms
            .iter()
            .find(|((_, m), _)| m.degree() > 1 && m.max_deriv() > 2)
            .map(|(k, v)| (k.clone(), *v))
        else {
            return Ok(p);
        };
        let mut best: Option<(u8, u8, Monomial, BTreeMap<Monomial, f64>)> = None;
        for i in 0..m.0.len() {
            for k in [1u8, 2] {
                if m.0[i].deriv < 3 || m.0[i].deriv < k {
                    continue;
                }
                let mut q = m.0.clone();
                q[i].deriv -= k;
                let q = Monomial::new(q);
                if q.max_deriv() > 2 {
                    continue;
                }
                let pattern = derivative_pattern(&q, k);
                let rest = pattern.keys().filter(|x| **x != m).map(|x| x.max_deriv()).max().unwrap_or(0);
                if best.as_ref().is_none_or(|b| rest < b.0) {
                    best = Some((rest, k, q, pattern));
                }
            }
        }
        let Some((_, k, q, pattern)) = best else {
            return Err(Error::UnrewritableMonomial(format!("{} * {m}", c.render(v))));
        };
        let lambda = v / pattern[&m];
        out.push(Compressed {
            coeff: c.clone(),
            num: lambda,
            op: if k == 1 { Op::D2 } else { Op::D1 },
            target: Some(q),
        });
        for (pm, pv) in pattern {
            p.add(c.clone(), pm, -lambda * pv);
        }
        p = p.prune();
    }
    Err(Error::UnrewritableMonomial("derivative lowering did not terminate".into()))
}
