use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::LcuDecomposition;
use crate::error::{Error, Result};

/// Desk-scale statevector cap in qubits.
pub const QUBIT_CAP: usize = 26;

/// `counter (x) ancilla (x) data`, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    pub n_t: usize,
    pub n_a: usize,
    pub n_d: usize,
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

impl RegisterLayout {
    pub fn new(n_t: usize, n_a: usize, n_d: usize) -> Result<Self> {
        let needed = n_t + n_a + n_d;
        if needed > QUBIT_CAP {
            return Err(Error::RegisterCap { needed, cap: QUBIT_CAP });
        }
        Ok(RegisterLayout { n_t, n_a, n_d })
    }

    /// `n_t = ceil(log2 tau)`, `n_a = log2 C`, `n_d = ceil(log2 dim)`.
    pub fn for_run(tau: usize, n_unitaries: usize, data_dim: usize) -> Result<Self> {
        Self::new(ceil_log2(tau), ceil_log2(n_unitaries), ceil_log2(data_dim))
    }

    pub fn total(&self) -> usize {
        self.n_t + self.n_a + self.n_d
    }

    pub fn data_dim(&self) -> usize {
        1 << self.n_d
    }

    pub fn n_ancilla_states(&self) -> usize {
        1 << self.n_a
    }

    pub fn index(&self, counter: usize, ancilla: usize, data: usize) -> usize {
        (counter << (self.n_a + self.n_d)) | (ancilla << self.n_d) | data
    }

    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let d = idx & (self.data_dim() - 1);
        let a = (idx >> self.n_d) & (self.n_ancilla_states() - 1);
        (idx >> (self.n_a + self.n_d), a, d)
    }

    pub fn bits(&self, idx: usize) -> String {
        let w = self.total();
        (0..w).rev().map(|b| if idx >> b & 1 == 1 { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    pub layout: RegisterLayout,
    pub amps: Vec<Complex64>,
}

impl Statevector {
    /// `|counter>|0>|data/||data||>`.
    pub fn prepare(layout: RegisterLayout, counter: usize, data: &DVector<f64>) -> Result<Self> {
        if data.len() > layout.data_dim() || counter >= 1 << layout.n_t {
            return Err(Error::LayoutMismatch(format!(
                "data length {} / counter {counter} do not fit {layout:?}",
                data.len()
            )));
        }
        let norm = data.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("cannot prepare a zero data state".into()));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << layout.total()];
        let base = layout.index(counter, 0, 0);
        for (i, x) in data.iter().enumerate() {
            amps[base + i] = Complex64::new(x / norm, 0.0);
        }
        Ok(Statevector { layout, amps })
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probability(&self, counter: usize, ancilla: usize) -> f64 {
        let base = self.layout.index(counter, ancilla, 0);
        self.amps[base..base + self.layout.data_dim()].iter().map(|z| z.norm_sqr()).sum()
    }

    /// Unnormalized data amplitudes of one `(counter, ancilla)` block.
    pub fn block(&self, counter: usize, ancilla: usize) -> Vec<Complex64> {
        let base = self.layout.index(counter, ancilla, 0);
        self.amps[base..base + self.layout.data_dim()].to_vec()
    }

    /// Cyclic counter decrement on the ancilla-zero subspace.
    pub fn decrement_on_success(&mut self) {
        let l = self.layout;
        if l.n_t == 0 {
            return;
        }
        let nc = 1usize << l.n_t;
        let dd = l.data_dim();
        let blocks: Vec<Vec<Complex64>> = (0..nc).map(|c| self.block(c, 0)).collect();
        for c in 0..nc {
            let dst = l.index((c + nc - 1) % nc, 0, 0);
            self.amps[dst..dst + dd].copy_from_slice(&blocks[c]);
        }
    }

    /// Bit flip on the most significant data qubit inside one block.
    pub fn flip_data_msb(&mut self, counter: usize, ancilla: usize) {
        let h = self.layout.data_dim() / 2;
        let base = self.layout.index(counter, ancilla, 0);
        for i in 0..h {
            self.amps.swap(base + i, base + h + i);
        }
    }
}

/// Which counter block the LCU acts on; `None` acts on all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Controls {
    pub counter: Option<usize>,
}

/// `V^dag W V` on the ancilla register of the controlled block(s). Returns the
/// probability of the ancilla-zero pattern inside those blocks.
pub fn apply_lcu_once(state: &mut Statevector, decomp: &LcuDecomposition, controls: Controls) -> Result<f64> {
    let l = state.layout;
    let c = decomp.unitaries.len();
    if state.amps.len() != 1 << l.total() {
        return Err(Error::LayoutMismatch(format!("state length {} vs {} qubits", state.amps.len(), l.total())));
    }
    if c != l.n_ancilla_states() {
        return Err(Error::LayoutMismatch(format!("{c} unitaries vs {} ancilla qubits", l.n_a)));
    }
    if decomp.dim() != l.data_dim() {
        return Err(Error::LayoutMismatch(format!("unitary dim {} vs data dim {}", decomp.dim(), l.data_dim())));
    }
    let counters: Vec<usize> = match controls.counter {
        Some(k) if k >= 1 << l.n_t => {
            return Err(Error::LayoutMismatch(format!("counter {k} needs more than {} qubits", l.n_t)))
        }
        Some(k) => vec![k],
        None => (0..1 << l.n_t).collect(),
    };
    let dd = l.data_dim();
    let h = (c as f64).sqrt().recip();
    let sign = |a: usize, b: usize| if (a & b).count_ones().is_multiple_of(2) { h } else { -h };
    let mut p = 0.0;
    for k in counters {
        let input: Vec<DVector<Complex64>> = (0..c).map(|a| DVector::from_vec(state.block(k, a))).collect();
        // V then select-W
        let mid: Vec<DVector<Complex64>> = (0..c)
            .map(|a| {
                let mut v = DVector::zeros(dd);
                for (b, x) in input.iter().enumerate() {
                    v += x * Complex64::new(sign(a, b), 0.0);
                }
                &decomp.unitaries[a] * v
            })
            .collect();
        // V^dag (Hadamards are self-inverse)
        for a in 0..c {
            let mut v = DVector::zeros(dd);
            for (b, x) in mid.iter().enumerate() {
                v += x * Complex64::new(sign(a, b), 0.0);
            }
            let base = l.index(k, a, 0);
            state.amps[base..base + dd].copy_from_slice(v.as_slice());
        }
        p += state.probability(k, 0);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn layout_sizes() {
        let l = RegisterLayout::for_run(10, 2, 64).unwrap();
        assert_eq!((l.n_t, l.n_a, l.n_d), (4, 1, 6));
        assert_eq!(RegisterLayout::for_run(1, 4, 8).unwrap().n_t, 0);
        assert!(matches!(RegisterLayout::new(10, 2, 15), Err(Error::RegisterCap { needed: 27, .. })));
        let idx = l.index(9, 1, 33);
        assert_eq!(l.split(idx), (9, 1, 33));
        assert_eq!(l.bits(idx).len(), 11);
    }

    #[test]
    fn pauli_x_branch() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = 0.3;
        let d = LcuDecomposition::from_hermitian(&x, e).unwrap();
        let l = RegisterLayout::new(0, 1, 1).unwrap();
        let mut s = Statevector::prepare(l, 0, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let p = apply_lcu_once(&mut s, &d, Controls::default()).unwrap();
        assert_abs_diff_eq!(p, e.sin().powi(2), epsilon = 1e-14);
        let b = s.block(0, 0);
        assert_abs_diff_eq!(b[0].norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[1].re, e.sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn phased_identities_pass_through() {
        // two identities sum to 2I
        let one = super::super::CMatrix::identity(2, 2);
        let d = LcuDecomposition {
            mode: super::super::LcuMode::Dilated,
            epsilon: 1.0,
            delta: 1.0,
            unitaries: vec![one.clone(), one],
            weights: vec![0.5; 2],
            beta: 1.0,
            target: DMatrix::identity(2, 2),
            dilated: None,
        };
        let l = RegisterLayout::new(0, 1, 1).unwrap();
        let v = DVector::from_vec(vec![0.6, 0.8]);
        let mut s = Statevector::prepare(l, 0, &v).unwrap();
        let p = apply_lcu_once(&mut s, &d, Controls::default()).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.block(0, 0)[1].re, 0.8, epsilon = 1e-14);
    }

    #[test]
    fn zero_block_gives_zero_probability() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = LcuDecomposition::from_hermitian(&x, 0.3).unwrap();
        let l = RegisterLayout::new(1, 1, 1).unwrap();
        let mut s = Statevector::prepare(l, 1, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let p = apply_lcu_once(&mut s, &d, Controls { counter: Some(0) }).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn mismatched_layout() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = LcuDecomposition::from_hermitian(&x, 0.3).unwrap();
        let l = RegisterLayout::new(0, 1, 2).unwrap();
        let mut s = Statevector::prepare(l, 0, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(matches!(apply_lcu_once(&mut s, &d, Controls::default()), Err(Error::LayoutMismatch(_))));
    }
}
