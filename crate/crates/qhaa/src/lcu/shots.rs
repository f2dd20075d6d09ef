use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{RegisterLayout, Statevector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub layout: RegisterLayout,
    /// Nonzero counts keyed by basis index.
    pub counts: BTreeMap<usize, u64>,
    pub n_shots: u64,
    pub seed: u64,
    /// Draws with counter = 0 and ancilla = 0.
    pub accepted: u64,
    pub p_succ_estimate: f64,
    /// `sqrt(count / accepted)` per data index of the success block.
    pub magnitudes: Vec<f64>,
}

impl ShotResult {
    /// Standard error of the acceptance-rate estimate at probability `p`.
    pub fn sigma(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n_shots as f64).sqrt()
    }
}

/// Multinomial draws over all basis states as a chain of binomials.
pub fn sample_shots(state: &Statevector, n_shots: u64, seed: u64) -> Result<ShotResult> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be >= 1".into()));
    }
    let l = state.layout;
    let probs: Vec<f64> = state.amps.iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = probs.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    let mut left = n_shots;
    let mut mass = total;
    for (i, p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if *p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q)
                .map_err(|e| Error::InvalidArgument(format!("binomial: {e}")))?
                .sample(&mut rng)
        };
        if k > 0 {
            counts.insert(i, k);
        }
        left -= k;
        mass -= p;
    }
    let base = l.index(0, 0, 0);
    let dd = l.data_dim();
    let accepted: u64 = counts.range(base..base + dd).map(|(_, c)| c).sum();
    let magnitudes = (0..dd)
        .map(|d| {
            let c = counts.get(&(base + d)).copied().unwrap_or(0);
            if accepted == 0 {
                0.0
            } else {
                (c as f64 / accepted as f64).sqrt()
            }
        })
        .collect();
    Ok(ShotResult {
        layout: l,
        counts,
        n_shots,
        seed,
        accepted,
        p_succ_estimate: accepted as f64 / n_shots as f64,
        magnitudes,
    })
}

/// `outcome_bits,count`.
pub fn write_shots_csv<W: Write>(w: W, shots: &ShotResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["outcome_bits", "count"])?;
    for (i, c) in &shots.counts {
        out.write_record([shots.layout.bits(*i), c.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
