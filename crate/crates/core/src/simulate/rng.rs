//! Seeding and table sampling.
//!
//! Every replicate gets its own generator, seeded from the master seed, the
//! sample size and the replicate index through SplitMix64 mixing:
//!
//! ```text
//! s = mix(master); s = mix(s ^ n); s = mix(s ^ replicate)
//! ```
//!
//! where `mix` is one SplitMix64 output step (increment `0x9E3779B97F4A7C15`,
//! multipliers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`). The mixed value
//! seeds a ChaCha8 stream. Results therefore depend only on the seed triple,
//! never on scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{Error, Result};
use crate::table::ContingencyTable;

/// Tolerance on `Σ p = 1` for multinomial sampling.
pub const PROBABILITY_SUM_TOL: f64 = 1e-10;

/// One SplitMix64 step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replicate_seed(master: u64, n: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ n) ^ replicate)
}

pub fn replicate_rng(master: u64, n: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replicate_seed(master, n, replicate))
}

fn check_probabilities(p: &DVector<f64>) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain("empty probability vector"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain("probabilities must be finite and nonnegative"));
    }
    let s = p.sum();
    if (s - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::domain(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// Multinomial counts by sequential conditional binomials.
pub fn sample_multinomial_with_rng<R: Rng + ?Sized>(
    probabilities: &DVector<f64>,
    total: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    check_probabilities(probabilities)?;
    let k = probabilities.len();
    let mut out = vec![0; k];
    let mut left = total;
    let mut mass = 1.0;
    for i in 0..k - 1 {
        if left == 0 {
            break;
        }
        let p = probabilities[i];
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
        let draw = Binomial::new(left, q)
            .map_err(|e| Error::domain(format!("binomial parameters: {e}")))?
            .sample(rng);
        out[i] = draw;
        left -= draw;
        mass -= p;
    }
    out[k - 1] += left;
    Ok(out)
}

/// Multinomial table of `total` observations with the given shape.
pub fn sample_multinomial(
    probabilities: &DVector<f64>,
    total: u64,
    shape: Vec<usize>,
    seed: u64,
) -> Result<ContingencyTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ContingencyTable::new(sample_multinomial_with_rng(probabilities, total, &mut rng)?, shape)
}

pub fn sample_poisson_with_rng<R: Rng + ?Sized>(means: &DVector<f64>, rng: &mut R) -> Result<Vec<u64>> {
    means
        .iter()
        .map(|&m| {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::domain(format!("Poisson mean {m} is not positive and finite")));
            }
            let d = Poisson::new(m).map_err(|e| Error::domain(format!("Poisson mean {m}: {e}")))?;
            Ok(d.sample(rng) as u64)
        })
        .collect()
}

/// Independent Poisson counts with the given means.
pub fn sample_poisson(means: &DVector<f64>, shape: Vec<usize>, seed: u64) -> Result<ContingencyTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ContingencyTable::new(sample_poisson_with_rng(means, &mut rng)?, shape)
}
