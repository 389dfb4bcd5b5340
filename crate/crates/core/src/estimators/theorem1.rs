use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dgp::Design;
use crate::error::{Error, Result};
use crate::normal;

/// Asymptotic variance `V = Var(E[Y_1 | X, P, D]) + E[P Var(Y_1 | X, P, D = 1)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremOneVariance {
    pub v: f64,
    pub var_conditional_mean: f64,
    pub expected_p_weighted_var: f64,
    /// Monte Carlo standard error of `v` from batch means.
    pub std_error: f64,
}

const DEFAULT_DRAWS: usize = 10_000_000;
const DEFAULT_SEED: u64 = 0x7e0_0001;
const BATCHES: usize = 100;

/// Mean and variance of `Y_1` given `X = x` and `U` truncated by the
/// moments `m` (`m[k] = E[U^k | ...]`).
fn treated_moments(design: Design, rho: f64, x: f64, m: &[f64; 5]) -> (f64, f64) {
    let s2 = 1.0 - rho * rho;
    let var_u = m[2] - m[1] * m[1];
    let a = x + 0.5;
    match design {
        Design::D1 => (a + rho * m[1], rho * rho * var_u + s2),
        Design::D2 => (a + (x + 1.0) * rho * m[1], (x + 1.0).powi(2) * (rho * rho * var_u + s2)),
        _ => {
            // Y_1 = (A + s xi)^2 with A = a + rho U
            let r = rho;
            let e2 = a * a + 2.0 * a * r * m[1] + r * r * m[2];
            let e4 = a.powi(4)
                + 4.0 * a.powi(3) * r * m[1]
                + 6.0 * a * a * r * r * m[2]
                + 4.0 * a * r.powi(3) * m[3]
                + r.powi(4) * m[4];
            let mean = e2 + s2;
            let second = e4 + 6.0 * s2 * e2 + 3.0 * s2 * s2;
            (mean, second - mean * mean)
        }
    }
}

/// [`theorem1_variance_with`] at 10^7 draws and a fixed seed.
pub fn theorem1_variance(design: Design, rho: f64) -> Result<TheoremOneVariance> {
    theorem1_variance_with(design, rho, DEFAULT_DRAWS, DEFAULT_SEED)
}

/// Simulates `(X, Z, D)` and evaluates the conditional moments of `Y_1`
/// exactly from truncated normal moments of `U`.
pub fn theorem1_variance_with(design: Design, rho: f64, draws: usize, seed: u64) -> Result<TheoremOneVariance> {
    if !matches!(design, Design::D1 | Design::D2 | Design::D3) {
        return Err(Error::Config(format!("asymptotic variance is defined for D1-D3, not {design}")));
    }
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if draws < BATCHES * 2 {
        return Err(Error::Config(format!("need at least {} draws", BATCHES * 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_batch = draws / BATCHES;
    let mut batch_v = Vec::with_capacity(BATCHES);
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for _ in 0..BATCHES {
        let (mut b1, mut b2, mut b3) = (0.0, 0.0, 0.0);
        for _ in 0..per_batch {
            let x: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.sample(StandardNormal);
            let d = z - u > 0.0;
            let m_treated = normal::truncated_moments(z, false);
            let (mean, _) = if d {
                treated_moments(design, rho, x, &m_treated)
            } else {
                treated_moments(design, rho, x, &normal::truncated_moments(z, true))
            };
            let (_, var1) = treated_moments(design, rho, x, &m_treated);
            b1 += mean;
            b2 += mean * mean;
            b3 += normal::cdf(z) * var1;
        }
        let k = per_batch as f64;
        let var_mean = b2 / k - (b1 / k).powi(2);
        batch_v.push(var_mean + b3 / k);
        s1 += b1;
        s2 += b2;
        s3 += b3;
    }
    let total = (per_batch * BATCHES) as f64;
    let var_conditional_mean = s2 / total - (s1 / total).powi(2);
    let expected_p_weighted_var = s3 / total;
    let bm = batch_v.iter().sum::<f64>() / BATCHES as f64;
    let bvar = batch_v.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok(TheoremOneVariance {
        v: var_conditional_mean + expected_p_weighted_var,
        var_conditional_mean,
        expected_p_weighted_var,
        std_error: (bvar / BATCHES as f64).sqrt(),
    })
}
