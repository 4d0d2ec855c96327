use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dictionary::Dictionary;
use super::omp::{check_signal, omp, omp_with};
use super::types::{argmax_abs, PursuitConfig, PursuitResult, RandConfig};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Vector};

/// Seed for run `run` of a multi-draw estimate (splitmix64 of the mixed seed).
pub fn derive_seed(seed: u64, run: u64) -> u64 {
    let mut z = seed ^ run.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Randomized threshold selection.
///
/// Entries with `|u_i| ≥ tau_factor · max|u|` are candidates, drawn with
/// probability proportional to `|u_i|`. Masked entries never qualify.
pub fn rmpt_select<R: Rng + ?Sized>(
    u: &[f64],
    masked: &[bool],
    tau_factor: f64,
    rng: &mut R,
) -> Option<usize> {
    let top = argmax_abs(u, masked)?;
    let tau = tau_factor * u[top].abs();
    let candidates: Vec<usize> = (0..u.len())
        .filter(|&i| !masked.get(i).copied().unwrap_or(false))
        .filter(|&i| u[i].abs() >= tau && u[i] != 0.0)
        .collect();
    if candidates.len() <= 1 {
        return Some(top);
    }
    let total: f64 = candidates.iter().map(|&i| u[i].abs()).sum();
    let mut target = rng.random::<f64>() * total;
    for &i in &candidates {
        target -= u[i].abs();
        if target < 0.0 {
            return Some(i);
        }
    }
    candidates.last().copied()
}

/// OMP with randomized atom selection.
pub fn rand_omp<R: Rng + ?Sized>(
    dict: &Dictionary,
    x: &[f64],
    cfg: &PursuitConfig,
    tau_factor: f64,
    rng: &mut R,
) -> Result<PursuitResult> {
    omp_with(dict, x, cfg, |u, masked| {
        rmpt_select(u, masked, tau_factor, rng)
    })
}

/// Averaged estimate from several pursuit runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MmseEstimate {
    /// Mean dense code.
    pub code: Vector,
    pub reconstruction: Vector,
}

/// Approximate MMSE estimate: the mean of `rand.draws` Rand-OMP codes,
/// plus the deterministic OMP code when `include_map` is set.
///
/// Pursuit runs on `dict`; the averaged code is synthesized with
/// `synthesis` when given (same number of atoms), otherwise with `dict`.
/// Run `i` uses the seed `derive_seed(rand.seed, i)`, so results do not
/// depend on evaluation order.
pub fn mmse_estimate(
    dict: &Dictionary,
    synthesis: Option<&Dictionary>,
    x: &[f64],
    cfg: &PursuitConfig,
    rand: &RandConfig,
    include_map: bool,
) -> Result<MmseEstimate> {
    check_signal(dict, x)?;
    rand.validate()?;
    let synth = synthesis.unwrap_or(dict);
    if synth.m() != dict.m() || synth.n() != dict.n() {
        return Err(Error::ShapeMismatch(format!(
            "synthesis dictionary is {}x{}, analysis is {}x{}",
            synth.n(),
            synth.m(),
            dict.n(),
            dict.m()
        )));
    }
    let mut sum = vec![0.0; dict.m()];
    let mut add = |r: PursuitResult| {
        for (&i, &c) in r.code.support.iter().zip(&r.code.coeffs) {
            sum[i] += c;
        }
    };
    for run in 0..rand.draws {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rand.seed, run as u64));
        add(rand_omp(dict, x, cfg, rand.tau_factor, &mut rng)?);
    }
    let mut runs = rand.draws;
    if include_map {
        add(omp(dict, x, cfg)?);
        runs += 1;
    }
    let code: Vector = sum.iter().map(|v| v / runs as f64).collect();
    let mut reconstruction = vec![0.0; dict.n()];
    for (i, &c) in code.iter().enumerate() {
        if c != 0.0 {
            axpy(c, synth.atom(i), &mut reconstruction);
        }
    }
    Ok(MmseEstimate {
        code,
        reconstruction,
    })
}
