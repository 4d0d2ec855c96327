use super::dictionary::Dictionary;
use super::types::{argmax_abs, PursuitConfig, PursuitResult, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sub, CholFactor, Vector};

pub(crate) fn check_signal(dict: &Dictionary, x: &[f64]) -> Result<()> {
    if x.len() != dict.n() {
        return Err(Error::ShapeMismatch(format!(
            "signal of length {} for a dictionary with {} rows",
            x.len(),
            dict.n()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    Ok(())
}

/// Growing OMP support with its progressive Cholesky factor.
pub(crate) struct Support {
    pub indices: Vec<usize>,
    pub masked: Vec<bool>,
    pub factor: CholFactor,
    /// `D_Sᵀ x`, aligned with `indices`.
    pub rhs: Vec<f64>,
}

impl Support {
    pub fn new(m: usize) -> Self {
        Self {
            indices: Vec::new(),
            masked: vec![false; m],
            factor: CholFactor::empty(),
            rhs: Vec::new(),
        }
    }

    /// Appends atom `i` given its Gram column against the current support,
    /// its squared norm and its correlation with the signal.
    pub fn push(&mut self, i: usize, gram_col: &[f64], gram_diag: f64, rhs: f64) -> Result<()> {
        self.factor.append_in_place(gram_col, gram_diag)?;
        self.indices.push(i);
        self.masked[i] = true;
        self.rhs.push(rhs);
        Ok(())
    }

    pub fn solve(&self) -> Vector {
        self.factor.solve(&self.rhs)
    }
}

/// Selects the next atom and appends it; on a singular Gram update the atom
/// is masked and exactly one further candidate is tried.
pub(crate) fn grow_support(
    support: &mut Support,
    u: &[f64],
    mut select: impl FnMut(&[f64], &[bool]) -> Option<usize>,
    mut gram_entry: impl FnMut(usize, usize) -> f64,
    mut signal_corr: impl FnMut(usize) -> f64,
) -> Result<usize> {
    let mut last = 0;
    for _attempt in 0..2 {
        let Some(i) = select(u, &support.masked) else {
            break;
        };
        last = i;
        let col: Vec<f64> = support.indices.iter().map(|&j| gram_entry(j, i)).collect();
        match support.push(i, &col, gram_entry(i, i), signal_corr(i)) {
            Ok(()) => return Ok(i),
            Err(Error::NotPositiveDefinite { .. }) => support.masked[i] = true,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RankDeficientSupport { atom: last })
}

/// OMP whose atom choice is delegated to `select`.
pub(crate) fn omp_with(
    dict: &Dictionary,
    x: &[f64],
    cfg: &PursuitConfig,
    mut select: impl FnMut(&[f64], &[bool]) -> Option<usize>,
) -> Result<PursuitResult> {
    check_signal(dict, x)?;
    cfg.validate(dict.m())?;
    let x_norm = norm2(x);
    let mut support = Support::new(dict.m());
    let mut residual = x.to_vec();
    let mut norms = vec![x_norm];
    let mut coeffs = Vec::new();
    let mut reconstruction = vec![0.0; dict.n()];

    while !cfg.should_stop(support.indices.len(), *norms.last().unwrap(), x_norm) {
        let u = dict.correlations(&residual);
        grow_support(
            &mut support,
            &u,
            &mut select,
            |a, b| dot(dict.atom(a), dict.atom(b)),
            |a| dot(dict.atom(a), x),
        )?;
        coeffs = support.solve();
        reconstruction = dict.synthesize(&support.indices, &coeffs);
        residual = sub(x, &reconstruction);
        norms.push(norm2(&residual));
    }

    Ok(PursuitResult {
        code: SparseCode {
            ambient_dim: dict.m(),
            support: support.indices,
            coeffs,
        },
        reconstruction,
        iterations: norms.len() - 1,
        residual_norms: norms,
        hit_iteration_cap: false,
    })
}

/// Orthogonal Matching Pursuit with norm-weighted atom selection.
///
/// Already-selected atoms are masked from later scans, so the support never
/// repeats. A zero signal yields an empty code after zero iterations.
pub fn omp(dict: &Dictionary, x: &[f64], cfg: &PursuitConfig) -> Result<PursuitResult> {
    omp_with(dict, x, cfg, argmax_abs)
}

/// Least-squares projection of `x` onto a known support:
/// `D_S (D_SᵀD_S)⁻¹ D_Sᵀ x`.
pub fn oracle_estimate(dict: &Dictionary, support: &[usize], x: &[f64]) -> Result<Vector> {
    check_signal(dict, x)?;
    let mut s = Support::new(dict.m());
    for &i in support {
        if i >= dict.m() {
            return Err(Error::InvalidConfig(format!(
                "support index {i} out of range"
            )));
        }
        let col: Vec<f64> = s
            .indices
            .iter()
            .map(|&j| dot(dict.atom(j), dict.atom(i)))
            .collect();
        s.push(
            i,
            &col,
            dot(dict.atom(i), dict.atom(i)),
            dot(dict.atom(i), x),
        )
        .map_err(|_| Error::RankDeficientSupport { atom: i })?;
    }
    Ok(dict.synthesize(&s.indices, &s.solve()))
}
