use super::types::{PursuitConfig, PursuitResult, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix, Vector};

/// Convolutional dictionary: every global atom is a cyclic shift of a
/// zero-padded local filter. Global atom `f·N + t` places filter `f` at
/// positions `t, t+1, …, t+n−1` (mod `N`).
#[derive(Clone, Debug, PartialEq)]
pub struct CscDictionary {
    // Filters stored as rows (m × n).
    filters: Matrix,
    signal_len: usize,
    filter_norms: Vector,
}

impl CscDictionary {
    /// `local` is the `n × m` local dictionary.
    pub fn new(local: &Matrix, signal_len: usize) -> Result<Self> {
        if local.rows() == 0 || local.rows() > signal_len {
            return Err(Error::InvalidConfig(format!(
                "filter length {} must lie in 1..={signal_len}",
                local.rows()
            )));
        }
        let filters = local.transpose();
        let filter_norms: Vector = (0..filters.rows()).map(|f| norm2(filters.row(f))).collect();
        if let Some(f) = filter_norms.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::ZeroAtom(f));
        }
        Ok(Self {
            filters,
            signal_len,
            filter_norms,
        })
    }

    /// Filter length `n`.
    pub fn filter_len(&self) -> usize {
        self.filters.cols()
    }

    /// Number of local filters `m`.
    pub fn filter_count(&self) -> usize {
        self.filters.rows()
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// `m · N`.
    pub fn global_atoms(&self) -> usize {
        self.filter_count() * self.signal_len
    }

    pub fn filter(&self, f: usize) -> &[f64] {
        self.filters.row(f)
    }

    /// `Dᵀ r` by circular cross-correlation with each filter.
    pub fn correlate(&self, r: &[f64]) -> Vector {
        let big_n = self.signal_len;
        let mut out = vec![0.0; self.global_atoms()];
        for f in 0..self.filter_count() {
            let h = self.filter(f);
            for t in 0..big_n {
                let mut acc = 0.0;
                for (i, &hi) in h.iter().enumerate() {
                    acc += hi * r[(t + i) % big_n];
                }
                out[f * big_n + t] = acc;
            }
        }
        out
    }

    /// `D α` by circular convolution.
    pub fn synthesize(&self, alpha: &[f64]) -> Vector {
        let big_n = self.signal_len;
        let mut out = vec![0.0; big_n];
        for (g, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.add_atom(g, a, &mut out);
            }
        }
        out
    }

    fn add_atom(&self, g: usize, scale: f64, out: &mut [f64]) {
        let big_n = self.signal_len;
        let (f, t) = (g / big_n, g % big_n);
        for (i, &hi) in self.filter(f).iter().enumerate() {
            out[(t + i) % big_n] += scale * hi;
        }
    }

    /// The explicit `N × mN` global dictionary.
    pub fn materialize(&self) -> Matrix {
        let big_n = self.signal_len;
        let mut d = Matrix::zeros(big_n, self.global_atoms());
        for g in 0..self.global_atoms() {
            let (f, t) = (g / big_n, g % big_n);
            for (i, &hi) in self.filter(f).iter().enumerate() {
                d[((t + i) % big_n, g)] += hi;
            }
        }
        d
    }

    /// Whether global atoms `a` and `b` share a sample.
    pub fn overlaps(&self, a: usize, b: usize) -> bool {
        let big_n = self.signal_len;
        let diff = (a % big_n).abs_diff(b % big_n);
        diff.min(big_n - diff) < self.filter_len()
    }

    fn weight(&self, g: usize) -> f64 {
        1.0 / self.filter_norms[g / self.signal_len]
    }
}

/// Group thresholding: repeatedly keeps the largest remaining `|u_i|`
/// (lowest index on ties) and discards every atom overlapping it.
pub fn gmpt(u: &[f64], csc: &CscDictionary) -> Vector {
    debug_assert_eq!(u.len(), csc.global_atoms());
    let big_n = csc.signal_len();
    let reach = csc.filter_len() - 1;
    let mut order: Vec<usize> = (0..u.len()).filter(|&i| u[i] != 0.0).collect();
    order.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b)));
    let mut blocked = vec![false; big_n];
    let mut out = vec![0.0; u.len()];
    for g in order {
        let t = g % big_n;
        if blocked[t] {
            continue;
        }
        out[g] = u[g];
        if 2 * reach + 1 >= big_n {
            break;
        }
        for d in 0..=reach {
            blocked[(t + d) % big_n] = true;
            blocked[(t + big_n - d) % big_n] = true;
        }
    }
    out
}

/// Convolutional greedy pursuit; see [`gcmp_traced`].
pub fn gcmp(csc: &CscDictionary, x: &[f64], cfg: &PursuitConfig) -> Result<PursuitResult> {
    gcmp_traced(csc, x, cfg).map(|(r, _)| r)
}

/// Convolutional greedy pursuit, also returning the atoms added in each
/// iteration.
///
/// Each iteration adds `W_D · GMPT(W_D Dᵀ r)` to the code, i.e. the
/// projection coefficients of a set of mutually non-overlapping atoms.
/// `cfg.max_cardinality` bounds the number of iterations.
pub fn gcmp_traced(
    csc: &CscDictionary,
    x: &[f64],
    cfg: &PursuitConfig,
) -> Result<(PursuitResult, Vec<Vec<usize>>)> {
    if x.len() != csc.signal_len() {
        return Err(Error::ShapeMismatch(format!(
            "signal of length {} for a convolutional dictionary over {} samples",
            x.len(),
            csc.signal_len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    cfg.validate(csc.global_atoms())?;
    let x_norm = norm2(x);
    let mut alpha = vec![0.0; csc.global_atoms()];
    let mut residual = x.to_vec();
    let mut norms = vec![x_norm];
    let mut added = Vec::new();

    while !cfg.should_stop(norms.len() - 1, *norms.last().unwrap(), x_norm) {
        let u: Vector = csc
            .correlate(&residual)
            .iter()
            .enumerate()
            .map(|(g, c)| csc.weight(g) * c)
            .collect();
        let y = gmpt(&u, csc);
        let picked: Vec<usize> = (0..y.len()).filter(|&g| y[g] != 0.0).collect();
        if picked.is_empty() {
            break;
        }
        for &g in &picked {
            let c = csc.weight(g) * y[g];
            alpha[g] += c;
            csc.add_atom(g, -c, &mut residual);
        }
        norms.push(norm2(&residual));
        added.push(picked);
    }

    let reconstruction = csc.synthesize(&alpha);
    let result = PursuitResult {
        code: SparseCode::from_dense(&alpha),
        reconstruction,
        iterations: norms.len() - 1,
        residual_norms: norms,
        hit_iteration_cap: false,
    };
    Ok((result, added))
}
