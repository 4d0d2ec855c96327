use super::matrix::{dot, Matrix, Vector};
use crate::error::{Error, Result};

/// Smallest Schur-complement pivot accepted before a Gram matrix is
/// declared numerically singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = G`.
///
/// The factor can be grown one row at a time with [`CholFactor::append`],
/// which is how the greedy pursuits extend their support without
/// refactoring.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    order: usize,
    // Packed row-major lower triangle: row k holds k + 1 entries.
    packed: Vec<f64>,
}

impl CholFactor {
    /// The factor of the empty (0×0) Gram matrix.
    pub fn empty() -> Self {
        Self {
            order: 0,
            packed: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        let start = k * (k + 1) / 2;
        &self.packed[start..start + k + 1]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.packed[i * (i + 1) / 2 + j]
        }
    }

    /// Dense copy of `L`.
    pub fn lower(&self) -> Matrix {
        Matrix::from_fn(self.order, self.order, |i, j| self.at(i, j))
    }

    /// Factor of the Gram matrix grown by one atom.
    ///
    /// `gram_col[i]` is the inner product of the new atom with the i-th atom
    /// already in the factor and `gram_diag` its squared norm.
    pub fn append(&self, gram_col: &[f64], gram_diag: f64) -> Result<CholFactor> {
        let mut grown = self.clone();
        grown.append_in_place(gram_col, gram_diag)?;
        Ok(grown)
    }

    /// In-place variant of [`CholFactor::append`]; the factor is untouched on error.
    pub fn append_in_place(&mut self, gram_col: &[f64], gram_diag: f64) -> Result<()> {
        if gram_col.len() != self.order {
            return Err(Error::ShapeMismatch(format!(
                "gram column of length {} for a factor of order {}",
                gram_col.len(),
                self.order
            )));
        }
        let w = self.forward_substitute(gram_col);
        let pivot = gram_diag - dot(&w, &w);
        if !(pivot > PIVOT_TOLERANCE) {
            return Err(Error::NotPositiveDefinite {
                index: self.order,
                pivot,
            });
        }
        self.packed.extend_from_slice(&w);
        self.packed.push(pivot.sqrt());
        self.order += 1;
        Ok(())
    }

    /// Solves `L y = b`.
    pub fn forward_substitute(&self, b: &[f64]) -> Vector {
        debug_assert_eq!(b.len(), self.order);
        let mut y = Vec::with_capacity(self.order);
        for k in 0..self.order {
            let row = self.row(k);
            let s = b[k] - dot(&row[..k], &y[..k]);
            y.push(s / row[k]);
        }
        y
    }

    /// Solves `Lᵀ z = y`.
    pub fn backward_substitute(&self, y: &[f64]) -> Vector {
        debug_assert_eq!(y.len(), self.order);
        let mut z = y.to_vec();
        for k in (0..self.order).rev() {
            z[k] /= self.at(k, k);
            let zk = z[k];
            for (i, zi) in z.iter_mut().enumerate().take(k) {
                *zi -= self.at(k, i) * zk;
            }
        }
        z
    }

    /// Solves `G z = b` with `G = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Vector {
        self.backward_substitute(&self.forward_substitute(b))
    }

    /// `G⁻¹`, column by column.
    pub fn inverse(&self) -> Matrix {
        let n = self.order;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.set_col(j, &col);
            e[j] = 0.0;
        }
        // Symmetrize away the roundoff of the two triangular sweeps.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let l = self.lower();
        l.matmul(&l.transpose()).expect("square factor")
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn cholesky(g: &Matrix) -> Result<CholFactor> {
    if !g.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "cholesky of a non-square {}x{} matrix",
            g.rows(),
            g.cols()
        )));
    }
    let n = g.rows();
    let scale = g.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::ShapeMismatch(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut factor = CholFactor::empty();
    for k in 0..n {
        let col: Vec<f64> = (0..k).map(|i| g[(k, i)]).collect();
        factor.append_in_place(&col, g[(k, k)])?;
    }
    Ok(factor)
}

/// Least-squares coefficients `argmin_z ‖x − D_S z‖₂²`, through the
/// Cholesky factor of `D_Sᵀ D_S`.
pub fn ls_solve(d_s: &Matrix, x: &[f64]) -> Result<Vector> {
    if d_s.rows() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "sub-dictionary has {} rows but the signal has {} entries",
            d_s.rows(),
            x.len()
        )));
    }
    let dt = d_s.transpose();
    let gram = dt.matmul(d_s)?;
    let factor = cholesky(&gram)?;
    Ok(factor.solve(&dt.matvec(x)))
}

/// Gradient with respect to `A` of a loss whose gradient with respect to
/// `A⁻¹` is `upstream`: `−A⁻ᵀ · upstream · A⁻ᵀ`.
pub fn inverse_gradient(a_inv: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if !a_inv.is_square() || a_inv.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch(format!(
            "inverse {}x{} with upstream {}x{}",
            a_inv.rows(),
            a_inv.cols(),
            upstream.rows(),
            upstream.cols()
        )));
    }
    let a_inv_t = a_inv.transpose();
    let mut g = a_inv_t.matmul(upstream)?.matmul(&a_inv_t)?;
    g.scale(-1.0);
    Ok(g)
}
