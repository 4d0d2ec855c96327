use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, Matrix, Vector};

/// An `n × m` dictionary with cached atom norms.
///
/// Correlations are norm-weighted (`u = W_D Dᵀ r` with
/// `W_D = diag(1/‖d_i‖)`), except for the optional DC atom whose weight is
/// exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Matrix,
    // Dᵀ, so every atom is a contiguous row.
    atoms_t: Matrix,
    atom_norms: Vector,
    weights: Vector,
    dc_index: Option<usize>,
}

impl Dictionary {
    pub fn new(atoms: Matrix) -> Result<Self> {
        Self::with_dc(atoms, None)
    }

    pub fn with_dc(atoms: Matrix, dc_index: Option<usize>) -> Result<Self> {
        if let Some(dc) = dc_index {
            if dc >= atoms.cols() {
                return Err(Error::InvalidConfig(format!(
                    "DC atom index {dc} out of range for {} atoms",
                    atoms.cols()
                )));
            }
        }
        let atoms_t = atoms.transpose();
        let atom_norms: Vector = (0..atoms.cols()).map(|i| norm2(atoms_t.row(i))).collect();
        if let Some(i) = atom_norms.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::ZeroAtom(i));
        }
        let weights = atom_norms
            .iter()
            .enumerate()
            .map(|(i, &nrm)| if Some(i) == dc_index { 1.0 } else { 1.0 / nrm })
            .collect();
        Ok(Self {
            atoms,
            atoms_t,
            atom_norms,
            weights,
            dc_index,
        })
    }

    /// Signal dimension.
    #[inline]
    pub fn n(&self) -> usize {
        self.atoms.rows()
    }

    /// Number of atoms.
    #[inline]
    pub fn m(&self) -> usize {
        self.atoms.cols()
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    /// Atom `i` as a contiguous slice.
    #[inline]
    pub fn atom(&self, i: usize) -> &[f64] {
        self.atoms_t.row(i)
    }

    pub fn atom_norms(&self) -> &[f64] {
        &self.atom_norms
    }

    /// Diagonal of `W_D`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dc_index(&self) -> Option<usize> {
        self.dc_index
    }

    /// `W_D Dᵀ r`.
    pub fn correlations(&self, r: &[f64]) -> Vector {
        debug_assert_eq!(r.len(), self.n());
        (0..self.m())
            .map(|i| self.weights[i] * dot(self.atom(i), r))
            .collect()
    }

    /// `Σ coeffs[k] · d_{support[k]}`, accumulated in support order.
    pub fn synthesize(&self, support: &[usize], coeffs: &[f64]) -> Vector {
        let mut out = vec![0.0; self.n()];
        for (&i, &c) in support.iter().zip(coeffs) {
            axpy(c, self.atom(i), &mut out);
        }
        out
    }

    /// `D α` for a dense code.
    pub fn synthesize_dense(&self, alpha: &[f64]) -> Vector {
        let mut out = vec![0.0; self.n()];
        for (i, &c) in alpha.iter().enumerate() {
            if c != 0.0 {
                axpy(c, self.atom(i), &mut out);
            }
        }
        out
    }

    /// `DᵀD`, entry `(i, j)` computed as `dot(d_i, d_j)`.
    pub fn gram(&self) -> Matrix {
        let m = self.m();
        let mut g = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = dot(self.atom(i), self.atom(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Same atoms, each scaled to unit norm.
    pub fn normalized(&self) -> Dictionary {
        let atoms = Matrix::from_fn(self.n(), self.m(), |r, c| {
            self.atoms[(r, c)] / self.atom_norms[c]
        });
        Dictionary::with_dc(atoms, self.dc_index).expect("unit atoms are nonzero")
    }
}
