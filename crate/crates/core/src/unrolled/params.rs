use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::pursuit::Dictionary;

/// Dual-dictionary LGM parameters: the analysis dictionary drives atom
/// selection and least squares, the synthesis dictionary rebuilds the signal.
///
/// With a DC atom, its column in both dictionaries is a constant vector whose
/// value is the corresponding learned scale; that column is not a free
/// parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct LgmParams {
    analysis: Dictionary,
    synthesis: Dictionary,
    dc_scale_analysis: f64,
    dc_scale_synthesis: f64,
}

/// Initial value of both DC scales.
pub const DC_SCALE_INIT: f64 = 2.5;

impl LgmParams {
    pub fn new(analysis: Matrix, synthesis: Matrix) -> Result<Self> {
        Self::from_parts(analysis, synthesis, None, (0.0, 0.0))
    }

    /// `D = D₂`.
    pub fn tied(d: Matrix) -> Result<Self> {
        Self::new(d.clone(), d)
    }

    /// Appends a DC atom (index `m`) to both base dictionaries.
    pub fn with_dc(base_analysis: &Matrix, base_synthesis: &Matrix, scale: f64) -> Result<Self> {
        let widen = |d: &Matrix| {
            Matrix::from_fn(d.rows(), d.cols() + 1, |i, j| {
                if j < d.cols() {
                    d[(i, j)]
                } else {
                    0.0
                }
            })
        };
        let dc = base_analysis.cols();
        Self::from_parts(
            widen(base_analysis),
            widen(base_synthesis),
            Some(dc),
            (scale, scale),
        )
    }

    /// Builds the parameters, overwriting the DC column (if any) with the scales.
    pub fn from_parts(
        mut analysis: Matrix,
        mut synthesis: Matrix,
        dc_index: Option<usize>,
        dc_scales: (f64, f64),
    ) -> Result<Self> {
        if analysis.shape() != synthesis.shape() {
            return Err(Error::ShapeMismatch(format!(
                "analysis dictionary is {}x{}, synthesis is {}x{}",
                analysis.rows(),
                analysis.cols(),
                synthesis.rows(),
                synthesis.cols()
            )));
        }
        if let Some(dc) = dc_index {
            if dc >= analysis.cols() {
                return Err(Error::InvalidConfig(format!(
                    "DC atom index {dc} out of range"
                )));
            }
            if !(dc_scales.0.is_finite() && dc_scales.1.is_finite()) {
                return Err(Error::NonFinite("DC scale"));
            }
            for i in 0..analysis.rows() {
                analysis[(i, dc)] = dc_scales.0;
                synthesis[(i, dc)] = dc_scales.1;
            }
        }
        if analysis
            .as_slice()
            .iter()
            .chain(synthesis.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dictionary"));
        }
        let (a, s) = if dc_index.is_some() {
            dc_scales
        } else {
            (0.0, 0.0)
        };
        Ok(Self {
            analysis: Dictionary::with_dc(analysis, dc_index)?,
            synthesis: Dictionary::with_dc(synthesis, dc_index)?,
            dc_scale_analysis: a,
            dc_scale_synthesis: s,
        })
    }

    pub fn analysis(&self) -> &Dictionary {
        &self.analysis
    }

    pub fn synthesis(&self) -> &Dictionary {
        &self.synthesis
    }

    pub fn dc_index(&self) -> Option<usize> {
        self.analysis.dc_index()
    }

    pub fn dc_scales(&self) -> (f64, f64) {
        (self.dc_scale_analysis, self.dc_scale_synthesis)
    }

    pub fn n(&self) -> usize {
        self.analysis.n()
    }

    pub fn m(&self) -> usize {
        self.analysis.m()
    }

    pub fn zero_grad(&self) -> LgmGrad {
        LgmGrad {
            analysis: Matrix::zeros(self.n(), self.m()),
            synthesis: Matrix::zeros(self.n(), self.m()),
            dc_scale_analysis: 0.0,
            dc_scale_synthesis: 0.0,
        }
    }

    /// Parameters as one flat vector: analysis, synthesis (row-major), then
    /// the two DC scales.
    pub fn flatten(&self) -> Vector {
        let mut v = self.analysis.atoms().as_slice().to_vec();
        v.extend_from_slice(self.synthesis.atoms().as_slice());
        v.push(self.dc_scale_analysis);
        v.push(self.dc_scale_synthesis);
        v
    }

    /// Inverse of [`LgmParams::flatten`].
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let len = self.n() * self.m();
        if flat.len() != 2 * len + 2 {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector of length {}, expected {}",
                flat.len(),
                2 * len + 2
            )));
        }
        Self::from_parts(
            Matrix::from_vec(self.n(), self.m(), flat[..len].to_vec())?,
            Matrix::from_vec(self.n(), self.m(), flat[len..2 * len].to_vec())?,
            self.dc_index(),
            (flat[2 * len], flat[2 * len + 1]),
        )
    }
}

/// Gradient with the same layout as [`LgmParams`]; DC columns stay zero and
/// their contribution lives in the scale entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LgmGrad {
    pub analysis: Matrix,
    pub synthesis: Matrix,
    pub dc_scale_analysis: f64,
    pub dc_scale_synthesis: f64,
}

impl LgmGrad {
    pub fn add_assign(&mut self, other: &LgmGrad) {
        self.analysis.add_assign(&other.analysis);
        self.synthesis.add_assign(&other.synthesis);
        self.dc_scale_analysis += other.dc_scale_analysis;
        self.dc_scale_synthesis += other.dc_scale_synthesis;
    }

    pub fn scale(&mut self, alpha: f64) {
        self.analysis.scale(alpha);
        self.synthesis.scale(alpha);
        self.dc_scale_analysis *= alpha;
        self.dc_scale_synthesis *= alpha;
    }

    /// Same order as [`LgmParams::flatten`].
    pub fn flatten(&self) -> Vector {
        let mut v = self.analysis.as_slice().to_vec();
        v.extend_from_slice(self.synthesis.as_slice());
        v.push(self.dc_scale_analysis);
        v.push(self.dc_scale_synthesis);
        v
    }

    /// Moves the accumulated DC-column gradient into the scale entries.
    pub(crate) fn fold_dc(&mut self, dc_index: Option<usize>) {
        if let Some(dc) = dc_index {
            for i in 0..self.analysis.rows() {
                self.dc_scale_analysis += std::mem::take(&mut self.analysis[(i, dc)]);
                self.dc_scale_synthesis += std::mem::take(&mut self.synthesis[(i, dc)]);
            }
        }
    }
}

/// LISTA parameters: `α_t = S_θ(α_{t−1} + W(x − D1·α_{t−1}))`, output `D2·α_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ListaParams {
    /// `m × n`.
    pub w: Matrix,
    /// `n × m`, used inside the recurrence.
    pub d1: Matrix,
    /// `n × m`, synthesis.
    pub d2: Matrix,
    /// Per-atom thresholds, `≥ 0`.
    pub theta: Vector,
    pub layers: usize,
}

/// Power-method iterations used to estimate `λ_max(DᵀD)`.
pub const POWER_ITERATIONS: usize = 100;

/// Largest eigenvalue of `DᵀD`, by power iteration from a fixed start.
pub fn spectral_norm_sq(d: &Matrix) -> f64 {
    let mut v = vec![1.0 / (d.cols() as f64).sqrt(); d.cols()];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = d.tr_matvec(&d.matvec(&v));
        let nrm = crate::linalg::norm2(&w);
        if nrm == 0.0 {
            return 0.0;
        }
        lambda = nrm;
        v = w.iter().map(|x| x / nrm).collect();
    }
    lambda
}

impl ListaParams {
    /// ISTA-tied initialization: `W = Dᵀ/c`, `D1 = D2 = D`, `θ = λ/c` with
    /// `c = 1.05·λ_max(DᵀD)`.
    pub fn from_dictionary(d: &Matrix, lambda: f64, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig(
                "LISTA needs at least one layer".into(),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "LISTA λ {lambda} must be non-negative"
            )));
        }
        let c = 1.05 * spectral_norm_sq(d);
        if !(c > 0.0) {
            return Err(Error::AllZeroInput);
        }
        let mut w = d.transpose();
        w.scale(1.0 / c);
        Ok(Self {
            w,
            d1: d.clone(),
            d2: d.clone(),
            theta: vec![lambda / c; d.cols()],
            layers,
        })
    }

    pub fn n(&self) -> usize {
        self.d1.rows()
    }

    pub fn m(&self) -> usize {
        self.d1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.w.shape() != (m, n) || self.d2.shape() != (n, m) || self.theta.len() != m {
            return Err(Error::ShapeMismatch(
                "inconsistent LISTA parameter shapes".into(),
            ));
        }
        if self.layers == 0 {
            return Err(Error::InvalidConfig(
                "LISTA needs at least one layer".into(),
            ));
        }
        if self.theta.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidConfig(
                "LISTA thresholds must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> ListaGrad {
        ListaGrad {
            w: Matrix::zeros(self.m(), self.n()),
            d1: Matrix::zeros(self.n(), self.m()),
            d2: Matrix::zeros(self.n(), self.m()),
            theta: vec![0.0; self.m()],
        }
    }

    /// `W`, `D1`, `D2`, `θ`, concatenated.
    pub fn flatten(&self) -> Vector {
        let mut v = self.w.as_slice().to_vec();
        v.extend_from_slice(self.d1.as_slice());
        v.extend_from_slice(self.d2.as_slice());
        v.extend_from_slice(&self.theta);
        v
    }

    /// Inverse of [`ListaParams::flatten`]; thresholds are clamped at zero.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let (n, m) = (self.n(), self.m());
        let len = n * m;
        if flat.len() != 3 * len + m {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector of length {}, expected {}",
                flat.len(),
                3 * len + m
            )));
        }
        Ok(Self {
            w: Matrix::from_vec(m, n, flat[..len].to_vec())?,
            d1: Matrix::from_vec(n, m, flat[len..2 * len].to_vec())?,
            d2: Matrix::from_vec(n, m, flat[2 * len..3 * len].to_vec())?,
            theta: flat[3 * len..].iter().map(|t| t.max(0.0)).collect(),
            layers: self.layers,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ListaGrad {
    pub w: Matrix,
    pub d1: Matrix,
    pub d2: Matrix,
    pub theta: Vector,
}

impl ListaGrad {
    pub fn add_assign(&mut self, other: &ListaGrad) {
        self.w.add_assign(&other.w);
        self.d1.add_assign(&other.d1);
        self.d2.add_assign(&other.d2);
        self.theta
            .iter_mut()
            .zip(&other.theta)
            .for_each(|(a, b)| *a += b);
    }

    /// Same order as [`ListaParams::flatten`].
    pub fn flatten(&self) -> Vector {
        let mut v = self.w.as_slice().to_vec();
        v.extend_from_slice(self.d1.as_slice());
        v.extend_from_slice(self.d2.as_slice());
        v.extend_from_slice(&self.theta);
        v
    }
}

/// Gaussian `n × m` matrix with unit-norm columns.
pub fn random_dictionary<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Matrix {
    let mut d = Matrix::from_fn(n, m, |_, _| rng.sample(StandardNormal));
    for j in 0..m {
        let col = d.col(j);
        let nrm = crate::linalg::norm2(&col);
        let unit: Vec<f64> = col.iter().map(|v| v / nrm).collect();
        d.set_col(j, &unit);
    }
    d
}
