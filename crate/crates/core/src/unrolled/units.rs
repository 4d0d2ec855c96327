use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Vector};
use crate::pursuit::{argmax_abs, top_k_abs};

/// Index kept by [`mpt`]: the largest `|u_i|`, lowest index on ties.
pub fn mpt_index(u: &[f64]) -> usize {
    argmax_abs(u, &[]).unwrap_or(0)
}

/// Maximal projection thresholding: zero except at `argmax |u_i|`.
pub fn mpt(u: &[f64]) -> Vector {
    let mut out = vec![0.0; u.len()];
    if !u.is_empty() {
        let i = mpt_index(u);
        out[i] = u[i];
    }
    out
}

/// Gradient of [`mpt`]: the upstream gradient survives only at the kept index.
pub fn mpt_backward(u: &[f64], upstream: &[f64]) -> Vector {
    let mut out = vec![0.0; u.len()];
    if !u.is_empty() {
        let i = mpt_index(u);
        out[i] = upstream[i];
    }
    out
}

/// Atom extraction `D|y| / ‖y‖∞`; for a one-hot `y` this is the selected column.
pub fn atos(d: &Matrix, y: &[f64]) -> Result<Vector> {
    if y.len() != d.cols() {
        return Err(Error::ShapeMismatch(format!(
            "selection of length {} for {} atoms",
            y.len(),
            d.cols()
        )));
    }
    let j = argmax_abs(y, &[]).ok_or(Error::AllZeroInput)?;
    let peak = y[j].abs();
    if peak == 0.0 {
        return Err(Error::AllZeroInput);
    }
    let abs: Vec<f64> = y.iter().map(|v| v.abs() / peak).collect();
    Ok(d.matvec(&abs))
}

/// Gradients of [`atos`] with respect to `D` and `y`.
pub fn atos_backward(d: &Matrix, y: &[f64], upstream: &[f64]) -> Result<(Matrix, Vector)> {
    let out = atos(d, y)?;
    let j = argmax_abs(y, &[]).expect("atos succeeded");
    let peak = y[j].abs();
    let mut d_grad = Matrix::zeros(d.rows(), d.cols());
    let abs: Vec<f64> = y.iter().map(|v| v.abs() / peak).collect();
    d_grad.add_outer(1.0, upstream, &abs);
    let dtg = d.tr_matvec(upstream);
    let mut y_grad: Vector = y
        .iter()
        .zip(&dtg)
        .map(|(v, g)| {
            if *v == 0.0 {
                0.0
            } else {
                v.signum() * g / peak
            }
        })
        .collect();
    y_grad[j] -= y[j].signum() * dot(&out, upstream) / peak;
    Ok((d_grad, y_grad))
}

/// Multi-index thresholding: column `k` keeps `u` at the `k`-th largest
/// magnitude (lowest index on ties).
pub fn mspt(u: &[f64], s: usize) -> Result<Matrix> {
    if s > u.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {s} of {} entries",
            u.len()
        )));
    }
    let mut y = Matrix::zeros(u.len(), s);
    for (k, i) in top_k_abs(u, s, &[]).into_iter().enumerate() {
        y[(i, k)] = u[i];
    }
    Ok(y)
}

/// Column-wise [`atos`].
pub fn satos(d: &Matrix, y: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(d.rows(), y.cols());
    for k in 0..y.cols() {
        out.set_col(k, &atos(d, &y.col(k))?);
    }
    Ok(out)
}

/// `sign(z)·max(|z| − θ, 0)`.
#[inline]
pub fn soft_threshold(z: f64, theta: f64) -> f64 {
    if z > theta {
        z - theta
    } else if z < -theta {
        z + theta
    } else {
        0.0
    }
}
