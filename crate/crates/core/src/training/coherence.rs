use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Largest normalized absolute inner product between distinct atoms, with
/// the attaining pair (lowest pair on ties). Atom `skip`, if given, is left
/// out of the comparison.
pub fn coherence_pair(d: &Matrix, skip: Option<usize>) -> Result<(f64, (usize, usize))> {
    let atoms: Vec<usize> = (0..d.cols()).filter(|&j| Some(j) != skip).collect();
    if atoms.len() < 2 {
        return Err(Error::InvalidConfig(
            "coherence needs at least two atoms".into(),
        ));
    }
    let dt = d.transpose();
    let norms: Vec<f64> = (0..d.cols()).map(|j| norm2(dt.row(j))).collect();
    if let Some(&j) = atoms.iter().find(|&&j| !(norms[j] > 0.0)) {
        return Err(Error::ZeroAtom(j));
    }
    let mut best = (-1.0, (0, 0));
    for (a, &i) in atoms.iter().enumerate() {
        for &j in &atoms[a + 1..] {
            let c = dot(dt.row(i), dt.row(j)).abs() / (norms[i] * norms[j]);
            if c > best.0 {
                best = (c, (i, j));
            }
        }
    }
    Ok(best)
}

/// `max_{i≠j} |d_iᵀd_j| / (‖d_i‖‖d_j‖)`.
pub fn mutual_coherence(d: &Matrix) -> Result<f64> {
    coherence_pair(d, None).map(|(c, _)| c)
}

/// Coherence and its subgradient, which is nonzero only on the attaining pair.
pub fn coherence_with_grad(d: &Matrix, skip: Option<usize>) -> Result<(f64, Matrix)> {
    let (mu, (i, j)) = coherence_pair(d, skip)?;
    let di = d.col(i);
    let dj = d.col(j);
    let (ni, nj) = (norm2(&di), norm2(&dj));
    let g = dot(&di, &dj);
    let sign = if g < 0.0 { -1.0 } else { 1.0 };
    let mut grad = Matrix::zeros(d.rows(), d.cols());
    for r in 0..d.rows() {
        grad[(r, i)] = sign * (dj[r] / (ni * nj) - g * di[r] / (ni.powi(3) * nj));
        grad[(r, j)] = sign * (di[r] / (ni * nj) - g * dj[r] / (ni * nj.powi(3)));
    }
    Ok((mu, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_duplicate() {
        assert_eq!(mutual_coherence(&Matrix::identity(4)).unwrap(), 0.0);
        let d = Matrix::from_rows(&[&[1.0, 2.0, 0.0], &[1.0, 2.0, 1.0]]);
        assert!((mutual_coherence(&d).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            mutual_coherence(&Matrix::from_rows(&[&[1.0, 0.0]])),
            Err(Error::ZeroAtom(1))
        ));
    }

    #[test]
    fn skipped_atom_is_ignored() {
        let d = Matrix::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]);
        assert_eq!(coherence_with_grad(&d, Some(2)).unwrap().0, 0.0);
    }

    #[test]
    fn gradient_matches_differences() {
        let d = Matrix::from_rows(&[&[0.3, -1.0, 0.8], &[1.2, 0.4, 0.9], &[-0.5, 0.7, 0.1]]);
        let (_, grad) = coherence_with_grad(&d, None).unwrap();
        let h = 1e-7;
        for r in 0..3 {
            for c in 0..3 {
                let mut up = d.clone();
                up[(r, c)] += h;
                let mut dn = d.clone();
                dn[(r, c)] -= h;
                let fd =
                    (mutual_coherence(&up).unwrap() - mutual_coherence(&dn).unwrap()) / (2.0 * h);
                assert!((fd - grad[(r, c)]).abs() < 1e-6);
            }
        }
    }
}
