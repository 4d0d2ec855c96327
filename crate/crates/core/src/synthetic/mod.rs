//! Synthetic sparse-signal experiments: DCT dictionaries, planted data and
//! the dictionary distance metric.

mod data;
mod eval;
mod store;

pub use data::{gen_dataset, LabeledDataset, SyntheticData, SyntheticSpec};
pub use eval::{
    evaluate_methods, results_csv, write_results_csv, EvalSettings, Method, MethodResult,
    TrainedModels,
};
pub use store::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

/// Overcomplete DCT dictionary (`n × m`): column `j` samples
/// `cos(π j (i + 0.5) / m)`, non-constant columns have their mean removed,
/// and every column is scaled to unit norm.
pub fn make_dct_dictionary(n: usize, m: usize) -> Matrix {
    let mut d = Matrix::zeros(n, m);
    for j in 0..m {
        let mut col: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / m as f64).cos())
            .collect();
        if j > 0 {
            let mean = col.iter().sum::<f64>() / n as f64;
            col.iter_mut().for_each(|v| *v -= mean);
        }
        let nrm = norm2(&col);
        for (i, v) in col.iter().enumerate() {
            d[(i, j)] = v / nrm;
        }
    }
    d
}

fn unit_columns(d: &Matrix) -> Result<Vec<Vec<f64>>> {
    (0..d.cols())
        .map(|j| {
            let c = d.col(j);
            let nrm = norm2(&c);
            if !(nrm > 0.0) {
                return Err(Error::ZeroAtom(j));
            }
            Ok(c.iter().map(|v| v / nrm).collect())
        })
        .collect()
}

/// Mean over true atoms of `1 − max_j |d_jᵀ d_i|` after normalizing both
/// dictionaries' columns. Zero for identical dictionaries, one when every
/// learned atom is orthogonal to every true atom.
pub fn dictionary_distance(d_true: &Matrix, d_approx: &Matrix) -> Result<f64> {
    if d_true.rows() != d_approx.rows() {
        return Err(Error::ShapeMismatch(format!(
            "dictionaries have {} and {} rows",
            d_true.rows(),
            d_approx.rows()
        )));
    }
    let truth = unit_columns(d_true)?;
    let approx = unit_columns(d_approx)?;
    if truth.is_empty() || approx.is_empty() {
        return Err(Error::InvalidConfig("dictionary without atoms".into()));
    }
    // For unit vectors 1 − |aᵀt| = min(‖a − t‖², ‖a + t‖²) / 2, which is
    // exactly zero for equal or opposite atoms.
    let gap = |a: &[f64], t: &[f64], sign: f64| -> f64 {
        a.iter().zip(t).map(|(x, y)| (x - sign * y).powi(2)).sum()
    };
    let total: f64 = truth
        .iter()
        .map(|t| {
            let best = approx
                .iter()
                .map(|a| gap(a, t, 1.0).min(gap(a, t, -1.0)))
                .fold(f64::INFINITY, f64::min);
            (best / 2.0).clamp(0.0, 1.0)
        })
        .sum();
    Ok(total / truth.len() as f64)
}
