use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Number of `relu(W2·M·W1 + b·1ᵀ)` blocks.
pub const ATTENTION_BLOCKS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    /// Right factor, `P × P`.
    pub w1: Matrix,
    /// Left factor, `s × s`.
    pub w2: Matrix,
    /// Row bias, length `s`.
    pub b: Vector,
}

/// Maps the `s × P` matrix of per-layer residuals (one residual per row) to
/// softmax weights over the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub blocks: Vec<AttentionBlock>,
    /// Output projection, length `P`.
    pub w_out: Vector,
}

impl AttentionParams {
    pub fn zeros(signal_dim: usize, layers: usize) -> Self {
        let block = AttentionBlock {
            w1: Matrix::zeros(signal_dim, signal_dim),
            w2: Matrix::zeros(layers, layers),
            b: vec![0.0; layers],
        };
        Self {
            blocks: vec![block; ATTENTION_BLOCKS],
            w_out: vec![0.0; signal_dim],
        }
    }

    /// `W1, W2 ~ N(0, 1/dim)`, zero biases and zero output projection, so
    /// the initial weights are uniform.
    pub fn init<R: Rng + ?Sized>(signal_dim: usize, layers: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(signal_dim, layers);
        let n1 = Normal::new(0.0, (1.0 / signal_dim as f64).sqrt()).expect("positive dim");
        let n2 = Normal::new(0.0, (1.0 / layers as f64).sqrt()).expect("positive dim");
        for block in &mut p.blocks {
            block
                .w1
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = n1.sample(rng));
            block
                .w2
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = n2.sample(rng));
        }
        p
    }

    /// `P`.
    pub fn signal_dim(&self) -> usize {
        self.w_out.len()
    }

    /// `s`.
    pub fn layers(&self) -> usize {
        self.blocks[0].b.len()
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.w1.as_slice().len() + b.w2.as_slice().len() + b.b.len())
            .sum::<usize>()
            + self.w_out.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.signal_dim(), self.layers())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.w1.add_assign(&b.w1);
            a.w2.add_assign(&b.w2);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
        self.w_out
            .iter_mut()
            .zip(&other.w_out)
            .for_each(|(x, y)| *x += y);
    }

    /// Every parameter as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.w1.as_slice());
            out.push(b.w2.as_slice());
            out.push(b.b.as_slice());
        }
        out.push(self.w_out.as_slice());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.w1.as_mut_slice());
            out.push(b.w2.as_mut_slice());
            out.push(b.b.as_mut_slice());
        }
        out.push(self.w_out.as_mut_slice());
        out
    }
}

/// Intermediates kept for [`attention_backward`].
#[derive(Clone, Debug)]
pub struct AttentionTape {
    // Block inputs M_0..M_3 followed by the final M_4.
    inputs: Vec<Matrix>,
    // Intermediate W2·M per block.
    left: Vec<Matrix>,
    // Pre-activations per block.
    pre: Vec<Matrix>,
    weights: Vector,
}

fn check(residuals: &Matrix, params: &AttentionParams) -> Result<()> {
    if params.blocks.len() != ATTENTION_BLOCKS {
        return Err(Error::InvalidConfig(format!(
            "attention network needs {ATTENTION_BLOCKS} blocks, got {}",
            params.blocks.len()
        )));
    }
    if residuals.shape() != (params.layers(), params.signal_dim()) {
        return Err(Error::ShapeMismatch(format!(
            "residual matrix is {}x{}, attention expects {}x{}",
            residuals.rows(),
            residuals.cols(),
            params.layers(),
            params.signal_dim()
        )));
    }
    Ok(())
}

pub(crate) fn softmax(z: &[f64]) -> Vector {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Layer weights `softmax(M₄·w_out)`, `M_b = relu(W2_b·M_{b−1}·W1_b + b_b·1ᵀ)`,
/// `M₀` = residuals. Returns the tape when `record` is set.
pub fn attention_forward(
    residuals: &Matrix,
    params: &AttentionParams,
    record: bool,
) -> Result<(Vector, Option<AttentionTape>)> {
    check(residuals, params)?;
    let mut m = residuals.clone();
    let mut inputs = Vec::new();
    let mut left = Vec::new();
    let mut pre = Vec::new();
    for block in &params.blocks {
        let l = block.w2.matmul(&m)?;
        let mut y = l.matmul(&block.w1)?;
        for (i, &bi) in block.b.iter().enumerate() {
            y.row_mut(i).iter_mut().for_each(|v| *v += bi);
        }
        let mut next = y.clone();
        next.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        if record {
            inputs.push(m);
            left.push(l);
            pre.push(y);
        }
        m = next;
    }
    let z = m.matvec(&params.w_out);
    let weights = softmax(&z);
    let tape = record.then(|| {
        inputs.push(m);
        AttentionTape {
            inputs,
            left,
            pre,
            weights: weights.clone(),
        }
    });
    Ok((weights, tape))
}

/// Reverse pass: parameter gradient and the gradient with respect to the
/// residual matrix, given `∂L/∂p`.
pub fn attention_backward(
    params: &AttentionParams,
    tape: &AttentionTape,
    weight_grad: &[f64],
) -> Result<(AttentionParams, Matrix)> {
    let p = &tape.weights;
    if weight_grad.len() != p.len() {
        return Err(Error::ShapeMismatch(format!(
            "weight gradient of length {} for {} layers",
            weight_grad.len(),
            p.len()
        )));
    }
    let mut grad = params.zeros_like();
    let centre: f64 = p.iter().zip(weight_grad).map(|(a, b)| a * b).sum();
    let dz: Vec<f64> = p
        .iter()
        .zip(weight_grad)
        .map(|(pi, gi)| pi * (gi - centre))
        .collect();
    let last = &tape.inputs[ATTENTION_BLOCKS];
    grad.w_out = last.tr_matvec(&dz);
    let mut dm = Matrix::zeros(last.rows(), last.cols());
    dm.add_outer(1.0, &dz, &params.w_out);

    for k in (0..ATTENTION_BLOCKS).rev() {
        let block = &params.blocks[k];
        let mut dy = dm;
        for (g, y) in dy.as_mut_slice().iter_mut().zip(tape.pre[k].as_slice()) {
            if *y <= 0.0 {
                *g = 0.0;
            }
        }
        let g = &mut grad.blocks[k];
        for i in 0..dy.rows() {
            g.b[i] = dy.row(i).iter().sum();
        }
        // Y = L·W1 with L = W2·M.
        g.w1 = tape.left[k].transpose().matmul(&dy)?;
        let dl = dy.matmul(&block.w1.transpose())?;
        g.w2 = dl.matmul(&tape.inputs[k].transpose())?;
        dm = block.w2.transpose().matmul(&dl)?;
    }
    Ok((grad, dm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_params(p: usize, s: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        let mut a = AttentionParams::init(p, s, rng);
        for block in &mut a.blocks {
            block
                .b
                .iter_mut()
                .for_each(|v| *v = 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        a.w_out
            .iter_mut()
            .for_each(|v| *v = rng.sample(StandardNormal));
        a
    }

    #[test]
    fn parameter_count() {
        let a = AttentionParams::zeros(64, 10);
        assert_eq!(a.param_count(), 4 * (64 * 64 + 10 * 10 + 10) + 64);
    }

    #[test]
    fn zero_params_give_uniform_weights() {
        let a = AttentionParams::zeros(5, 4);
        let r = Matrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let (w, _) = attention_forward(&r, &a, false).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn weights_form_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_params(6, 5, &mut rng);
            let r = Matrix::from_fn(5, 6, |_, _| rng.sample(StandardNormal));
            let (w, _) = attention_forward(&r, &a, false).unwrap();
            assert!(w.iter().all(|v| *v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (pdim, s) = (5, 3);
        let a = random_params(pdim, s, &mut rng);
        let r = Matrix::from_fn(s, pdim, |_, _| rng.sample(StandardNormal));
        let g: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
        let loss = |a: &AttentionParams, r: &Matrix| {
            let (w, _) = attention_forward(r, a, false).unwrap();
            w.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>()
        };
        let (_, tape) = attention_forward(&r, &a, true).unwrap();
        let (grad, dr) = attention_backward(&a, &tape.unwrap(), &g).unwrap();
        let h = 1e-6;
        let close = |fd: f64, an: f64| {
            let err = (fd - an).abs();
            err < 1e-8 || err / fd.abs().max(an.abs()) < 1e-4
        };
        let n_slices = a.slices().len();
        for k in 0..n_slices {
            let len = a.slices()[k].len();
            for i in 0..len {
                let mut up = a.clone();
                up.slices_mut()[k][i] += h;
                let mut dn = a.clone();
                dn.slices_mut()[k][i] -= h;
                let fd = (loss(&up, &r) - loss(&dn, &r)) / (2.0 * h);
                let an = grad.slices()[k][i];
                assert!(close(fd, an), "slice {k} entry {i}: {fd} vs {an}");
            }
        }
        for i in 0..s {
            for j in 0..pdim {
                let mut up = r.clone();
                up[(i, j)] += h;
                let mut dn = r.clone();
                dn[(i, j)] -= h;
                let fd = (loss(&a, &up) - loss(&a, &dn)) / (2.0 * h);
                assert!(close(fd, dr[(i, j)]));
            }
        }
    }
}
