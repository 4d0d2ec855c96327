use super::params::{ListaGrad, ListaParams};
use super::units::soft_threshold;
use crate::error::{Error, Result};
use crate::linalg::{sub, Vector};

#[derive(Clone, Debug)]
pub struct ListaTrace {
    /// `α̂_T`.
    pub code: Vector,
    /// `D2·α̂_T`.
    pub output: Vector,
    tape: Option<ListaTape>,
}

#[derive(Clone, Debug)]
struct ListaTape {
    x: Vector,
    // α̂_0..α̂_{T−1}.
    codes: Vec<Vector>,
    // Pre-threshold z_1..z_T.
    pre: Vec<Vector>,
}

/// `T` layers of `α̂_t = S_θ(α̂_{t−1} + W(x − D1·α̂_{t−1}))` from `α̂_0 = 0`.
pub fn lista_forward(params: &ListaParams, x: &[f64], record: bool) -> Result<ListaTrace> {
    params.validate()?;
    if x.len() != params.n() {
        return Err(Error::ShapeMismatch(format!(
            "signal of length {} for LISTA over {} samples",
            x.len(),
            params.n()
        )));
    }
    let mut alpha = vec![0.0; params.m()];
    let mut codes = Vec::new();
    let mut pre = Vec::new();
    for _ in 0..params.layers {
        let e = sub(x, &params.d1.matvec(&alpha));
        let step = params.w.matvec(&e);
        let z: Vec<f64> = alpha.iter().zip(&step).map(|(a, s)| a + s).collect();
        let next = z
            .iter()
            .zip(&params.theta)
            .map(|(v, t)| soft_threshold(*v, *t))
            .collect();
        if record {
            codes.push(std::mem::replace(&mut alpha, next));
            pre.push(z);
        } else {
            alpha = next;
        }
    }
    let output = params.d2.matvec(&alpha);
    Ok(ListaTrace {
        code: alpha,
        output,
        tape: record.then(|| ListaTape {
            x: x.to_vec(),
            codes,
            pre,
        }),
    })
}

/// Reverse pass of [`lista_forward`] given gradients on the reconstruction
/// and/or on the final code, accumulating into `grad`.
pub fn lista_backward_into(
    params: &ListaParams,
    trace: &ListaTrace,
    output_grad: Option<&[f64]>,
    code_grad: Option<&[f64]>,
    grad: &mut ListaGrad,
) -> Result<()> {
    let tape = trace.tape.as_ref().ok_or(Error::TapeMissing)?;
    let mut da = code_grad
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; params.m()]);
    if da.len() != params.m() {
        return Err(Error::ShapeMismatch("code gradient length".into()));
    }
    if let Some(g) = output_grad {
        if g.len() != params.n() {
            return Err(Error::ShapeMismatch("output gradient length".into()));
        }
        grad.d2.add_outer(1.0, g, &trace.code);
        for (a, v) in da.iter_mut().zip(params.d2.tr_matvec(g)) {
            *a += v;
        }
    }
    for t in (0..params.layers).rev() {
        let z = &tape.pre[t];
        let prev = &tape.codes[t];
        let mut dz = vec![0.0; params.m()];
        for i in 0..params.m() {
            if z[i].abs() > params.theta[i] {
                dz[i] = da[i];
                grad.theta[i] -= z[i].signum() * da[i];
            }
        }
        let e = sub(&tape.x, &params.d1.matvec(prev));
        grad.w.add_outer(1.0, &dz, &e);
        let de = params.w.tr_matvec(&dz);
        grad.d1.add_outer(-1.0, &de, prev);
        let back = params.d1.tr_matvec(&de);
        da = dz.iter().zip(&back).map(|(a, b)| a - b).collect();
    }
    Ok(())
}

pub fn lista_backward(
    params: &ListaParams,
    trace: &ListaTrace,
    output_grad: Option<&[f64]>,
    code_grad: Option<&[f64]>,
) -> Result<ListaGrad> {
    let mut grad = params.zero_grad();
    lista_backward_into(params, trace, output_grad, code_grad, &mut grad)?;
    Ok(grad)
}
