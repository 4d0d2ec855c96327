use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::linalg::{dot, norm2, sub, Matrix};
use crate::pursuit::{mp, omp, sp, Dictionary, PursuitConfig};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&sub(a, b)) / scale
    }
}

fn central_difference(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; theta.len()];
    let mut p = theta.to_vec();
    for i in 0..theta.len() {
        p[i] = theta[i] + h;
        let up = f(&p);
        p[i] = theta[i] - h;
        let dn = f(&p);
        p[i] = theta[i];
        out[i] = (up - dn) / (2.0 * h);
    }
    out
}

#[test]
fn lgm_without_attention_is_omp() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..40 {
        let d = gaussian(16, 32, &mut rng);
        let params = LgmParams::tied(d.clone()).unwrap();
        let dict = Dictionary::new(d).unwrap();
        let x = vector(16, &mut rng);
        let cfg = PursuitConfig::new(1 + trial % 8, 0.3);
        let a = lgm_forward(&params, &x, &cfg, None, false).unwrap();
        let b = omp(&dict, &x, &cfg).unwrap();
        assert_eq!(a.selected, b.code.support);
        assert_eq!(a.code.coeffs, b.code.coeffs);
        assert_eq!(a.output, b.reconstruction);
        assert_eq!(a.residual_norms, b.residual_norms);
    }
}

#[test]
fn lgm_zero_signal_runs_no_layers() {
    let params = LgmParams::tied(Matrix::identity(4)).unwrap();
    let t = lgm_forward(&params, &[0.0; 4], &PursuitConfig::new(3, 0.0), None, true).unwrap();
    assert_eq!(t.layers(), 0);
    assert_eq!(t.output, vec![0.0; 4]);
    let (g, _) = lgm_backward(&params, None, &t, &[1.0; 4]).unwrap();
    assert_eq!(g, params.zero_grad());
}

#[test]
fn lgm_residual_orthogonal_to_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = LgmParams::new(gaussian(20, 40, &mut rng), gaussian(20, 40, &mut rng)).unwrap();
    let x = vector(20, &mut rng);
    let t = lgm_forward(&params, &x, &PursuitConfig::new(10, 0.0), None, false).unwrap();
    assert_eq!(t.layer_residuals.len(), 10);
    for (k, r) in t.layer_residuals.iter().enumerate() {
        for &i in &t.selected[..=k] {
            assert!(dot(params.analysis().atom(i), r).abs() < 1e-8);
        }
    }
}

#[test]
fn replaying_the_path_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = LgmParams::new(gaussian(10, 20, &mut rng), gaussian(10, 20, &mut rng)).unwrap();
    let att = AttentionParams::init(10, 4, &mut rng);
    let x = vector(10, &mut rng);
    let cfg = PursuitConfig::new(4, 0.0);
    let first = lgm_forward(&params, &x, &cfg, Some(&att), true).unwrap();
    let again = lgm_forward_with(
        &params,
        &x,
        &cfg,
        Some(&att),
        Selection::Fixed(&first.selected),
        false,
    )
    .unwrap();
    assert_eq!(first.output, again.output);
    let w = again.attention_weights.unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn backward_requires_tape() {
    let params = LgmParams::tied(Matrix::identity(3)).unwrap();
    let t = lgm_forward(
        &params,
        &[1.0, 0.0, 0.0],
        &PursuitConfig::new(1, 0.0),
        None,
        false,
    )
    .unwrap();
    assert!(matches!(
        lgm_backward(&params, None, &t, &[1.0; 3]),
        Err(crate::Error::TapeMissing)
    ));
}

#[test]
fn zero_output_gradient_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = LgmParams::new(gaussian(8, 12, &mut rng), gaussian(8, 12, &mut rng)).unwrap();
    let att = AttentionParams::init(8, 3, &mut rng);
    let x = vector(8, &mut rng);
    let t = lgm_forward(&params, &x, &PursuitConfig::new(3, 0.0), Some(&att), true).unwrap();
    let (g, ga) = lgm_backward(&params, Some(&att), &t, &[0.0; 8]).unwrap();
    assert_eq!(g, params.zero_grad());
    assert_eq!(ga.unwrap(), att.zeros_like());
}

#[test]
fn single_layer_synthesis_gradient_is_outer_product() {
    let params = LgmParams::tied(Matrix::identity(4)).unwrap();
    let x = [0.0, 0.0, 3.0, 0.5];
    let t = lgm_forward(&params, &x, &PursuitConfig::new(1, 0.0), None, true).unwrap();
    assert_eq!(t.selected, vec![2]);
    let g = [0.1, -0.2, 0.7, 0.4];
    let (grad, _) = lgm_backward(&params, None, &t, &g).unwrap();
    let mut expected = Matrix::zeros(4, 4);
    for (row, gv) in g.iter().enumerate() {
        expected[(row, 2)] = 3.0 * gv;
    }
    assert_eq!(grad.synthesis, expected);
}

fn lgm_fd_case(seed: u64, with_attention: bool, with_dc: bool) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, s) = (8, 12, 3);
    let base_a = gaussian(n, m, &mut rng);
    let base_s = gaussian(n, m, &mut rng);
    let params = if with_dc {
        LgmParams::with_dc(&base_a, &base_s, 0.7).unwrap()
    } else {
        LgmParams::new(base_a, base_s).unwrap()
    };
    let mut att = AttentionParams::init(n, s, &mut rng);
    att.w_out
        .iter_mut()
        .for_each(|v| *v = rng.sample(StandardNormal));
    let att = with_attention.then_some(att);
    let x = vector(n, &mut rng);
    let g = vector(n, &mut rng);
    let cfg = PursuitConfig::exact(s);
    let trace = lgm_forward(&params, &x, &cfg, att.as_ref(), true).ok()?;
    if trace.layers() != s || selection_margin(&params, &x, &trace) <= 1e-3 {
        return None;
    }
    let (grad, ga) = lgm_backward(&params, att.as_ref(), &trace, &g).unwrap();

    let theta = params.flatten();
    let fd = central_difference(&theta, 1e-6, |p| {
        let q = params.unflatten(p).unwrap();
        let t = lgm_forward_with(
            &q,
            &x,
            &cfg,
            att.as_ref(),
            Selection::Fixed(&trace.selected),
            false,
        )
        .unwrap();
        dot(&t.output, &g)
    });
    let mut err = rel_err(&fd, &grad.flatten());
    if let (Some(a), Some(ga)) = (&att, &ga) {
        let mut analytic = Vec::new();
        ga.slices()
            .iter()
            .for_each(|s| analytic.extend_from_slice(s));
        let mut flat = Vec::new();
        a.slices().iter().for_each(|s| flat.extend_from_slice(s));
        let fd = central_difference(&flat, 1e-6, |p| {
            let mut q = a.clone();
            let mut off = 0;
            for sl in q.slices_mut() {
                sl.copy_from_slice(&p[off..off + sl.len()]);
                off += sl.len();
            }
            let t = lgm_forward_with(
                &params,
                &x,
                &cfg,
                Some(&q),
                Selection::Fixed(&trace.selected),
                false,
            )
            .unwrap();
            dot(&t.output, &g)
        });
        err = err.max(rel_err(&fd, &analytic));
    }
    Some(err)
}

#[test]
fn lgm_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..40 {
        for (att, dc) in [(false, false), (true, false), (true, true), (false, true)] {
            if let Some(err) = lgm_fd_case(seed, att, dc) {
                assert!(err < 1e-4, "seed {seed} attention {att} dc {dc}: {err}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 40, "only {checked} selection-stable cases");
}

#[test]
fn lmp_matches_mp_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = gaussian(10, 25, &mut rng);
    let params = LgmParams::tied(d.clone()).unwrap();
    let dict = Dictionary::new(d).unwrap();
    for _ in 0..20 {
        let x = vector(10, &mut rng);
        let cfg = PursuitConfig::new(12, 0.1);
        let a = lmp_forward(&params, &x, &cfg, false).unwrap();
        let b = mp(&dict, &x, &cfg).unwrap();
        assert_eq!(a.code, b.code);
        assert_eq!(a.output, b.reconstruction);
        assert_eq!(a.residual_norms, b.residual_norms);
    }
    let t = lmp_forward(
        &params,
        &vector(10, &mut rng),
        &PursuitConfig::new(0, 0.0),
        false,
    )
    .unwrap();
    assert_eq!(t.output, vec![0.0; 10]);
}

#[test]
fn lmp_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = if seed % 2 == 0 {
            LgmParams::new(gaussian(6, 9, &mut rng), gaussian(6, 9, &mut rng)).unwrap()
        } else {
            LgmParams::with_dc(&gaussian(6, 9, &mut rng), &gaussian(6, 9, &mut rng), 0.4).unwrap()
        };
        let x = vector(6, &mut rng);
        let g = vector(6, &mut rng);
        let cfg = PursuitConfig::new(4, 0.0);
        let trace = lmp_forward(&params, &x, &cfg, true).unwrap();
        // Selection-stable check, layer by layer.
        let mut stable = true;
        for (k, &i) in trace.selected.iter().enumerate() {
            let r = if k == 0 {
                x.clone()
            } else {
                sub(&x, &trace.layer_outputs[k - 1])
            };
            let u = params.analysis().correlations(&r);
            let second = u
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max);
            stable &= u[i].abs() - second > 1e-3;
        }
        if !stable {
            continue;
        }
        let grad = lmp_backward(&params, &trace, &g).unwrap();
        let fd = central_difference(&params.flatten(), 1e-6, |p| {
            let q = params.unflatten(p).unwrap();
            dot(&lmp_forward(&q, &x, &cfg, false).unwrap().output, &g)
        });
        let err = rel_err(&fd, &grad.flatten());
        assert!(err < 1e-4, "seed {seed}: {err}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn lsp_matches_sp_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = gaussian(24, 48, &mut rng);
    let params = LgmParams::tied(d.clone()).unwrap();
    let dict = Dictionary::new(d).unwrap();
    for _ in 0..10 {
        let x = vector(24, &mut rng);
        let a = lsp_forward(&params, &x, 5).unwrap();
        let b = sp(&dict, &x, 5).unwrap();
        assert_eq!(a.code, b.code);
        assert_eq!(a.output, b.reconstruction);
        assert_eq!(a.selected.len(), 5);
    }
    let orth = LgmParams::tied(Matrix::identity(5)).unwrap();
    let t = lsp_forward(&orth, &[0.0, 2.0, 0.0, -1.0, 0.0], 2).unwrap();
    assert_eq!(t.residual_norms.len(), 1);
    assert_eq!(t.output, vec![0.0, 2.0, 0.0, -1.0, 0.0]);
}

#[test]
fn lista_basic_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = gaussian(5, 8, &mut rng);
    let mut p = ListaParams::from_dictionary(&d, 0.0, 1).unwrap();
    let x = vector(5, &mut rng);
    assert_eq!(lista_forward(&p, &x, false).unwrap().code, p.w.matvec(&x));
    p.theta[0] = -1.0;
    assert!(lista_forward(&p, &x, false).is_err());
}

#[test]
fn lista_tied_is_ista() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = gaussian(10, 20, &mut rng);
    let x = vector(10, &mut rng);
    let lambda = 0.2;
    let c = 1.05 * spectral_norm_sq(&d);
    let objective = |a: &[f64]| {
        let r = sub(&x, &d.matvec(a));
        0.5 * dot(&r, &r) + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut alpha = vec![0.0; 20];
    let mut last = objective(&alpha);
    for t in 1..=60 {
        let grad = d.tr_matvec(&sub(&d.matvec(&alpha), &x));
        alpha = alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| soft_threshold(a - g / c, lambda / c))
            .collect();
        let p = ListaParams::from_dictionary(&d, lambda, t).unwrap();
        let code = lista_forward(&p, &x, false).unwrap().code;
        for (a, b) in code.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-12);
        }
        let now = objective(&alpha);
        assert!(now <= last + 1e-12);
        last = now;
    }
}

#[test]
fn lista_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = gaussian(6, 10, &mut rng);
    let mut p = ListaParams::from_dictionary(&d, 0.3, 4).unwrap();
    p.d2 = gaussian(6, 10, &mut rng);
    let x = vector(6, &mut rng);
    let g = vector(6, &mut rng);
    let gc = vector(10, &mut rng);
    let trace = lista_forward(&p, &x, true).unwrap();
    let grad = lista_backward(&p, &trace, Some(&g), Some(&gc)).unwrap();
    let fd = central_difference(&p.flatten(), 1e-6, |flat| {
        let q = p.unflatten(flat).unwrap();
        let t = lista_forward(&q, &x, false).unwrap();
        dot(&t.output, &g) + dot(&t.code, &gc)
    });
    let err = rel_err(&fd, &grad.flatten());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn checkpoints_round_trip_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params =
        LgmParams::with_dc(&gaussian(4, 6, &mut rng), &gaussian(4, 6, &mut rng), 2.5).unwrap();
    let att = AttentionParams::init(4, 3, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    lgm_checkpoint(&params, Some(&att)).save(&path).unwrap();
    let (p2, a2) = lgm_from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(p2, params);
    assert_eq!(a2.unwrap(), att);

    let lista = ListaParams::from_dictionary(&gaussian(4, 6, &mut rng), 0.1, 3).unwrap();
    lista_checkpoint(&lista).save(&path).unwrap();
    assert_eq!(
        lista_from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap(),
        lista
    );
}
