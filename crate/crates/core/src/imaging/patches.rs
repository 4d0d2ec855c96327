use super::image::Image;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_size(height: usize, width: usize, patch: usize) -> Result<()> {
    if patch == 0 || height < patch || width < patch {
        return Err(Error::ImageTooSmall {
            height,
            width,
            patch,
        });
    }
    Ok(())
}

/// Number of fully overlapping `p × p` patches of an `h × w` image.
pub fn patch_count(height: usize, width: usize, patch: usize) -> usize {
    if height < patch || width < patch {
        return 0;
    }
    (height - patch + 1) * (width - patch + 1)
}

/// Copies patch `(top, left)` of a row-major `width`-wide buffer into `out`,
/// column-major.
pub(crate) fn read_patch(
    pixels: &[f64],
    width: usize,
    p: usize,
    top: usize,
    left: usize,
    out: &mut [f64],
) {
    for c in 0..p {
        for r in 0..p {
            out[c * p + r] = pixels[(top + r) * width + left + c];
        }
    }
}

/// All stride-1 `p × p` patches, one per column. Each patch is vectorized
/// column by column; patches are ordered by their top-left corner in raster
/// order.
pub fn extract_patches(img: &Image, p: usize) -> Result<Matrix> {
    check_size(img.height(), img.width(), p)?;
    let (rows, cols) = (img.height() - p + 1, img.width() - p + 1);
    let mut out = Matrix::zeros(p * p, rows * cols);
    let mut buf = vec![0.0; p * p];
    for top in 0..rows {
        for left in 0..cols {
            read_patch(img.pixels(), img.width(), p, top, left, &mut buf);
            out.set_col(top * cols + left, &buf);
        }
    }
    Ok(out)
}

/// Per-pixel count of covering patches.
pub fn coverage(height: usize, width: usize, p: usize) -> Vec<f64> {
    let span = |i: usize, len: usize| {
        let lo = (i + 1).saturating_sub(p);
        let hi = i.min(len - p);
        (hi + 1 - lo) as f64
    };
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            out.push(span(r, height) * span(c, width));
        }
    }
    out
}

/// Sums the patches back into image layout (`Σ R_iᵀ x̂_i`).
pub(crate) fn accumulate(patches: &Matrix, height: usize, width: usize, p: usize) -> Vec<f64> {
    let cols = width - p + 1;
    let mut acc = vec![0.0; height * width];
    for k in 0..patches.cols() {
        let (top, left) = (k / cols, k % cols);
        for c in 0..p {
            for r in 0..p {
                acc[(top + r) * width + left + c] += patches[(c * p + r, k)];
            }
        }
    }
    acc
}

/// `(λI + Σ R_iᵀR_i)⁻¹ (λ x + Σ R_iᵀ x̂_i)`: each pixel becomes
/// `(λ·x + sum of covering patch values) / (λ + cover count)`.
pub fn reconstruct_average(
    patches: &Matrix,
    height: usize,
    width: usize,
    p: usize,
    lambda: f64,
    noisy: Option<&Image>,
) -> Result<Image> {
    check_size(height, width, p)?;
    if patches.rows() != p * p || patches.cols() != patch_count(height, width, p) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} patch matrix for a {height}x{width} image with {p}x{p} patches",
            patches.rows(),
            patches.cols()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "λ = {lambda} must be non-negative"
        )));
    }
    let acc = accumulate(patches, height, width, p);
    let counts = coverage(height, width, p);
    let pixels: Vec<f64> = if lambda > 0.0 {
        let noisy =
            noisy.ok_or_else(|| Error::InvalidConfig("λ > 0 needs the noisy image".into()))?;
        if noisy.height() != height || noisy.width() != width {
            return Err(Error::ShapeMismatch("noisy image dimensions differ".into()));
        }
        acc.iter()
            .zip(&counts)
            .zip(noisy.pixels())
            .map(|((a, n), x)| (lambda * x + a) / (lambda + n))
            .collect()
    } else {
        acc.iter().zip(&counts).map(|(a, n)| a / n).collect()
    };
    Image::new(height, width, pixels)
}

/// Peak signal-to-noise ratio in dB, `10 log₁₀(peak² / MSE)`. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
