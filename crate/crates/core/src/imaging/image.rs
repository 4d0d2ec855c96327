use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Grayscale image, row-major, pixel values on the 0..=255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// `h × w` window with top-left corner at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w} at ({top}, {left}) leaves the {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(h, w, |r, c| self.get(top + r, left + c)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds i.i.d. `N(0, σ²)` noise (no clipping).
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        self.map_indexed(|v| v + normal.sample(&mut rng))
    }

    fn map_indexed(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn next_token(data: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while data.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::CorruptHeader("truncated header".into())),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

fn header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(data, pos)?;
    tok.parse()
        .map_err(|_| Error::CorruptHeader(format!("bad {what} `{tok}`")))
}

/// Parses a binary 8-bit PGM (`P5`, max value 255).
pub fn decode_pgm(data: &[u8]) -> Result<Image> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::UnsupportedFormat(
            "expected a binary PGM (P5)".into(),
        ));
    }
    let mut pos = 2;
    let width = header_number(data, &mut pos, "width")?;
    let height = header_number(data, &mut pos, "height")?;
    let maxval = header_number(data, &mut pos, "max value")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "max gray value {maxval}; only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader("empty image".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !data.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::CorruptHeader("missing raster separator".into()));
    }
    pos += 1;
    let raster = &data[pos..];
    if raster.len() < width * height {
        return Err(Error::CorruptHeader(format!(
            "raster holds {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    let pixels = raster[..width * height].iter().map(|&b| b as f64).collect();
    Image::new(height, width, pixels)
}

/// Binary PGM bytes; pixels are rounded and clamped to 0..=255.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn load_image(path: &Path) -> Result<Image> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&data)
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img))
        .map_err(|e| Error::io(path, e))
}

/// Piecewise-smooth test picture: a shaded background with discs, bars and
/// a striped patch, randomly placed from `seed`. Integer valued.
pub fn procedural_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let base = rng.random_range(60.0..140.0);
    let gx = rng.random_range(-60.0..60.0);
    let gy = rng.random_range(-60.0..60.0);
    let discs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..h),
                rng.random_range(0.0..w),
                rng.random_range(0.08..0.25) * h.min(w),
                rng.random_range(-90.0..90.0),
            )
        })
        .collect();
    let bars: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let top = rng.random_range(0.0..h);
            let left = rng.random_range(0.0..w);
            (
                top,
                left,
                top + rng.random_range(0.1..0.4) * h,
                left + rng.random_range(0.05..0.2) * w,
                rng.random_range(-70.0..70.0),
            )
        })
        .collect();
    let (sr, sc) = (
        rng.random_range(0.0..h * 0.6),
        rng.random_range(0.0..w * 0.6),
    );
    let period = rng.random_range(6.0..14.0);
    Image::from_fn(height, width, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v = base + gx * x / w + gy * y / h;
        for &(cy, cx, rad, amp) in &discs {
            if (y - cy).powi(2) + (x - cx).powi(2) < rad * rad {
                v += amp;
            }
        }
        for &(t, l, b, rr, amp) in &bars {
            if y >= t && y < b && x >= l && x < rr {
                v += amp;
            }
        }
        if y >= sr && y < sr + h * 0.3 && x >= sc && x < sc + w * 0.3 {
            v += 25.0 * (2.0 * std::f64::consts::PI * (x + 0.5 * y) / period).sin();
        }
        v.round().clamp(0.0, 255.0)
    })
}
