//! Procedural shapes dataset.

use crate::config::{ClassSpec, DatasetSpec, ShapeKind};
use crate::{dct, ConceptLabel, LdmError};
use seedmem_core::{RngStream, Tensor};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
const SUPERSAMPLE: usize = 4;

/// A 1x32x32 grayscale image in `[0, 1]` with its concept label.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub pixels: Tensor,
    pub label: ConceptLabel,
}

impl ToyImage {
    pub fn new(pixels: Vec<f32>, label: ConceptLabel) -> Result<Self, LdmError> {
        let pixels = Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], pixels)?;
        Ok(ToyImage { pixels: pixels.clamp(0.0, 1.0), label })
    }

    pub fn data(&self) -> &[f32] {
        self.pixels.data()
    }
}

/// Anti-aliased binary mask of a shape scaled by `intensity`.
pub fn render(kind: ShapeKind, cx: f64, cy: f64, size: f64, width: f64, intensity: f64) -> Vec<f64> {
    let n = IMAGE_SIDE;
    let ss = SUPERSAMPLE;
    let inv = 1.0 / (ss * ss) as f64;
    let mut img = vec![0f64; IMAGE_LEN];
    for py in 0..n {
        for px in 0..n {
            let mut hits = 0usize;
            for sy in 0..ss {
                let y = (py * ss + sy) as f64 / ss as f64 + 0.5 / ss as f64;
                let dy = y - cy;
                for sx in 0..ss {
                    let x = (px * ss + sx) as f64 / ss as f64 + 0.5 / ss as f64;
                    let dx = x - cx;
                    let inside = match kind {
                        ShapeKind::Disc => dx * dx + dy * dy <= size * size,
                        ShapeKind::Square => dx.abs() <= size && dy.abs() <= size,
                        ShapeKind::Cross => {
                            (dx.abs() <= size && dy.abs() <= width) || (dy.abs() <= size && dx.abs() <= width)
                        }
                    };
                    hits += inside as usize;
                }
            }
            img[py * n + px] = hits as f64 * inv * intensity;
        }
    }
    img
}

fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur, kernel truncated at 4 sigma, mirrored borders.
pub fn gaussian_blur(img: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let n = IMAGE_SIDE as isize;
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0f64; IMAGE_LEN];
        for r in 0..n {
            for c in 0..n {
                let mut s = 0.0;
                for (j, &k) in kernel.iter().enumerate() {
                    let off = j as isize - radius;
                    let (rr, cc) = if horizontal { (r as usize, reflect(c + off, n)) } else { (reflect(r + off, n), c as usize) };
                    s += k * src[rr * n as usize + cc];
                }
                out[(r * n + c) as usize] = s;
            }
        }
        out
    };
    let h = pass(img, true);
    pass(&h, false)
}

/// Grain: i.i.d. N(0, sigma^2) coefficients on the high DCT band.
pub fn texture(d: &[f64], band: usize, sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    let n = IMAGE_SIDE;
    let mut coef = vec![0f64; IMAGE_LEN];
    if sigma == 0.0 {
        return coef;
    }
    for u in band..n {
        for v in band..n {
            coef[u * n + v] = sigma * rng.normal() as f64;
        }
    }
    dct::inverse(d, &coef)
}

fn render_one(spec: &DatasetSpec, class: &ClassSpec, d: &[f64], rng: &mut RngStream) -> Vec<f32> {
    let centre = IMAGE_SIDE as f64 / 2.0;
    let cx = centre + rng.uniform_range(-spec.jitter, spec.jitter);
    let cy = centre + rng.uniform_range(-spec.jitter, spec.jitter);
    let intensity = rng.uniform_range(spec.intensity[0], spec.intensity[1]);
    let size = rng.uniform_range(class.size[0], class.size[1]);
    let width = rng.uniform_range(class.width[0], class.width[1]);
    let shape = render(class.shape, cx, cy, size, width, intensity);
    let blurred = gaussian_blur(&shape, spec.blur_sigma);
    let grain = texture(d, spec.texture_band, spec.texture_sigma, rng);
    blurred
        .iter()
        .zip(&grain)
        .map(|(&s, &g)| (s + spec.background + g).clamp(0.0, 1.0) as f32)
        .collect()
}

/// Renders `count` images per class, classes in order, labels `1..=C`.
///
/// Image `i` draws from `rng.derive(i)`, so the result depends only on the
/// spec and the stream identity.
pub fn make_dataset(spec: &DatasetSpec, rng: &RngStream) -> Result<Vec<ToyImage>, LdmError> {
    spec.validate()?;
    let d = dct::dct_matrix();
    let mut out = Vec::with_capacity(spec.classes.iter().map(|c| c.count).sum());
    for (ci, class) in spec.classes.iter().enumerate() {
        let label = ConceptLabel(ci as u32 + 1);
        for _ in 0..class.count {
            let mut r = rng.derive(out.len() as u64);
            out.push(ToyImage::new(render_one(spec, class, &d, &mut r), label)?);
        }
    }
    Ok(out)
}
