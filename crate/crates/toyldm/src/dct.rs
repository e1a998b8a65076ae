//! Orthonormal 2-D DCT-II on the 32x32 image grid.

use crate::IMAGE_SIDE;

/// `D[u][x] = c(u) cos(pi (2x + 1) u / (2N))`, rows are frequencies.
pub fn dct_matrix() -> Vec<f64> {
    let n = IMAGE_SIDE;
    let mut d = vec![0f64; n * n];
    for u in 0..n {
        let c = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for x in 0..n {
            d[u * n + x] = c * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    d
}

/// Coefficients `C = D X D^T` of a row-major image.
pub fn forward(d: &[f64], img: &[f64]) -> Vec<f64> {
    let n = IMAGE_SIDE;
    let tmp = mul(d, img, n, false, false);
    mul(&tmp, d, n, false, true)
}

/// Image `X = D^T C D` from row-major coefficients.
pub fn inverse(d: &[f64], coef: &[f64]) -> Vec<f64> {
    let n = IMAGE_SIDE;
    let tmp = mul(d, coef, n, true, false);
    mul(&tmp, d, n, false, false)
}

fn mul(a: &[f64], b: &[f64], n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut out = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                let av = if ta { a[k * n + i] } else { a[i * n + k] };
                let bv = if tb { b[j * n + k] } else { b[k * n + j] };
                s += av * bv;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Whether coefficient `(u, v)` lies in the high band starting at `band`.
pub fn in_high_band(u: usize, v: usize, band: usize) -> bool {
    u >= band && v >= band
}
