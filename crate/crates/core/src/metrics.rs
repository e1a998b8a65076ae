use crate::{CoreError, Tensor};

/// Peak value of every internal image.
pub const PSNR_PEAK: f64 = 1.0;

/// `1 - <a,b> / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64, CoreError> {
    let dot = a.dot(b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::Domain("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean_distance(a: &Tensor, b: &Tensor) -> Result<f64, CoreError> {
    a.same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s.sqrt())
}

pub fn mse(reference: &Tensor, candidate: &Tensor) -> Result<f64, CoreError> {
    reference.same_shape(candidate)?;
    if reference.is_empty() {
        return Err(CoreError::invalid("mse of empty tensors"));
    }
    let s: f64 = reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / reference.len() as f64)
}

/// `10 log10(peak^2 / MSE)` in dB; `f64::INFINITY` when the images are identical.
pub fn psnr(reference: &Tensor, candidate: &Tensor, peak: f64) -> Result<f64, CoreError> {
    if peak <= 0.0 {
        return Err(CoreError::invalid("psnr peak must be positive"));
    }
    let m = mse(reference, candidate)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}
