use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Clamp applied to transmittance before taking logs.
pub const OPACITY_EPS: f64 = 1e-6;

/// Mean over rays of the squared L2 color error.
pub fn color_loss(predicted: &[Vec3], target: &[Vec3]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(predicted.len(), target.len(), "batch length mismatch");
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).norm_squared())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Binary entropy of one transmittance value after clamping. Evaluated on
/// the larger of `t` and `1 - t`, whose complement is exact, so the result
/// is bitwise symmetric.
pub fn opacity_entropy(t: f64) -> f64 {
    let a = if t >= 0.5 { t } else { 1.0 - t };
    let a = a.min(1.0 - OPACITY_EPS);
    let b = 1.0 - a;
    -a * a.ln() - b * b.ln()
}

/// Derivative of [`opacity_entropy`]; zero in the clamped region.
pub fn opacity_entropy_grad(t: f64) -> f64 {
    if t <= OPACITY_EPS || t >= 1.0 - OPACITY_EPS {
        0.0
    } else {
        ((1.0 - t) / t).ln()
    }
}

/// Mean binary entropy of the foreground transmittances; 0 for no rays.
pub fn opacity_loss(transmittance: &[f64]) -> f64 {
    if transmittance.is_empty() {
        return 0.0;
    }
    transmittance.iter().map(|&t| opacity_entropy(t)).sum::<f64>() / transmittance.len() as f64
}
