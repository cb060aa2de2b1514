//! Recovery metrics reported in decibels.

use nalgebra::DVector;

use crate::error::{domain, Result};

/// Reported in place of `-inf` when the estimate is exact.
pub const DB_FLOOR: f64 = -150.0;

fn to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        DB_FLOOR
    } else {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    }
}

fn nmse_ratio(x_hat: &DVector<f64>, x_true: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(crate::Error::Shape(format!(
            "estimate has length {}, truth has {}",
            x_hat.len(),
            x_true.len()
        )));
    }
    let energy = x_true.norm_squared();
    if energy == 0.0 {
        return Err(domain("x_true", "NMSE undefined for an all-zero signal"));
    }
    Ok((x_hat - x_true).norm_squared() / energy)
}

/// `10 log10(||x_hat - x||^2 / ||x||^2)`.
pub fn nmse_db(x_hat: &DVector<f64>, x_true: &DVector<f64>) -> Result<f64> {
    nmse_ratio(x_hat, x_true).map(to_db)
}

/// Time-averaged NMSE over frames, in dB.
pub fn tnmse_db(x_hat: &[DVector<f64>], x_true: &[DVector<f64>]) -> Result<f64> {
    if x_hat.len() != x_true.len() || x_true.is_empty() {
        return Err(crate::Error::Shape(format!(
            "{} estimated frames vs {} true frames",
            x_hat.len(),
            x_true.len()
        )));
    }
    let mut total = 0.0;
    for (xh, xt) in x_hat.iter().zip(x_true) {
        total += nmse_ratio(xh, xt)?;
    }
    Ok(to_db(total / x_true.len() as f64))
}

/// Per-frame NMSE values in dB.
pub fn frame_nmse_db(x_hat: &[DVector<f64>], x_true: &[DVector<f64>]) -> Result<Vec<f64>> {
    x_hat
        .iter()
        .zip(x_true)
        .map(|(a, b)| nmse_db(a, b))
        .collect()
}
