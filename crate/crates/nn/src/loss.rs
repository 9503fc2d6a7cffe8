//! Masked losses over flat per-cell predictions.
//!
//! `mask[i] == false` removes cell `i` from both the loss and its gradient.
//! `N` below is the number of masked-in cells. Each function returns the loss
//! and its gradient w.r.t. `predicted` (zero at masked-out cells).

use crate::error::{NnError, Result};

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before any log.
pub const EPSILON: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPSILON, 1.0 - EPSILON)
}

fn masked_count(op: &'static str, mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(NnError::Invalid(format!("{op}: every cell is masked out")));
    }
    Ok(n as f64)
}

fn check_lengths(op: &'static str, a: usize, b: usize, mask: usize) -> Result<()> {
    if a != b || a != mask {
        return Err(NnError::shape(op, format!("predicted {a}, actual {b}, mask {mask}")));
    }
    Ok(())
}

/// Binary cross entropy: `-(1/N) Σ [y log p + (1-y) log(1-p)]`.
///
/// The gradient is taken at the clamped probability, so saturated
/// predictions still receive a corrective signal.
pub fn bce_loss(predicted: &[f64], actual: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths("bce", predicted.len(), actual.len(), mask.len())?;
    let n = masked_count("bce", mask)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; predicted.len()];
    for k in 0..predicted.len() {
        if !mask[k] {
            continue;
        }
        let p = clamp_prob(predicted[k]);
        let y = actual[k];
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad[k] = (-y / p + (1.0 - y) / (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}

/// Mean squared error: `(1/N) Σ (y - ŷ)²`.
pub fn mse_loss(predicted: &[f64], actual: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths("mse", predicted.len(), actual.len(), mask.len())?;
    let n = masked_count("mse", mask)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; predicted.len()];
    for k in 0..predicted.len() {
        if !mask[k] {
            continue;
        }
        let e = predicted[k] - actual[k];
        loss += e * e;
        grad[k] = 2.0 * e / n;
    }
    Ok((loss / n, grad))
}

/// Multi-class cross entropy over independent per-class sigmoid outputs:
/// `-(1/N) Σ_cells Σ_k y_k log p_k`.
///
/// `predicted` and `actual` are cell-major (`cell * classes + k`); `mask`
/// has one flag per cell.
pub fn mcce_loss(predicted: &[f64], actual: &[f64], mask: &[bool], classes: usize) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || predicted.len() != mask.len() * classes || actual.len() != predicted.len() {
        return Err(NnError::shape(
            "mcce",
            format!(
                "predicted {}, actual {} for {} cells × {classes} classes",
                predicted.len(),
                actual.len(),
                mask.len()
            ),
        ));
    }
    let n = masked_count("mcce", mask)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; predicted.len()];
    for (cell, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for k in cell * classes..(cell + 1) * classes {
            let y = actual[k];
            if y == 0.0 {
                continue;
            }
            let p = clamp_prob(predicted[k]);
            loss -= y * p.ln();
            grad[k] = -y / (p * n);
        }
    }
    Ok((loss / n, grad))
}
