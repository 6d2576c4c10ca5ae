//! Kron-formula network losses.
//!
//! With outputs `p` in MW and `q = p / base_mva` in per-unit, the loss in
//! per-unit is `q' B q + B0' q + B00`; multiplying by `base_mva` gives MW:
//!
//! ```text
//! P_L(p) = (sum_ij B_ij p_i p_j) / base + sum_i B0_i p_i + B00 * base
//! ```

use crate::model::LossModel;

/// Transmission loss in MW for a dispatch `p` in MW.
pub fn transmission_loss(loss: &LossModel, p: &[f64]) -> f64 {
    let n = p.len();
    debug_assert_eq!(loss.b.len(), n);
    let mut quad = 0.0;
    for i in 0..n {
        let row = &loss.b[i];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * p[j];
        }
        quad += p[i] * acc;
    }
    let lin: f64 = loss.b0.iter().zip(p).map(|(b0, pi)| b0 * pi).sum();
    quad / loss.base_mva + lin + loss.b00 * loss.base_mva
}

/// Gradient of [`transmission_loss`] with respect to each output (MW/MW):
/// `dP_L/dp_i = 2 (B p)_i / base + B0_i`.
#[allow(clippy::needless_range_loop)] // explicit indices mirror the matrix formula
pub fn loss_gradient(loss: &LossModel, p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut g = vec![0.0; n];
    for i in 0..n {
        let row = &loss.b[i];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * p[j];
        }
        g[i] = 2.0 * acc / loss.base_mva + loss.b0[i];
    }
    g
}

/// Partial derivative for a single unit, for callers that touch one
/// coordinate at a time.
#[allow(clippy::needless_range_loop)] // explicit indices mirror the matrix formula
pub fn loss_partial(loss: &LossModel, p: &[f64], i: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..p.len() {
        acc += loss.b[i][j] * p[j];
    }
    2.0 * acc / loss.base_mva + loss.b0[i]
}
