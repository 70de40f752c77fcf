//! Minimal differentiable-network core.
//!
//! Values live on a reverse-mode [`Graph`]; layers ([`Dense`], [`Gru`],
//! [`Conv1d`], [`Highway`]) append nodes to it and read their weights from a
//! [`NetworkParams`] store. Everything is generic over [`Real`] so the same
//! code trains in `f32` and is gradient-checked in `f64`.

mod graph;
mod layers;
mod optim;
mod real;
mod tensor;

pub use graph::{Gradients, Graph, Var, CE_FLOOR};
pub use layers::{
    apply_stack, forward, glorot, init_stack, stack_from_str, stack_to_string, Activation, Conv1d, Dense,
    ForwardPass, Gru, Highway, LayerSpec, RecurrentState,
};
pub use optim::{clip_global_norm, optimizer_step, AdamState};
pub use real::Real;
pub use tensor::{NetworkParams, Tensor};


use crate::error::{invalid, shape_err, Result};

/// `Σ_rows −ln(max(p[row, target], 1e-12))`.
///
/// `probs` rows must lie on the simplex (sum to 1 within 1e-6).
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    if probs.rows() != targets.len() {
        return Err(shape_err("cross_entropy", probs.rows(), targets.len()));
    }
    let k = probs.cols();
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = probs.row_slice(r);
        let s: f64 = row.iter().map(|v| v.f64()).sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|v| v.f64() < 0.0) {
            return Err(invalid(format!("row {r} is not a probability vector (sum {s})")));
        }
        if t >= k {
            return Err(invalid(format!("target {t} out of range for {k} classes")));
        }
        loss -= row[t].f64().max(CE_FLOOR).ln();
    }
    Ok(loss)
}

/// Dense one-hot rows to class indices. Rows must contain exactly one 1.
pub fn one_hot_to_indices<T: Real>(one_hot: &Tensor<T>) -> Result<Vec<usize>> {
    (0..one_hot.rows())
        .map(|r| {
            let row = one_hot.row_slice(r);
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| v.f64() == 1.0)
                .map(|(i, _)| i)
                .collect();
            let zeros = row.iter().filter(|v| v.f64() == 0.0).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return Err(invalid(format!("row {r} is not one-hot")));
            }
            Ok(ones[0])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(cross_entropy::<f64>(&p, &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_four_way_is_ln4() {
        let p = Tensor::matrix(1, 4, vec![0.25f64; 4]);
        let l = cross_entropy(&p, &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn row_count_mismatch_is_error() {
        let p = Tensor::matrix(2, 2, vec![0.5f64; 4]);
        assert!(cross_entropy(&p, &[0]).is_err());
    }

    #[test]
    fn one_hot_parsing() {
        let y = Tensor::matrix(2, 3, vec![0.0f64, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(one_hot_to_indices(&y).unwrap(), vec![2, 0]);
        let bad = Tensor::matrix(1, 3, vec![0.5f64, 0.5, 0.0]);
        assert!(one_hot_to_indices(&bad).is_err());
    }
}
