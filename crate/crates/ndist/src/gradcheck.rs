//! Central-finite-difference gradient verification. Used by the per-module
//! gradient tests and the acceptance suite; only meaningful in f64 mode.

use candle_core::{DType, Tensor, Var};

use crate::error::{NdistError, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl std::fmt::Display for GradMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
            self.name, self.index, self.analytic, self.numeric, self.rel_err
        )
    }
}

/// Compare backward-pass gradients of `loss_fn` against central finite
/// differences on `entries_per_var` randomly chosen entries of each listed
/// variable. Fails if any relative error exceeds `tol`.
pub fn check_grads<F>(
    vars: &[(String, Var)],
    loss_fn: F,
    entries_per_var: usize,
    step: f64,
    tol: f64,
    rng: &mut SeedRng,
) -> Result<Vec<GradMismatch>>
where
    F: Fn() -> Result<Tensor>,
{
    let loss = loss_fn()?;
    if loss.dtype() != DType::F64 {
        return Err(NdistError::invalid(
            "check_grads",
            "gradient checks require f64 mode",
        ));
    }
    let grads = loss.backward()?;
    let mut checked = Vec::new();
    for (name, var) in vars {
        let n = var.elem_count();
        if n == 0 {
            continue;
        }
        let analytic: Vec<f64> = match grads.get(var) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; n],
        };
        let base: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
        let shape = var.shape().clone();
        let dev = var.device().clone();
        for _ in 0..entries_per_var.min(n) {
            let idx = rng.usize_below(n);
            let mut plus = base.clone();
            plus[idx] += step;
            var.set(&Tensor::from_vec(plus, shape.clone(), &dev)?)?;
            let lp: f64 = loss_fn()?.to_vec0()?;
            let mut minus = base.clone();
            minus[idx] -= step;
            var.set(&Tensor::from_vec(minus, shape.clone(), &dev)?)?;
            let lm: f64 = loss_fn()?.to_vec0()?;
            var.set(&Tensor::from_vec(base.clone(), shape.clone(), &dev)?)?;
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            let rel_err = (a - numeric).abs() / denom;
            let rec = GradMismatch {
                name: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_err,
            };
            if rel_err > tol {
                return Err(NdistError::invalid("check_grads", rec.to_string()));
            }
            checked.push(rec);
        }
    }
    Ok(checked)
}
