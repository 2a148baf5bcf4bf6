//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it does not share
//! any code path with backward.

use crate::autodiff::{Graph, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding do not blow the ratio up.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the backward gradients of the scalar `f(inputs)` with central
/// differences of step `h`. `f` must be deterministic.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Graph, &[Var]) -> Result<Var, TensorError>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_err = 0.0;
    let mut worst = (0, 0);
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.numel()];
        for (k, slot) in grad.iter_mut().enumerate() {
            let orig = input.data()[k];
            work[i].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[k], *slot);
            if err > max_rel_err {
                max_rel_err = err;
                worst = (i, k);
            }
        }
        numeric.push(Tensor::new(input.shape().to_vec(), grad)?);
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        analytic,
        numeric,
    })
}
