//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward rules it checks.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default step for 64-bit central differences.
pub const STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Input and flat element index where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Central differences of a scalar function of several tensors.
pub fn numeric_gradient<F>(inputs: &[Tensor], step: f64, mut f: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = f(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = f(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Evaluates `build` on a fresh tape with `inputs` as trainable leaves and
/// compares the backward gradients with central differences.
pub fn check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| tape.grad(*v).cloned().expect("leaf gradient after backward"))
        .collect();

    let numeric = numeric_gradient(inputs, step, |ts| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    })?;

    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (av, nv)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(*av, *nv);
            if e > max_rel_error {
                max_rel_error = e;
                worst = (i, j);
            }
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}

/// `Σ weights ⊙ y`, a scalar whose gradient w.r.t. `y` is `weights`.
pub fn weighted_sum(tape: &mut Tape, y: Var, weights: Tensor) -> Result<Var> {
    let w = tape.constant(weights.reshape(tape.shape(y))?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}
