//! Central finite-difference checks for tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely instead of relatively.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Tensor with entries uniform in [-1, 1].
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars)?.item()
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&tape, &vars)?;
    tape.backward(root)?;
    Ok(vars
        .iter()
        .map(|v| v.grad().expect("leaf is tracked"))
        .collect())
}

/// Central-difference gradients of `f` at `inputs`.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut point = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].shape().to_vec());
        for idx in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[idx];
            point[k].data_mut()[idx] = x0 + STEP;
            let up = eval(&point, f)?;
            point[k].data_mut()[idx] = x0 - STEP;
            let down = eval(&point, f)?;
            point[k].data_mut()[idx] = x0;
            g.data_mut()[idx] = (up - down) / (2.0 * STEP);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest [`relative_error`] between analytic and central-difference
/// gradients of the scalar `f` over every entry of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
