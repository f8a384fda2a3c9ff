//! Central finite-difference gradient checking.
//!
//! Used by the unit and acceptance suites; the numeric path here is
//! independent of the tape's backward pass.

use super::tape::{Tape, TensorId};

/// Default step and tolerance for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Shape plus initial values for one differentiable input.
#[derive(Clone)]
pub struct CheckInput {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CheckInput {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        CheckInput { rows, cols, values }
    }
}

/// Compare analytic gradients of `f` (a scalar-valued tape program over the
/// given leaves) against central finite differences on every coordinate.
/// Returns the worst relative error observed.
pub fn check_gradients<F>(inputs: &[CheckInput], f: F) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let run = |perturb: Option<(usize, usize, f64)>| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs
            .iter()
            .enumerate()
            .map(|(i, inp)| {
                let mut vals = inp.values.clone();
                if let Some((pi, pj, dv)) = perturb {
                    if pi == i {
                        vals[pj] += dv;
                    }
                }
                tape.leaf(inp.rows, inp.cols, vals)
            })
            .collect();
        let loss = f(&mut tape, &ids);
        assert_eq!(tape.shape(loss), (1, 1), "gradcheck target must be scalar");
        let value = tape.value_scalar(loss);
        tape.backward(loss).unwrap();
        let grads = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();
        (value, grads)
    };

    let (_, analytic) = run(None);
    let mut worst = 0.0f64;
    for (i, inp) in inputs.iter().enumerate() {
        for j in 0..inp.values.len() {
            let (plus, _) = run(Some((i, j, FD_STEP)));
            let (minus, _) = run(Some((i, j, -FD_STEP)));
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic[i][j];
            let denom = an.abs().max(fd.abs()).max(1.0);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}

/// Assert that all gradients of `f` pass at the standing tolerance.
pub fn assert_gradients<F>(inputs: &[CheckInput], f: F)
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let worst = check_gradients(inputs, f);
    assert!(worst < FD_TOL, "gradient check failed: worst rel err {worst:e}");
}

/// Deterministic pseudo-random values in [-1, 1] for check inputs.
pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    use crate::seed::derive_seed;
    (0..n)
        .map(|i| {
            let bits = derive_seed(seed, "gradcheck", &[i as u64]);
            (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}
