#![allow(dead_code)]

use pesto::tensor::{Tape, Tensor, Var};

/// Relative error with a floor on the denominator so that gradients that are
/// essentially zero are compared on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite differences of `f` w.r.t. every element of every input.
pub fn numeric_grads(inputs: &[Tensor], h: f64, f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::new();
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].numel()];
        for i in 0..g.len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            g[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Compares tape gradients of the scalar built by `build` against finite
/// differences; returns the worst relative error.
pub fn check_op(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    let numeric = numeric_grads(inputs, 1e-5, &eval);
    let mut worst: f64 = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        let analytic = tape.grad(*v).map(|g| g.to_vec()).unwrap_or(vec![0.0; num.len()]);
        for (a, n) in analytic.iter().zip(num) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

/// Fixed per-element weights turn any tensor into a non-trivial scalar.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let n = tape.value(x).numel();
    let w: Vec<f64> = (0..n)
        .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    let y = tape.mul_const(x, w).unwrap();
    tape.sum(y)
}
