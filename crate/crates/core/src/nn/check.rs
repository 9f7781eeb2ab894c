// Central finite-difference gradient verification.
//
// This is the independent oracle for every backward pass in the crate:
// rebuild the graph with one input element nudged by ±eps, difference the
// scalar outputs, and compare against the analytic gradient. The relative
// error metric is |analytic - numeric| / max(1, |analytic|, |numeric|),
// so tiny gradients are compared absolutely and large ones relatively.

use rand::Rng;

use super::rng::derive_rng;
use super::tape::{Tape, Value};
use super::Arr;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences.
///
/// `build` must construct the same graph every call, with the given leaf
/// tensors bound in order. At most `max_checks_per_leaf` elements per leaf
/// are probed (all of them if the leaf is small enough; a seeded subset
/// otherwise).
pub fn central_difference_check(
    build: &dyn Fn(&mut Tape, &[Value]) -> Value,
    leaves: &[Arr],
    eps: f64,
    max_checks_per_leaf: usize,
    seed: u64,
) -> FdReport {
    let eval = |inputs: &[Arr]| -> f64 {
        let mut tape = Tape::new();
        let handles: Vec<Value> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&mut tape, &handles);
        tape.scalar(root)
    };

    // analytic gradients
    let mut tape = Tape::new();
    let handles: Vec<Value> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&mut tape, &handles);
    let grads = tape.backward(root);
    let analytic: Vec<Arr> = handles
        .iter()
        .zip(leaves)
        .map(|(h, l)| grads.get_or_zeros(*h, l.shape()))
        .collect();

    let mut rng = derive_rng(seed, "fd/pick");
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut checked = 0usize;
    let mut inputs: Vec<Arr> = leaves.to_vec();
    for li in 0..leaves.len() {
        let n = leaves[li].len();
        let picks: Vec<usize> = if n <= max_checks_per_leaf {
            (0..n).collect()
        } else {
            (0..max_checks_per_leaf)
                .map(|_| rng.random_range(0..n))
                .collect()
        };
        for idx in picks {
            let orig = inputs[li].as_slice().unwrap()[idx];
            inputs[li].as_slice_mut().unwrap()[idx] = orig + eps;
            let fp = eval(&inputs);
            inputs[li].as_slice_mut().unwrap()[idx] = orig - eps;
            let fm = eval(&inputs);
            inputs[li].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[li].as_slice().unwrap()[idx];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
            sum_rel += rel;
            checked += 1;
        }
    }
    FdReport {
        max_rel_err: max_rel,
        mean_rel_err: if checked > 0 { sum_rel / checked as f64 } else { 0.0 },
        checked,
    }
}
