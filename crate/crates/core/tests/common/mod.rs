#![allow(dead_code)]

pub mod loss_checks;

use dccl_core::autodiff::{Tape, Var};
use dccl_core::connectivity::pairwise_distances;
use dccl_core::Tensor;
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between the tape's gradient and central finite
/// differences, over every entry of every input.
///
/// `f` builds the scalar loss from the inputs and returns it together with
/// the variables whose gradients correspond to `inputs`, in order.
pub fn max_grad_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Tensor]) -> (Var<'t>, Vec<Var<'t>>),
{
    let tape = Tape::new();
    let (loss, vars) = f(&tape, inputs);
    assert_eq!(vars.len(), inputs.len());
    let grads = tape.backward(loss).expect("scalar loss");
    let value = |xs: &[Tensor]| {
        let t = Tape::new();
        let v = f(&t, xs).0.value().item();
        v
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[e], numeric));
        }
    }
    worst
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Labels cycling through every class so each class has at least two
/// members once `n >= 2 * classes`, shuffled.
pub fn labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest candidate distance whose `<=` graph is connected, found by
/// sweeping the sorted distance multiset and flood-filling each time.
pub fn brute_force_threshold(p: &[Vec<f64>]) -> Option<f64> {
    let k = p.len();
    if k < 2 {
        return None;
    }
    let mut candidates = pairwise_distances(p);
    candidates.sort_by(f64::total_cmp);
    candidates.into_iter().find(|&t| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                if !seen[j] && dist(&p[i], &p[j]) <= t {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}
