//! Finite-difference gradient verification.

use alloc::vec::Vec;

use super::Tensor;

/// Central-difference gradient of `f` w.r.t. the `input`-th leaf.
///
/// `f` must be a pure function of the given leaves that returns a scalar
/// (one-element) tensor.
pub fn numeric_gradient<F>(f: &F, leaves: &[Tensor<f64>], input: usize, eps: f64) -> Vec<f64>
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let base = leaves[input].to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let eval = |data: Vec<f64>| {
            let mut xs: Vec<Tensor<f64>> = leaves.to_vec();
            xs[input] = Tensor::leaf(leaves[input].shape(), data);
            f(&xs).item()
        };
        grad.push((eval(plus) - eval(minus)) / (2.0 * eps));
    }
    grad
}

/// Compare reverse-mode and central-difference gradients for every leaf.
///
/// The error measure is `|a - n| / max(1e-6, |a|, |n|)`; returns the largest
/// relative error seen, or panics with a description if it exceeds `tol`.
pub fn gradcheck<F>(f: F, leaves: &[Tensor<f64>], eps: f64, tol: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    match gradcheck_verbose(f, leaves, eps, tol) {
        Ok(worst) => worst,
        Err(msg) => panic!("{msg}"),
    }
}

/// Like [`gradcheck`] but reports failures instead of panicking.
pub fn gradcheck_verbose<F>(
    f: F,
    leaves: &[Tensor<f64>],
    eps: f64,
    tol: f64,
) -> Result<f64, alloc::string::String>
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let out = f(leaves);
    assert_eq!(out.numel(), 1, "gradcheck target must be scalar");
    let grads = out.backward();
    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let auto = grads.get_or_zeros(leaf);
        let numeric = numeric_gradient(&f, leaves, li, eps);
        for (i, (a, n)) in auto.data().iter().zip(numeric.iter()).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            let rel = (a - n).abs() / denom;
            if rel > worst {
                worst = rel;
            }
            if rel > tol {
                return Err(alloc::format!(
                    "gradient mismatch on leaf {li} element {i}: autodiff {a}, numeric {n}, rel {rel:.3e} > tol {tol:.1e}"
                ));
            }
        }
    }
    Ok(worst)
}
