//! Gradient verification for the tensor engine: every primitive op is
//! checked against central finite differences at 64-bit precision, plus a
//! second-order check that mirrors how the R1 penalty uses the engine.

use latentfill_core::rng::{stream_rng, Stream};
use latentfill_core::tensor::{gradcheck, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream_rng(seed, Stream::WeightInit, 0);
    Tensor::randn(shape, 1.0, &mut rng).leaf_like()
}

trait LeafLike {
    fn leaf_like(&self) -> Tensor<f64>;
}
impl LeafLike for Tensor<f64> {
    fn leaf_like(&self) -> Tensor<f64> {
        Tensor::leaf(self.shape(), self.to_vec())
    }
}

#[test]
fn elementwise_ops() {
    let x = randn(&[3, 4], 1);
    let y = randn(&[3, 4], 2);
    gradcheck(|v| v[0].add(&v[1]).mul(&v[0]).sum_all(), &[x.clone(), y.clone()], EPS, TOL);
    gradcheck(|v| v[0].sub(&v[1]).square().sum_all(), &[x.clone(), y.clone()], EPS, TOL);
    gradcheck(|v| v[0].mul_scalar(2.5).add_scalar(-0.3).sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].tanh().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].sigmoid().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].softplus().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].mul(&v[0]).add_scalar(1.5).sqrt().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(
        |v| v[0].square().add_scalar(0.7).recip().sum_all(),
        &[x.clone()],
        EPS,
        TOL,
    );
    // |x| is checked away from the kink.
    let off = x.add_scalar(5.0).leaf_like();
    gradcheck(|v| v[0].abs().sum_all(), &[off], EPS, TOL);
    gradcheck(|v| v[0].leaky_relu(0.2).sum_all(), &[x.clone()], EPS, 1e-4);
    gradcheck(|v| v[0].mean_all(), &[x], EPS, TOL);
}

#[test]
fn reductions_and_broadcasts() {
    let x = randn(&[4, 6], 3);
    let v = randn(&[4], 4);
    let w = randn(&[6], 5);
    gradcheck(|t| t[0].row_sum().square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|t| t[0].col_sum().square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(
        |t| t[0].broadcast_rows(6).mul(&t[1]).sum_all(),
        &[v.clone(), x.clone()],
        EPS,
        TOL,
    );
    gradcheck(
        |t| t[0].broadcast_cols(4).mul(&t[1]).sum_all(),
        &[w, x.clone()],
        EPS,
        TOL,
    );
    gradcheck(
        |t| t[0].sum_all().spread_scalar(&[2, 2]).square().sum_all(),
        &[v],
        EPS,
        TOL,
    );
    gradcheck(|t| t[0].reshape(&[2, 12]).row_sum().square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|t| t[0].transpose2d().row_sum().square().sum_all(), &[x], EPS, TOL);
}

#[test]
fn matmul_all_transpose_combinations() {
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [2, 5, 3] } else { [2, 3, 5] };
        let b_shape = if tb { [2, 4, 5] } else { [2, 5, 4] };
        let a = randn(&a_shape, 10 + ta as u64);
        let b = randn(&b_shape, 20 + tb as u64);
        gradcheck(
            |v| v[0].batch_matmul(&v[1], ta, tb).square().sum_all(),
            &[a, b],
            EPS,
            1e-5,
        );
    }
}

#[test]
fn channel_ops() {
    let x = randn(&[2, 3, 4, 4], 6);
    let bias = randn(&[3], 7);
    let scales = randn(&[2, 3], 8);
    let other = randn(&[2, 3, 4, 4], 9);
    gradcheck(
        |v| v[0].bias_add_channel(&v[1]).square().sum_all(),
        &[x.clone(), bias],
        EPS,
        TOL,
    );
    gradcheck(|v| v[0].sum_to_channel().square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(
        |v| v[0].scale_channels(&v[1]).square().sum_all(),
        &[x.clone(), scales.clone()],
        EPS,
        TOL,
    );
    gradcheck(
        |v| v[0].channel_dot(&v[1]).square().sum_all(),
        &[x.clone(), other.clone()],
        EPS,
        TOL,
    );
    gradcheck(
        |v| {
            Tensor::concat_channels(&[v[0].clone(), v[1].clone()])
                .slice_channels(2, 5)
                .square()
                .sum_all()
        },
        &[x, other],
        EPS,
        TOL,
    );
}

#[test]
fn convolution_geometries() {
    // (C, H, O, K, stride, pad)
    let cases = [
        (2, 6, 3, 3, 1, 1),
        (3, 8, 2, 3, 2, 1),
        (2, 5, 4, 1, 1, 0),
        (1, 7, 2, 5, 1, 2),
    ];
    for (idx, &(c, h, o, k, stride, pad)) in cases.iter().enumerate() {
        let x = randn(&[2, c, h, h], 30 + idx as u64);
        let w = randn(&[o, c, k, k], 40 + idx as u64);
        gradcheck(
            |v| v[0].conv2d(&v[1], stride, pad).square().sum_all(),
            &[x, w],
            EPS,
            1e-5,
        );
    }
}

#[test]
fn conv_adjoint_ops_differentiate() {
    // input-gradient and weight-gradient as forward ops, then gradcheck them
    let g = randn(&[1, 2, 3, 3], 50);
    let w = randn(&[2, 3, 3, 3], 51);
    gradcheck(
        |v| v[0].conv2d_input_grad(&v[1], 2, 1, 6, 6).square().sum_all(),
        &[g.clone(), w],
        EPS,
        1e-5,
    );
    let x = randn(&[1, 3, 6, 6], 52);
    gradcheck(
        |v| {
            latentfill_core::tensor::conv2d_weight_grad(&v[0], &v[1], 3, 2, 1)
                .square()
                .sum_all()
        },
        &[x, g],
        EPS,
        1e-5,
    );
}

#[test]
fn pooling_and_upsampling() {
    let x = randn(&[2, 3, 8, 8], 60);
    gradcheck(|v| v[0].avg_pool(2).square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].avg_pool(4).square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(|v| v[0].upsample_nearest(2).square().sum_all(), &[x.clone()], EPS, TOL);
    gradcheck(
        |v| v[0].upsample_nearest(3).avg_pool(3).sub(&v[0]).square().sum_all(),
        &[x],
        EPS,
        TOL,
    );
}

#[test]
fn second_order_gradient_matches_finite_difference_of_gradient() {
    // phi(x) = sum_i (d f/d x_i)^2 for f = sum(tanh(x W)) — the same
    // shape of computation as the R1 gradient penalty.
    let x = randn(&[1, 4], 70);
    let w = randn(&[4, 3], 71);

    let phi = |v: &[Tensor<f64>]| {
        let f = v[0].matmul(&v[1]).tanh().sum_all();
        let grads = f.backward();
        let gx = grads.get_or_zeros(&v[0]);
        gx.square().sum_all()
    };
    gradcheck(phi, &[x, w], 1e-5, 1e-4);
}

#[test]
fn gradients_accumulate_across_multiple_uses() {
    let x = Tensor::leaf(&[2], vec![1.5f64, -0.5]);
    let y = x.mul(&x).add(&x).sum_all(); // d/dx (x^2 + x) = 2x + 1
    let grads = y.backward();
    let g = grads.get_or_zeros(&x);
    assert!((g.data()[0] - 4.0).abs() < 1e-12);
    assert!((g.data()[1] - 0.0).abs() < 1e-12);
}

#[test]
fn detached_tensors_block_gradients() {
    let x = Tensor::leaf(&[2], vec![1.0f64, 2.0]);
    let y = x.detach().square().sum_all();
    let grads = y.backward();
    assert!(grads.get(&x).is_none());
}
