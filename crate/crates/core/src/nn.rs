//! Network building blocks: equalized-learning-rate linear/conv layers,
//! parameter traversal and the Adam optimizer.
//!
//! Layers store raw weights drawn from a unit normal and apply the
//! `1/sqrt(fan_in)` gain at use time, so all parameters train at a comparable
//! scale regardless of layer width.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;


#[allow(unused_imports)] // inherent float methods are std-only
use num_traits::Float;
use rand::Rng;

use crate::tensor::{el, Element, Gradients, Tensor};

/// Slope shared by every leaky ReLU in the crate.
pub const LRELU_SLOPE: f64 = 0.2;

/// Leaky ReLU with the variance-preserving sqrt(2) gain.
pub fn lrelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(LRELU_SLOPE).mul_scalar(el(core::f64::consts::SQRT_2))
}

/// Normalize each row of `[B, N]` to unit RMS (the mapping network input
/// normalization).
pub fn pixel_norm<T: Element>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let n = x.dim(1);
    let ms = x
        .square()
        .row_sum()
        .mul_scalar(el(1.0 / n as f64))
        .add_scalar(el(eps))
        .sqrt()
        .recip();
    x.mul(&ms.broadcast_rows(n))
}

/// Anything that exposes named trainable tensors in a stable order.
pub trait Params<T: Element> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

/// Collect `(name, tensor)` pairs of a parameter set.
pub fn collect_params<T: Element>(p: &dyn Params<T>) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    p.visit(&mut |name, t| out.push((String::from(name), t.clone())));
    out
}

/// Total number of scalar parameters.
pub fn param_count<T: Element>(p: &dyn Params<T>) -> usize {
    let mut n = 0;
    p.visit(&mut |_, t| n += t.numel());
    n
}

/// Fully connected layer with equalized learning rate.
#[derive(Clone)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>, // [out, in]
    pub bias: Option<Tensor<T>>,
    w_scale: f64,
    lr_mul: f64,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng>(inf: usize, outf: usize, bias: bool, lr_mul: f64, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::randn(&[outf, inf], 1.0 / lr_mul, rng).leaf_copy(),
            bias: bias.then(|| Tensor::zeros(&[outf]).leaf_copy()),
            w_scale: 1.0 / (inf as f64).sqrt(),
            lr_mul,
        }
    }

    /// Zero-initialized variant (used by the pre-modulation heads so training
    /// starts from an identity transform).
    pub fn zeroed(inf: usize, outf: usize, bias: bool, lr_mul: f64) -> Self {
        Linear {
            weight: Tensor::zeros(&[outf, inf]).leaf_copy(),
            bias: bias.then(|| Tensor::zeros(&[outf]).leaf_copy()),
            w_scale: 1.0 / (inf as f64).sqrt(),
            lr_mul,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    /// `[B, in] -> [B, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let w = self.weight.mul_scalar(el(self.w_scale * self.lr_mul));
        let mut y = x.matmul(&w.transpose2d());
        if let Some(b) = &self.bias {
            y = y.add(&b.mul_scalar(el(self.lr_mul)).broadcast_cols(x.dim(0)));
        }
        y
    }
}

impl<T: Element> Params<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("weight", &self.weight);
        if let Some(b) = &self.bias {
            f("bias", b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }
}

/// 2-d convolution with equalized learning rate.
#[derive(Clone)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>, // [out, in, k, k]
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
    w_scale: f64,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng>(
        inf: usize,
        outf: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: Tensor::randn(&[outf, inf, k, k], 1.0, rng).leaf_copy(),
            bias: bias.then(|| Tensor::zeros(&[outf]).leaf_copy()),
            stride,
            pad,
            w_scale: 1.0 / ((inf * k * k) as f64).sqrt(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let w = self.weight.mul_scalar(el(self.w_scale));
        let mut y = x.conv2d(&w, self.stride, self.pad);
        if let Some(b) = &self.bias {
            y = y.bias_add_channel(b);
        }
        y
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    /// The runtime-scaled kernel (used by the modulated convolution, which
    /// needs the raw kernel before per-sample modulation).
    pub fn scaled_weight(&self) -> Tensor<T> {
        self.weight.mul_scalar(el(self.w_scale))
    }
}

impl<T: Element> Params<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("weight", &self.weight);
        if let Some(b) = &self.bias {
            f("bias", b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }
}

/// Residual block with stride-2 downsampling: two 3x3 convs on the main
/// path, a 1x1 stride-2 skip, outputs scaled by 1/sqrt(2).
#[derive(Clone)]
pub struct ResidualDown<T: Element> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub skip: Conv2d<T>,
}

impl<T: Element> ResidualDown<T> {
    pub fn new<R: Rng>(inf: usize, outf: usize, rng: &mut R) -> Self {
        ResidualDown {
            conv1: Conv2d::new(inf, outf, 3, 1, 1, true, rng),
            conv2: Conv2d::new(outf, outf, 3, 2, 1, true, rng),
            skip: Conv2d::new(inf, outf, 1, 2, 0, false, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv2.forward(&lrelu(&self.conv1.forward(x)));
        let s = self.skip.forward(x);
        lrelu(&h.add(&s).mul_scalar(el(core::f64::consts::FRAC_1_SQRT_2)))
    }
}

impl<T: Element> Params<T> for ResidualDown<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.conv1, "conv1", f);
        visit_child(&self.conv2, "conv2", f);
        visit_child(&self.skip, "skip", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.conv1, "conv1", f);
        visit_child_mut(&mut self.conv2, "conv2", f);
        visit_child_mut(&mut self.skip, "skip", f);
    }
}

/// Visit a child parameter set under a name prefix.
pub fn visit_child<T: Element>(
    child: &dyn Params<T>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &Tensor<T>),
) {
    child.visit(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}

/// Mutable counterpart of [`visit_child`].
pub fn visit_child_mut<T: Element>(
    child: &mut dyn Params<T>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Tensor<T>),
) {
    child.visit_mut(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}

/// Adam with bias correction. Moment state is keyed by parameter name so it
/// survives checkpointing.
pub struct Adam<T: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter that received a gradient.
    /// Parameters without a gradient are left untouched (their moments do
    /// not advance either).
    pub fn step(&mut self, params: &mut dyn Params<T>, grads: &Gradients<T>) {
        self.t += 1;
        let t = self.t;
        let (b1, b2) = (el::<T>(self.beta1), el::<T>(self.beta2));
        let bc1 = 1.0 - num_traits::Float::powi(self.beta1, t as i32);
        let bc2 = 1.0 - num_traits::Float::powi(self.beta2, t as i32);
        let lr = el::<T>(self.lr);
        let eps = el::<T>(self.eps);
        let (c1, c2) = (el::<T>(1.0 / bc1), el::<T>(1.0 / bc2));

        let m_map = &mut self.m;
        let v_map = &mut self.v;
        params.visit_mut(&mut |name, p| {
            let Some(g) = grads.get(p) else { return };
            let g = g.data();
            let m = m_map
                .entry(String::from(name))
                .or_insert_with(|| alloc::vec![T::zero(); g.len()]);
            let v = v_map
                .entry(String::from(name))
                .or_insert_with(|| alloc::vec![T::zero(); g.len()]);
            let mut new_data = p.to_vec();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] * c1;
                let v_hat = v[i] * c2;
                new_data[i] = new_data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p = Tensor::leaf(p.shape(), new_data);
        });
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Raw state for checkpointing: `(t, [(name, m, v)])`.
    pub fn export_state(&self) -> (u64, Vec<(String, Vec<T>, Vec<T>)>) {
        let mut rows = Vec::new();
        for (name, m) in &self.m {
            let v = self.v.get(name).expect("moment maps in sync");
            rows.push((name.clone(), m.clone(), v.clone()));
        }
        (self.t, rows)
    }

    pub fn import_state(&mut self, t: u64, rows: Vec<(String, Vec<T>, Vec<T>)>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in rows {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}

trait LeafCopy<T: Element> {
    fn leaf_copy(&self) -> Tensor<T>;
}
impl<T: Element> LeafCopy<T> for Tensor<T> {
    fn leaf_copy(&self) -> Tensor<T> {
        Tensor::leaf(self.shape(), self.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn linear_matches_manual_product() {
        let mut rng = stream_rng(1, Stream::WeightInit, 0);
        let lin = Linear::<f64>::new(3, 2, true, 1.0, &mut rng);
        let x = Tensor::new(&[1, 3], alloc::vec![1.0, -2.0, 0.5]);
        let y = lin.forward(&x);
        let w = lin.weight.data();
        let scale = 1.0 / 3f64.sqrt();
        for o in 0..2 {
            let expect: f64 = (0..3).map(|i| w[o * 3 + i] * scale * x.data()[i]).sum();
            assert!((y.data()[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        struct One(Tensor<f64>);
        impl Params<f64> for One {
            fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
                f("x", &self.0);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
                f("x", &mut self.0);
            }
        }
        let mut p = One(Tensor::leaf(&[2], alloc::vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..200 {
            let loss = p.0.square().sum_all();
            let grads = loss.backward();
            opt.step(&mut p, &grads);
        }
        assert!(p.0.data().iter().all(|x| x.abs() < 1e-2), "{:?}", p.0.data());
    }

    #[test]
    fn adam_with_zero_learning_rate_is_a_noop() {
        struct One(Tensor<f32>);
        impl Params<f32> for One {
            fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f32>)) {
                f("x", &self.0);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f32>)) {
                f("x", &mut self.0);
            }
        }
        let init = alloc::vec![0.5f32, -0.25, 0.0];
        let mut p = One(Tensor::leaf(&[3], init.clone()));
        let mut opt = Adam::new(0.0, 0.9, 0.999);
        for _ in 0..17 {
            let loss = p.0.square().sum_all();
            let grads = loss.backward();
            opt.step(&mut p, &grads);
        }
        assert_eq!(p.0.data(), &init[..]);
    }

    #[test]
    fn pixel_norm_gives_unit_rms_rows() {
        let mut rng = stream_rng(2, Stream::WeightInit, 0);
        let x = Tensor::<f64>::randn(&[3, 16], 2.0, &mut rng);
        let y = pixel_norm(&x, 1e-8);
        for r in 0..3 {
            let row = &y.data()[r * 16..(r + 1) * 16];
            let rms: f64 = row.iter().map(|v| v * v).sum::<f64>() / 16.0;
            assert!((rms - 1.0).abs() < 1e-6);
        }
    }
}
