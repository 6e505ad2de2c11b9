//! Tensor operations.
//!
//! Every backward closure is written in terms of the public ops, so the
//! gradient of a gradient is well-defined for the whole op set (activations
//! with piecewise-constant derivative masks treat the mask as constant).

use alloc::vec;
use alloc::vec::Vec;

use super::{el, same_shape, Element, Tensor};

impl<T: Element> Tensor<T> {
    // ---- elementwise binary ----------------------------------------------

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "add");
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a + *b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "sub");
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a - *b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.clone()), Some(g.neg())]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "mul");
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a * *b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.mul(&b)), Some(g.mul(&a))]),
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self)
    }

    // ---- elementwise unary -----------------------------------------------

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(el(-1.0))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|a| *a + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.clone())]),
        )
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|a| *a * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.mul_scalar(c))]),
        )
    }

    /// Elementwise sign as a constant (no gradient flows through it).
    pub fn sign_const(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|a| {
                if *a > T::zero() {
                    T::one()
                } else if *a < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Tensor::new(self.shape(), data)
    }

    pub fn abs(&self) -> Tensor<T> {
        let data = self.data().iter().map(|a| a.abs()).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.mul(&x.sign_const()))]),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data = self.data().iter().map(|a| a.tanh()).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                let y = x.tanh();
                // g * (1 - y^2)
                vec![Some(g.mul(&y.square().neg().add_scalar(T::one())))]
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data = self.data().iter().map(|a| a.sqrt()).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![Some(g.mul(&x.sqrt().recip()).mul_scalar(el(0.5)))]
            }),
        )
    }

    pub fn recip(&self) -> Tensor<T> {
        let data = self.data().iter().map(|a| T::one() / *a).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                let r = x.recip();
                vec![Some(g.mul(&r.square()).neg())]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|a| stable_sigmoid(*a)).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                let y = x.sigmoid();
                vec![Some(g.mul(&y.mul(&y.neg().add_scalar(T::one()))))]
            }),
        )
    }

    pub fn softplus(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|a| {
                let x = *a;
                x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
            })
            .collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.mul(&x.sigmoid()))]),
        )
    }

    pub fn leaky_relu(&self, alpha: f64) -> Tensor<T> {
        let a = el::<T>(alpha);
        let data = self
            .data()
            .iter()
            .map(|x| if *x >= T::zero() { *x } else { *x * a })
            .collect();
        let mask: Vec<T> = self
            .data()
            .iter()
            .map(|x| if *x >= T::zero() { T::one() } else { a })
            .collect();
        let mask = Tensor::new(self.shape(), mask);
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.mul(&mask))]),
        )
    }

    // ---- reductions and broadcasts ----------------------------------------

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let shape = self.shape().to_vec();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.spread_scalar(&shape))]),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.sum_all().mul_scalar(el(1.0 / self.numel() as f64))
    }

    /// Repeat a `[1]` tensor into an arbitrary shape.
    pub fn spread_scalar(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(self.numel(), 1, "spread_scalar needs a one-element tensor");
        let n: usize = shape.iter().product();
        let data = vec![self.data()[0]; n];
        Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.sum_all())]),
        )
    }

    /// `[M, N] -> [M]`, summing over the last axis.
    pub fn row_sum(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "row_sum needs a 2-d tensor");
        let (m, n) = (self.dim(0), self.dim(1));
        let mut out = vec![T::zero(); m];
        for i in 0..m {
            out[i] = self.data()[i * n..(i + 1) * n].iter().copied().sum();
        }
        Tensor::from_op(
            vec![m],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.broadcast_rows(n))]),
        )
    }

    /// `[M] -> [M, N]`, repeating each entry along a new last axis.
    pub fn broadcast_rows(&self, n: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 1, "broadcast_rows needs a 1-d tensor");
        let m = self.dim(0);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(core::iter::repeat(self.data()[i]).take(n));
        }
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.row_sum())]),
        )
    }

    /// `[M, N] -> [N]`, summing over the first axis.
    pub fn col_sum(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "col_sum needs a 2-d tensor");
        let (m, n) = (self.dim(0), self.dim(1));
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] = out[j] + self.data()[i * n + j];
            }
        }
        Tensor::from_op(
            vec![n],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.broadcast_cols(m))]),
        )
    }

    /// `[N] -> [M, N]`, repeating the row M times.
    pub fn broadcast_cols(&self, m: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 1, "broadcast_cols needs a 1-d tensor");
        let n = self.dim(0);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.data());
        }
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.col_sum())]),
        )
    }

    // ---- shape -------------------------------------------------------------

    /// Same data, new shape (zero copy).
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            self.numel(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let old = self.shape().to_vec();
        let node = &self.0;
        let data = node.data.clone();
        let out = Tensor::from_op(
            shape.to_vec(),
            Vec::new(), // replaced below
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.reshape(&old))]),
        );
        // Swap in the shared buffer without copying.
        let inner = alloc::sync::Arc::into_inner(out.0).expect("fresh node");
        Tensor(alloc::sync::Arc::new(super::Node { data, ..inner }))
    }

    pub fn transpose2d(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "transpose2d needs a 2-d tensor");
        let (m, n) = (self.dim(0), self.dim(1));
        let src = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.transpose2d())]),
        )
    }

    // ---- matmul ------------------------------------------------------------

    /// Batched matrix product on `[B, M, K] x [B, K, N]`, with optional
    /// transposition of the two trailing axes of either input.
    pub fn batch_matmul(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
        assert_eq!(self.rank(), 3, "batch_matmul lhs must be 3-d");
        assert_eq!(other.rank(), 3, "batch_matmul rhs must be 3-d");
        let batch = self.dim(0);
        assert_eq!(batch, other.dim(0), "batch_matmul: batch mismatch");
        let (m, ka) = if ta {
            (self.dim(2), self.dim(1))
        } else {
            (self.dim(1), self.dim(2))
        };
        let (kb, n) = if tb {
            (other.dim(2), other.dim(1))
        } else {
            (other.dim(1), other.dim(2))
        };
        assert_eq!(ka, kb, "batch_matmul: inner dimension mismatch");
        let k = ka;

        let a_rows = self.dim(1);
        let a_cols = self.dim(2);
        let b_rows = other.dim(1);
        let b_cols = other.dim(2);
        let (rsa, csa) = if ta {
            (1isize, a_cols as isize)
        } else {
            (a_cols as isize, 1isize)
        };
        let (rsb, csb) = if tb {
            (1isize, b_cols as isize)
        } else {
            (b_cols as isize, 1isize)
        };

        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            let a = &self.data()[i * a_rows * a_cols..];
            let b = &other.data()[i * b_rows * b_cols..];
            let c = &mut out[i * m * n..(i + 1) * m * n];
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    T::zero(),
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }

        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![batch, m, n],
            out,
            vec![self.clone(), other.clone()],
            alloc::boxed::Box::new(move |g| {
                let ga = if ta {
                    // gA = B_eff @ g^T, transposed back into a's layout
                    if tb {
                        pb.batch_matmul(g, true, true)
                    } else {
                        pb.batch_matmul(g, false, true)
                    }
                } else if tb {
                    g.batch_matmul(&pb, false, false)
                } else {
                    g.batch_matmul(&pb, false, true)
                };
                let gb = if tb {
                    if ta {
                        g.batch_matmul(&pa, true, true)
                    } else {
                        g.batch_matmul(&pa, true, false)
                    }
                } else if ta {
                    pa.batch_matmul(g, false, false)
                } else {
                    pa.batch_matmul(g, true, false)
                };
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Plain 2-d matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2);
        assert_eq!(other.rank(), 2);
        let a = self.reshape(&[1, self.dim(0), self.dim(1)]);
        let b = other.reshape(&[1, other.dim(0), other.dim(1)]);
        let y = a.batch_matmul(&b, false, false);
        let shape = [y.dim(1), y.dim(2)];
        y.reshape(&shape)
    }

    // ---- channel helpers (NCHW) ---------------------------------------------

    /// Add a per-channel bias `[C]` to `[B, C, H, W]`.
    pub fn bias_add_channel(&self, bias: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        assert_eq!(bias.rank(), 1);
        let (b, c, h, w) = dims4(self);
        assert_eq!(bias.dim(0), c, "bias_add_channel: channel mismatch");
        let hw = h * w;
        let mut out = self.to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let v = bias.data()[ci];
                let base = (bi * c + ci) * hw;
                for x in &mut out[base..base + hw] {
                    *x = *x + v;
                }
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.clone()), Some(g.sum_to_channel())]),
        )
    }

    /// `[B, C, H, W] -> [C]`, summing over batch and space.
    pub fn sum_to_channel(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = dims4(self);
        let hw = h * w;
        let mut out = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                out[ci] = out[ci] + self.data()[base..base + hw].iter().copied().sum();
            }
        }
        let dims = (b, h, w);
        Tensor::from_op(
            vec![c],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.broadcast_channel(dims.0, dims.1, dims.2))]),
        )
    }

    /// `[C] -> [B, C, H, W]`.
    pub fn broadcast_channel(&self, b: usize, h: usize, w: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 1);
        let c = self.dim(0);
        let hw = h * w;
        let mut out = Vec::with_capacity(b * c * hw);
        for _ in 0..b {
            for ci in 0..c {
                out.extend(core::iter::repeat(self.data()[ci]).take(hw));
            }
        }
        Tensor::from_op(
            vec![b, c, h, w],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.sum_to_channel())]),
        )
    }

    /// Multiply `[B, C, H, W]` by per-sample per-channel scales `[B, C]`.
    pub fn scale_channels(&self, scales: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        assert_eq!(scales.rank(), 2);
        let (b, c, h, w) = dims4(self);
        assert_eq!(scales.dim(0), b);
        assert_eq!(scales.dim(1), c);
        let hw = h * w;
        let mut out = self.to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let s = scales.data()[bi * c + ci];
                let base = (bi * c + ci) * hw;
                for x in &mut out[base..base + hw] {
                    *x = *x * s;
                }
            }
        }
        let (px, ps) = (self.clone(), scales.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), scales.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![Some(g.scale_channels(&ps)), Some(g.channel_dot(&px))]
            }),
        )
    }

    /// Per-sample per-channel dot product over space: `[B, C]`.
    pub fn channel_dot(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "channel_dot");
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = dims4(self);
        let hw = h * w;
        let mut out = vec![T::zero(); b * c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let mut acc = T::zero();
                for i in 0..hw {
                    acc = acc + self.data()[base + i] * other.data()[base + i];
                }
                out[bi * c + ci] = acc;
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![b, c],
            out,
            vec![self.clone(), other.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![Some(pb.scale_channels(g)), Some(pa.scale_channels(g))]
            }),
        )
    }

    /// Concatenate `[B, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty());
        let (b, _, h, w) = dims4(&parts[0]);
        let cs: Vec<usize> = parts.iter().map(|p| p.dim(1)).collect();
        let c_total: usize = cs.iter().sum();
        for p in parts {
            assert_eq!(p.dim(0), b);
            assert_eq!(p.dim(2), h);
            assert_eq!(p.dim(3), w);
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * c_total * hw);
        for bi in 0..b {
            for p in parts {
                let c = p.dim(1);
                let base = bi * c * hw;
                out.extend_from_slice(&p.data()[base..base + c * hw]);
            }
        }
        let boundaries: Vec<usize> = {
            let mut acc = 0;
            let mut v = vec![0];
            for c in &cs {
                acc += c;
                v.push(acc);
            }
            v
        };
        Tensor::from_op(
            vec![b, c_total, h, w],
            out,
            parts.to_vec(),
            alloc::boxed::Box::new(move |g| {
                (0..boundaries.len() - 1)
                    .map(|i| Some(g.slice_channels(boundaries[i], boundaries[i + 1])))
                    .collect()
            }),
        )
    }

    /// `[1, C, H, W] -> [B, C, H, W]` by repetition.
    pub fn repeat_batch(&self, b: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        assert_eq!(self.dim(0), 1, "repeat_batch expects batch dimension 1");
        let per = self.numel();
        let mut out = Vec::with_capacity(b * per);
        for _ in 0..b {
            out.extend_from_slice(self.data());
        }
        let mut shape = self.shape().to_vec();
        shape[0] = b;
        Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.sum_batch())]),
        )
    }

    /// `[B, C, H, W] -> [1, C, H, W]`, summing over the batch axis.
    pub fn sum_batch(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = dims4(self);
        let per = c * h * w;
        let mut out = vec![T::zero(); per];
        for bi in 0..b {
            for i in 0..per {
                out[i] = out[i] + self.data()[bi * per + i];
            }
        }
        Tensor::from_op(
            vec![1, c, h, w],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| vec![Some(g.repeat_batch(b))]),
        )
    }

    /// Channels `lo..hi` of a `[B, C, H, W]` tensor.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = dims4(self);
        assert!(lo < hi && hi <= c, "slice_channels: bad range");
        let hw = h * w;
        let cs = hi - lo;
        let mut out = Vec::with_capacity(b * cs * hw);
        for bi in 0..b {
            let base = (bi * c + lo) * hw;
            out.extend_from_slice(&self.data()[base..base + cs * hw]);
        }
        let (full_c, dims) = (c, (b, h, w));
        Tensor::from_op(
            vec![b, cs, h, w],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                let (b, h, w) = dims;
                let mut parts: Vec<Tensor<T>> = Vec::new();
                if lo > 0 {
                    parts.push(Tensor::zeros(&[b, lo, h, w]));
                }
                parts.push(g.clone());
                if hi < full_c {
                    parts.push(Tensor::zeros(&[b, full_c - hi, h, w]));
                }
                vec![Some(Tensor::concat_channels(&parts))]
            }),
        )
    }
}

pub(crate) fn dims4<T: Element>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert_eq!(t.rank(), 4, "expected a 4-d tensor, got {:?}", t.shape());
    (t.dim(0), t.dim(1), t.dim(2), t.dim(3))
}

fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
