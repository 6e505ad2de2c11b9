//! Convolution, pooling and resampling ops.
//!
//! Convolutions run as im2col + GEMM. The three convolution primitives
//! (forward, input-gradient, weight-gradient) are mutually closed under
//! differentiation, which is what makes second-order terms like the R1
//! penalty possible.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::dims4;
use super::{el, Element, Tensor};

fn out_side(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    let span = input + 2 * pad;
    assert!(span >= k, "kernel larger than padded input");
    (span - k) / stride + 1
}

/// Scatter `x` (C,H,W) into columns of shape (C*K*K, Ho*Wo).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), c * k * k * ho * wo);
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let base = row * ho * wo;
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[base + oy * wo..base + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for d in dst.iter_mut() {
                            *d = T::zero();
                        }
                        continue;
                    }
                    let src_row = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into (C,H,W).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let base = row * ho * wo;
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[dst_base + ix as usize] =
                            x[dst_base + ix as usize] + cols[base + oy * wo + ox];
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// 2-d convolution: `[B,C,H,W] * [O,C,K,K] -> [B,O,Ho,Wo]`.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let (b, c, h, w) = dims4(self);
        let (o, wc, k, k2) = dims4(weight);
        assert_eq!(c, wc, "conv2d: channel mismatch");
        assert_eq!(k, k2, "conv2d: kernel must be square");
        let ho = out_side(h, k, stride, pad);
        let wo = out_side(w, k, stride, pad);
        let ck2 = c * k * k;
        let hw_out = ho * wo;

        let mut out = vec![T::zero(); b * o * hw_out];
        let direct = k == 1 && pad == 0 && stride == 1;
        let mut cols = if direct {
            Vec::new()
        } else {
            vec![T::zero(); ck2 * hw_out]
        };
        for bi in 0..b {
            let x_b = &self.data()[bi * c * h * w..(bi + 1) * c * h * w];
            let cols_ptr = if direct {
                x_b.as_ptr()
            } else {
                im2col(x_b, c, h, w, k, stride, pad, ho, wo, &mut cols);
                cols.as_ptr()
            };
            let c_out = &mut out[bi * o * hw_out..(bi + 1) * o * hw_out];
            unsafe {
                T::gemm(
                    o,
                    ck2,
                    hw_out,
                    T::one(),
                    weight.data().as_ptr(),
                    ck2 as isize,
                    1,
                    cols_ptr,
                    hw_out as isize,
                    1,
                    T::zero(),
                    c_out.as_mut_ptr(),
                    hw_out as isize,
                    1,
                );
            }
        }

        let (px, pw) = (self.clone(), weight.clone());
        let (in_h, in_w) = (h, w);
        Tensor::from_op(
            vec![b, o, ho, wo],
            out,
            vec![self.clone(), weight.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![
                    Some(g.conv2d_input_grad(&pw, stride, pad, in_h, in_w)),
                    Some(conv2d_weight_grad(&px, g, k, stride, pad)),
                ]
            }),
        )
    }

    /// Gradient of `conv2d` w.r.t. its input: `self` is the output
    /// gradient `[B,O,Ho,Wo]`, result is `[B,C,H,W]`.
    pub fn conv2d_input_grad(
        &self,
        weight: &Tensor<T>,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> Tensor<T> {
        let (b, o, ho, wo) = dims4(self);
        let (wo_ch, c, k, _) = dims4(weight);
        assert_eq!(o, wo_ch, "conv2d_input_grad: channel mismatch");
        debug_assert_eq!(out_side(in_h, k, stride, pad), ho);
        debug_assert_eq!(out_side(in_w, k, stride, pad), wo);
        let ck2 = c * k * k;
        let hw_out = ho * wo;

        let mut out = vec![T::zero(); b * c * in_h * in_w];
        let direct = k == 1 && pad == 0 && stride == 1;
        let mut gcols = vec![T::zero(); ck2 * hw_out];
        for bi in 0..b {
            let g_b = &self.data()[bi * o * hw_out..(bi + 1) * o * hw_out];
            let dst = &mut out[bi * c * in_h * in_w..(bi + 1) * c * in_h * in_w];
            // gcols = W^T (ck2 x o) @ g_b (o x hw)
            unsafe {
                T::gemm(
                    ck2,
                    o,
                    hw_out,
                    T::one(),
                    weight.data().as_ptr(),
                    1,
                    ck2 as isize,
                    g_b.as_ptr(),
                    hw_out as isize,
                    1,
                    T::zero(),
                    if direct {
                        dst.as_mut_ptr()
                    } else {
                        gcols.as_mut_ptr()
                    },
                    hw_out as isize,
                    1,
                );
            }
            if !direct {
                col2im(&gcols, c, in_h, in_w, k, stride, pad, ho, wo, dst);
            }
        }

        let (pg, pw) = (self.clone(), weight.clone());
        Tensor::from_op(
            vec![b, c, in_h, in_w],
            out,
            vec![self.clone(), weight.clone()],
            alloc::boxed::Box::new(move |u| {
                vec![
                    Some(u.conv2d(&pw, stride, pad)),
                    Some(conv2d_weight_grad(u, &pg, k, stride, pad)),
                ]
            }),
        )
    }

    /// Non-overlapping k x k mean pooling.
    pub fn avg_pool(&self, k: usize) -> Tensor<T> {
        let (b, c, h, w) = dims4(self);
        assert!(k >= 1 && h % k == 0 && w % k == 0, "avg_pool: size must divide");
        if k == 1 {
            return self.mul_scalar(T::one());
        }
        let (ho, wo) = (h / k, w / k);
        let inv = el::<T>(1.0 / (k * k) as f64);
        let mut out = vec![T::zero(); b * c * ho * wo];
        for bc in 0..b * c {
            let src = &self.data()[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        let row = (oy * k + dy) * w + ox * k;
                        for dx in 0..k {
                            acc = acc + src[row + dx];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }
        Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![Some(g.upsample_nearest(k).mul_scalar(el(1.0 / (k * k) as f64)))]
            }),
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, k: usize) -> Tensor<T> {
        let (b, c, h, w) = dims4(self);
        if k == 1 {
            return self.mul_scalar(T::one());
        }
        let (ho, wo) = (h * k, w * k);
        let mut out = vec![T::zero(); b * c * ho * wo];
        for bc in 0..b * c {
            let src = &self.data()[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for oy in 0..ho {
                let sy = oy / k;
                for ox in 0..wo {
                    dst[oy * wo + ox] = src[sy * w + ox / k];
                }
            }
        }
        Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            vec![self.clone()],
            alloc::boxed::Box::new(move |g| {
                vec![Some(g.avg_pool(k).mul_scalar(el((k * k) as f64)))]
            }),
        )
    }
}

/// Gradient of `conv2d` w.r.t. the weight: `[O,C,K,K]` from input `x` and
/// output gradient `g`.
pub fn conv2d_weight_grad<T: Element>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (b, c, h, w) = dims4(x);
    let (gb, o, ho, wo) = dims4(g);
    assert_eq!(b, gb, "conv2d_weight_grad: batch mismatch");
    debug_assert_eq!(out_side(h, k, stride, pad), ho);
    let ck2 = c * k * k;
    let hw_out = ho * wo;

    let mut out = vec![T::zero(); o * ck2];
    let direct = k == 1 && pad == 0 && stride == 1;
    let mut cols = if direct {
        Vec::new()
    } else {
        vec![T::zero(); ck2 * hw_out]
    };
    for bi in 0..b {
        let x_b = &x.data()[bi * c * h * w..(bi + 1) * c * h * w];
        let cols_ptr = if direct {
            x_b.as_ptr()
        } else {
            im2col(x_b, c, h, w, k, stride, pad, ho, wo, &mut cols);
            cols.as_ptr()
        };
        let g_b = &g.data()[bi * o * hw_out..(bi + 1) * o * hw_out];
        // out += g_b (o x hw) @ cols^T (hw x ck2)
        unsafe {
            T::gemm(
                o,
                hw_out,
                ck2,
                T::one(),
                g_b.as_ptr(),
                hw_out as isize,
                1,
                cols_ptr,
                1,
                hw_out as isize,
                T::one(),
                out.as_mut_ptr(),
                ck2 as isize,
                1,
            );
        }
    }

    let (px, pg) = (x.clone(), g.clone());
    let (in_h, in_w) = (h, w);
    Tensor::from_op(
        vec![o, c, k, k],
        out,
        vec![x.clone(), g.clone()],
        alloc::boxed::Box::new(move |v| {
            vec![
                Some(pg.conv2d_input_grad(v, stride, pad, in_h, in_w)),
                Some(px.conv2d(v, stride, pad)),
            ]
        }),
    )
}
