//! Style-modulated synthesis network with an input-skip branch.
//!
//! The trunk is a weight-demodulated convolution stack growing from a learned
//! 4x4 constant to the target resolution, styled per layer from an `L x 512`
//! style matrix where `L = 2*log2(s) - 2`. A strided-convolution pyramid over
//! the corrupted image emits one feature map per trunk resolution; enabling
//! it adds those maps element-wise into the trunk right before each
//! resolution's first modulated convolution, which is what lets the network
//! see the visible pixels directly instead of only through the styles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods are std-only
use num_traits::Float;
use rand::Rng;

use crate::error::reject;
use crate::imaging::{Image, Mask};
use crate::nn::{lrelu, pixel_norm, visit_child, visit_child_mut, Conv2d, Linear, Params};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{el, Element, Tensor};
use crate::Result;

pub const LATENT_DIM: usize = 512;
const MAPPING_LAYERS: usize = 4;
const MAPPING_LR_MUL: f64 = 0.01;
const DEMOD_EPS: f64 = 1e-8;

/// Number of style-modulation layers for a power-of-two resolution `s >= 8`:
/// `2*log2(s) - 2`.
pub fn num_style_layers(resolution: usize) -> Result<usize> {
    if resolution < 8 || !resolution.is_power_of_two() {
        return reject(format!(
            "resolution must be a power of two >= 8, got {resolution}"
        ));
    }
    Ok(2 * resolution.ilog2() as usize - 2)
}

/// Feature widths per resolution: `min(base/res, cap)`, floored at 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSchedule {
    pub base: u32,
    pub cap: u32,
}

impl ChannelSchedule {
    /// Full-scale schedule: 512 channels at 4x4, 64 at 256x256.
    pub fn full() -> Self {
        ChannelSchedule { base: 16384, cap: 512 }
    }

    /// Desk-scale schedule capped at 128 channels.
    pub fn tiny() -> Self {
        ChannelSchedule { base: 1024, cap: 128 }
    }

    pub fn channels(&self, resolution: usize) -> usize {
        ((self.base as usize / resolution).min(self.cap as usize)).max(4)
    }
}

/// Everything needed to build (or validate) a generator.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub schedule: ChannelSchedule,
    /// Whether the input-skip branch exists at all.
    pub rgb_branch: bool,
    /// Branch input: corrupted image concatenated with the mask plane.
    /// Disabled in strict mode where the branch sees only the pixels.
    pub mask_channel: bool,
    /// Per-layer noise injection (off by default: deterministic synthesis).
    pub noise: bool,
}

impl GeneratorConfig {
    pub fn layers(&self) -> usize {
        num_style_layers(self.resolution).expect("validated at construction")
    }

    fn validate(&self) -> Result<()> {
        num_style_layers(self.resolution)?;
        Ok(())
    }

    fn branch_in_channels(&self) -> usize {
        if self.mask_channel {
            4
        } else {
            3
        }
    }
}

/// 512-dim latent vector (either a sampling-space `z` or a mapped `w`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return reject(format!("latent vector must have {LATENT_DIM} entries"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return reject("latent vector entries must be finite");
        }
        Ok(LatentVector(values))
    }

    pub fn standard_normal(seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::LatentSamples, 0);
        LatentVector(crate::rng::normal_vec(&mut rng, LATENT_DIM))
    }
}

/// The `L x 512` style matrix consumed by the synthesis trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode {
    resolution: usize,
    rows: Vec<f32>, // L * 512
}

impl StyleCode {
    pub fn new(resolution: usize, rows: Vec<f32>) -> Result<Self> {
        let layers = num_style_layers(resolution)?;
        if rows.len() != layers * LATENT_DIM {
            return reject(format!(
                "style code for resolution {resolution} needs {layers}x{LATENT_DIM} entries, got {}",
                rows.len()
            ));
        }
        if !rows.iter().all(|v| v.is_finite()) {
            return reject("style code entries must be finite");
        }
        Ok(StyleCode { resolution, rows })
    }

    /// Broadcast one `w` vector to every layer.
    pub fn from_single(resolution: usize, w: &LatentVector) -> Result<Self> {
        let layers = num_style_layers(resolution)?;
        let mut rows = Vec::with_capacity(layers * LATENT_DIM);
        for _ in 0..layers {
            rows.extend_from_slice(&w.0);
        }
        StyleCode::new(resolution, rows)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn layers(&self) -> usize {
        self.rows.len() / LATENT_DIM
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, l: usize) -> &[f32] {
        &self.rows[l * LATENT_DIM..(l + 1) * LATENT_DIM]
    }

    /// `[1, L, 512]` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.rows.iter().map(|v| el::<T>(*v as f64)).collect();
        Tensor::new(&[1, self.layers(), LATENT_DIM], data)
    }

    pub fn from_tensor<T: Element>(resolution: usize, t: &Tensor<T>) -> Result<Self> {
        let rows = t.data().iter().map(|v| Element::to_f64(*v) as f32).collect();
        StyleCode::new(resolution, rows)
    }
}

/// Weight-demodulated convolution with a learned per-layer style affine.
#[derive(Clone)]
pub struct ModConv<T: Element> {
    pub affine: Linear<T>, // 512 -> in_channels, bias starts at 1
    pub weight: Tensor<T>, // [out, in, k, k]
    pub bias: Tensor<T>,   // [out]
    k: usize,
    demodulate: bool,
    w_scale: f64,
}

impl<T: Element> ModConv<T> {
    fn new<R: Rng>(inf: usize, outf: usize, k: usize, demodulate: bool, rng: &mut R) -> Self {
        let mut affine = Linear::new(LATENT_DIM, inf, true, 1.0, rng);
        affine.bias = Some(Tensor::leaf(&[inf], vec![T::one(); inf]));
        ModConv {
            affine,
            weight: Tensor::leaf(
                &[outf, inf, k, k],
                Tensor::<T>::randn(&[outf, inf, k, k], 1.0, rng).to_vec(),
            ),
            bias: Tensor::leaf(&[outf], vec![T::zero(); outf]),
            k,
            demodulate,
            w_scale: 1.0 / ((inf * k * k) as f64).sqrt(),
        }
    }

    /// `x`: `[B, C, H, W]`, `style`: `[B, 512]`.
    fn forward(&self, x: &Tensor<T>, style: &Tensor<T>) -> Tensor<T> {
        let scales = self.affine.forward(style); // [B, C]
        let w = self.weight.mul_scalar(el(self.w_scale));
        let pad = self.k / 2;
        let mut y = x.scale_channels(&scales).conv2d(&w, 1, pad);
        if self.demodulate {
            // sigma[b,o] = sqrt(sum_{i,k} (w[o,i,k] * s[b,i])^2 + eps)
            let (o, c) = (w.dim(0), w.dim(1));
            let per_in = w
                .square()
                .reshape(&[o * c, self.k * self.k])
                .row_sum()
                .reshape(&[o, c]); // [O, C]
            let sigma = scales
                .square()
                .matmul(&per_in.transpose2d())
                .add_scalar(el(DEMOD_EPS))
                .sqrt();
            y = y.scale_channels(&sigma.recip());
        }
        y.bias_add_channel(&self.bias)
    }

    fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }
}

impl<T: Element> Params<T> for ModConv<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.affine, "affine", f);
        f("weight", &self.weight);
        f("bias", &self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.affine, "affine", f);
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// One styled convolution plus its optional noise input.
#[derive(Clone)]
struct SynthLayer<T: Element> {
    conv: ModConv<T>,
    noise_strength: Tensor<T>, // scalar
}

impl<T: Element> SynthLayer<T> {
    fn new<R: Rng>(inf: usize, outf: usize, rng: &mut R) -> Self {
        SynthLayer {
            conv: ModConv::new(inf, outf, 3, true, rng),
            noise_strength: Tensor::leaf(&[1], vec![T::zero()]),
        }
    }

    fn forward(&self, x: &Tensor<T>, style: &Tensor<T>, noise: Option<&Tensor<T>>) -> Tensor<T> {
        let mut y = self.conv.forward(x, style);
        if let Some(n) = noise {
            y = y.add(&n.mul(&self.noise_strength.spread_scalar(n.shape())));
        }
        lrelu(&y)
    }
}

impl<T: Element> Params<T> for SynthLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.conv, "conv", f);
        f("noise_strength", &self.noise_strength);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.conv, "conv", f);
        f("noise_strength", &mut self.noise_strength);
    }
}

#[derive(Clone)]
struct Block<T: Element> {
    resolution: usize,
    /// Upsampling conv; absent on the 4x4 block.
    conv0: Option<SynthLayer<T>>,
    conv1: SynthLayer<T>,
    torgb: ModConv<T>,
}

impl<T: Element> Params<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(c0) = &self.conv0 {
            visit_child(c0, "conv0", f);
        }
        visit_child(&self.conv1, "conv1", f);
        visit_child(&self.torgb, "torgb", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(c0) = &mut self.conv0 {
            visit_child_mut(c0, "conv0", f);
        }
        visit_child_mut(&mut self.conv1, "conv1", f);
        visit_child_mut(&mut self.torgb, "torgb", f);
    }
}

/// Strided pyramid over the corrupted image, one emitted map per trunk
/// resolution.
#[derive(Clone)]
pub struct RgbBranch<T: Element> {
    stem: Conv2d<T>,
    /// Stride-2 steps, finest to coarsest.
    down: Vec<Conv2d<T>>,
    /// Emit convs keyed by resolution, finest (s) to coarsest (4).
    emit: Vec<Conv2d<T>>,
}

impl<T: Element> RgbBranch<T> {
    fn new<R: Rng>(config: &GeneratorConfig, rng: &mut R) -> Self {
        let s = config.resolution;
        let sched = &config.schedule;
        let stem = Conv2d::new(config.branch_in_channels(), sched.channels(s), 3, 1, 1, true, rng);
        let mut down = Vec::new();
        let mut emit = Vec::new();
        let mut res = s;
        loop {
            // Injection target at `res`: trunk channels entering the first
            // conv of that resolution.
            let inject_ch = if res == 4 {
                sched.channels(4)
            } else {
                sched.channels(res / 2)
            };
            emit.push(Conv2d::new(sched.channels(res), inject_ch, 3, 1, 1, true, rng));
            if res == 4 {
                break;
            }
            down.push(Conv2d::new(
                sched.channels(res),
                sched.channels(res / 2),
                3,
                2,
                1,
                true,
                rng,
            ));
            res /= 2;
        }
        RgbBranch { stem, down, emit }
    }

    /// Feature maps per resolution, coarsest (4) first.
    fn forward(&self, input: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        let mut res = input.dim(2);
        let mut feat = lrelu(&self.stem.forward(input));
        let mut out = Vec::new();
        for (i, emitter) in self.emit.iter().enumerate() {
            out.push((res, emitter.forward(&feat)));
            if let Some(d) = self.down.get(i) {
                feat = lrelu(&d.forward(&feat));
                res /= 2;
            }
        }
        out.reverse();
        out
    }

    /// Force every parameter (weights and biases) to zero; with a zeroed
    /// branch the network collapses exactly onto the styles-only path.
    pub fn zero_all(&mut self) {
        self.visit_mut(&mut |_, t| *t = Tensor::leaf(t.shape(), vec![T::zero(); t.numel()]));
    }
}

impl<T: Element> Params<T> for RgbBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.stem, "stem", f);
        for (i, d) in self.down.iter().enumerate() {
            visit_child(d, &format!("down{i}"), f);
        }
        for (i, e) in self.emit.iter().enumerate() {
            visit_child(e, &format!("emit{i}"), f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.stem, "stem", f);
        for (i, d) in self.down.iter_mut().enumerate() {
            visit_child_mut(d, &format!("down{i}"), f);
        }
        for (i, e) in self.emit.iter_mut().enumerate() {
            visit_child_mut(e, &format!("emit{i}"), f);
        }
    }
}

/// Mapping network, constant input, synthesis blocks and the optional
/// input-skip branch.
#[derive(Clone)]
pub struct GeneratorWeights<T: Element> {
    config: GeneratorConfig,
    mapping: Vec<Linear<T>>,
    const_input: Tensor<T>, // [1, c(4), 4, 4]
    blocks: Vec<Block<T>>,  // ascending resolution, blocks[0] is 4x4
    pub branch: Option<RgbBranch<T>>,
}

impl<T: Element> GeneratorWeights<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::WeightInit, 0x67656e);
        let sched = &config.schedule;

        let mapping = (0..MAPPING_LAYERS)
            .map(|_| Linear::new(LATENT_DIM, LATENT_DIM, true, MAPPING_LR_MUL, &mut rng))
            .collect();

        let c4 = sched.channels(4);
        let const_input = Tensor::leaf(
            &[1, c4, 4, 4],
            Tensor::<T>::randn(&[1, c4, 4, 4], 1.0, &mut rng).to_vec(),
        );

        let mut blocks = Vec::new();
        let mut res = 4;
        while res <= config.resolution {
            let inf = if res == 4 {
                c4
            } else {
                sched.channels(res / 2)
            };
            let outf = sched.channels(res);
            blocks.push(Block {
                resolution: res,
                conv0: (res > 4).then(|| SynthLayer::new(inf, outf, &mut rng)),
                conv1: SynthLayer::new(if res == 4 { inf } else { outf }, outf, &mut rng),
                torgb: ModConv::new(outf, 3, 1, false, &mut rng),
            });
            res *= 2;
        }

        let branch = config.rgb_branch.then(|| RgbBranch::new(&config, &mut rng));

        Ok(GeneratorWeights {
            config,
            mapping,
            const_input,
            blocks,
            branch,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn layers(&self) -> usize {
        self.config.layers()
    }

    /// Map sampling-space latents to style-space: `[B, 512] -> [B, 512]`.
    pub fn map_latent_batch(&self, z: &Tensor<T>) -> Tensor<T> {
        assert_eq!(z.rank(), 2);
        assert_eq!(z.dim(1), LATENT_DIM);
        let mut w = pixel_norm(z, 1e-8);
        for layer in &self.mapping {
            w = lrelu(&layer.forward(&w));
        }
        w
    }

    /// Single-vector convenience over [`Self::map_latent_batch`].
    pub fn map_latent(&self, z: &LatentVector) -> LatentVector {
        let zt: Tensor<T> = Tensor::new(
            &[1, LATENT_DIM],
            z.0.iter().map(|v| el::<T>(*v as f64)).collect(),
        );
        let w = self.map_latent_batch(&zt);
        LatentVector(w.data().iter().map(|v| Element::to_f64(*v) as f32).collect())
    }

    /// Style row `l` of a `[B, L, 512]` style tensor as `[B, 512]`.
    fn style_row(styles: &Tensor<T>, l: usize) -> Tensor<T> {
        let (b, layers) = (styles.dim(0), styles.dim(1));
        styles
            .reshape(&[b, layers, LATENT_DIM, 1])
            .slice_channels(l, l + 1)
            .reshape(&[b, LATENT_DIM])
    }

    /// Batched synthesis.
    ///
    /// `styles` is `[B, L, 512]`; `branch_input` is the corrupted image (with
    /// the mask plane already concatenated when configured), or `None` for
    /// the styles-only path. `noise_seed` draws fresh per-layer noise; `None`
    /// keeps synthesis deterministic.
    pub fn synthesize_batch(
        &self,
        styles: &Tensor<T>,
        branch_input: Option<&Tensor<T>>,
        noise_seed: Option<u64>,
    ) -> Tensor<T> {
        let b = styles.dim(0);
        assert_eq!(styles.dim(1), self.layers(), "style row count mismatch");
        let injections: Vec<(usize, Tensor<T>)> = match (branch_input, &self.branch) {
            (Some(input), Some(branch)) => branch.forward(input),
            _ => Vec::new(),
        };
        let inject = |res: usize, x: Tensor<T>| -> Tensor<T> {
            match injections.iter().find(|(r, _)| *r == res) {
                Some((_, f)) => x.add(f),
                None => x,
            }
        };
        let mut noise_rng = noise_seed.map(|s| stream_rng(s, Stream::TrainNoise, 0));
        let mut draw_noise = |shape: &[usize]| -> Option<Tensor<T>> {
            let rng = noise_rng.as_mut()?;
            // One plane per pixel, shared across channels.
            let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let plane: Vec<T> = crate::rng::normal_vec(rng, b * h * w);
            let mut data = Vec::with_capacity(b * c * h * w);
            for bi in 0..b {
                for _ in 0..c {
                    data.extend_from_slice(&plane[bi * h * w..(bi + 1) * h * w]);
                }
            }
            Some(Tensor::new(shape, data))
        };

        let mut x = self.const_input.repeat_batch(b);
        let mut rgb: Option<Tensor<T>> = None;
        let mut style_idx = 0;
        for block in &self.blocks {
            let res = block.resolution;
            if let Some(conv0) = &block.conv0 {
                x = inject(res, x.upsample_nearest(2));
                let shape = [b, conv0.conv.out_channels(), res, res];
                let n = draw_noise(&shape);
                x = conv0.forward(&x, &Self::style_row(styles, style_idx), n.as_ref());
                style_idx += 1;
            } else {
                x = inject(res, x);
            }
            let shape = [b, block.conv1.conv.out_channels(), res, res];
            let n = draw_noise(&shape);
            x = block.conv1.forward(&x, &Self::style_row(styles, style_idx), n.as_ref());
            style_idx += 1;

            // toRGB shares the next conv's style row; the last block uses the
            // final row.
            let torgb_row = if res == self.config.resolution {
                self.layers() - 1
            } else {
                style_idx
            };
            let skip = block.torgb.forward(&x, &Self::style_row(styles, torgb_row));
            rgb = Some(match rgb {
                Some(prev) => prev.upsample_nearest(2).add(&skip),
                None => skip,
            });
        }
        rgb.expect("at least one block").tanh()
    }

    /// Trunk parameters only (mapping, constant, blocks) — the part frozen
    /// during encoder training.
    pub fn visit_trunk(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, l) in self.mapping.iter().enumerate() {
            visit_child(l, &format!("mapping.{i}"), f);
        }
        f("const_input", &self.const_input);
        for b in &self.blocks {
            visit_child(b, &format!("b{}", b.resolution), f);
        }
    }

    fn visit_trunk_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, l) in self.mapping.iter_mut().enumerate() {
            visit_child_mut(l, &format!("mapping.{i}"), f);
        }
        f("const_input", &mut self.const_input);
        for b in &mut self.blocks {
            let name = format!("b{}", b.resolution);
            visit_child_mut(b, &name, f);
        }
    }
}

impl<T: Element> Params<T> for GeneratorWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.visit_trunk(f);
        if let Some(branch) = &self.branch {
            visit_child(branch, "branch", f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.visit_trunk_mut(f);
        if let Some(branch) = &mut self.branch {
            visit_child_mut(branch, "branch", f);
        }
    }
}

/// Adapter exposing only the trunk to an optimizer.
pub struct TrunkParams<'a, T: Element>(pub &'a mut GeneratorWeights<T>);

impl<T: Element> Params<T> for TrunkParams<'_, T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.0.visit_trunk(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.0.visit_trunk_mut(f);
    }
}

/// Assemble the branch input tensor for a batch of corrupted images.
pub fn branch_input_tensor<T: Element>(
    config: &GeneratorConfig,
    corrupted: &Tensor<T>,
    mask: &Tensor<T>,
) -> Tensor<T> {
    if config.mask_channel {
        Tensor::concat_channels(&[corrupted.clone(), mask.clone()])
    } else {
        corrupted.clone()
    }
}

fn check_styles<T: Element>(weights: &GeneratorWeights<T>, styles: &StyleCode) -> Result<()> {
    if styles.resolution() != weights.resolution() {
        return reject(format!(
            "style code resolution {} does not match generator resolution {}",
            styles.resolution(),
            weights.resolution()
        ));
    }
    Ok(())
}

/// Full synthesis: styles plus the corrupted image through the skip branch.
///
/// `mask` is required when the generator was built with the mask input
/// plane; it is concatenated as a fourth channel.
pub fn synthesize<T: Element>(
    styles: &StyleCode,
    corrupted: &Image,
    mask: Option<&Mask>,
    weights: &GeneratorWeights<T>,
) -> Result<Image> {
    check_styles(weights, styles)?;
    if corrupted.side() != weights.resolution() {
        return reject(format!(
            "corrupted image side {} does not match generator resolution {}",
            corrupted.side(),
            weights.resolution()
        ));
    }
    let branch_input = if weights.branch.is_some() {
        let img = corrupted.to_tensor::<T>();
        let m = match (weights.config.mask_channel, mask) {
            (true, Some(m)) => m.to_tensor::<T>(),
            (true, None) => return reject("this generator needs the mask plane as input"),
            (false, _) => Tensor::zeros(&[1, 1, corrupted.side(), corrupted.side()]),
        };
        Some(branch_input_tensor(&weights.config, &img, &m))
    } else {
        None
    };
    let out = weights.synthesize_batch(&styles.to_tensor(), branch_input.as_ref(), None);
    Image::from_tensor(&out.detach())
}

/// Styles-only synthesis (the plain per-layer-style path, no skip branch).
pub fn synthesize_w_plus<T: Element>(
    styles: &StyleCode,
    weights: &GeneratorWeights<T>,
) -> Result<Image> {
    check_styles(weights, styles)?;
    let out = weights.synthesize_batch(&styles.to_tensor(), None, None);
    Image::from_tensor(&out.detach())
}
