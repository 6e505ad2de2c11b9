//! Feature-pyramid encoder.
//!
//! A residual bottom-up stack with top-down fusion yields pyramid features;
//! three strided-reduction heads (`map2style`) turn them into the
//! intermediate code `w'` (3 x 512, coarse/middle/fine), three RGB heads
//! reconstruct the input at s/4, s/2 and s, and replicated reduction heads
//! (`map2structure`) compress those reconstructions into structure vectors
//! `S_r`. Per generator layer, a small affine network maps `S_r(l)` to
//! `(gamma, beta)` which re-modulate the instance-normalized `w'` row:
//!
//!   w*_l = gamma_l(S_r) * IN(w'_r) + beta_l(S_r)
//!
//! The affine heads start at the identity (gamma = 1, beta = 0).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::reject;
use crate::generator::{num_style_layers, ChannelSchedule, StyleCode, LATENT_DIM};
use crate::imaging::Image;
use crate::nn::{lrelu, visit_child, visit_child_mut, Conv2d, Linear, Params, ResidualDown};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{el, Element, Tensor};
use crate::Result;

/// Epsilon used by instance normalization.
pub const IN_EPSILON: f64 = 1e-5;

/// Construction parameters for the encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub resolution: usize,
    pub schedule: ChannelSchedule,
}

impl EncoderConfig {
    pub fn layers(&self) -> usize {
        num_style_layers(self.resolution).expect("validated at construction")
    }
}

/// Map a 0-based generator layer index to its scale group 0/1/2
/// (coarse/middle/fine). Layers are split into three contiguous groups with
/// boundaries at 3/14 and 7/14 of L, clamped so every group is non-empty.
pub fn layer_to_scale(layer: usize, total_layers: usize) -> usize {
    assert!(layer < total_layers);
    let coarse_end = (total_layers * 3 / 14).max(1);
    let middle_end = (total_layers / 2).max(coarse_end + 1).min(total_layers - 1);
    if layer < coarse_end {
        0
    } else if layer < middle_end {
        1
    } else {
        2
    }
}

/// Batched encoder outputs kept on the graph for loss computation.
pub struct EncoderFeatures<T: Element> {
    /// `[B, 3, 512]`, rows coarse/middle/fine.
    pub w_prime: Tensor<T>,
    /// Reconstructions at s/4, s/2, s (coarse to fine), each `[B, 3, r, r]`.
    pub recon: [Tensor<T>; 3],
}

/// Value-level encoder output for the single-image API.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// 3 x 512, rows coarse/middle/fine.
    pub w_prime: Vec<f32>,
    /// Reconstructions at s/4, s/2, s.
    pub recon: [Image; 3],
}

/// Repeated stride-2 convolutions reducing a feature map to a single
/// 512-dim vector (the map2style / map2structure shape).
#[derive(Clone)]
struct ReduceHead<T: Element> {
    convs: Vec<Conv2d<T>>,
}

impl<T: Element> ReduceHead<T> {
    fn new<R: Rng>(
        in_channels: usize,
        from_res: usize,
        schedule: &ChannelSchedule,
        rng: &mut R,
    ) -> Self {
        assert!(from_res.is_power_of_two() && from_res >= 2);
        let steps = from_res.ilog2() as usize;
        let mut convs = Vec::with_capacity(steps);
        let mut cin = in_channels;
        for i in 0..steps {
            let cout = if i + 1 == steps {
                LATENT_DIM
            } else {
                schedule.channels(from_res >> (i + 1)).max(64)
            };
            convs.push(Conv2d::new(cin, cout, 3, 2, 1, true, rng));
            cin = cout;
        }
        ReduceHead { convs }
    }

    /// `[B, C, r, r] -> [B, 512]`.
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h);
            if i + 1 < self.convs.len() {
                h = lrelu(&h);
            }
        }
        debug_assert_eq!(h.dim(2), 1);
        let b = h.dim(0);
        h.reshape(&[b, LATENT_DIM])
    }
}

impl<T: Element> Params<T> for ReduceHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            visit_child(c, &format!("conv{i}"), f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            visit_child_mut(c, &format!("conv{i}"), f);
        }
    }
}

/// Per-layer affine network: S_r -> (gamma, beta), identity at init.
#[derive(Clone)]
struct PremodNet<T: Element> {
    hidden: Linear<T>,
    gamma: Linear<T>,
    beta: Linear<T>,
}

impl<T: Element> PremodNet<T> {
    fn new<R: Rng>(rng: &mut R) -> Self {
        PremodNet {
            hidden: Linear::new(LATENT_DIM, LATENT_DIM, true, 1.0, rng),
            gamma: Linear::zeroed(LATENT_DIM, LATENT_DIM, true, 1.0),
            beta: Linear::zeroed(LATENT_DIM, LATENT_DIM, true, 1.0),
        }
    }

    /// Returns `(gamma, beta)`, each `[B, 512]`, with gamma = 1 + dgamma.
    fn forward(&self, s_r: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let h = lrelu(&self.hidden.forward(s_r));
        let gamma = self.gamma.forward(&h).add_scalar(T::one());
        let beta = self.beta.forward(&h);
        (gamma, beta)
    }
}

impl<T: Element> Params<T> for PremodNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.hidden, "hidden", f);
        visit_child(&self.gamma, "gamma", f);
        visit_child(&self.beta, "beta", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.hidden, "hidden", f);
        visit_child_mut(&mut self.gamma, "gamma", f);
        visit_child_mut(&mut self.beta, "beta", f);
    }
}

/// All encoder parameters.
#[derive(Clone)]
pub struct EncoderWeights<T: Element> {
    config: EncoderConfig,
    levels: Vec<usize>, // pyramid resolutions, descending from s
    stem: Conv2d<T>,
    stages: Vec<ResidualDown<T>>,
    laterals: Vec<Conv2d<T>>,            // one per level, same order as `levels`
    topdown: Vec<(Conv2d<T>, Conv2d<T>)>, // (channel adjust 1x1, smooth 3x3), deep -> shallow
    rgb_heads: [Conv2d<T>; 3],           // at s/4, s/2, s
    map2style: [ReduceHead<T>; 3],       // coarse, middle, fine
    map2structure: [ReduceHead<T>; 3],   // from recon at s/4, s/2, s
    premod: Vec<PremodNet<T>>,           // one per generator layer
}

impl<T: Element> EncoderWeights<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let s = config.resolution;
        let layers = num_style_layers(s)?;
        let mut rng = stream_rng(seed, Stream::WeightInit, 0x656e63);
        let sched = &config.schedule;

        let depth = (s.ilog2() as usize - 1).min(4);
        let levels: Vec<usize> = (0..=depth).map(|i| s >> i).collect();
        let deepest = *levels.last().unwrap();

        let stem = Conv2d::new(3, sched.channels(s), 3, 1, 1, true, &mut rng);
        let stages: Vec<ResidualDown<T>> = (0..depth)
            .map(|i| ResidualDown::new(sched.channels(s >> i), sched.channels(s >> (i + 1)), &mut rng))
            .collect();
        let laterals: Vec<Conv2d<T>> = levels
            .iter()
            .map(|r| Conv2d::new(sched.channels(*r), sched.channels(*r), 1, 1, 0, true, &mut rng))
            .collect();
        let topdown: Vec<(Conv2d<T>, Conv2d<T>)> = (0..depth)
            .map(|i| {
                // step from level depth-i (res r) up to res 2r
                let r = s >> (depth - i);
                let up = s >> (depth - i - 1);
                (
                    Conv2d::new(sched.channels(r), sched.channels(up), 1, 1, 0, true, &mut rng),
                    Conv2d::new(sched.channels(up), sched.channels(up), 3, 1, 1, true, &mut rng),
                )
            })
            .collect();

        let rgb_heads = [
            Conv2d::new(sched.channels(s / 4), 3, 1, 1, 0, true, &mut rng),
            Conv2d::new(sched.channels(s / 2), 3, 1, 1, 0, true, &mut rng),
            Conv2d::new(sched.channels(s), 3, 1, 1, 0, true, &mut rng),
        ];

        let mid_res = (s / 8).clamp(deepest, s / 4);
        let map2style = [
            ReduceHead::new(sched.channels(deepest), deepest, sched, &mut rng),
            ReduceHead::new(sched.channels(mid_res), mid_res, sched, &mut rng),
            ReduceHead::new(sched.channels(s / 4), s / 4, sched, &mut rng),
        ];
        let map2structure = [
            ReduceHead::new(3, s / 4, sched, &mut rng),
            ReduceHead::new(3, s / 2, sched, &mut rng),
            ReduceHead::new(3, s, sched, &mut rng),
        ];

        let premod = (0..layers).map(|_| PremodNet::new(&mut rng)).collect();

        Ok(EncoderWeights {
            config,
            levels,
            stem,
            stages,
            laterals,
            topdown,
            rgb_heads,
            map2style,
            map2structure,
            premod,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn layers(&self) -> usize {
        self.premod.len()
    }

    /// Pyramid maps keyed by resolution, after top-down fusion.
    fn pyramid(&self, x: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        // bottom-up
        let mut feats: Vec<Tensor<T>> = Vec::with_capacity(self.levels.len());
        feats.push(lrelu(&self.stem.forward(x)));
        for stage in &self.stages {
            let next = stage.forward(feats.last().unwrap());
            feats.push(next);
        }
        // top-down, deepest first
        let depth = self.stages.len();
        let mut maps: Vec<(usize, Tensor<T>)> = Vec::with_capacity(self.levels.len());
        let mut p = self.laterals[depth].forward(&feats[depth]);
        maps.push((self.levels[depth], p.clone()));
        for (i, (adjust, smooth)) in self.topdown.iter().enumerate() {
            let level = depth - 1 - i;
            let lateral = self.laterals[level].forward(&feats[level]);
            let up = adjust.forward(&p.upsample_nearest(2));
            p = smooth.forward(&up.add(&lateral));
            maps.push((self.levels[level], p.clone()));
        }
        maps
    }

    fn level(maps: &[(usize, Tensor<T>)], res: usize) -> &Tensor<T> {
        &maps.iter().find(|(r, _)| *r == res).expect("pyramid level").1
    }

    /// Batched encode: intermediate code rows plus the three RGB
    /// reconstructions.
    pub fn encode_batch(&self, x: &Tensor<T>) -> EncoderFeatures<T> {
        let s = self.config.resolution;
        assert_eq!(x.dim(2), s, "encoder input resolution mismatch");
        let maps = self.pyramid(x);
        let deepest = *self.levels.last().unwrap();
        let mid_res = (s / 8).clamp(deepest, s / 4);

        let w_rows = [
            self.map2style[0].forward(Self::level(&maps, deepest)),
            self.map2style[1].forward(Self::level(&maps, mid_res)),
            self.map2style[2].forward(Self::level(&maps, s / 4)),
        ];
        let b = x.dim(0);
        let w_prime = Tensor::concat_channels(&[
            w_rows[0].reshape(&[b, 1, LATENT_DIM, 1]),
            w_rows[1].reshape(&[b, 1, LATENT_DIM, 1]),
            w_rows[2].reshape(&[b, 1, LATENT_DIM, 1]),
        ])
        .reshape(&[b, 3, LATENT_DIM]);

        let recon = [
            self.rgb_heads[0].forward(Self::level(&maps, s / 4)).tanh(),
            self.rgb_heads[1].forward(Self::level(&maps, s / 2)).tanh(),
            self.rgb_heads[2].forward(Self::level(&maps, s)).tanh(),
        ];
        EncoderFeatures { w_prime, recon }
    }

    /// Batched map2structure: `[B, 3, 512]`, rows aligned with the recon
    /// scales.
    pub fn map2structure_batch(&self, recon: &[Tensor<T>; 3]) -> Tensor<T> {
        let b = recon[0].dim(0);
        let rows = [
            self.map2structure[0].forward(&recon[0]),
            self.map2structure[1].forward(&recon[1]),
            self.map2structure[2].forward(&recon[2]),
        ];
        Tensor::concat_channels(&[
            rows[0].reshape(&[b, 1, LATENT_DIM, 1]),
            rows[1].reshape(&[b, 1, LATENT_DIM, 1]),
            rows[2].reshape(&[b, 1, LATENT_DIM, 1]),
        ])
        .reshape(&[b, 3, LATENT_DIM])
    }

    fn row(m: &Tensor<T>, r: usize) -> Tensor<T> {
        let b = m.dim(0);
        m.reshape(&[b, 3, LATENT_DIM, 1])
            .slice_channels(r, r + 1)
            .reshape(&[b, LATENT_DIM])
    }

    /// Pre-modulate one generator layer: `gamma_l(S_r) * IN(w'_r) + beta_l(S_r)`.
    pub fn premodulate_batch(
        &self,
        w_prime: &Tensor<T>,
        structure: &Tensor<T>,
        layer: usize,
    ) -> Result<Tensor<T>> {
        if layer >= self.premod.len() {
            return reject(format!(
                "layer index {layer} out of range (L = {})",
                self.premod.len()
            ));
        }
        let r = layer_to_scale(layer, self.premod.len());
        let w_row = Self::row(w_prime, r);
        let s_row = Self::row(structure, r);
        let (gamma, beta) = self.premod[layer].forward(&s_row);
        Ok(gamma.mul(&instance_normalize_rows(&w_row, IN_EPSILON)).add(&beta))
    }

    /// Full inversion: encode, map2structure, then per-layer pre-modulation
    /// (or plain group assignment when `use_premod` is off).
    ///
    /// Returns the `[B, L, 512]` style tensor together with the encoder
    /// features for loss computation.
    pub fn invert_batch(&self, x: &Tensor<T>, use_premod: bool) -> (Tensor<T>, EncoderFeatures<T>) {
        let feats = self.encode_batch(x);
        let b = x.dim(0);
        let layers = self.layers();
        let structure = self.map2structure_batch(&feats.recon);
        let mut rows: Vec<Tensor<T>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let row = if use_premod {
                self.premodulate_batch(&feats.w_prime, &structure, l)
                    .expect("layer index in range")
            } else {
                Self::row(&feats.w_prime, layer_to_scale(l, layers))
            };
            rows.push(row.reshape(&[b, 1, LATENT_DIM, 1]));
        }
        let w_star = Tensor::concat_channels(&rows).reshape(&[b, layers, LATENT_DIM]);
        (w_star, feats)
    }
}

impl<T: Element> Params<T> for EncoderWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.stem, "stem", f);
        for (i, s) in self.stages.iter().enumerate() {
            visit_child(s, &format!("stage{i}"), f);
        }
        for (l, r) in self.laterals.iter().zip(&self.levels) {
            visit_child(l, &format!("lateral{r}"), f);
        }
        for (i, (a, sm)) in self.topdown.iter().enumerate() {
            visit_child(a, &format!("td{i}.adjust"), f);
            visit_child(sm, &format!("td{i}.smooth"), f);
        }
        for (i, h) in self.rgb_heads.iter().enumerate() {
            visit_child(h, &format!("rgb{i}"), f);
        }
        for (i, h) in self.map2style.iter().enumerate() {
            visit_child(h, &format!("map2style{i}"), f);
        }
        for (i, h) in self.map2structure.iter().enumerate() {
            visit_child(h, &format!("map2structure{i}"), f);
        }
        for (i, p) in self.premod.iter().enumerate() {
            visit_child(p, &format!("premod{i}"), f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.stem, "stem", f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            visit_child_mut(s, &format!("stage{i}"), f);
        }
        for (l, r) in self.laterals.iter_mut().zip(&self.levels) {
            visit_child_mut(l, &format!("lateral{r}"), f);
        }
        for (i, (a, sm)) in self.topdown.iter_mut().enumerate() {
            visit_child_mut(a, &format!("td{i}.adjust"), f);
            visit_child_mut(sm, &format!("td{i}.smooth"), f);
        }
        for (i, h) in self.rgb_heads.iter_mut().enumerate() {
            visit_child_mut(h, &format!("rgb{i}"), f);
        }
        for (i, h) in self.map2style.iter_mut().enumerate() {
            visit_child_mut(h, &format!("map2style{i}"), f);
        }
        for (i, h) in self.map2structure.iter_mut().enumerate() {
            visit_child_mut(h, &format!("map2structure{i}"), f);
        }
        for (i, p) in self.premod.iter_mut().enumerate() {
            visit_child_mut(p, &format!("premod{i}"), f);
        }
    }
}

/// Instance-normalize each row of `[B, N]`: zero mean, unit variance
/// (population), stabilized by `eps`.
pub fn instance_normalize_rows<T: Element>(v: &Tensor<T>, eps: f64) -> Tensor<T> {
    assert_eq!(v.rank(), 2);
    let n = v.dim(1);
    let inv_n = el::<T>(1.0 / n as f64);
    let mean = v.row_sum().mul_scalar(inv_n).broadcast_rows(n);
    let centered = v.sub(&mean);
    let var = centered.square().row_sum().mul_scalar(inv_n);
    let denom = var.add_scalar(el(eps)).sqrt().recip().broadcast_rows(n);
    centered.mul(&denom)
}

/// Single-vector instance normalization, `(v - mean) / sqrt(var + eps)`.
pub fn instance_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let t = Tensor::<f64>::new(&[1, v.len()], v.to_vec());
    instance_normalize_rows(&t, eps).to_vec()
}

fn image_from_chw<T: Element>(t: &Tensor<T>) -> Result<Image> {
    Image::from_tensor(&t.detach())
}

/// Encode one image: `w'` rows plus the three reconstructions.
pub fn encode<T: Element>(corrupted: &Image, weights: &EncoderWeights<T>) -> Result<EncoderOutput> {
    if corrupted.side() != weights.resolution() || corrupted.channels() != 3 {
        return reject(format!(
            "encoder expects a 3x{0}x{0} image",
            weights.resolution()
        ));
    }
    let feats = weights.encode_batch(&corrupted.to_tensor());
    Ok(EncoderOutput {
        w_prime: feats
            .w_prime
            .data()
            .iter()
            .map(|v| Element::to_f64(*v) as f32)
            .collect(),
        recon: [
            image_from_chw(&feats.recon[0])?,
            image_from_chw(&feats.recon[1])?,
            image_from_chw(&feats.recon[2])?,
        ],
    })
}

/// Single-row pre-modulation (`w'` row and structure vector already picked
/// for the layer's scale group).
pub fn premodulate<T: Element>(
    w_prime_row: &[f64],
    s_r: &[f64],
    layer: usize,
    weights: &EncoderWeights<T>,
) -> Result<Vec<f64>> {
    if w_prime_row.len() != LATENT_DIM || s_r.len() != LATENT_DIM {
        return reject("premodulate expects 512-dim vectors");
    }
    if layer >= weights.layers() {
        return reject(format!(
            "layer index {layer} out of range (L = {})",
            weights.layers()
        ));
    }
    let w: Tensor<T> = Tensor::new(
        &[1, LATENT_DIM],
        w_prime_row.iter().map(|v| el::<T>(*v)).collect(),
    );
    let s: Tensor<T> = Tensor::new(&[1, LATENT_DIM], s_r.iter().map(|v| el::<T>(*v)).collect());
    let (gamma, beta) = weights.premod[layer].forward(&s);
    let out = gamma.mul(&instance_normalize_rows(&w, IN_EPSILON)).add(&beta);
    Ok(out.data().iter().map(|v| Element::to_f64(*v)).collect())
}

/// Full single-image inversion to a style code, exposing the encoder output
/// as well.
pub fn invert<T: Element>(
    corrupted: &Image,
    weights: &EncoderWeights<T>,
) -> Result<(StyleCode, EncoderOutput)> {
    if corrupted.side() != weights.resolution() || corrupted.channels() != 3 {
        return reject(format!(
            "encoder expects a 3x{0}x{0} image",
            weights.resolution()
        ));
    }
    let (w_star, feats) = weights.invert_batch(&corrupted.to_tensor(), true);
    let style = StyleCode::from_tensor(weights.resolution(), &w_star.detach())?;
    let out = EncoderOutput {
        w_prime: feats
            .w_prime
            .data()
            .iter()
            .map(|v| Element::to_f64(*v) as f32)
            .collect(),
        recon: [
            image_from_chw(&feats.recon[0])?,
            image_from_chw(&feats.recon[1])?,
            image_from_chw(&feats.recon[2])?,
        ],
    };
    Ok((style, out))
}
