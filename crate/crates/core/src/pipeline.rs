//! Training orchestration: run configuration, the procedural toy dataset,
//! generator pretraining, encoder optimization, inference and the ablation
//! driver.
//!
//! Every stochastic decision is drawn from a stream derived from
//! `(config.seed, purpose, step)`, so a checkpoint plus the same config
//! resumes bit-identically and two runs with equal seeds match.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods are std-only
use num_traits::Float;
use rand::Rng;

use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{reject, Error};
use crate::generator::{
    branch_input_tensor, ChannelSchedule, GeneratorConfig, GeneratorWeights, LATENT_DIM,
};
use crate::imaging::{apply_mask, compose, generate_mask, Image, Mask, MaskKind};
use crate::latent::{estimate_mean_latent, maybe_resample, soft_update, MeanLatentState};
use crate::losses::{
    combine_inpainting, fidelity_loss, inpainting_terms, msr_loss, total_loss, FeatureExtractor,
    LossWeights, TotalParts,
};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::{
    collect_params, lrelu, visit_child, visit_child_mut, Adam, Conv2d, Linear, Params,
    ResidualDown,
};
use crate::rng::{normal_vec, stream_rng, Stream};
use crate::tensor::{el, Element, Tensor};
use crate::Result;

/// Named width presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Profile {
    /// Desk-scale: 64x64, channels capped at 128.
    Tiny,
    /// Full-scale schedule (512-channel cap).
    Full,
}

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(try_from = "DatasetSpecRepr", into = "DatasetSpecRepr")
)]
pub enum DatasetSpec {
    /// Procedural toy images generated in-process.
    Toy { size: usize },
    /// A directory of image files (loaded by the I/O layer).
    Dir { path: String },
}

/// Wire form of [`DatasetSpec`]; a tagged enum cannot reject unknown keys,
/// a plain struct can.
#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSpecRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[cfg(feature = "serde")]
impl TryFrom<DatasetSpecRepr> for DatasetSpec {
    type Error = String;
    fn try_from(r: DatasetSpecRepr) -> core::result::Result<Self, String> {
        match (r.kind.as_str(), r.size, r.path) {
            ("toy", Some(size), None) => Ok(DatasetSpec::Toy { size }),
            ("dir", None, Some(path)) => Ok(DatasetSpec::Dir { path }),
            ("toy", _, _) => Err(String::from("dataset kind `toy` takes `size` only")),
            ("dir", _, _) => Err(String::from("dataset kind `dir` takes `path` only")),
            (other, _, _) => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

#[cfg(feature = "serde")]
impl From<DatasetSpec> for DatasetSpecRepr {
    fn from(spec: DatasetSpec) -> DatasetSpecRepr {
        match spec {
            DatasetSpec::Toy { size } => DatasetSpecRepr {
                kind: String::from("toy"),
                size: Some(size),
                path: None,
            },
            DatasetSpec::Dir { path } => DatasetSpecRepr {
                kind: String::from("dir"),
                size: None,
                path: Some(path),
            },
        }
    }
}

/// Complete run configuration. One value drives pretraining, encoder
/// training, inference and evaluation; its fingerprint ties checkpoints to
/// the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RunConfig {
    pub profile: Profile,
    pub resolution: usize,
    pub channel_base: u32,
    pub channel_cap: u32,
    pub batch_size: usize,
    pub pretrain_steps: u64,
    pub encoder_steps: u64,
    pub gen_lr: f64,
    pub gen_beta1: f64,
    pub gen_beta2: f64,
    pub enc_lr: f64,
    pub enc_beta1: f64,
    pub enc_beta2: f64,
    pub r1_gamma: f64,
    pub r1_interval: u64,
    pub tau: f64,
    pub sml_tolerance: f64,
    pub mean_latent_samples: usize,
    pub loss_weights: LossWeights,
    pub use_fw_plus: bool,
    pub use_premod: bool,
    pub use_sml: bool,
    pub mask_channel: bool,
    pub noise: bool,
    pub train_mask_kind: MaskKind,
    pub eval_mask_kind: MaskKind,
    pub eval_coverage: f64,
    pub eval_images: usize,
    pub seed: u64,
    pub dataset: DatasetSpec,
}

impl RunConfig {
    /// Desk-scale defaults: everything the acceptance run needs.
    pub fn tiny() -> RunConfig {
        RunConfig {
            profile: Profile::Tiny,
            resolution: 64,
            channel_base: 1024,
            channel_cap: 128,
            batch_size: 8,
            pretrain_steps: 2000,
            encoder_steps: 1000,
            gen_lr: 2e-3,
            gen_beta1: 0.0,
            gen_beta2: 0.99,
            enc_lr: 1e-4,
            enc_beta1: 0.9,
            enc_beta2: 0.999,
            r1_gamma: 10.0,
            r1_interval: 16,
            tau: 0.99,
            sml_tolerance: 1e-3,
            mean_latent_samples: 1000,
            loss_weights: LossWeights::default(),
            use_fw_plus: true,
            use_premod: true,
            use_sml: true,
            mask_channel: true,
            noise: false,
            train_mask_kind: MaskKind::Freeform,
            eval_mask_kind: MaskKind::Freeform,
            eval_coverage: 0.8,
            eval_images: 64,
            seed: 1,
            dataset: DatasetSpec::Toy { size: 500 },
        }
    }

    /// Full-scale schedule; training lengths are placeholders to override.
    pub fn full() -> RunConfig {
        RunConfig {
            profile: Profile::Full,
            resolution: 256,
            channel_base: 16384,
            channel_cap: 512,
            pretrain_steps: 100_000,
            encoder_steps: 50_000,
            mean_latent_samples: 10_000,
            ..RunConfig::tiny()
        }
    }

    pub fn schedule(&self) -> ChannelSchedule {
        ChannelSchedule {
            base: self.channel_base,
            cap: self.channel_cap,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            resolution: self.resolution,
            schedule: self.schedule(),
            rgb_branch: true,
            mask_channel: self.mask_channel,
            noise: self.noise,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            resolution: self.resolution,
            schedule: self.schedule(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::generator::num_style_layers(self.resolution)?;
        if self.batch_size == 0 {
            return reject("batch_size must be positive");
        }
        for (name, v) in [("gen_lr", self.gen_lr), ("enc_lr", self.enc_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return reject(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.tau) {
            return reject("tau must lie in [0, 1)");
        }
        if self.sml_tolerance <= 0.0 {
            return reject("sml_tolerance must be positive");
        }
        if self.mean_latent_samples == 0 {
            return reject("mean_latent_samples must be positive");
        }
        if !(self.eval_coverage > 0.0 && self.eval_coverage < 1.0) {
            return reject("eval_coverage must lie in (0, 1)");
        }
        if self.r1_interval == 0 {
            return reject("r1_interval must be positive");
        }
        self.loss_weights.validate()
    }

    /// Stable 64-bit fingerprint of every field; checkpoints carry it and
    /// loading rejects a mismatch.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.push(self.resolution as u64);
        h.push(self.channel_base as u64);
        h.push(self.channel_cap as u64);
        h.push(self.batch_size as u64);
        h.push(self.pretrain_steps);
        h.push(self.encoder_steps);
        for f in [
            self.gen_lr,
            self.gen_beta1,
            self.gen_beta2,
            self.enc_lr,
            self.enc_beta1,
            self.enc_beta2,
            self.r1_gamma,
            self.tau,
            self.sml_tolerance,
            self.eval_coverage,
            self.loss_weights.valid,
            self.loss_weights.hole,
            self.loss_weights.perc,
            self.loss_weights.style,
            self.loss_weights.tv,
            self.loss_weights.lambda_msr,
            self.loss_weights.lambda_fid,
        ] {
            h.push(f.to_bits());
        }
        h.push(self.r1_interval);
        h.push(self.mean_latent_samples as u64);
        h.push(
            u64::from(self.use_fw_plus)
                | u64::from(self.use_premod) << 1
                | u64::from(self.use_sml) << 2
                | u64::from(self.mask_channel) << 3
                | u64::from(self.noise) << 4
                | (self.profile as u64) << 8
                | (self.train_mask_kind as u64) << 16
                | (self.eval_mask_kind as u64) << 24,
        );
        h.push(self.eval_images as u64);
        h.push(self.seed);
        match &self.dataset {
            DatasetSpec::Toy { size } => {
                h.push(1);
                h.push(*size as u64);
            }
            DatasetSpec::Dir { path } => {
                h.push(2);
                for b in path.as_bytes() {
                    h.push(*b as u64);
                }
            }
        }
        h.finish()
    }
}

/// FNV-1a over u64 words.
struct Fnv(u64);
impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn push(&mut self, word: u64) {
        for b in word.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Toy dataset
// ---------------------------------------------------------------------------

/// Procedural images: a vertical two-color gradient plus a few solid or
/// textured shapes. Deterministic in `(seed, index)`.
pub fn toy_image(side: usize, seed: u64, index: u64) -> Image {
    let mut rng = stream_rng(seed, Stream::ToyData, index);
    let mut data = vec![0.0f32; 3 * side * side];
    // gradient background
    let top: [f32; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
    let bottom: [f32; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
    for c in 0..3 {
        for y in 0..side {
            let t = y as f32 / (side - 1) as f32;
            let v = top[c] * (1.0 - t) + bottom[c] * t;
            for x in 0..side {
                data[(c * side + y) * side + x] = v;
            }
        }
    }
    // shapes
    let n_shapes = rng.gen_range(1..=3);
    for _ in 0..n_shapes {
        let color: [f32; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        let textured = rng.gen_bool(0.4);
        let noise_seed: u64 = rng.gen();
        let circle = rng.gen_bool(0.5);
        let cy = rng.gen_range(0..side) as i64;
        let cx = rng.gen_range(0..side) as i64;
        let r = rng.gen_range(side / 8..=side / 3) as i64;
        let (h, w) = (
            rng.gen_range(side / 8..=side / 2) as i64,
            rng.gen_range(side / 8..=side / 2) as i64,
        );
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                let inside = if circle {
                    (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r
                } else {
                    (y - cy).abs() <= h / 2 && (x - cx).abs() <= w / 2
                };
                if !inside {
                    continue;
                }
                for c in 0..3 {
                    let mut v = color[c];
                    if textured {
                        v += 0.3 * value_noise(noise_seed, c as u64, y as u64, x as u64);
                    }
                    data[(c as usize * side + y as usize) * side + x as usize] =
                        v.clamp(-1.0, 1.0);
                }
            }
        }
    }
    Image::new(3, side, data).expect("toy image in range")
}

fn value_noise(seed: u64, c: u64, y: u64, x: u64) -> f32 {
    let h = crate::rng::derive_seed(seed ^ (c << 32), Stream::ToyData, (y << 20) | x);
    ((h >> 11) as f32 / (1u64 << 53) as f32) * 2.0 - 1.0
}

/// A full toy dataset.
pub fn toy_dataset(count: usize, side: usize, seed: u64) -> Vec<Image> {
    (0..count).map(|i| toy_image(side, seed, i as u64)).collect()
}

/// Held-out toy images: same distribution, index range disjoint from any
/// training set of sane size.
pub fn toy_holdout(count: usize, side: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| toy_image(side, seed, (1u64 << 32) + i as u64))
        .collect()
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// Plain convolutional discriminator for generator pretraining.
pub struct Discriminator<T: Element> {
    from_rgb: Conv2d<T>,
    blocks: Vec<ResidualDown<T>>,
    final_conv: Conv2d<T>,
    fc: Linear<T>,
}

impl<T: Element> Discriminator<T> {
    pub fn new(resolution: usize, schedule: &ChannelSchedule, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::WeightInit, 0x6469_7363);
        let from_rgb = Conv2d::new(3, schedule.channels(resolution), 1, 1, 0, true, &mut rng);
        let mut blocks = Vec::new();
        let mut res = resolution;
        while res > 4 {
            blocks.push(ResidualDown::new(
                schedule.channels(res),
                schedule.channels(res / 2),
                &mut rng,
            ));
            res /= 2;
        }
        let c4 = schedule.channels(4);
        Discriminator {
            from_rgb,
            blocks,
            final_conv: Conv2d::new(c4, c4, 3, 1, 1, true, &mut rng),
            fc: Linear::new(c4 * 16, 1, true, 1.0, &mut rng),
        }
    }

    /// `[B, 3, s, s] -> [B, 1]` logits.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = lrelu(&self.from_rgb.forward(x));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let h = lrelu(&self.final_conv.forward(&h));
        let b = h.dim(0);
        let flat = h.reshape(&[b, h.numel() / b]);
        self.fc.forward(&flat)
    }
}

impl<T: Element> Params<T> for Discriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child(&self.from_rgb, "from_rgb", f);
        for (i, b) in self.blocks.iter().enumerate() {
            visit_child(b, &format!("block{i}"), f);
        }
        visit_child(&self.final_conv, "final_conv", f);
        visit_child(&self.fc, "fc", f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut(&mut self.from_rgb, "from_rgb", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_child_mut(b, &format!("block{i}"), f);
        }
        visit_child_mut(&mut self.final_conv, "final_conv", f);
        visit_child_mut(&mut self.fc, "fc", f);
    }
}

// ---------------------------------------------------------------------------
// Batching helpers
// ---------------------------------------------------------------------------

/// Stack images into a `[B, 3, s, s]` tensor.
pub fn image_batch<T: Element>(images: &[&Image]) -> Tensor<T> {
    let side = images[0].side();
    let mut data = Vec::with_capacity(images.len() * 3 * side * side);
    for img in images {
        assert_eq!(img.side(), side);
        data.extend(img.data().iter().map(|v| el::<T>(*v as f64)));
    }
    Tensor::new(&[images.len(), 3, side, side], data)
}

/// Stack masks into `[B, 1, s, s]`.
pub fn mask_batch<T: Element>(masks: &[&Mask]) -> Tensor<T> {
    let side = masks[0].side();
    let mut data = Vec::with_capacity(masks.len() * side * side);
    for m in masks {
        data.extend(m.values().iter().map(|v| el::<T>(*v as f64)));
    }
    Tensor::new(&[masks.len(), 1, side, side], data)
}

fn broadcast_styles<T: Element>(w: &Tensor<T>, layers: usize) -> Tensor<T> {
    let b = w.dim(0);
    let row = w.reshape(&[b, 1, LATENT_DIM, 1]);
    Tensor::concat_channels(&vec![row; layers]).reshape(&[b, layers, LATENT_DIM])
}

fn pick_batch<'a, R: Rng>(dataset: &'a [Image], n: usize, rng: &mut R) -> Vec<&'a Image> {
    (0..n).map(|_| &dataset[rng.gen_range(0..dataset.len())]).collect()
}

// ---------------------------------------------------------------------------
// Generator pretraining
// ---------------------------------------------------------------------------

/// Per-step pretraining log record.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GanStepLog {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1: Option<f64>,
}

/// Pretraining result: the generator (its skip branch still untrained),
/// the discriminator, and the loss curve.
pub struct PretrainOutput {
    pub generator: GeneratorWeights<f32>,
    pub discriminator: Discriminator<f32>,
    pub logs: Vec<GanStepLog>,
}

/// Divergence abort carrying the last finite snapshot.
pub struct PretrainAbort {
    pub step: u64,
    pub term: &'static str,
    pub last_good: Option<PretrainOutput>,
}

impl From<PretrainAbort> for Error {
    fn from(a: PretrainAbort) -> Error {
        Error::TrainingFault {
            term: a.term,
            step: a.step,
        }
    }
}

const SNAPSHOT_EVERY: u64 = 100;

/// Adversarial pretraining of the synthesis trunk: nonsaturating logistic
/// loss with a lazy R1 gradient penalty, styles broadcast from mapped
/// latents, skip branch unused.
pub fn pretrain_generator(
    dataset: &[Image],
    config: &RunConfig,
    mut on_step: impl FnMut(&GanStepLog),
) -> core::result::Result<PretrainOutput, PretrainAbort> {
    config.validate().map_err(|_| PretrainAbort {
        step: 0,
        term: "config",
        last_good: None,
    })?;
    if dataset.len() < 100 {
        return Err(PretrainAbort {
            step: 0,
            term: "dataset (needs >= 100 images)",
            last_good: None,
        });
    }
    let s = config.resolution;
    assert!(dataset.iter().all(|i| i.side() == s), "dataset resolution mismatch");

    let mut generator = GeneratorWeights::<f32>::new(config.generator_config(), config.seed)
        .expect("validated config");
    let mut discriminator = Discriminator::<f32>::new(s, &config.schedule(), config.seed);
    let layers = generator.layers();
    let mut adam_g = Adam::new(config.gen_lr, config.gen_beta1, config.gen_beta2);
    let mut adam_d = Adam::new(config.gen_lr, config.gen_beta1, config.gen_beta2);
    let mut logs = Vec::with_capacity(config.pretrain_steps as usize);
    let mut snapshot: Option<(Vec<Vec<f32>>, Vec<Vec<f32>>, u64)> = None;

    for step in 0..config.pretrain_steps {
        let mut batch_rng = stream_rng(config.seed, Stream::TrainBatch, step);
        let reals = image_batch::<f32>(&pick_batch(dataset, config.batch_size, &mut batch_rng));
        let mut z_rng = stream_rng(config.seed, Stream::LatentSamples, step);
        let noise_seed = config
            .noise
            .then(|| crate::rng::derive_seed(config.seed, Stream::TrainNoise, step));

        // --- discriminator step
        let z: Tensor<f32> = Tensor::new(
            &[config.batch_size, LATENT_DIM],
            normal_vec(&mut z_rng, config.batch_size * LATENT_DIM),
        );
        let fake = {
            let w = generator.map_latent_batch(&z);
            generator
                .synthesize_batch(&broadcast_styles(&w, layers), None, noise_seed)
                .detach()
        };
        let r1_step = step % config.r1_interval == 0;
        let reals_in = if r1_step {
            Tensor::leaf(reals.shape(), reals.to_vec())
        } else {
            reals.clone()
        };
        let d_real = discriminator.forward(&reals_in);
        let d_fake = discriminator.forward(&fake);
        let mut loss_d = d_fake
            .softplus()
            .mean_all()
            .add(&d_real.neg().softplus().mean_all());
        let mut r1_value = None;
        if r1_step {
            // R1: gradient of the real logits w.r.t. the input pixels,
            // squared and summed per sample; second-order autodiff.
            let grads = d_real.sum_all().backward();
            let gx = grads.get_or_zeros(&reals_in);
            let r1 = gx.square().sum_all().mul_scalar(1.0 / config.batch_size as f32);
            r1_value = Some(r1.item() as f64);
            let weight = (config.r1_gamma / 2.0) * config.r1_interval as f64;
            loss_d = loss_d.add(&r1.mul_scalar(el(weight)));
        }
        let d_finite = loss_d.is_finite();
        if d_finite {
            let grads = loss_d.backward();
            adam_d.step(&mut discriminator, &grads);
        }

        // --- generator step
        let z2: Tensor<f32> = Tensor::new(
            &[config.batch_size, LATENT_DIM],
            normal_vec(&mut z_rng, config.batch_size * LATENT_DIM),
        );
        let w = generator.map_latent_batch(&z2);
        let fake = generator.synthesize_batch(&broadcast_styles(&w, layers), None, noise_seed);
        let loss_g = discriminator.forward(&fake).neg().softplus().mean_all();
        let g_finite = loss_g.is_finite();
        if g_finite {
            let grads = loss_g.backward();
            adam_g.step(&mut generator, &grads);
        }

        if !(d_finite && g_finite) {
            let last_good = snapshot.map(|(g, d, _)| {
                restore(&mut generator, &g);
                restore(&mut discriminator, &d);
                PretrainOutput {
                    generator,
                    discriminator,
                    logs,
                }
            });
            return Err(PretrainAbort {
                step,
                term: if d_finite { "generator" } else { "discriminator" },
                last_good,
            });
        }

        let log = GanStepLog {
            step,
            loss_d: loss_d.item() as f64,
            loss_g: loss_g.item() as f64,
            r1: r1_value,
        };
        on_step(&log);
        logs.push(log);
        if step % SNAPSHOT_EVERY == 0 {
            snapshot = Some((dump(&generator), dump(&discriminator), step));
        }
    }
    Ok(PretrainOutput {
        generator,
        discriminator,
        logs,
    })
}

fn dump<T: Element>(p: &dyn Params<T>) -> Vec<Vec<T>> {
    collect_params(p).into_iter().map(|(_, t)| t.to_vec()).collect()
}

fn restore<T: Element>(p: &mut dyn Params<T>, data: &[Vec<T>]) {
    let mut i = 0;
    p.visit_mut(&mut |_, t| {
        *t = Tensor::leaf(t.shape(), data[i].clone());
        i += 1;
    });
}

// ---------------------------------------------------------------------------
// Encoder training
// ---------------------------------------------------------------------------

/// Mean-latent mode carried by a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum SmlMode {
    Soft(MeanLatentState),
    Static(Vec<f64>),
}

impl SmlMode {
    pub fn online(&self) -> Vec<f64> {
        match self {
            SmlMode::Soft(s) => s.online(),
            SmlMode::Static(v) => v.clone(),
        }
    }
}

/// Serialized Adam state.
pub type AdamState = (u64, Vec<(String, Vec<f32>, Vec<f32>)>);

/// Full training state: everything needed to resume or run inference.
#[derive(Clone)]
pub struct Checkpoint {
    pub generator: GeneratorWeights<f32>,
    pub encoder: EncoderWeights<f32>,
    pub optimizer: AdamState,
    pub sml: SmlMode,
    pub step: u64,
    pub soft_updates: u64,
    pub fingerprint: u64,
}

/// Per-step encoder-stage loss record (the loss-log row schema).
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub step: u64,
    pub total: f64,
    pub valid: f64,
    pub hole: f64,
    pub perc: f64,
    pub style: f64,
    pub tv: f64,
    pub msr: f64,
    pub fid: f64,
}

/// Adapter over the trainable parameters of the encoder stage: the encoder
/// itself plus (when the skip branch is in use) the generator's branch. The
/// generator trunk is never visited, which is what freezes it.
struct EncoderStageParams<'a> {
    encoder: &'a mut EncoderWeights<f32>,
    branch: Option<&'a mut crate::generator::RgbBranch<f32>>,
}

impl Params<f32> for EncoderStageParams<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f32>)) {
        visit_child(self.encoder, "encoder", f);
        if let Some(b) = &self.branch {
            visit_child(*b, "generator.branch", f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f32>)) {
        visit_child_mut(self.encoder, "encoder", f);
        if let Some(b) = &mut self.branch {
            visit_child_mut(*b, "generator.branch", f);
        }
    }
}

fn mapping_closure<'a>(
    generator: &'a GeneratorWeights<f32>,
) -> impl FnMut(&[Vec<f64>]) -> Vec<Vec<f64>> + 'a {
    move |zs: &[Vec<f64>]| {
        let mut data = Vec::with_capacity(zs.len() * LATENT_DIM);
        for z in zs {
            data.extend(z.iter().map(|v| *v as f32));
        }
        let z = Tensor::<f32>::new(&[zs.len(), LATENT_DIM], data);
        let w = generator.map_latent_batch(&z);
        w.data()
            .chunks(LATENT_DIM)
            .map(|row| row.iter().map(|v| *v as f64).collect())
            .collect()
    }
}

/// Fresh training state for the encoder stage over a pretrained generator.
pub fn init_checkpoint(generator: GeneratorWeights<f32>, config: &RunConfig) -> Result<Checkpoint> {
    config.validate()?;
    if generator.resolution() != config.resolution {
        return reject("generator resolution does not match the config");
    }
    let encoder = EncoderWeights::<f32>::new(config.encoder_config(), config.seed)?;
    let sml = if config.use_sml {
        SmlMode::Soft(MeanLatentState::init(
            mapping_closure(&generator),
            config.mean_latent_samples,
            config.tau,
            config.sml_tolerance,
            config.seed,
        )?)
    } else {
        SmlMode::Static(estimate_mean_latent(
            mapping_closure(&generator),
            config.mean_latent_samples,
            crate::rng::derive_seed(config.seed, Stream::Resample, 0),
        )?)
    };
    Ok(Checkpoint {
        generator,
        encoder,
        optimizer: (0, Vec::new()),
        sml,
        step: 0,
        soft_updates: 0,
        fingerprint: config.fingerprint(),
    })
}

/// Train the encoder (and, when the skip branch is enabled, the branch) for
/// `steps` further steps. The generator trunk stays frozen. Resuming from a
/// saved checkpoint reproduces an uninterrupted run exactly because every
/// step derives its randomness from `(seed, step)`.
pub fn train_encoder(
    dataset: &[Image],
    mut ckpt: Checkpoint,
    steps: u64,
    config: &RunConfig,
    mut on_step: impl FnMut(&LossBreakdown),
) -> Result<(Checkpoint, Vec<LossBreakdown>)> {
    config.validate()?;
    if ckpt.fingerprint != config.fingerprint() {
        return Err(Error::FormatMismatch(format!(
            "checkpoint fingerprint {:016x} does not match config {:016x}",
            ckpt.fingerprint,
            config.fingerprint()
        )));
    }
    if dataset.is_empty() {
        return reject("encoder training needs a dataset");
    }
    let s = config.resolution;
    assert!(dataset.iter().all(|i| i.side() == s), "dataset resolution mismatch");

    let mut adam = Adam::new(config.enc_lr, config.enc_beta1, config.enc_beta2);
    let (t0, rows) = core::mem::take(&mut ckpt.optimizer);
    adam.import_state(t0, rows);

    let mut logs = Vec::with_capacity(steps as usize);
    let extractor = FeatureExtractor::<f32>::new(FeatureExtractor::<f32>::DEFAULT_SEED);
    let end = ckpt.step + steps;
    while ckpt.step < end {
        let step = ckpt.step;
        let mut batch_rng = stream_rng(config.seed, Stream::TrainBatch, step);
        let images = pick_batch(dataset, config.batch_size, &mut batch_rng);
        let masks: Vec<Mask> = (0..config.batch_size)
            .map(|i| {
                let coverage = batch_rng.gen_range(0.10..=0.90);
                let seed = crate::rng::derive_seed(
                    config.seed,
                    Stream::MaskGeneration,
                    step * 1024 + i as u64,
                );
                generate_mask(config.train_mask_kind, coverage, s, seed)
            })
            .collect::<Result<_>>()?;
        let mask_refs: Vec<&Mask> = masks.iter().collect();

        let originals = image_batch::<f32>(&images);
        let mask_t = mask_batch::<f32>(&mask_refs);
        let keep = Tensor::concat_channels(&vec![mask_t.neg().add_scalar(1.0); 3]);
        let corrupted = originals.mul(&keep);

        // SML bookkeeping happens once per step, before the loss reads the
        // online code.
        if let SmlMode::Soft(state) = &mut ckpt.sml {
            let mut updated = soft_update(state);
            ckpt.soft_updates += 1;
            let (resampled, _) = maybe_resample(&updated, |seed| {
                estimate_mean_latent(
                    mapping_closure(&ckpt.generator),
                    config.mean_latent_samples,
                    seed,
                )
                .expect("sample count validated")
            });
            updated = resampled;
            *state = updated;
        }
        let online = ckpt.sml.online();

        let (w_star, feats) = ckpt.encoder.invert_batch(&corrupted, config.use_premod);
        let noise_seed = config
            .noise
            .then(|| crate::rng::derive_seed(config.seed, Stream::TrainNoise, step));
        let generated = if config.use_fw_plus {
            let branch_in = branch_input_tensor(ckpt.generator.config(), &corrupted, &mask_t);
            ckpt.generator
                .synthesize_batch(&w_star, Some(&branch_in), noise_seed)
        } else {
            ckpt.generator.synthesize_batch(&w_star, None, noise_seed)
        };

        let terms = inpainting_terms(&originals, &generated, &mask_t, &extractor);
        let ipt = combine_inpainting(&terms, &config.loss_weights);
        let msr = msr_loss(&originals, &feats.recon, &extractor);
        let fid = fidelity_loss(&w_star, &online);
        let parts = TotalParts {
            inpainting: ipt,
            msr,
            fidelity: fid,
        };
        let total = total_loss(&parts, &config.loss_weights).map_err(|e| match e {
            Error::TrainingFault { term, .. } => Error::TrainingFault { term, step },
            other => other,
        })?;
        if !total.is_finite() {
            return Err(Error::TrainingFault {
                term: "total",
                step,
            });
        }

        let grads = total.backward();
        let mut params = EncoderStageParams {
            encoder: &mut ckpt.encoder,
            branch: if config.use_fw_plus {
                ckpt.generator.branch.as_mut()
            } else {
                None
            },
        };
        adam.step(&mut params, &grads);

        let log = LossBreakdown {
            step,
            total: total.item() as f64,
            valid: terms.valid.item() as f64,
            hole: terms.hole.item() as f64,
            perc: terms.perc.item() as f64,
            style: terms.style.item() as f64,
            tv: terms.tv.item() as f64,
            msr: parts.msr.item() as f64,
            fid: parts.fidelity.item() as f64,
        };
        on_step(&log);
        logs.push(log);
        ckpt.step += 1;
    }
    ckpt.optimizer = adam.export_state();
    Ok((ckpt, logs))
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

/// Invert and synthesize one corrupted image according to the config's
/// ablation flags (no composition).
pub fn generate(
    corrupted: &Image,
    mask: &Mask,
    ckpt: &Checkpoint,
    config: &RunConfig,
) -> Result<Image> {
    if corrupted.side() != config.resolution {
        return reject(format!(
            "image side {} does not match the configured resolution {}",
            corrupted.side(),
            config.resolution
        ));
    }
    let x = corrupted.to_tensor::<f32>();
    let (w_star, _) = ckpt.encoder.invert_batch(&x, config.use_premod);
    let out = if config.use_fw_plus {
        let branch_in = branch_input_tensor(ckpt.generator.config(), &x, &mask.to_tensor());
        ckpt.generator.synthesize_batch(&w_star, Some(&branch_in), None)
    } else {
        ckpt.generator.synthesize_batch(&w_star, None, None)
    };
    Image::from_tensor(&out.detach())
}

/// Full inpainting: corrupt, invert, synthesize, compose; the hard
/// constraint is asserted before returning.
pub fn inpaint(
    image: &Image,
    mask: &Mask,
    ckpt: &Checkpoint,
    config: &RunConfig,
) -> Result<Image> {
    if image.side() != mask.side() {
        return reject("image and mask dimensions differ");
    }
    let corrupted = apply_mask(image, mask)?;
    let generated = generate(&corrupted, mask, ckpt, config)?;
    let composed = compose(image, &generated, mask)?;
    for c in 0..image.channels() {
        for y in 0..image.side() {
            for x in 0..image.side() {
                if mask.get(y, x) == 0 {
                    assert_eq!(
                        composed.get(c, y, x).to_bits(),
                        image.get(c, y, x).to_bits(),
                        "hard constraint violated"
                    );
                }
            }
        }
    }
    Ok(composed)
}

/// Deterministic evaluation mask set: one mask per held-out image.
pub fn eval_masks(config: &RunConfig, count: usize) -> Result<Vec<Mask>> {
    (0..count)
        .map(|i| {
            let seed = crate::rng::derive_seed(config.seed, Stream::MaskGeneration, 1u64 << 40 | i as u64);
            generate_mask(config.eval_mask_kind, config.eval_coverage, config.resolution, seed)
        })
        .collect()
}

/// Evaluate a checkpoint on a held-out set with deterministic masks.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    config: &RunConfig,
    images: &[Image],
    masks: &[Mask],
) -> Result<EvalReport> {
    let extractor = FeatureExtractor::<f32>::new(FeatureExtractor::<f32>::DEFAULT_SEED);
    let mut model =
        |corrupted: &Image, mask: &Mask| -> Result<Image> { generate(corrupted, mask, ckpt, config) };
    evaluate(
        images,
        masks,
        &mut model,
        &extractor,
        &format!("{:016x}", config.fingerprint()),
    )
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// One ablation configuration (a row of the comparison table).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationCell {
    pub name: String,
    pub use_fw_plus: bool,
    pub use_sml: bool,
    pub use_premod: bool,
}

impl AblationCell {
    /// Apply the cell's switches to a base config.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            use_fw_plus: self.use_fw_plus,
            use_sml: self.use_sml,
            use_premod: self.use_premod,
            ..base.clone()
        }
    }
}

/// The standard four-row grid: the skip-branch space alone, plus soft mean
/// latent, plus pre-modulation (the full method), and the styles-only
/// variant with both auxiliaries.
pub fn default_ablation_grid() -> Vec<AblationCell> {
    vec![
        AblationCell {
            name: String::from("fw+"),
            use_fw_plus: true,
            use_sml: false,
            use_premod: false,
        },
        AblationCell {
            name: String::from("fw+ sml"),
            use_fw_plus: true,
            use_sml: true,
            use_premod: false,
        },
        AblationCell {
            name: String::from("fw+ sml pm"),
            use_fw_plus: true,
            use_sml: true,
            use_premod: true,
        },
        AblationCell {
            name: String::from("w+ sml pm"),
            use_fw_plus: false,
            use_sml: true,
            use_premod: true,
        },
    ]
}

/// One evaluated ablation row; `report` is absent when the cell's
/// checkpoint was unavailable.
#[derive(Debug)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub report: Option<EvalReport>,
}

/// Evaluate every cell with identical images and masks. `provider` returns
/// the cell's checkpoint (training it or loading it); `Ok(None)` marks the
/// cell absent and the run continues.
pub fn run_ablation(
    cells: &[AblationCell],
    base: &RunConfig,
    images: &[Image],
    masks: &[Mask],
    provider: &mut dyn FnMut(&AblationCell, &RunConfig) -> Result<Option<Checkpoint>>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let config = cell.apply(base);
        let report = match provider(cell, &config)? {
            Some(ckpt) => Some(evaluate_checkpoint(&ckpt, &config, images, masks)?),
            None => None,
        };
        rows.push(AblationRow {
            cell: cell.clone(),
            report,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_images_are_deterministic_and_in_range() {
        let a = toy_image(32, 7, 3);
        let b = toy_image(32, 7, 3);
        let c = toy_image(32, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn fingerprint_tracks_every_flag() {
        let base = RunConfig::tiny();
        let mut other = base.clone();
        other.use_premod = false;
        assert_ne!(base.fingerprint(), other.fingerprint());
        let mut other = base.clone();
        other.tau = 0.5;
        assert_ne!(base.fingerprint(), other.fingerprint());
        assert_eq!(base.fingerprint(), RunConfig::tiny().fingerprint());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = RunConfig::tiny();
        c.resolution = 12;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.tau = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.enc_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.loss_weights.hole = -1.0;
        assert!(c.validate().is_err());
    }
}
