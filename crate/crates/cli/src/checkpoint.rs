//! Versioned checkpoint archives.
//!
//! A single binary container holds named parameter tensors with shape
//! metadata behind a typed header. Three header kinds exist:
//!
//!   1 — generator weights only (output of `train-gen`),
//!   2 — full training state: generator + encoder weights, optimizer
//!       moments, the mean-latent state, the step counters and the config
//!       fingerprint (output of `train-enc`, resumable),
//!   3 — encoder weights only.
//!
//! All numeric payloads are little-endian and written bit-exactly, so a
//! save/load round trip reproduces every tensor to the bit. Loading
//! validates magic, version, kind and the architecture header against the
//! expected configuration and rejects mismatches.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use latentfill_core::generator::GeneratorWeights;
use latentfill_core::latent::MeanLatentState;
use latentfill_core::nn::Params;
use latentfill_core::pipeline::{Checkpoint, RunConfig, SmlMode};
use latentfill_core::tensor::Tensor;
use latentfill_core::Error as CoreError;

const MAGIC: &[u8; 4] = b"LFCK";
const VERSION: u32 = 1;

pub const KIND_GENERATOR: u8 = 1;
pub const KIND_TRAIN_STATE: u8 = 2;
pub const KIND_ENCODER: u8 = 3;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        let bytes = s.as_bytes();
        self.u32(bytes.len() as u32)?;
        self.0.write_all(bytes)?;
        Ok(())
    }
    fn f32s(&mut self, data: &[f32]) -> Result<()> {
        self.u64(data.len() as u64)?;
        for v in data {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn f64s(&mut self, data: &[f64]) -> Result<()> {
        self.u64(data.len() as u64)?;
        for v in data {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            bail!(CoreError::FormatMismatch("unreasonable string length".into()));
        }
        let mut b = vec![0u8; len];
        self.0.read_exact(&mut b)?;
        Ok(String::from_utf8(b).context("checkpoint string is not utf-8")?)
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let len = self.u64()? as usize;
        let mut bytes = vec![0u8; len * 4];
        self.0.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let mut bytes = vec![0u8; len * 8];
        self.0.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn write_params<W: Write>(w: &mut Writer<W>, p: &dyn Params<f32>) -> Result<()> {
    let entries = latentfill_core::nn::collect_params(p);
    w.u32(entries.len() as u32)?;
    for (name, t) in entries {
        w.str(&name)?;
        w.u8(0)?; // dtype f32
        w.u8(t.rank() as u8)?;
        for d in t.shape() {
            w.u32(*d as u32)?;
        }
        w.f32s(t.data())?;
    }
    Ok(())
}

/// Assign archived tensors into an existing parameter set. Every parameter
/// must be matched by name and shape, and nothing may be left over.
fn read_params<R: Read>(r: &mut Reader<R>, p: &mut dyn Params<f32>) -> Result<()> {
    let count = r.u32()? as usize;
    let mut loaded: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let dtype = r.u8()?;
        if dtype != 0 {
            bail!(CoreError::FormatMismatch(format!(
                "tensor `{name}` has unsupported dtype {dtype}"
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let data = r.f32s()?;
        if data.len() != shape.iter().product::<usize>() {
            bail!(CoreError::FormatMismatch(format!(
                "tensor `{name}` data does not match its shape"
            )));
        }
        loaded.push((name, shape, data));
    }
    let mut idx = 0usize;
    let mut err: Option<String> = None;
    p.visit_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        let Some((lname, lshape, ldata)) = loaded.get(idx) else {
            err = Some(format!("archive is missing parameter `{name}`"));
            return;
        };
        if lname != name {
            err = Some(format!("archive has `{lname}` where `{name}` was expected"));
            return;
        }
        if lshape != t.shape() {
            err = Some(format!(
                "parameter `{name}` has shape {:?} in the archive, expected {:?}",
                lshape,
                t.shape()
            ));
            return;
        }
        *t = Tensor::leaf(t.shape(), ldata.clone());
        idx += 1;
    });
    if let Some(msg) = err {
        bail!(CoreError::FormatMismatch(msg));
    }
    if idx != loaded.len() {
        bail!(CoreError::FormatMismatch(format!(
            "archive holds {} extra tensors",
            loaded.len() - idx
        )));
    }
    Ok(())
}

fn write_arch_header<W: Write>(w: &mut Writer<W>, config: &RunConfig) -> Result<()> {
    w.u32(config.resolution as u32)?;
    w.u32(config.channel_base)?;
    w.u32(config.channel_cap)?;
    let flags =
        u8::from(config.mask_channel) | (u8::from(config.noise) << 1) | (1u8 << 2) /* branch */;
    w.u8(flags)?;
    Ok(())
}

fn check_arch_header<R: Read>(r: &mut Reader<R>, config: &RunConfig) -> Result<()> {
    let resolution = r.u32()? as usize;
    let base = r.u32()?;
    let cap = r.u32()?;
    let flags = r.u8()?;
    let expect_flags =
        u8::from(config.mask_channel) | (u8::from(config.noise) << 1) | (1u8 << 2);
    if resolution != config.resolution
        || base != config.channel_base
        || cap != config.channel_cap
        || flags != expect_flags
    {
        bail!(CoreError::FormatMismatch(format!(
            "archive was built for resolution {resolution}, channels {base}/{cap}, flags {flags:#04x}; \
             the current config expects {}, {}/{}, {expect_flags:#04x}",
            config.resolution, config.channel_base, config.channel_cap
        )));
    }
    Ok(())
}

fn open_archive<R: Read>(r: &mut Reader<R>, expect_kind: u8) -> Result<()> {
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!(CoreError::FormatMismatch("not a checkpoint archive".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(CoreError::FormatMismatch(format!(
            "archive version {version}, this build reads {VERSION}"
        )));
    }
    let kind = r.u8()?;
    if kind != expect_kind {
        bail!(CoreError::FormatMismatch(format!(
            "archive kind {kind} where kind {expect_kind} was expected"
        )));
    }
    Ok(())
}

/// Save generator weights (kind 1).
pub fn save_generator(weights: &GeneratorWeights<f32>, config: &RunConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = Writer(std::io::BufWriter::new(file));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(KIND_GENERATOR)?;
    write_arch_header(&mut w, config)?;
    write_params(&mut w, weights)?;
    w.0.flush()?;
    Ok(())
}

/// Load generator weights saved by [`save_generator`], validating the
/// architecture against `config`.
pub fn load_generator(path: &Path, config: &RunConfig) -> Result<GeneratorWeights<f32>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = Reader(std::io::BufReader::new(file));
    open_archive(&mut r, KIND_GENERATOR)?;
    check_arch_header(&mut r, config)?;
    let mut weights = GeneratorWeights::<f32>::new(config.generator_config(), 0)
        .map_err(anyhow::Error::new)?;
    read_params(&mut r, &mut weights)?;
    Ok(weights)
}

/// Save encoder weights (kind 3).
pub fn save_encoder(
    weights: &latentfill_core::encoder::EncoderWeights<f32>,
    config: &RunConfig,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = Writer(std::io::BufWriter::new(file));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(KIND_ENCODER)?;
    write_arch_header(&mut w, config)?;
    write_params(&mut w, weights)?;
    w.0.flush()?;
    Ok(())
}

/// Load encoder weights saved by [`save_encoder`].
pub fn load_encoder(
    path: &Path,
    config: &RunConfig,
) -> Result<latentfill_core::encoder::EncoderWeights<f32>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = Reader(std::io::BufReader::new(file));
    open_archive(&mut r, KIND_ENCODER)?;
    check_arch_header(&mut r, config)?;
    let mut weights =
        latentfill_core::encoder::EncoderWeights::<f32>::new(config.encoder_config(), 0)
            .map_err(anyhow::Error::new)?;
    read_params(&mut r, &mut weights)?;
    Ok(weights)
}

/// Save a full training state (kind 2).
pub fn save_train_state(ckpt: &Checkpoint, config: &RunConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = Writer(std::io::BufWriter::new(file));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(KIND_TRAIN_STATE)?;
    write_arch_header(&mut w, config)?;
    w.u64(ckpt.fingerprint)?;
    w.u64(ckpt.step)?;
    w.u64(ckpt.soft_updates)?;
    write_params(&mut w, &ckpt.generator)?;
    write_params(&mut w, &ckpt.encoder)?;

    let (t, rows) = &ckpt.optimizer;
    w.u64(*t)?;
    w.u32(rows.len() as u32)?;
    for (name, m, v) in rows {
        w.str(name)?;
        w.f32s(m)?;
        w.f32s(v)?;
    }

    match &ckpt.sml {
        SmlMode::Soft(state) => {
            w.u8(1)?;
            w.f64s(&state.target)?;
            w.f64s(&state.delta)?;
            w.0.write_all(&state.tau.to_le_bytes())?;
            w.0.write_all(&state.tolerance.to_le_bytes())?;
            w.u64(state.sample_count as u64)?;
            w.u64(state.rng_seed)?;
            w.u64(state.resamples)?;
        }
        SmlMode::Static(mean) => {
            w.u8(0)?;
            w.f64s(mean)?;
        }
    }
    w.0.flush()?;
    Ok(())
}

/// Load a training state saved by [`save_train_state`]. The stored config
/// fingerprint must match `config`.
pub fn load_train_state(path: &Path, config: &RunConfig) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = Reader(std::io::BufReader::new(file));
    open_archive(&mut r, KIND_TRAIN_STATE)?;
    check_arch_header(&mut r, config)?;
    let fingerprint = r.u64()?;
    if fingerprint != config.fingerprint() {
        bail!(CoreError::FormatMismatch(format!(
            "checkpoint fingerprint {fingerprint:016x} does not match the config ({:016x})",
            config.fingerprint()
        )));
    }
    let step = r.u64()?;
    let soft_updates = r.u64()?;

    let mut generator = GeneratorWeights::<f32>::new(config.generator_config(), 0)
        .map_err(anyhow::Error::new)?;
    read_params(&mut r, &mut generator)?;
    let mut encoder =
        latentfill_core::encoder::EncoderWeights::<f32>::new(config.encoder_config(), 0)
            .map_err(anyhow::Error::new)?;
    read_params(&mut r, &mut encoder)?;

    let t = r.u64()?;
    let n_rows = r.u32()? as usize;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let name = r.str()?;
        let m = r.f32s()?;
        let v = r.f32s()?;
        rows.push((name, m, v));
    }

    let sml = match r.u8()? {
        1 => {
            let target = r.f64s()?;
            let delta = r.f64s()?;
            let mut b = [0u8; 8];
            r.0.read_exact(&mut b)?;
            let tau = f64::from_le_bytes(b);
            r.0.read_exact(&mut b)?;
            let tolerance = f64::from_le_bytes(b);
            let sample_count = r.u64()? as usize;
            let rng_seed = r.u64()?;
            let resamples = r.u64()?;
            SmlMode::Soft(MeanLatentState {
                target,
                delta,
                tau,
                tolerance,
                sample_count,
                rng_seed,
                resamples,
            })
        }
        0 => SmlMode::Static(r.f64s()?),
        other => bail!(CoreError::FormatMismatch(format!(
            "unknown mean-latent mode tag {other}"
        ))),
    };

    Ok(Checkpoint {
        generator,
        encoder,
        optimizer: (t, rows),
        sml,
        step,
        soft_updates,
        fingerprint,
    })
}
