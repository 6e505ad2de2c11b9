//! Command line for training, inference and evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use latentfill::{checkpoint, classify, config as configfile, dataset, imagefile, losslog, manifest, report};
use latentfill_core::imaging::{generate_mask, MaskKind};
use latentfill_core::pipeline::{
    default_ablation_grid, eval_masks, evaluate_checkpoint, init_checkpoint, inpaint,
    pretrain_generator, run_ablation, train_encoder, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "latentfill",
    version,
    about = "GAN-inversion image inpainting: training, inference and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML, all fields required).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = configfile::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate procedural masks and a manifest.
    MakeMasks {
        /// Mask family: freeform, box, outpaint, or "all".
        #[arg(long, default_value = "all")]
        kind: String,
        /// Target coverage fractions (repeatable).
        #[arg(long = "coverage", default_values_t = [0.25, 0.55, 0.80])]
        coverage: Vec<f64>,
        /// Masks per (kind, coverage) pair.
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Mask side in pixels (power of two).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the synthesis network adversarially on the dataset.
    TrainGen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output generator archive.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV loss log.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Train the encoder (and skip branch) over a frozen generator trunk.
    TrainEnc {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pretrained generator archive (to start fresh).
        #[arg(long, conflicts_with = "resume")]
        generator: Option<PathBuf>,
        /// Existing training-state checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Steps to train now (default: the config's encoder_steps minus
        /// the checkpoint's completed steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Output training-state checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV loss log.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Fill one corrupted image and write the composed result.
    Inpaint {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training-state checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (PNG, square, matching the configured resolution).
        #[arg(long)]
        image: PathBuf,
        /// Binary mask (PNG grayscale, 0 = keep, 255 = hole).
        #[arg(long)]
        mask: PathBuf,
        /// Output image path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out set.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for report.txt and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/evaluate the ablation grid and emit a comparison table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Train each cell in-process (expensive).
        #[arg(long, conflicts_with = "checkpoint_dir")]
        train: bool,
        /// Directory holding per-cell checkpoints named cell-<slug>.ckpt;
        /// missing cells are reported absent.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Comma-separated cell names to restrict the grid.
        #[arg(long)]
        cells: Option<String>,
        /// Output directory for ablation.txt / ablation.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let class = classify(&err);
        eprintln!("error: class={}: {err:#}", class.name());
        std::process::exit(class.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MakeMasks {
            kind,
            coverage,
            count,
            size,
            seed,
            out,
        } => make_masks(&kind, &coverage, count, size, seed, &out),
        Cmd::TrainGen {
            config,
            out,
            loss_log,
        } => train_gen(&config, &out, loss_log.as_deref()),
        Cmd::TrainEnc {
            config,
            generator,
            resume,
            steps,
            out,
            loss_log,
        } => train_enc(
            &config,
            generator.as_deref(),
            resume.as_deref(),
            steps,
            &out,
            loss_log.as_deref(),
        ),
        Cmd::Inpaint {
            config,
            checkpoint,
            image,
            mask,
            out,
        } => run_inpaint(&config, &checkpoint, &image, &mask, &out),
        Cmd::Eval {
            config,
            checkpoint,
            out,
        } => run_eval(&config, &checkpoint, &out),
        Cmd::Ablate {
            config,
            train,
            checkpoint_dir,
            cells,
            out,
        } => run_ablate(&config, train, checkpoint_dir.as_deref(), cells.as_deref(), &out),
    }
}

fn make_masks(
    kind: &str,
    coverages: &[f64],
    count: usize,
    size: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let kinds: Vec<MaskKind> = if kind == "all" {
        MaskKind::KINDS.to_vec()
    } else {
        vec![MaskKind::parse(kind).map_err(anyhow::Error::new)?]
    };
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    let mut counter = 0u64;
    for k in &kinds {
        for &coverage in coverages {
            for i in 0..count {
                let mask_seed = seed.wrapping_add(counter);
                counter += 1;
                let mask = generate_mask(*k, coverage, size, mask_seed)
                    .map_err(anyhow::Error::new)?;
                let name = format!("{k}-{coverage:.2}-{i:03}.png");
                imagefile::save_mask(&mask, &out.join(&name))?;
                entries.push(manifest::ManifestEntry {
                    path: name,
                    coverage: mask.coverage(),
                    kind: *k,
                    seed: mask_seed,
                });
            }
        }
    }
    manifest::write(&entries, &out.join("manifest.csv"))?;
    println!("wrote {} masks to {}", entries.len(), out.display());
    Ok(())
}

fn train_gen(config_args: &ConfigArgs, out: &Path, loss_log: Option<&Path>) -> Result<()> {
    let config = config_args.load()?;
    let data = dataset::load(&config)?;
    let mut log = loss_log.map(losslog::GanLog::create).transpose()?;
    let started = Instant::now();
    let print_every = (config.pretrain_steps / 50).max(1);
    let result = pretrain_generator(&data.train, &config, |row| {
        if let Some(log) = log.as_mut() {
            let _ = log.push(row);
        }
        if row.step % print_every == 0 {
            eprintln!(
                "[train-gen {:>6.0}s] step {:>6}  L_d {:.4}  L_g {:.4}",
                started.elapsed().as_secs_f64(),
                row.step,
                row.loss_d,
                row.loss_g
            );
        }
    });
    if let Some(log) = log {
        log.finish()?;
    }
    match result {
        Ok(outcome) => {
            checkpoint::save_generator(&outcome.generator, &config, out)?;
            println!("generator saved to {}", out.display());
            Ok(())
        }
        Err(abort) => {
            if let Some(last_good) = &abort.last_good {
                let rescue = out.with_extension("last-good.ckpt");
                checkpoint::save_generator(&last_good.generator, &config, &rescue)?;
                eprintln!("saved last finite snapshot to {}", rescue.display());
            }
            bail!(latentfill_core::Error::from(abort));
        }
    }
}

fn train_enc(
    config_args: &ConfigArgs,
    generator: Option<&Path>,
    resume: Option<&Path>,
    steps: Option<u64>,
    out: &Path,
    loss_log: Option<&Path>,
) -> Result<()> {
    let config = config_args.load()?;
    let data = dataset::load(&config)?;
    let ckpt = match (generator, resume) {
        (_, Some(resume)) => checkpoint::load_train_state(resume, &config)?,
        (Some(gen_path), None) => {
            let generator = checkpoint::load_generator(gen_path, &config)?;
            init_checkpoint(generator, &config).map_err(anyhow::Error::new)?
        }
        (None, None) => bail!(latentfill_core::Error::RejectedInput(
            "train-enc needs --generator or --resume".into()
        )),
    };
    let steps = steps.unwrap_or_else(|| config.encoder_steps.saturating_sub(ckpt.step));
    let mut log = loss_log.map(losslog::LossLog::create).transpose()?;
    let started = Instant::now();
    let print_every = (steps / 50).max(1);
    let first = ckpt.step;
    let (ckpt, _) = train_encoder(&data.train, ckpt, steps, &config, |row| {
        if let Some(log) = log.as_mut() {
            let _ = log.push(row);
        }
        if (row.step - first) % print_every == 0 {
            eprintln!(
                "[train-enc {:>6.0}s] step {:>6}  L {:.4}  (hole {:.4} perc {:.4} msr {:.4} fid {:.4})",
                started.elapsed().as_secs_f64(),
                row.step,
                row.total,
                row.hole,
                row.perc,
                row.msr,
                row.fid
            );
        }
    })
    .map_err(anyhow::Error::new)?;
    if let Some(log) = log {
        log.finish()?;
    }
    checkpoint::save_train_state(&ckpt, &config, out)?;
    println!("training state ({} steps) saved to {}", ckpt.step, out.display());
    Ok(())
}

fn run_inpaint(
    config_args: &ConfigArgs,
    ckpt_path: &Path,
    image_path: &Path,
    mask_path: &Path,
    out: &Path,
) -> Result<()> {
    let config = config_args.load()?;
    let ckpt = checkpoint::load_train_state(ckpt_path, &config)?;
    let image = imagefile::load_image(image_path)?;
    let mask = imagefile::load_mask(mask_path)?;
    let composed = inpaint(&image, &mask, &ckpt, &config).map_err(anyhow::Error::new)?;
    imagefile::save_image(&composed, out)?;
    println!("composed image written to {}", out.display());
    Ok(())
}

fn run_eval(config_args: &ConfigArgs, ckpt_path: &Path, out: &Path) -> Result<()> {
    let config = config_args.load()?;
    let ckpt = checkpoint::load_train_state(ckpt_path, &config)?;
    let data = dataset::load(&config)?;
    let masks = eval_masks(&config, data.holdout.len()).map_err(anyhow::Error::new)?;
    let result = evaluate_checkpoint(&ckpt, &config, &data.holdout, &masks)
        .map_err(anyhow::Error::new)?;
    report::write_report(&result, out)?;
    print!("{}", report::render_table(&result));
    Ok(())
}

fn cell_slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn run_ablate(
    config_args: &ConfigArgs,
    train: bool,
    checkpoint_dir: Option<&Path>,
    cells: Option<&str>,
    out: &Path,
) -> Result<()> {
    let base = config_args.load()?;
    let mut grid = default_ablation_grid();
    if let Some(filter) = cells {
        let wanted: Vec<&str> = filter.split(',').map(|s| s.trim()).collect();
        grid.retain(|c| wanted.contains(&c.name.as_str()));
        if grid.is_empty() {
            bail!(latentfill_core::Error::RejectedInput(format!(
                "no ablation cells match `{filter}`"
            )));
        }
    }
    let data = dataset::load(&base)?;
    let masks = eval_masks(&base, data.holdout.len()).map_err(anyhow::Error::new)?;

    // The trunk pretraining does not depend on the ablation switches, so a
    // trained generator is shared across cells.
    let mut shared_generator: Option<Vec<(String, Vec<f32>)>> = None;
    let started = Instant::now();

    let rows = run_ablation(&grid, &base, &data.holdout, &masks, &mut |cell, cfg| {
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("cell-{}.ckpt", cell_slug(&cell.name)));
            if !path.exists() {
                eprintln!("[ablate] {}: no checkpoint at {}, skipping", cell.name, path.display());
                return Ok(None);
            }
            let ckpt = checkpoint::load_train_state(&path, cfg)
                .map_err(|e| latentfill_core::Error::FormatMismatch(format!("{e:#}")))?;
            return Ok(Some(ckpt));
        }
        if !train {
            return Ok(None);
        }
        eprintln!(
            "[ablate {:>6.0}s] training cell `{}`",
            started.elapsed().as_secs_f64(),
            cell.name
        );
        let generator = match &shared_generator {
            Some(saved) => {
                let mut g = latentfill_core::generator::GeneratorWeights::<f32>::new(
                    cfg.generator_config(),
                    cfg.seed,
                )?;
                let mut i = 0;
                latentfill_core::nn::Params::visit_mut(&mut g, &mut |name, t| {
                    debug_assert_eq!(name, saved[i].0);
                    *t = latentfill_core::tensor::Tensor::leaf(t.shape(), saved[i].1.clone());
                    i += 1;
                });
                g
            }
            None => {
                let out = pretrain_generator(&data.train, cfg, |row| {
                    if row.step % 100 == 0 {
                        eprintln!(
                            "[ablate {:>6.0}s] pretrain step {:>6}  L_d {:.4}  L_g {:.4}",
                            started.elapsed().as_secs_f64(),
                            row.step,
                            row.loss_d,
                            row.loss_g
                        );
                    }
                })
                .map_err(latentfill_core::Error::from)?;
                let dump: Vec<(String, Vec<f32>)> =
                    latentfill_core::nn::collect_params(&out.generator)
                        .into_iter()
                        .map(|(n, t)| (n, t.to_vec()))
                        .collect();
                shared_generator = Some(dump);
                out.generator
            }
        };
        let ckpt = init_checkpoint(generator, cfg)?;
        let (ckpt, _) = train_encoder(&data.train, ckpt, cfg.encoder_steps, cfg, |row| {
            if row.step % 100 == 0 {
                eprintln!(
                    "[ablate {:>6.0}s] `{}` step {:>6}  L {:.4}",
                    started.elapsed().as_secs_f64(),
                    cell.name,
                    row.step,
                    row.total
                );
            }
        })?;
        Ok(Some(ckpt))
    })
    .map_err(anyhow::Error::new)?;

    report::write_ablation(&rows, out)?;
    print!("{}", report::render_ablation(&rows));
    Ok(())
}
