//! Dataset materialization: procedural toy images or a directory of PNGs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use latentfill_core::imaging::Image;
use latentfill_core::pipeline::{toy_dataset, toy_holdout, DatasetSpec, RunConfig};

/// Training images plus a held-out evaluation set.
pub struct SplitDataset {
    pub train: Vec<Image>,
    pub holdout: Vec<Image>,
}

/// Load the dataset named by the config. Toy datasets generate a disjoint
/// held-out set; directory datasets reserve their last `eval_images`
/// entries (sorted by filename) for evaluation.
pub fn load(config: &RunConfig) -> Result<SplitDataset> {
    match &config.dataset {
        DatasetSpec::Toy { size } => Ok(SplitDataset {
            train: toy_dataset(*size, config.resolution, config.seed),
            holdout: toy_holdout(config.eval_images, config.resolution, config.seed),
        }),
        DatasetSpec::Dir { path } => {
            let images = load_dir(Path::new(path), config.resolution)?;
            if images.len() <= config.eval_images {
                bail!(latentfill_core::Error::RejectedInput(format!(
                    "directory dataset has {} images; need more than eval_images = {}",
                    images.len(),
                    config.eval_images
                )));
            }
            let split = images.len() - config.eval_images;
            let mut train = images;
            let holdout = train.split_off(split);
            Ok(SplitDataset { train, holdout })
        }
    }
}

fn load_dir(dir: &Path, resolution: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(latentfill_core::Error::RejectedInput(format!(
            "no .png files in {}",
            dir.display()
        )));
    }
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        let img = crate::imagefile::load_image(&p)?;
        if img.side() != resolution {
            bail!(latentfill_core::Error::RejectedInput(format!(
                "{}: side {} does not match the configured resolution {}",
                p.display(),
                img.side(),
                resolution
            )));
        }
        images.push(img);
    }
    Ok(images)
}
