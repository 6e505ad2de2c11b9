//! Mask manifests: newline-delimited `path,coverage,kind,seed` records for
//! reproducible test sets.

use std::path::Path;

use anyhow::{bail, Context, Result};
use latentfill_core::imaging::MaskKind;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub coverage: f64,
    pub kind: MaskKind,
    pub seed: u64,
}

pub fn write(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut text = String::from("path,coverage,kind,seed\n");
    for e in entries {
        text.push_str(&format!("{},{:.6},{},{}\n", e.path, e.coverage, e.kind, e.seed));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("path,") {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!(latentfill_core::Error::RejectedInput(format!(
                "manifest line {} has {} fields, expected 4",
                lineno + 1,
                fields.len()
            )));
        }
        out.push(ManifestEntry {
            path: fields[0].to_string(),
            coverage: fields[1]
                .parse()
                .with_context(|| format!("manifest line {}: bad coverage", lineno + 1))?,
            kind: MaskKind::parse(fields[2]).map_err(anyhow::Error::new)?,
            seed: fields[3]
                .parse()
                .with_context(|| format!("manifest line {}: bad seed", lineno + 1))?,
        });
    }
    Ok(out)
}
