//! Delimited loss logs for both training stages.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use latentfill_core::pipeline::{GanStepLog, LossBreakdown};

/// Incremental CSV writer for encoder-stage loss rows.
pub struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<LossLog> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating loss log {}", path.display()))?;
        let mut file = std::io::BufWriter::new(file);
        writeln!(
            file,
            "step,L_total,L_valid,L_hole,L_perc,L_style,L_tv,L_msr,L_fid"
        )?;
        Ok(LossLog { file })
    }

    pub fn push(&mut self, row: &LossBreakdown) -> Result<()> {
        writeln!(
            self.file,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            row.step, row.total, row.valid, row.hole, row.perc, row.style, row.tv, row.msr, row.fid
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

/// Incremental CSV writer for pretraining rows.
pub struct GanLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl GanLog {
    pub fn create(path: &Path) -> Result<GanLog> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating loss log {}", path.display()))?;
        let mut file = std::io::BufWriter::new(file);
        writeln!(file, "step,L_d,L_g,r1")?;
        Ok(GanLog { file })
    }

    pub fn push(&mut self, row: &GanStepLog) -> Result<()> {
        match row.r1 {
            Some(r1) => writeln!(
                self.file,
                "{},{:.6e},{:.6e},{:.6e}",
                row.step, row.loss_d, row.loss_g, r1
            )?,
            None => writeln!(self.file, "{},{:.6e},{:.6e},", row.step, row.loss_d, row.loss_g)?,
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}
