//! Evaluation report rendering: a human-readable table plus a JSON summary.

use std::path::Path;

use anyhow::{Context, Result};
use latentfill_core::metrics::EvalReport;
use latentfill_core::pipeline::AblationRow;

/// Text table mirroring the per-level SSIM / FID / LPIPS / PSNR layout.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>6} {:>8} {:>10} {:>8} {:>8}\n",
        "level", "n", "SSIM", "FID", "LPIPS", "PSNR"
    ));
    for l in &report.levels {
        let fid = l
            .fid
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<10} {:>6} {:>8.4} {:>10} {:>8.4} {:>8.2}\n",
            l.level.name(),
            l.n_images,
            l.ssim,
            fid,
            l.lpips,
            l.psnr
        ));
    }
    if !report.failures.is_empty() {
        out.push_str(&format!("failed items: {}\n", report.failures.len()));
    }
    if report.unclassified > 0 {
        out.push_str(&format!("unclassified masks: {}\n", report.unclassified));
    }
    out.push_str(&format!("config: {}\n", report.config_fingerprint));
    out
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), render_table(report))
        .with_context(|| format!("writing report to {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

/// Ablation comparison table: one line per cell.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>5} {:>5} {:>4} {:>8} {:>10} {:>8} {:>8}\n",
        "cell", "fw+", "sml", "pm", "SSIM", "FID", "LPIPS", "PSNR"
    ));
    let onoff = |b: bool| if b { "on" } else { "off" };
    for row in rows {
        let cell = &row.cell;
        match &row.report {
            Some(report) => {
                // one line per level present; typically a single level
                for l in &report.levels {
                    let fid = l
                        .fid
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".to_string());
                    out.push_str(&format!(
                        "{:<14} {:>5} {:>5} {:>4} {:>8.4} {:>10} {:>8.4} {:>8.2}  [{}]\n",
                        cell.name,
                        onoff(cell.use_fw_plus),
                        onoff(cell.use_sml),
                        onoff(cell.use_premod),
                        l.ssim,
                        fid,
                        l.lpips,
                        l.psnr,
                        l.level.name(),
                    ));
                }
            }
            None => {
                out.push_str(&format!(
                    "{:<14} {:>5} {:>5} {:>4} {:>8} {:>10} {:>8} {:>8}\n",
                    cell.name,
                    onoff(cell.use_fw_plus),
                    onoff(cell.use_sml),
                    onoff(cell.use_premod),
                    "absent",
                    "-",
                    "-",
                    "-"
                ));
            }
        }
    }
    out
}

pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ablation.txt"), render_ablation(rows))?;
    #[derive(serde::Serialize)]
    struct JsonRow<'a> {
        name: &'a str,
        use_fw_plus: bool,
        use_sml: bool,
        use_premod: bool,
        report: Option<&'a EvalReport>,
    }
    let json_rows: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            name: &r.cell.name,
            use_fw_plus: r.cell.use_fw_plus,
            use_sml: r.cell.use_sml,
            use_premod: r.cell.use_premod,
            report: r.report.as_ref(),
        })
        .collect();
    std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&json_rows)?)?;
    Ok(())
}
