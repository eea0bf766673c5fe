//! Eval-mode inference over a labeled dataset: per-class IoU, tip pixel
//! error, error histogram, per-frame CSV, and mean per-frame latency.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::metrics::{error_histogram, iou, population_stat, tip_distance, Stat};
use crate::model::Model;
use crate::synthgen::Sample;
use crate::tensor::Graph;

use super::data::{batch_tensors, load_dataset, norm_to_pixel};
use super::{checkpoint, csv_row, io_err, write_atomic, PipelineError};

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n: usize,
    pub skipped: usize,
    pub iou_oolemma: Stat,
    pub iou_pipette: Stat,
    pub tip_px: Stat,
    pub latency_ms_mean: f64,
    pub report_txt: PathBuf,
    pub per_frame_csv: PathBuf,
    pub histogram_csv: PathBuf,
}

/// Frames (PNGs) lacking an annotation JSON next to them.
fn count_missing_annotations(dir: &Path) -> Result<(usize, Vec<String>), PipelineError> {
    let mut missing = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if !dir.join(format!("{stem}.json")).exists() {
                    missing.push(stem.to_string());
                }
            }
        }
    }
    missing.sort();
    Ok((missing.len(), missing))
}

pub fn run_eval(
    model: &mut Model<f32>,
    samples: &[Sample],
) -> Result<(Vec<(f64, f64, f64)>, f64), PipelineError> {
    let s = model.cfg.input_size;
    let mut per_frame = Vec::with_capacity(samples.len());
    let mut total_ms = 0.0;
    for sample in samples {
        let graph = Graph::new();
        let (x, _, _) = batch_tensors(&graph, &[sample]);
        let t0 = Instant::now();
        let (out, _) = model.forward(&graph, &x, false)?;
        let seg = out.seg.tensor().to_vec();
        let coords = out.coords.tensor().to_vec();
        total_ms += t0.elapsed().as_secs_f64() * 1e3;
        let mut ious = [0.0f64; 2];
        for c in 0..2 {
            let pred: Vec<u8> = seg[c * s * s..(c + 1) * s * s]
                .iter()
                .map(|&v| u8::from(v >= 0.5))
                .collect();
            ious[c] = iou(&pred, &sample.masks[c * s * s..(c + 1) * s * s])?;
        }
        let px = (
            norm_to_pixel(coords[0] as f64, s),
            norm_to_pixel(coords[1] as f64, s),
        );
        per_frame.push((ious[0], ious[1], tip_distance(px, sample.tip)));
    }
    let latency = if samples.is_empty() {
        0.0
    } else {
        total_ms / samples.len() as f64
    };
    Ok((per_frame, latency))
}

pub fn cmd_eval(
    ckpt_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    let ckpt = checkpoint::load_checkpoint(ckpt_path)?;
    let mut model = checkpoint::model_from_checkpoint(&ckpt)?;
    let s = model.cfg.input_size;
    let samples = load_dataset(data_dir, s)?;
    let (skipped, missing) = count_missing_annotations(data_dir)?;
    if samples.is_empty() {
        return Err(PipelineError::Config(format!(
            "no annotated samples in {}",
            data_dir.display()
        )));
    }
    let (per_frame, latency_ms) = run_eval(&mut model, &samples)?;

    let col = |k: usize| -> Vec<f64> {
        per_frame.iter().map(|t| [t.0, t.1, t.2][k]).collect()
    };
    let (io_oo, io_pi, tip) = (
        population_stat(&col(0)),
        population_stat(&col(1)),
        population_stat(&col(2)),
    );

    let mut txt = String::new();
    writeln!(txt, "Evaluation report").unwrap();
    writeln!(txt, "=================").unwrap();
    writeln!(txt, "frames evaluated: {}", samples.len()).unwrap();
    if skipped > 0 {
        writeln!(
            txt,
            "warning: {skipped} frame(s) skipped, no annotation: {missing:?}"
        )
        .unwrap();
    }
    writeln!(txt, "checkpoint step:  {}", ckpt.meta.step).unwrap();
    writeln!(txt, "input size:       {s}").unwrap();
    writeln!(txt).unwrap();
    writeln!(txt, "IoU (mean [stddev], population)").unwrap();
    writeln!(txt, "  oolemma: {:.3} [{:.3}]", io_oo.mean, io_oo.std).unwrap();
    writeln!(txt, "  pipette: {:.3} [{:.3}]", io_pi.mean, io_pi.std).unwrap();
    writeln!(
        txt,
        "needle tip error: {:.3} px [{:.3}] at {s}-pixel scale",
        tip.mean, tip.std
    )
    .unwrap();
    writeln!(txt, "mean latency: {latency_ms:.1} ms per frame").unwrap();

    let mut per_csv = csv_row(&["id", "iou_oolemma", "iou_pipette", "tip_px"].map(String::from));
    for (sample, row) in samples.iter().zip(&per_frame) {
        per_csv.push_str(&csv_row(&[
            sample.id.clone(),
            format!("{:.6}", row.0),
            format!("{:.6}", row.1),
            format!("{:.4}", row.2),
        ]));
    }

    let mut hist_csv = csv_row(&["bin_lo", "bin_hi", "count"].map(String::from));
    for (lo, hi, count) in error_histogram(&col(2), 1.0) {
        hist_csv.push_str(&csv_row(&[
            format!("{lo}"),
            format!("{hi}"),
            count.to_string(),
        ]));
    }

    let report_txt = out_dir.join("report.txt");
    let per_frame_csv = out_dir.join("per_frame.csv");
    let histogram_csv = out_dir.join("histogram.csv");
    write_atomic(&report_txt, txt.as_bytes())?;
    write_atomic(&per_frame_csv, per_csv.as_bytes())?;
    write_atomic(&histogram_csv, hist_csv.as_bytes())?;
    Ok(EvalReport {
        n: samples.len(),
        skipped,
        iou_oolemma: io_oo,
        iou_pipette: io_pi,
        tip_px: tip,
        latency_ms_mean: latency_ms,
        report_txt,
        per_frame_csv,
        histogram_csv,
    })
}
