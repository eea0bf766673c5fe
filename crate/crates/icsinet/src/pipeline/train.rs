//! Seeded training loop: sample batch, augment, forward (train mode), total
//! loss, backward, diffGrad step; periodic validation with best-checkpoint
//! selection.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::total_loss;
use crate::metrics::{iou, population_stat, tip_distance, Stat};
use crate::model::Model;
use crate::optim::{zero_grads, DiffGrad};
use crate::synthgen::Sample;
use crate::tensor::Graph;

use super::data::{batch_tensors, load_dataset, norm_to_pixel};
use super::{checkpoint, csv_row, write_atomic, PipelineError, RunConfig};

#[derive(Debug, Clone, Copy)]
pub struct ValMetrics {
    pub iou_oolemma: Stat,
    pub iou_pipette: Stat,
    pub tip_px: Stat,
}

impl ValMetrics {
    /// Higher is better; balances segmentation quality against tip error.
    pub fn score(&self, input_size: usize) -> f64 {
        self.iou_oolemma.mean + self.iou_pipette.mean - self.tip_px.mean / input_size as f64
    }
}

/// Eval-mode metrics over a sample set. Also returns per-sample
/// (iou_oolemma, iou_pipette, tip_px) triples in input order.
pub fn evaluate_samples(
    model: &mut Model<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(ValMetrics, Vec<(f64, f64, f64)>), PipelineError> {
    let s = model.cfg.input_size;
    let mut per_sample = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let graph = Graph::new();
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _, _) = batch_tensors(&graph, &refs);
        let (out, _) = model.forward(&graph, &x, false)?;
        let seg = out.seg.tensor().to_vec();
        let coords = out.coords.tensor().to_vec();
        for (bi, sample) in chunk.iter().enumerate() {
            let mut ious = [0.0f64; 2];
            for c in 0..2 {
                let off = (bi * 2 + c) * s * s;
                let pred: Vec<u8> = seg[off..off + s * s]
                    .iter()
                    .map(|&v| u8::from(v >= 0.5))
                    .collect();
                ious[c] = iou(&pred, &sample.masks[c * s * s..(c + 1) * s * s])?;
            }
            let px = (
                norm_to_pixel(coords[bi * 2] as f64, s),
                norm_to_pixel(coords[bi * 2 + 1] as f64, s),
            );
            per_sample.push((ious[0], ious[1], tip_distance(px, sample.tip)));
        }
    }
    let col = |k: usize| -> Vec<f64> {
        per_sample
            .iter()
            .map(|t| [t.0, t.1, t.2][k])
            .collect()
    };
    Ok((
        ValMetrics {
            iou_oolemma: population_stat(&col(0)),
            iou_pipette: population_stat(&col(1)),
            tip_px: population_stat(&col(2)),
        },
        per_sample,
    ))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub best_step: u64,
    pub best: Option<ValMetrics>,
    pub best_ckpt: PathBuf,
    pub last_ckpt: PathBuf,
    pub metrics_csv: PathBuf,
    pub val_csv: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let train_dir = cfg.data.train_dir.as_ref().ok_or_else(|| {
        PipelineError::Config("data.train_dir is required for training".into())
    })?;
    let val_dir = cfg
        .data
        .val_dir
        .as_ref()
        .ok_or_else(|| PipelineError::Config("data.val_dir is required for training".into()))?;
    let s = cfg.model.input_size;
    let train_samples = load_dataset(train_dir, s)?;
    let val_samples = load_dataset(val_dir, s)?;
    if train_samples.is_empty() {
        return Err(PipelineError::Config(format!(
            "no samples found in {}",
            train_dir.display()
        )));
    }

    let mut model: Model<f32> = Model::build(cfg.model.clone())?;
    let mut opt = DiffGrad::new(cfg.optim.clone(), &model.params);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let batch = cfg.train.batch_size;
    let steps_per_epoch = (train_samples.len() as f64 / batch as f64).max(1.0);

    let mut metrics_csv = csv_row(&["step", "epoch", "total", "dice", "euclidean", "js"]
        .map(String::from));
    let mut val_csv = csv_row(
        &["step", "iou_oolemma", "iou_pipette", "tip_px", "score"].map(String::from),
    );

    let best_ckpt = out_dir.join("best.ckpt");
    let last_ckpt = out_dir.join("last.ckpt");
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Option<ValMetrics> = None;
    let mut best_step = 0u64;
    let mut steps_run = 0u64;

    if cfg.train.max_steps == 0 {
        checkpoint::save_checkpoint(&best_ckpt, &model, Some(&opt), cfg, 0)?;
    }

    'train: for step in 1..=cfg.train.max_steps {
        // per-step derived rng stream keeps augmentation independent of the
        // batch-sampling draws
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x9E37_79B9);
        aug_rng.set_stream(step);
        let mut ids = Vec::with_capacity(batch);
        let chosen: Vec<Sample> = (0..batch)
            .map(|_| {
                let idx = batch_rng.gen_range(0..train_samples.len());
                let sample = crate::imgproc::augment(&train_samples[idx], &cfg.augment, &mut aug_rng);
                ids.push(sample.id.clone());
                sample
            })
            .collect();

        let graph = Graph::new();
        let refs: Vec<&Sample> = chosen.iter().collect();
        let (x, masks, tips) = batch_tensors(&graph, &refs);
        let (out, leaves) = model.forward(&graph, &x, true)?;
        let parts = total_loss(
            out.seg.tensor(),
            &out.heatmap,
            &out.coords,
            &masks,
            &tips,
            &cfg.loss,
        )?;
        let (lt, ld, le, lj) = (
            parts.total.item(),
            parts.dice.item(),
            parts.euc.item(),
            parts.js.item(),
        );
        if !lt.is_finite() {
            return Err(PipelineError::NonFiniteLoss {
                step,
                batch_ids: ids,
            });
        }
        parts.total.backward()?;
        model.pull_grads(&leaves);
        opt.step(&mut model.params)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        zero_grads(&mut model.params);
        steps_run = step;

        metrics_csv.push_str(&csv_row(&[
            step.to_string(),
            format!("{:.3}", step as f64 / steps_per_epoch),
            format!("{lt:.6}"),
            format!("{ld:.6}"),
            format!("{le:.6}"),
            format!("{lj:.6}"),
        ]));

        if step % cfg.train.eval_every == 0 || step == cfg.train.max_steps {
            let (vm, _) = evaluate_samples(&mut model, &val_samples, batch)?;
            let score = vm.score(s);
            val_csv.push_str(&csv_row(&[
                step.to_string(),
                format!("{:.6}", vm.iou_oolemma.mean),
                format!("{:.6}", vm.iou_pipette.mean),
                format!("{:.4}", vm.tip_px.mean),
                format!("{score:.6}"),
            ]));
            if score > best_score {
                best_score = score;
                best = Some(vm);
                best_step = step;
                checkpoint::save_checkpoint(&best_ckpt, &model, Some(&opt), cfg, step)?;
            }
            let iou_target_met = cfg
                .train
                .target_iou
                .map_or(true, |t| vm.iou_oolemma.mean >= t && vm.iou_pipette.mean >= t);
            let tip_target_met = cfg.train.target_tip_px.map_or(true, |t| vm.tip_px.mean <= t);
            let targets_given = cfg.train.target_iou.is_some() || cfg.train.target_tip_px.is_some();
            if targets_given && iou_target_met && tip_target_met {
                break 'train;
            }
        }
    }

    checkpoint::save_checkpoint(&last_ckpt, &model, Some(&opt), cfg, steps_run)?;
    if best.is_none() {
        // no eval pass happened (max_steps = 0): best is the initial state
        checkpoint::save_checkpoint(&best_ckpt, &model, Some(&opt), cfg, steps_run)?;
    }
    let metrics_path = out_dir.join("metrics.csv");
    let val_path = out_dir.join("val.csv");
    write_atomic(&metrics_path, metrics_csv.as_bytes())?;
    write_atomic(&val_path, val_csv.as_bytes())?;
    Ok(TrainOutcome {
        steps_run,
        best_step,
        best,
        best_ckpt,
        last_ckpt,
        metrics_csv: metrics_path,
        val_csv: val_path,
    })
}
