//! The three-term training objective: Dice segmentation loss, Euclidean tip
//! loss on normalized coordinates, and a Jensen-Shannon divergence pulling
//! the heatmap toward a Gaussian around the true tip.

use serde::{Deserialize, Serialize};

use crate::nn::{render_gaussian_target, Heatmap, TipCoords};
use crate::scalar::{sc, Scalar};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the Euclidean tip loss.
    pub lambda1: f64,
    /// Weight of the Jensen-Shannon heatmap loss.
    pub lambda2: f64,
    /// Gaussian target stddev in heatmap pixels.
    pub sigma: f64,
    /// Dice smoothing constant (guards 0/0 on empty masks).
    pub dice_smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            sigma: 1.0,
            dice_smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err("lambda1 and lambda2 must be >= 0".into());
        }
        if self.sigma <= 0.0 {
            return Err("sigma must be > 0".into());
        }
        if self.dice_smooth <= 0.0 {
            return Err("dice_smooth must be > 0".into());
        }
        Ok(())
    }
}

/// Mean over batch and classes of `1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)`.
/// `pred` and `target` are `[N, C, H, W]`; `target` entries are binary.
pub fn dice_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    smooth: T,
) -> Result<Tensor<T>, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "dice_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let spatial_sum = |t: &Tensor<T>| -> Result<Tensor<T>, TensorError> {
        t.sum_axis(3)?.sum_axis(2) // [N, C]
    };
    let inter = spatial_sum(&pred.mul(target)?)?;
    let psum = spatial_sum(pred)?;
    let tsum = spatial_sum(target)?;
    let num = inter.scale(sc::<T>(2.0)).add_scalar(smooth);
    let den = psum.add(&tsum)?.add_scalar(smooth);
    let dice = num.div(&den)?;
    Ok(dice.neg().add_scalar(T::one()).mean())
}

/// Mean over batch of the Euclidean distance between normalized coordinate
/// pairs; gradient at zero distance is 0 (sqrt subgradient).
pub fn euclidean_loss<T: Scalar>(
    pred: &TipCoords<T>,
    target: &TipCoords<T>,
) -> Result<Tensor<T>, TensorError> {
    let d = pred.tensor().sub(target.tensor())?;
    let sq = d.mul(&d)?;
    Ok(sq.sum_axis(1)?.sqrt().mean())
}

/// Mean over batch of JS(P, Q) with natural log; ratios are clamped below
/// 1e-12 and 0*log(0) contributes 0 because the log term is multiplied by
/// the raw probability.
pub fn js_loss<T: Scalar>(
    z: &Heatmap<T>,
    target: &Heatmap<T>,
) -> Result<Tensor<T>, TensorError> {
    let p = z.tensor();
    let q = target.tensor();
    if p.shape() != q.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "js_loss",
            lhs: p.shape().to_vec(),
            rhs: q.shape().to_vec(),
        });
    }
    let shape = p.shape().to_vec();
    let (n, hw) = (shape[0], shape[1] * shape[2]);
    let p = p.reshape(&[n, hw])?;
    let q = q.reshape(&[n, hw])?;
    let m = p.add(&q)?.scale(sc::<T>(0.5));
    let floor = sc::<T>(1e-12);
    let ln_m = m.clamp_min(floor).ln();
    let kl_pm = p.mul(&p.clamp_min(floor).ln().sub(&ln_m)?)?.sum_axis(1)?;
    let kl_qm = q.mul(&q.clamp_min(floor).ln().sub(&ln_m)?)?.sum_axis(1)?;
    Ok(kl_pm.add(&kl_qm)?.scale(sc::<T>(0.5)).mean())
}

/// Per-component values of the total loss, kept as graph nodes so the total
/// stays differentiable and the components can be logged.
pub struct LossParts<T: Scalar> {
    pub total: Tensor<T>,
    pub dice: Tensor<T>,
    pub euc: Tensor<T>,
    pub js: Tensor<T>,
}

/// `dice + lambda1 * euclidean + lambda2 * js(heatmap, gaussian(gt_tip))`.
///
/// `gt_tip_norm` holds ground-truth tips in normalized [-1, 1] coordinates.
pub fn total_loss<T: Scalar>(
    seg: &Tensor<T>,
    heatmap: &Heatmap<T>,
    coords: &TipCoords<T>,
    gt_masks: &Tensor<T>,
    gt_tip_norm: &[(T, T)],
    cfg: &LossConfig,
) -> Result<LossParts<T>, TensorError> {
    let graph = seg.graph();
    let hm_shape = heatmap.tensor().shape().to_vec();
    let dice = dice_loss(seg, gt_masks, sc::<T>(cfg.dice_smooth))?;
    let gt_xy: Vec<T> = gt_tip_norm.iter().flat_map(|&(x, y)| [x, y]).collect();
    let gt_coords = TipCoords(graph.tensor(&[gt_tip_norm.len(), 2], gt_xy, false));
    let euc = euclidean_loss(coords, &gt_coords)?;
    let target = render_gaussian_target(graph, gt_tip_norm, hm_shape[1], hm_shape[2], sc::<T>(cfg.sigma));
    let js = js_loss(heatmap, &target)?;
    let total = dice
        .add(&euc.scale(sc::<T>(cfg.lambda1)))?
        .add(&js.scale(sc::<T>(cfg.lambda2)))?;
    Ok(LossParts {
        total,
        dice,
        euc,
        js,
    })
}
