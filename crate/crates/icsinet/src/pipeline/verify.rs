//! Finite-difference verification entry points used by the `gradcheck`
//! command and the acceptance suite: one check per differentiable op, plus an
//! end-to-end check of the total loss on a micro model. All in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{dice_loss, euclidean_loss, js_loss, total_loss, LossConfig};
use crate::model::{BnStats, Model, ModelConfig};
use crate::nn::{
    batchnorm2d, conv2d, dsnt, maxpool2x2, spatial_softmax, upsample_bilinear2x,
    TipCoords,
};
use crate::tensor::{concat_channels, grad_check, Graph, Tensor};

pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero (relu kink) and from each other (maxpool
/// ties), so central differences stay on one side of every kink.
fn kink_free(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * (0.05 + rng.gen_range(0.0..1.0)) + i as f64 * 1e-4
        })
        .collect()
}

/// One finite-difference check per differentiable op, random f64 inputs.
pub fn per_op_checks() -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let h = 1e-5;
    let mut out = Vec::new();
    let mut push = |name: &'static str, err: f64| out.push(OpCheck { name, max_rel_err: err });

    {
        let n = 24;
        let other = uniform(&mut rng, n, -1.0, 1.0);
        let x = uniform(&mut rng, n, -1.0, 1.0);
        push(
            "add",
            grad_check(
                move |t: &Tensor<f64>| {
                    let o = t.graph().tensor(&[24], other.clone(), false);
                    t.add(&o).unwrap().mul(t).unwrap().sum()
                },
                &x,
                &[n],
                h,
            ),
        );
    }
    {
        let n = 24;
        let x = uniform(&mut rng, n, 0.2, 2.0);
        push(
            "mul_div_exp_ln",
            grad_check(
                |t: &Tensor<f64>| {
                    let e = t.exp();
                    let l = t.ln();
                    e.mul(&l).unwrap().div(&t.add_scalar(3.0)).unwrap().sum()
                },
                &x,
                &[n],
                h,
            ),
        );
    }
    {
        let x = kink_free(&mut rng, 32);
        push(
            "relu",
            grad_check(|t: &Tensor<f64>| t.relu().mul(t).unwrap().sum(), &x, &[32], h),
        );
    }
    {
        // conv2d wrt input, fixed random weights
        let x = uniform(&mut rng, 2 * 2 * 6 * 6, -1.0, 1.0);
        let w = uniform(&mut rng, 3 * 2 * 3 * 3, -0.5, 0.5);
        let b = uniform(&mut rng, 3, -0.1, 0.1);
        push(
            "conv2d_input",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let wt = g.tensor(&[3, 2, 3, 3], w.clone(), false);
                    let bt = g.tensor(&[3], b.clone(), false);
                    conv2d(t, &wt, &bt).unwrap().mul(&conv2d(t, &wt, &bt).unwrap()).unwrap().sum()
                },
                &x,
                &[2, 2, 6, 6],
                h,
            ),
        );
    }
    {
        // conv2d wrt weights, fixed input
        let x = uniform(&mut rng, 1 * 2 * 5 * 5, -1.0, 1.0);
        let w = uniform(&mut rng, 2 * 2 * 3 * 3, -0.5, 0.5);
        push(
            "conv2d_weight",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let xt = g.tensor(&[1, 2, 5, 5], x.clone(), false);
                    let bt = g.zeros(&[2], false);
                    let y = conv2d(&xt, t, &bt).unwrap();
                    y.mul(&y).unwrap().sum()
                },
                &w,
                &[2, 2, 3, 3],
                h,
            ),
        );
    }
    {
        let x = uniform(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0);
        // distinct per-element weights: sum(y^2) alone is nearly invariant to x
        // once the batch statistics cancel, starving the finite differences
        let coef = uniform(&mut rng, 2 * 3 * 4 * 4, 0.2, 1.0);
        push(
            "batchnorm2d",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let gamma = g.tensor(&[3], vec![1.1, 0.9, 1.3], false);
                    let beta = g.tensor(&[3], vec![0.1, -0.2, 0.0], false);
                    let c = g.tensor(&[2, 3, 4, 4], coef.clone(), false);
                    let mut rm = vec![0.0; 3];
                    let mut rv = vec![1.0; 3];
                    let y = batchnorm2d(t, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5, true)
                        .unwrap();
                    let yc = y.mul(&c).unwrap();
                    yc.mul(&yc).unwrap().sum()
                },
                &x,
                &[2, 3, 4, 4],
                h,
            ),
        );
    }
    {
        let x = kink_free(&mut rng, 1 * 2 * 4 * 4);
        push(
            "maxpool2x2",
            grad_check(
                |t: &Tensor<f64>| {
                    let y = maxpool2x2(t).unwrap();
                    y.mul(&y).unwrap().sum()
                },
                &x,
                &[1, 2, 4, 4],
                h,
            ),
        );
    }
    {
        let x = uniform(&mut rng, 1 * 2 * 3 * 3, -1.0, 1.0);
        push(
            "upsample_bilinear2x",
            grad_check(
                |t: &Tensor<f64>| {
                    let y = upsample_bilinear2x(t).unwrap();
                    y.mul(&y).unwrap().sum()
                },
                &x,
                &[1, 2, 3, 3],
                h,
            ),
        );
    }
    {
        let other = uniform(&mut rng, 1 * 2 * 3 * 3, -1.0, 1.0);
        let x = uniform(&mut rng, 1 * 2 * 3 * 3, -1.0, 1.0);
        push(
            "concat_channels",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let o = g.tensor(&[1, 2, 3, 3], other.clone(), false);
                    let y = concat_channels(&g, &[t, &o, t]).unwrap();
                    y.mul(&y).unwrap().sum()
                },
                &x,
                &[1, 2, 3, 3],
                h,
            ),
        );
    }
    {
        let x = uniform(&mut rng, 2 * 1 * 4 * 4, -2.0, 2.0);
        push(
            "spatial_softmax",
            grad_check(
                |t: &Tensor<f64>| {
                    let z = spatial_softmax(t).unwrap();
                    let zt = z.tensor();
                    zt.mul(zt).unwrap().sum()
                },
                &x,
                &[2, 1, 4, 4],
                h,
            ),
        );
    }
    {
        let x = uniform(&mut rng, 1 * 1 * 4 * 4, -2.0, 2.0);
        push(
            "dsnt",
            grad_check(
                |t: &Tensor<f64>| {
                    let z = spatial_softmax(t).unwrap();
                    let c = dsnt(&z);
                    let ct = c.tensor();
                    ct.mul(ct).unwrap().sum()
                },
                &x,
                &[1, 1, 4, 4],
                h,
            ),
        );
    }
    {
        let target = uniform(&mut rng, 2 * 2 * 4 * 4, 0.0, 1.0)
            .into_iter()
            .map(|v| (v > 0.5) as u8 as f64)
            .collect::<Vec<_>>();
        let x = uniform(&mut rng, 2 * 2 * 4 * 4, 0.05, 0.95);
        push(
            "dice_loss",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let gt = g.tensor(&[2, 2, 4, 4], target.clone(), false);
                    dice_loss(t, &gt, 1.0).unwrap()
                },
                &x,
                &[2, 2, 4, 4],
                h,
            ),
        );
    }
    {
        let x = uniform(&mut rng, 3 * 2, -0.8, 0.8);
        push(
            "euclidean_loss",
            grad_check(
                |t: &Tensor<f64>| {
                    let g = t.graph();
                    let gt = g.tensor(&[3, 2], vec![0.1, -0.2, 0.4, 0.3, -0.5, 0.0], false);
                    euclidean_loss(&TipCoords(t.clone()), &TipCoords(gt)).unwrap()
                },
                &x,
                &[3, 2],
                h,
            ),
        );
    }
    {
        // js over softmax-normalized logits, target fixed
        let x = uniform(&mut rng, 1 * 1 * 4 * 4, -1.5, 1.5);
        let q_logits = uniform(&mut rng, 1 * 1 * 4 * 4, -1.5, 1.5);
        push(
            "js_loss",
            grad_check(
                move |t: &Tensor<f64>| {
                    let g = t.graph();
                    let p = spatial_softmax(t).unwrap();
                    let ql = g.tensor(&[1, 1, 4, 4], q_logits.clone(), false);
                    let q = spatial_softmax(&ql).unwrap();
                    js_loss(&p, &q).unwrap()
                },
                &x,
                &[1, 1, 4, 4],
                h,
            ),
        );
    }
    out
}

/// End-to-end gradient of the total loss on a depth-1 16x16 micro model
/// against central finite differences over a strided parameter subsample;
/// returns the worst relative error.
pub fn micro_end_to_end_max_rel_err(n_sample: usize, h: f64) -> f64 {
    let micro_cfg = ModelConfig {
        input_size: 16,
        depth: 1,
        channels: vec![4, 8],
        seg_classes: 2,
        seed: 42,
    };
    let build_input = || -> (Vec<f64>, Vec<f64>, [(f64, f64); 1]) {
        let x: Vec<f64> = (0..256).map(|i| ((i * 31 % 97) as f64) / 96.0).collect();
        let masks: Vec<f64> = (0..512).map(|i| ((i * 7 % 5) < 2) as u8 as f64).collect();
        (x, masks, [(0.25, -0.3)])
    };

    let loss_value = |model: &mut Model<f64>| -> f64 {
        let g = Graph::new();
        let (xd, md, tip) = build_input();
        let x = g.tensor(&[1, 1, 16, 16], xd, false);
        let masks = g.tensor(&[1, 2, 16, 16], md, false);
        // bn running stats are mutated in train mode but do not feed the
        // train-mode loss; snapshot and restore to keep evaluations pure
        let saved: Vec<BnStats<f64>> = model.bn_stats.clone();
        let (out, _) = model.forward(&g, &x, true).unwrap();
        let parts = total_loss(
            out.seg.tensor(),
            &out.heatmap,
            &out.coords,
            &masks,
            &tip,
            &LossConfig::default(),
        )
        .unwrap();
        model.bn_stats = saved;
        parts.total.item()
    };

    let mut model: Model<f64> = Model::build(micro_cfg).unwrap();

    // analytic gradients
    let g = Graph::new();
    let (xd, md, tip) = build_input();
    let x = g.tensor(&[1, 1, 16, 16], xd, false);
    let masks = g.tensor(&[1, 2, 16, 16], md, false);
    let saved = model.bn_stats.clone();
    let (out, leaves) = model.forward(&g, &x, true).unwrap();
    let parts = total_loss(
        out.seg.tensor(),
        &out.heatmap,
        &out.coords,
        &masks,
        &tip,
        &LossConfig::default(),
    )
    .unwrap();
    parts.total.backward().unwrap();
    model.pull_grads(&leaves);
    model.bn_stats = saved;

    // deterministic subsample spread across all parameters
    let total: usize = model.param_count();
    let stride = (total / n_sample).max(1);
    let mut worst: f64 = 0.0;
    let mut flat_idx = 0;
    for pi in 0..model.params.len() {
        for ei in 0..model.params[pi].numel() {
            if flat_idx % stride == 0 {
                let analytic = model.params[pi].grad[ei];
                let orig = model.params[pi].data[ei];
                model.params[pi].data[ei] = orig + h;
                let fp = loss_value(&mut model);
                model.params[pi].data[ei] = orig - h;
                let fm = loss_value(&mut model);
                model.params[pi].data[ei] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
            flat_idx += 1;
        }
    }
    worst
}
