//! Multi-head nested U-Net: an encoder down to a bottleneck, a densely
//! skip-connected decoder ending in a segmentation head, and a needle
//! localization branch (1x1 conv, spatial softmax, DSNT) off the bottleneck.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    batchnorm2d, conv2d, dsnt, maxpool2x2, spatial_softmax, upsample_bilinear2x, Heatmap,
    TipCoords,
};
use crate::param::Parameter;
use crate::scalar::{sc, Scalar};
use crate::tensor::{concat_channels, Graph, Tensor, TensorError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input image side in pixels.
    pub input_size: usize,
    /// Number of 2x2 poolings; bottleneck side = input_size / 2^depth.
    pub depth: usize,
    /// Channel widths per level, `depth + 1` entries; the last entry is the
    /// bottleneck width.
    pub channels: Vec<usize>,
    /// Segmentation classes (oolemma, pipette).
    pub seg_classes: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 512,
            depth: 3,
            channels: vec![32, 64, 128, 256],
            seg_classes: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 {
            return Err(ModelError::Config("depth must be >= 1".into()));
        }
        if self.input_size % (1 << self.depth) != 0 {
            return Err(ModelError::Config(format!(
                "input_size {} not divisible by 2^depth = {}",
                self.input_size,
                1 << self.depth
            )));
        }
        if self.channels.len() != self.depth + 1 {
            return Err(ModelError::Config(format!(
                "channels needs depth+1 = {} entries, got {}",
                self.depth + 1,
                self.channels.len()
            )));
        }
        if self.seg_classes == 0 {
            return Err(ModelError::Config("seg_classes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn heatmap_size(&self) -> usize {
        self.input_size >> self.depth
    }
}

/// Segmentation masks `[N, seg_classes, S, S]`, entries in [0, 1] via
/// per-channel sigmoid.
pub struct SegMasks<T: Scalar>(pub Tensor<T>);

impl<T: Scalar> SegMasks<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

pub struct ModelOutput<T: Scalar> {
    pub seg: SegMasks<T>,
    pub heatmap: Heatmap<T>,
    pub coords: TipCoords<T>,
}

#[derive(Debug, Clone, Copy)]
struct ConvRef {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnRef {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
pub struct BnStats<T: Scalar> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
struct EncLevel {
    conv1: ConvRef,
    conv2: ConvRef,
    bn: BnRef,
}

#[derive(Debug, Clone, Copy)]
struct DecNode {
    row: usize,
    col: usize,
    up1: ConvRef,
    up2: ConvRef,
    post1: ConvRef,
    post2: ConvRef,
    bn: BnRef,
}

pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: Vec<Parameter<T>>,
    pub bn_stats: Vec<BnStats<T>>,
    enc: Vec<EncLevel>,
    dec: Vec<DecNode>,
    seg_head: ConvRef,
    needle_head: ConvRef,
    bn_momentum: f64,
    bn_eps: f64,
}

struct Builder<T: Scalar> {
    params: Vec<Parameter<T>>,
    bn_stats: Vec<BnStats<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    /// He-uniform conv weights, zero bias.
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> ConvRef {
        let fan_in = cin * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<T> = (0..cout * cin * k * k)
            .map(|_| sc::<T>(dist.sample(&mut self.rng)))
            .collect();
        let wi = self.params.len();
        self.params
            .push(Parameter::new(format!("{name}.weight"), &[cout, cin, k, k], w));
        self.params.push(Parameter::new(
            format!("{name}.bias"),
            &[cout],
            vec![T::zero(); cout],
        ));
        ConvRef { w: wi, b: wi + 1 }
    }

    fn bn(&mut self, name: &str, ch: usize) -> BnRef {
        let gi = self.params.len();
        self.params.push(Parameter::new(
            format!("{name}.gamma"),
            &[ch],
            vec![T::one(); ch],
        ));
        self.params.push(Parameter::new(
            format!("{name}.beta"),
            &[ch],
            vec![T::zero(); ch],
        ));
        let si = self.bn_stats.len();
        self.bn_stats.push(BnStats {
            name: name.to_string(),
            mean: vec![T::zero(); ch],
            var: vec![T::one(); ch],
        });
        BnRef {
            gamma: gi,
            beta: gi + 1,
            stats: si,
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Build the network from `cfg` with deterministic He-uniform
    /// initialization (same seed, same bits).
    pub fn build(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            bn_stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let ch = &cfg.channels;
        let depth = cfg.depth;

        let mut enc = Vec::with_capacity(depth + 1);
        for i in 0..=depth {
            let cin = if i == 0 { 1 } else { ch[i - 1] };
            let name = format!("enc{i}");
            enc.push(EncLevel {
                conv1: b.conv(&format!("{name}.conv1"), ch[i], cin, 3),
                conv2: b.conv(&format!("{name}.conv2"), ch[i], ch[i], 3),
                bn: b.bn(&format!("{name}.bn"), ch[i]),
            });
        }

        // X(i, j) for 1 <= j <= depth - i, computed column by column so the
        // upsample source X(i+1, j-1) always exists.
        let mut dec = Vec::new();
        for j in 1..=depth {
            for i in 0..=depth - j {
                let name = format!("dec{i}_{j}");
                let cat_width = ch[i] * (j + 1);
                dec.push(DecNode {
                    row: i,
                    col: j,
                    up1: b.conv(&format!("{name}.up1"), ch[i], ch[i + 1], 3),
                    up2: b.conv(&format!("{name}.up2"), ch[i], ch[i], 3),
                    post1: b.conv(&format!("{name}.post1"), ch[i], cat_width, 3),
                    post2: b.conv(&format!("{name}.post2"), ch[i], ch[i], 3),
                    bn: b.bn(&format!("{name}.bn"), ch[i]),
                });
            }
        }

        let seg_head = b.conv("seg_head", cfg.seg_classes, ch[0], 3);
        let needle_head = b.conv("needle_head", 1, ch[depth], 1);

        Ok(Model {
            cfg,
            params: b.params,
            bn_stats: b.bn_stats,
            enc,
            dec,
            seg_head,
            needle_head,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    /// Total trainable scalar count (conv weights/biases, batchnorm
    /// gamma/beta); running statistics excluded.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Run the network. Returns the three outputs plus the parameter leaves
    /// bound into `graph` (pass them to [`Model::pull_grads`] after
    /// backward).
    pub fn forward(
        &mut self,
        graph: &Graph<T>,
        x: &Tensor<T>,
        train: bool,
    ) -> Result<(ModelOutput<T>, Vec<Tensor<T>>), ModelError> {
        let s = self.cfg.input_size;
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != s || xs[3] != s {
            return Err(ModelError::Tensor(TensorError::InvalidShape {
                op: "model_forward",
                shape: xs.to_vec(),
                reason: format!("expected [N, 1, {s}, {s}]"),
            }));
        }
        let leaves: Vec<Tensor<T>> = self.params.iter().map(|p| p.leaf(graph)).collect();
        let depth = self.cfg.depth;
        let momentum = sc::<T>(self.bn_momentum);
        let eps = sc::<T>(self.bn_eps);

        let conv = |l: &ConvRef, x: &Tensor<T>| conv2d(x, &leaves[l.w], &leaves[l.b]);
        let bn = |l: &BnRef, x: &Tensor<T>, stats: &mut [BnStats<T>]| {
            let st = &mut stats[l.stats];
            batchnorm2d(
                x,
                &leaves[l.gamma],
                &leaves[l.beta],
                &mut st.mean,
                &mut st.var,
                momentum,
                eps,
                train,
            )
        };

        // grid[i][j] = X(i, j); column 0 holds the encoder outputs.
        let mut grid: Vec<Vec<Option<Tensor<T>>>> =
            (0..=depth).map(|i| vec![None; depth - i + 1]).collect();

        let mut cur = x.clone();
        for (i, level) in self.enc.iter().enumerate() {
            let t = conv(&level.conv1, &cur)?.relu();
            let t = conv(&level.conv2, &t)?.relu();
            let t = bn(&level.bn, &t, &mut self.bn_stats)?;
            if i < depth {
                cur = maxpool2x2(&t)?;
            }
            grid[i][0] = Some(t);
        }
        debug_assert_eq!(
            grid[depth][0].as_ref().unwrap().shape(),
            &[xs[0], self.cfg.channels[depth], s >> depth, s >> depth]
        );

        for node in &self.dec {
            let (i, j) = (node.row, node.col);
            let below = grid[i + 1][j - 1]
                .as_ref()
                .expect("decoder source computed in column order");
            let up = upsample_bilinear2x(below)?;
            let t = conv(&node.up1, &up)?.relu();
            let t = conv(&node.up2, &t)?.relu();
            // skips X(i, 0..j) then the processed upsample
            let mut inputs: Vec<&Tensor<T>> = Vec::with_capacity(j + 1);
            for jj in 0..j {
                inputs.push(grid[i][jj].as_ref().unwrap());
            }
            inputs.push(&t);
            let cat = concat_channels(graph, &inputs)?;
            assert_eq!(
                cat.shape()[1],
                self.cfg.channels[i] * (j + 1),
                "decoder concat width mismatch at X({i},{j})"
            );
            let t = conv(&node.post1, &cat)?.relu();
            let t = conv(&node.post2, &t)?.relu();
            let t = bn(&node.bn, &t, &mut self.bn_stats)?;
            grid[i][j] = Some(t);
        }

        let top = grid[0][depth].as_ref().unwrap();
        let seg = SegMasks(conv(&self.seg_head, top)?.sigmoid());
        let bottleneck = grid[depth][0].as_ref().unwrap();
        let logits = conv(&self.needle_head, bottleneck)?;
        let heatmap = spatial_softmax(&logits)?;
        let coords = dsnt(&heatmap);

        Ok((
            ModelOutput {
                seg,
                heatmap,
                coords,
            },
            leaves,
        ))
    }

    /// Accumulate leaf gradients back into the parameters.
    pub fn pull_grads(&mut self, leaves: &[Tensor<T>]) {
        for (p, leaf) in self.params.iter_mut().zip(leaves) {
            p.pull_grad(leaf);
        }
    }
}
