//! Neural building blocks: same-padded convolutions, batch normalization,
//! 2x2 max pooling, bilinear 2x upsampling, spatial softmax and the
//! differentiable spatial-to-numerical transform (DSNT).
//!
//! All 4-D tensors are NCHW. Ops parallelize over disjoint output rows with a
//! fixed per-row summation order, so results are deterministic regardless of
//! thread count.

use std::rc::Rc;

use rayon::prelude::*;

use crate::scalar::{sc, Scalar};
use crate::tensor::{Graph, Tensor, TensorError};

/// Normalized heatmap over the bottleneck grid: shape `[N, H, W]`, each map
/// sums to 1 with entries in `[0, 1]`.
pub struct Heatmap<T: Scalar>(pub Tensor<T>);

/// Normalized tip coordinates: shape `[N, 2]`, `(x, y)` in `[-1, 1]`,
/// x along columns and y along rows.
pub struct TipCoords<T: Scalar>(pub Tensor<T>);

impl<T: Scalar> Heatmap<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

impl<T: Scalar> TipCoords<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    /// Map normalized coordinates onto the pixel grid of a `size`-wide image:
    /// `pixel = (c * size + size - 1) / 2` (inverse of the DSNT grid).
    pub fn to_pixels(&self, size: usize) -> Vec<(T, T)> {
        let s = sc::<T>(size as f64);
        let half = sc::<T>(0.5);
        let data = self.0.data();
        (0..self.0.shape()[0])
            .map(|n| {
                let x = (data[2 * n] * s + s - T::one()) * half;
                let y = (data[2 * n + 1] * s + s - T::one()) * half;
                (x, y)
            })
            .collect()
    }
}

/// DSNT grid value for index `i` on an axis of length `len`:
/// `(2i + 1 - len) / len`, the (-1, 1)-interior grid.
pub fn dsnt_grid<T: Scalar>(i: usize, len: usize) -> T {
    sc::<T>((2 * i + 1) as f64 - len as f64) / sc::<T>(len as f64)
}

// ---------------------------------------------------------------------------
// matmul kernels (deterministic: rayon splits disjoint output rows only)

fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.fill(T::zero());
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
}

/// C[m,q] = sum_p A[m,p] * B[q,p]
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, p: usize, q: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * p);
    out.par_chunks_mut(q).enumerate().for_each(|(i, row)| {
        let arow = &a[i * p..(i + 1) * p];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * p..(j + 1) * p];
            // eight independent accumulators so the reduction vectorizes
            let mut acc = [T::zero(); 8];
            let chunks = p / 8;
            for c in 0..chunks {
                let x = &arow[c * 8..c * 8 + 8];
                let y = &brow[c * 8..c * 8 + 8];
                for l in 0..8 {
                    acc[l] += x[l] * y[l];
                }
            }
            let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6]))
                + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
            for l in chunks * 8..p {
                s += arow[l] * brow[l];
            }
            *o = s;
        }
    });
}

/// C[m,n] = sum_p A[p,m] * B[p,n]
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], p: usize, m: usize, n: usize, out: &mut [T]) {
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.fill(T::zero());
        for pp in 0..p {
            let av = a[pp * m + i];
            if av == T::zero() {
                continue;
            }
            let brow = &b[pp * n..(pp + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d

fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k - 1) / 2;
    let hw = h * w;
    debug_assert_eq!(cols.len(), cin * k * k * hw);
    cols.par_chunks_mut(hw).enumerate().for_each(|(row, dst)| {
        let c = row / (k * k);
        let dy = (row / k) % k;
        let dx = row % k;
        let src = &x[c * hw..(c + 1) * hw];
        // valid ox range for this tap: ix = ox + dx - pad in [0, w)
        let ox0 = pad.saturating_sub(dx);
        let ox1 = (w + pad - dx).min(w);
        for oy in 0..h {
            let iy = oy as isize + dy as isize - pad as isize;
            let base = oy * w;
            if iy < 0 || iy >= h as isize {
                dst[base..base + w].fill(T::zero());
                continue;
            }
            let irow = &src[iy as usize * w..(iy as usize + 1) * w];
            dst[base..base + ox0].fill(T::zero());
            dst[base + ox0..base + ox1]
                .copy_from_slice(&irow[ox0 + dx - pad..ox1 + dx - pad]);
            dst[base + ox1..base + w].fill(T::zero());
        }
    });
}

fn col2im_add<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k - 1) / 2;
    let hw = h * w;
    // Sequential over rows of cols: each (c,dy,dx) plane scatters into dx.
    for row in 0..cin * k * k {
        let c = row / (k * k);
        let dy = (row / k) % k;
        let dxo = row % k;
        let src = &cols[row * hw..(row + 1) * hw];
        let dst = &mut dx[c * hw..(c + 1) * hw];
        let ox0 = pad.saturating_sub(dxo);
        let ox1 = (w + pad - dxo).min(w);
        for oy in 0..h {
            let iy = oy as isize + dy as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let base = oy * w;
            let dbase = iy as usize * w + (ox0 + dxo - pad);
            let s = &src[base + ox0..base + ox1];
            let d = &mut dst[dbase..dbase + (ox1 - ox0)];
            for (o, &v) in d.iter_mut().zip(s) {
                *o += v;
            }
        }
    }
}

/// Same-padded cross-correlation plus bias. `weight` is `[Cout, Cin, k, k]`
/// with k in {1, 3}; output spatial size equals input spatial size.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    assert!(k == 1 || k == 3, "conv2d supports kernels 1 and 3");
    assert_eq!(ws[3], k);
    let hw = h * w;
    let kk = cin * k * k;

    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![T::zero(); n * cout * hw];
    let mut cols = vec![T::zero(); kk * hw];
    for ni in 0..n {
        im2col(&xd[ni * cin * hw..(ni + 1) * cin * hw], cin, h, w, k, &mut cols);
        matmul(&wd, &cols, cout, kk, hw, &mut out[ni * cout * hw..(ni + 1) * cout * hw]);
        for c in 0..cout {
            let b = bd[c];
            for v in &mut out[(ni * cout + c) * hw..(ni * cout + c + 1) * hw] {
                *v += b;
            }
        }
    }

    let (xb, wb) = (Rc::clone(&xd), Rc::clone(&wd));
    Ok(x.graph().record(
        vec![n, cout, h, w],
        out,
        &[x, weight, bias],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * cin * hw];
            let mut dw = vec![T::zero(); cout * kk];
            let mut db = vec![T::zero(); cout];
            let mut cols = vec![T::zero(); kk * hw];
            let mut dcols = vec![T::zero(); kk * hw];
            let mut dw_n = vec![T::zero(); cout * kk];
            for ni in 0..n {
                let gn = &g[ni * cout * hw..(ni + 1) * cout * hw];
                // im2col is recomputed rather than retained across the graph.
                im2col(&xb[ni * cin * hw..(ni + 1) * cin * hw], cin, h, w, k, &mut cols);
                matmul_nt(gn, &cols, cout, hw, kk, &mut dw_n);
                for (a, b) in dw.iter_mut().zip(&dw_n) {
                    *a += *b;
                }
                matmul_tn(&wb, gn, cout, kk, hw, &mut dcols);
                col2im_add(&dcols, cin, h, w, k, &mut dx[ni * cin * hw..(ni + 1) * cin * hw]);
                for c in 0..cout {
                    let mut acc = T::zero();
                    for &v in &gn[c * hw..(c + 1) * hw] {
                        acc += v;
                    }
                    db[c] += acc;
                }
            }
            vec![dx, dw, db]
        }),
    ))
}

// ---------------------------------------------------------------------------
// batch normalization

/// Per-channel batch normalization. Train mode normalizes by batch statistics
/// (biased variance) and updates the running buffers in place with
/// `running = (1 - momentum) * running + momentum * batch`; eval mode uses
/// the running buffers only.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut [T],
    running_var: &mut [T],
    momentum: T,
    eps: T,
    train: bool,
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 || gamma.numel() != xs[1] || beta.numel() != xs[1] {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm2d",
            lhs: xs,
            rhs: gamma.shape().to_vec(),
        });
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let m = n * h * w;
    if train && m < 2 {
        return Err(TensorError::InvalidShape {
            op: "batchnorm2d",
            shape: xs,
            reason: "train mode needs at least 2 elements per channel (variance undefined)"
                .into(),
        });
    }
    let hw = h * w;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_m = T::one() / sc::<T>(m as f64);

    let (mean, var): (Vec<T>, Vec<T>) = if train {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                for &v in &xd[(ni * c + ch) * hw..(ni * c + ch + 1) * hw] {
                    s += v;
                }
            }
            let mu = s * inv_m;
            let mut s2 = T::zero();
            for ni in 0..n {
                for &v in &xd[(ni * c + ch) * hw..(ni * c + ch + 1) * hw] {
                    let d = v - mu;
                    s2 += d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = s2 * inv_m;
        }
        for ch in 0..c {
            running_mean[ch] = (T::one() - momentum) * running_mean[ch] + momentum * mean[ch];
            running_var[ch] = (T::one() - momentum) * running_var[ch] + momentum * var[ch];
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * hw;
            for i in 0..hw {
                let xh = (xd[base + i] - mean[ch]) * inv_std[ch];
                xhat[base + i] = xh;
                out[base + i] = gd[ch] * xh + bd[ch];
            }
        }
    }

    let xhat = Rc::new(xhat);
    let gammab = Rc::clone(&gd);
    let inv_stdb = inv_std.clone();
    Ok(x.graph().record(
        xs,
        out,
        &[x, gamma, beta],
        Box::new(move |g| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for ni in 0..n {
                for ch in 0..c {
                    let base = (ni * c + ch) * hw;
                    for i in 0..hw {
                        let gv = g[base + i];
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * xhat[base + i];
                    }
                }
            }
            for ch in 0..c {
                dgamma[ch] = sum_gx[ch];
                dbeta[ch] = sum_g[ch];
            }
            let mut dx = vec![T::zero(); g.len()];
            for ni in 0..n {
                for ch in 0..c {
                    let base = (ni * c + ch) * hw;
                    let scale = gammab[ch] * inv_stdb[ch];
                    if train {
                        let mg = sum_g[ch] * inv_m;
                        let mgx = sum_gx[ch] * inv_m;
                        for i in 0..hw {
                            dx[base + i] =
                                scale * (g[base + i] - mg - xhat[base + i] * mgx);
                        }
                    } else {
                        for i in 0..hw {
                            dx[base + i] = scale * g[base + i];
                        }
                    }
                }
            }
            vec![dx, dgamma, dbeta]
        }),
    ))
}

// ---------------------------------------------------------------------------
// pooling / upsampling

/// Max over disjoint 2x2 windows; gradient routes to the argmax, first
/// occurrence in row-major window order on ties.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
        return Err(TensorError::InvalidShape {
            op: "maxpool2x2",
            shape: xs,
            reason: "needs rank 4 with even H and W".into(),
        });
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    for nc in 0..n * c {
        let src = &xd[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut bidx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > best {
                            best = src[idx];
                            bidx = idx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out[o] = best;
                arg[o] = nc * h * w + bidx;
            }
        }
    }
    let in_len = xd.len();
    Ok(x.graph().record(
        vec![n, c, oh, ow],
        out,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); in_len];
            for (i, &gv) in g.iter().enumerate() {
                dx[arg[i]] += gv;
            }
            vec![dx]
        }),
    ))
}

fn bilinear_axis(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    // Output index -> (i0, i1, weight of i1), half-pixel centers, edge clamp.
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / (out_len as f64 / in_len as f64) - 0.5;
            let src = src.clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling with half-pixel centers and edge clamp.
pub fn upsample_bilinear2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 {
        return Err(TensorError::InvalidShape {
            op: "upsample_bilinear2x",
            shape: xs,
            reason: "needs rank 4".into(),
        });
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let ytab = bilinear_axis(oh, h);
    let xtab = bilinear_axis(ow, w);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for nc in 0..n * c {
        let src = &xd[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                let (wy, wx) = (sc::<T>(wy), sc::<T>(wx));
                let top = src[y0 * w + x0] * (T::one() - wx) + src[y0 * w + x1] * wx;
                let bot = src[y1 * w + x0] * (T::one() - wx) + src[y1 * w + x1] * wx;
                dst[oy * ow + ox] = top * (T::one() - wy) + bot * wy;
            }
        }
    }
    let (ytab_b, xtab_b) = (ytab, xtab);
    Ok(x.graph().record(
        vec![n, c, oh, ow],
        out,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for nc in 0..n * c {
                let gsrc = &g[nc * oh * ow..(nc + 1) * oh * ow];
                let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                for (oy, &(y0, y1, wy)) in ytab_b.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in xtab_b.iter().enumerate() {
                        let gv = gsrc[oy * ow + ox];
                        let (wy, wx) = (sc::<T>(wy), sc::<T>(wx));
                        dst[y0 * w + x0] += gv * (T::one() - wy) * (T::one() - wx);
                        dst[y0 * w + x1] += gv * (T::one() - wy) * wx;
                        dst[y1 * w + x0] += gv * wy * (T::one() - wx);
                        dst[y1 * w + x1] += gv * wy * wx;
                    }
                }
            }
            vec![dx]
        }),
    ))
}

// ---------------------------------------------------------------------------
// spatial softmax + DSNT

/// Softmax over all spatial positions of a single-channel map, with
/// max-subtraction for stability. Input `[N, 1, H, W]`, output `[N, H, W]`.
pub fn spatial_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Heatmap<T>, TensorError> {
    let xs = logits.shape().to_vec();
    if xs.len() != 4 || xs[1] != 1 {
        return Err(TensorError::InvalidShape {
            op: "spatial_softmax",
            shape: xs,
            reason: "needs [N, 1, H, W]".into(),
        });
    }
    let (n, h, w) = (xs[0], xs[2], xs[3]);
    let hw = h * w;
    let xd = logits.data();
    let mut out = vec![T::zero(); n * hw];
    for ni in 0..n {
        let src = &xd[ni * hw..(ni + 1) * hw];
        let dst = &mut out[ni * hw..(ni + 1) * hw];
        let mx = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = (v - mx).exp();
            *d = e;
            total += e;
        }
        let inv = T::one() / total;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    let outb = Rc::new(out.clone());
    let t = logits.graph().record(
        vec![n, h, w],
        out,
        &[logits],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * hw];
            for ni in 0..n {
                let z = &outb[ni * hw..(ni + 1) * hw];
                let gn = &g[ni * hw..(ni + 1) * hw];
                let mut dot = T::zero();
                for (&gv, &zv) in gn.iter().zip(z) {
                    dot += gv * zv;
                }
                let dst = &mut dx[ni * hw..(ni + 1) * hw];
                for ((d, &gv), &zv) in dst.iter_mut().zip(gn).zip(z) {
                    *d = zv * (gv - dot);
                }
            }
            vec![dx]
        }),
    );
    Ok(Heatmap(t))
}

/// Differentiable spatial-to-numerical transform: expected coordinate of a
/// normalized heatmap over the `(2i + 1 - len) / len` grid. Output `[N, 2]`
/// as `(x, y)`.
pub fn dsnt<T: Scalar>(z: &Heatmap<T>) -> TipCoords<T> {
    let zs = z.0.shape().to_vec();
    assert_eq!(zs.len(), 3, "dsnt expects [N, H, W]");
    let (n, h, w) = (zs[0], zs[1], zs[2]);
    let xs_grid: Vec<T> = (0..w).map(|j| dsnt_grid(j, w)).collect();
    let ys_grid: Vec<T> = (0..h).map(|i| dsnt_grid(i, h)).collect();
    let zd = z.0.data();
    let mut out = vec![T::zero(); n * 2];
    for ni in 0..n {
        let map = &zd[ni * h * w..(ni + 1) * h * w];
        let mut ex = T::zero();
        let mut ey = T::zero();
        for i in 0..h {
            let row = &map[i * w..(i + 1) * w];
            let mut rs = T::zero();
            for (j, &v) in row.iter().enumerate() {
                ex += v * xs_grid[j];
                rs += v;
            }
            ey += rs * ys_grid[i];
        }
        out[2 * ni] = ex;
        out[2 * ni + 1] = ey;
    }
    let t = z.0.graph().record(
        vec![n, 2],
        out,
        &[&z.0],
        Box::new(move |g| {
            let mut dz = vec![T::zero(); n * h * w];
            for ni in 0..n {
                let (gx, gy) = (g[2 * ni], g[2 * ni + 1]);
                let dst = &mut dz[ni * h * w..(ni + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = gx * xs_grid[j] + gy * ys_grid[i];
                    }
                }
            }
            vec![dz]
        }),
    );
    TipCoords(t)
}

/// Isotropic Gaussian (in heatmap pixel units) centered at each tip's
/// grid-space position, evaluated at pixel centers and normalized to sum 1.
/// Output is a constant (no-grad) heatmap `[N, H, W]`.
pub fn render_gaussian_target<T: Scalar>(
    graph: &Graph<T>,
    tips: &[(T, T)],
    h: usize,
    w: usize,
    sigma: T,
) -> Heatmap<T> {
    assert!(sigma > T::zero(), "sigma must be positive");
    let n = tips.len();
    let mut out = vec![T::zero(); n * h * w];
    let half = sc::<T>(0.5);
    let inv_two_sig2 = T::one() / (sc::<T>(2.0) * sigma * sigma);
    for (ni, &(tx, ty)) in tips.iter().enumerate() {
        // Grid-space center: inverse of the DSNT grid formula.
        let cx = (tx * sc::<T>(w as f64) + sc::<T>(w as f64) - T::one()) * half;
        let cy = (ty * sc::<T>(h as f64) + sc::<T>(h as f64) - T::one()) * half;
        let map = &mut out[ni * h * w..(ni + 1) * h * w];
        let mut total = T::zero();
        for i in 0..h {
            let dy = sc::<T>(i as f64) - cy;
            for j in 0..w {
                let dx = sc::<T>(j as f64) - cx;
                let v = (-(dx * dx + dy * dy) * inv_two_sig2).exp();
                map[i * w + j] = v;
                total += v;
            }
        }
        let inv = T::one() / total;
        for v in map.iter_mut() {
            *v *= inv;
        }
    }
    Heatmap(graph.tensor(&[n, h, w], out, false))
}
