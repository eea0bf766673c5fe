//! Frame selection, grayscale conversion, bilinear resize, CLAHE, and the
//! training-time augmentations. All operations are deterministic given their
//! inputs (and an rng for `augment`).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthgen::Sample;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("imgproc config error: {0}")]
    Config(String),
}

/// 8-bit image, row-major, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        assert_eq!(data.len(), width * height * channels);
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        Image::new(width, height, 1, data)
    }

    pub fn constant(width: usize, height: usize, v: u8) -> Self {
        Image::gray(width, height, vec![v; width * height])
    }
}

/// Indices 0, stride, 2*stride, ... below `frame_count`.
pub fn select_frames(frame_count: usize, stride: usize) -> Result<Vec<usize>, ImgError> {
    if stride < 1 {
        return Err(ImgError::Config("frame stride must be >= 1".into()));
    }
    Ok((0..frame_count).step_by(stride).collect())
}

/// Rec.601 luma; grayscale input passes through unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            (y + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::gray(img.width, img.height, data)
}

fn bilinear_at(data: &[u8], w: usize, h: usize, stride: usize, off: usize, fx: f64, fy: f64) -> f64 {
    // edge clamp
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let at = |x: usize, y: usize| data[(y * w + x) * stride + off] as f64;
    let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
    let bot = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Bilinear resize with half-pixel centers, edge clamp, round half up.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Image {
    assert!(out_w >= 1 && out_h >= 1);
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let c = img.channels;
    let mut data = vec![0u8; out_w * out_h * c];
    for oy in 0..out_h {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            for ch in 0..c {
                let v = bilinear_at(&img.data, img.width, img.height, c, ch, fx, fy);
                data[(oy * out_w + ox) * c + ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(out_w, out_h, c, data)
}

/// Per-tile clipped histogram equalization mapping, midpoint-CDF form. A tile
/// whose pixels all fall in one bin keeps its values unchanged (identity), so
/// constant regions stay constant.
fn tile_mapping(hist: &[u64], total: u64, clip_limit: f64, bins: usize) -> Vec<u8> {
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied <= 1 {
        return (0..bins).map(|v| v as u8).collect();
    }
    let mut h: Vec<u64> = hist.to_vec();
    if clip_limit.is_finite() {
        let limit = ((clip_limit * total as f64 / bins as f64).max(1.0)) as u64;
        let mut excess = 0u64;
        for c in h.iter_mut() {
            if *c > limit {
                excess += *c - limit;
                *c = limit;
            }
        }
        // single-pass uniform redistribution; remainder to the lowest bins
        let per_bin = excess / bins as u64;
        let rem = (excess % bins as u64) as usize;
        for (i, c) in h.iter_mut().enumerate() {
            *c += per_bin + u64::from(i < rem);
        }
    }
    let mut map = vec![0u8; bins];
    let mut cum = 0u64;
    for v in 0..bins {
        let mid = cum as f64 + h[v] as f64 / 2.0;
        cum += h[v];
        map[v] = ((mid / total as f64) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    map
}

fn reflect_index(i: usize, n: usize) -> usize {
    // mirror without repeating the edge sample: 0 1 2 1 0 1 2 ...
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Contrast-limited adaptive histogram equalization on a grayscale image:
/// a tiles x tiles grid of clipped-histogram mappings, blended bilinearly
/// between the four surrounding tile centers.
pub fn clahe(img: &Image, tiles: usize, clip_limit: f64, bins: usize) -> Result<Image, ImgError> {
    assert_eq!(img.channels, 1, "clahe needs a grayscale image");
    assert_eq!(bins, 256, "8-bit input, 256 bins");
    if clip_limit <= 0.0 {
        return Err(ImgError::Config("clahe clip_limit must be > 0".into()));
    }
    if tiles < 1 {
        return Err(ImgError::Config("clahe needs at least one tile".into()));
    }
    if img.width < tiles || img.height < tiles {
        // reflect-pad to the tile grid, equalize, crop back
        let pw = img.width.max(tiles);
        let ph = img.height.max(tiles);
        let mut data = vec![0u8; pw * ph];
        for y in 0..ph {
            let sy = reflect_index(y, img.height);
            for x in 0..pw {
                data[y * pw + x] = img.data[sy * img.width + reflect_index(x, img.width)];
            }
        }
        let eq = clahe(&Image::gray(pw, ph, data), tiles, clip_limit, bins)?;
        let mut out = vec![0u8; img.width * img.height];
        for y in 0..img.height {
            out[y * img.width..(y + 1) * img.width]
                .copy_from_slice(&eq.data[y * pw..y * pw + img.width]);
        }
        return Ok(Image::gray(img.width, img.height, out));
    }

    let (w, h) = (img.width, img.height);
    // tile t covers [t*d/tiles, (t+1)*d/tiles)
    let xb: Vec<usize> = (0..=tiles).map(|t| t * w / tiles).collect();
    let yb: Vec<usize> = (0..=tiles).map(|t| t * h / tiles).collect();
    let mut maps: Vec<Vec<u8>> = Vec::with_capacity(tiles * tiles);
    let mut centers_x = vec![0.0f64; tiles];
    let mut centers_y = vec![0.0f64; tiles];
    for ty in 0..tiles {
        centers_y[ty] = (yb[ty] + yb[ty + 1]) as f64 / 2.0 - 0.5;
        for tx in 0..tiles {
            centers_x[tx] = (xb[tx] + xb[tx + 1]) as f64 / 2.0 - 0.5;
            let mut hist = vec![0u64; bins];
            for y in yb[ty]..yb[ty + 1] {
                for x in xb[tx]..xb[tx + 1] {
                    hist[img.data[y * w + x] as usize] += 1;
                }
            }
            let total = ((yb[ty + 1] - yb[ty]) * (xb[tx + 1] - xb[tx])) as u64;
            maps.push(tile_mapping(&hist, total, clip_limit, bins));
        }
    }

    // blend the four surrounding tile-center mappings; edge pixels clamp to
    // the outermost centers
    let locate = |p: f64, centers: &[f64]| -> (usize, usize, f64) {
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        if p >= centers[tiles - 1] {
            return (tiles - 1, tiles - 1, 0.0);
        }
        let mut i = 0;
        while centers[i + 1] < p {
            i += 1;
        }
        let f = (p - centers[i]) / (centers[i + 1] - centers[i]);
        (i, i + 1, f)
    };
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (ty0, ty1, fy) = locate(y as f64, &centers_y);
        for x in 0..w {
            let (tx0, tx1, fx) = locate(x as f64, &centers_x);
            let v = img.data[y * w + x] as usize;
            let m = |ty: usize, tx: usize| maps[ty * tiles + tx][v] as f64;
            let top = m(ty0, tx0) * (1.0 - fx) + m(ty0, tx1) * fx;
            let bot = m(ty1, tx0) * (1.0 - fx) + m(ty1, tx1) * fx;
            let blended = top * (1.0 - fy) + bot * fy;
            out[y * w + x] = (blended + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(Image::gray(w, h, out))
}

// ---------------------------------------------------------------------------
// augmentation

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub crop: bool,
    /// Crop side as a fraction of the input side, sampled in this range.
    pub crop_scale: (f64, f64),
    pub rotation: bool,
    /// Rotation sampled uniformly in [-rotation_deg, rotation_deg].
    pub rotation_deg: f64,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub elastic: bool,
    /// Displacement magnitude in pixels.
    pub elastic_alpha: f64,
    /// Gaussian smoothing of the displacement field, in pixels.
    pub elastic_sigma: f64,
    pub optical: bool,
    /// Radial distortion coefficient sampled in [-limit, limit].
    pub optical_limit: f64,
    pub noise: bool,
    /// Gaussian noise stddev range, u8 units.
    pub noise_sigma: (f64, f64),
    pub erasing: bool,
    /// Erased area as a fraction of the frame.
    pub erasing_area: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: false,
            crop_scale: (0.8, 1.0),
            rotation: false,
            rotation_deg: 15.0,
            hflip_p: 0.0,
            vflip_p: 0.0,
            elastic: false,
            elastic_alpha: 10.0,
            elastic_sigma: 4.0,
            optical: false,
            optical_limit: 0.05,
            noise: false,
            noise_sigma: (0.0, 10.0),
            erasing: false,
            erasing_area: (0.02, 0.10),
        }
    }
}

impl AugmentConfig {
    /// Conventional training setup: everything on.
    pub fn all_enabled() -> Self {
        AugmentConfig {
            crop: true,
            rotation: true,
            hflip_p: 0.5,
            vflip_p: 0.5,
            elastic: true,
            optical: true,
            noise: true,
            erasing: true,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImgError> {
        let range_ok = |r: (f64, f64)| r.0 <= r.1;
        if !range_ok(self.crop_scale) || self.crop_scale.0 <= 0.0 || self.crop_scale.1 > 1.0 {
            return Err(ImgError::Config("crop_scale must satisfy 0 < lo <= hi <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_p) || !(0.0..=1.0).contains(&self.vflip_p) {
            return Err(ImgError::Config("flip probabilities must be in [0, 1]".into()));
        }
        if self.rotation_deg < 0.0
            || self.elastic_alpha < 0.0
            || self.elastic_sigma <= 0.0
            || self.optical_limit < 0.0
        {
            return Err(ImgError::Config("transform magnitudes must be nonnegative".into()));
        }
        if !range_ok(self.noise_sigma) || self.noise_sigma.0 < 0.0 {
            return Err(ImgError::Config("noise_sigma range invalid".into()));
        }
        if !range_ok(self.erasing_area) || self.erasing_area.0 <= 0.0 || self.erasing_area.1 >= 1.0
        {
            return Err(ImgError::Config("erasing_area must be inside (0, 1)".into()));
        }
        Ok(())
    }
}

/// A geometric warp: `inv` maps an output pixel center to its source
/// coordinate; `tip` maps a point forward.
struct Warp {
    inv: Box<dyn Fn(f64, f64) -> (f64, f64)>,
    tip: Box<dyn Fn(f64, f64) -> (f64, f64)>,
    clamp_border: bool,
}

fn apply_warp(sample: &mut Sample, warp: &Warp) {
    let s = sample.image.width;
    let src_img = sample.image.data.clone();
    let src_masks = sample.masks.clone();
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (warp.inv)(x as f64, y as f64);
            let inside = fx >= -0.5 && fx <= s as f64 - 0.5 && fy >= -0.5 && fy <= s as f64 - 0.5;
            sample.image.data[y * s + x] = if warp.clamp_border || inside {
                (bilinear_at(&src_img, s, s, 1, 0, fx, fy) + 0.5)
                    .floor()
                    .clamp(0.0, 255.0) as u8
            } else {
                0
            };
            // nearest for masks
            let nx = (fx + 0.5).floor() as i64;
            let ny = (fy + 0.5).floor() as i64;
            for c in 0..2 {
                let v = if (0..s as i64).contains(&nx) && (0..s as i64).contains(&ny) {
                    src_masks[c * s * s + ny as usize * s + nx as usize]
                } else if warp.clamp_border {
                    let cx = nx.clamp(0, s as i64 - 1) as usize;
                    let cy = ny.clamp(0, s as i64 - 1) as usize;
                    src_masks[c * s * s + cy * s + cx]
                } else {
                    0
                };
                sample.masks[c * s * s + y * s + x] = v;
            }
        }
    }
    sample.tip = (warp.tip)(sample.tip.0, sample.tip.1);
}

fn gaussian_blur_field(field: &mut [f64], w: usize, h: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += kv * field[y * w + sx];
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            field[y * w + x] = acc / norm;
        }
    }
}

/// Rotation about the pixel-center of the frame; multiples of 90 degrees map
/// the integer grid onto itself.
fn rotation_warp(s: usize, theta: f64) -> Warp {
    let c = (s as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    Warp {
        inv: Box::new(move |x, y| {
            let (dx, dy) = (x - c, y - c);
            (c + cos * dx + sin * dy, c - sin * dx + cos * dy)
        }),
        tip: Box::new(move |x, y| {
            let (dx, dy) = (x - c, y - c);
            (c + cos * dx - sin * dy, c + sin * dx + cos * dy)
        }),
        clamp_border: false,
    }
}

fn draw_geometric_warps<R: Rng>(
    cfg: &AugmentConfig,
    s: usize,
    rng: &mut R,
) -> Vec<Warp> {
    let sf = s as f64;
    let c = (sf - 1.0) / 2.0;
    let mut warps: Vec<Warp> = Vec::new();

    if cfg.crop {
        let scale = rng.gen_range(cfg.crop_scale.0..=cfg.crop_scale.1);
        let cw = ((sf * scale).round() as usize).clamp(1, s);
        let ox = rng.gen_range(0..=s - cw) as f64;
        let oy = rng.gen_range(0..=s - cw) as f64;
        let k = cw as f64 / sf;
        warps.push(Warp {
            inv: Box::new(move |x, y| {
                (ox + (x + 0.5) * k - 0.5, oy + (y + 0.5) * k - 0.5)
            }),
            tip: Box::new(move |x, y| (((x - ox) + 0.5) / k - 0.5, ((y - oy) + 0.5) / k - 0.5)),
            clamp_border: true,
        });
    }
    if cfg.rotation && cfg.rotation_deg > 0.0 {
        let theta = rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg).to_radians();
        warps.push(rotation_warp(s, theta));
    }
    if rng.gen_bool(cfg.hflip_p) {
        let last = sf - 1.0;
        warps.push(Warp {
            inv: Box::new(move |x, y| (last - x, y)),
            tip: Box::new(move |x, y| (last - x, y)),
            clamp_border: true,
        });
    }
    if rng.gen_bool(cfg.vflip_p) {
        let last = sf - 1.0;
        warps.push(Warp {
            inv: Box::new(move |x, y| (x, last - y)),
            tip: Box::new(move |x, y| (x, last - y)),
            clamp_border: true,
        });
    }
    if cfg.elastic && cfg.elastic_alpha > 0.0 {
        let mut dx: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut dy: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        gaussian_blur_field(&mut dx, s, s, cfg.elastic_sigma);
        gaussian_blur_field(&mut dy, s, s, cfg.elastic_sigma);
        for v in dx.iter_mut().chain(dy.iter_mut()) {
            *v *= cfg.elastic_alpha;
        }
        let at = move |f: &[f64], x: f64, y: f64| {
            let xi = (x.round().clamp(0.0, sf - 1.0)) as usize;
            let yi = (y.round().clamp(0.0, sf - 1.0)) as usize;
            f[yi * s + xi]
        };
        let (dx2, dy2) = (dx.clone(), dy.clone());
        warps.push(Warp {
            inv: Box::new(move |x, y| (x + at(&dx, x, y), y + at(&dy, x, y))),
            // first-order inverse: d varies slowly at the smoothing scale
            tip: Box::new(move |x, y| (x - at(&dx2, x, y), y - at(&dy2, x, y))),
            clamp_border: true,
        });
    }
    if cfg.optical && cfg.optical_limit > 0.0 {
        let k = rng.gen_range(-cfg.optical_limit..=cfg.optical_limit);
        let rmax = c * std::f64::consts::SQRT_2;
        warps.push(Warp {
            inv: Box::new(move |x, y| {
                let (dx, dy) = (x - c, y - c);
                let r2 = (dx * dx + dy * dy) / (rmax * rmax);
                (c + dx * (1.0 + k * r2), c + dy * (1.0 + k * r2))
            }),
            tip: Box::new(move |x, y| {
                let (dx, dy) = (x - c, y - c);
                let r2 = (dx * dx + dy * dy) / (rmax * rmax);
                (c + dx / (1.0 + k * r2), c + dy / (1.0 + k * r2))
            }),
            clamp_border: true,
        });
    }
    warps
}

fn box_muller<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Apply the enabled augmentations. Geometric transforms move the image,
/// masks (nearest), and tip identically; photometric transforms touch only
/// the image. A draw that pushes the tip out of frame is rejected and
/// resampled, up to 10 tries, then the geometric stage is skipped.
pub fn augment<R: Rng>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    cfg.validate().expect("augment called with invalid config");
    let s = sample.image.width;
    let sf = s as f64;
    let mut out = sample.clone();

    for _try in 0..10 {
        let warps = draw_geometric_warps(cfg, s, rng);
        // tip check before committing to the (expensive) warps
        let mut tip = sample.tip;
        for w in &warps {
            tip = (w.tip)(tip.0, tip.1);
        }
        if tip.0 >= 0.0 && tip.0 <= sf - 1.0 && tip.1 >= 0.0 && tip.1 <= sf - 1.0 {
            let mut cand = sample.clone();
            for w in &warps {
                apply_warp(&mut cand, w);
            }
            out = cand;
            break;
        }
    }

    if cfg.noise {
        let sigma = rng.gen_range(cfg.noise_sigma.0..=cfg.noise_sigma.1);
        if sigma > 0.0 {
            for p in out.image.data.iter_mut() {
                let v = *p as f64 + sigma * box_muller(rng);
                *p = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if cfg.erasing {
        let area = rng.gen_range(cfg.erasing_area.0..=cfg.erasing_area.1) * sf * sf;
        let aspect = rng.gen_range(0.5..=2.0);
        let ew = ((area * aspect).sqrt().round() as usize).clamp(1, s);
        let eh = ((area / aspect).sqrt().round() as usize).clamp(1, s);
        let ex = rng.gen_range(0..=s - ew);
        let ey = rng.gen_range(0..=s - eh);
        let fill: u8 = rng.gen();
        for y in ey..ey + eh {
            for x in ex..ex + ew {
                out.image.data[y * s + x] = fill;
            }
        }
    }
    out
}
