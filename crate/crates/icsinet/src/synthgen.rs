//! Deterministic synthetic microinjection scenes: an oocyte (rotated ellipse
//! with a bright rim), a suction pipette entering from the left, and a thin
//! needle entering from the right whose tip position is the regression
//! target. The generator doubles as its own labeling oracle: masks are exact
//! rasterizations of the rendered shapes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annot::{Annotation, Polygons};
use crate::imgproc::{clahe, Image};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        source: image::ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub image_size: usize,
    pub seed: u64,
    /// Intensity ranges, u8.
    pub background: (u8, u8),
    pub oocyte: (u8, u8),
    pub pipette: (u8, u8),
    pub needle: (u8, u8),
    /// Oolemma ellipse semi-axes as a fraction of the image side.
    pub oolemma_axes: (f64, f64),
    /// Pipette bore (vertical thickness) as a fraction of the image side.
    pub pipette_width: (f64, f64),
    /// Needle thickness as a fraction of the image side.
    pub needle_thickness: (f64, f64),
    /// Gaussian background noise stddev, u8 units.
    pub noise_std: f64,
    /// Run CLAHE on the rendered image.
    pub apply_clahe: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 128,
            seed: 0,
            background: (20, 60),
            oocyte: (80, 130),
            pipette: (150, 210),
            needle: (210, 255),
            oolemma_axes: (0.25, 0.40),
            pipette_width: (0.05, 0.10),
            needle_thickness: (0.005, 0.015),
            noise_std: 4.0,
            apply_clahe: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let range_ok = |r: (f64, f64)| r.0 <= r.1 && r.0 > 0.0;
        if self.image_size < 32 {
            return Err(SynthError::Config("image_size must be >= 32".into()));
        }
        if !range_ok(self.oolemma_axes)
            || !range_ok(self.pipette_width)
            || !range_ok(self.needle_thickness)
        {
            return Err(SynthError::Config("geometry ranges must satisfy 0 < lo <= hi".into()));
        }
        if self.oolemma_axes.1 > 0.45 || self.pipette_width.1 > 0.2 {
            return Err(SynthError::Config("objects would not fit in frame".into()));
        }
        for r in [self.background, self.oocyte, self.pipette, self.needle] {
            if r.0 > r.1 {
                return Err(SynthError::Config("intensity range lo > hi".into()));
            }
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// One labeled frame. Masks are a binary `[2, S, S]` tensor, channel 0 the
/// oolemma, channel 1 the pipette; tip in sub-pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub masks: Vec<u8>,
    pub tip: (f64, f64),
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    sin: f64,
    cos: f64,
}

impl Ellipse {
    /// Normalized radius: <= 1 inside, 1 on the boundary.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        (u * u + v * v).sqrt()
    }

    /// Horizontal half-extent of the rotated ellipse.
    fn extent_x(&self) -> f64 {
        ((self.a * self.cos).powi(2) + (self.b * self.sin).powi(2)).sqrt()
    }

    fn extent_y(&self) -> f64 {
        ((self.a * self.sin).powi(2) + (self.b * self.cos).powi(2)).sqrt()
    }

    fn boundary_polygon(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let (px, py) = (self.a * t.cos(), self.b * t.sin());
                [
                    self.cx + px * self.cos - py * self.sin,
                    self.cy + px * self.sin + py * self.cos,
                ]
            })
            .collect()
    }
}

struct Pipette {
    /// Right end of the bore (cap center x).
    len: f64,
    cy: f64,
    half: f64,
}

impl Pipette {
    fn contains(&self, x: f64, y: f64) -> bool {
        if x <= self.len {
            (y - self.cy).abs() <= self.half
        } else {
            let dx = x - self.len;
            let dy = y - self.cy;
            dx * dx + dy * dy <= self.half * self.half
        }
    }

    fn boundary_polygon(&self) -> Vec<[f64; 2]> {
        let mut pts = vec![[0.0, self.cy - self.half]];
        let arc = 16;
        for i in 0..=arc {
            let t = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * i as f64 / arc as f64;
            pts.push([self.len + self.half * t.cos(), self.cy + self.half * t.sin()]);
        }
        pts.push([0.0, self.cy + self.half]);
        pts
    }
}

fn dist_to_hsegment(x: f64, y: f64, x0: f64, x1: f64, yy: f64) -> f64 {
    let cx = x.clamp(x0, x1);
    ((x - cx).powi(2) + (y - yy).powi(2)).sqrt()
}

fn box_muller<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct SceneSpecs {
    ellipse: Ellipse,
    pipette: Pipette,
    tip: (f64, f64),
    needle_r: f64,
    bg_v: f64,
    oo_v: f64,
    pip_v: f64,
    ndl_v: f64,
    /// rng state after all parameter draws; consumed by the noise pass.
    rng: ChaCha8Rng,
}

/// All random scene parameters, drawn in a fixed order from the stream
/// `(seed, index)`.
fn sample_scene_specs(cfg: &SceneConfig, index: usize) -> SceneSpecs {
    let sf = cfg.image_size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);

    // geometry: resample until the oolemma fits and leaves room for a
    // pipette long enough to cover its 3-15% frame-area budget
    let (ellipse, pipette) = loop {
        let a = rng.gen_range(cfg.oolemma_axes.0..=cfg.oolemma_axes.1) * sf;
        let b = rng.gen_range(cfg.oolemma_axes.0..=cfg.oolemma_axes.1) * sf;
        let phi = rng.gen_range(0.0..std::f64::consts::PI);
        let area_frac = std::f64::consts::PI * a * b / (sf * sf);
        if !(0.16..=0.49).contains(&area_frac) {
            continue;
        }
        let (sin, cos) = phi.sin_cos();
        let probe = Ellipse {
            cx: 0.0,
            cy: 0.0,
            a,
            b,
            sin,
            cos,
        };
        let ex = probe.extent_x();
        let ey = probe.extent_y();

        let w = rng.gen_range(cfg.pipette_width.0..=cfg.pipette_width.1) * sf;
        // bore length window from the area budget and the frame
        let len_lo = 0.032 * sf * sf / w;
        let len_hi = (0.14 * sf * sf / w).min(sf - 4.0 - 2.0 * ex);
        if len_lo > len_hi {
            continue;
        }
        let len = rng.gen_range(len_lo..=len_hi);
        let cx = len + 1.0 + ex;
        if cx + ex > sf - 2.0 {
            continue;
        }
        let cy_lo = (ey + 2.0).max(w / 2.0 + 2.0);
        let cy = rng.gen_range(cy_lo..=sf - 1.0 - cy_lo);
        break (
            Ellipse {
                cx,
                cy,
                a,
                b,
                sin,
                cos,
            },
            Pipette {
                len,
                cy,
                half: w / 2.0,
            },
        );
    };

    // needle: tip in the right two-thirds, inside or outside the oolemma
    // with probability 1/2
    let want_inside = rng.gen_bool(0.5);
    let thickness = rng.gen_range(cfg.needle_thickness.0..=cfg.needle_thickness.1) * sf;
    let mut tip = (sf * 0.75, ellipse.cy);
    for _ in 0..200 {
        let tx = rng.gen_range(sf / 3.0..=sf - 2.0);
        let ty = rng.gen_range(2.0..=sf - 3.0);
        let rho = ellipse.rho(tx, ty);
        let ok = if want_inside {
            rho <= 0.85
        } else {
            rho >= 1.15 && !pipette.contains(tx, ty)
        };
        if ok {
            tip = (tx, ty);
            break;
        }
    }

    let mut iv = |r: (u8, u8)| -> f64 { rng.gen_range(r.0..=r.1) as f64 };
    let bg_v = iv(cfg.background);
    let oo_v = iv(cfg.oocyte);
    let pip_v = iv(cfg.pipette);
    let ndl_v = iv(cfg.needle);

    SceneSpecs {
        ellipse,
        pipette,
        tip,
        needle_r: thickness / 2.0,
        bg_v,
        oo_v,
        pip_v,
        ndl_v,
        rng,
    }
}

/// Deterministic in `(cfg.seed, index)`.
pub fn generate_scene(cfg: &SceneConfig, index: usize) -> Result<Sample, SynthError> {
    cfg.validate()?;
    let s = cfg.image_size;
    let sf = s as f64;
    let SceneSpecs {
        ellipse,
        pipette,
        tip,
        needle_r,
        bg_v,
        oo_v,
        pip_v,
        ndl_v,
        mut rng,
    } = sample_scene_specs(cfg, index);
    let rim_v = (oo_v + 60.0).min(255.0);

    let mut img = vec![0u8; s * s];
    let mut masks = vec![0u8; 2 * s * s];
    // rim thickness ~2.5 px in normalized-radius units
    let rim_t = 2.5 / ellipse.a.min(ellipse.b);
    let aa = ellipse.a.min(ellipse.b); // edge softness scale, ~1 px

    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = bg_v + cfg.noise_std * box_muller(&mut rng);

            let rho = ellipse.rho(fx, fy);
            if rho <= 1.0 {
                masks[y * s + x] = 1;
            }
            // anti-aliased interior, then bright rim band
            let alpha = ((1.0 - rho) * aa + 0.5).clamp(0.0, 1.0);
            if alpha > 0.0 {
                let color = if rho >= 1.0 - rim_t { rim_v } else { oo_v };
                v = v * (1.0 - alpha) + color * alpha;
            }

            if pipette.contains(fx, fy) {
                masks[s * s + y * s + x] = 1;
                v = pip_v;
            }

            let d = dist_to_hsegment(fx, fy, tip.0, sf - 1.0, tip.1);
            let na = (needle_r - d + 0.5).clamp(0.0, 1.0);
            if na > 0.0 {
                v = v * (1.0 - na) + ndl_v * na;
            }

            img[y * s + x] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }

    let mut image = Image::gray(s, s, img);
    if cfg.apply_clahe {
        image = clahe(&image, 8, 2.0, 256).expect("valid clahe defaults");
    }
    Ok(Sample {
        id: format!("sample_{index:05}"),
        image,
        masks,
        tip,
    })
}

/// Annotation record for a generated scene (96-gon ellipse boundary,
/// rounded-rectangle pipette outline).
pub fn scene_annotation(cfg: &SceneConfig, index: usize) -> Result<Annotation, SynthError> {
    cfg.validate()?;
    let specs = sample_scene_specs(cfg, index);
    Ok(Annotation {
        id: format!("sample_{index:05}"),
        polygons: Polygons {
            oolemma: specs.ellipse.boundary_polygon(96),
            pipette: specs.pipette.boundary_polygon(),
        },
        needle_tip: [specs.tip.0, specs.tip.1],
        operator_id: None,
        round: None,
        frame_id: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// 80/5/15 split, stable under regeneration (pure function of the index).
pub fn split_for_index(index: usize) -> Split {
    let h = (index as u64).wrapping_mul(2654435761) % 100;
    match h {
        0..=79 => Split::Train,
        80..=84 => Split::Val,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub png: String,
    pub json: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn encode_png(img: &Image) -> Vec<u8> {
    let mut bytes = Vec::new();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("raw buffer matches dimensions");
    image::DynamicImage::ImageLuma8(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encode");
    bytes
}

/// Write `n` samples (PNG + annotation JSON each) plus `manifest.json`.
pub fn generate_dataset(cfg: &SceneConfig, n: usize, out_dir: &Path) -> Result<Manifest, SynthError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::with_capacity(n);
    for index in 0..n {
        let sample = generate_scene(cfg, index)?;
        let annotation = scene_annotation(cfg, index)?;
        let png_name = format!("{}.png", sample.id);
        let json_name = format!("{}.json", sample.id);
        write_atomic(&out_dir.join(&png_name), &encode_png(&sample.image))?;
        let json = serde_json::to_vec_pretty(&annotation).expect("annotation serializes");
        write_atomic(&out_dir.join(&json_name), &json)?;
        entries.push(ManifestEntry {
            id: sample.id,
            split: split_for_index(index),
            png: png_name,
            json: json_name,
        });
    }
    let manifest = Manifest {
        count: n,
        image_size: cfg.image_size,
        seed: cfg.seed,
        samples: entries,
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join("manifest.json"), &bytes)?;
    Ok(manifest)
}
