//! Inference on arbitrary images: preprocess, forward in eval mode, emit a
//! JSON result (run-length-encoded masks at threshold 0.5, tip pixel
//! coordinates, heatmap peak) and an overlay PNG.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imgproc::Image;
use crate::model::Model;
use crate::tensor::Graph;

use super::data::{image_tensor, norm_to_pixel, preprocess_image, read_png};
use super::{checkpoint, write_atomic, PipelineError};

/// Row-major [start, length] runs of set pixels.
pub fn rle_encode(mask: &[u8]) -> Vec<[usize; 2]> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] != 0 {
            let start = i;
            while i < mask.len() && mask[i] != 0 {
                i += 1;
            }
            runs.push([start, i - start]);
        } else {
            i += 1;
        }
    }
    runs
}

pub fn rle_decode(runs: &[[usize; 2]], len: usize) -> Vec<u8> {
    let mut mask = vec![0u8; len];
    for &[start, n] in runs {
        for v in &mut mask[start..start + n] {
            *v = 1;
        }
    }
    mask
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskRle {
    pub rle: Vec<[usize; 2]>,
    pub area: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferResult {
    pub id: String,
    pub input_size: usize,
    pub oolemma: MaskRle,
    pub pipette: MaskRle,
    /// Tip in pixel coordinates at `input_size` scale.
    pub tip: [f64; 2],
    pub heatmap_max: f64,
}

fn mask_rle(seg: &[f32], s: usize, channel: usize) -> MaskRle {
    let mask: Vec<u8> = seg[channel * s * s..(channel + 1) * s * s]
        .iter()
        .map(|&v| u8::from(v >= 0.5))
        .collect();
    MaskRle {
        area: mask.iter().filter(|&&v| v == 1).count(),
        rle: rle_encode(&mask),
    }
}

pub fn infer_image(
    model: &mut Model<f32>,
    raw: &Image,
    id: &str,
) -> Result<(InferResult, Image), PipelineError> {
    let s = model.cfg.input_size;
    let pre = preprocess_image(raw, s);
    let graph = Graph::new();
    let x = image_tensor(&graph, &pre);
    let (out, _) = model.forward(&graph, &x, false)?;
    let seg = out.seg.tensor().to_vec();
    let coords = out.coords.tensor().to_vec();
    let hm = out.heatmap.tensor().to_vec();
    let tip = [
        norm_to_pixel(coords[0] as f64, s),
        norm_to_pixel(coords[1] as f64, s),
    ];
    let result = InferResult {
        id: id.to_string(),
        input_size: s,
        oolemma: mask_rle(&seg, s, 0),
        pipette: mask_rle(&seg, s, 1),
        tip,
        heatmap_max: hm.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64,
    };

    // overlay: class tints over the preprocessed frame plus a tip dot
    let mut rgb = vec![0u8; s * s * 3];
    for i in 0..s * s {
        let base = pre.data[i] as f32;
        let oo = seg[i].clamp(0.0, 1.0);
        let pi = seg[s * s + i].clamp(0.0, 1.0);
        let r = base + (255.0 - base) * oo * 0.5;
        let b = base + (255.0 - base) * pi * 0.5;
        rgb[i * 3] = r.clamp(0.0, 255.0) as u8;
        rgb[i * 3 + 1] = base as u8;
        rgb[i * 3 + 2] = b.clamp(0.0, 255.0) as u8;
    }
    let (tx, ty) = (tip[0].round() as i64, tip[1].round() as i64);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let (px, py) = (tx + dx, ty + dy);
            if dx * dx + dy * dy <= 4 && (0..s as i64).contains(&px) && (0..s as i64).contains(&py)
            {
                let i = (py as usize * s + px as usize) * 3;
                rgb[i] = 0;
                rgb[i + 1] = 255;
                rgb[i + 2] = 0;
            }
        }
    }
    Ok((result, Image::new(s, s, 3, rgb)))
}

fn encode_png_rgb(img: &Image) -> Vec<u8> {
    let mut bytes = Vec::new();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("raw buffer matches dimensions");
    image::DynamicImage::ImageRgb8(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encode");
    bytes
}

#[derive(Debug)]
pub struct InferSummary {
    pub ok: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

pub fn cmd_infer(
    ckpt_path: &Path,
    input: &Path,
    out_dir: &Path,
) -> Result<InferSummary, PipelineError> {
    let ckpt = checkpoint::load_checkpoint(ckpt_path)?;
    let mut model = checkpoint::model_from_checkpoint(&ckpt)?;

    let mut files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(super::io_err(input))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(PipelineError::Config(format!(
            "no PNG inputs under {}",
            input.display()
        )));
    }
    files.sort();

    let mut summary = InferSummary {
        ok: Vec::new(),
        failed: Vec::new(),
    };
    for file in files {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("frame")
            .to_string();
        // per-file failures are reported but do not abort the batch
        match read_png(&file) {
            Ok(raw) => {
                let (result, overlay) = infer_image(&mut model, &raw, &stem)?;
                let json = serde_json::to_vec_pretty(&result).expect("result serializes");
                write_atomic(&out_dir.join(format!("{stem}.json")), &json)?;
                write_atomic(
                    &out_dir.join(format!("{stem}_overlay.png")),
                    &encode_png_rgb(&overlay),
                )?;
                summary.ok.push(file);
            }
            Err(e) => summary.failed.push((file, e.to_string())),
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::pipeline::RunConfig;
    use crate::synthgen::{generate_dataset, SceneConfig};

    #[test]
    fn rle_roundtrip() {
        let mask = vec![0, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        let runs = rle_encode(&mask);
        assert_eq!(runs, vec![[1, 2], [5, 1], [7, 3]]);
        assert_eq!(rle_decode(&runs, 10), mask);
        assert!(rle_encode(&[0, 0]).is_empty());
    }

    #[test]
    fn infer_outputs_are_deterministic_and_total() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        generate_dataset(&SceneConfig::default(), 2, &data).unwrap();
        let cfg = RunConfig {
            model: ModelConfig {
                input_size: 32,
                depth: 1,
                channels: vec![4, 8],
                seg_classes: 2,
                seed: 2,
            },
            ..RunConfig::default()
        };
        let model: Model<f32> = Model::build(cfg.model.clone()).unwrap();
        let ckpt = dir.path().join("m.ckpt");
        checkpoint::save_checkpoint(&ckpt, &model, None, &cfg, 0).unwrap();

        // all-black input still produces valid output
        let black = Image::constant(64, 64, 0);
        let mut m = checkpoint::model_from_checkpoint(
            &checkpoint::load_checkpoint(&ckpt).unwrap(),
        )
        .unwrap();
        let (res, _) = infer_image(&mut m, &black, "black").unwrap();
        assert!(res.tip[0] >= 0.0 && res.tip[0] <= 31.0);
        assert!(res.heatmap_max > 0.0);

        let o1 = cmd_infer(&ckpt, &data, &dir.path().join("i1")).unwrap();
        assert_eq!(o1.ok.len(), 2);
        assert!(o1.failed.is_empty());
        cmd_infer(&ckpt, &data, &dir.path().join("i2")).unwrap();
        let j1 = std::fs::read(dir.path().join("i1/sample_00000.json")).unwrap();
        let j2 = std::fs::read(dir.path().join("i2/sample_00000.json")).unwrap();
        assert_eq!(j1, j2);

        // unreadable file is reported, batch continues
        let bad_dir = dir.path().join("bad");
        std::fs::create_dir_all(&bad_dir).unwrap();
        std::fs::write(bad_dir.join("broken.png"), b"not a png").unwrap();
        std::fs::copy(data.join("sample_00000.png"), bad_dir.join("ok.png")).unwrap();
        let o3 = cmd_infer(&ckpt, &bad_dir, &dir.path().join("i3")).unwrap();
        assert_eq!(o3.ok.len(), 1);
        assert_eq!(o3.failed.len(), 1);
    }
}
