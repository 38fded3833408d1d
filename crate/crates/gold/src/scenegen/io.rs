//! Dataset persistence: lossless per-sample PNGs plus JSON metadata and a
//! top-level manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{ExtrinsicParams, PrototypeLibrary, SceneSample};
use crate::error::{GoldError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub num_samples: usize,
    pub canvas_size: usize,
    pub config_hash: String,
    pub library_seed: u64,
    pub library: PrototypeLibrary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleMeta {
    seed: u64,
    background: usize,
    identities: Vec<usize>,
    extrinsics: Vec<ExtrinsicParams>,
}

fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("sample_{i:05}_image.png"))
}
fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("sample_{i:05}_mask.png"))
}
fn meta_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("sample_{i:05}_meta.json"))
}

/// Save an H×W×3 float image as a lossless PNG, clamping to [0,1].
pub fn save_png(image: &Array3<f64>, path: &Path) -> Result<()> {
    to_u8_image(image)
        .save(path)
        .map_err(|e| GoldError::load(path, e.to_string()))
}

fn to_u8_image(image: &Array3<f64>) -> image::RgbImage {
    let (h, w, _) = image.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; 3] =
                std::array::from_fn(|c| (image[[y, x, c]] * 255.0).round() as u8);
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf
}

/// Write a split to `dir`, returning its manifest.
pub fn write_dataset(
    samples: &[SceneSample],
    dir: &Path,
    config_hash: &str,
    library: &PrototypeLibrary,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        to_u8_image(&s.image)
            .save(image_path(dir, i))
            .map_err(|e| GoldError::load(image_path(dir, i), e.to_string()))?;
        let (h, w) = s.labels.dim();
        let mut mask = image::GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                mask.put_pixel(x as u32, y as u32, image::Luma([s.labels[[y, x]]]));
            }
        }
        mask.save(mask_path(dir, i))
            .map_err(|e| GoldError::load(mask_path(dir, i), e.to_string()))?;
        let meta = SampleMeta {
            seed: s.seed,
            background: s.background,
            identities: s.identities.clone(),
            extrinsics: s.extrinsics.clone(),
        };
        fs::write(meta_path(dir, i), serde_json::to_string_pretty(&meta).unwrap())?;
    }
    let manifest = Manifest {
        num_samples: samples.len(),
        canvas_size: library.canvas_size,
        config_hash: config_hash.to_string(),
        library_seed: library.seed,
        library: library.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(manifest)
}

/// Load a split written by [`write_dataset`]. Errors name the offending
/// file and sample index.
pub fn read_dataset(dir: &Path) -> Result<(Vec<SceneSample>, Manifest)> {
    let manifest_file = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_file)
        .map_err(|e| GoldError::load(&manifest_file, format!("missing manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| GoldError::load(&manifest_file, format!("corrupt manifest: {e}")))?;

    let mut samples = Vec::with_capacity(manifest.num_samples);
    for i in 0..manifest.num_samples {
        let fail = |path: &Path, what: String| {
            GoldError::load(path, format!("sample {i}: {what}"))
        };
        let img_file = image_path(dir, i);
        let img = image::open(&img_file)
            .map_err(|e| fail(&img_file, e.to_string()))?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut image_f = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    image_f[[y, x, c]] = px[c] as f64 / 255.0;
                }
            }
        }
        let mask_file = mask_path(dir, i);
        let mask = image::open(&mask_file)
            .map_err(|e| fail(&mask_file, e.to_string()))?
            .into_luma8();
        if (mask.width() as usize, mask.height() as usize) != (w, h) {
            return Err(fail(&mask_file, "mask size differs from image".into()));
        }
        let mut labels = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                labels[[y, x]] = mask.get_pixel(x as u32, y as u32)[0];
            }
        }
        let meta_file = meta_path(dir, i);
        let meta_text =
            fs::read_to_string(&meta_file).map_err(|e| fail(&meta_file, e.to_string()))?;
        let meta: SampleMeta = serde_json::from_str(&meta_text)
            .map_err(|e| fail(&meta_file, format!("corrupt metadata: {e}")))?;
        if meta.identities.len() != meta.extrinsics.len() {
            return Err(fail(&meta_file, "identities/extrinsics length mismatch".into()));
        }
        samples.push(SceneSample {
            image: image_f,
            labels,
            identities: meta.identities,
            extrinsics: meta.extrinsics,
            background: meta.background,
            seed: meta.seed,
        });
    }
    Ok((samples, manifest))
}
