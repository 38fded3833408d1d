//! Image ↔ patch-feature codec: a trainable per-patch encoder standing in
//! for a pre-trained feature extractor, and a per-patch decoder rendering
//! reconstructed features back to pixels. The encoder is trained only
//! during an optional warm start and frozen afterwards; the decoder is
//! trained in the second stage.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::config::Config;
use crate::error::{GoldError, Result};
use crate::tensor::nn::{grid_posenc, Fwd, Mlp};
use crate::tensor::params::{Binding, ParamGroup, ParamStore};
use crate::tensor::{Tape, Var};

/// Patch features of one image: one row per patch, row-major over the grid.
#[derive(Clone, Debug)]
pub struct PatchFeatureMap {
    pub features: Array2<f64>,
    pub grid_shape: (usize, usize),
    pub source_image_size: (usize, usize),
}

/// A decoded image together with its reconstruction error against the
/// source.
#[derive(Clone, Debug)]
pub struct ImageReconstruction {
    pub image: Array3<f64>,
    pub loss: f64,
}

/// Cut an H×W×3 image into non-overlapping `patch`×`patch` tiles, one row
/// per tile (channel-fastest within a tile). Returns the tile matrix and
/// the grid shape.
pub fn patchify(image: &Array3<f64>, patch: usize) -> Result<(Array2<f64>, (usize, usize))> {
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(GoldError::invalid(format!("expected 3 channels, got {ch}")));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(GoldError::invalid(format!(
            "image {h}x{w} not divisible by patch size {patch}"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let d = patch * patch * 3;
    let mut out = Array2::zeros((rows * cols, d));
    for pr in 0..rows {
        for pc in 0..cols {
            let n = pr * cols + pc;
            let mut k = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..3 {
                        out[[n, k]] = image[[pr * patch + dy, pc * patch + dx, c]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok((out, (rows, cols)))
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    patches: &Array2<f64>,
    grid: (usize, usize),
    patch: usize,
) -> Result<Array3<f64>> {
    let (rows, cols) = grid;
    let d = patch * patch * 3;
    if patches.dim() != (rows * cols, d) {
        return Err(GoldError::ShapeMismatch {
            context: "unpatchify",
            expected: format!("({}, {d})", rows * cols),
            actual: format!("{:?}", patches.dim()),
        });
    }
    let mut image = Array3::zeros((rows * patch, cols * patch, 3));
    for pr in 0..rows {
        for pc in 0..cols {
            let n = pr * cols + pc;
            let mut k = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..3 {
                        image[[pr * patch + dy, pc * patch + dx, c]] = patches[[n, k]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(image)
}

/// Mean squared error between two images of equal shape.
pub fn image_loss(x: &Array3<f64>, x_hat: &Array3<f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(GoldError::ShapeMismatch {
            context: "image_loss",
            expected: format!("{:?}", x.dim()),
            actual: format!("{:?}", x_hat.dim()),
        });
    }
    let n = x.len() as f64;
    Ok(x.iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Mean squared error between a tape value and a constant target, as a
/// differentiable scalar.
pub fn mse_to_target(tape: &mut Tape, pred: Var, target: &Array2<f64>) -> Var {
    let t = tape.leaf(target.clone());
    let diff = tape.sub(pred, t);
    let sq = tape.square(diff);
    tape.mean_all(sq)
}

/// Per-patch encoder/decoder pair.
///
/// Encoding is a stack of per-patch fully connected layers over the raw
/// tile pixels (equivalent to a strided convolution followed by 1×1
/// blocks) with a fixed sinusoidal position code added to the output.
pub struct FeatureCodec {
    pub patch: usize,
    pub d_img: usize,
    enc: Mlp,
    dec: Mlp,
}

impl FeatureCodec {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &Config) -> Self {
        let pd = cfg.patch_size * cfg.patch_size * 3;
        let enc = Mlp::new(
            store,
            rng,
            "codec.enc",
            ParamGroup::CodecEncoder,
            &[pd, cfg.enc_hidden, cfg.enc_hidden, cfg.d_img],
        );
        let dec = Mlp::new(
            store,
            rng,
            "codec.dec",
            ParamGroup::CodecDecoder,
            &[cfg.d_img, cfg.dec_hidden, cfg.dec_hidden, pd],
        );
        Self {
            patch: cfg.patch_size,
            d_img: cfg.d_img,
            enc,
            dec,
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Differentiable encoding for use inside a forward pass.
    pub fn encode(&self, f: &mut Fwd, image: &Array3<f64>) -> Result<(Var, (usize, usize))> {
        if let Some(bad) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GoldError::invalid(format!(
                "image values must lie in [0,1], found {bad}"
            )));
        }
        let (tiles, grid) = patchify(image, self.patch)?;
        let x = f.tape.leaf(tiles);
        let h = self.enc.forward(f, x);
        let pos = f.tape.leaf(grid_posenc(grid.0, grid.1, self.d_img));
        Ok((f.tape.add(h, pos), grid))
    }

    /// Encode without tracking gradients.
    pub fn encode_image(&self, store: &ParamStore, image: &Array3<f64>) -> Result<PatchFeatureMap> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, store, &mut binding);
        let (var, grid) = self.encode(&mut f, image)?;
        Ok(PatchFeatureMap {
            features: tape.value(var).clone(),
            grid_shape: grid,
            source_image_size: (image.dim().0, image.dim().1),
        })
    }

    /// Differentiable decoding: reconstructed patch features → tile pixels.
    pub fn decode(&self, f: &mut Fwd, o_img: Var) -> Result<Var> {
        let cols = f.tape.value(o_img).ncols();
        if cols != self.d_img {
            return Err(GoldError::ShapeMismatch {
                context: "decode",
                expected: format!("N x {}", self.d_img),
                actual: format!("N x {cols}"),
            });
        }
        Ok(self.dec.forward(f, o_img))
    }

    /// Decode without tracking gradients. The output stays in the real
    /// plane; clamp to [0,1] only when exporting pixels.
    pub fn decode_patches(
        &self,
        store: &ParamStore,
        o_img: &Array2<f64>,
        grid: (usize, usize),
    ) -> Result<Array3<f64>> {
        if o_img.dim() != (grid.0 * grid.1, self.d_img) {
            return Err(GoldError::ShapeMismatch {
                context: "decode_patches",
                expected: format!("({}, {})", grid.0 * grid.1, self.d_img),
                actual: format!("{:?}", o_img.dim()),
            });
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, store, &mut binding);
        let x = f.tape.leaf(o_img.clone());
        let y = self.decode(&mut f, x)?;
        unpatchify(tape.value(y), grid, self.patch)
    }

    /// Decode and score against the source image.
    pub fn reconstruct(
        &self,
        store: &ParamStore,
        o_img: &Array2<f64>,
        grid: (usize, usize),
        source: &Array3<f64>,
    ) -> Result<ImageReconstruction> {
        let image = self.decode_patches(store, o_img, grid)?;
        let loss = image_loss(source, &image)?;
        Ok(ImageReconstruction { image, loss })
    }

    /// Differentiable autoencoding loss (warm-start objective): mean
    /// squared pixel error of decode(encode(image)).
    pub fn autoencode_loss(&self, f: &mut Fwd, image: &Array3<f64>) -> Result<Var> {
        let (features, _) = self.encode(f, image)?;
        let pixels = self.decode(f, features)?;
        let (target, _) = patchify(image, self.patch)?;
        Ok(mse_to_target(f.tape, pixels, &target))
    }
}
