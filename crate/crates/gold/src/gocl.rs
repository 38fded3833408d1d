//! Global object-centric learning: background encoding/decoding,
//! variational latents for background and per-object extrinsics,
//! Gumbel-Softmax identity sampling, bank-weighted intrinsic construction,
//! mixture composition over patches, and the stage-one loss.

use ndarray::Array2;
use rand::Rng;

use crate::error::{GoldError, Result};
use crate::rng::NoiseSource;
use crate::tensor::nn::{grid_posenc, Fwd, Linear, Mlp};
use crate::tensor::params::{ParamGroup, ParamStore};
use crate::tensor::{Tape, Var};

/// Channels of the fixed position code fed to the broadcast decoders.
pub const POS_DIM: usize = 16;

/// Position code for a patch grid, as fed to the decoders.
pub fn decoder_posenc(grid: (usize, usize)) -> Array2<f64> {
    grid_posenc(grid.0, grid.1, POS_DIM)
}

/// A diagonal-Gaussian posterior with a reparameterized sample.
pub struct GaussianLatent {
    pub mu: Var,
    pub sigma: Var,
    pub sample: Var,
}

/// Linear head producing (mu, sigma) and a reparameterized sample.
/// Sigma is kept strictly positive through a softplus.
pub struct GaussianHead {
    lin: Linear,
    pub d_out: usize,
}

impl GaussianHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        Self {
            lin: Linear::new(store, rng, name, group, d_in, 2 * d_out),
            d_out,
        }
    }

    pub fn forward(
        &self,
        f: &mut Fwd,
        x: Var,
        noise: &mut dyn NoiseSource,
    ) -> Result<GaussianLatent> {
        if f.tape.value(x).iter().any(|v| !v.is_finite()) {
            return Err(GoldError::invalid("non-finite input to latent head"));
        }
        let rows = f.tape.value(x).nrows();
        let y = self.lin.forward(f, x);
        let mu = f.tape.slice_cols(y, 0, self.d_out);
        let raw = f.tape.slice_cols(y, self.d_out, 2 * self.d_out);
        let sigma = f.tape.softplus(raw);
        let eps = f.tape.leaf(noise.normal(rows, self.d_out));
        let scaled = f.tape.mul(sigma, eps);
        let sample = f.tape.add(mu, scaled);
        Ok(GaussianLatent { mu, sigma, sample })
    }
}

/// Relaxed categorical sample per row: `softmax((gamma + g) / tau)` with
/// i.i.d. Gumbel noise. With `hard`, the forward value is the exact
/// one-hot at the perturbed argmax while gradients follow the soft sample
/// (straight-through).
pub fn gumbel_softmax(
    tape: &mut Tape,
    gamma: Var,
    tau: f64,
    noise: &mut dyn NoiseSource,
    hard: bool,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(GoldError::invalid(format!("temperature must be > 0, got {tau}")));
    }
    let (k, c) = tape.value(gamma).dim();
    let g = tape.leaf(noise.gumbel(k, c));
    let perturbed = tape.add(gamma, g);
    let scaled = tape.scale(perturbed, 1.0 / tau);
    let soft = tape.softmax_rows(scaled);
    if !hard {
        return Ok(soft);
    }
    let soft_val = tape.value(soft).clone();
    let mut delta = Array2::zeros(soft_val.dim());
    for (mut drow, srow) in delta.rows_mut().into_iter().zip(soft_val.rows()) {
        let argmax = srow
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for (j, d) in drow.iter_mut().enumerate() {
            *d = if j == argmax { 1.0 - srow[j] } else { -srow[j] };
        }
    }
    let d = tape.leaf(delta);
    Ok(tape.add(soft, d))
}

/// Convex combination of bank rows: `y @ bank` (K×C times C×D).
pub fn intrinsic_combination(tape: &mut Tape, y: Var, bank_rows: Var) -> Var {
    tape.matmul(y, bank_rows)
}

/// Pools patch features and maps them to one background slot vector.
pub struct BackgroundEncoder {
    mlp: Mlp,
}

impl BackgroundEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        hidden: usize,
        d_img: usize,
        d_slot: usize,
    ) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                rng,
                "bck.enc",
                ParamGroup::ObjectModel,
                &[d_img, hidden, d_slot],
            ),
        }
    }

    pub fn forward(&self, f: &mut Fwd, s_img: Var) -> Var {
        let n = f.tape.value(s_img).nrows();
        let summed = f.tape.col_sum(s_img);
        let pooled = f.tape.scale(summed, 1.0 / n as f64);
        self.mlp.forward(f, pooled)
    }
}

/// Spatial-broadcast decoder: one latent row is tiled over all N patches,
/// concatenated with the patch position code and mapped to a per-patch
/// appearance plus one mask logit.
pub struct BroadcastDecoder {
    mlp: Mlp,
    pub d_latent: usize,
    pub d_img: usize,
}

impl BroadcastDecoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        hidden: usize,
        d_latent: usize,
        d_img: usize,
    ) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                rng,
                name,
                ParamGroup::ObjectModel,
                &[d_latent + POS_DIM, hidden, hidden, d_img + 1],
            ),
            d_latent,
            d_img,
        }
    }

    /// `latent` is 1×d_latent; `pos` is the N×POS_DIM position code.
    /// Returns (appearance N×d_img, mask logits N×1).
    pub fn forward(&self, f: &mut Fwd, latent: Var, pos: Var) -> Result<(Var, Var)> {
        let d = f.tape.value(latent).ncols();
        if d != self.d_latent || f.tape.value(latent).nrows() != 1 {
            return Err(GoldError::ShapeMismatch {
                context: "broadcast decoder",
                expected: format!("1 x {}", self.d_latent),
                actual: format!("{:?}", f.tape.value(latent).dim()),
            });
        }
        let n = f.tape.value(pos).nrows();
        let tiled = f.tape.broadcast_rows(latent, n);
        let x = f.tape.concat_cols(&[tiled, pos]);
        let y = self.mlp.forward(f, x);
        let a = f.tape.slice_cols(y, 0, self.d_img);
        let m = f.tape.slice_cols(y, self.d_img, self.d_img + 1);
        Ok((a, m))
    }
}

/// The composed scene: per-slot appearances, normalized mixture masks and
/// the reconstructed feature map. Masks are stored patch-major
/// (N×(K+1), channel 0 = background) so each row is a simplex.
pub struct DecodedComponents {
    pub appearances: Vec<Var>,
    pub mask_logits: Var,
    pub masks: Var,
    pub o_img: Var,
}

/// Mixture composition: softmax over the K+1 mask channels per patch,
/// then the mask-weighted sum of appearances.
pub fn compose_scene(tape: &mut Tape, appearances: &[Var], mask_logits: &[Var]) -> DecodedComponents {
    assert_eq!(appearances.len(), mask_logits.len());
    assert!(!appearances.is_empty());
    let logits = tape.concat_cols(mask_logits);
    let masks = tape.softmax_rows(logits);
    let mut o_img = None;
    for (k, &a) in appearances.iter().enumerate() {
        let mk = tape.slice_cols(masks, k, k + 1);
        let weighted = tape.mul_col(a, mk);
        o_img = Some(match o_img {
            None => weighted,
            Some(acc) => tape.add(acc, weighted),
        });
    }
    DecodedComponents {
        appearances: appearances.to_vec(),
        mask_logits: logits,
        masks,
        o_img: o_img.unwrap(),
    }
}

/// Closed-form KL of a diagonal Gaussian posterior against the standard
/// normal, summed over all rows and dimensions.
pub fn gaussian_kl(tape: &mut Tape, lat: &GaussianLatent) -> Var {
    let mu2 = tape.square(lat.mu);
    let sig2 = tape.square(lat.sigma);
    let log_sig = tape.ln(lat.sigma);
    let log_sig2 = tape.scale(log_sig, 2.0);
    let s = tape.add(mu2, sig2);
    let s = tape.sub(s, log_sig2);
    let s = tape.add_scalar(s, -1.0);
    let total = tape.sum_all(s);
    tape.scale(total, 0.5)
}

/// KL of `softmax(gamma)` rows against the uniform categorical, summed
/// over rows: `sum_c p_c ln(p_c) + ln C` per row.
pub fn categorical_kl_uniform(tape: &mut Tape, gamma: Var) -> Var {
    let (k, c) = tape.value(gamma).dim();
    let p = tape.softmax_rows(gamma);
    let logp = tape.ln(p);
    let plogp = tape.mul(p, logp);
    let ent = tape.sum_all(plogp);
    tape.add_scalar(ent, k as f64 * (c as f64).ln())
}

/// Named values of every term of the stage-one loss, for logging.
#[derive(Clone, Copy, Debug)]
pub struct FeatureLossTerms {
    pub recon: f64,
    pub kl_bck: f64,
    pub kl_ext: f64,
    pub kl_id: f64,
    pub bck_reg: f64,
    pub total: f64,
}

impl FeatureLossTerms {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("feat_recon", self.recon),
            ("kl_bck", self.kl_bck),
            ("kl_ext", self.kl_ext),
            ("kl_id", self.kl_id),
            ("bck_reg", self.bck_reg),
            ("feat_total", self.total),
        ]
    }
}

/// Stage-one loss: Gaussian reconstruction of the patch features under a
/// fixed scale, KL terms for all latents, and a background-coverage
/// regularizer that pushes the (unmasked) background appearance towards
/// the full feature map, weighted by `eta`. The regularizer deliberately
/// ignores the background mask: the low-capacity background decoder is
/// pulled towards explaining the whole map, converges to its predictable
/// part, and the mixture then hands the unpredictable (object) patches to
/// the slots.
#[allow(clippy::too_many_arguments)]
pub fn feature_loss(
    tape: &mut Tape,
    s_img: &Array2<f64>,
    components: &DecodedComponents,
    bck: &GaussianLatent,
    exts: &[&GaussianLatent],
    gamma: Var,
    sigma_rec: f64,
    eta: f64,
) -> Result<(Var, FeatureLossTerms)> {
    if eta < 0.0 {
        return Err(GoldError::invalid(format!("eta must be >= 0, got {eta}")));
    }
    if sigma_rec <= 0.0 {
        return Err(GoldError::invalid("sigma_rec must be > 0"));
    }
    let n = s_img.nrows() as f64;
    let target = tape.leaf(s_img.clone());

    let diff = tape.sub(target, components.o_img);
    let sq = tape.square(diff);
    let ssq = tape.sum_all(sq);
    let recon = tape.scale(ssq, 1.0 / (2.0 * sigma_rec * sigma_rec));

    let kl_bck = gaussian_kl(tape, bck);
    let mut kl_ext = tape.leaf(Array2::zeros((1, 1)));
    for lat in exts {
        let kl = gaussian_kl(tape, lat);
        kl_ext = tape.add(kl_ext, kl);
    }
    let kl_id = categorical_kl_uniform(tape, gamma);

    let rdiff = tape.sub(target, components.appearances[0]);
    let rsq = tape.square(rdiff);
    let rsum = tape.sum_all(rsq);
    let bck_reg = tape.scale(rsum, 1.0 / n);

    let mut total = tape.add(recon, kl_bck);
    total = tape.add(total, kl_ext);
    total = tape.add(total, kl_id);
    let weighted_reg = tape.scale(bck_reg, eta);
    total = tape.add(total, weighted_reg);

    let terms = FeatureLossTerms {
        recon: tape.scalar(recon),
        kl_bck: tape.scalar(kl_bck),
        kl_ext: tape.scalar(kl_ext),
        kl_id: tape.scalar(kl_id),
        bck_reg: tape.scalar(bck_reg),
        total: tape.scalar(total),
    };
    Ok((total, terms))
}
