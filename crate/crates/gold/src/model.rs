//! Full scene model: the feature codec feeds a background encoder and the
//! slot attention loop; latent heads produce variational posteriors; the
//! broadcast decoders rebuild per-slot feature maps that are mixed into a
//! scene reconstruction. One struct covers the full model and both
//! ablation variants, differing in how the intrinsic slot state reaches
//! the object decoder.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::config::{Config, Variant};
use crate::dsa::{Dsa, GlobalBank, IterTrace};
use crate::error::Result;
use crate::featurecodec::{mse_to_target, patchify, FeatureCodec};
use crate::gocl::{
    compose_scene, decoder_posenc, feature_loss, gumbel_softmax, intrinsic_combination,
    BackgroundEncoder, BroadcastDecoder, DecodedComponents, FeatureLossTerms, GaussianHead,
    GaussianLatent,
};
use crate::rng::NoiseSource;
use crate::tensor::nn::Fwd;
use crate::tensor::params::{ParamGroup, ParamStore};
use crate::tensor::Var;

/// Everything produced by one scene forward pass that later stages need:
/// decoded components, identity logits, variational latents and the
/// attention trace.
pub struct SceneForward {
    pub components: DecodedComponents,
    /// K×C identity logits from the attention loop.
    pub gamma: Var,
    /// Identity weights consumed by the decoder (absent in the bank-free
    /// variant, where gamma itself is decoded).
    pub y_dec: Option<Var>,
    pub z_bck: GaussianLatent,
    /// One latent with K rows.
    pub z_ext: GaussianLatent,
    /// K×(D_dec_int + D_zext) rows fed to the object decoder.
    pub obj_latents: Var,
    pub s_bck: Var,
    pub trace: Vec<IterTrace>,
}

pub struct GoldModel {
    pub variant: Variant,
    pub codec: FeatureCodec,
    pub bck_enc: BackgroundEncoder,
    pub bck_head: GaussianHead,
    pub bck_dec: BroadcastDecoder,
    pub ext_head: GaussianHead,
    pub obj_dec: BroadcastDecoder,
    pub dsa: Dsa,
    pub bank: Option<GlobalBank>,
    pub k: usize,
    pub sigma_rec: f64,
    pub eta: f64,
}

/// Assemble the model for the configured variant. The bank-free variant
/// exposes no global bank and its object decoder consumes the identity
/// logits directly; the other two decode a bank combination.
pub fn build_model(store: &mut ParamStore, rng: &mut impl Rng, cfg: &Config) -> Result<GoldModel> {
    cfg.validate()?;
    let codec = FeatureCodec::new(store, rng, cfg);
    let dsa = Dsa::new(store, rng, cfg);
    let d_slot = dsa.cfg.d_slot();
    let bank = match cfg.variant {
        Variant::Full | Variant::NoDsa => Some(GlobalBank::new(
            store,
            rng,
            cfg.bank_size,
            cfg.d_glo,
            dsa.cfg.d_int,
        )),
        Variant::NoGlo => None,
    };
    let d_obj_latent = match cfg.variant {
        Variant::Full | Variant::NoDsa => cfg.d_glo + cfg.d_zext,
        Variant::NoGlo => cfg.bank_size + cfg.d_zext,
    };
    let bck_enc = BackgroundEncoder::new(store, rng, cfg.enc_hidden, cfg.d_img, d_slot);
    let bck_head = GaussianHead::new(
        store,
        rng,
        "bck.lat",
        ParamGroup::ObjectModel,
        d_slot,
        cfg.d_bck,
    );
    let bck_dec = BroadcastDecoder::new(store, rng, "bck.dec", cfg.dec_hidden, cfg.d_bck, cfg.d_img);
    let ext_head = GaussianHead::new(
        store,
        rng,
        "ext.lat",
        ParamGroup::ObjectModel,
        cfg.d_ext,
        cfg.d_zext,
    );
    let obj_dec = BroadcastDecoder::new(
        store,
        rng,
        "obj.dec",
        cfg.dec_hidden,
        d_obj_latent,
        cfg.d_img,
    );
    Ok(GoldModel {
        variant: cfg.variant,
        codec,
        bck_enc,
        bck_head,
        bck_dec,
        ext_head,
        obj_dec,
        dsa,
        bank,
        k: cfg.num_slots,
        sigma_rec: cfg.sigma_rec,
        eta: cfg.eta,
    })
}

impl GoldModel {
    /// Decode one scene from explicit latents: background sample 1×D_bck
    /// and per-object latent rows K×(D_dec_int + D_zext). Deterministic;
    /// used both by the forward pass and by latent-editing tools.
    pub fn decode_scene(
        &self,
        f: &mut Fwd,
        z_bck_sample: Var,
        obj_latents: Var,
        grid: (usize, usize),
    ) -> Result<DecodedComponents> {
        let pos = f.tape.leaf(decoder_posenc(grid));
        let (a0, m0) = self.bck_dec.forward(f, z_bck_sample, pos)?;
        let mut appearances = vec![a0];
        let mut logits = vec![m0];
        let k = f.tape.value(obj_latents).nrows();
        for i in 0..k {
            let row = f.tape.slice_rows(obj_latents, i, i + 1);
            let (a, m) = self.obj_dec.forward(f, row, pos)?;
            appearances.push(a);
            logits.push(m);
        }
        Ok(compose_scene(f.tape, &appearances, &logits))
    }

    /// The intrinsic rows handed to the object decoder: a bank combination
    /// in the variants with a bank, the identity logits themselves in the
    /// bank-free one. Returns (rows, identity weights if sampled).
    fn decoder_intrinsics(
        &self,
        f: &mut Fwd,
        gamma: Var,
        tau: f64,
        noise: &mut dyn NoiseSource,
        hard: bool,
    ) -> Result<(Var, Option<Var>)> {
        match (&self.bank, self.variant) {
            (Some(bank), _) => {
                let y = gumbel_softmax(f.tape, gamma, tau, noise, hard)?;
                let rows = bank.rows(f);
                Ok((intrinsic_combination(f.tape, y, rows), Some(y)))
            }
            (None, _) => Ok((gamma, None)),
        }
    }

    /// Full forward pass over one scene's patch features.
    pub fn forward_features(
        &self,
        f: &mut Fwd,
        features: Var,
        grid: (usize, usize),
        tau: f64,
        noise: &mut dyn NoiseSource,
        hard: bool,
    ) -> Result<SceneForward> {
        let s_bck = self.bck_enc.forward(f, features);
        let run = self
            .dsa
            .run(f, features, s_bck, self.bank.as_ref(), tau, noise, hard)?;
        let z_bck = self.bck_head.forward(f, s_bck, noise)?;
        let z_ext = self.ext_head.forward(f, run.s_ext, noise)?;
        let (s_int_dec, y_dec) = self.decoder_intrinsics(f, run.gamma, tau, noise, hard)?;
        let obj_latents = f.tape.concat_cols(&[s_int_dec, z_ext.sample]);
        let components = self.decode_scene(f, z_bck.sample, obj_latents, grid)?;
        Ok(SceneForward {
            components,
            gamma: run.gamma,
            y_dec,
            z_bck,
            z_ext,
            obj_latents,
            s_bck,
            trace: run.trace,
        })
    }

    /// Stage-one objective on one scene: variational reconstruction of the
    /// patch features plus the background-coverage regularizer.
    pub fn stage_one_loss(
        &self,
        f: &mut Fwd,
        s_img: &Array2<f64>,
        grid: (usize, usize),
        tau: f64,
        noise: &mut dyn NoiseSource,
        hard: bool,
    ) -> Result<(Var, FeatureLossTerms, SceneForward)> {
        let features = f.tape.leaf(s_img.clone());
        let fwd = self.forward_features(f, features, grid, tau, noise, hard)?;
        let (total, terms) = feature_loss(
            f.tape,
            s_img,
            &fwd.components,
            &fwd.z_bck,
            &[&fwd.z_ext],
            fwd.gamma,
            self.sigma_rec,
            self.eta,
        )?;
        Ok((total, terms, fwd))
    }

    /// Background-fit objective on one scene: the background path alone
    /// (encoder, latent head, decoder) reconstructs the full patch feature
    /// map under the stage-one noise scale, plus its KL term. Run before
    /// stage one so the low-capacity background component settles on the
    /// predictable part of the scenes before the slots start competing;
    /// without it the slots grab the (easy) background and the background
    /// component is left explaining the objects.
    pub fn background_fit_loss(
        &self,
        f: &mut Fwd,
        s_img: &Array2<f64>,
        grid: (usize, usize),
        noise: &mut dyn NoiseSource,
    ) -> Result<Var> {
        let features = f.tape.leaf(s_img.clone());
        let s_bck = self.bck_enc.forward(f, features);
        let z_bck = self.bck_head.forward(f, s_bck, noise)?;
        let pos = f.tape.leaf(decoder_posenc(grid));
        let (a0, _) = self.bck_dec.forward(f, z_bck.sample, pos)?;
        let target = f.tape.leaf(s_img.clone());
        let diff = f.tape.sub(target, a0);
        let sq = f.tape.square(diff);
        let ssq = f.tape.sum_all(sq);
        let recon = f
            .tape
            .scale(ssq, 1.0 / (2.0 * self.sigma_rec * self.sigma_rec));
        let kl = crate::gocl::gaussian_kl(f.tape, &z_bck);
        Ok(f.tape.add(recon, kl))
    }

    /// Stage-two objective on one scene: pixel reconstruction of the image
    /// from the composed feature map through the codec decoder.
    pub fn stage_two_loss(
        &self,
        f: &mut Fwd,
        image: &Array3<f64>,
        tau: f64,
        noise: &mut dyn NoiseSource,
        hard: bool,
    ) -> Result<Var> {
        let (features, grid) = self.codec.encode(f, image)?;
        let fwd = self.forward_features(f, features, grid, tau, noise, hard)?;
        let decoded = self.codec.decode(f, fwd.components.o_img)?;
        let (target, _) = patchify(image, self.codec.patch)?;
        Ok(mse_to_target(f.tape, decoded, &target))
    }

    /// Per-patch segmentation from the normalized masks: channel argmax,
    /// 0 = background.
    pub fn patch_labels(masks: &Array2<f64>, grid: (usize, usize)) -> Array2<u8> {
        let (rows, cols) = grid;
        assert_eq!(masks.nrows(), rows * cols);
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let row = masks.row(r * cols + c);
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i as u8)
                .unwrap()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededNoise, ZeroNoise};
    use crate::tensor::params::Binding;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(variant: Variant) -> Config {
        let mut c = Config::default();
        c.variant = variant;
        c.canvas_size = 16;
        c.patch_size = 8;
        c.d_img = 6;
        c.d_glo = 5;
        c.d_int = 4;
        c.d_ext = 3;
        c.d_key = 4;
        c.d_zext = 2;
        c.d_bck = 2;
        c.enc_hidden = 8;
        c.dec_hidden = 8;
        c.num_slots = 2;
        c.bank_size = 3;
        c.dsa_iters = 2;
        c
    }

    fn build(variant: Variant) -> (ParamStore, GoldModel, Config) {
        let cfg = small_config(variant);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        (store, model, cfg)
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn bank_presence_follows_variant() {
        assert!(build(Variant::Full).1.bank.is_some());
        assert!(build(Variant::NoDsa).1.bank.is_some());
        let (_, m, cfg) = build(Variant::NoGlo);
        assert!(m.bank.is_none());
        // the bank-free object decoder consumes [identity logits, z_ext]
        assert_eq!(m.obj_dec.d_latent, cfg.bank_size + cfg.d_zext);
        let (_, m, cfg) = build(Variant::Full);
        assert_eq!(m.obj_dec.d_latent, cfg.d_glo + cfg.d_zext);
    }

    #[test]
    fn forward_has_expected_shapes_and_normalized_masks() {
        for variant in [Variant::Full, Variant::NoDsa, Variant::NoGlo] {
            let (store, model, cfg) = build(variant);
            let grid = (2, 2);
            let s_img = random_features(4, cfg.d_img, 2);
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, &store, &mut binding);
            let feats = f.tape.leaf(s_img);
            let mut noise = SeededNoise::new(3);
            let out = model
                .forward_features(&mut f, feats, grid, 1.0, &mut noise, false)
                .unwrap();
            assert_eq!(tape.value(out.gamma).dim(), (cfg.num_slots, cfg.bank_size));
            assert_eq!(
                tape.value(out.components.o_img).dim(),
                (4, cfg.d_img),
                "{variant:?}"
            );
            assert_eq!(
                tape.value(out.components.masks).dim(),
                (4, cfg.num_slots + 1)
            );
            for row in tape.value(out.components.masks).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
            assert_eq!(out.y_dec.is_some(), variant != Variant::NoGlo);
        }
    }

    #[test]
    fn forward_is_deterministic_given_noise() {
        let (store, model, cfg) = build(Variant::Full);
        let s_img = random_features(4, cfg.d_img, 4);
        let run = |seed: u64| {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, &store, &mut binding);
            let feats = f.tape.leaf(s_img.clone());
            let mut noise = SeededNoise::new(seed);
            let out = model
                .forward_features(&mut f, feats, (2, 2), 1.0, &mut noise, false)
                .unwrap();
            tape.value(out.components.o_img).clone()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn extrinsic_swap_is_an_involution() {
        // decode, swap the z_ext halves of two object latent rows, swap
        // back, decode again: bit-identical output
        let (store, model, cfg) = build(Variant::Full);
        let z_bck = random_features(1, cfg.d_bck, 7);
        let latents = random_features(cfg.num_slots, cfg.d_glo + cfg.d_zext, 8);
        let decode = |lat: &Array2<f64>| {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, &store, &mut binding);
            let zb = f.tape.leaf(z_bck.clone());
            let ol = f.tape.leaf(lat.clone());
            let out = model.decode_scene(&mut f, zb, ol, (2, 2)).unwrap();
            (
                tape.value(out.o_img).clone(),
                tape.value(out.masks).clone(),
            )
        };
        let swap_ext = |lat: &Array2<f64>, i: usize, j: usize| {
            let mut out = lat.clone();
            for c in cfg.d_glo..cfg.d_glo + cfg.d_zext {
                out[[i, c]] = lat[[j, c]];
                out[[j, c]] = lat[[i, c]];
            }
            out
        };
        let original = decode(&latents);
        let swapped = swap_ext(&latents, 0, 1);
        assert_ne!(decode(&swapped).0, original.0);
        let restored = swap_ext(&swapped, 0, 1);
        assert_eq!(restored, latents);
        assert_eq!(decode(&restored), original);
    }

    #[test]
    fn stage_losses_are_finite_for_all_variants() {
        for variant in [Variant::Full, Variant::NoDsa, Variant::NoGlo] {
            let (store, model, cfg) = build(variant);
            let s_img = random_features(4, cfg.d_img, 9);
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, &store, &mut binding);
            let mut noise = SeededNoise::new(10);
            let (total, terms, _) = model
                .stage_one_loss(&mut f, &s_img, (2, 2), 1.0, &mut noise, false)
                .unwrap();
            assert!(tape.scalar(total).is_finite());
            assert!(terms.named().iter().all(|(_, v)| v.is_finite()));

            let image = ndarray::Array3::from_shape_fn(
                (cfg.canvas_size, cfg.canvas_size, 3),
                |(i, j, c)| ((i + 2 * j + 3 * c) % 7) as f64 / 7.0,
            );
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, &store, &mut binding);
            let mut noise = SeededNoise::new(11);
            let loss = model
                .stage_two_loss(&mut f, &image, 0.5, &mut noise, true)
                .unwrap();
            assert!(tape.scalar(loss).is_finite());
        }
    }

    #[test]
    fn stage_one_gradients_reach_every_object_model_parameter() {
        let (store, model, cfg) = build(Variant::Full);
        let s_img = random_features(4, cfg.d_img, 12);
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let mut noise = SeededNoise::new(13);
        let (total, _, _) = model
            .stage_one_loss(&mut f, &s_img, (2, 2), 1.0, &mut noise, false)
            .unwrap();
        let grads = tape.backward(total);
        let by_id = binding.gradients(&grads);
        for id in store.ids() {
            if store.param(id).group == ParamGroup::ObjectModel {
                let g = by_id.get(&id);
                assert!(
                    g.is_some_and(|g| g.iter().any(|v| *v != 0.0)),
                    "no gradient for {}",
                    store.param(id).name
                );
            }
        }
    }

    #[test]
    fn patch_labels_take_channel_argmax() {
        let masks = ndarray::array![
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.2, 0.2, 0.6],
            [0.9, 0.05, 0.05]
        ];
        let labels = GoldModel::patch_labels(&masks, (2, 2));
        assert_eq!(labels, ndarray::array![[0u8, 1], [2, 0]]);
    }

    #[test]
    fn hard_identity_sampling_yields_one_hot_decoder_weights() {
        let (store, model, cfg) = build(Variant::Full);
        let s_img = random_features(4, cfg.d_img, 14);
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let feats = f.tape.leaf(s_img);
        let out = model
            .forward_features(&mut f, feats, (2, 2), 0.5, &mut ZeroNoise, true)
            .unwrap();
        let y = tape.value(out.y_dec.unwrap()).clone();
        for row in y.rows() {
            let ones = row.iter().filter(|v| **v == 1.0).count();
            let zeros = row.iter().filter(|v| **v == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, cfg.bank_size - 1);
        }
    }
}
