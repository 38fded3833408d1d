//! Qualitative artifacts from a trained model: prototype renders, scene
//! composition from explicit (identity, extrinsic) pairs, extrinsic swaps
//! between two slots of a real scene, and per-slot decompositions.

use ndarray::{Array2, Array3};

use crate::error::{GoldError, Result};
use crate::eval::eval_scene;
use crate::gocl::compose_scene;
use crate::model::GoldModel;
use crate::rng::{SeededNoise, ZeroNoise};
use crate::scenegen::SceneSample;
use crate::tensor::nn::Fwd;
use crate::tensor::params::{Binding, ParamStore};
use crate::tensor::{Tape, Var};

/// Mask-logit offset that effectively removes a slot from the mixture.
const VACANT_SLOT_BIAS: f64 = -30.0;

/// The model's default pose: the learned extrinsic initializer mean mapped
/// through the extrinsic latent head with zero noise (1×D_zext).
pub fn canonical_extrinsic(store: &ParamStore, model: &GoldModel) -> Result<Array2<f64>> {
    let mean = model.dsa.ext_mean_value(store);
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let x = f.tape.leaf(mean);
    let lat = model.ext_head.forward(&mut f, x, &mut ZeroNoise)?;
    Ok(tape.value(lat.mu).clone())
}

/// The intrinsic decoder input for prototype `c` (0-based): the raw bank
/// row, or a one-hot identity vector when there is no bank.
fn intrinsic_row(f: &mut Fwd, model: &GoldModel, c: usize) -> Var {
    match &model.bank {
        Some(bank) => {
            let rows = bank.rows(f);
            f.tape.slice_rows(rows, c, c + 1)
        }
        None => {
            let width = model.dsa.cfg.c;
            let mut onehot = Array2::zeros((1, width));
            onehot[[0, c]] = 1.0;
            f.tape.leaf(onehot)
        }
    }
}

fn bank_count(model: &GoldModel) -> usize {
    model.dsa.cfg.c
}

/// Render every prototype: one object slot carrying that identity with
/// the canonical extrinsic, over an empty (prior-mean) background.
pub fn prototype_images(
    store: &ParamStore,
    model: &GoldModel,
    grid: (usize, usize),
) -> Result<Vec<Array3<f64>>> {
    let zext = canonical_extrinsic(store, model)?;
    (0..bank_count(model))
        .map(|c| {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, store, &mut binding);
            let z_bck = f.tape.leaf(Array2::zeros((1, model.bck_dec.d_latent)));
            let intrinsic = intrinsic_row(&mut f, model, c);
            let ext = f.tape.leaf(zext.clone());
            let latent = f.tape.concat_cols(&[intrinsic, ext]);
            let comps = model.decode_scene(&mut f, z_bck, latent, grid)?;
            let o_img = tape.value(comps.o_img).clone();
            model.codec.decode_patches(store, &o_img, grid)
        })
        .collect()
}

/// Compose a scene from explicit (1-based prototype, extrinsic latent)
/// pairs. All K slots are decoded; slots beyond the spec get the
/// canonical extrinsic and a mask-logit bias that suppresses them.
pub fn compose_image(
    store: &ParamStore,
    model: &GoldModel,
    spec: &[(usize, Array2<f64>)],
    grid: (usize, usize),
) -> Result<Array3<f64>> {
    let c_max = bank_count(model);
    if spec.len() > model.k {
        return Err(GoldError::invalid(format!(
            "{} objects requested but the model has {} slots",
            spec.len(),
            model.k
        )));
    }
    for (c, z) in spec {
        if *c == 0 || *c > c_max {
            return Err(GoldError::invalid(format!(
                "prototype index {c} out of range 1..={c_max}"
            )));
        }
        if z.dim() != (1, model.ext_head.d_out) {
            return Err(GoldError::ShapeMismatch {
                context: "compose extrinsic",
                expected: format!("(1, {})", model.ext_head.d_out),
                actual: format!("{:?}", z.dim()),
            });
        }
    }
    let canonical = canonical_extrinsic(store, model)?;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let pos = f.tape.leaf(crate::gocl::decoder_posenc(grid));
    let z_bck = f.tape.leaf(Array2::zeros((1, model.bck_dec.d_latent)));
    let (a0, m0) = model.bck_dec.forward(&mut f, z_bck, pos)?;
    let mut appearances = vec![a0];
    let mut logits = vec![m0];
    for slot in 0..model.k {
        let (intrinsic, ext, vacant) = match spec.get(slot) {
            Some((c, z)) => (
                intrinsic_row(&mut f, model, c - 1),
                f.tape.leaf(z.clone()),
                false,
            ),
            None => (
                intrinsic_row(&mut f, model, 0),
                f.tape.leaf(canonical.clone()),
                true,
            ),
        };
        let latent = f.tape.concat_cols(&[intrinsic, ext]);
        let (a, m) = model.obj_dec.forward(&mut f, latent, pos)?;
        let m = if vacant {
            f.tape.add_scalar(m, VACANT_SLOT_BIAS)
        } else {
            m
        };
        appearances.push(a);
        logits.push(m);
    }
    let comps = compose_scene(f.tape, &appearances, &logits);
    let o_img = tape.value(comps.o_img).clone();
    model.codec.decode_patches(store, &o_img, grid)
}

/// Reconstruct a scene, then re-render it with the extrinsic latents of
/// two paired slots exchanged. Returns (before, after) images.
pub fn swap_images(
    store: &ParamStore,
    model: &GoldModel,
    scene: &SceneSample,
    slot_i: usize,
    slot_j: usize,
    tau: f64,
    noise_seed: u64,
) -> Result<(Array3<f64>, Array3<f64>)> {
    if slot_i >= model.k || slot_j >= model.k {
        return Err(GoldError::invalid(format!(
            "slot index out of range 0..{}",
            model.k
        )));
    }
    let se = eval_scene(store, model, scene, tau, noise_seed)?;
    for slot in [slot_i, slot_j] {
        if !se.pairing.iter().any(|p| p.slot == slot) {
            return Err(GoldError::invalid(format!(
                "slot {slot} is not paired with any object"
            )));
        }
    }
    // the same seed reproduces the evaluation forward pass exactly
    let fm = model.codec.encode_image(store, &scene.image)?;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let features = f.tape.leaf(fm.features.clone());
    let mut noise = SeededNoise::new(noise_seed);
    let fwd = model.forward_features(&mut f, features, fm.grid_shape, tau, &mut noise, true)?;
    let before = model
        .codec
        .decode_patches(store, tape.value(fwd.components.o_img), fm.grid_shape)?;

    let mut latents = tape.value(fwd.obj_latents).clone();
    let z_bck = tape.value(fwd.z_bck.sample).clone();
    let d_latent = latents.ncols();
    let ext_start = d_latent - model.ext_head.d_out;
    for c in ext_start..d_latent {
        let tmp = latents[[slot_i, c]];
        latents[[slot_i, c]] = latents[[slot_j, c]];
        latents[[slot_j, c]] = tmp;
    }
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let zb = f.tape.leaf(z_bck);
    let ol = f.tape.leaf(latents);
    let comps = model.decode_scene(&mut f, zb, ol, fm.grid_shape)?;
    let after = model
        .codec
        .decode_patches(store, tape.value(comps.o_img), fm.grid_shape)?;
    Ok((before, after))
}

/// Per-slot breakdown of one scene.
pub struct Decomposition {
    /// Render of the background component alone.
    pub background: Array3<f64>,
    /// One render per object slot: that slot mixed with the background.
    pub slots: Vec<Array3<f64>>,
    /// Segmentation overlay (distinct color per slot).
    pub overlay: Array3<f64>,
    /// The full composed reconstruction.
    pub reconstruction: Array3<f64>,
}

fn slot_color(slot: usize, k: usize) -> [f64; 3] {
    if slot == 0 {
        return [0.15, 0.15, 0.15];
    }
    let h = (slot - 1) as f64 / k.max(1) as f64 * 360.0;
    let x = 1.0 - ((h / 60.0) % 2.0 - 1.0).abs();
    match (h / 60.0) as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Decompose a scene into background-only, per-slot and overlay renders.
pub fn decompose(
    store: &ParamStore,
    model: &GoldModel,
    scene: &SceneSample,
    tau: f64,
    noise_seed: u64,
) -> Result<Decomposition> {
    let fm = model.codec.encode_image(store, &scene.image)?;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let features = f.tape.leaf(fm.features.clone());
    let mut noise = SeededNoise::new(noise_seed);
    let fwd = model.forward_features(&mut f, features, fm.grid_shape, tau, &mut noise, true)?;

    let comps = &fwd.components;
    let bck_feats = f.tape.value(comps.appearances[0]).clone();
    let recon_feats = f.tape.value(comps.o_img).clone();

    // per-slot renders reuse the same forward pass: background channel
    // plus one object channel, renormalized between themselves
    let mut slot_feats = Vec::with_capacity(model.k);
    let appearances = comps.appearances.clone();
    let all_logits = comps.mask_logits;
    for k in 1..=model.k {
        let l0 = f.tape.slice_cols(all_logits, 0, 1);
        let lk = f.tape.slice_cols(all_logits, k, k + 1);
        let pair = compose_scene(f.tape, &[appearances[0], appearances[k]], &[l0, lk]);
        slot_feats.push(f.tape.value(pair.o_img).clone());
    }
    let masks = f.tape.value(comps.masks).clone();
    drop(f);

    let background = model.codec.decode_patches(store, &bck_feats, fm.grid_shape)?;
    let reconstruction = model
        .codec
        .decode_patches(store, &recon_feats, fm.grid_shape)?;
    let slot_images = slot_feats
        .iter()
        .map(|feats| model.codec.decode_patches(store, feats, fm.grid_shape))
        .collect::<Result<Vec<_>>>()?;
    let patch = GoldModel::patch_labels(&masks, fm.grid_shape).mapv(|v| v as usize);
    let (h, w) = scene.labels.dim();
    let labels = crate::metrics::upsample_labels(&patch, h, w);
    let mut overlay = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let color = slot_color(labels[[y, x]], model.k);
            for c in 0..3 {
                overlay[[y, x, c]] = color[c];
            }
        }
    }

    Ok(Decomposition {
        background,
        slots: slot_images,
        overlay,
        reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::model::build_model;
    use crate::scenegen::{generate_split, make_prototype_library, GenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, GoldModel, Vec<SceneSample>, Config) {
        let mut cfg = Config::default();
        cfg.canvas_size = 16;
        cfg.patch_size = 8;
        cfg.num_prototypes = 3;
        cfg.num_backgrounds = 2;
        cfg.objects_min = 1;
        cfg.objects_max = 1;
        cfg.d_img = 8;
        cfg.d_glo = 6;
        cfg.d_int = 4;
        cfg.d_ext = 3;
        cfg.d_key = 4;
        cfg.d_zext = 2;
        cfg.d_bck = 2;
        cfg.enc_hidden = 12;
        cfg.dec_hidden = 12;
        cfg.num_slots = 2;
        cfg.bank_size = 3;
        cfg.dsa_iters = 2;
        let lib =
            make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size).unwrap();
        let scenes = generate_split(&lib, &GenConfig::from(&cfg), 2, 3).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        (store, model, scenes, cfg)
    }

    fn grid(cfg: &Config) -> (usize, usize) {
        let (r, c, _) = cfg.patch_grid();
        (r, c)
    }

    #[test]
    fn one_prototype_image_per_bank_entry() {
        let (store, model, _, cfg) = setup();
        let images = prototype_images(&store, &model, grid(&cfg)).unwrap();
        assert_eq!(images.len(), cfg.bank_size);
        for img in &images {
            assert_eq!(img.dim(), (cfg.canvas_size, cfg.canvas_size, 3));
        }
        let again = prototype_images(&store, &model, grid(&cfg)).unwrap();
        assert_eq!(images, again);
    }

    #[test]
    fn empty_compose_spec_renders_the_background_alone() {
        let (store, model, _, cfg) = setup();
        let composed = compose_image(&store, &model, &[], grid(&cfg)).unwrap();
        // direct background decode: zero latent, no object channels
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let pos = f.tape.leaf(crate::gocl::decoder_posenc(grid(&cfg)));
        let zb = f.tape.leaf(Array2::zeros((1, model.bck_dec.d_latent)));
        let (a0, _) = model.bck_dec.forward(&mut f, zb, pos).unwrap();
        let direct = model
            .codec
            .decode_patches(&store, tape.value(a0), grid(&cfg))
            .unwrap();
        let max_diff = composed
            .iter()
            .zip(direct.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        // vacant slots carry a -30 logit bias, so their mask weight is
        // e^-30-ish rather than exactly zero
        assert!(max_diff < 1e-9, "max diff {max_diff}");
    }

    #[test]
    fn compose_is_deterministic_and_validates_its_spec() {
        let (store, model, _, cfg) = setup();
        let z = Array2::zeros((1, cfg.d_zext));
        let spec = vec![(1usize, z.clone()), (3usize, z.clone())];
        let a = compose_image(&store, &model, &spec, grid(&cfg)).unwrap();
        let b = compose_image(&store, &model, &spec, grid(&cfg)).unwrap();
        assert_eq!(a, b);
        assert!(compose_image(&store, &model, &[(0, z.clone())], grid(&cfg)).is_err());
        assert!(compose_image(&store, &model, &[(4, z.clone())], grid(&cfg)).is_err());
        let too_many = vec![(1, z.clone()), (1, z.clone()), (1, z)];
        assert!(compose_image(&store, &model, &too_many, grid(&cfg)).is_err());
    }

    #[test]
    fn swap_checks_slot_indices_and_pairing() {
        let (store, model, scenes, cfg) = setup();
        let err = swap_images(&store, &model, &scenes[0], 0, 9, cfg.tau_end, 0).unwrap_err();
        assert!(matches!(err, GoldError::InvalidArgument(_)));
        // scenes have one object: at most one slot can be paired, so a
        // swap involving both slots must report the unpaired one
        let err = swap_images(&store, &model, &scenes[0], 0, 1, cfg.tau_end, 0).unwrap_err();
        assert!(matches!(err, GoldError::InvalidArgument(_)));
    }

    #[test]
    fn self_swap_reproduces_the_reconstruction() {
        let (store, model, scenes, cfg) = setup();
        // find a scene/seed whose evaluation pairs some slot
        for (i, scene) in scenes.iter().enumerate() {
            let se = eval_scene(&store, &model, scene, cfg.tau_end, i as u64).unwrap();
            if let Some(p) = se.pairing.first() {
                let (before, after) =
                    swap_images(&store, &model, scene, p.slot, p.slot, cfg.tau_end, i as u64)
                        .unwrap();
                assert_eq!(before, after);
                return;
            }
        }
        // untrained models may pair nothing; the property is then vacuous
    }

    #[test]
    fn decomposition_has_one_panel_per_slot_and_recomposes() {
        let (store, model, scenes, cfg) = setup();
        let d = decompose(&store, &model, &scenes[0], cfg.tau_end, 5).unwrap();
        assert_eq!(d.slots.len(), cfg.num_slots);
        assert_eq!(d.overlay.dim(), (cfg.canvas_size, cfg.canvas_size, 3));
        assert_eq!(
            d.background.dim(),
            (cfg.canvas_size, cfg.canvas_size, 3)
        );
        // overlay colors come from the fixed palette
        for y in 0..cfg.canvas_size {
            for x in 0..cfg.canvas_size {
                let px = [d.overlay[[y, x, 0]], d.overlay[[y, x, 1]], d.overlay[[y, x, 2]]];
                assert!((0..=cfg.num_slots).any(|s| slot_color(s, cfg.num_slots) == px));
            }
        }
    }

    #[test]
    fn masked_appearance_sum_equals_the_composed_map() {
        // Eq-style identity on the raw forward pass: sum over channels of
        // appearance × mask equals the composed feature map
        let (store, model, scenes, cfg) = setup();
        let fm = model.codec.encode_image(&store, &scenes[0].image).unwrap();
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let feats = f.tape.leaf(fm.features.clone());
        let mut noise = SeededNoise::new(6);
        let fwd = model
            .forward_features(&mut f, feats, fm.grid_shape, cfg.tau_end, &mut noise, true)
            .unwrap();
        let masks = tape.value(fwd.components.masks).clone();
        let mut manual = Array2::<f64>::zeros(tape.value(fwd.components.o_img).dim());
        for (k, a) in fwd.components.appearances.iter().enumerate() {
            let av = tape.value(*a);
            for n in 0..manual.nrows() {
                for dcol in 0..manual.ncols() {
                    manual[[n, dcol]] += av[[n, dcol]] * masks[[n, k]];
                }
            }
        }
        let o = tape.value(fwd.components.o_img);
        for (a, b) in manual.iter().zip(o.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
