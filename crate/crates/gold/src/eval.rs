//! Held-out evaluation: run the model over scenes with hard identity
//! sampling, derive pixel-level segmentations and slot identities, and
//! score them against the generator's ground truth.

use ndarray::{Array2, Array3};

use crate::config::Config;
use crate::error::Result;
use crate::metrics::{
    ari, identity_accuracy, match_slots_to_objects, miou, EvalRun, IdentityPair,
    PairingThresholds, SlotPairing,
};
use crate::model::GoldModel;
use crate::rng::{derive_seed, SeededNoise};
use crate::scenegen::SceneSample;
use crate::tensor::nn::Fwd;
use crate::tensor::params::{Binding, ParamStore};
use crate::tensor::Tape;

/// Everything scored for one scene, kept around for inspection tools.
pub struct SceneEval {
    /// Pixel-level predicted segmentation, 0 = background, k = slot k.
    pub pred_labels: Array2<usize>,
    /// Predicted prototype index per object slot (1-based).
    pub slot_prototypes: Vec<usize>,
    pub pairing: Vec<SlotPairing>,
    /// (predicted prototype, true prototype) per paired object.
    pub identity_pairs: Vec<IdentityPair>,
    pub ari_a: f64,
    pub ari_o: f64,
    pub miou: f64,
}

/// Binary per-channel masks from a label map with channels `0..=k`.
fn labels_to_masks(labels: &Array2<usize>, k: usize) -> Array3<u8> {
    let (h, w) = labels.dim();
    let mut m = Array3::zeros((k + 1, h, w));
    for y in 0..h {
        for x in 0..w {
            let c = labels[[y, x]].min(k);
            m[[c, y, x]] = 1;
        }
    }
    m
}

/// Run one scene through the model (hard identity sampling, seeded noise)
/// and score segmentation and identity predictions.
pub fn eval_scene(
    store: &ParamStore,
    model: &GoldModel,
    scene: &SceneSample,
    tau: f64,
    noise_seed: u64,
) -> Result<SceneEval> {
    let fm = model.codec.encode_image(store, &scene.image)?;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let mut f = Fwd::new(&mut tape, store, &mut binding);
    let features = f.tape.leaf(fm.features.clone());
    let mut noise = SeededNoise::new(noise_seed);
    let fwd = model.forward_features(&mut f, features, fm.grid_shape, tau, &mut noise, true)?;

    let masks = tape.value(fwd.components.masks).clone();
    let patch = GoldModel::patch_labels(&masks, fm.grid_shape).mapv(|v| v as usize);
    let (h, w) = scene.labels.dim();
    let pred_labels = crate::metrics::upsample_labels(&patch, h, w);
    let truth = scene.labels.mapv(|v| v as usize);

    let gamma = tape.value(fwd.gamma).clone();
    let slot_prototypes: Vec<usize> = gamma
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i + 1)
                .unwrap()
        })
        .collect();

    let pred_masks = labels_to_masks(&pred_labels, model.k);
    let truth_masks = scene.masks();
    let pairing = match_slots_to_objects(&pred_masks, &truth_masks, PairingThresholds::default());
    let identity_pairs: Vec<IdentityPair> = pairing
        .iter()
        .map(|p| (slot_prototypes[p.slot], scene.identities[p.object]))
        .collect();

    Ok(SceneEval {
        ari_a: ari(&pred_labels, &truth, false)?,
        ari_o: ari(&pred_labels, &truth, true)?,
        miou: miou(&pred_labels, &truth)?,
        pred_labels,
        slot_prototypes,
        pairing,
        identity_pairs,
    })
}

/// Score a whole split: segmentation metrics averaged over scenes,
/// identity accuracy under one dataset-wide prototype bijection. With no
/// paired slots anywhere (a completely untrained model) the accuracy is 0.
pub fn evaluate(
    store: &ParamStore,
    model: &GoldModel,
    scenes: &[SceneSample],
    cfg: &Config,
    run_seed: u64,
) -> Result<EvalRun> {
    let mut ari_a = 0.0;
    let mut ari_o = 0.0;
    let mut miou_sum = 0.0;
    let mut pairs: Vec<IdentityPair> = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let se = eval_scene(
            store,
            model,
            scene,
            cfg.tau_end,
            derive_seed(run_seed, i as u64),
        )?;
        ari_a += se.ari_a;
        ari_o += se.ari_o;
        miou_sum += se.miou;
        pairs.extend(se.identity_pairs);
    }
    let n = scenes.len() as f64;
    let acc = if pairs.is_empty() {
        0.0
    } else {
        identity_accuracy(&pairs, cfg.num_prototypes)?
    };
    Ok(EvalRun {
        ari_a: ari_a / n,
        ari_o: ari_o / n,
        miou: miou_sum / n,
        acc,
    })
}

/// Repeat the evaluation with `cfg.eval_runs` noise seeds, for mean/std
/// reporting.
pub fn evaluate_runs(
    store: &ParamStore,
    model: &GoldModel,
    scenes: &[SceneSample],
    cfg: &Config,
) -> Result<Vec<EvalRun>> {
    (0..cfg.eval_runs.max(1))
        .map(|r| evaluate(store, model, scenes, cfg, derive_seed(cfg.seed ^ 0xE7A1, r as u64)))
        .collect()
}
