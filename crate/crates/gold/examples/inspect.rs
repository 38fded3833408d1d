//! Scratch analysis: load a checkpoint and print per-scene segmentation detail.

use gold::checkpoint::Checkpoint;
use gold::config::Config;
use gold::eval::eval_scene;
use gold::model::{build_model, GoldModel};
use gold::rng::derive_seed;
use gold::scenegen::{generate_split, make_prototype_library, GenConfig};
use gold::tensor::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg_path = &args[1];
    let ckpt_path = &args[2];
    let n_scenes: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);

    let mut cfg = Config::from_file(std::path::Path::new(cfg_path)).unwrap();
    let overrides: Vec<String> = args[4..].to_vec();
    cfg.apply_overrides(&overrides).unwrap();
    let lib = make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size).unwrap();
    let test = generate_split(
        &lib,
        &GenConfig::from(&cfg),
        derive_seed(cfg.data_seed, 0x7E57),
        cfg.test_scenes,
    )
    .unwrap();

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model: GoldModel = build_model(&mut store, &mut rng, &cfg).unwrap();
    Checkpoint::load(std::path::Path::new(ckpt_path))
        .unwrap()
        .apply(&mut store)
        .unwrap();

    for (i, scene) in test.iter().take(n_scenes).enumerate() {
        let se = eval_scene(&store, &model, scene, cfg.tau_end, derive_seed(7, i as u64)).unwrap();
        let mut hist = vec![0usize; model.k + 1];
        for v in se.pred_labels.iter() {
            hist[(*v).min(model.k)] += 1;
        }
        println!(
            "scene {i}: true_ids {:?} hist {:?} ari_o {:.3} miou {:.3}",
            scene.identities, hist, se.ari_o, se.miou
        );
        for p in &se.pairing {
            println!(
                "   slot {} -> object {} iou {:.3}  pred_proto {} true_proto {}",
                p.slot, p.object, p.iou, se.slot_prototypes[p.slot], scene.identities[p.object]
            );
        }
        // coarse view: patch-level predicted labels vs truth majority
        let (h, w) = se.pred_labels.dim();
        let step = cfg.patch_size;
        for py in (0..h).step_by(step) {
            let mut pred_row = String::new();
            let mut true_row = String::new();
            for px in (0..w).step_by(step) {
                pred_row.push(char::from_digit(se.pred_labels[[py, px]] as u32, 10).unwrap());
                true_row.push(char::from_digit(scene.labels[[py, px]] as u32, 10).unwrap());
            }
            println!("   {pred_row}   {true_row}");
        }
    }
}
