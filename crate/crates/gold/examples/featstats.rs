//! Scratch analysis: geometry of codec features — content vs positional
//! signal, and object/background contrast at patch level.

use gold::checkpoint::Checkpoint;
use gold::config::Config;
use gold::model::{build_model, GoldModel};
use gold::rng::derive_seed;
use gold::scenegen::{generate_split, make_prototype_library, GenConfig};
use gold::tensor::nn::grid_posenc;
use gold::tensor::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg_path = &args[1];
    let ckpt_path = &args[2];
    let mut cfg = Config::from_file(std::path::Path::new(cfg_path)).unwrap();
    let overrides: Vec<String> = args[3..].to_vec();
    cfg.apply_overrides(&overrides).unwrap();

    let lib = make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size).unwrap();
    let test = generate_split(
        &lib,
        &GenConfig::from(&cfg),
        derive_seed(cfg.data_seed, 0x7E57),
        8,
    )
    .unwrap();

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model: GoldModel = build_model(&mut store, &mut rng, &cfg).unwrap();
    Checkpoint::load(std::path::Path::new(ckpt_path))
        .unwrap()
        .apply(&mut store)
        .unwrap();

    let mut bg_feats: Vec<Vec<f64>> = Vec::new();
    let mut obj_feats: Vec<(usize, Vec<f64>)> = Vec::new(); // (identity, content)
    for scene in &test {
        let fm = model.codec.encode_image(&store, &scene.image).unwrap();
        let (gr, gc) = fm.grid_shape;
        let pos = grid_posenc(gr, gc, fm.features.ncols());
        let content = &fm.features - &pos;
        // majority patch label
        for pr in 0..gr {
            for pc in 0..gc {
                let mut counts = vec![0usize; 16];
                for y in pr * cfg.patch_size..(pr + 1) * cfg.patch_size {
                    for x in pc * cfg.patch_size..(pc + 1) * cfg.patch_size {
                        counts[scene.labels[[y, x]] as usize] += 1;
                    }
                }
                let lab = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, c)| **c)
                    .unwrap()
                    .0;
                let row: Vec<f64> = content.row(pr * gc + pc).to_vec();
                if lab == 0 {
                    bg_feats.push(row);
                } else {
                    obj_feats.push((scene.identities[lab - 1], row));
                }
            }
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mean_norm = |vs: &[Vec<f64>]| vs.iter().map(|v| norm(v)).sum::<f64>() / vs.len() as f64;
    let pos_norm = {
        let pos = grid_posenc(16, 16, cfg.d_img);
        pos.rows().into_iter().map(|r| norm(r.as_slice().unwrap())).sum::<f64>() / 256.0
    };
    println!("posenc mean patch norm      {pos_norm:.3}");
    println!("background content norm     {:.3} (n={})", mean_norm(&bg_feats), bg_feats.len());
    let objs: Vec<Vec<f64>> = obj_feats.iter().map(|(_, v)| v.clone()).collect();
    println!("object content norm         {:.3} (n={})", mean_norm(&objs), objs.len());

    // mean pairwise distances: same identity vs object-background
    let dist = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    fn sample(v: &[Vec<f64>], n: usize) -> Vec<&Vec<f64>> {
        v.iter().step_by((v.len() / n).max(1)).collect()
    }
    let bg_s = sample(&bg_feats, 60);
    let ob_s: Vec<(usize, &Vec<f64>)> = obj_feats.iter().step_by((obj_feats.len() / 60).max(1)).map(|(i, v)| (*i, v)).collect();
    let mut same = (0.0, 0usize);
    let mut diff = (0.0, 0usize);
    let mut ob_bg = (0.0, 0usize);
    for (i, (ia, va)) in ob_s.iter().enumerate() {
        for (ib, vb) in ob_s.iter().skip(i + 1) {
            let d = dist(va, vb);
            if ia == ib {
                same = (same.0 + d, same.1 + 1);
            } else {
                diff = (diff.0 + d, diff.1 + 1);
            }
        }
        for vb in &bg_s {
            ob_bg = (ob_bg.0 + dist(va, vb), ob_bg.1 + 1);
        }
    }
    let mut bg_bg = (0.0, 0usize);
    for (i, va) in bg_s.iter().enumerate() {
        for vb in bg_s.iter().skip(i + 1) {
            bg_bg = (bg_bg.0 + dist(va, vb), bg_bg.1 + 1);
        }
    }
    println!("mean dist same-identity obj {:.3}", same.0 / same.1.max(1) as f64);
    println!("mean dist cross-identity    {:.3}", diff.0 / diff.1.max(1) as f64);
    println!("mean dist object-background {:.3}", ob_bg.0 / ob_bg.1.max(1) as f64);
    println!("mean dist bg-bg             {:.3}", bg_bg.0 / bg_bg.1.max(1) as f64);

    // mixture diagnostics: who explains which patch class
    use gold::rng::SeededNoise;
    use gold::tensor::nn::Fwd;
    use gold::tensor::params::Binding;
    use gold::tensor::Tape;
    let mut acc: std::collections::HashMap<&str, (f64, f64, f64, usize)> =
        std::collections::HashMap::new();
    for (si, scene) in test.iter().enumerate() {
        let fm = model.codec.encode_image(&store, &scene.image).unwrap();
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let feats = f.tape.leaf(fm.features.clone());
        let mut noise = SeededNoise::new(derive_seed(11, si as u64));
        let fwd = model
            .forward_features(&mut f, feats, fm.grid_shape, cfg.tau_end, &mut noise, true)
            .unwrap();
        let masks = tape.value(fwd.components.masks).clone();
        let apps: Vec<ndarray::Array2<f64>> = fwd
            .components
            .appearances
            .iter()
            .map(|a| tape.value(*a).clone())
            .collect();
        let (gr, gc) = fm.grid_shape;
        for pr in 0..gr {
            for pc in 0..gc {
                let n = pr * gc + pc;
                let mut counts = vec![0usize; 16];
                for y in pr * cfg.patch_size..(pr + 1) * cfg.patch_size {
                    for x in pc * cfg.patch_size..(pc + 1) * cfg.patch_size {
                        counts[scene.labels[[y, x]] as usize] += 1;
                    }
                }
                let lab = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
                let class = if lab == 0 { "bg " } else { "obj" };
                let target = fm.features.row(n);
                let r0: f64 = (&target - &apps[0].row(n)).iter().map(|x| x * x).sum();
                let rbest = apps[1..]
                    .iter()
                    .map(|a| (&target - &a.row(n)).iter().map(|x| x * x).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                let e = acc.entry(class).or_insert((0.0, 0.0, 0.0, 0));
                e.0 += r0;
                e.1 += rbest;
                e.2 += masks[[n, 0]];
                e.3 += 1;
            }
        }
    }
    for (class, (r0, rb, m0, n)) in &acc {
        let n = *n as f64;
        println!(
            "{class}: bck resid {:.2}  best-slot resid {:.2}  m0 {:.3}",
            r0 / n,
            rb / n,
            m0 / n
        );
    }
}
