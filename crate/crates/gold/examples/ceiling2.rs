//! Scratch: metric ceilings of patch-majority segmentations for dataset
//! design candidates.

use gold::config::Config;
use gold::metrics::{ari, miou, upsample_labels};
use gold::rng::derive_seed;
use gold::scenegen::{generate_split, make_prototype_library, GenConfig};
use ndarray::Array2;

fn main() {
    for (smin, smax, omin, omax) in [
        (0.8, 1.4, 2, 3),
        (1.0, 1.6, 2, 3),
        (1.2, 1.8, 2, 3),
        (1.5, 2.5, 2, 3),
    ] {
        let mut cfg = Config::default();
        cfg.canvas_size = 64;
        cfg.patch_size = 4;
        cfg.num_prototypes = 4;
        cfg.num_backgrounds = 2;
        cfg.objects_min = omin;
        cfg.objects_max = omax;
        cfg.scale_min = smin;
        cfg.scale_max = smax;
        let lib =
            make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size).unwrap();
        let test = generate_split(
            &lib,
            &GenConfig::from(&cfg),
            derive_seed(cfg.data_seed, 0x7E57),
            100,
        )
        .unwrap();
        let (mut aa, mut ao, mut mi, mut objfrac) = (0.0, 0.0, 0.0, 0.0);
        for scene in &test {
            let (h, w) = scene.labels.dim();
            let (gr, gc) = (h / cfg.patch_size, w / cfg.patch_size);
            let mut patch = Array2::zeros((gr, gc));
            for pr in 0..gr {
                for pc in 0..gc {
                    let mut counts = vec![0usize; 16];
                    for y in pr * cfg.patch_size..(pr + 1) * cfg.patch_size {
                        for x in pc * cfg.patch_size..(pc + 1) * cfg.patch_size {
                            counts[scene.labels[[y, x]] as usize] += 1;
                        }
                    }
                    patch[[pr, pc]] =
                        counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
                }
            }
            let pred = upsample_labels(&patch, h, w);
            let truth = scene.labels.mapv(|v| v as usize);
            aa += ari(&pred, &truth, false).unwrap();
            ao += ari(&pred, &truth, true).unwrap();
            mi += miou(&pred, &truth).unwrap();
            objfrac +=
                truth.iter().filter(|v| **v > 0).count() as f64 / (h * w) as f64;
        }
        let n = test.len() as f64;
        println!(
            "scale {smin}-{smax} obj {omin}-{omax}: ARI-A {:.3} ARI-O {:.3} mIoU {:.3} objfrac {:.3}",
            aa / n,
            ao / n,
            mi / n,
            objfrac / n
        );
    }
}
