//! Segmentation and identification metrics: ARI (all pixels / objects
//! only), mIoU under optimal matching, slot-object pairing, cross-scene
//! identity accuracy, and report formatting.

pub mod hungarian;

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array2, Array3};

use crate::error::{GoldError, Result};
use hungarian::max_weight_assignment;

/// Adjusted Rand index via the pair-counting contingency formula.
///
/// With `objects_only`, pixels whose ground-truth label is 0 are excluded
/// before counting.
pub fn ari(pred: &Array2<usize>, truth: &Array2<usize>, objects_only: bool) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(GoldError::ShapeMismatch {
            context: "ari",
            expected: format!("{:?}", truth.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    let pairs: Vec<(usize, usize)> = pred
        .iter()
        .zip(truth.iter())
        .filter(|&(_, &t)| !objects_only || t != 0)
        .map(|(&p, &t)| (p, t))
        .collect();
    if pairs.is_empty() {
        return Err(GoldError::UndefinedMetric(
            "ari: no pixels after restriction".into(),
        ));
    }
    let mut contingency: HashMap<(usize, usize), f64> = HashMap::new();
    let mut row_sums: HashMap<usize, f64> = HashMap::new();
    let mut col_sums: HashMap<usize, f64> = HashMap::new();
    for &(p, t) in &pairs {
        *contingency.entry((p, t)).or_default() += 1.0;
        *row_sums.entry(p).or_default() += 1.0;
        *col_sums.entry(t).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = contingency.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = row_sums.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = col_sums.values().map(|&n| choose2(n)).sum();
    let total = choose2(pairs.len() as f64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        // both labelings are single-cluster (or matched degenerate): perfect
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Mean IoU under an optimal one-to-one matching between predicted and
/// true segments. Unmatched true segments contribute 0; the mean is over
/// true segments.
pub fn miou(pred: &Array2<usize>, truth: &Array2<usize>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(GoldError::ShapeMismatch {
            context: "miou",
            expected: format!("{:?}", truth.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    let mut pred_labels: Vec<usize> = pred.iter().copied().collect();
    pred_labels.sort_unstable();
    pred_labels.dedup();
    let mut truth_labels: Vec<usize> = truth.iter().copied().collect();
    truth_labels.sort_unstable();
    truth_labels.dedup();

    let mut iou = Array2::zeros((truth_labels.len(), pred_labels.len()));
    for (ti, &t) in truth_labels.iter().enumerate() {
        for (pi, &p) in pred_labels.iter().enumerate() {
            let mut inter = 0.0;
            let mut uni = 0.0;
            for (&pv, &tv) in pred.iter().zip(truth.iter()) {
                let in_p = pv == p;
                let in_t = tv == t;
                if in_p && in_t {
                    inter += 1.0;
                }
                if in_p || in_t {
                    uni += 1.0;
                }
            }
            iou[[ti, pi]] = if uni > 0.0 { inter / uni } else { 0.0 };
        }
    }
    let total = if truth_labels.len() <= pred_labels.len() {
        let assign = max_weight_assignment(&iou);
        assign
            .iter()
            .enumerate()
            .map(|(t, &p)| iou[[t, p]])
            .sum::<f64>()
    } else {
        let assign = max_weight_assignment(&iou.t().to_owned());
        assign
            .iter()
            .enumerate()
            .map(|(p, &t)| iou[[t, p]])
            .sum::<f64>()
    };
    Ok(total / truth_labels.len() as f64)
}

/// One slot paired with one ground-truth object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotPairing {
    /// Object-slot index (0-based over the K object slots).
    pub slot: usize,
    /// Ground-truth object index (0-based).
    pub object: usize,
    pub iou: f64,
}

/// Thresholds below which a slot stays unpaired.
#[derive(Clone, Copy, Debug)]
pub struct PairingThresholds {
    pub min_iou: f64,
    /// Minimum slot mask area as a fraction of the image.
    pub min_area: f64,
}

impl Default for PairingThresholds {
    fn default() -> Self {
        Self {
            min_iou: 0.1,
            min_area: 0.01,
        }
    }
}

/// Optimal IoU assignment between predicted object masks (channels 1..=K
/// of `pred_masks`) and true object masks (channels 1..=K_gt of
/// `truth_masks`); channel 0 is background on both sides.
pub fn match_slots_to_objects(
    pred_masks: &Array3<u8>,
    truth_masks: &Array3<u8>,
    thresholds: PairingThresholds,
) -> Vec<SlotPairing> {
    let k = pred_masks.dim().0 - 1;
    let k_gt = truth_masks.dim().0 - 1;
    if k == 0 || k_gt == 0 {
        return vec![];
    }
    let npix = (pred_masks.dim().1 * pred_masks.dim().2) as f64;
    let mut iou = Array2::zeros((k, k_gt));
    let mut areas = vec![0.0; k];
    for s in 0..k {
        let pm = pred_masks.index_axis(ndarray::Axis(0), s + 1);
        areas[s] = pm.iter().map(|&v| v as f64).sum::<f64>() / npix;
        for o in 0..k_gt {
            let tm = truth_masks.index_axis(ndarray::Axis(0), o + 1);
            let mut inter = 0.0;
            let mut uni = 0.0;
            for (&p, &t) in pm.iter().zip(tm.iter()) {
                if p != 0 && t != 0 {
                    inter += 1.0;
                }
                if p != 0 || t != 0 {
                    uni += 1.0;
                }
            }
            iou[[s, o]] = if uni > 0.0 { inter / uni } else { 0.0 };
        }
    }
    let raw: Vec<(usize, usize)> = if k <= k_gt {
        max_weight_assignment(&iou)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        max_weight_assignment(&iou.t().to_owned())
            .into_iter()
            .enumerate()
            .map(|(o, s)| (s, o))
            .collect()
    };
    raw.into_iter()
        .filter(|&(s, o)| iou[[s, o]] >= thresholds.min_iou && areas[s] >= thresholds.min_area)
        .map(|(s, o)| SlotPairing {
            slot: s,
            object: o,
            iou: iou[[s, o]],
        })
        .collect()
}

/// One paired object's predicted and true prototype indices (1-based).
pub type IdentityPair = (usize, usize);

/// Identity accuracy under a single dataset-wide prototype bijection:
/// the bijection between predicted and true prototype indices maximizing
/// total agreement over all pairs, via assignment on the C×C
/// co-occurrence matrix.
pub fn identity_accuracy(pairs: &[IdentityPair], c: usize) -> Result<f64> {
    Ok(identity_accuracy_with_mapping(pairs, c)?.0)
}

/// As [`identity_accuracy`], also returning the bijection
/// `mapping[pred - 1] = true_proto` (1-based values).
pub fn identity_accuracy_with_mapping(
    pairs: &[IdentityPair],
    c: usize,
) -> Result<(f64, Vec<usize>)> {
    if pairs.is_empty() {
        return Err(GoldError::UndefinedMetric(
            "identity accuracy on empty evaluation set".into(),
        ));
    }
    let mut counts = Array2::zeros((c, c));
    for &(p, t) in pairs {
        if p == 0 || p > c || t == 0 || t > c {
            return Err(GoldError::invalid(format!(
                "prototype index out of range 1..={c}: ({p}, {t})"
            )));
        }
        counts[[p - 1, t - 1]] += 1.0;
    }
    let assign = max_weight_assignment(&counts);
    let agree: f64 = assign.iter().enumerate().map(|(p, &t)| counts[[p, t]]).sum();
    let mapping = assign.iter().map(|&t| t + 1).collect();
    Ok((agree / pairs.len() as f64, mapping))
}

/// Per-scene variant: an independent bijection per scene, averaged by
/// pair count. Kept behind this separate entry point for comparison.
pub fn identity_accuracy_per_scene(scenes: &[Vec<IdentityPair>], c: usize) -> Result<f64> {
    let total: usize = scenes.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(GoldError::UndefinedMetric(
            "identity accuracy on empty evaluation set".into(),
        ));
    }
    let mut agree = 0.0;
    for scene in scenes.iter().filter(|s| !s.is_empty()) {
        let (acc, _) = identity_accuracy_with_mapping(scene, c)?;
        agree += acc * scene.len() as f64;
    }
    Ok(agree / total as f64)
}

/// Nearest-neighbor upsampling of a patch-level label grid to pixels.
pub fn upsample_labels(patch_labels: &Array2<usize>, h: usize, w: usize) -> Array2<usize> {
    let (gr, gc) = patch_labels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let py = (y * gr / h).min(gr - 1);
        let px = (x * gc / w).min(gc - 1);
        patch_labels[[py, px]]
    })
}

/// Metrics from one evaluation run.
#[derive(Clone, Copy, Debug)]
pub struct EvalRun {
    pub ari_a: f64,
    pub ari_o: f64,
    pub miou: f64,
    pub acc: f64,
}

impl EvalRun {
    fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("ARI-A", self.ari_a),
            ("ARI-O", self.ari_o),
            ("mIoU", self.miou),
            ("ACC", self.acc),
        ]
    }
}

/// Mean ± std aggregation of several evaluation runs, with plain-text and
/// comma-separated renderings.
#[derive(Clone, Debug)]
pub struct Report {
    pub variant: String,
    pub dataset: String,
    /// (metric, mean, std) in fixed column order.
    pub rows: Vec<(String, f64, f64)>,
}

pub fn report(runs: &[EvalRun], variant: &str, dataset: &str) -> Report {
    let names = ["ARI-A", "ARI-O", "mIoU", "ACC"];
    let rows = names
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = runs
                .iter()
                .map(|r| r.fields().iter().find(|(n, _)| *n == name).unwrap().1)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let var = vals
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / vals.len().max(1) as f64;
            (name.to_string(), mean, var.sqrt())
        })
        .collect();
    Report {
        variant: variant.to_string(),
        dataset: dataset.to_string(),
        rows,
    }
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "variant: {}  dataset: {}", self.variant, self.dataset).unwrap();
        writeln!(out, "{:<8} {:>12} {:>12}", "metric", "mean", "std").unwrap();
        for (name, mean, std) in &self.rows {
            writeln!(out, "{name:<8} {mean:>12.6} {std:>12.6}").unwrap();
        }
        out
    }

    /// One comma-separated row per (variant, dataset, metric, mean, std).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, mean, std) in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.variant, self.dataset, name, mean, std
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Direct pair-counting ARI: agreement over all pixel pairs.
    fn ari_pair_counting(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let mut same_both = 0.0f64;
        let mut same_p = 0.0f64;
        let mut same_t = 0.0f64;
        let mut total = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let sp = pred[i] == pred[j];
                let st = truth[i] == truth[j];
                if sp && st {
                    same_both += 1.0;
                }
                if sp {
                    same_p += 1.0;
                }
                if st {
                    same_t += 1.0;
                }
                total += 1.0;
            }
        }
        let expected = same_p * same_t / total;
        let max_index = 0.5 * (same_p + same_t);
        if (max_index - expected).abs() < 1e-12 {
            return 1.0;
        }
        (same_both - expected) / (max_index - expected)
    }

    fn grid(v: &[usize]) -> Array2<usize> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn ari_perfect_agreement() {
        let a = grid(&[0, 0, 1, 1, 2]);
        assert_eq!(ari(&a, &a, false).unwrap(), 1.0);
    }

    #[test]
    fn ari_label_permutation_invariance() {
        let p = grid(&[0, 0, 1, 1]);
        let t = grid(&[1, 1, 0, 0]);
        assert_eq!(ari(&p, &t, false).unwrap(), 1.0);
    }

    #[test]
    fn ari_worked_example() {
        let p = grid(&[0, 0, 1, 1]);
        let t = grid(&[0, 1, 0, 1]);
        assert!((ari(&p, &t, false).unwrap() - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn ari_matches_pair_counting_exhaustively() {
        // all labelings of up to 6 pixels with up to 3 labels
        for n in 2..=6usize {
            let count = 3usize.pow(n as u32);
            for pi in 0..count {
                for ti in 0..count {
                    let dec = |mut x: usize| -> Vec<usize> {
                        (0..n)
                            .map(|_| {
                                let d = x % 3;
                                x /= 3;
                                d
                            })
                            .collect()
                    };
                    let p = dec(pi);
                    let t = dec(ti);
                    let a = ari(&grid(&p), &grid(&t), false).unwrap();
                    let b = ari_pair_counting(&p, &t);
                    assert!((a - b).abs() < 1e-12, "{p:?} vs {t:?}: {a} vs {b}");
                }
                if n >= 5 && pi > 30 {
                    break; // keep the exhaustive core small at larger n
                }
            }
        }
    }

    #[test]
    fn ari_objects_only_restriction() {
        let t = grid(&[0, 0, 1, 2]);
        let p = grid(&[5, 6, 1, 2]);
        // restricted to truth != 0, both are [1,2]-style perfect
        assert_eq!(ari(&p, &t, true).unwrap(), 1.0);
        let empty_t = grid(&[0, 0]);
        assert!(matches!(
            ari(&grid(&[1, 2]), &empty_t, true),
            Err(GoldError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn miou_identity_and_empty_prediction() {
        let t = array![[0, 0, 1, 1], [0, 0, 1, 1]];
        assert_eq!(miou(&t, &t).unwrap(), 1.0);
        let p = Array2::zeros((2, 4));
        // background IoU = 4/8 = 0.5, object unmatched -> (0.5 + 0)/2
        assert!((miou(&p, &t).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn miou_matches_brute_force_on_toy_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Array2::from_shape_fn((3, 3), |_| rng.gen_range(0..3usize));
            let t = Array2::from_shape_fn((3, 3), |_| rng.gen_range(0..3usize));
            let fast = miou(&p, &t).unwrap();
            let slow = brute_force_miou(&p, &t);
            assert!((fast - slow).abs() < 1e-12, "{p:?} {t:?}: {fast} vs {slow}");
        }
    }

    fn brute_force_miou(pred: &Array2<usize>, truth: &Array2<usize>) -> f64 {
        let mut pl: Vec<usize> = pred.iter().copied().collect();
        pl.sort_unstable();
        pl.dedup();
        let mut tl: Vec<usize> = truth.iter().copied().collect();
        tl.sort_unstable();
        tl.dedup();
        let iou = |p: usize, t: usize| {
            let mut inter = 0.0;
            let mut uni = 0.0;
            for (&pv, &tv) in pred.iter().zip(truth.iter()) {
                if (pv == p) && (tv == t) {
                    inter += 1.0;
                }
                if (pv == p) || (tv == t) {
                    uni += 1.0;
                }
            }
            inter / uni
        };
        // enumerate all injective maps from the smaller side
        let mut best = 0.0f64;
        if tl.len() <= pl.len() {
            enumerate_assign(&tl, &pl, &mut vec![], &mut |m| {
                let s: f64 = m.iter().enumerate().map(|(ti, &pi)| iou(pl[pi], tl[ti])).sum();
                best = best.max(s);
            });
        } else {
            enumerate_assign(&pl, &tl, &mut vec![], &mut |m| {
                let s: f64 = m.iter().enumerate().map(|(pi, &ti)| iou(pl[pi], tl[ti])).sum();
                best = best.max(s);
            });
        }
        best / tl.len() as f64
    }

    fn enumerate_assign(
        small: &[usize],
        big: &[usize],
        acc: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if acc.len() == small.len() {
            f(acc);
            return;
        }
        for c in 0..big.len() {
            if !acc.contains(&c) {
                acc.push(c);
                enumerate_assign(small, big, acc, f);
                acc.pop();
            }
        }
    }

    fn masks_from_labels(labels: &Array2<usize>, k: usize) -> Array3<u8> {
        let (h, w) = labels.dim();
        let mut m = Array3::zeros((k + 1, h, w));
        for y in 0..h {
            for x in 0..w {
                let l = labels[[y, x]].min(k);
                m[[l, y, x]] = 1;
            }
        }
        m
    }

    #[test]
    fn perfect_masks_pair_identically() {
        let labels = array![[1, 1, 0, 0], [2, 2, 0, 0], [3, 3, 0, 0], [0, 0, 0, 0]];
        let m = masks_from_labels(&labels, 3);
        let pairs = match_slots_to_objects(&m, &m, PairingThresholds::default());
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_eq!(p.slot, p.object);
            assert_eq!(p.iou, 1.0);
        }
    }

    #[test]
    fn empty_slot_stays_unpaired() {
        let truth = masks_from_labels(&array![[1, 1], [0, 0]], 1);
        // two slots: slot 1 matches, slot 2 empty
        let pred = masks_from_labels(&array![[1, 1], [0, 0]], 2);
        let pairs = match_slots_to_objects(&pred, &truth, PairingThresholds::default());
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].slot, 0);
    }

    #[test]
    fn pairing_matches_exhaustive_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let k = rng.gen_range(1..=4usize);
            let kg = rng.gen_range(1..=4usize);
            let pred_labels = Array2::from_shape_fn((4, 4), |_| rng.gen_range(0..=k));
            let truth_labels = Array2::from_shape_fn((4, 4), |_| rng.gen_range(0..=kg));
            let pm = masks_from_labels(&pred_labels, k);
            let tm = masks_from_labels(&truth_labels, kg);
            let loose = PairingThresholds {
                min_iou: 0.0,
                min_area: 0.0,
            };
            let pairs = match_slots_to_objects(&pm, &tm, loose);
            let fast: f64 = pairs.iter().map(|p| p.iou).sum();
            // brute force max total IoU
            let iou = |s: usize, o: usize| {
                let a = pm.index_axis(ndarray::Axis(0), s + 1);
                let b = tm.index_axis(ndarray::Axis(0), o + 1);
                let mut inter = 0.0;
                let mut uni = 0.0;
                for (&x, &y) in a.iter().zip(b.iter()) {
                    if x != 0 && y != 0 {
                        inter += 1.0;
                    }
                    if x != 0 || y != 0 {
                        uni += 1.0;
                    }
                }
                if uni > 0.0 {
                    inter / uni
                } else {
                    0.0
                }
            };
            let (small, big, flip) = if k <= kg { (k, kg, false) } else { (kg, k, true) };
            let idx: Vec<usize> = (0..big).collect();
            let mut best = 0.0f64;
            enumerate_assign(&vec![0; small], &idx, &mut vec![], &mut |m| {
                let s: f64 = m
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| if flip { iou(j, i) } else { iou(i, j) })
                    .sum();
                best = best.max(s);
            });
            assert!((fast - best).abs() < 1e-9, "{fast} vs {best}");
        }
    }

    #[test]
    fn acc_absorbs_relabeling() {
        // predictions are a fixed permutation of truth: ACC must be 1
        let perm = [3usize, 1, 2];
        let pairs: Vec<IdentityPair> = (0..30)
            .map(|i| {
                let t = i % 3 + 1;
                (perm[t - 1], t)
            })
            .collect();
        assert_eq!(identity_accuracy(&pairs, 3).unwrap(), 1.0);
    }

    #[test]
    fn acc_two_of_three() {
        let pairs = vec![(1, 1), (2, 2), (3, 1)];
        // best bijection maps 1->1, 2->2, 3->3: 2 of 3 agree
        let acc = identity_accuracy(&pairs, 3).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        // brute force over all bijections confirms 2/3 is optimal
        let mut best = 0.0f64;
        let idx = [0usize, 1, 2];
        permute3(&idx, &mut |m| {
            let agree = pairs
                .iter()
                .filter(|&&(p, t)| m[p - 1] + 1 == t)
                .count() as f64;
            best = best.max(agree / 3.0);
        });
        assert!((acc - best).abs() < 1e-12);
    }

    fn permute3(idx: &[usize; 3], f: &mut impl FnMut(&[usize; 3])) {
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for p in perms {
            let m = [idx[p[0]], idx[p[1]], idx[p[2]]];
            f(&m);
        }
    }

    #[test]
    fn acc_empty_set_is_undefined() {
        assert!(matches!(
            identity_accuracy(&[], 3),
            Err(GoldError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn acc_invariant_to_global_relabeling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let pairs: Vec<IdentityPair> = (0..50)
            .map(|_| (rng.gen_range(1..=4), rng.gen_range(1..=4)))
            .collect();
        let base = identity_accuracy(&pairs, 4).unwrap();
        let relabel = [2usize, 4, 1, 3];
        let relabeled: Vec<IdentityPair> =
            pairs.iter().map(|&(p, t)| (relabel[p - 1], t)).collect();
        assert!((identity_accuracy(&relabeled, 4).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn upsample_nearest_neighbor() {
        let patches = array![[0usize, 1], [2, 3]];
        let up = upsample_labels(&patches, 4, 4);
        assert_eq!(up[[0, 0]], 0);
        assert_eq!(up[[0, 3]], 1);
        assert_eq!(up[[3, 0]], 2);
        assert_eq!(up[[3, 3]], 3);
    }

    #[test]
    fn report_degenerate_spread_and_roundtrip() {
        let run = EvalRun {
            ari_a: 0.5,
            ari_o: 0.9,
            miou: 0.4,
            acc: 0.75,
        };
        let rep = report(&[run, run, run], "full", "sprites");
        for (_, _, std) in &rep.rows {
            assert!(std.abs() < 1e-12);
        }
        let table = rep.to_table();
        for col in ["ARI-A", "ARI-O", "mIoU", "ACC"] {
            assert!(table.contains(col));
        }
        // numeric cells parse back to the raw values within formatting precision
        let csv = rep.to_csv();
        for line in csv.lines() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            let mean: f64 = fields[3].parse().unwrap();
            let want = match fields[2] {
                "ARI-A" => 0.5,
                "ARI-O" => 0.9,
                "mIoU" => 0.4,
                "ACC" => 0.75,
                _ => unreachable!(),
            };
            assert!((mean - want).abs() < 1e-9);
        }
    }
}
