//! Two-stage optimization. Stage one fits the object model (attention,
//! bank, latent heads, decoders) to reconstruct frozen patch features;
//! stage two fits the codec decoder to map composed features back to
//! pixels. An optional warm start fits the patch autoencoder first so the
//! features are informative.
//!
//! Batch elements are evaluated in parallel; gradients are reduced in
//! sample order so runs are reproducible.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{GoldError, Result};
use crate::featurecodec::mse_to_target;
use crate::model::{build_model, GoldModel};
use crate::rng::{derive_seed, SeededNoise};
use crate::scenegen::SceneSample;
use crate::tensor::nn::Fwd;
use crate::tensor::params::{Adam, Binding, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tape, Var};

/// Weighted combination of the two reconstruction objectives.
pub fn total_loss(feat_loss: f64, img_loss: f64, lambda_feat: f64, lambda_img: f64) -> f64 {
    lambda_feat * feat_loss + lambda_img * img_loss
}

/// Linear warmup to `base` followed by stepwise exponential decay.
pub fn lr_schedule(
    step: usize,
    base: f64,
    warmup_steps: usize,
    decay_factor: f64,
    decay_every: usize,
) -> f64 {
    let warm = if warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / warmup_steps as f64).min(1.0)
    };
    let periods = (step / decay_every.max(1)) as i32;
    base * warm * decay_factor.powi(periods)
}

/// Cosine annealing of the identity-sampling temperature over stage one.
pub fn temperature_schedule(step: usize, stage1_steps: usize, tau_start: f64, tau_end: f64) -> f64 {
    if stage1_steps == 0 {
        return tau_end;
    }
    let s = step.min(stage1_steps) as f64 / stage1_steps as f64;
    tau_end + 0.5 * (tau_start - tau_end) * (1.0 + (PI * s).cos())
}

/// One logged training step: every loss term by name.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub stage: &'static str,
    pub terms: Vec<(&'static str, f64)>,
}

/// Long-format metric log, one row per (step, term).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<LogRow>,
}

impl MetricLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,stage,term,value\n");
        for row in &self.rows {
            for (name, value) in &row.terms {
                out.push_str(&format!("{},{},{},{}\n", row.step, row.stage, name, value));
            }
        }
        out
    }

    /// Values of one term across all rows of one stage, in step order.
    pub fn series(&self, stage: &str, term: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.stage == stage)
            .filter_map(|r| r.terms.iter().find(|(n, _)| *n == term).map(|(_, v)| *v))
            .collect()
    }
}

/// Where the optimizer left off, for checkpointing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainState {
    /// Total optimizer steps taken across all phases.
    pub step: u64,
    /// Samples drawn so far (seeds per-sample noise).
    pub sample_counter: u64,
    /// Position of the epoch-shuffling generator.
    pub order_word_pos: u128,
}

/// Deterministic epoch sampler: shuffles the index order once per pass.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n, // force a shuffle on first use
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Average per-parameter gradients over batch elements, reducing in
/// element order.
fn mean_grads(parts: Vec<HashMap<ParamId, Array2<f64>>>) -> HashMap<ParamId, Array2<f64>> {
    let n = parts.len() as f64;
    let mut acc: HashMap<ParamId, Array2<f64>> = HashMap::new();
    for part in parts {
        let mut keys: Vec<ParamId> = part.keys().copied().collect();
        keys.sort_by_key(|id| id.0);
        for id in keys {
            let g = &part[&id];
            match acc.get_mut(&id) {
                Some(a) => *a += g,
                None => {
                    acc.insert(id, g.clone());
                }
            }
        }
    }
    for g in acc.values_mut() {
        *g /= n;
    }
    acc
}

fn check_finite(loss: f64, step: usize, breakdown: String) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(GoldError::NonFiniteLoss { step, breakdown })
    }
}

/// One batch's worth of (gradients, named loss terms) per sample.
type SampleEval = Result<(HashMap<ParamId, Array2<f64>>, Vec<(&'static str, f64)>)>;

fn eval_batch<F>(indices: &[usize], eval: F) -> Result<(Vec<HashMap<ParamId, Array2<f64>>>, Vec<Vec<(&'static str, f64)>>)>
where
    F: Fn(usize, usize) -> SampleEval + Sync,
{
    let results: Vec<SampleEval> = indices
        .par_iter()
        .enumerate()
        .map(|(slot, &idx)| eval(slot, idx))
        .collect();
    let mut grads = Vec::with_capacity(results.len());
    let mut terms = Vec::with_capacity(results.len());
    for r in results {
        let (g, t) = r?;
        grads.push(g);
        terms.push(t);
    }
    Ok((grads, terms))
}

fn mean_terms(per_sample: &[Vec<(&'static str, f64)>]) -> Vec<(&'static str, f64)> {
    let n = per_sample.len() as f64;
    let mut out: Vec<(&'static str, f64)> = per_sample[0]
        .iter()
        .map(|(name, _)| (*name, 0.0))
        .collect();
    for terms in per_sample {
        for (slot, (_, v)) in out.iter_mut().zip(terms) {
            slot.1 += v / n;
        }
    }
    out
}

fn format_terms(terms: &[(&'static str, f64)]) -> String {
    terms
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Run all phases against an existing model/store. Stage one touches only
/// object-model parameters, stage two only the codec decoder; the warm
/// start touches both halves of the codec.
pub fn train_prepared(
    store: &mut ParamStore,
    model: &GoldModel,
    scenes: &[SceneSample],
    cfg: &Config,
) -> Result<(MetricLog, TrainState)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(GoldError::invalid("training set is empty"));
    }
    let adam = Adam {
        clip_norm: if cfg.grad_clip { Some(1.0) } else { None },
        ..Default::default()
    };
    let mut log = MetricLog::default();
    let mut sampler = BatchSampler::new(scenes.len(), derive_seed(cfg.seed, 0xDA7A));
    let mut sample_counter: u64 = 0;
    let mut global_step: u64 = 0;
    let batch = cfg.batch_size.max(1);

    // warm start: patch autoencoder on raw images
    for step in 0..cfg.warmstart_steps {
        let indices = sampler.next(batch);
        let base_counter = sample_counter;
        sample_counter += batch as u64;
        let sref: &ParamStore = store;
        let (grads, terms) = eval_batch(&indices, |_slot, idx| {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, sref, &mut binding);
            let loss = model.codec.autoencode_loss(&mut f, &scenes[idx].image)?;
            let value = tape.scalar(loss);
            let g = binding.gradients(&tape.backward(loss));
            Ok((g, vec![("img_recon", value)]))
        })?;
        let _ = base_counter; // warm start draws no noise
        let terms = mean_terms(&terms);
        check_finite(terms[0].1, step, format_terms(&terms))?;
        adam.step(
            store,
            &mean_grads(grads),
            cfg.lr_codec,
            &[ParamGroup::CodecEncoder, ParamGroup::CodecDecoder],
        );
        log.rows.push(LogRow {
            step,
            stage: "warm",
            terms,
        });
        global_step += 1;
    }

    // the encoder is frozen from here on: fix every scene's features once
    let features: Vec<(Array2<f64>, (usize, usize))> = scenes
        .iter()
        .map(|s| {
            let fm = model.codec.encode_image(store, &s.image)?;
            Ok((fm.features, fm.grid_shape))
        })
        .collect::<Result<_>>()?;

    // background fit: the background path alone learns to explain as much
    // of the frozen feature maps as its small latent allows, so the slots
    // later compete only for what it cannot predict (the objects)
    for step in 0..cfg.bckstart_steps {
        let indices = sampler.next(batch);
        let base_counter = sample_counter;
        sample_counter += batch as u64;
        let sref: &ParamStore = store;
        let (grads, terms) = eval_batch(&indices, |slot, idx| {
            let mut noise = SeededNoise::new(derive_seed(
                cfg.seed ^ 0x57A6E0,
                base_counter + slot as u64,
            ));
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, sref, &mut binding);
            let (s_img, grid) = &features[idx];
            let loss = model.background_fit_loss(&mut f, s_img, *grid, &mut noise)?;
            let value = tape.scalar(loss);
            let g = binding.gradients(&tape.backward(loss));
            Ok((g, vec![("bck_fit", value)]))
        })?;
        let terms = mean_terms(&terms);
        check_finite(terms[0].1, step, format_terms(&terms))?;
        adam.step(store, &mean_grads(grads), cfg.lr_gocl, &[ParamGroup::ObjectModel]);
        log.rows.push(LogRow {
            step,
            stage: "bck",
            terms,
        });
        global_step += 1;
    }

    // stage one: variational feature reconstruction, object model only
    for step in 0..cfg.stage1_steps {
        let tau = temperature_schedule(step, cfg.stage1_steps, cfg.tau_start, cfg.tau_end);
        let lr = lr_schedule(
            step,
            cfg.lr_gocl,
            cfg.warmup_steps,
            cfg.decay_factor,
            cfg.decay_every,
        );
        let indices = sampler.next(batch);
        let base_counter = sample_counter;
        sample_counter += batch as u64;
        let sref: &ParamStore = store;
        let (grads, terms) = eval_batch(&indices, |slot, idx| {
            let mut noise = SeededNoise::new(derive_seed(
                cfg.seed ^ 0x57A6E1,
                base_counter + slot as u64,
            ));
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, sref, &mut binding);
            let (s_img, grid) = &features[idx];
            let (loss, t, _) =
                model.stage_one_loss(&mut f, s_img, *grid, tau, &mut noise, false)?;
            let weighted = tape.scale(loss, cfg.lambda_feat);
            let g = binding.gradients(&tape.backward(weighted));
            let mut named: Vec<(&'static str, f64)> = t.named().to_vec();
            named.push(("total", total_loss(t.total, 0.0, cfg.lambda_feat, 0.0)));
            Ok((g, named))
        })?;
        let terms = mean_terms(&terms);
        let total = terms.last().unwrap().1;
        check_finite(total, step, format_terms(&terms))?;
        adam.step(store, &mean_grads(grads), lr, &[ParamGroup::ObjectModel]);
        log.rows.push(LogRow {
            step,
            stage: "stage1",
            terms,
        });
        global_step += 1;
    }

    // stage two: pixel reconstruction through the codec decoder
    for step in 0..cfg.stage2_steps {
        let lr = lr_schedule(
            step,
            cfg.lr_codec,
            cfg.warmup_steps,
            cfg.decay_factor,
            cfg.decay_every,
        );
        let indices = sampler.next(batch);
        let base_counter = sample_counter;
        sample_counter += batch as u64;
        let sref: &ParamStore = store;
        let (grads, terms) = eval_batch(&indices, |slot, idx| {
            let mut noise = SeededNoise::new(derive_seed(
                cfg.seed ^ 0x57A6E2,
                base_counter + slot as u64,
            ));
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut f = Fwd::new(&mut tape, sref, &mut binding);
            let (s_img, grid) = &features[idx];
            let fv = f.tape.leaf(s_img.clone());
            let fwd = model.forward_features(&mut f, fv, *grid, cfg.tau_end, &mut noise, false)?;
            let decoded = model.codec.decode(&mut f, fwd.components.o_img)?;
            let (target, _) = crate::featurecodec::patchify(&scenes[idx].image, model.codec.patch)?;
            let loss: Var = mse_to_target(f.tape, decoded, &target);
            let weighted = tape.scale(loss, cfg.lambda_img);
            let value = tape.scalar(loss);
            let g = binding.gradients(&tape.backward(weighted));
            Ok((
                g,
                vec![
                    ("img_recon", value),
                    ("total", total_loss(0.0, value, 0.0, cfg.lambda_img)),
                ],
            ))
        })?;
        let terms = mean_terms(&terms);
        check_finite(terms[0].1, step, format_terms(&terms))?;
        adam.step(store, &mean_grads(grads), lr, &[ParamGroup::CodecDecoder]);
        log.rows.push(LogRow {
            step,
            stage: "stage2",
            terms,
        });
        global_step += 1;
    }

    Ok((
        log,
        TrainState {
            step: global_step,
            sample_counter,
            order_word_pos: sampler.rng.get_word_pos(),
        },
    ))
}

/// Build a fresh model from the config's seed and train it.
pub fn train(
    scenes: &[SceneSample],
    cfg: &Config,
) -> Result<(ParamStore, GoldModel, MetricLog, TrainState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = build_model(&mut store, &mut rng, cfg)?;
    let (log, state) = train_prepared(&mut store, &model, scenes, cfg)?;
    Ok((store, model, log, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::scenegen::{generate_split, make_prototype_library, GenConfig};

    #[test]
    fn total_loss_is_the_weighted_sum() {
        assert_eq!(total_loss(3.5, 9.0, 1.0, 0.0), 3.5);
        assert_eq!(total_loss(3.5, 9.0, 0.0, 1.0), 9.0);
        assert_eq!(total_loss(3.5, 9.0, 0.0, 0.0), 0.0);
        assert_eq!(total_loss(2.0, 3.0, 0.5, 2.0), 7.0);
    }

    #[test]
    fn lr_schedule_warms_up_then_decays() {
        let base = 4e-5;
        assert_eq!(lr_schedule(0, base, 10_000, 0.5, 100_000), 0.0);
        assert_eq!(lr_schedule(10_000, base, 10_000, 0.5, 100_000), base);
        assert_eq!(lr_schedule(110_000, base, 10_000, 0.5, 100_000), base * 0.5);
        assert_eq!(lr_schedule(5_000, base, 10_000, 0.5, 100_000), base * 0.5);
        // total on degenerate knobs
        assert_eq!(lr_schedule(7, base, 0, 0.5, 0), base * 0.5f64.powi(7));
    }

    #[test]
    fn temperature_schedule_follows_the_cosine() {
        let (s, e) = (2.0, 0.1);
        assert!((temperature_schedule(0, 100, s, e) - s).abs() < 1e-12);
        assert!((temperature_schedule(100, 100, s, e) - e).abs() < 1e-12);
        assert!((temperature_schedule(50, 100, s, e) - (s + e) / 2.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for step in 0..=120 {
            let tau = temperature_schedule(step, 100, s, e);
            assert!(tau <= prev + 1e-12, "not monotone at {step}");
            assert!(tau > 0.0);
            prev = tau;
        }
    }

    fn tiny_train_config(variant: Variant) -> Config {
        let mut c = Config::default();
        c.variant = variant;
        c.canvas_size = 16;
        c.patch_size = 8;
        c.num_prototypes = 3;
        c.num_backgrounds = 2;
        c.objects_min = 1;
        c.objects_max = 2;
        c.d_img = 8;
        c.d_glo = 6;
        c.d_int = 4;
        c.d_ext = 3;
        c.d_key = 4;
        c.d_zext = 2;
        c.d_bck = 2;
        c.enc_hidden = 12;
        c.dec_hidden = 12;
        c.num_slots = 2;
        c.bank_size = 3;
        c.dsa_iters = 2;
        c.warmstart_steps = 2;
        c.stage1_steps = 3;
        c.stage2_steps = 2;
        c.batch_size = 2;
        c.warmup_steps = 2;
        c.lr_gocl = 1e-3;
        c.lr_codec = 1e-3;
        c
    }

    fn tiny_scenes(cfg: &Config, n: usize) -> Vec<SceneSample> {
        let lib =
            make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size).unwrap();
        generate_split(&lib, &GenConfig::from(cfg), cfg.data_seed, n).unwrap()
    }

    #[test]
    fn all_variants_train_for_a_few_steps() {
        for variant in [Variant::Full, Variant::NoDsa, Variant::NoGlo] {
            let cfg = tiny_train_config(variant);
            let scenes = tiny_scenes(&cfg, 4);
            let (_, _, log, state) = train(&scenes, &cfg).unwrap();
            assert_eq!(state.step, 7, "{variant:?}");
            assert_eq!(log.series("stage1", "feat_total").len(), 3);
            assert_eq!(log.series("stage2", "img_recon").len(), 2);
            assert!(log
                .rows
                .iter()
                .flat_map(|r| &r.terms)
                .all(|(_, v)| v.is_finite()));
        }
    }

    #[test]
    fn stage_one_leaves_the_codec_untouched() {
        let mut cfg = tiny_train_config(Variant::Full);
        cfg.warmstart_steps = 0;
        cfg.stage2_steps = 0;
        let scenes = tiny_scenes(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        let enc_before = store.group_vector(ParamGroup::CodecEncoder);
        let dec_before = store.group_vector(ParamGroup::CodecDecoder);
        let obj_before = store.group_vector(ParamGroup::ObjectModel);
        train_prepared(&mut store, &model, &scenes, &cfg).unwrap();
        assert_eq!(store.group_vector(ParamGroup::CodecEncoder), enc_before);
        assert_eq!(store.group_vector(ParamGroup::CodecDecoder), dec_before);
        assert_ne!(store.group_vector(ParamGroup::ObjectModel), obj_before);
    }

    #[test]
    fn stage_two_leaves_the_object_model_untouched() {
        let mut cfg = tiny_train_config(Variant::Full);
        cfg.warmstart_steps = 0;
        cfg.stage1_steps = 0;
        let scenes = tiny_scenes(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        let obj_before = store.group_vector(ParamGroup::ObjectModel);
        let enc_before = store.group_vector(ParamGroup::CodecEncoder);
        let dec_before = store.group_vector(ParamGroup::CodecDecoder);
        train_prepared(&mut store, &model, &scenes, &cfg).unwrap();
        assert_eq!(store.group_vector(ParamGroup::ObjectModel), obj_before);
        assert_eq!(store.group_vector(ParamGroup::CodecEncoder), enc_before);
        assert_ne!(store.group_vector(ParamGroup::CodecDecoder), dec_before);
    }

    #[test]
    fn background_fit_phase_touches_only_the_object_model() {
        let mut cfg = tiny_train_config(Variant::Full);
        cfg.warmstart_steps = 0;
        cfg.bckstart_steps = 3;
        cfg.stage1_steps = 0;
        cfg.stage2_steps = 0;
        let scenes = tiny_scenes(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        let enc_before = store.group_vector(ParamGroup::CodecEncoder);
        let dec_before = store.group_vector(ParamGroup::CodecDecoder);
        let obj_before = store.group_vector(ParamGroup::ObjectModel);
        let (log, state) = train_prepared(&mut store, &model, &scenes, &cfg).unwrap();
        assert_eq!(state.step, 3);
        assert_eq!(log.series("bck", "bck_fit").len(), 3);
        assert_eq!(store.group_vector(ParamGroup::CodecEncoder), enc_before);
        assert_eq!(store.group_vector(ParamGroup::CodecDecoder), dec_before);
        assert_ne!(store.group_vector(ParamGroup::ObjectModel), obj_before);
    }

    #[test]
    fn identical_runs_produce_identical_logs() {
        let cfg = tiny_train_config(Variant::Full);
        let scenes = tiny_scenes(&cfg, 4);
        let (_, _, log_a, _) = train(&scenes, &cfg).unwrap();
        let (_, _, log_b, _) = train(&scenes, &cfg).unwrap();
        assert_eq!(log_a.to_csv(), log_b.to_csv());
        let mut other = cfg.clone();
        other.seed = 99;
        let (_, _, log_c, _) = train(&scenes, &other).unwrap();
        assert_ne!(log_a.to_csv(), log_c.to_csv());
    }

    #[test]
    fn stage_one_loss_improves_on_a_small_overfit_set() {
        let mut cfg = tiny_train_config(Variant::Full);
        cfg.warmstart_steps = 10;
        cfg.stage1_steps = 60;
        cfg.stage2_steps = 0;
        cfg.warmup_steps = 5;
        cfg.lr_gocl = 3e-3;
        let scenes = tiny_scenes(&cfg, 4);
        let (_, _, log, _) = train(&scenes, &cfg).unwrap();
        let series = log.series("stage1", "feat_total");
        let head: f64 = series[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = series[series.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(
            tail < head,
            "feature loss did not improve: head {head}, tail {tail}"
        );
    }

    #[test]
    fn poisoned_parameters_abort_with_a_breakdown() {
        let mut cfg = tiny_train_config(Variant::Full);
        cfg.warmstart_steps = 0;
        let scenes = tiny_scenes(&cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let model = build_model(&mut store, &mut rng, &cfg).unwrap();
        // weights large enough that the squared reconstruction error
        // overflows to infinity
        let victim = store
            .ids()
            .find(|&id| store.param(id).name == "obj.dec.2.w")
            .unwrap();
        let bad = Array2::from_elem(store.value(victim).dim(), 1e200);
        store.set_value(victim, bad);
        let err = train_prepared(&mut store, &model, &scenes, &cfg).unwrap_err();
        match err {
            GoldError::NonFiniteLoss { step, breakdown } => {
                assert_eq!(step, 0);
                assert!(breakdown.contains("feat_total"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = tiny_train_config(Variant::Full);
        assert!(train(&[], &cfg).is_err());
    }
}
