//! Disentangled slot attention: K object slots are refined against the
//! patch features over T iterations. Each slot is split into an intrinsic
//! part (rebuilt every iteration from a learnable global bank, weighted by
//! a relaxed identity sample) and an extrinsic part carried by a GRU. A
//! passive background slot takes part in the attention competition but is
//! never updated.
//!
//! Two ablation modes share the attention machinery: plain slot attention
//! (one undivided vector per slot, identity logits recovered post hoc
//! against the bank) and a bank-free mode where the identity logits are
//! themselves the intrinsic state, updated directly by a GRU.

use ndarray::Array2;
use rand::Rng;

use crate::config::{Config, Variant};
use crate::error::{GoldError, Result};
use crate::gocl::gumbel_softmax;
use crate::rng::NoiseSource;
use crate::tensor::nn::{Fwd, GruCell, LayerNorm, Linear};
use crate::tensor::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Var;

/// Dimensions of one attention module instance.
#[derive(Clone, Copy, Debug)]
pub struct DsaConfig {
    /// Object slots (excluding the background slot).
    pub k: usize,
    /// Bank size / number of identity classes.
    pub c: usize,
    /// Refinement iterations.
    pub t: usize,
    pub d_ext: usize,
    pub d_int: usize,
    pub d_key: usize,
    pub d_img: usize,
}

impl DsaConfig {
    pub fn from_config(cfg: &Config) -> Self {
        let d_int = match cfg.variant {
            // bank-free mode: the identity logits are the intrinsic state
            Variant::NoGlo => cfg.bank_size,
            _ => cfg.d_int,
        };
        Self {
            k: cfg.num_slots,
            c: cfg.bank_size,
            t: cfg.dsa_iters,
            d_ext: cfg.d_ext,
            d_int,
            d_key: cfg.d_key,
            d_img: cfg.d_img,
        }
    }

    /// Width of one full slot vector.
    pub fn d_slot(&self) -> usize {
        self.d_int + self.d_ext
    }
}

/// Learnable per-class object representations plus the projection used
/// inside the attention loop.
pub struct GlobalBank {
    pub e_glo: ParamId,
    f_glo: Linear,
    pub c: usize,
    pub d_glo: usize,
}

impl GlobalBank {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        c: usize,
        d_glo: usize,
        d_int: usize,
    ) -> Self {
        let std = 1.0 / (d_glo as f64).sqrt();
        let e_glo = store.register(
            "bank.e_glo",
            ParamGroup::ObjectModel,
            crate::tensor::params::normal_init(rng, c, d_glo, std),
        );
        let f_glo = Linear::new(store, rng, "bank.f_glo", ParamGroup::ObjectModel, d_glo, d_int);
        Self {
            e_glo,
            f_glo,
            c,
            d_glo,
        }
    }

    /// Raw bank rows (C×D_glo), as consumed by the object decoder.
    pub fn rows(&self, f: &mut Fwd) -> Var {
        f.p(self.e_glo)
    }

    /// Projected bank rows (C×D_int), as used inside the attention loop.
    pub fn projected(&self, f: &mut Fwd) -> Var {
        let e = f.p(self.e_glo);
        self.f_glo.forward(f, e)
    }
}

/// Per-iteration internals of the attention competition.
pub struct AttentionVars {
    /// N×(K+1); each row is a softmax over slots.
    pub a_tilde: Var,
    /// (K+1)×N; each row is the per-slot weighting over patches.
    pub w: Var,
    /// (K+1)×D_slot pooled slot updates.
    pub u: Var,
}

/// Snapshot of one refinement iteration, for tests and diagnostics.
#[derive(Clone, Debug)]
pub struct IterTrace {
    /// Relaxed identity sample (absent in modes that do not sample one).
    pub y: Option<Array2<f64>>,
    pub s_int: Array2<f64>,
    pub s_ext: Array2<f64>,
    pub s_obj: Array2<f64>,
    pub gamma: Array2<f64>,
    pub a_tilde: Array2<f64>,
    pub w: Array2<f64>,
    pub u: Array2<f64>,
}

/// Final differentiable outputs of a run plus the per-iteration trace.
pub struct DsaRun {
    /// K×C identity logits.
    pub gamma: Var,
    /// K×D_ext extrinsic states.
    pub s_ext: Var,
    /// K×D_int intrinsic states after the final update.
    pub s_int: Var,
    pub trace: Vec<IterTrace>,
}

enum ModeParams {
    Full {
        mu_ext: ParamId,
        sig_ext: ParamId,
        mu_id: ParamId,
        sig_id: ParamId,
        gru_int: GruCell,
        gru_ext: GruCell,
    },
    PlainSlots {
        mu_slot: ParamId,
        sig_slot: ParamId,
        gru: GruCell,
    },
    BankFree {
        mu_ext: ParamId,
        sig_ext: ParamId,
        mu_id: ParamId,
        sig_id: ParamId,
        gru_id: GruCell,
        gru_ext: GruCell,
    },
}

/// The attention module. Construction registers all parameters in the
/// store; forward passes are pure given parameters and noise.
pub struct Dsa {
    pub cfg: DsaConfig,
    mode: ModeParams,
    ln_inputs: LayerNorm,
    ln_slots: LayerNorm,
    f_key: Linear,
    f_qry: Linear,
    f_val: Linear,
}

fn raw_for_unit_sigma() -> f64 {
    // softplus(x) = 1  =>  x = ln(e - 1)
    (std::f64::consts::E - 1.0).ln()
}

impl Dsa {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &Config) -> Self {
        let d = DsaConfig::from_config(cfg);
        let g = ParamGroup::ObjectModel;
        let init_pair = |store: &mut ParamStore, rng: &mut _, name: &str, dim: usize| {
            let mu = store.register(
                format!("dsa.{name}.mu"),
                g,
                crate::tensor::params::normal_init(rng, 1, dim, 0.2),
            );
            let sig = store.register(
                format!("dsa.{name}.sig"),
                g,
                Array2::from_elem((1, dim), raw_for_unit_sigma()),
            );
            (mu, sig)
        };
        let mode = match cfg.variant {
            Variant::Full => {
                let (mu_ext, sig_ext) = init_pair(store, rng, "ext", d.d_ext);
                let (mu_id, sig_id) = init_pair(store, rng, "id", d.c);
                ModeParams::Full {
                    mu_ext,
                    sig_ext,
                    mu_id,
                    sig_id,
                    gru_int: GruCell::new(store, rng, "dsa.gru_int", g, d.d_int, d.d_int),
                    gru_ext: GruCell::new(store, rng, "dsa.gru_ext", g, d.d_ext, d.d_ext),
                }
            }
            Variant::NoDsa => {
                let (mu_slot, sig_slot) = init_pair(store, rng, "slot", d.d_slot());
                ModeParams::PlainSlots {
                    mu_slot,
                    sig_slot,
                    gru: GruCell::new(store, rng, "dsa.gru_slot", g, d.d_slot(), d.d_slot()),
                }
            }
            Variant::NoGlo => {
                let (mu_ext, sig_ext) = init_pair(store, rng, "ext", d.d_ext);
                let (mu_id, sig_id) = init_pair(store, rng, "id", d.c);
                ModeParams::BankFree {
                    mu_ext,
                    sig_ext,
                    mu_id,
                    sig_id,
                    gru_id: GruCell::new(store, rng, "dsa.gru_id", g, d.c, d.c),
                    gru_ext: GruCell::new(store, rng, "dsa.gru_ext", g, d.d_ext, d.d_ext),
                }
            }
        };
        Self {
            cfg: d,
            mode,
            ln_inputs: LayerNorm::new(store, "dsa.ln_in", g, d.d_img),
            ln_slots: LayerNorm::new(store, "dsa.ln_slot", g, d.d_slot()),
            f_key: Linear::new(store, rng, "dsa.key", g, d.d_img, d.d_key),
            f_qry: Linear::new(store, rng, "dsa.qry", g, d.d_slot(), d.d_key),
            f_val: Linear::new(store, rng, "dsa.val", g, d.d_img, d.d_slot()),
        }
    }

    fn draw(
        &self,
        f: &mut Fwd,
        mu: ParamId,
        sig: ParamId,
        rows: usize,
        noise: &mut dyn NoiseSource,
    ) -> Var {
        let dim = f.store.value(mu).ncols();
        let mu = f.p(mu);
        let raw = f.p(sig);
        let sigma = f.tape.softplus(raw);
        let mu_b = f.tape.broadcast_rows(mu, rows);
        let sig_b = f.tape.broadcast_rows(sigma, rows);
        let eps = f.tape.leaf(noise.normal(rows, dim));
        let scaled = f.tape.mul(sig_b, eps);
        f.tape.add(mu_b, scaled)
    }

    /// Draw the initial per-slot states: extrinsics and identity logits,
    /// i.i.d. Gaussian around the learnable initialization parameters.
    pub fn init_slots(&self, f: &mut Fwd, noise: &mut dyn NoiseSource) -> Result<(Var, Var)> {
        match &self.mode {
            ModeParams::Full {
                mu_ext,
                sig_ext,
                mu_id,
                sig_id,
                ..
            }
            | ModeParams::BankFree {
                mu_ext,
                sig_ext,
                mu_id,
                sig_id,
                ..
            } => {
                let s_ext = self.draw(f, *mu_ext, *sig_ext, self.cfg.k, noise);
                let gamma = self.draw(f, *mu_id, *sig_id, self.cfg.k, noise);
                Ok((s_ext, gamma))
            }
            ModeParams::PlainSlots { .. } => Err(GoldError::invalid(
                "plain slot attention draws whole slots, not (ext, id) pairs",
            )),
        }
    }

    /// Normalized patch features mapped to keys and values (computed once
    /// per run, reused by every iteration).
    pub fn keys_values(&self, f: &mut Fwd, features: Var) -> Result<(Var, Var)> {
        if f.tape.value(features).nrows() == 0 {
            return Err(GoldError::invalid("attention over zero patches"));
        }
        let normed = self.ln_inputs.forward(f, features);
        let keys = self.f_key.forward(f, normed);
        let values = self.f_val.forward(f, normed);
        Ok((keys, values))
    }

    /// One attention round: per-patch softmax over slots, per-slot
    /// renormalization over patches, weighted pooling of values.
    pub fn attention_step(
        &self,
        f: &mut Fwd,
        keys: Var,
        values: Var,
        slots_full: Var,
    ) -> Result<AttentionVars> {
        if f.tape.value(keys).nrows() == 0 {
            return Err(GoldError::invalid("attention over zero patches"));
        }
        let slots_n = self.ln_slots.forward(f, slots_full);
        let q = self.f_qry.forward(f, slots_n);
        let qt = f.tape.transpose(q);
        let logits = f.tape.matmul(keys, qt);
        let scaled = f.tape.scale(logits, 1.0 / (self.cfg.d_key as f64).sqrt());
        let a_tilde = f.tape.softmax_rows(scaled);
        let at = f.tape.transpose(a_tilde);
        let totals = f.tape.row_sum(at);
        let inv = f.tape.recip(totals);
        let w = f.tape.mul_col(at, inv);
        let u = f.tape.matmul(w, values);
        Ok(AttentionVars { a_tilde, w, u })
    }

    /// Split the pooled updates at the intrinsic boundary (dropping the
    /// background row) and advance both GRUs.
    pub fn update_slots(
        &self,
        f: &mut Fwd,
        u: Var,
        s_int: Var,
        s_ext: Var,
    ) -> Result<(Var, Var)> {
        let (gru_int, gru_ext) = match &self.mode {
            ModeParams::Full { gru_int, gru_ext, .. } => (gru_int, gru_ext),
            ModeParams::BankFree { gru_id, gru_ext, .. } => (gru_id, gru_ext),
            ModeParams::PlainSlots { .. } => {
                return Err(GoldError::invalid(
                    "plain slot attention updates whole slots, not (int, ext) pairs",
                ))
            }
        };
        let d_int = self.cfg.d_int;
        if f.tape.value(u).ncols() != self.cfg.d_slot() {
            return Err(GoldError::ShapeMismatch {
                context: "update_slots",
                expected: format!("(K+1) x {}", self.cfg.d_slot()),
                actual: format!("{:?}", f.tape.value(u).dim()),
            });
        }
        let u_obj = f.tape.slice_rows(u, 1, self.cfg.k + 1);
        let u_int = f.tape.slice_cols(u_obj, 0, d_int);
        let u_ext = f.tape.slice_cols(u_obj, d_int, self.cfg.d_slot());
        let s_int2 = gru_int.forward(f, s_int, u_int);
        let s_ext2 = gru_ext.forward(f, s_ext, u_ext);
        Ok((s_int2, s_ext2))
    }

    /// Learned mean of the extrinsic slot initializer — the model's
    /// default object pose. In plain slot mode this is the extrinsic
    /// suffix of the whole-slot mean.
    pub fn ext_mean_value(&self, store: &ParamStore) -> Array2<f64> {
        match &self.mode {
            ModeParams::Full { mu_ext, .. } | ModeParams::BankFree { mu_ext, .. } => {
                store.value(*mu_ext).clone()
            }
            ModeParams::PlainSlots { mu_slot, .. } => store
                .value(*mu_slot)
                .slice(ndarray::s![.., self.cfg.d_int..])
                .to_owned(),
        }
    }

    /// Scaled dot products of intrinsic states against the projected bank:
    /// `gamma = s_int · projected(bank)ᵀ / sqrt(D_int)`.
    pub fn recompute_gamma(&self, f: &mut Fwd, s_int: Var, bank: &GlobalBank) -> Var {
        let proj = bank.projected(f);
        let pt = f.tape.transpose(proj);
        let raw = f.tape.matmul(s_int, pt);
        f.tape.scale(raw, 1.0 / (self.cfg.d_int as f64).sqrt())
    }

    /// Run T refinement iterations and return the final identity logits,
    /// extrinsic states and a full per-iteration trace.
    ///
    /// `bank` must be present exactly in the modes that use one (the full
    /// model and plain slot attention); the bank-free mode rejects it.
    pub fn run(
        &self,
        f: &mut Fwd,
        features: Var,
        s_bck: Var,
        bank: Option<&GlobalBank>,
        temperature: f64,
        noise: &mut dyn NoiseSource,
        hard: bool,
    ) -> Result<DsaRun> {
        if self.cfg.t == 0 {
            return Err(GoldError::invalid("need at least one iteration"));
        }
        if temperature <= 0.0 {
            return Err(GoldError::invalid(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if f.tape.value(s_bck).dim() != (1, self.cfg.d_slot()) {
            return Err(GoldError::ShapeMismatch {
                context: "background slot",
                expected: format!("(1, {})", self.cfg.d_slot()),
                actual: format!("{:?}", f.tape.value(s_bck).dim()),
            });
        }
        let (keys, values) = self.keys_values(f, features)?;
        match &self.mode {
            ModeParams::Full { .. } => {
                let bank = bank
                    .ok_or_else(|| GoldError::invalid("this mode needs a global bank"))?;
                let proj = bank.projected(f);
                let (mut s_ext, mut gamma) = self.init_slots(f, noise)?;
                let mut s_int = gamma; // overwritten before first use
                let mut trace = Vec::with_capacity(self.cfg.t);
                for _ in 0..self.cfg.t {
                    let y = gumbel_softmax(f.tape, gamma, temperature, noise, hard)?;
                    s_int = f.tape.matmul(y, proj);
                    let s_obj = f.tape.concat_cols(&[s_int, s_ext]);
                    let slots_full = f.tape.concat_rows(&[s_bck, s_obj]);
                    let att = self.attention_step(f, keys, values, slots_full)?;
                    let (i2, e2) = self.update_slots(f, att.u, s_int, s_ext)?;
                    s_int = i2;
                    s_ext = e2;
                    gamma = self.recompute_gamma(f, s_int, bank);
                    trace.push(IterTrace {
                        y: Some(f.tape.value(y).clone()),
                        s_int: f.tape.value(s_int).clone(),
                        s_ext: f.tape.value(s_ext).clone(),
                        s_obj: f.tape.value(s_obj).clone(),
                        gamma: f.tape.value(gamma).clone(),
                        a_tilde: f.tape.value(att.a_tilde).clone(),
                        w: f.tape.value(att.w).clone(),
                        u: f.tape.value(att.u).clone(),
                    });
                }
                Ok(DsaRun {
                    gamma,
                    s_ext,
                    s_int,
                    trace,
                })
            }
            ModeParams::BankFree { .. } => {
                if bank.is_some() {
                    return Err(GoldError::invalid("bank-free mode takes no bank"));
                }
                let (mut s_ext, mut s_id) = self.init_slots(f, noise)?;
                let mut trace = Vec::with_capacity(self.cfg.t);
                for _ in 0..self.cfg.t {
                    let s_obj = f.tape.concat_cols(&[s_id, s_ext]);
                    let slots_full = f.tape.concat_rows(&[s_bck, s_obj]);
                    let att = self.attention_step(f, keys, values, slots_full)?;
                    let (i2, e2) = self.update_slots(f, att.u, s_id, s_ext)?;
                    s_id = i2;
                    s_ext = e2;
                    trace.push(IterTrace {
                        y: None,
                        s_int: f.tape.value(s_id).clone(),
                        s_ext: f.tape.value(s_ext).clone(),
                        s_obj: f.tape.value(s_obj).clone(),
                        gamma: f.tape.value(s_id).clone(),
                        a_tilde: f.tape.value(att.a_tilde).clone(),
                        w: f.tape.value(att.w).clone(),
                        u: f.tape.value(att.u).clone(),
                    });
                }
                Ok(DsaRun {
                    gamma: s_id,
                    s_ext,
                    s_int: s_id,
                    trace,
                })
            }
            ModeParams::PlainSlots { mu_slot, sig_slot, gru } => {
                let bank = bank
                    .ok_or_else(|| GoldError::invalid("this mode needs a global bank"))?;
                let mut slots = self.draw(f, *mu_slot, *sig_slot, self.cfg.k, noise);
                let mut trace = Vec::with_capacity(self.cfg.t);
                for _ in 0..self.cfg.t {
                    let slots_full = f.tape.concat_rows(&[s_bck, slots]);
                    let att = self.attention_step(f, keys, values, slots_full)?;
                    let u_obj = f.tape.slice_rows(att.u, 1, self.cfg.k + 1);
                    slots = gru.forward(f, slots, u_obj);
                    let s_int = f.tape.slice_cols(slots, 0, self.cfg.d_int);
                    let gamma = self.recompute_gamma(f, s_int, bank);
                    trace.push(IterTrace {
                        y: None,
                        s_int: f.tape.value(s_int).clone(),
                        s_ext: f
                            .tape
                            .value(slots)
                            .slice(ndarray::s![.., self.cfg.d_int..])
                            .to_owned(),
                        s_obj: f.tape.value(slots).clone(),
                        gamma: f.tape.value(gamma).clone(),
                        a_tilde: f.tape.value(att.a_tilde).clone(),
                        w: f.tape.value(att.w).clone(),
                        u: f.tape.value(att.u).clone(),
                    });
                }
                let s_int = f.tape.slice_cols(slots, 0, self.cfg.d_int);
                let s_ext = f.tape.slice_cols(slots, self.cfg.d_int, self.cfg.d_slot());
                let gamma = self.recompute_gamma(f, s_int, bank);
                Ok(DsaRun {
                    gamma,
                    s_ext,
                    s_int,
                    trace,
                })
            }
        }
    }
}
