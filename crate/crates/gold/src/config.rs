//! Flat experiment configuration.
//!
//! Configs live in plain `key = value` text files; every field name below
//! maps one-to-one onto a file key. CLI `--set key=value` overrides win
//! over file values.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GoldError, Result};

/// Model variant for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    Full,
    NoDsa,
    NoGlo,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_dsa" => Ok(Variant::NoDsa),
            "no_glo" => Ok(Variant::NoGlo),
            other => Err(GoldError::invalid(format!(
                "unknown variant '{other}' (expected full, no_dsa or no_glo)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDsa => "no_dsa",
            Variant::NoGlo => "no_glo",
        }
    }
}

macro_rules! config_fields {
    ($($field:ident : $ty:ty = $default:expr),* $(,)?) => {
        /// All knobs for data generation, the model and training.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $(pub $field: $ty,)*
            pub variant: Variant,
        }

        impl Default for Config {
            fn default() -> Self {
                Self {
                    $($field: $default,)*
                    variant: Variant::Full,
                }
            }
        }

        impl Config {
            /// Apply one `key=value` pair.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.trim().parse::<$ty>().map_err(|e| {
                            GoldError::Config(format!("bad value for {key}: '{value}' ({e})"))
                        })?;
                    })*
                    "variant" => self.variant = Variant::parse(value.trim())?,
                    other => {
                        return Err(GoldError::Config(format!("unknown config key '{other}'")))
                    }
                }
                Ok(())
            }

            /// Canonical `key = value` listing (fixed field order).
            pub fn to_kv(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", stringify!($field), self.$field).unwrap();)*
                writeln!(out, "variant = {}", self.variant.as_str()).unwrap();
                out
            }
        }
    };
}

config_fields! {
    // dataset generation
    canvas_size: usize = 64,
    num_prototypes: usize = 10,
    num_backgrounds: usize = 1,
    objects_min: usize = 3,
    objects_max: usize = 6,
    scale_min: f64 = 0.7,
    scale_max: f64 = 1.3,
    allow_repeats: bool = true,
    library_seed: u64 = 7,
    data_seed: u64 = 0,
    train_scenes: usize = 500,
    test_scenes: usize = 100,
    // model
    patch_size: usize = 8,
    d_img: usize = 64,
    d_glo: usize = 64,
    d_int: usize = 32,
    d_ext: usize = 16,
    d_key: usize = 48,
    d_zext: usize = 8,
    d_bck: usize = 4,
    enc_hidden: usize = 96,
    dec_hidden: usize = 96,
    num_slots: usize = 7,
    bank_size: usize = 10,
    dsa_iters: usize = 3,
    sigma_rec: f64 = 0.7071067811865476,
    // training
    warmstart_steps: usize = 0,
    bckstart_steps: usize = 0,
    stage1_steps: usize = 1000,
    stage2_steps: usize = 500,
    batch_size: usize = 8,
    lr_gocl: f64 = 4e-5,
    lr_codec: f64 = 3e-4,
    warmup_steps: usize = 10000,
    decay_factor: f64 = 0.5,
    decay_every: usize = 100000,
    tau_start: f64 = 2.0,
    tau_end: f64 = 0.1,
    lambda_feat: f64 = 1.0,
    lambda_img: f64 = 1.0,
    eta: f64 = 0.001,
    seed: u64 = 0,
    grad_clip: bool = true,
    eval_runs: usize = 3,
}

impl Config {
    /// Load from a `key = value` file. Blank lines and `#` comments allowed.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GoldError::load(path, e.to_string()))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GoldError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply `key=value` override strings, e.g. from CLI flags.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| GoldError::Config(format!("bad override '{o}'")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Short hex digest of the canonical serialization, used for provenance.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_kv().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Patch grid for the configured canvas: (rows, cols, n_patches).
    pub fn patch_grid(&self) -> (usize, usize, usize) {
        let r = self.canvas_size / self.patch_size;
        (r, r, r * r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_size % self.patch_size != 0 {
            return Err(GoldError::invalid(format!(
                "canvas_size {} not divisible by patch_size {}",
                self.canvas_size, self.patch_size
            )));
        }
        if self.objects_min > self.objects_max {
            return Err(GoldError::invalid("objects_min > objects_max"));
        }
        if self.num_prototypes == 0 {
            return Err(GoldError::invalid("num_prototypes must be >= 1"));
        }
        if self.tau_start <= 0.0 || self.tau_end <= 0.0 {
            return Err(GoldError::invalid("temperatures must be > 0"));
        }
        if self.eta < 0.0 {
            return Err(GoldError::invalid("eta must be >= 0"));
        }
        if self.d_key == 0 || self.d_int == 0 || self.d_ext == 0 {
            return Err(GoldError::invalid("dimensions must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_kv_text() {
        let mut cfg = Config::default();
        cfg.set("num_prototypes", "4").unwrap();
        cfg.set("variant", "no_glo").unwrap();
        cfg.set("lr_gocl", "1e-3").unwrap();
        let text = cfg.to_kv();
        let mut cfg2 = Config::default();
        cfg2.apply_text(&text).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("bogus", "1").is_err());
    }

    #[test]
    fn hash_changes_with_values() {
        let a = Config::default();
        let mut b = Config::default();
        b.set("seed", "99").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Config::default().hash());
    }

    #[test]
    fn paper_scale_values_admissible() {
        // eta 1e-3, C 10, background size 4, lr 4e-5, 8 slots total.
        let mut cfg = Config::default();
        cfg.apply_overrides(&[
            "num_prototypes=10".into(),
            "bank_size=10".into(),
            "d_bck=4".into(),
            "eta=0.001".into(),
            "lr_gocl=4e-5".into(),
            "num_slots=7".into(),
        ])
        .unwrap();
        cfg.validate().unwrap();
    }
}
