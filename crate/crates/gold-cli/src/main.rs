//! Experiment front door: dataset generation, training, evaluation and
//! qualitative artifact rendering, all driven by a flat key/value config
//! file with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gold::artifacts;
use gold::checkpoint::Checkpoint;
use gold::config::Config;
use gold::eval::evaluate_runs;
use gold::metrics::{report, EvalRun};
use gold::model::{build_model, GoldModel};
use gold::rng::{derive_seed, NoiseSource, SeededNoise};
use gold::scenegen::io::{read_dataset, save_png, write_dataset};
use gold::scenegen::{generate_split, make_prototype_library, GenConfig, SceneSample};
use gold::tensor::params::ParamStore;
use gold::trainer::{train, TrainState};

#[derive(Parser)]
#[command(name = "gold", version, about = "Object-centric scene learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides, e.g. --set stage1_steps=500
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the sprite dataset (train and test splits).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the training split.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render one image per bank prototype.
    Prototypes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compose a scene from explicit object identities.
    Compose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-based prototype index; repeat for several objects.
        #[arg(long = "object")]
        objects: Vec<usize>,
        /// Sample each object's extrinsic latent from the prior with this
        /// seed; omitted = the model's canonical pose for every object.
        #[arg(long)]
        ext_seed: Option<u64>,
    },
    /// Swap the extrinsic latents of two slots in one scene.
    Swap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Scene index within the split.
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        slot_i: usize,
        #[arg(long)]
        slot_j: usize,
    },
    /// Per-slot decomposition panels for one scene.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: usize,
    },
    /// Aggregate per-run metric files into a mean/std report.
    Report {
        #[command(flatten)]
        common: Common,
        /// One or more runs.csv files written by `eval`.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value = "test")]
        dataset: String,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    cfg.apply_overrides(&common.set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_provenance(dir: &Path, command: &str, cfg: &Config) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = format!(
        "command = {command}\nconfig_hash = {}\nseed = {}\nversion = {}\n",
        cfg.hash(),
        cfg.seed,
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(dir.join("provenance.txt"), text)?;
    Ok(())
}

fn load_model(cfg: &Config, checkpoint: &Path) -> Result<(ParamStore, GoldModel, TrainState)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = build_model(&mut store, &mut rng, cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.apply(&mut store)
        .with_context(|| format!("checkpoint {} does not fit this config", checkpoint.display()))?;
    Ok((store, model, ckpt.train_state()))
}

fn load_scene(data: &Path, index: usize) -> Result<SceneSample> {
    let (scenes, _) = read_dataset(data)?;
    scenes
        .into_iter()
        .nth(index)
        .with_context(|| format!("scene index {index} out of range"))
}

fn grid_of(cfg: &Config) -> (usize, usize) {
    let (r, c, _) = cfg.patch_grid();
    (r, c)
}

fn runs_csv(runs: &[EvalRun]) -> String {
    let mut out = String::from("run,ari_a,ari_o,miou,acc\n");
    for (i, r) in runs.iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", i, r.ari_a, r.ari_o, r.miou, r.acc));
    }
    out
}

fn parse_runs_csv(text: &str, path: &Path) -> Result<Vec<EvalRun>> {
    let mut runs = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 fields", path.display(), lineno + 1);
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: bad number", path.display(), lineno + 1))
        };
        runs.push(EvalRun {
            ari_a: num(1)?,
            ari_o: num(2)?,
            miou: num(3)?,
            acc: num(4)?,
        });
    }
    if runs.is_empty() {
        bail!("{}: no evaluation rows", path.display());
    }
    Ok(runs)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "gen-data", &cfg)?;
            let lib =
                make_prototype_library(cfg.num_prototypes, cfg.library_seed, cfg.canvas_size)?;
            let gen = GenConfig::from(&cfg);
            let hash = cfg.hash();
            let train_split = generate_split(&lib, &gen, cfg.data_seed, cfg.train_scenes)?;
            write_dataset(&train_split, &common.out.join("train"), &hash, &lib)?;
            let test_split = generate_split(
                &lib,
                &gen,
                derive_seed(cfg.data_seed, 0x7E57),
                cfg.test_scenes,
            )?;
            write_dataset(&test_split, &common.out.join("test"), &hash, &lib)?;
            println!(
                "wrote {} train / {} test scenes to {}",
                cfg.train_scenes,
                cfg.test_scenes,
                common.out.display()
            );
        }
        Command::Train { common, data } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "train", &cfg)?;
            let (scenes, _) = read_dataset(&data)?;
            let (store, _model, log, state) = train(&scenes, &cfg)?;
            fs::write(common.out.join("metrics.csv"), log.to_csv())?;
            fs::write(common.out.join("config.txt"), cfg.to_kv())?;
            let ckpt = Checkpoint::from_store(&store, state, &cfg.hash());
            ckpt.save(&common.out.join("checkpoint.json"))?;
            println!(
                "trained {} steps; checkpoint at {}",
                state.step,
                common.out.join("checkpoint.json").display()
            );
        }
        Command::Eval {
            common,
            data,
            checkpoint,
        } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "eval", &cfg)?;
            let (store, model, _) = load_model(&cfg, &checkpoint)?;
            let (scenes, _) = read_dataset(&data)?;
            let runs = evaluate_runs(&store, &model, &scenes, &cfg)?;
            fs::write(common.out.join("runs.csv"), runs_csv(&runs))?;
            let rep = report(&runs, cfg.variant.as_str(), "test");
            fs::write(common.out.join("report.csv"), rep.to_csv())?;
            println!("{}", rep.to_table());
        }
        Command::Prototypes { common, checkpoint } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "prototypes", &cfg)?;
            let (store, model, _) = load_model(&cfg, &checkpoint)?;
            let images = artifacts::prototype_images(&store, &model, grid_of(&cfg))?;
            for (c, img) in images.iter().enumerate() {
                save_png(img, &common.out.join(format!("prototype_{:02}.png", c + 1)))?;
            }
            println!("wrote {} prototype images", images.len());
        }
        Command::Compose {
            common,
            checkpoint,
            objects,
            ext_seed,
        } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "compose", &cfg)?;
            let (store, model, _) = load_model(&cfg, &checkpoint)?;
            let canonical = artifacts::canonical_extrinsic(&store, &model)?;
            let mut noise = ext_seed.map(SeededNoise::new);
            let spec: Vec<(usize, ndarray::Array2<f64>)> = objects
                .iter()
                .map(|&c| {
                    let z = match noise.as_mut() {
                        Some(n) => n.normal(1, model.ext_head.d_out),
                        None => canonical.clone(),
                    };
                    (c, z)
                })
                .collect();
            let image = artifacts::compose_image(&store, &model, &spec, grid_of(&cfg))?;
            save_png(&image, &common.out.join("compose.png"))?;
            println!("wrote compose.png ({} objects)", spec.len());
        }
        Command::Swap {
            common,
            checkpoint,
            data,
            scene,
            slot_i,
            slot_j,
        } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "swap", &cfg)?;
            let (store, model, _) = load_model(&cfg, &checkpoint)?;
            let sample = load_scene(&data, scene)?;
            let (before, after) = artifacts::swap_images(
                &store,
                &model,
                &sample,
                slot_i,
                slot_j,
                cfg.tau_end,
                derive_seed(cfg.seed, scene as u64),
            )?;
            save_png(&before, &common.out.join("before.png"))?;
            save_png(&after, &common.out.join("after.png"))?;
            println!("wrote before.png / after.png");
        }
        Command::Decompose {
            common,
            checkpoint,
            data,
            scene,
        } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "decompose", &cfg)?;
            let (store, model, _) = load_model(&cfg, &checkpoint)?;
            let sample = load_scene(&data, scene)?;
            let d = artifacts::decompose(
                &store,
                &model,
                &sample,
                cfg.tau_end,
                derive_seed(cfg.seed, scene as u64),
            )?;
            save_png(&d.background, &common.out.join("background.png"))?;
            for (k, img) in d.slots.iter().enumerate() {
                save_png(img, &common.out.join(format!("slot_{:02}.png", k + 1)))?;
            }
            save_png(&d.overlay, &common.out.join("overlay.png"))?;
            println!("wrote {} panels", d.slots.len() + 2);
        }
        Command::Report {
            common,
            inputs,
            variant,
            dataset,
        } => {
            let cfg = load_config(&common)?;
            write_provenance(&common.out, "report", &cfg)?;
            let mut runs = Vec::new();
            for path in &inputs {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                runs.extend(parse_runs_csv(&text, path)?);
            }
            let rep = report(&runs, &variant, &dataset);
            fs::write(common.out.join("report.csv"), rep.to_csv())?;
            println!(
                "aggregated {} based on {} evaluations",
                dataset,
                runs.len()
            );
            println!("{}", rep.to_table());
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
