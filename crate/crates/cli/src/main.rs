//! `c3gan` command line: train, eval, assign, generate and synth-data.

mod grid;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use c3gan::config::{apply_overrides, parse_kv, validate_config};
use c3gan::data::{load_dataset, synth_shapes, Dataset, DatasetManifest, Split};
use c3gan::eval::{assign, evaluate, write_assignments, DiscriminatorEmbedder};
use c3gan::generator::sample_eps;
use c3gan::sampling::{sample_noise, LatentCode};
use c3gan::tensor::Array;
use c3gan::trainer::{load_checkpoint, save_checkpoint, JsonLines, StepLog, TrainEvent, TrainState, Trainer};
use c3gan::{Error, Result, Rng, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::grid::{save, tile, Tile};

#[derive(Parser)]
#[command(name = "c3gan", version, about = "Unsupervised fine-grained clustering with a compositional GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch, or resume from --checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root containing train/manifest.tsv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// KEY=VALUE configuration override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Total number of iterations to reach.
        #[arg(long)]
        steps: Option<u64>,
        /// Checkpoint to resume from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score cluster assignments of a labeled split; prints {acc, nmi, Y_eff, Y_true, n}.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        /// Directory for scores.json and assignments.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-image cluster assignments.
    Assign {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render image grids from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: GridMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
    },
    /// Write the labeled synthetic shapes dataset (train and eval splits).
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 100)]
        eval_per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum GridMode {
    /// Rows share a latent code, columns vary z.
    FixedCVaryZ,
    /// Rows share z, columns vary the latent code.
    VaryCFixedZ,
    /// One row per sample: background, mask, foreground, composite.
    Decomposed,
}

impl GridMode {
    fn file_name(self) -> &'static str {
        match self {
            GridMode::FixedCVaryZ => "fixed_c_vary_z.png",
            GridMode::VaryCFixedZ => "vary_c_fixed_z.png",
            GridMode::Decomposed => "decomposed.png",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::DatasetNotFound(_) | Error::Dataset(_) | Error::Image { .. } => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Checksum | Error::Incompatible(_) => 3,
        Error::MissingLabels => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("C3_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, data, out, seed, overrides, steps, checkpoint } => {
            cmd_train(config.as_deref(), &data, &out, seed, &overrides, steps, checkpoint.as_deref())
        }
        Command::Eval { checkpoint, data, split, out } => cmd_eval(&checkpoint, &data, split, out.as_deref()),
        Command::Assign { checkpoint, data, split, out } => cmd_assign(&checkpoint, &data, split, &out),
        Command::Generate { checkpoint, mode, out, seed, rows, cols } => cmd_generate(&checkpoint, mode, &out, seed, rows, cols),
        Command::SynthData { out, seed, classes, per_class, eval_per_class, size } => {
            cmd_synth(&out, seed, classes, per_class, eval_per_class, size)
        }
    }
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String], steps: Option<u64>) -> Result<RunConfig> {
    let mut raw = match path {
        Some(p) => parse_kv(&fs::read_to_string(p)?)?,
        None => Default::default(),
    };
    apply_overrides(&mut raw, overrides)?;
    if let Some(s) = seed {
        raw.insert("seed".into(), s.to_string());
    }
    if let Some(s) = steps {
        raw.insert("steps".into(), s.to_string());
    }
    validate_config(&raw)
}

fn load_split(data: &Path, split: Split, image_size: usize) -> Result<Dataset> {
    let manifest = DatasetManifest::read(data, split, image_size)?;
    load_dataset(&manifest)
}

/// Keeps log lines of steps before `step`, so a resumed run continues the file.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for line in text.lines() {
        let log: StepLog = serde_json::from_str(line)?;
        if log.step < step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    overrides: &[String],
    steps: Option<u64>,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let (cfg, state) = match checkpoint {
        Some(path) => {
            if config.is_some() || seed.is_some() || !overrides.is_empty() {
                return Err(Error::InvalidArgument(
                    "a resumed run takes its configuration from the checkpoint; only --steps may change".into(),
                ));
            }
            let mut state = load_checkpoint(path)?;
            if let Some(s) = steps {
                state.config.steps = s;
            }
            (state.config.clone(), Some(state))
        }
        None => (resolve_config(config, seed, overrides, steps)?, None),
    };
    let dataset = load_split(data, Split::Train, cfg.image_size)?;
    let trainer = Trainer::new(&cfg);
    let mut state = state.unwrap_or_else(|| trainer.init_state());

    fs::create_dir_all(out.join("checkpoints"))?;
    fs::write(out.join("config.txt"), cfg.to_kv_string())?;
    let log_path = out.join("log.jsonl");
    if state.step == 0 {
        fs::write(&log_path, "")?;
    } else {
        truncate_log(&log_path, state.step)?;
    }
    let mut log = JsonLines::new(fs::OpenOptions::new().create(true).append(true).open(&log_path)?);
    info!("training {} images from step {} to {}", dataset.len(), state.step, cfg.steps);

    trainer.train(&mut state, &dataset, cfg.steps, |event| match event {
        TrainEvent::Step(s) => {
            log::debug!("step {} d {:.4} g {:.4}", s.step, s.d_loss.total, s.g_loss.total);
            log.write(s)
        }
        TrainEvent::Checkpoint(st) => {
            let name = format!("step_{:08}", st.step);
            save_checkpoint(st, &out.join("checkpoints").join(format!("{name}.ckpt")))?;
            save_checkpoint(st, &out.join("checkpoints").join("latest.ckpt"))?;
            save(&probe_grid(&trainer, st)?, &out.join("samples").join(format!("{name}.png")))?;
            info!("checkpoint at step {}", st.step);
            Ok(())
        }
    })
}

fn probe_grid(trainer: &Trainer, state: &TrainState) -> Result<image::RgbImage> {
    let p = &state.probe;
    let codes = p.latent_codes(state.config.effective_clusters())?;
    let r = trainer.generator().render(&state.generator, &p.z, &codes, &p.eps)?;
    let n = codes.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let tiles: Vec<Tile<'_>> = (0..rows * cols).map(|i| Tile { batch: &r.composite, index: i.min(n - 1), signed: true }).collect();
    Ok(tile(&tiles, rows, cols))
}

fn load_for_inference(checkpoint: &Path) -> Result<(Trainer, TrainState)> {
    let state = load_checkpoint(checkpoint)?;
    Ok((Trainer::new(&state.config), state))
}

fn cmd_eval(checkpoint: &Path, data: &Path, split: Split, out: Option<&Path>) -> Result<()> {
    let (trainer, state) = load_for_inference(checkpoint)?;
    let manifest = DatasetManifest::read(data, split, state.config.image_size)?;
    if !manifest.is_labeled() {
        return Err(Error::MissingLabels);
    }
    let dataset = load_dataset(&manifest)?;
    let model = DiscriminatorEmbedder { discriminator: trainer.discriminator(), params: &state.discriminator };
    let centroids = trainer.discriminator().centroid_matrix(&state.discriminator).l;
    let (a, scores) = evaluate(&dataset, &model, &centroids, state.config.temperature, state.config.batch_size)?;
    let json = serde_json::to_string(&scores)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scores.json"), format!("{json}\n"))?;
        write_assignments(&dir.join("assignments.tsv"), dataset.paths(), &a)?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{json}")?;
    Ok(())
}

fn cmd_assign(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<()> {
    let (trainer, state) = load_for_inference(checkpoint)?;
    let dataset = load_split(data, split, state.config.image_size)?;
    let model = DiscriminatorEmbedder { discriminator: trainer.discriminator(), params: &state.discriminator };
    let centroids = trainer.discriminator().centroid_matrix(&state.discriminator).l;
    let a = assign(&dataset, &model, &centroids, state.config.temperature, state.config.batch_size)?;
    fs::create_dir_all(out)?;
    let path = out.join("assignments.tsv");
    write_assignments(&path, dataset.paths(), &a)?;
    info!("wrote {} assignments to {}", a.cluster_ids.len(), path.display());
    Ok(())
}

fn cmd_generate(checkpoint: &Path, mode: GridMode, out: &Path, seed: Option<u64>, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one row and one column".into()));
    }
    let (trainer, state) = load_for_inference(checkpoint)?;
    let cfg = &state.config;
    let y = cfg.effective_clusters();
    let mut rng = Rng::seed_from(seed.unwrap_or(cfg.seed));
    let gen = trainer.generator();
    let img = match mode {
        GridMode::FixedCVaryZ | GridMode::VaryCFixedZ => {
            let fixed_c = matches!(mode, GridMode::FixedCVaryZ);
            // One noise draw per sample of the varying (or fixed) z axis.
            let nz = if fixed_c { cols } else { rows };
            let z: Array<f32> = sample_noise(cfg.d_z, nz, &mut rng)?;
            let eps: Array<f32> = sample_eps(nz, cfg.d_c, &mut rng);
            let n = rows * cols;
            let (mut zs, mut es, mut codes) = (Vec::with_capacity(n * cfg.d_z), Vec::with_capacity(n * cfg.d_c), Vec::with_capacity(n));
            for r in 0..rows {
                for c in 0..cols {
                    let (zi, ci) = if fixed_c { (c, r) } else { (r, c) };
                    zs.extend_from_slice(&z.data()[zi * cfg.d_z..(zi + 1) * cfg.d_z]);
                    es.extend_from_slice(&eps.data()[zi * cfg.d_c..(zi + 1) * cfg.d_c]);
                    codes.push(LatentCode::new(ci % y, y)?);
                }
            }
            let rendered = gen.render(&state.generator, &Array::new(&[n, cfg.d_z], zs), &codes, &Array::new(&[n, cfg.d_c], es))?;
            let tiles: Vec<Tile<'_>> = (0..n).map(|i| Tile { batch: &rendered.composite, index: i, signed: true }).collect();
            tile(&tiles, rows, cols)
        }
        GridMode::Decomposed => {
            let codes: Vec<LatentCode> = (0..rows).map(|r| LatentCode::new(r % y, y)).collect::<Result<_>>()?;
            let z: Array<f32> = sample_noise(cfg.d_z, rows, &mut rng)?;
            let eps: Array<f32> = sample_eps(rows, cfg.d_c, &mut rng);
            let r = gen.render(&state.generator, &z, &codes, &eps)?;
            let tiles: Vec<Tile<'_>> = (0..rows)
                .flat_map(|i| {
                    [
                        Tile { batch: &r.background, index: i, signed: true },
                        Tile { batch: &r.mask, index: i, signed: false },
                        Tile { batch: &r.foreground, index: i, signed: true },
                        Tile { batch: &r.composite, index: i, signed: true },
                    ]
                })
                .collect();
            tile(&tiles, rows, 4)
        }
    };
    let path = out.join(mode.file_name());
    save(&img, &path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(out: &Path, seed: u64, classes: usize, per_class: usize, eval_per_class: usize, size: usize) -> Result<()> {
    let root = Rng::seed_from(seed);
    let train = synth_shapes(classes, per_class, size, &root.fork(0))?;
    train.write(out, Split::Train)?;
    let eval = synth_shapes(classes, eval_per_class, size, &root.fork(1))?;
    eval.write(out, Split::Eval)?;
    info!("wrote {} train and {} eval images to {}", train.images.len(), eval.images.len(), out.display());
    Ok(())
}
