use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use sparsevox::ablation::{run_ablation, write_ablation_csv, Variant};
use sparsevox::checkpoint::{load_checkpoint, load_checkpoint_meta, save_checkpoint, sidecar_path, CheckpointMeta};
use sparsevox::config::TrainConfig;
use sparsevox::metrics::evaluate;
use sparsevox::render::{render_image, Camera, Exec};
use sparsevox::scene::{generate_toy_scene, load_dataset, write_dataset, write_pfm, write_png, RgbImage, SceneType, Split, ToySceneSpec};
use sparsevox::train::{render_settings, train_pipeline};

#[derive(Parser)]
#[command(name = "sparsevox", version, about = "Voxel radiance fields from sparse views")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground-truth images.
    MakeToy {
        /// Scene description (JSON); the built-in default scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a field and write checkpoints.
    Train {
        /// Preset name or TOML path.
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only this many training views.
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render images and depth maps for a list of cameras.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute PSNR and SSIM against a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Run the eight-row on/off study of the training components.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "toy")]
        config: String,
        #[arg(long)]
        views: Option<usize>,
        /// Comma-separated seeds; results are averaged.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

/// Cameras to render. `scene_type` selects NDC rendering for forward scenes.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    cameras: Vec<Camera<f64>>,
    #[serde(default = "white")]
    background: [f64; 3],
    #[serde(default = "inward")]
    scene_type: SceneType,
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

fn inward() -> SceneType {
    SceneType::Inward
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = setup_threads().and_then(|serial| run(cli.command, serial)) {
        let msg = format!("{e:#}").replace('\n', " ");
        eprintln!("error: {msg}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

/// Sizes the global pool from `THREADS`. Returns true for the single-thread
/// reference path.
fn setup_threads() -> Result<bool> {
    let n = match std::env::var("THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("THREADS must be a positive integer, got {s:?}"))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(n == 1)
}

fn load_config(name: &str, serial: bool) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(name)?;
    if serial {
        cfg.exec = Exec::Serial;
    }
    Ok(cfg)
}

fn run(cmd: Command, serial: bool) -> Result<()> {
    match cmd {
        Command::MakeToy { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<ToySceneSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => ToySceneSpec::default(),
            };
            let toy = generate_toy_scene(&spec)?;
            write_dataset(&out, &toy.dataset)?;
            std::fs::write(out.join("scene.json"), serde_json::to_string_pretty(&spec)?)?;
            println!("wrote {} views to {}", toy.dataset.views.len(), out.display());
        }
        Command::Train { config, data, out, views, seed } => {
            let mut cfg = load_config(&config, serial)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut ds = load_dataset(&data)?;
            if let Some(k) = views {
                ds = ds.subsample_views(k, cfg.seed)?;
            }
            let result = train_pipeline::<f32>(&ds, &cfg, Some(&out))?;
            let last = result.stages.last().map(|s| s.name.clone()).unwrap_or_default();
            let meta = CheckpointMeta {
                step: cfg.stages.iter().map(|s| s.iterations).sum(),
                stage: last,
                config: cfg,
            };
            let path = out.join("final.svx");
            save_checkpoint(&result.field, &meta, &path)?;
            for s in &result.stages {
                let final_loss = s.log.last().map_or(f64::NAN, |r| r.total);
                println!("stage {}: {} steps, loss {final_loss:.6}, {:.1}s", s.name, s.log.len(), s.seconds);
            }
            println!("checkpoint {}", path.display());
        }
        Command::Render { ckpt, poses, out } => {
            let (field, cfg) = open_checkpoint(&ckpt, serial)?;
            let text = std::fs::read_to_string(&poses).with_context(|| format!("reading {}", poses.display()))?;
            let pf: PoseFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", poses.display()))?;
            if pf.cameras.is_empty() {
                bail!("{} lists no cameras", poses.display());
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let rc = render_settings(&field, pf.background, pf.scene_type, &cfg);
            for (k, cam) in pf.cameras.iter().enumerate() {
                let (colors, depth) = render_image(&field, &cam.cast(), &rc)?;
                let px: Vec<[f64; 3]> = colors.iter().map(|c| c.map(f64::from)).collect();
                let img = RgbImage::from_f64(cam.width, cam.height, &px)?;
                write_png(&out.join(format!("{k:03}.png")), &img)?;
                write_pfm(&out.join(format!("{k:03}_depth.pfm")), cam.width, cam.height, 1, &depth)?;
            }
            println!("rendered {} views to {}", pf.cameras.len(), out.display());
        }
        Command::Eval { ckpt, data, report, split } => {
            let (field, cfg) = open_checkpoint(&ckpt, serial)?;
            let ds = load_dataset(&data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let r = evaluate(&field, &ds, split, &cfg)?;
            write_json(&report, &r)?;
            println!("PSNR {:.3} dB, SSIM {:.4} over {} views", r.mean_psnr, r.mean_ssim, r.views);
        }
        Command::Ablate { data, out, config, views, seeds } => {
            let cfg = load_config(&config, serial)?;
            let ds = load_dataset(&data)?;
            let rows = run_ablation(&ds, &cfg, &Variant::table(), views, &seeds)?;
            write_ablation_csv(&out, &rows)?;
            for (v, r) in Variant::table().iter().zip(&rows) {
                println!("{:12} PSNR {:.3} SSIM {:.4}", v.label(), r.psnr, r.ssim);
            }
        }
    }
    Ok(())
}

fn open_checkpoint(path: &Path, serial: bool) -> Result<(sparsevox::FieldF32, TrainConfig)> {
    let ck = load_checkpoint(path)?;
    let mut cfg = load_checkpoint_meta(path)
        .with_context(|| format!("checkpoint sidecar {} is required", sidecar_path(path).display()))?
        .config;
    if serial {
        cfg.exec = Exec::Serial;
    }
    Ok((ck.field, cfg))
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
