use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pixcon::config::validate_config;
use pixcon::data::{load_image, load_manifest, synth_dataset, table6_chains, save_image_png, save_mask_png};
use pixcon::eval::{binarize, evaluate, evaluate_samples, load_eval_set, plot_curves, robustness_sweep, SweepAxis};
use pixcon::train::{
    load_predictor, load_stage1_checkpoint, load_training_set, predict, stage1_pretrain, stage2_finetune, EpochRecord,
    Stage1Config, Stage2Config,
};
use pixcon::{DegradationSpec, LocalizationNet, RgbImage, RunConfig};

const PRODUCED: &str = "produced_files.sha256";

#[derive(Parser)]
#[command(name = "pixcon", version, about = "Pixel contrastive forgery localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Global seed (shorthand for `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Config override, `key=value`. Repeatable; later wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic splice samples and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Stage 1: contrastive pretraining of backbone and projections.
    TrainBackbone {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Stage 2: focal fine-tuning of the head on a stage-1 checkpoint.
    TrainHead {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write the score map and binary mask for one image.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Per-dataset F1/IoU and sample-weighted averages.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
    },
    /// Degradation sweeps with curve tables and plots.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::All)]
        axis: Axis,
        /// Custom chain such as `jpeg:60,resize:0.6,blur:5,noise:0.006`.
        #[arg(long, conflicts_with = "axis")]
        chain: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Jpeg,
    Blur,
    Noise,
    Resize,
    Chains,
    All,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Resolves the config and records it (plus the seed) in the output dir.
fn prepare(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = validate_config(common.config.as_deref(), &overrides)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    fs::write(common.out.join("resolved_config.toml"), cfg.to_toml_string())?;
    fs::write(common.out.join("seed.txt"), format!("{}\n", cfg.seed))?;
    Ok(cfg)
}

fn report_epoch(r: &EpochRecord) {
    eprintln!("epoch {:>3}  loss {:.6}  lr {:.3e}  {:.1}s", r.epoch, r.loss, r.lr, r.seconds);
}

fn run(command: Command) -> Result<()> {
    let common = match &command {
        Command::Synth { common, .. }
        | Command::TrainBackbone { common, .. }
        | Command::TrainHead { common, .. }
        | Command::Predict { common, .. }
        | Command::Eval { common, .. }
        | Command::Robustness { common, .. } => common.clone(),
    };
    let cfg = prepare(&common)?;
    let out = common.out.as_path();

    match command {
        Command::Synth { count, .. } => {
            let m = synth_dataset(out, count, cfg.synth_size, cfg.seed)?;
            println!("wrote {} samples to {}", m.len(), out.join("manifest.jsonl").display());
        }
        Command::TrainBackbone { manifest, .. } => {
            let samples = load_training_set(&load_manifest(&manifest)?, cfg.input_size)?;
            let mut net = LocalizationNet::new(cfg.model_config(), cfg.seed)?;
            let stage = Stage1Config {
                train: cfg.train_config(1),
                contrast: cfg.contrast_config(),
                sampler: cfg.sampler_config(),
            };
            let o = stage1_pretrain(&mut net, &samples, &stage, Some(out), &mut report_epoch)?;
            println!("stage 1 best loss {:.6} at epoch {}", o.best_loss, o.best_epoch);
        }
        Command::TrainHead {
            checkpoint, manifest, ..
        } => {
            let mut net = load_stage1_checkpoint(&checkpoint)?;
            let samples = load_training_set(&load_manifest(&manifest)?, net.cfg.input_size)?;
            let stage = Stage2Config {
                train: cfg.train_config(2),
                focal: cfg.focal_config(),
            };
            let o = stage2_finetune(&mut net, &samples, &stage, Some(out), &mut report_epoch)?;
            println!("stage 2 best loss {:.6} at epoch {}", o.best_loss, o.best_epoch);
        }
        Command::Predict { checkpoint, image, .. } => {
            let net = load_predictor(&checkpoint)?;
            let scores = predict(&net, &load_image(&image)?)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let gray = scores.probs.iter().flat_map(|&p| [p; 3]).collect();
            save_image_png(&out.join(format!("{stem}_score.png")), &RgbImage::new(scores.width, scores.height, gray))?;
            save_mask_png(&out.join(format!("{stem}_mask.png")), &binarize(&scores, cfg.threshold))?;
            println!("wrote {stem}_score.png and {stem}_mask.png");
        }
        Command::Eval { checkpoint, manifest, .. } => {
            let net = load_predictor(&checkpoint)?;
            let manifests = manifest.iter().map(load_manifest).collect::<pixcon::Result<Vec<_>>>()?;
            let report = evaluate(&net, &manifests, cfg.threshold, cfg.empty_score)?;
            report.write_json(&out.join("report.json"))?;
            report.write_csv(out)?;
            for d in &report.datasets {
                println!("{:<16} n={:<5} F1 {:.4}  IoU {:.4}", d.dataset_id, d.n, d.f1, d.iou);
            }
            println!("weighted         F1 {:.4}  IoU {:.4}", report.weighted_f1, report.weighted_iou);
        }
        Command::Robustness {
            checkpoint,
            manifest,
            axis,
            chain,
            ..
        } => {
            let net = load_predictor(&checkpoint)?;
            let manifests = manifest.iter().map(load_manifest).collect::<pixcon::Result<Vec<_>>>()?;
            let samples = load_eval_set(&manifests)?;
            let axes = match chain {
                Some(c) => {
                    let spec = DegradationSpec::parse_chain(&c, cfg.seed)?;
                    vec![SweepAxis::Chains(vec![(spec.label(), spec.chain)])]
                }
                None => axes(&cfg, axis),
            };
            let mut report = evaluate_samples(&net, &samples, cfg.threshold, cfg.empty_score)?;
            for a in &axes {
                let rows = robustness_sweep(&net, &samples, a, cfg.seed, cfg.threshold, cfg.empty_score)?;
                plot_curves(&rows, &out.join(format!("robustness_{}.svg", a.name())), a.name())?;
                for r in &rows {
                    println!("{:<8} {:<16} F1 {:.4}  IoU {:.4}", r.axis, r.label, r.mean_f1, r.mean_iou);
                }
                report.curves.extend(rows);
            }
            report.write_json(&out.join("report.json"))?;
            report.write_csv(out)?;
        }
    }
    write_produced(out)
}

fn axes(cfg: &RunConfig, axis: Axis) -> Vec<SweepAxis> {
    let all = [
        SweepAxis::Jpeg(cfg.jpeg_grid.clone()),
        SweepAxis::Blur(cfg.blur_grid.clone()),
        SweepAxis::Noise(cfg.noise_grid.clone()),
        SweepAxis::Resize(cfg.resize_grid.clone()),
        SweepAxis::Chains(table6_chains()),
    ];
    let pick = match axis {
        Axis::Jpeg => 0,
        Axis::Blur => 1,
        Axis::Noise => 2,
        Axis::Resize => 3,
        Axis::Chains => 4,
        Axis::All => return all.into(),
    };
    all.into_iter().nth(pick).into_iter().collect()
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Lists every file under `out` with its SHA-256, in `sha256sum` format.
fn write_produced(out: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out, &mut files)?;
    files.sort();
    let mut f = fs::File::create(out.join(PRODUCED))?;
    for path in files {
        let rel = path.strip_prefix(out).unwrap_or(&path);
        if rel == Path::new(PRODUCED) {
            continue;
        }
        let digest = Sha256::digest(fs::read(&path)?);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        writeln!(f, "{hex}  {}", rel.display())?;
    }
    Ok(())
}
