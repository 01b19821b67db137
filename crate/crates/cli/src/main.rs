//! Coarse-to-fine face hallucination CLI: dataset synthesis, staged
//! training, inference, and evaluation.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 runtime or
//! numerical error. `VIVID_RUN_DIR` overrides every command's output root.

mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use vivid_core::datapipe::{
    build_component_set, load_dataset, save_png, synth_pair, write_dataset, Dataset, FacePair,
};
use vivid_core::error::{Error, Result};
use vivid_core::eval::{evaluate, EvalModel};
use vivid_core::face::{image_from_u8, FaceImage, Landmarks, HR_SIZE, LR_SIZE};
use vivid_core::model::infer_one;
use vivid_core::toyface::toy_face;
use vivid_core::trainer::{load_checkpoint, run_stage, save_checkpoint, Checkpoint};

type F = vivid_core::TrainScalar;

#[derive(Parser)]
#[command(
    name = "vivid",
    about = "Joint face super-resolution (8x) and frontalization, coarse to fine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize paired (unaligned LR, frontal HR, landmarks) training data.
    MakeData {
        /// Directory of 128x128 RGB PNG source faces.
        #[arg(long)]
        hr: Option<PathBuf>,
        /// Directory of matching 68-point landmark .txt files.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Generate N synthetic faces instead of reading --hr/--landmarks.
        #[arg(long)]
        toy: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override [data].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [data].scale.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Run one training stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to initialize from (previous stage, or same stage to resume).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Dataset root; defaults to [data].root from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hallucinate: write coarse, prior and fine PNGs for each input.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A 16x16 PNG, or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional directory of 68-point landmark .txt files (by stem).
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Evaluate PSNR / SSIM / identity distance over a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "identity": score the ground truth against itself (plumbing check).
        #[arg(long)]
        stub: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

/// Output root override: VIVID_RUN_DIR replaces the --out argument.
fn resolve_out(out: PathBuf) -> PathBuf {
    match std::env::var_os("VIVID_RUN_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => out,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData {
            hr,
            landmarks,
            toy,
            out,
            config,
            seed,
            scale,
        } => cmd_make_data(hr, landmarks, toy, resolve_out(out), config, seed, scale),
        Command::Train {
            stage,
            config,
            resume,
            data,
            out,
        } => cmd_train(stage, config, resume, data, resolve_out(out)),
        Command::Infer {
            checkpoint,
            input,
            out,
            landmarks,
        } => cmd_infer(checkpoint, input, resolve_out(out), landmarks),
        Command::Eval {
            checkpoint,
            data,
            out,
            stub,
        } => cmd_eval(checkpoint, data, resolve_out(out), stub),
    }
}

/// Deterministic per-index RNG stream (splitmix64 over the base seed).
fn rng_for_index(seed: u64, idx: u64) -> ChaCha12Rng {
    let mut z = seed ^ idx.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha12Rng::seed_from_u64(z ^ (z >> 31))
}

fn load_hr_sources(
    hr_dir: &Path,
    lm_dir: &Path,
) -> Result<Vec<(String, FaceImage<F>, Landmarks)>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(hr_dir)
        .map_err(|e| Error::io(hr_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(&path, "unreadable file name"))?
            .to_string();
        let img = image::open(&path).map_err(|e| Error::Image {
            path: path.clone(),
            source: e,
        })?;
        let rgb = img.to_rgb8();
        if rgb.dimensions() != (HR_SIZE as u32, HR_SIZE as u32) {
            return Err(Error::data(
                &path,
                format!("expected {HR_SIZE}x{HR_SIZE}, got {:?}", rgb.dimensions()),
            ));
        }
        let face = image_from_u8::<F>(rgb.as_raw(), HR_SIZE, HR_SIZE);
        let lm_path = lm_dir.join(format!("{stem}.txt"));
        let text = std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
        let mut points = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::data(&lm_path, "malformed landmark line"))?;
            let y: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::data(&lm_path, "malformed landmark line"))?;
            points.push([x, y]);
        }
        let lm = Landmarks::new(points)
            .map_err(|e| Error::data(&lm_path, e.to_string()))?;
        out.push((stem, face, lm));
    }
    Ok(out)
}

fn cmd_make_data(
    hr: Option<PathBuf>,
    landmarks: Option<PathBuf>,
    toy: Option<usize>,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    scale: Option<usize>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config.as_deref())?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    if let Some(s) = scale {
        cfg.data.scale = s;
    }
    let deg = cfg.degradation();

    let sources: Vec<(String, FaceImage<F>, Landmarks)> = match (toy, hr, landmarks) {
        (Some(n), _, _) => (0..n)
            .map(|i| {
                let (img, lm) = toy_face::<F>(cfg.data.seed.wrapping_add(i as u64));
                (format!("{i:05}"), img, lm)
            })
            .collect(),
        (None, Some(hr_dir), Some(lm_dir)) => load_hr_sources(&hr_dir, &lm_dir)?,
        _ => {
            return Err(Error::config(
                "make-data needs either --toy N or both --hr and --landmarks",
            ))
        }
    };

    let mut ids = Vec::with_capacity(sources.len());
    let mut pairs: Vec<FacePair<F>> = Vec::with_capacity(sources.len());
    for (idx, (id, face, lm)) in sources.into_iter().enumerate() {
        let mut rng = rng_for_index(cfg.data.seed, idx as u64);
        let pair = synth_pair(&face, &lm, &deg, &mut rng)?;
        ids.push(id);
        pairs.push(pair);
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_dataset(&out, &ids, &pairs)?;
    cfg.echo_into(&out)?;
    println!("wrote {} pairs to {}", ids.len(), out.display());
    Ok(())
}

fn cmd_train(
    stage: u8,
    config: Option<PathBuf>,
    resume: Option<PathBuf>,
    data: Option<PathBuf>,
    out: PathBuf,
) -> Result<()> {
    let cfg = RunConfig::load(config.as_deref())?;
    let data_root = data.unwrap_or_else(|| cfg.data.root.clone());
    let dataset: Dataset<F> = load_dataset(&data_root)?;
    let comps = build_component_set(&dataset.pairs, &cfg.model.crop_spec()).0;
    let init: Option<Checkpoint<F>> = match resume {
        Some(path) => Some(load_checkpoint(&path)?),
        None => None,
    };
    let tc = cfg.train_config(stage);
    tc.validate()?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.echo_into(&out)?;
    let (ckpt, report) = run_stage(tc, &dataset, &comps, init, Some(&out))?;
    let ck_path = out.join(format!("stage{stage}.ckpt"));
    save_checkpoint(&ckpt, &ck_path)?;
    let report_path = out.join(format!("report_stage{stage}.csv"));
    report.write_csv(&report_path)?;
    println!(
        "stage {stage}: {} steps, checkpoint {}, report {}",
        report.rows.len(),
        ck_path.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_infer(
    checkpoint: PathBuf,
    input: PathBuf,
    out: PathBuf,
    landmarks: Option<PathBuf>,
) -> Result<()> {
    let ckpt: Checkpoint<F> = load_checkpoint(&checkpoint)?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&input)
            .map_err(|e| Error::io(&input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::data(&input, "no PNG inputs found"));
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for path in inputs {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(&path, "unreadable file name"))?
            .to_string();
        let img = image::open(&path).map_err(|e| Error::Image {
            path: path.clone(),
            source: e,
        })?;
        let rgb = img.to_rgb8();
        if rgb.dimensions() != (LR_SIZE as u32, LR_SIZE as u32) {
            return Err(Error::data(
                &path,
                format!(
                    "expected a {LR_SIZE}x{LR_SIZE} input, got {}x{}",
                    rgb.dimensions().0,
                    rgb.dimensions().1
                ),
            ));
        }
        let lr = image_from_u8::<F>(rgb.as_raw(), LR_SIZE, LR_SIZE);
        let lm = match &landmarks {
            Some(dir) => {
                let lm_path = dir.join(format!("{stem}.txt"));
                let text =
                    std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
                let points: Vec<[f64; 2]> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        let mut it = l.split_whitespace();
                        let x = it.next().and_then(|t| t.parse().ok());
                        let y = it.next().and_then(|t| t.parse().ok());
                        match (x, y) {
                            (Some(x), Some(y)) => Ok([x, y]),
                            _ => Err(Error::data(&lm_path, "malformed landmark line")),
                        }
                    })
                    .collect::<Result<_>>()?;
                Some(Landmarks::new(points).map_err(|e| Error::data(&lm_path, e.to_string()))?)
            }
            None => None,
        };
        let outputs = infer_one(&ckpt.model, &lr, lm.as_ref())?;
        save_png(&out.join(format!("{stem}_coarse.png")), &outputs.coarse_hr)?;
        save_png(&out.join(format!("{stem}_prior.png")), &outputs.prior)?;
        save_png(&out.join(format!("{stem}_fine.png")), &outputs.fine_hr)?;
        println!("{stem}: coarse, prior, fine written to {}", out.display());
    }
    Ok(())
}

fn cmd_eval(checkpoint: PathBuf, data: PathBuf, out: PathBuf, stub: Option<String>) -> Result<()> {
    let ckpt: Checkpoint<F> = load_checkpoint(&checkpoint)?;
    let dataset: Dataset<F> = load_dataset(&data)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let model = match stub.as_deref() {
        Some("identity") => EvalModel::IdentityStub(&ckpt.model),
        Some(other) => {
            return Err(Error::config(format!(
                "unknown --stub mode {other:?} (supported: identity)"
            )))
        }
        None => EvalModel::Model(&ckpt.model),
    };
    if dataset.is_empty() {
        eprintln!("warning: empty dataset, writing an empty report");
    }
    let report = evaluate(&model, &dataset);
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_aggregate_json(&out.join("aggregate.json"))?;
    match report.aggregate.mean_psnr_db {
        Some(p) => println!(
            "{} images: mean PSNR {:.3} dB, mean SSIM {:.4}",
            report.per_image.len(),
            p,
            report.aggregate.mean_ssim.unwrap_or(f64::NAN)
        ),
        None => println!("{} images evaluated", report.per_image.len()),
    }
    Ok(())
}
