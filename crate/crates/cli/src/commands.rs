use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uwhdn_core::datasets::synthetic::{synthetic_pairs, write_synthetic_dataset};
use uwhdn_core::datasets::{
    build_manifest, synthesize_underwater, unpaired_split, DatasetKind, DatasetManifest, DegradationParams, Image,
    UnpairedImages, UnpairedSplit,
};
use uwhdn_core::evaluation::{emit_artifacts, evaluate_manifest, manifest_diagnostics, restore_image};
use uwhdn_core::training::{self, load_checkpoint, read_trace, TrainConfig, TrainOutput, TrainOverrides};
use uwhdn_core::Error;

use crate::args::{DiagnoseArgs, EvaluateArgs, PrepareDataArgs, RestoreArgs, SynthesizeArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} inputs failed")]
    Partial { failed: usize, total: usize },
}

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Error::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// A single file, or the image files of a directory in name order.
fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let entries = std::fs::read_dir(input).map_err(|source| Error::Io {
        path: input.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no images in {}", input.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

pub fn prepare_data(a: PrepareDataArgs) -> Result<()> {
    let kind: DatasetKind = a.kind.parse()?;
    let manifest = build_manifest(&a.root, kind)?;
    let split = unpaired_split(&manifest, a.seed)?;
    create_dir(&a.out.out)?;
    manifest.write(&a.out.out.join(MANIFEST_FILE))?;
    split.write(&a.out.out.join(SPLIT_FILE))?;
    println!("underwater={} clean={}", split.underwater_ids.len(), split.clean_ids.len());
    Ok(())
}

pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let base = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let overrides = TrainOverrides {
        patch: a.patch,
        batch: a.batch,
        learning_rate: a.learning_rate,
        beta1: a.beta1,
        beta2: a.beta2,
        epochs: a.epochs,
        steps: a.steps,
        seed: a.seed,
        log_every: a.log_every,
        checkpoint_every: a.checkpoint_every,
        base_width: a.base_width,
        res_blocks: a.res_blocks,
    };
    let config = base.apply(&overrides);
    config.validate()?;
    Ok(config)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a)?;
    let manifest = DatasetManifest::read(&a.data.join(MANIFEST_FILE))?;
    let split = UnpairedSplit::read(&a.data.join(SPLIT_FILE))?;
    let images = UnpairedImages::load(&manifest, &split)?;
    let out = &a.out.out;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), &config.to_toml_string()?)?;
    let result = training::train(
        &config,
        &images,
        &TrainOutput {
            dir: Some(out.clone()),
            resume_from: a.resume.clone(),
        },
    )?;
    println!(
        "trained to step {} (epoch {}); checkpoint {}",
        result.state.step,
        result.state.epoch,
        out.join(training::FINAL_CHECKPOINT).display()
    );
    Ok(())
}

pub fn restore(a: RestoreArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let files = input_images(&a.input)?;
    create_dir(&a.out.out)?;
    let mut failed = 0;
    for f in &files {
        let run = || -> std::result::Result<(), Error> {
            let img = Image::load(f)?;
            let r = restore_image(&state, &img)?;
            let s = stem(f);
            r.content.save_png(&a.out.out.join(format!("{s}_content.png")))?;
            r.restored.save_png(&a.out.out.join(format!("{s}_restored.png")))?;
            Ok(())
        };
        match run() {
            Ok(()) => log::info!("restored {}", f.display()),
            Err(e) => {
                log::error!("{}: {e}", f.display());
                failed += 1;
            }
        }
    }
    println!("restored {} of {} images into {}", files.len() - failed, files.len(), a.out.out.display());
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: files.len(),
        });
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let trace = match &a.trace {
        Some(p) => read_trace(p)?,
        None => Vec::new(),
    };
    let (report, kept) = evaluate_manifest(&state, &manifest, a.grid)?;
    let out = &a.out.out;
    create_dir(out)?;
    report.write_csv(&out.join(REPORT_CSV))?;
    report.write_summary_json(&out.join(REPORT_JSON))?;
    let paths = emit_artifacts(&trace, Some(&report), &kept, out)?;
    print!("{}", std::fs::read_to_string(&paths.summary).unwrap_or_default());
    Ok(())
}

pub fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let d = manifest_diagnostics(&state, &manifest)?;
    println!(
        "clean={:.6e} underwater={:.6e} ratio={}",
        d.mean_abs_haze_response_clean,
        d.mean_abs_haze_response_underwater,
        if d.ratio_undefined { "undefined".to_string() } else { format!("{:.4}", d.ratio) }
    );
    Ok(())
}

pub fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let out = &a.out.out;
    if let Some(count) = a.count {
        if count == 0 || a.size < 8 {
            return Err(CliError::Usage("--count must be positive and --size at least 8".into()));
        }
        create_dir(out)?;
        let manifest = write_synthetic_dataset(out, &synthetic_pairs(count, a.size, a.seed))?;
        println!("wrote {} pairs into {}", manifest.len(), out.display());
        return Ok(());
    }
    let input = a.input.as_deref().expect("clap requires --input without --count");
    let files = input_images(input)?;
    create_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for f in &files {
        let params = if a.identity {
            DegradationParams::identity()
        } else {
            DegradationParams::random(&mut rng)
        };
        let img = Image::load(f)?;
        synthesize_underwater(&img, &params).save_png(&out.join(format!("{}.png", stem(f))))?;
    }
    println!("degraded {} images into {}", files.len(), out.display());
    Ok(())
}
