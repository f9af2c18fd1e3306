//! Joint training: alternating discriminator/generator Adam updates over
//! unpaired patch batches, with checkpoints and a CSV loss trace.

mod adam;
mod checkpoint;
mod config;
mod state;
mod step;
mod trace;

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};

pub use adam::{Adam, AdamHyper, ADAM_EPS};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, MAGIC, SCHEMA_VERSION};
pub use config::{LossWeights, TrainConfig, TrainOverrides};
pub use state::TrainState;
pub use step::train_step;
pub use trace::{read_trace, LossRecord, TraceWriter};

use crate::datasets::{sample_patch_batch, UnpairedImages};
use crate::error::{Error, Result};

pub const TRACE_FILE: &str = "loss_trace.csv";
pub const FINAL_CHECKPOINT: &str = "final.uwhdn";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:06}.uwhdn"))
}

/// Where a run writes, and optionally which checkpoint it continues from.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainResult {
    pub state: TrainState,
    /// Records logged by this invocation only.
    pub trace: Vec<LossRecord>,
}

/// Runs the schedule to `config.total_steps`. With an output directory it
/// writes the trace, periodic checkpoints and a final checkpoint. A
/// non-finite loss stops the run with [`Error::Diverged`] and leaves the
/// checkpoints already on disk untouched.
pub fn train(config: &TrainConfig, images: &UnpairedImages, out: &TrainOutput) -> Result<TrainResult> {
    config.validate()?;
    let mut state = match &out.resume_from {
        Some(p) => load_checkpoint_for(p, &config.arch)?,
        None => TrainState::new(config, DType::F32, &Device::Cpu)?,
    };
    let per_epoch = config.steps_per_epoch(images.larger_side());
    let total = config.total_steps(images.larger_side());
    let mut writer = match &out.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRACE_FILE);
            Some(if out.resume_from.is_some() {
                TraceWriter::resume(&path, state.step)?
            } else {
                TraceWriter::create(&path)?
            })
        }
        None => None,
    };
    let mut last_checkpoint = out.resume_from.clone();
    let mut trace = Vec::new();
    log::info!("training {} steps ({per_epoch} per epoch) from step {}", total, state.step);

    while state.step < total {
        state.epoch = state.step / per_epoch;
        let batch = sample_patch_batch(images, config.patch, config.batch, &mut state.rng)?;
        let record = match train_step(&batch, &mut state, config) {
            Ok(r) => r,
            Err(Error::NonFinite(reason)) => {
                return Err(Error::Diverged {
                    step: state.step,
                    reason,
                    last_checkpoint,
                })
            }
            Err(e) => return Err(e),
        };
        if record.step % config.log_every == 0 {
            if let Some(w) = writer.as_mut() {
                w.append(&record)?;
            }
            log::info!(
                "step {} epoch {} generator {:.5} discriminator {:.5}",
                record.step,
                record.epoch,
                record.generator_total,
                record.discriminator_total
            );
            trace.push(record);
        }
        if let Some(dir) = &out.dir {
            if state.step % config.checkpoint_every == 0 && state.step < total {
                let p = checkpoint_path(dir, state.step);
                save_checkpoint(&state, &p)?;
                last_checkpoint = Some(p);
            }
        }
    }
    if let Some(dir) = &out.dir {
        save_checkpoint(&state, &checkpoint_path(dir, state.step))?;
        save_checkpoint(&state, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainResult { state, trace })
}
