use candle_core::Tensor;

use super::adam::AdamHyper;
use super::config::TrainConfig;
use super::state::TrainState;
use super::trace::LossRecord;
use crate::error::{Error, Result};
use crate::datasets::UnpairedBatch;
use crate::hdn::{feature_discriminator_loss, HdnForward, HdnTerms};
use crate::nn::{scalar, TensorBatch};
use crate::restoration::{image_discriminator_losses, RestorationForward, RestorationTerms};

/// The single forward pass both phases of a step share.
pub(crate) struct JointForward {
    pub batch: TensorBatch,
    pub hdn: HdnForward,
    pub restoration: RestorationForward,
}

impl JointForward {
    pub fn compute(state: &TrainState, batch: &UnpairedBatch) -> Result<Self> {
        let batch = TensorBatch::new(batch, state.dtype(), state.device())?;
        let hdn = state.hdn.forward(&batch)?;
        let restoration = state.restoration.forward(&state.hdn, &hdn)?;
        Ok(Self {
            batch,
            hdn,
            restoration,
        })
    }
}

pub(crate) struct DiscriminatorValues {
    pub d_adv: f64,
    pub d_c: f64,
    pub d_u: f64,
}

pub(crate) struct GeneratorValues {
    pub hdn: [f64; 4],
    pub restoration: [f64; 4],
    pub hdn_total: f64,
    pub restoration_total: f64,
}

fn hyper(config: &TrainConfig) -> AdamHyper {
    AdamHyper {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

/// Phase (a): D_adv, D_C and D_U step on detached generator outputs.
pub(crate) fn discriminator_phase(state: &mut TrainState, fwd: &JointForward, config: &TrainConfig) -> Result<DiscriminatorValues> {
    let d_adv = feature_discriminator_loss(&fwd.hdn, &state.hdn)?;
    let (d_c, d_u) = image_discriminator_losses(&fwd.restoration, &fwd.batch, &state.restoration)?;
    let values = DiscriminatorValues {
        d_adv: finite("d_adv", scalar(&d_adv)?)?,
        d_c: finite("d_c", scalar(&d_c)?)?,
        d_u: finite("d_u", scalar(&d_u)?)?,
    };
    let total = ((d_adv + d_c)? + d_u)?;
    state.discriminator_opt.step(&total.backward()?, &hyper(config))?;
    Ok(values)
}

/// Phase (b): encoders, decoder and both generators step on the summed
/// generator-role objective, judged by the freshly updated discriminators.
pub(crate) fn generator_phase(state: &mut TrainState, fwd: &JointForward, config: &TrainConfig) -> Result<GeneratorValues> {
    let w = &config.loss_weights;
    let h = HdnTerms::from_forward(&fwd.hdn, &fwd.batch, &state.hdn)?;
    let r = RestorationTerms::from_forward(&fwd.restoration, &fwd.batch, &state.restoration)?;
    let h_total = h.weighted_total(&w.hdn)?;
    let r_total = r.weighted_total(&w.restoration)?;
    let hv = h.values()?;
    let rv = r.values()?;
    for (name, v) in ["l_d1", "l_d2", "l_d3", "l_d4"].iter().zip(hv).chain(["l_r1", "l_r2", "l_r3", "l_r4"].iter().zip(rv)) {
        finite(name, v)?;
    }
    let values = GeneratorValues {
        hdn: hv,
        restoration: rv,
        hdn_total: finite("hdn_total", scalar(&h_total)?)?,
        restoration_total: finite("restoration_total", scalar(&r_total)?)?,
    };
    let total: Tensor = (h_total + r_total)?;
    state.generator_opt.step(&total.backward()?, &hyper(config))?;
    Ok(values)
}

/// One alternating update. A non-finite loss returns [`Error::NonFinite`]
/// before the optimizer of the failing phase runs; if it appears in phase
/// (b) the discriminators have already moved, so the caller should discard
/// the in-memory state and fall back to the last checkpoint.
pub fn train_step(batch: &UnpairedBatch, state: &mut TrainState, config: &TrainConfig) -> Result<LossRecord> {
    state.check_arch(&config.arch)?;
    config.loss_weights.hdn.validate()?;
    config.loss_weights.restoration.validate()?;
    let fwd = JointForward::compute(state, batch)?;
    let d = discriminator_phase(state, &fwd, config)?;
    let g = generator_phase(state, &fwd, config)?;
    let record = LossRecord {
        step: state.step,
        epoch: state.epoch,
        l_d1: g.hdn[0],
        l_d2: g.hdn[1],
        l_d3: g.hdn[2],
        l_d4: g.hdn[3],
        l_r1: g.restoration[0],
        l_r2: g.restoration[1],
        l_r3: g.restoration[2],
        l_r4: g.restoration[3],
        d_adv: d.d_adv,
        d_c: d.d_c,
        d_u: d.d_u,
        hdn_total: g.hdn_total,
        restoration_total: g.restoration_total,
        generator_total: g.hdn_total + g.restoration_total,
        discriminator_total: d.d_adv + d.d_c + d.d_u,
    };
    state.step += 1;
    Ok(record)
}
