use candle_core::{DType, Device};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::hdn::Hdn;
use crate::nn::{init_stream, ArchConfig, NamedVars};
use crate::restoration::Restoration;

/// Stream of the init seed reserved for patch sampling.
pub(crate) const SAMPLING_STREAM: u64 = 100;

/// Networks, both optimizers, counters and the sampling RNG. The optimizers
/// hold handles to the same variables as the networks.
#[derive(Debug)]
pub struct TrainState {
    pub hdn: Hdn,
    pub restoration: Restoration,
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    pub step: u64,
    pub epoch: u64,
    pub(crate) rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl TrainState {
    pub fn new(config: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        Self::from_seed(config.arch, config.seed, dtype, device)
    }

    pub fn from_seed(arch: ArchConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let hdn = Hdn::new(arch, dtype, device, seed)?;
        let restoration = Restoration::new(arch, dtype, device, seed)?;
        let mut gen = hdn.generator_vars();
        gen.extend(restoration.generator_vars());
        let mut disc = hdn.discriminator_vars();
        disc.extend(restoration.discriminator_vars());
        Ok(Self {
            generator_opt: Adam::new(gen)?,
            discriminator_opt: Adam::new(disc)?,
            hdn,
            restoration,
            step: 0,
            epoch: 0,
            rng: init_stream(seed, SAMPLING_STREAM),
            dtype,
            device: device.clone(),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        self.hdn.arch()
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Every parameter in checkpoint order:
    /// E_hf, E_h, D, D_adv, G_C, G_U, D_C, D_U.
    pub fn parameters(&self) -> NamedVars {
        self.hdn
            .network_vars()
            .into_iter()
            .chain(self.restoration.network_vars())
            .flat_map(|(_, v)| v)
            .collect()
    }

    pub(crate) fn check_arch(&self, arch: &ArchConfig) -> Result<()> {
        if self.arch() != arch {
            return Err(Error::InvalidParam(format!(
                "state architecture {:?} does not match config {:?}",
                self.arch(),
                arch
            )));
        }
        Ok(())
    }
}
