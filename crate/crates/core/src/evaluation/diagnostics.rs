use serde::{Deserialize, Serialize};

use super::inference::haze_response;
use crate::datasets::{DatasetManifest, Image};
use crate::error::{Error, Result};
use crate::training::TrainState;

/// How strongly the haze encoder fires on each domain. A working
/// disentanglement keeps the clean response well below the underwater one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementDiagnostics {
    pub mean_abs_haze_response_clean: f64,
    pub mean_abs_haze_response_underwater: f64,
    /// clean / underwater; NaN when both responses are zero.
    pub ratio: f64,
    pub ratio_undefined: bool,
}

impl DisentanglementDiagnostics {
    pub fn from_responses(clean: f64, underwater: f64) -> Self {
        let undefined = clean == 0.0 && underwater == 0.0;
        Self {
            mean_abs_haze_response_clean: clean,
            mean_abs_haze_response_underwater: underwater,
            ratio: if undefined { f64::NAN } else { clean / underwater },
            ratio_undefined: undefined,
        }
    }
}

pub fn disentanglement_diagnostics(
    state: &TrainState,
    underwater: &[&Image],
    clean: &[&Image],
) -> Result<DisentanglementDiagnostics> {
    if underwater.is_empty() || clean.is_empty() {
        return Err(Error::InvalidParam("diagnostics need at least one image per domain".into()));
    }
    let mean = |imgs: &[&Image]| -> Result<f64> {
        let mut s = 0.0;
        for img in imgs {
            s += haze_response(state, img)?;
        }
        Ok(s / imgs.len() as f64)
    };
    Ok(DisentanglementDiagnostics::from_responses(mean(clean)?, mean(underwater)?))
}

/// Diagnostics over both images of every manifest record.
pub fn manifest_diagnostics(state: &TrainState, manifest: &DatasetManifest) -> Result<DisentanglementDiagnostics> {
    if manifest.is_empty() {
        return Err(Error::Manifest("manifest is empty".into()));
    }
    let mut uw = Vec::new();
    let mut clean = Vec::new();
    for r in manifest.records() {
        uw.push(Image::load(&r.underwater_path)?);
        clean.push(Image::load(&r.clean_path)?);
    }
    disentanglement_diagnostics(state, &uw.iter().collect::<Vec<_>>(), &clean.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;
    use candle_core::{DType, Device};

    #[test]
    fn zero_responses_flagged() {
        let d = DisentanglementDiagnostics::from_responses(0.0, 0.0);
        assert!(d.ratio.is_nan() && d.ratio_undefined);
        let d = DisentanglementDiagnostics::from_responses(1.0, 4.0);
        assert_eq!(d.ratio, 0.25);
        assert!(!d.ratio_undefined);
    }

    #[test]
    fn zeroed_haze_encoder_gives_undefined_ratio() {
        let c = TrainConfig {
            arch: crate::nn::ArchConfig {
                base_width: 4,
                res_blocks: 1,
            },
            ..Default::default()
        };
        let s = TrainState::new(&c, DType::F32, &Device::Cpu).unwrap();
        for (name, v) in s.parameters() {
            if name.starts_with("e_h.") {
                v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
            }
        }
        let img = Image::filled(8, 8, [0.4, 0.5, 0.6]);
        let d = disentanglement_diagnostics(&s, &[&img], &[&img]).unwrap();
        assert_eq!(d.mean_abs_haze_response_clean, 0.0);
        assert!(d.ratio_undefined);
    }

    #[test]
    fn empty_inputs_rejected() {
        let c = TrainConfig {
            arch: crate::nn::ArchConfig {
                base_width: 4,
                res_blocks: 1,
            },
            ..Default::default()
        };
        let s = TrainState::new(&c, DType::F32, &Device::Cpu).unwrap();
        assert!(disentanglement_diagnostics(&s, &[], &[]).is_err());
    }
}
