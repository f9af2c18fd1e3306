use crate::datasets::Image;
use crate::error::Result;
use crate::nn::{images_to_tensor, tensor_to_images, ArchConfig};
use crate::training::TrainState;

#[derive(Clone, Debug)]
pub struct RestoredImage {
    pub content: Image,
    pub restored: Image,
}

/// Content image, then the residual restoration of it, both clamped to
/// `[0, 1]`. Inputs of any size are edge-padded to the encoder multiple and
/// cropped back afterwards.
pub fn restore_image(state: &TrainState, image: &Image) -> Result<RestoredImage> {
    let padded = image.pad_to_multiple(ArchConfig::DOWNSAMPLE);
    let x = images_to_tensor(&[&padded], state.dtype(), state.device())?;
    let content = state.hdn.content_image(&x)?;
    let restored = state.restoration.restore_clamped(&content)?;
    let out = |t| -> Result<Image> {
        let img = tensor_to_images(&t)?.remove(0);
        Ok(img.crop(0, 0, image.width(), image.height())?.clamped())
    };
    Ok(RestoredImage {
        content: out(content.clamp(0.0, 1.0)?)?,
        restored: out(restored)?,
    })
}

/// Mean absolute value of the haze encoder's final map for one image.
pub fn haze_response(state: &TrainState, image: &Image) -> Result<f64> {
    let padded = image.pad_to_multiple(ArchConfig::DOWNSAMPLE);
    let x = images_to_tensor(&[&padded], state.dtype(), state.device())?;
    state.hdn.encode_haze(&x)?.final_map().mean_abs()
}

/// Haze-free features of one image, flattened.
pub fn haze_free_features(state: &TrainState, image: &Image) -> Result<Vec<f64>> {
    let padded = image.pad_to_multiple(ArchConfig::DOWNSAMPLE);
    let x = images_to_tensor(&[&padded], state.dtype(), state.device())?;
    let f = state.hdn.encode_haze_free(&x)?;
    Ok(f.tensor().to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
