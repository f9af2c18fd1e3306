use std::borrow::Cow;

use rand::Rng;

use super::{DatasetManifest, Image, UnpairedSplit};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
}

/// The decoded images behind an [`UnpairedSplit`]: underwater files for the
/// underwater ids and clean files for the clean ids, nothing else.
#[derive(Clone, Debug)]
pub struct UnpairedImages {
    underwater: Vec<LabeledImage>,
    clean: Vec<LabeledImage>,
}

impl UnpairedImages {
    pub fn new(underwater: Vec<LabeledImage>, clean: Vec<LabeledImage>) -> Result<Self> {
        if let Some(u) = underwater.iter().find(|u| clean.iter().any(|c| c.id == u.id)) {
            return Err(Error::Split(format!("id '{}' is on both sides", u.id)));
        }
        Ok(Self { underwater, clean })
    }

    pub fn load(manifest: &DatasetManifest, split: &UnpairedSplit) -> Result<Self> {
        split.validate()?;
        let fetch = |id: &String, underwater: bool| -> Result<LabeledImage> {
            let record = manifest
                .get(id)
                .ok_or_else(|| Error::Split(format!("id '{id}' from split is not in the manifest")))?;
            let path = if underwater { &record.underwater_path } else { &record.clean_path };
            Ok(LabeledImage {
                id: id.clone(),
                image: Image::load(path)?,
            })
        };
        let underwater = split.underwater_ids.iter().map(|id| fetch(id, true)).collect::<Result<_>>()?;
        let clean = split.clean_ids.iter().map(|id| fetch(id, false)).collect::<Result<_>>()?;
        Self::new(underwater, clean)
    }

    pub fn underwater(&self) -> &[LabeledImage] {
        &self.underwater
    }

    pub fn clean(&self) -> &[LabeledImage] {
        &self.clean
    }

    pub fn larger_side(&self) -> usize {
        self.underwater.len().max(self.clean.len())
    }
}

/// `batch × 3 × patch × patch` values in NCHW order, plus the id each slot
/// was cropped from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub batch: usize,
    pub patch: usize,
    pub data: Vec<f32>,
    pub sources: Vec<String>,
}

impl PatchBatch {
    pub fn from_images(images: &[(&str, &Image)]) -> Result<Self> {
        let (_, first) = images
            .first()
            .ok_or_else(|| Error::Shape("empty patch batch".into()))?;
        let patch = first.width();
        let mut data = Vec::with_capacity(images.len() * 3 * patch * patch);
        let mut sources = Vec::with_capacity(images.len());
        for (id, img) in images {
            if img.width() != patch || img.height() != patch {
                return Err(Error::Shape(format!(
                    "patch '{id}' is {}x{}, expected {patch}x{patch}",
                    img.width(),
                    img.height()
                )));
            }
            push_planar(&mut data, img);
            sources.push(id.to_string());
        }
        Ok(Self {
            batch: images.len(),
            patch,
            data,
            sources,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedBatch {
    pub underwater: PatchBatch,
    pub clean: PatchBatch,
}

fn push_planar(out: &mut Vec<f32>, img: &Image) {
    for c in 0..3 {
        out.extend(img.data().iter().skip(c).step_by(3));
    }
}

fn sample_side(side: &[LabeledImage], name: &str, patch: usize, batch: usize, rng: &mut impl Rng) -> Result<PatchBatch> {
    if side.is_empty() {
        return Err(Error::Split(format!("{name} side of the split is empty")));
    }
    let mut data = Vec::with_capacity(batch * 3 * patch * patch);
    let mut sources = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pick = &side[rng.random_range(0..side.len())];
        let img: Cow<'_, Image> = if pick.image.width() < patch || pick.image.height() < patch {
            Cow::Owned(pick.image.upscaled_to_cover(patch))
        } else {
            Cow::Borrowed(&pick.image)
        };
        let x0 = rng.random_range(0..=img.width() - patch);
        let y0 = rng.random_range(0..=img.height() - patch);
        push_planar(&mut data, &img.crop(x0, y0, patch, patch)?);
        sources.push(pick.id.clone());
    }
    Ok(PatchBatch {
        batch,
        patch,
        data,
        sources,
    })
}

/// Draws `batch` random crops from each side independently. Underwater slots
/// are drawn first, then clean slots.
pub fn sample_patch_batch(
    images: &UnpairedImages,
    patch: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<UnpairedBatch> {
    if patch == 0 || batch == 0 {
        return Err(Error::InvalidParam(format!("patch ({patch}) and batch ({batch}) must be positive")));
    }
    let underwater = sample_side(&images.underwater, "underwater", patch, batch, rng)?;
    let clean = sample_side(&images.clean, "clean", patch, batch, rng)?;
    Ok(UnpairedBatch { underwater, clean })
}
