//! Restoration networks: the clean generator G_C (predicts a residual on the
//! content image), the underwater generator G_U (re-synthesises the
//! underwater image from a clean image and the disentangled haze features),
//! and least-squares patch discriminators for both domains.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdn::{AdversarialLoss, FeatureMap, Hdn, HdnForward};
use crate::nn::{
    bounded_unit, centre, check_image_batch, ensure_finite, ensure_same_shape, init_stream, leaky_relu, mean_abs,
    resize_bilinear, scalar, ArchConfig, Builder, Conv2d, ConvTranspose2d, Init, NamedVars, ResidualBlock,
    TensorBatch,
};

/// Encoder/decoder body shared by both generators: a 3×3 stem, two stride-2
/// downsamplings, residual blocks at the bottleneck, two transposed-conv
/// upsamplings and a 3×3 output layer.
#[derive(Debug)]
struct Trunk {
    stem: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    blocks: Vec<ResidualBlock>,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    out: Conv2d,
}

impl Trunk {
    fn new<R: rand::Rng>(b: &mut Builder<'_, R>, arch: &ArchConfig, out_init: Init) -> Result<Self> {
        let w = arch.base_width;
        Ok(Self {
            stem: Conv2d::new(b, 3, w / 2, 3, 1, 1, Init::RELU)?,
            down1: Conv2d::new(b, w / 2, w, 4, 2, 1, Init::RELU)?,
            down2: Conv2d::new(b, w, w, 4, 2, 1, Init::RELU)?,
            blocks: (0..arch.res_blocks).map(|_| ResidualBlock::new(b, w)).collect::<Result<_>>()?,
            up1: ConvTranspose2d::upsample2(b, w, w, Init::RELU)?,
            up2: ConvTranspose2d::upsample2(b, w, w / 2, Init::RELU)?,
            out: Conv2d::new(b, w / 2, 3, 3, 1, 1, out_init)?,
        })
    }

    fn encode(&self, images: &Tensor) -> Result<Tensor> {
        check_image_batch(images)?;
        let x = self.stem.forward(&centre(images)?)?.relu()?;
        let x = self.down1.forward(&x)?.relu()?;
        Ok(self.down2.forward(&x)?.relu()?)
    }

    fn decode(&self, bottleneck: &Tensor) -> Result<Tensor> {
        let mut x = bottleneck.clone();
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        let x = self.up1.forward(&x)?.relu()?;
        let x = self.up2.forward(&x)?.relu()?;
        self.out.forward(&x)
    }

    fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        self.stem.push_vars(&format!("{prefix}.stem"), out);
        self.down1.push_vars(&format!("{prefix}.down1"), out);
        self.down2.push_vars(&format!("{prefix}.down2"), out);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.push_vars(&format!("{prefix}.res{i}"), out);
        }
        self.up1.push_vars(&format!("{prefix}.up1"), out);
        self.up2.push_vars(&format!("{prefix}.up2"), out);
        self.out.push_vars(&format!("{prefix}.out"), out);
    }
}

/// G_C. Its output layer starts at zero so restoration begins as identity.
#[derive(Debug)]
pub struct CleanGenerator {
    trunk: Trunk,
}

impl CleanGenerator {
    /// The residual added to the content image.
    pub fn residual(&self, content: &Tensor) -> Result<Tensor> {
        self.trunk.decode(&self.trunk.encode(content)?)
    }
}

/// G_U. The haze feature map is resized to the bottleneck, concatenated
/// along channels and projected back to bottleneck width by a 1×1 conv.
#[derive(Debug)]
pub struct UnderwaterGenerator {
    trunk: Trunk,
    fuse: Conv2d,
}

impl UnderwaterGenerator {
    pub fn forward(&self, clean: &Tensor, haze: &FeatureMap) -> Result<Tensor> {
        let bottleneck = self.trunk.encode(clean)?;
        let (b, c, h, w) = bottleneck.dims4()?;
        let (hb, hc, _, _) = haze.tensor().dims4()?;
        if hc != self.fuse.in_channels() - c {
            return Err(Error::Shape(format!(
                "haze map has {hc} channels, fusion block expects {}",
                self.fuse.in_channels() - c
            )));
        }
        if hb != b {
            return Err(Error::Shape(format!("haze batch {hb} differs from image batch {b}")));
        }
        let haze = resize_bilinear(haze.tensor(), h, w)?;
        let fused = self.fuse.forward(&Tensor::cat(&[&bottleneck, &haze], 1)?)?.relu()?;
        bounded_unit(&self.trunk.decode(&fused)?)
    }
}

/// PatchGAN-style discriminator with unbounded per-patch scores.
#[derive(Debug)]
pub struct PatchDiscriminator {
    layers: Vec<Conv2d>,
}

impl PatchDiscriminator {
    fn new<R: rand::Rng>(b: &mut Builder<'_, R>, arch: &ArchConfig) -> Result<Self> {
        let w = arch.base_width;
        Ok(Self {
            layers: vec![
                Conv2d::new(b, 3, w, 4, 2, 1, Init::RELU)?,
                Conv2d::new(b, w, 2 * w, 4, 2, 1, Init::RELU)?,
                Conv2d::new(b, 2 * w, 1, 3, 1, 1, Init::LINEAR)?,
            ],
        })
    }

    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let mut x = centre(images)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x = leaky_relu(&x, 0.2)?;
            }
        }
        Ok(x)
    }

    fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        for (i, l) in self.layers.iter().enumerate() {
            l.push_vars(&format!("{prefix}.conv{i}"), out);
        }
    }
}

#[derive(Debug)]
pub struct Restoration {
    arch: ArchConfig,
    clean_gen: CleanGenerator,
    underwater_gen: UnderwaterGenerator,
    clean_disc: PatchDiscriminator,
    underwater_disc: PatchDiscriminator,
}

impl Restoration {
    pub fn new(arch: ArchConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        arch.validate()?;
        let w = arch.base_width;
        let (mut r0, mut r1, mut r2, mut r3) =
            (init_stream(seed, 11), init_stream(seed, 12), init_stream(seed, 13), init_stream(seed, 14));
        let b = |rng| Builder { dtype, device, rng };
        let clean_gen = CleanGenerator {
            trunk: Trunk::new(&mut b(&mut r0), &arch, Init::Zeros)?,
        };
        let mut bu = b(&mut r1);
        let underwater_gen = UnderwaterGenerator {
            trunk: Trunk::new(&mut bu, &arch, Init::LINEAR)?,
            fuse: Conv2d::new(&mut bu, 2 * w, w, 1, 1, 0, Init::RELU)?,
        };
        Ok(Self {
            arch,
            clean_gen,
            underwater_gen,
            clean_disc: PatchDiscriminator::new(&mut b(&mut r2), &arch)?,
            underwater_disc: PatchDiscriminator::new(&mut b(&mut r3), &arch)?,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// `G_C(x) + x`, unclamped.
    pub fn restore(&self, content: &Tensor) -> Result<Tensor> {
        Ok((self.clean_gen.residual(content)? + content)?)
    }

    /// [`Restoration::restore`] clamped to `[0, 1]` for evaluation and output.
    pub fn restore_clamped(&self, content: &Tensor) -> Result<Tensor> {
        Ok(self.restore(content)?.clamp(0.0, 1.0)?)
    }

    pub fn regenerate_underwater(&self, clean: &Tensor, haze: &FeatureMap) -> Result<Tensor> {
        self.underwater_gen.forward(clean, haze)
    }

    pub fn clean_discriminator(&self) -> &PatchDiscriminator {
        &self.clean_disc
    }

    pub fn underwater_discriminator(&self) -> &PatchDiscriminator {
        &self.underwater_disc
    }

    /// Content images, restorations and the haze-guided regeneration for one
    /// batch. Haze features are the cached underwater pass, not detached.
    pub fn forward(&self, hdn: &Hdn, hfwd: &HdnForward) -> Result<RestorationForward> {
        let content_underwater = hdn.decode(&hfwd.hf_underwater, &hfwd.hf_underwater.zeros_like()?)?;
        let content_clean = hdn.decode(&hfwd.hf_clean, &hfwd.hf_clean.zeros_like()?)?;
        let restored_underwater = self.restore(&content_underwater)?;
        let restored_clean = self.restore(&content_clean)?;
        let regenerated_underwater =
            self.regenerate_underwater(&restored_underwater, hfwd.haze_underwater.final_map())?;
        Ok(RestorationForward {
            content_underwater,
            content_clean,
            restored_underwater,
            restored_clean,
            regenerated_underwater,
        })
    }

    /// G_C and G_U, in checkpoint order.
    pub fn generator_vars(&self) -> NamedVars {
        let mut out = Vec::new();
        self.clean_gen.trunk.push_vars("g_c", &mut out);
        self.underwater_gen.trunk.push_vars("g_u", &mut out);
        self.underwater_gen.fuse.push_vars("g_u.fuse", &mut out);
        out
    }

    /// D_C and D_U, in checkpoint order.
    pub fn discriminator_vars(&self) -> NamedVars {
        let mut out = Vec::new();
        self.clean_disc.push_vars("d_c", &mut out);
        self.underwater_disc.push_vars("d_u", &mut out);
        out
    }

    /// Variables grouped per network: `g_c`, `g_u`, `d_c`, `d_u`.
    pub fn network_vars(&self) -> Vec<(&'static str, NamedVars)> {
        let mut g_c = Vec::new();
        self.clean_gen.trunk.push_vars("g_c", &mut g_c);
        let mut g_u = Vec::new();
        self.underwater_gen.trunk.push_vars("g_u", &mut g_u);
        self.underwater_gen.fuse.push_vars("g_u.fuse", &mut g_u);
        let mut d_c = Vec::new();
        self.clean_disc.push_vars("d_c", &mut d_c);
        let mut d_u = Vec::new();
        self.underwater_disc.push_vars("d_u", &mut d_u);
        vec![("g_c", g_c), ("g_u", g_u), ("d_c", d_c), ("d_u", d_u)]
    }
}

#[derive(Clone, Debug)]
pub struct RestorationForward {
    pub content_underwater: Tensor,
    pub content_clean: Tensor,
    pub restored_underwater: Tensor,
    pub restored_clean: Tensor,
    pub regenerated_underwater: Tensor,
}

/// `E[(D(real) − 1)²] + E[D(fake)²]`.
pub fn lsgan_discriminator_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = (real_scores - 1.0)?.sqr()?.mean_all()?;
    let fake = fake_scores.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// `E[(D(fake) − 1)²]`.
pub fn lsgan_generator_loss(fake_scores: &Tensor) -> Result<Tensor> {
    Ok((fake_scores - 1.0)?.sqr()?.mean_all()?)
}

pub fn image_adversarial_losses(real: &Tensor, fake: &Tensor, disc: &PatchDiscriminator) -> Result<AdversarialLoss> {
    ensure_same_shape(real, fake, "image adversarial loss")?;
    ensure_finite(real, "real images")?;
    ensure_finite(fake, "fake images")?;
    let fake_scores = disc.forward(fake)?;
    Ok(AdversarialLoss {
        discriminator: lsgan_discriminator_loss(&disc.forward(real)?, &fake_scores)?,
        generator: lsgan_generator_loss(&fake_scores)?,
    })
}

#[derive(Clone, Debug)]
pub struct CycleLosses {
    /// Underwater cycle through G_C and G_U with the original haze features.
    pub l_r3: Tensor,
    /// Clean cycle through the content image and G_C.
    pub l_r4: Tensor,
}

pub fn cycle_losses(underwater: &Tensor, clean: &Tensor, hdn: &Hdn, params: &Restoration) -> Result<CycleLosses> {
    let batch = TensorBatch {
        underwater: underwater.clone(),
        clean: clean.clone(),
    };
    let rfwd = params.forward(hdn, &hdn.forward(&batch)?)?;
    cycle_from_forward(&rfwd, &batch)
}

fn cycle_from_forward(rfwd: &RestorationForward, batch: &TensorBatch) -> Result<CycleLosses> {
    ensure_same_shape(&rfwd.regenerated_underwater, &batch.underwater, "underwater cycle")?;
    ensure_same_shape(&rfwd.restored_clean, &batch.clean, "clean cycle")?;
    Ok(CycleLosses {
        l_r3: mean_abs(&(&rfwd.regenerated_underwater - &batch.underwater)?)?,
        l_r4: mean_abs(&(&rfwd.restored_clean - &batch.clean)?)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestorationLossWeights {
    pub clean_adversarial: f64,
    pub underwater_adversarial: f64,
    pub underwater_cycle: f64,
    pub clean_cycle: f64,
}

impl Default for RestorationLossWeights {
    fn default() -> Self {
        Self {
            clean_adversarial: 1.0,
            underwater_adversarial: 1.0,
            underwater_cycle: 10.0,
            clean_cycle: 10.0,
        }
    }
}

impl RestorationLossWeights {
    pub fn zero() -> Self {
        Self {
            clean_adversarial: 0.0,
            underwater_adversarial: 0.0,
            underwater_cycle: 0.0,
            clean_cycle: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.clean_adversarial, self.underwater_adversarial, self.underwater_cycle, self.clean_cycle]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParam(format!("restoration weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Generator-side restoration terms.
#[derive(Clone, Debug)]
pub struct RestorationTerms {
    /// D_C judging restored underwater images.
    pub l_r1: Tensor,
    /// D_U judging regenerated underwater images.
    pub l_r2: Tensor,
    pub l_r3: Tensor,
    pub l_r4: Tensor,
}

impl RestorationTerms {
    pub fn from_forward(rfwd: &RestorationForward, batch: &TensorBatch, params: &Restoration) -> Result<Self> {
        let cycles = cycle_from_forward(rfwd, batch)?;
        Ok(Self {
            l_r1: lsgan_generator_loss(&params.clean_disc.forward(&rfwd.restored_underwater)?)?,
            l_r2: lsgan_generator_loss(&params.underwater_disc.forward(&rfwd.regenerated_underwater)?)?,
            l_r3: cycles.l_r3,
            l_r4: cycles.l_r4,
        })
    }

    pub fn weighted_total(&self, w: &RestorationLossWeights) -> Result<Tensor> {
        Ok((((self.l_r1.affine(w.clean_adversarial, 0.0)? + self.l_r2.affine(w.underwater_adversarial, 0.0)?)?
            + self.l_r3.affine(w.underwater_cycle, 0.0)?)?
            + self.l_r4.affine(w.clean_cycle, 0.0)?)?)
    }

    pub fn values(&self) -> Result<[f64; 4]> {
        Ok([scalar(&self.l_r1)?, scalar(&self.l_r2)?, scalar(&self.l_r3)?, scalar(&self.l_r4)?])
    }
}

/// Discriminator losses of D_C and D_U on detached generator outputs.
pub fn image_discriminator_losses(
    rfwd: &RestorationForward,
    batch: &TensorBatch,
    params: &Restoration,
) -> Result<(Tensor, Tensor)> {
    let d_c = lsgan_discriminator_loss(
        &params.clean_disc.forward(&batch.clean)?,
        &params.clean_disc.forward(&rfwd.restored_underwater.detach())?,
    )?;
    let d_u = lsgan_discriminator_loss(
        &params.underwater_disc.forward(&batch.underwater)?,
        &params.underwater_disc.forward(&rfwd.regenerated_underwater.detach())?,
    )?;
    Ok((d_c, d_u))
}

#[derive(Clone, Debug)]
pub struct RestorationLoss {
    pub total: Tensor,
    pub terms: RestorationTerms,
    pub clean_discriminator: Tensor,
    pub underwater_discriminator: Tensor,
}

pub fn restoration_total_loss(
    batch: &TensorBatch,
    hdn: &Hdn,
    params: &Restoration,
    weights: &RestorationLossWeights,
) -> Result<RestorationLoss> {
    weights.validate()?;
    let rfwd = params.forward(hdn, &hdn.forward(batch)?)?;
    let terms = RestorationTerms::from_forward(&rfwd, batch, params)?;
    let (clean_discriminator, underwater_discriminator) = image_discriminator_losses(&rfwd, batch, params)?;
    Ok(RestorationLoss {
        total: terms.weighted_total(weights)?,
        terms,
        clean_discriminator,
        underwater_discriminator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: ArchConfig = ArchConfig {
        base_width: 4,
        res_blocks: 1,
    };

    fn flat(t: &Tensor) -> Vec<f64> {
        t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn zero_residual_restore_is_identity() {
        let r = Restoration::new(ArchConfig::default(), DType::F32, &Device::Cpu, 0).unwrap();
        let x = Tensor::rand(0f32, 1., (1, 3, 128, 128), &Device::Cpu).unwrap();
        let y = r.restore(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 128, 128]);
        let bits = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x), bits(&y));
    }

    #[test]
    fn regenerate_shapes_and_channel_check() {
        let r = Restoration::new(ArchConfig::default(), DType::F32, &Device::Cpu, 0).unwrap();
        let dev = Device::Cpu;
        let clean = Tensor::rand(0f32, 1., (4, 3, 128, 128), &dev).unwrap();
        let haze = FeatureMap::new(Tensor::rand(-1f32, 1., (4, 64, 32, 32), &dev).unwrap()).unwrap();
        let out = r.regenerate_underwater(&clean, &haze).unwrap();
        assert_eq!(out.dims(), &[4, 3, 128, 128]);
        assert_eq!(flat(&out), flat(&r.regenerate_underwater(&clean, &haze).unwrap()));
        let wrong = FeatureMap::new(Tensor::rand(-1f32, 1., (4, 32, 32, 32), &dev).unwrap()).unwrap();
        assert!(r.regenerate_underwater(&clean, &wrong).is_err());
    }

    #[test]
    fn haze_of_other_size_is_resized() {
        let r = Restoration::new(TOY, DType::F64, &Device::Cpu, 0).unwrap();
        let dev = Device::Cpu;
        let clean = Tensor::rand(0f64, 1., (2, 3, 16, 16), &dev).unwrap();
        let haze = FeatureMap::new(Tensor::rand(-1f64, 1., (2, 4, 8, 8), &dev).unwrap()).unwrap();
        assert_eq!(r.regenerate_underwater(&clean, &haze).unwrap().dims(), &[2, 3, 16, 16]);
    }

    #[test]
    fn haze_changes_regeneration() {
        let r = Restoration::new(TOY, DType::F64, &Device::Cpu, 1).unwrap();
        let dev = Device::Cpu;
        let clean = Tensor::rand(0f64, 1., (1, 3, 8, 8), &dev).unwrap();
        let h1 = FeatureMap::new(Tensor::rand(-1f64, 1., (1, 4, 2, 2), &dev).unwrap()).unwrap();
        let h2 = FeatureMap::new(Tensor::rand(-1f64, 1., (1, 4, 2, 2), &dev).unwrap()).unwrap();
        let a = flat(&r.regenerate_underwater(&clean, &h1).unwrap());
        let b = flat(&r.regenerate_underwater(&clean, &h2).unwrap());
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn lsgan_closed_forms() {
        let dev = Device::Cpu;
        let half = Tensor::full(0.5f64, (2, 1, 4, 4), &dev).unwrap();
        assert!((scalar(&lsgan_discriminator_loss(&half, &half).unwrap()).unwrap() - 0.5).abs() < 1e-12);
        assert!((scalar(&lsgan_generator_loss(&half).unwrap()).unwrap() - 0.25).abs() < 1e-12);
        let one = Tensor::ones((2, 1, 4, 4), DType::F64, &dev).unwrap();
        let zero = Tensor::zeros((2, 1, 4, 4), DType::F64, &dev).unwrap();
        assert_eq!(scalar(&lsgan_discriminator_loss(&one, &zero).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_rejects_mismatch_and_nan() {
        let r = Restoration::new(TOY, DType::F64, &Device::Cpu, 1).unwrap();
        let dev = Device::Cpu;
        let a = Tensor::rand(0f64, 1., (1, 3, 8, 8), &dev).unwrap();
        let b = Tensor::rand(0f64, 1., (1, 3, 8, 4), &dev).unwrap();
        assert!(image_adversarial_losses(&a, &b, r.clean_discriminator()).is_err());
        let nan = Tensor::full(f64::NAN, (1, 3, 8, 8), &dev).unwrap();
        assert!(image_adversarial_losses(&a, &nan, r.clean_discriminator()).is_err());
    }

    #[test]
    fn zero_weights_and_defaults() {
        let dev = Device::Cpu;
        let hdn = Hdn::new(TOY, DType::F64, &dev, 0).unwrap();
        let r = Restoration::new(TOY, DType::F64, &dev, 0).unwrap();
        let batch = TensorBatch {
            underwater: Tensor::rand(0f64, 1., (2, 3, 8, 8), &dev).unwrap(),
            clean: Tensor::rand(0f64, 1., (2, 3, 8, 8), &dev).unwrap(),
        };
        let l = restoration_total_loss(&batch, &hdn, &r, &RestorationLossWeights::zero()).unwrap();
        assert_eq!(scalar(&l.total).unwrap(), 0.0);
        assert_eq!(RestorationLossWeights::default().as_array(), [1.0, 1.0, 10.0, 10.0]);
    }

    #[test]
    fn cycle_losses_non_negative_and_clean_bound() {
        let dev = Device::Cpu;
        let hdn = Hdn::new(TOY, DType::F64, &dev, 0).unwrap();
        let r = Restoration::new(TOY, DType::F64, &dev, 0).unwrap();
        let uw = Tensor::rand(0f64, 1., (2, 3, 8, 8), &dev).unwrap();
        let clean = Tensor::rand(0f64, 1., (2, 3, 8, 8), &dev).unwrap();
        let c = cycle_losses(&uw, &clean, &hdn, &r).unwrap();
        assert!(scalar(&c.l_r3).unwrap() >= 0.0);
        // zero residual: the clean cycle is just the content-image reconstruction error
        let content = hdn.content_image(&clean).unwrap();
        let direct = scalar(&mean_abs(&(&content - &clean).unwrap()).unwrap()).unwrap();
        assert_eq!(scalar(&c.l_r4).unwrap(), direct);
    }
}
