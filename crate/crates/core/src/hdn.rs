//! Haze disentanglement network.
//!
//! Two encoders share one decoder: the haze-free encoder keeps scene content,
//! the haze encoder keeps the degradation and is pushed to zero response on
//! clean images. A feature-level discriminator makes underwater content
//! features indistinguishable from clean ones.
//!
//! Encoders: conv 4×4/2 → conv 4×4/2 → conv 3×3 → conv 3×3 (linear), all at
//! the base width. The decoder consumes the elementwise sum of the two
//! encoder outputs, runs residual blocks, and upsamples twice with
//! transposed convolutions to a tanh output rescaled to `[0, 1]`.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    bounded_unit, centre, init_stream, check_image_batch, ensure_finite, ensure_same_shape, leaky_relu, mean_abs, scalar,
    softplus, ArchConfig, Builder, Conv2d, ConvTranspose2d, Init, NamedVars, ResidualBlock, TensorBatch,
};

/// A `B × C × H' × W'` encoder output.
#[derive(Clone, Debug)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        t.dims4()
            .map_err(|_| Error::Shape(format!("feature map must be rank 4, got {:?}", t.dims())))?;
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn dims(&self) -> &[usize] {
        self.0.dims()
    }

    pub fn detach(&self) -> FeatureMap {
        FeatureMap(self.0.detach())
    }

    pub fn zeros_like(&self) -> Result<FeatureMap> {
        Ok(FeatureMap(self.0.zeros_like()?))
    }

    pub fn mean_abs(&self) -> Result<f64> {
        scalar(&mean_abs(&self.0)?)
    }
}

/// Every layer output of the haze encoder, the last one being its result.
#[derive(Clone, Debug)]
pub struct HazeEncoderTrace {
    intermediates: Vec<FeatureMap>,
}

impl HazeEncoderTrace {
    pub fn new(intermediates: Vec<FeatureMap>) -> Result<Self> {
        if intermediates.is_empty() {
            return Err(Error::Shape("haze encoder trace needs at least one layer".into()));
        }
        Ok(Self { intermediates })
    }

    pub fn final_map(&self) -> &FeatureMap {
        self.intermediates.last().expect("non-empty by construction")
    }

    pub fn intermediates(&self) -> &[FeatureMap] {
        &self.intermediates
    }

    pub fn len(&self) -> usize {
        self.intermediates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub struct Encoder {
    layers: Vec<Conv2d>,
}

impl Encoder {
    fn new<R: rand::Rng>(b: &mut Builder<'_, R>, arch: &ArchConfig) -> Result<Self> {
        let w = arch.base_width;
        Ok(Self {
            layers: vec![
                Conv2d::new(b, 3, w, 4, 2, 1, Init::RELU)?,
                Conv2d::new(b, w, w, 4, 2, 1, Init::RELU)?,
                Conv2d::new(b, w, w, 3, 1, 1, Init::RELU)?,
                Conv2d::new(b, w, w, 3, 1, 1, Init::LINEAR)?,
            ],
        })
    }

    /// Outputs of all layers: ReLU activations, then the linear final map.
    pub fn forward_trace(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        check_image_batch(images)?;
        let mut x = centre(images)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x = x.relu()?;
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(images)?.pop().expect("encoder has layers"))
    }

    fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        for (i, l) in self.layers.iter().enumerate() {
            l.push_vars(&format!("{prefix}.conv{i}"), out);
        }
    }
}

#[derive(Debug)]
pub struct Decoder {
    blocks: Vec<ResidualBlock>,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    out: Conv2d,
}

impl Decoder {
    fn new<R: rand::Rng>(b: &mut Builder<'_, R>, arch: &ArchConfig) -> Result<Self> {
        let w = arch.base_width;
        Ok(Self {
            blocks: (0..arch.res_blocks).map(|_| ResidualBlock::new(b, w)).collect::<Result<_>>()?,
            up1: ConvTranspose2d::upsample2(b, w, w, Init::RELU)?,
            up2: ConvTranspose2d::upsample2(b, w, w / 2, Init::RELU)?,
            out: Conv2d::new(b, w / 2, 3, 3, 1, 1, Init::LINEAR)?,
        })
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut x = features.clone();
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        let x = self.up1.forward(&x)?.relu()?;
        let x = self.up2.forward(&x)?.relu()?;
        bounded_unit(&self.out.forward(&x)?)
    }

    fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.push_vars(&format!("{prefix}.res{i}"), out);
        }
        self.up1.push_vars(&format!("{prefix}.up1"), out);
        self.up2.push_vars(&format!("{prefix}.up2"), out);
        self.out.push_vars(&format!("{prefix}.out"), out);
    }
}

/// Patch-level classifier over feature maps, producing one logit per
/// location.
#[derive(Debug)]
pub struct FeatureDiscriminator {
    layers: Vec<Conv2d>,
}

impl FeatureDiscriminator {
    fn new<R: rand::Rng>(b: &mut Builder<'_, R>, arch: &ArchConfig) -> Result<Self> {
        let w = arch.base_width;
        Ok(Self {
            layers: vec![
                Conv2d::new(b, w, w, 3, 1, 1, Init::RELU)?,
                Conv2d::new(b, w, w, 3, 1, 1, Init::RELU)?,
                Conv2d::new(b, w, 1, 3, 1, 1, Init::LINEAR)?,
            ],
        })
    }

    pub fn logits(&self, features: &FeatureMap) -> Result<Tensor> {
        let mut x = features.tensor().clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x = leaky_relu(&x, 0.2)?;
            }
        }
        Ok(x)
    }

    /// Per-location probability that the features come from a clean image.
    pub fn probabilities(&self, features: &FeatureMap) -> Result<Tensor> {
        let z = self.logits(features)?;
        Ok((z.neg()?.exp()? + 1.0)?.recip()?)
    }

    fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        for (i, l) in self.layers.iter().enumerate() {
            l.push_vars(&format!("{prefix}.conv{i}"), out);
        }
    }
}

/// Parameters of the haze-free encoder, haze encoder, shared decoder and
/// feature discriminator.
#[derive(Debug)]
pub struct Hdn {
    arch: ArchConfig,
    haze_free: Encoder,
    haze: Encoder,
    decoder: Decoder,
    feature_disc: FeatureDiscriminator,
}

impl Hdn {
    pub fn new(arch: ArchConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (mut r0, mut r1, mut r2, mut r3) = (init_stream(seed, 1), init_stream(seed, 2), init_stream(seed, 3), init_stream(seed, 4));
        let b = |rng| Builder { dtype, device, rng };
        Ok(Self {
            arch,
            haze_free: Encoder::new(&mut b(&mut r0), &arch)?,
            haze: Encoder::new(&mut b(&mut r1), &arch)?,
            decoder: Decoder::new(&mut b(&mut r2), &arch)?,
            feature_disc: FeatureDiscriminator::new(&mut b(&mut r3), &arch)?,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn encode_haze_free(&self, images: &Tensor) -> Result<FeatureMap> {
        FeatureMap::new(self.haze_free.forward(images)?)
    }

    pub fn encode_haze(&self, images: &Tensor) -> Result<HazeEncoderTrace> {
        let maps = self
            .haze
            .forward_trace(images)?
            .into_iter()
            .map(FeatureMap::new)
            .collect::<Result<_>>()?;
        HazeEncoderTrace::new(maps)
    }

    /// Decodes the elementwise sum of content and haze features.
    pub fn decode(&self, content: &FeatureMap, haze: &FeatureMap) -> Result<Tensor> {
        if content.dims() != haze.dims() {
            return Err(Error::Shape(format!(
                "decoder inputs differ in shape: {:?} vs {:?}",
                content.dims(),
                haze.dims()
            )));
        }
        let c = content.dims()[1];
        if c != self.arch.base_width {
            return Err(Error::Shape(format!("decoder expects {} channels, got {c}", self.arch.base_width)));
        }
        self.decoder.forward(&(content.tensor() + haze.tensor())?)
    }

    /// The content image: the haze-free features decoded with an all-zero
    /// haze slot.
    pub fn content_image(&self, images: &Tensor) -> Result<Tensor> {
        let content = self.encode_haze_free(images)?;
        self.decode(&content, &content.zeros_like()?)
    }

    pub fn feature_discriminator(&self) -> &FeatureDiscriminator {
        &self.feature_disc
    }

    pub fn forward(&self, batch: &TensorBatch) -> Result<HdnForward> {
        let hf_clean = self.encode_haze_free(&batch.clean)?;
        let hf_underwater = self.encode_haze_free(&batch.underwater)?;
        let haze_clean = self.encode_haze(&batch.clean)?;
        let haze_underwater = self.encode_haze(&batch.underwater)?;
        let recon_clean = self.decode(&hf_clean, haze_clean.final_map())?;
        let recon_underwater = self.decode(&hf_underwater, haze_underwater.final_map())?;
        Ok(HdnForward {
            hf_clean,
            hf_underwater,
            haze_clean,
            haze_underwater,
            recon_clean,
            recon_underwater,
        })
    }

    /// E_hf, E_h and D, in checkpoint order.
    pub fn generator_vars(&self) -> NamedVars {
        let mut out = Vec::new();
        self.haze_free.push_vars("e_hf", &mut out);
        self.haze.push_vars("e_h", &mut out);
        self.decoder.push_vars("dec", &mut out);
        out
    }

    pub fn discriminator_vars(&self) -> NamedVars {
        let mut out = Vec::new();
        self.feature_disc.push_vars("d_adv", &mut out);
        out
    }

    /// Variables grouped per network: `e_hf`, `e_h`, `dec`, `d_adv`.
    pub fn network_vars(&self) -> Vec<(&'static str, NamedVars)> {
        let mut groups = Vec::new();
        let mut v = Vec::new();
        self.haze_free.push_vars("e_hf", &mut v);
        groups.push(("e_hf", v));
        let mut v = Vec::new();
        self.haze.push_vars("e_h", &mut v);
        groups.push(("e_h", v));
        let mut v = Vec::new();
        self.decoder.push_vars("dec", &mut v);
        groups.push(("dec", v));
        groups.push(("d_adv", self.discriminator_vars()));
        groups
    }
}

/// Everything one joint forward pass over an unpaired batch produces.
#[derive(Clone, Debug)]
pub struct HdnForward {
    pub hf_clean: FeatureMap,
    pub hf_underwater: FeatureMap,
    pub haze_clean: HazeEncoderTrace,
    pub haze_underwater: HazeEncoderTrace,
    pub recon_clean: Tensor,
    pub recon_underwater: Tensor,
}

/// The two roles of an adversarial objective, both as scalar tensors.
#[derive(Clone, Debug)]
pub struct AdversarialLoss {
    pub discriminator: Tensor,
    pub generator: Tensor,
}

/// `−E[log σ(real)] − E[log(1 − σ(fake))]` from logits.
pub fn bce_discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    Ok((softplus(&real_logits.neg()?)?.mean_all()? + softplus(fake_logits)?.mean_all()?)?)
}

/// Non-saturating generator loss `−E[log σ(fake)]`.
pub fn bce_generator_loss(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fake_logits.neg()?)?.mean_all()?)
}

/// Feature adversarial loss with clean-image features as real samples and
/// underwater-image features as fake samples.
pub fn feature_adversarial_loss(real: &FeatureMap, fake: &FeatureMap, hdn: &Hdn) -> Result<AdversarialLoss> {
    ensure_same_shape(real.tensor(), fake.tensor(), "feature adversarial loss")?;
    ensure_finite(real.tensor(), "real feature map")?;
    ensure_finite(fake.tensor(), "fake feature map")?;
    let d = hdn.feature_discriminator();
    let real_logits = d.logits(real)?;
    let fake_logits = d.logits(fake)?;
    Ok(AdversarialLoss {
        discriminator: bce_discriminator_loss(&real_logits, &fake_logits)?,
        generator: bce_generator_loss(&fake_logits)?,
    })
}

/// Sum over haze-encoder layers of each layer's mean absolute activation.
pub fn feature_regularization_loss(trace: &HazeEncoderTrace) -> Result<Tensor> {
    let mut terms = trace.intermediates().iter();
    let first = terms.next().ok_or_else(|| Error::Shape("empty haze encoder trace".into()))?;
    let mut total = mean_abs(first.tensor())?;
    for m in terms {
        total = (total + mean_abs(m.tensor())?)?;
    }
    Ok(total)
}

/// Mean absolute error between a reconstruction and its target.
pub fn disentangled_cyclic_loss(reconstruction: &Tensor, target: &Tensor) -> Result<Tensor> {
    ensure_same_shape(reconstruction, target, "cyclic loss")?;
    mean_abs(&(reconstruction - target)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdnLossWeights {
    pub adversarial: f64,
    pub regularization: f64,
    pub clean_cycle: f64,
    pub underwater_cycle: f64,
}

impl Default for HdnLossWeights {
    fn default() -> Self {
        Self {
            adversarial: 1.0,
            regularization: 10.0,
            clean_cycle: 1.0,
            underwater_cycle: 1.0,
        }
    }
}

impl HdnLossWeights {
    pub fn zero() -> Self {
        Self {
            adversarial: 0.0,
            regularization: 0.0,
            clean_cycle: 0.0,
            underwater_cycle: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.adversarial, self.regularization, self.clean_cycle, self.underwater_cycle]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParam(format!("disentanglement weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Generator-side disentanglement terms.
#[derive(Clone, Debug)]
pub struct HdnTerms {
    /// Feature adversarial loss, generator role.
    pub l_d1: Tensor,
    pub l_d2: Tensor,
    pub l_d3: Tensor,
    pub l_d4: Tensor,
}

impl HdnTerms {
    pub fn from_forward(fwd: &HdnForward, batch: &TensorBatch, hdn: &Hdn) -> Result<Self> {
        let fake_logits = hdn.feature_disc.logits(&fwd.hf_underwater)?;
        Ok(Self {
            l_d1: bce_generator_loss(&fake_logits)?,
            l_d2: feature_regularization_loss(&fwd.haze_clean)?,
            l_d3: disentangled_cyclic_loss(&fwd.recon_clean, &batch.clean)?,
            l_d4: disentangled_cyclic_loss(&fwd.recon_underwater, &batch.underwater)?,
        })
    }

    pub fn weighted_total(&self, w: &HdnLossWeights) -> Result<Tensor> {
        Ok((((self.l_d1.affine(w.adversarial, 0.0)? + self.l_d2.affine(w.regularization, 0.0)?)?
            + self.l_d3.affine(w.clean_cycle, 0.0)?)?
            + self.l_d4.affine(w.underwater_cycle, 0.0)?)?)
    }

    pub fn values(&self) -> Result<[f64; 4]> {
        Ok([scalar(&self.l_d1)?, scalar(&self.l_d2)?, scalar(&self.l_d3)?, scalar(&self.l_d4)?])
    }
}

/// Discriminator role of the feature adversarial loss on detached features.
pub fn feature_discriminator_loss(fwd: &HdnForward, hdn: &Hdn) -> Result<Tensor> {
    let d = hdn.feature_discriminator();
    bce_discriminator_loss(&d.logits(&fwd.hf_clean.detach())?, &d.logits(&fwd.hf_underwater.detach())?)
}

#[derive(Clone, Debug)]
pub struct HdnLoss {
    pub total: Tensor,
    pub terms: HdnTerms,
    pub discriminator: Tensor,
}

/// Weighted disentanglement objective (generator role), with the feature
/// discriminator's own loss reported alongside.
pub fn hdn_total_loss(batch: &TensorBatch, hdn: &Hdn, weights: &HdnLossWeights) -> Result<HdnLoss> {
    weights.validate()?;
    let fwd = hdn.forward(batch)?;
    let terms = HdnTerms::from_forward(&fwd, batch, hdn)?;
    Ok(HdnLoss {
        total: terms.weighted_total(weights)?,
        discriminator: feature_discriminator_loss(&fwd, hdn)?,
        terms,
    })
}
