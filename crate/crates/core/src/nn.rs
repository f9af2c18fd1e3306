//! Layers, parameter bookkeeping and tensor conversions shared by the
//! disentanglement and restoration networks.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Image, PatchBatch, UnpairedBatch};
use crate::error::{Error, Result};

/// Width and depth settings shared by every network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub base_width: usize,
    pub res_blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            res_blocks: 2,
        }
    }
}

impl ArchConfig {
    /// Total spatial reduction of the encoders; inputs must be multiples of it.
    pub const DOWNSAMPLE: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 2 || self.base_width % 2 != 0 {
            return Err(Error::InvalidParam(format!(
                "base width must be even and at least 2, got {}",
                self.base_width
            )));
        }
        Ok(())
    }

    /// SHA-256 over a canonical encoding of the settings.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = format!("uwhdn-arch-v1;base_width={};res_blocks={}", self.base_width, self.res_blocks);
        Sha256::digest(canonical.as_bytes()).into()
    }
}

/// Independent, reproducible initialisation stream for one network.
pub(crate) fn init_stream(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) type NamedVars = Vec<(String, Var)>;

fn var_from_f64(values: Vec<f64>, shape: &[usize], dtype: DType, device: &Device) -> Result<Var> {
    let t = Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?;
    Ok(Var::from_tensor(&t)?)
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Zero-mean normal with std `gain / sqrt(fan_in)`.
    Scaled { gain: f64 },
    Zeros,
}

impl Init {
    pub(crate) const RELU: Init = Init::Scaled {
        gain: std::f64::consts::SQRT_2,
    };
    pub(crate) const LINEAR: Init = Init::Scaled { gain: 1.0 };

    fn sample(self, n: usize, fan_in: f64, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Scaled { gain } => {
                let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        }
    }
}

/// Shared construction context: dtype, device and the init stream.
pub(crate) struct Builder<'a, R: Rng> {
    pub dtype: DType,
    pub device: &'a Device,
    pub rng: &'a mut R,
}

#[derive(Debug)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub(crate) fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let w = init.sample(c_out * c_in * kernel * kernel, fan_in, b.rng);
        Ok(Self {
            weight: var_from_f64(w, &[c_out, c_in, kernel, kernel], b.dtype, b.device)?,
            bias: var_from_f64(vec![0.0; c_out], &[c_out], b.dtype, b.device)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.bias.dim(0)?;
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c_out, 1, 1))?)?)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub(crate) fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

#[derive(Debug)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    /// Kernel 4, stride 2, padding 1: exactly doubles the spatial size.
    pub(crate) fn upsample2<R: Rng>(b: &mut Builder<'_, R>, c_in: usize, c_out: usize, init: Init) -> Result<Self> {
        let (kernel, stride) = (4, 2);
        let fan_in = (c_in * kernel * kernel / (stride * stride)) as f64;
        let w = init.sample(c_in * c_out * kernel * kernel, fan_in, b.rng);
        Ok(Self {
            weight: var_from_f64(w, &[c_in, c_out, kernel, kernel], b.dtype, b.device)?,
            bias: var_from_f64(vec![0.0; c_out], &[c_out], b.dtype, b.device)?,
            stride,
            padding: 1,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.bias.dim(0)?;
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c_out, 1, 1))?)?)
    }

    pub(crate) fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// `x + conv(relu(conv(x)))` at constant width.
#[derive(Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResidualBlock {
    pub(crate) fn new<R: Rng>(b: &mut Builder<'_, R>, width: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(b, width, width, 3, 1, 1, Init::RELU)?,
            conv2: Conv2d::new(b, width, width, 3, 1, 1, Init::Scaled { gain: 0.5 })?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        Ok((x + y)?)
    }

    pub(crate) fn push_vars(&self, prefix: &str, out: &mut NamedVars) {
        self.conv1.push_vars(&format!("{prefix}.conv1"), out);
        self.conv2.push_vars(&format!("{prefix}.conv2"), out);
    }
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(((x.relu()? * (1.0 - slope))? + (x * slope)?)?)
}

/// Maps `[0, 1]` images to `[-1, 1]` network inputs.
pub(crate) fn centre(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(2.0, -1.0)?)
}

/// Hyperbolic tangent rescaled to `[0, 1]`.
pub(crate) fn bounded_unit(x: &Tensor) -> Result<Tensor> {
    Ok(x.tanh()?.affine(0.5, 0.5)?)
}

pub fn mean_abs(x: &Tensor) -> Result<Tensor> {
    Ok(x.abs()?.mean_all()?)
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = scalar(&t.to_dtype(DType::F64)?.abs()?.sum_all()?)?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinite values")))
    }
}

pub(crate) fn ensure_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// Checks an image batch is `B × 3 × H × W` with `H`, `W` multiples of the
/// encoder downsampling factor.
pub fn check_image_batch(x: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = x
        .dims4()
        .map_err(|_| Error::Shape(format!("expected a B×3×H×W image batch, got {:?}", x.dims())))?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let m = ArchConfig::DOWNSAMPLE;
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "spatial size {h}x{w} must be a non-zero multiple of {m}"
        )));
    }
    Ok((b, h, w))
}

pub fn patches_to_tensor(p: &PatchBatch, dtype: DType, device: &Device) -> Result<Tensor> {
    let t = Tensor::from_slice(&p.data, (p.batch, 3, p.patch, p.patch), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// An [`UnpairedBatch`] moved onto the tensor backend.
#[derive(Clone, Debug)]
pub struct TensorBatch {
    pub underwater: Tensor,
    pub clean: Tensor,
}

impl TensorBatch {
    pub fn new(batch: &UnpairedBatch, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            underwater: patches_to_tensor(&batch.underwater, dtype, device)?,
            clean: patches_to_tensor(&batch.clean, dtype, device)?,
        })
    }
}

pub fn images_to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Shape("empty image list".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data: Vec<f32> = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if !img.same_shape(first) {
            return Err(Error::Shape("images in a batch must share a size".into()));
        }
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let base = i * 3 * plane;
            let data = (0..plane)
                .flat_map(|p| (0..3).map(move |ch| base + ch * plane + p))
                .map(|k| flat[k])
                .collect();
            Image::new(w, h, data)
        })
        .collect()
}

/// `(out × inp)` bilinear interpolation weights with half-pixel centres.
fn interpolation_matrix(inp: usize, out: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        let f = src - i0 as f64;
        m[o * inp + i0] += 1.0 - f;
        m[o * inp + i1] += f;
    }
    m
}

/// Bilinear resize of a `B × C × H × W` tensor written as two matrix
/// products, so it is differentiable. Same-size input is returned as is.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == height && w == width {
        return Ok(x.clone());
    }
    let dev = x.device();
    let rows = Tensor::from_vec(interpolation_matrix(h, height), (height, h), dev)?.to_dtype(x.dtype())?;
    let cols = Tensor::from_vec(interpolation_matrix(w, width), (width, w), dev)?
        .to_dtype(x.dtype())?
        .t()?;
    let y = x.broadcast_matmul(&cols)?;
    Ok(rows.broadcast_matmul(&y)?)
}
