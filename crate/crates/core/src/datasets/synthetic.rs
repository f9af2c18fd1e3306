//! Desk-scale underwater data: procedural clean scenes and a scattering-style
//! degradation `I = J·t·a + B·(1 − t)` with a smooth random transmission map.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_manifest, DatasetKind, DatasetManifest, Image};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    attenuation: [f32; 3],
    background: [f32; 3],
    transmission_smoothness: f32,
    transmission_range: [f32; 2],
    seed: u64,
}

impl DegradationParams {
    /// `attenuation` is per-channel in `(0, 1]` with red no larger than green
    /// or blue; `transmission_smoothness` is the noise cell size in pixels;
    /// the transmission map is drawn from `transmission_range`.
    pub fn new(
        attenuation: [f32; 3],
        background: [f32; 3],
        transmission_smoothness: f32,
        transmission_range: [f32; 2],
        seed: u64,
    ) -> Result<Self> {
        if attenuation.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidParam(format!("attenuation {attenuation:?} must lie in (0, 1]")));
        }
        if attenuation[0] > attenuation[1] || attenuation[0] > attenuation[2] {
            return Err(Error::InvalidParam(format!(
                "red attenuation must not exceed green or blue, got {attenuation:?}"
            )));
        }
        if background.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidParam(format!("background {background:?} must lie in [0, 1]")));
        }
        if !(transmission_smoothness.is_finite() && transmission_smoothness > 0.0) {
            return Err(Error::InvalidParam(format!(
                "transmission smoothness must be positive, got {transmission_smoothness}"
            )));
        }
        let [lo, hi] = transmission_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidParam(format!("transmission range [{lo}, {hi}] must be ordered within [0, 1]")));
        }
        Ok(Self {
            attenuation,
            background,
            transmission_smoothness,
            transmission_range,
            seed,
        })
    }

    /// Transmission fixed at 1 with no attenuation: the degradation is a no-op.
    pub fn identity() -> Self {
        Self::new([1.0; 3], [0.0; 3], 16.0, [1.0, 1.0], 0).expect("valid")
    }

    /// A random blue-green water column with strong red attenuation and
    /// transmission in `[0.2, 1]`.
    pub fn random(rng: &mut impl Rng) -> Self {
        let red = rng.random_range(0.2..0.5);
        let green = rng.random_range(0.6..0.95);
        let blue = rng.random_range(0.7..1.0);
        let background = [
            rng.random_range(0.02..0.15),
            rng.random_range(0.3..0.55),
            rng.random_range(0.4..0.7),
        ];
        let smoothness = rng.random_range(16.0..40.0);
        Self::new([red, green, blue], background, smoothness, [0.2, 1.0], rng.random()).expect("valid ranges")
    }

    pub fn attenuation(&self) -> [f32; 3] {
        self.attenuation
    }

    pub fn background(&self) -> [f32; 3] {
        self.background
    }

    pub fn transmission_smoothness(&self) -> f32 {
        self.transmission_smoothness
    }

    pub fn transmission_range(&self) -> [f32; 2] {
        self.transmission_range
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Low-resolution uniform noise over `transmission_range`, upsampled with
/// smoothstep-weighted bilinear interpolation. Cell size is the smoothness.
pub fn transmission_map(width: usize, height: usize, params: &DegradationParams) -> Vec<f32> {
    let [lo, hi] = params.transmission_range;
    let cell = params.transmission_smoothness;
    let gw = (width as f32 / cell).ceil() as usize + 2;
    let gh = (height as f32 / cell).ceil() as usize + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let grid: Vec<f32> = (0..gw * gh)
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y as f32 / cell;
        let iy = gy.floor() as usize;
        let fy = smoothstep(gy - iy as f32);
        for x in 0..width {
            let gx = x as f32 / cell;
            let ix = gx.floor() as usize;
            let fx = smoothstep(gx - ix as f32);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(ix, iy) * (1.0 - fx) + g(ix + 1, iy) * fx;
            let bottom = g(ix, iy + 1) * (1.0 - fx) + g(ix + 1, iy + 1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(lo, hi));
        }
    }
    out
}

/// Per pixel and channel: `J·t·a + B·(1 − t)`, clipped to `[0, 1]`.
pub fn apply_degradation(clean: &Image, transmission: &[f32], params: &DegradationParams) -> Result<Image> {
    if transmission.len() != clean.width() * clean.height() {
        return Err(Error::Shape(format!(
            "transmission map has {} entries for a {}x{} image",
            transmission.len(),
            clean.width(),
            clean.height()
        )));
    }
    let a = params.attenuation;
    let b = params.background;
    let data = clean
        .data()
        .chunks_exact(3)
        .zip(transmission)
        .flat_map(|(px, &t)| (0..3).map(move |c| (px[c] * t * a[c] + b[c] * (1.0 - t)).clamp(0.0, 1.0)))
        .collect();
    Image::new(clean.width(), clean.height(), data)
}

pub fn synthesize_underwater(clean: &Image, params: &DegradationParams) -> Image {
    let t = transmission_map(clean.width(), clean.height(), params);
    apply_degradation(clean, &t, params).expect("map matches image size")
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).max(0.0);
    let i = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

enum Shape {
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

impl Shape {
    /// Signed coverage in `[0, 1]` with a one-pixel soft edge.
    fn coverage(&self, x: f32, y: f32) -> f32 {
        let d = match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let n = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
                (n.sqrt() - 1.0) * rx.min(ry)
            }
            Shape::Rect { x0, y0, x1, y1 } => (x0 - x).max(x - x1).max(y0 - y).max(y - y1),
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

/// A procedural "clean" scene: a two-colour vertical gradient with a handful
/// of saturated, lightly textured shapes.
pub fn synthetic_clean_image(width: usize, height: usize, rng: &mut impl Rng) -> Image {
    let top: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.9));
    let bottom: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.9));
    let (w, h) = (width as f32, height as f32);
    let shapes: Vec<(Shape, [f32; 3], f32, f32)> = (0..rng.random_range(4..9))
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Ellipse {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    rx: rng.random_range(0.06..0.3) * w,
                    ry: rng.random_range(0.06..0.3) * h,
                }
            } else {
                let x0 = rng.random_range(-0.1..0.9) * w;
                let y0 = rng.random_range(-0.1..0.9) * h;
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1..0.5) * w,
                    y1: y0 + rng.random_range(0.1..0.5) * h,
                }
            };
            let colour = hsv_to_rgb(rng.random(), rng.random_range(0.4..1.0), rng.random_range(0.45..1.0));
            let freq = rng.random_range(0.1..0.6);
            let amp = rng.random_range(0.0..0.08);
            (shape, colour, freq, amp)
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
        let v = yf / h;
        let mut px: [f32; 3] = std::array::from_fn(|c| top[c] * (1.0 - v) + bottom[c] * v);
        for (shape, colour, freq, amp) in &shapes {
            let k = shape.coverage(xf, yf);
            if k > 0.0 {
                let tex = 1.0 + amp * ((xf + yf) * freq).sin();
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - k) + (colour[c] * tex).clamp(0.0, 1.0) * k;
                }
            }
        }
        px
    })
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub id: String,
    pub clean: Image,
    pub underwater: Image,
    pub params: DegradationParams,
}

/// `count` square scenes of side `size`, each degraded with its own random
/// water column. Fully determined by `seed`.
pub fn synthetic_pairs(count: usize, size: usize, seed: u64) -> Vec<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let clean = synthetic_clean_image(size, size, &mut rng);
            let params = DegradationParams::random(&mut rng);
            let underwater = synthesize_underwater(&clean, &params);
            SyntheticPair {
                id: format!("syn{i:05}"),
                clean,
                underwater,
                params,
            }
        })
        .collect()
}

/// Writes pairs in the `underwater/` + `clean/` layout expected by
/// [`build_manifest`] and returns the resulting manifest.
pub fn write_synthetic_dataset(root: &Path, pairs: &[SyntheticPair]) -> Result<DatasetManifest> {
    for p in pairs {
        p.underwater.save_png(&root.join("underwater").join(format!("{}.png", p.id)))?;
        p.clean.save_png(&root.join("clean").join(format!("{}.png", p.id)))?;
    }
    build_manifest(root, DatasetKind::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a: [f32; 3], b: [f32; 3]) -> DegradationParams {
        DegradationParams::new(a, b, 8.0, [0.2, 1.0], 1).unwrap()
    }

    #[test]
    fn identity_degradation_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = synthetic_clean_image(20, 12, &mut rng);
        assert_eq!(synthesize_underwater(&img, &DegradationParams::identity()), img);
    }

    #[test]
    fn zero_transmission_gives_background() {
        let p = params([0.3, 0.8, 0.9], [0.1, 0.4, 0.5]);
        let img = Image::filled(3, 2, [0.9, 0.2, 0.7]);
        let out = apply_degradation(&img, &[0.0; 6], &p).unwrap();
        assert_eq!(out, Image::filled(3, 2, [0.1, 0.4, 0.5]));
    }

    #[test]
    fn single_pixel_hand_evaluation() {
        let p = params([0.4, 0.8, 0.9], [0.1, 0.4, 0.5]);
        let out = apply_degradation(&Image::filled(1, 1, [1.0; 3]), &[0.5], &p).unwrap();
        let expected = [0.25, 0.60, 0.70];
        for (o, e) in out.pixel(0, 0).iter().zip(expected) {
            assert!((o - e).abs() < 1e-6, "{o} vs {e}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DegradationParams::new([0.9, 0.5, 0.5], [0.0; 3], 8.0, [0.2, 1.0], 0).is_err());
        assert!(DegradationParams::new([0.0, 0.5, 0.5], [0.0; 3], 8.0, [0.2, 1.0], 0).is_err());
        assert!(DegradationParams::new([0.3, 0.5, 0.5], [1.5, 0.0, 0.0], 8.0, [0.2, 1.0], 0).is_err());
        assert!(DegradationParams::new([0.3, 0.5, 0.5], [0.0; 3], 0.0, [0.2, 1.0], 0).is_err());
        assert!(DegradationParams::new([0.3, 0.5, 0.5], [0.0; 3], 8.0, [0.9, 0.2], 0).is_err());
    }

    #[test]
    fn transmission_in_range_and_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DegradationParams::random(&mut rng);
        let t = transmission_map(64, 48, &p);
        assert!(t.iter().all(|v| (0.2..=1.0).contains(v)));
        let max_step = t
            .chunks(64)
            .flat_map(|row| row.windows(2).map(|w| (w[1] - w[0]).abs()))
            .fold(0.0f32, f32::max);
        assert!(max_step < 0.2, "{max_step}");
        let spread = t.iter().cloned().fold(f32::MIN, f32::max) - t.iter().cloned().fold(f32::MAX, f32::min);
        assert!(spread > 0.05);
    }

    #[test]
    fn pairs_are_deterministic() {
        let a = synthetic_pairs(3, 16, 11);
        let b = synthetic_pairs(3, 16, 11);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.clean, y.clean);
            assert_eq!(x.underwater, y.underwater);
        }
        assert!(a[0].underwater != a[0].clean);
    }

    #[test]
    fn write_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synthetic_pairs(5, 16, 2);
        let m = write_synthetic_dataset(dir.path(), &pairs).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.kind(), DatasetKind::Synthetic);
    }

    proptest! {
        #[test]
        fn monotone_in_transmission(j in prop::array::uniform3(0.0f32..1.0),
                                    a in prop::array::uniform3(0.05f32..1.0),
                                    t1 in 0.0f32..1.0, t2 in 0.0f32..1.0) {
            let mut a = a;
            a[0] = a[0].min(a[1]).min(a[2]);
            // background chosen at or below J·a so that the formula increases with t
            let b: [f32; 3] = std::array::from_fn(|c| 0.5 * j[c] * a[c]);
            let p = DegradationParams::new(a, b, 4.0, [0.0, 1.0], 0).unwrap();
            let img = Image::filled(1, 1, j);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let out_lo = apply_degradation(&img, &[lo], &p).unwrap().pixel(0, 0);
            let out_hi = apply_degradation(&img, &[hi], &p).unwrap().pixel(0, 0);
            for c in 0..3 {
                prop_assert!(out_lo[c] <= out_hi[c] + 1e-6);
            }
        }
    }
}
