//! Synthetic CT-like slices: smooth blobs of soft tissue on a textured fatty
//! background, generated directly in Hounsfield units and then windowed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::window::{window_hu, WindowSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub image_size: usize,
    /// Inclusive range of blobs per image.
    pub blobs: (usize, usize),
    pub foreground_hu: (f64, f64),
    pub background_hu: (f64, f64),
    pub noise_sigma: f64,
    pub window: WindowSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 64,
            blobs: (1, 3),
            foreground_hu: (40.0, 80.0),
            background_hu: (-140.0, -60.0),
            noise_sigma: 12.0,
            window: WindowSpec::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Validation(format!("synthetic image size {} < 16", self.image_size)));
        }
        if self.blobs.0 == 0 || self.blobs.0 > self.blobs.1 {
            return Err(Error::Validation(format!("bad blob count range {:?}", self.blobs)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub patient_id: String,
    pub size: usize,
    pub hu: Vec<i16>,
    /// Windowed 8-bit rendering of `hu`.
    pub image: Vec<u8>,
    /// Exactly 0 or 1 per pixel.
    pub mask: Vec<u8>,
}

impl SyntheticSample {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / self.mask.len() as f64
    }
}

/// Ellipse with a sinusoidally perturbed boundary.
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    wobble: f64,
    lobes: f64,
    phase: f64,
}

impl Blob {
    fn random(size: f64, rng: &mut impl Rng) -> Self {
        Blob {
            cx: rng.gen_range(0.25..0.75) * size,
            cy: rng.gen_range(0.25..0.75) * size,
            rx: rng.gen_range(0.08..0.22) * size,
            ry: rng.gen_range(0.08..0.22) * size,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            wobble: rng.gen_range(0.0..0.25),
            lobes: rng.gen_range(2..=4) as f64,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let r = (u * u + v * v).sqrt();
        r <= 1.0 + self.wobble * (self.lobes * v.atan2(u) + self.phase).sin()
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn sample_one(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticSample> {
    let n = spec.image_size;
    let size = n as f64;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for _ in 0..MAX_ATTEMPTS {
        let count = rng.gen_range(spec.blobs.0..=spec.blobs.1);
        let blobs: Vec<Blob> = (0..count).map(|_| Blob::random(size, rng)).collect();
        let mask: Vec<u8> = (0..n * n)
            .map(|p| {
                let (x, y) = ((p % n) as f64 + 0.5, (p / n) as f64 + 0.5);
                blobs.iter().any(|b| b.contains(x, y)) as u8
            })
            .collect();
        let fg = mask.iter().filter(|&&m| m == 1).count();
        if fg == 0 || 2 * fg >= n * n {
            continue;
        }
        let fg_level = rng.gen_range(spec.foreground_hu.0..=spec.foreground_hu.1);
        let bg_level = rng.gen_range(spec.background_hu.0..=spec.background_hu.1);
        // low-frequency texture so the background is not a flat plateau
        let (fx, fy, ph) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..6.3));
        let texture = 0.25 * (spec.background_hu.1 - spec.background_hu.0);
        let hu: Vec<i16> = mask
            .iter()
            .enumerate()
            .map(|(p, &m)| {
                let (x, y) = ((p % n) as f64 / size, (p / n) as f64 / size);
                let base = if m == 1 {
                    fg_level
                } else {
                    bg_level + texture * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin()
                };
                let v = if spec.noise_sigma > 0.0 { base + noise.sample(rng) } else { base };
                v.round().clamp(-1024.0, 3071.0) as i16
            })
            .collect();
        let image = window_hu(&hu, spec.window);
        return Ok(SyntheticSample {
            patient_id: format!("p{:03}", index / 2),
            size: n,
            hu,
            image,
            mask,
        });
    }
    Err(Error::Numerical(format!(
        "no synthetic mask with foreground fraction in (0, 0.5) after {MAX_ATTEMPTS} attempts"
    )))
}

/// `count` samples; consecutive pairs share a patient id. Sample `i` draws
/// from its own ChaCha stream, so it does not depend on `count`.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Usage("synthetic sample count must be at least 1".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            sample_one(spec, i, &mut rng)
        })
        .collect()
}
