//! Synthetic distortions and the desk-scale benchmark generator.
//!
//! Four distortion kinds at five severities stand in for a labeled IQA
//! corpus. Severity 0 is the identity; each kind's strength table increases
//! strictly with severity, and the proxy label decreases linearly from 5
//! (pristine) to 1 (worst).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image_io::{normalize_u8, save_image};
use crate::data::manifest::write_manifest;
use crate::data::{Dataset, ImagePairRecord};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Gaussian blur sigma per severity 1..=5, in pixels.
const BLUR_SIGMA: [f32; 5] = [0.6, 1.0, 1.6, 2.4, 3.5];
/// Additive Gaussian noise sigma per severity 1..=5, on the [-1, 1] scale.
const NOISE_SIGMA: [f32; 5] = [0.04, 0.08, 0.14, 0.22, 0.33];
/// Contrast scale factor toward mid-gray per severity 1..=5.
const CONTRAST_FACTOR: [f32; 5] = [0.80, 0.62, 0.45, 0.30, 0.18];
/// Quantizer level count per severity 1..=5.
const QUANT_LEVELS: [u32; 5] = [32, 16, 8, 5, 3];

pub const MAX_SEVERITY: u8 = 5;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum DistortionKind {
    GaussianBlur,
    AdditiveGaussianNoise,
    ContrastScale,
    PixelQuantize,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianBlur,
        DistortionKind::AdditiveGaussianNoise,
        DistortionKind::ContrastScale,
        DistortionKind::PixelQuantize,
    ];
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::AdditiveGaussianNoise => "additive_gaussian_noise",
            DistortionKind::ContrastScale => "contrast_scale",
            DistortionKind::PixelQuantize => "pixel_quantize",
        };
        f.write_str(s)
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blur" => Ok(DistortionKind::GaussianBlur),
            "additive_gaussian_noise" => Ok(DistortionKind::AdditiveGaussianNoise),
            "contrast_scale" => Ok(DistortionKind::ContrastScale),
            "pixel_quantize" => Ok(DistortionKind::PixelQuantize),
            other => Err(Error::InvalidArgument(format!(
                "unknown distortion kind `{other}` (expected one of: gaussian_blur, \
                 additive_gaussian_noise, contrast_scale, pixel_quantize)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// 0 = identity, 5 = strongest.
    pub severity: u8,
}

/// Label assigned to a severity: `5 - 0.8 * severity`, so 5 down to 1.
pub fn proxy_mos(severity: u8) -> f64 {
    5.0 - 0.8 * severity as f64
}

/// Applies one distortion to a normalized `(1, 3, h, w)` image. Severity 0
/// returns the input bit-exactly. The seed drives the noise draw and makes
/// regeneration reproducible.
pub fn synth_distort(image: &Tensor, spec: &DistortionSpec, seed: u64) -> Result<(Tensor, f64)> {
    if spec.severity > MAX_SEVERITY {
        return Err(Error::InvalidArgument(format!(
            "severity {} out of range 0..=5",
            spec.severity
        )));
    }
    if spec.severity == 0 {
        return Ok((image.clone(), proxy_mos(0)));
    }
    let level = (spec.severity - 1) as usize;
    let s = image.shape();
    let out = match spec.kind {
        DistortionKind::GaussianBlur => {
            let mut out = image.clone();
            let sigma = BLUR_SIGMA[level];
            for nc in 0..s.n * s.c {
                let lo = nc * s.h * s.w;
                let plane = blur_plane(&image.data()[lo..lo + s.h * s.w], s.h, s.w, sigma);
                out.data_mut()[lo..lo + s.h * s.w].copy_from_slice(&plane);
            }
            out
        }
        DistortionKind::AdditiveGaussianNoise => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let dist = Normal::new(0.0f32, NOISE_SIGMA[level]).expect("positive sigma");
            let data = image
                .data()
                .iter()
                .map(|&v| (v + dist.sample(&mut rng)).clamp(-1.0, 1.0))
                .collect();
            Tensor::from_vec(s, data)?
        }
        DistortionKind::ContrastScale => {
            let f = CONTRAST_FACTOR[level];
            let data = image.data().iter().map(|&v| v * f).collect();
            Tensor::from_vec(s, data)?
        }
        DistortionKind::PixelQuantize => {
            let levels = QUANT_LEVELS[level] as f32;
            let data = image
                .data()
                .iter()
                .map(|&v| {
                    let u = (v * 0.5 + 0.5).clamp(0.0, 1.0);
                    let q = (u * (levels - 1.0)).round() / (levels - 1.0);
                    q * 2.0 - 1.0
                })
                .collect();
            Tensor::from_vec(s, data)?
        }
    };
    Ok((out, proxy_mos(spec.severity)))
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let x = i as f32 - radius as f32;
        k.push((-0.5 * (x / sigma).powi(2)).exp());
    }
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge boundary.
fn blur_plane(src: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = (x + i).saturating_sub(radius).min(w - 1);
                acc += kv * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = (y + i).saturating_sub(radius).min(h - 1);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

use crate::seeds::mix_seed;

/// Generates a procedural reference image, already quantized to the 8-bit
/// grid so that disk round-trips are exact.
pub fn gen_reference(index: usize, seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(&[seed, 0, index as u64]));
    let mut planes = Vec::with_capacity(3);
    match index % 3 {
        0 => {
            // Mixed linear gradients plus a low and a high frequency sine.
            for _ in 0..3 {
                let (a, b): (f32, f32) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let m1: f32 = rng.gen_range(0.2..0.5);
                let m2: f32 = rng.gen_range(0.1..0.3);
                let f1: f32 = rng.gen_range(1.0..4.0);
                let f2: f32 = rng.gen_range(8.0..16.0);
                let th1: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                let th2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                let ph: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                let mut plane = Vec::with_capacity(h * w);
                for y in 0..h {
                    for x in 0..w {
                        let u = x as f32 / w as f32;
                        let v = y as f32 / h as f32;
                        let d1 = u * th1.cos() + v * th1.sin();
                        let d2 = u * th2.cos() + v * th2.sin();
                        plane.push(
                            a * u + b * v
                                + m1 * (std::f32::consts::TAU * f1 * d1 + ph).sin()
                                + m2 * (std::f32::consts::TAU * f2 * d2).sin(),
                        );
                    }
                }
                planes.push(min_max_to_unit(plane));
            }
        }
        1 => {
            // Checkerboard with a gradient wash.
            let cell = rng.gen_range(4..=12usize);
            for _ in 0..3 {
                let c0: f32 = rng.gen_range(0.1..0.45);
                let c1: f32 = rng.gen_range(0.55..0.9);
                let ga: f32 = rng.gen_range(-0.2..0.2);
                let gb: f32 = rng.gen_range(-0.2..0.2);
                let mut plane = Vec::with_capacity(h * w);
                for y in 0..h {
                    for x in 0..w {
                        let on = (x / cell + y / cell) % 2 == 0;
                        let base = if on { c1 } else { c0 };
                        let u = x as f32 / w as f32;
                        let v = y as f32 / h as f32;
                        plane.push((base + ga * u + gb * v).clamp(0.0, 1.0));
                    }
                }
                planes.push(plane);
            }
        }
        _ => {
            // Band-limited noise: white noise softened by a small blur.
            let sigma: f32 = rng.gen_range(0.8..2.0);
            for _ in 0..3 {
                let noise: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
                planes.push(min_max_to_unit(blur_plane(&noise, h, w, sigma)));
            }
        }
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for plane in planes {
        for v in plane {
            data.push(normalize_u8((v * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("length matches")
}

fn min_max_to_unit(mut plane: Vec<f32>) -> Vec<f32> {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &plane {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-6);
    for v in &mut plane {
        *v = 0.05 + 0.9 * (*v - lo) / span;
    }
    plane
}

/// Generates `n_references` procedural references, applies every
/// `(kind, severity 1..=5)` pair, writes the images under `out_dir/images/`
/// and a `manifest.csv`, and returns the dataset. Same arguments produce
/// bit-identical files.
pub fn make_synthetic_benchmark(
    out_dir: &Path,
    n_references: usize,
    kinds: &[DistortionKind],
    seed: u64,
    size: (usize, usize),
) -> Result<Dataset> {
    if n_references < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 references, got {n_references}"
        )));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("need at least one distortion kind".into()));
    }
    let (h, w) = size;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut records = Vec::new();
    for ri in 0..n_references {
        let reference = gen_reference(ri, seed, h, w);
        let ref_rel = format!("images/ref{ri:03}.ppm");
        save_image(&out_dir.join(&ref_rel), &reference)?;
        for (ki, kind) in kinds.iter().enumerate() {
            for severity in 1..=MAX_SEVERITY {
                let spec = DistortionSpec {
                    kind: *kind,
                    severity,
                };
                let record_seed =
                    mix_seed(&[seed, 1, ri as u64, ki as u64, severity as u64]);
                let (distorted, mos) = synth_distort(&reference, &spec, record_seed)?;
                let dist_rel = format!("images/ref{ri:03}_{kind}_s{severity}.ppm");
                save_image(&out_dir.join(&dist_rel), &distorted)?;
                records.push(ImagePairRecord {
                    reference_path: ref_rel.clone(),
                    distorted_path: dist_rel,
                    mos,
                });
            }
        }
    }
    let dataset = Dataset::from_records(records, out_dir.to_path_buf());
    write_manifest(&out_dir.join("manifest.csv"), &dataset)?;
    Ok(dataset)
}
