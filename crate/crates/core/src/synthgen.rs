//! Synthetic samples `f = M(u + v)`: a piecewise-constant structure `u` made
//! of smoothed random shapes, a sparse-Fourier texture `v` and an optional
//! inpainting mask.
//!
//! All randomness comes from `ChaCha8Rng` (rand_chacha) seeded with
//! `seed_from_u64`. Each generator uses its own stream of the sample seed,
//! and dataset sample seeds are drawn from a dedicated stream of the dataset
//! seed at word position `2 * index`, so any sample can be regenerated alone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{atomic_write, read_limg, write_limg, Image, Mask};

const STREAM_STRUCTURE: u64 = 1;
const STREAM_TEXTURE: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_SAMPLE_SEEDS: u64 = 4;

/// Subdivision depth and degree of the Lane-Riesenfeld smoothing.
const LR_DEGREE: usize = 2;
const LR_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    /// Fraction of pixels removed.
    RandomPixels(f64),
    /// `count` rectangles or discs with extents in `size_range` pixels.
    RandomShapes {
        count: usize,
        size_range: [usize; 2],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub height: usize,
    pub width: usize,
    pub n_shapes: usize,
    pub n_freqs: usize,
    /// Peak absolute value of the texture.
    pub texture_amplitude: f64,
    /// Spatial frequency magnitude range in cycles per image.
    pub freq_range: [f64; 2],
    pub mask_kind: MaskKind,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_shapes: 3,
            n_freqs: 2,
            texture_amplitude: 0.15,
            freq_range: [4.0, 16.0],
            mask_kind: MaskKind::None,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidParameter(
                "image dimensions must be positive".into(),
            ));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "texture_amplitude must be >= 0, got {}",
                self.texture_amplitude
            )));
        }
        let [lo, hi] = self.freq_range;
        let nyquist = self.height.min(self.width) as f64 / 2.0;
        if !(0.0 <= lo && lo <= hi && hi <= nyquist) {
            return Err(Error::InvalidParameter(format!(
                "freq_range [{lo}, {hi}] must satisfy 0 <= min <= max <= {nyquist} (Nyquist)"
            )));
        }
        match self.mask_kind {
            MaskKind::RandomPixels(r) if !(0.0..=1.0).contains(&r) => Err(Error::InvalidParameter(
                format!("mask ratio must be in [0, 1], got {r}"),
            )),
            MaskKind::RandomShapes {
                size_range: [a, b], ..
            } if a == 0 || a > b => Err(Error::InvalidParameter(format!(
                "mask shape size range [{a}, {b}] must satisfy 1 <= min <= max"
            ))),
            _ => Ok(()),
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut rng = rng_for(seed, STREAM_SAMPLE_SEEDS);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Random star-shaped polygon: sorted angles, radii in a random disc.
fn random_polygon(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<[f64; 2]> {
    let size = h.min(w) as f64;
    let cy = rng.random_range(0.0..h as f64);
    let cx = rng.random_range(0.0..w as f64);
    let radius = rng.random_range(0.1 * size..0.3 * size);
    let n = rng.random_range(6..=12);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|t| {
            let r = radius * rng.random_range(0.3..1.0);
            [cy + r * t.sin(), cx + r * t.cos()]
        })
        .collect()
}

/// Lane-Riesenfeld subdivision of a closed polygon: each round duplicates
/// every point and then averages neighbours `degree` times.
pub fn lane_riesenfeld(points: &[[f64; 2]], degree: usize, rounds: usize) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    if pts.len() < 2 {
        return pts;
    }
    for _ in 0..rounds {
        pts = pts.iter().flat_map(|&p| [p, p]).collect();
        for _ in 0..degree {
            let n = pts.len();
            pts = (0..n)
                .map(|k| {
                    let (a, b) = (pts[k], pts[(k + 1) % n]);
                    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
                })
                .collect();
        }
    }
    pts
}

/// Even-odd fill at pixel centres; `polygon` holds `[row, col]` vertices.
fn fill_polygon(img: &mut Image, polygon: &[[f64; 2]], value: f64) {
    let (h, w) = img.dims();
    let n = polygon.len();
    let mut xs = Vec::new();
    for i in 0..h {
        let y = i as f64 + 0.5;
        xs.clear();
        for k in 0..n {
            let (a, b) = (polygon[k], polygon[(k + 1) % n]);
            if (a[0] <= y) != (b[0] <= y) {
                xs.push(a[1] + (y - a[0]) / (b[0] - a[0]) * (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixels whose centre j + 0.5 lies in [x0, x1)
            let j0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let j1 = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for j in j0..j1 {
                img[(i, j)] = value;
            }
        }
    }
}

pub fn gen_structure(seed: u64, params: &GenParams) -> Image {
    let mut rng = rng_for(seed, STREAM_STRUCTURE);
    let (h, w) = (params.height, params.width);
    let mut img = Image::filled(h, w, rng.random_range(0.0..=1.0));
    for _ in 0..params.n_shapes {
        let polygon = random_polygon(&mut rng, h, w);
        let smooth = lane_riesenfeld(&polygon, LR_DEGREE, LR_ROUNDS);
        let value = rng.random_range(0.0..=1.0);
        fill_polygon(&mut img, &smooth, value);
    }
    img
}

pub fn gen_texture(seed: u64, params: &GenParams) -> Image {
    let mut rng = rng_for(seed, STREAM_TEXTURE);
    let (h, w) = (params.height, params.width);
    let [lo, hi] = params.freq_range;
    let waves: Vec<[f64; 4]> = (0..params.n_freqs)
        .map(|_| {
            let r = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.5..=1.0);
            [amp, r * theta.cos(), r * theta.sin(), phase]
        })
        .collect();
    let tau = std::f64::consts::TAU;
    let mut v = Image::from_fn(h, w, |i, j| {
        waves
            .iter()
            .map(|&[amp, a, b, phase]| {
                amp * (tau * (a * i as f64 / h as f64 + b * j as f64 / w as f64) + phase).cos()
            })
            .sum()
    });
    let peak = v.max_abs();
    if peak > 0.0 {
        let scale = params.texture_amplitude / peak;
        v.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    }
    v
}

pub fn gen_mask(seed: u64, params: &GenParams) -> Mask {
    let mut rng = rng_for(seed, STREAM_MASK);
    let (h, w) = (params.height, params.width);
    let mut observed = vec![true; h * w];
    match params.mask_kind {
        MaskKind::None => {}
        MaskKind::RandomPixels(ratio) => {
            let zeros = (ratio * (h * w) as f64).round() as usize;
            for k in sample_indices(&mut rng, h * w, zeros.min(h * w)) {
                observed[k] = false;
            }
        }
        MaskKind::RandomShapes {
            count,
            size_range: [lo, hi],
        } => {
            for _ in 0..count {
                let ci = rng.random_range(0..h) as f64;
                let cj = rng.random_range(0..w) as f64;
                let sh = rng.random_range(lo..=hi) as f64;
                let sw = rng.random_range(lo..=hi) as f64;
                let disc = rng.random_bool(0.5);
                for i in 0..h {
                    for j in 0..w {
                        let (di, dj) = (i as f64 - ci, j as f64 - cj);
                        let inside = if disc {
                            (di / (sh / 2.0)).powi(2) + (dj / (sh / 2.0)).powi(2) <= 1.0
                        } else {
                            di.abs() <= sh / 2.0 && dj.abs() <= sw / 2.0
                        };
                        if inside {
                            observed[i * w + j] = false;
                        }
                    }
                }
            }
        }
    }
    Mask::from_bools(h, w, observed).expect("consistent dimensions")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub f: Image,
    pub u_gt: Image,
    pub v_gt: Image,
    pub mask: Mask,
    pub seed: u64,
}

pub fn gen_sample(seed: u64, params: &GenParams) -> Result<Sample> {
    params.validate()?;
    let u_gt = gen_structure(seed, params);
    let v_gt = gen_texture(seed, params);
    let mask = gen_mask(seed, params);
    let f = mask.apply(&u_gt.zip_map(&v_gt, |u, v| u + v))?;
    Ok(Sample {
        f,
        u_gt,
        v_gt,
        mask,
        seed,
    })
}

pub fn gen_dataset(seed: u64, count: usize, params: &GenParams) -> Result<Vec<Sample>> {
    params.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| gen_sample(sample_seed(seed, i), params))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub params: GenParams,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

/// Writes `sample_{index:05}/{f,u,v,mask}.limg` and `dataset.json`.
pub fn write_dataset(root: &Path, manifest: &DatasetManifest, samples: &[Sample]) -> Result<()> {
    if samples.len() != manifest.count {
        return Err(Error::Dataset(format!(
            "manifest count {} but {} samples",
            manifest.count,
            samples.len()
        )));
    }
    fs::create_dir_all(root)?;
    for (i, s) in samples.iter().enumerate() {
        let dir = sample_dir(root, i);
        fs::create_dir_all(&dir)?;
        write_limg(dir.join("f.limg"), &s.f)?;
        write_limg(dir.join("u.limg"), &s.u_gt)?;
        write_limg(dir.join("v.limg"), &s.v_gt)?;
        write_limg(dir.join("mask.limg"), &s.mask.to_image())?;
    }
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    atomic_write(&root.join(DATASET_MANIFEST), &json)
}

pub fn read_dataset_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(DATASET_MANIFEST);
    let bytes = fs::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path, source })
}

/// Reads one sample; the seed is recomputed from the dataset seed.
pub fn read_sample(root: &Path, manifest: &DatasetManifest, index: usize) -> Result<Sample> {
    let load = || -> Result<Sample> {
        let dir = sample_dir(root, index);
        let f = read_limg(dir.join("f.limg"))?;
        let u_gt = read_limg(dir.join("u.limg"))?;
        let v_gt = read_limg(dir.join("v.limg"))?;
        let mask = Mask::from_image(&read_limg(dir.join("mask.limg"))?)?;
        for other in [&u_gt, &v_gt] {
            f.ensure_same_dims(other)?;
        }
        crate::imgcore::ensure_dims(f.dims(), mask.dims())?;
        Ok(Sample {
            f,
            u_gt,
            v_gt,
            mask,
            seed: sample_seed(manifest.seed, index),
        })
    };
    load().map_err(|e| Error::Sample {
        index,
        source: Box::new(e),
    })
}

pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = read_dataset_manifest(root)?;
    let samples = (0..manifest.count)
        .map(|i| read_sample(root, &manifest, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
