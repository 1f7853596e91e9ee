//! Grayscale image container, binary masks, file I/O and quality metrics.

mod io;
mod metrics;

pub(crate) use io::{atomic_write, atomic_write_all, encode_for_path};
pub use io::{read_image, read_limg, read_pgm, write_image, write_limg, write_pgm, LIMG_MAGIC};
pub use metrics::{mse, psnr, psnr_joint, DEFAULT_PEAK};

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// A real-valued `height x width` grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds an image from row-major samples, rejecting non-finite values.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} samples for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite sample at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// No finiteness check; for internal kernels whose outputs may carry
    /// non-finite values from a diverging iteration.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert_eq!(self.dims(), other.dims());
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Largest absolute sample-wise difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        ensure_dims(self.dims(), other.dims())
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.width + j]
    }
}

impl IndexMut<(usize, usize)> for Image {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.width + j]
    }
}

pub(crate) fn ensure_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected_h: expected.0,
            expected_w: expected.1,
            got_h: got.0,
            got_w: got.1,
        });
    }
    Ok(())
}

/// Diagonal 0/1 measurement operator. `true` marks an observed pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    observed: Vec<bool>,
}

impl Mask {
    /// The identity operator: every pixel observed.
    pub fn ones(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            observed: vec![true; height * width],
        }
    }

    pub fn from_bools(height: usize, width: usize, observed: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || observed.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} entries for a {height}x{width} mask",
                observed.len()
            )));
        }
        Ok(Self {
            height,
            width,
            observed,
        })
    }

    /// Interprets an image as a mask; every sample must be exactly 0 or 1.
    pub fn from_image(image: &Image) -> Result<Self> {
        let mut observed = Vec::with_capacity(image.len());
        for (k, &x) in image.as_slice().iter().enumerate() {
            if x == 1.0 {
                observed.push(true);
            } else if x == 0.0 {
                observed.push(false);
            } else {
                return Err(Error::InvalidMask(format!(
                    "sample {k} is {x}, expected exactly 0 or 1"
                )));
            }
        }
        Self::from_bools(image.height(), image.width(), observed)
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .observed
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.width + j]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    /// `M x`: zeroes unobserved samples.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        ensure_dims(self.dims(), image.dims())?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: image
                .as_slice()
                .iter()
                .zip(&self.observed)
                .map(|(&x, &m)| if m { x } else { 0.0 })
                .collect(),
        })
    }
}
