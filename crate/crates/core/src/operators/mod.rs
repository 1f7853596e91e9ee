//! Linear operators: the discrete gradient `D` and its adjoint, learned 2x2
//! convolutions standing in for them, and the patch operator.

mod conv;
mod patch;

pub use conv::{conv2x2, AdjointKernel, ConvKernel2x2, GradientKernel, Signal};
pub use patch::{
    overlap_counts, patch_adjoint, patch_extract, patch_reconstruct, PatchConfig, PatchMatrix,
};

use crate::imgcore::Image;

/// Two-channel field on an `height x width` grid: horizontal (`dx`) and
/// vertical (`dy`) components, each row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn from_components(dx: Image, dy: Image) -> crate::Result<Self> {
        dx.ensure_same_dims(&dy)?;
        let (height, width) = dx.dims();
        Ok(Self {
            height,
            width,
            dx: dx.into_vec(),
            dy: dy.into_vec(),
        })
    }

    pub(crate) fn from_vecs(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Self {
        debug_assert_eq!(dx.len(), height * width);
        debug_assert_eq!(dy.len(), height * width);
        Self {
            height,
            width,
            dx,
            dy,
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    #[inline]
    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn dx_mut(&mut self) -> &mut [f64] {
        &mut self.dx
    }

    #[inline]
    pub fn dy_mut(&mut self) -> &mut [f64] {
        &mut self.dy
    }

    /// The 2-vector at pixel `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let k = i * self.width + j;
        [self.dx[k], self.dy[k]]
    }

    pub fn dx_image(&self) -> Image {
        Image::from_raw(self.height, self.width, self.dx.clone())
    }

    pub fn dy_image(&self) -> Image {
        Image::from_raw(self.height, self.width, self.dy.clone())
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        let a: f64 = self.dx.iter().zip(&other.dx).map(|(a, b)| a * b).sum();
        let b: f64 = self.dy.iter().zip(&other.dy).map(|(a, b)| a * b).sum();
        a + b
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &GradientField) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.dx
            .iter()
            .zip(&other.dx)
            .chain(self.dy.iter().zip(&other.dy))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn zip_map(&self, other: &GradientField, f: impl Fn(f64, f64) -> f64) -> GradientField {
        debug_assert_eq!(self.dims(), other.dims());
        GradientField {
            height: self.height,
            width: self.width,
            dx: self
                .dx
                .iter()
                .zip(&other.dx)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            dy: self
                .dy
                .iter()
                .zip(&other.dy)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GradientField {
        GradientField {
            height: self.height,
            width: self.width,
            dx: self.dx.iter().map(|&a| f(a)).collect(),
            dy: self.dy.iter().map(|&a| f(a)).collect(),
        }
    }
}

/// Forward differences with a replicate (Neumann) boundary: the last column of
/// `dx` and the last row of `dy` are zero.
pub fn grad(u: &Image) -> GradientField {
    let (h, w) = u.dims();
    let s = u.as_slice();
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                dx[k] = s[k + 1] - s[k];
            }
            if i + 1 < h {
                dy[k] = s[k + w] - s[k];
            }
        }
    }
    GradientField::from_vecs(h, w, dx, dy)
}

/// Exact adjoint of [`grad`] (negative divergence).
pub fn grad_adjoint(g: &GradientField) -> Image {
    let (h, w) = g.dims();
    let (dx, dy) = (g.dx(), g.dy());
    Image::from_fn(h, w, |i, j| {
        let k = i * w + j;
        let mut acc = 0.0;
        if j > 0 {
            acc += dx[k - 1];
        }
        if j + 1 < w {
            acc -= dx[k];
        }
        if i > 0 {
            acc += dy[k - w];
        }
        if i + 1 < h {
            acc -= dy[k];
        }
        acc
    })
}

/// A linear map from images to two-channel fields (`D`-like).
pub trait GradOp: Sync {
    fn apply(&self, u: &Image) -> GradientField;
}

/// A linear map from two-channel fields back to images (`D^T`-like).
pub trait GradAdjointOp: Sync {
    fn apply_adjoint(&self, g: &GradientField) -> Image;
}

/// The hand-coded forward-difference operator.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiscreteGradient;

impl GradOp for DiscreteGradient {
    fn apply(&self, u: &Image) -> GradientField {
        grad(u)
    }
}

impl GradAdjointOp for DiscreteGradient {
    fn apply_adjoint(&self, g: &GradientField) -> Image {
        grad_adjoint(g)
    }
}

/// The four operator slots of one ADMM iteration. The classical solver fills
/// all of them with [`DiscreteGradient`]; the unrolled network uses its
/// per-block learned kernels.
#[derive(Clone, Copy)]
pub struct GradOps<'a> {
    /// `D` in the t-update.
    pub t: &'a dyn GradOp,
    /// `D` inside the x-update.
    pub x: &'a dyn GradOp,
    /// `D^T` inside the x-update.
    pub x_adjoint: &'a dyn GradAdjointOp,
    /// `D` in the multiplier update.
    pub y: &'a dyn GradOp,
}

impl GradOps<'static> {
    pub fn discrete() -> Self {
        static D: DiscreteGradient = DiscreteGradient;
        Self {
            t: &D,
            x: &D,
            x_adjoint: &D,
            y: &D,
        }
    }
}
