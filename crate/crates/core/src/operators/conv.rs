use super::{GradAdjointOp, GradOp, GradientField};
use crate::error::{Error, Result};
use crate::imgcore::Image;

/// A 2x2 multi-channel convolution kernel with taps laid out
/// `[out][in][di][dj]`, row-major.
///
/// The anchor is the top-left tap: `out(i, j)` sums `in(i + di, j + dj)` for
/// `di, dj in {0, 1}`, clamping indices past the bottom/right edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel2x2 {
    out_channels: usize,
    in_channels: usize,
    taps: Vec<f64>,
}

impl ConvKernel2x2 {
    pub fn new(out_channels: usize, in_channels: usize, taps: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&out_channels) || !(1..=2).contains(&in_channels) {
            return Err(Error::InvalidParameter(format!(
                "2x2 kernel channels must be 1 or 2, got out={out_channels} in={in_channels}"
            )));
        }
        if taps.len() != out_channels * in_channels * 4 {
            return Err(Error::InvalidParameter(format!(
                "kernel {out_channels}x{in_channels}x2x2 needs {} taps, got {}",
                out_channels * in_channels * 4,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite kernel tap".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            taps,
        })
    }

    /// Forward differences: channel 0 `[[-1, 1], [0, 0]]`, channel 1
    /// `[[-1, 0], [1, 0]]`. Reproduces [`super::grad`] exactly.
    pub fn forward_difference() -> Self {
        Self {
            out_channels: 2,
            in_channels: 1,
            taps: vec![-1.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0],
        }
    }

    /// The forward-difference taps in the `1 out x 2 in` layout used by
    /// [`AdjointKernel`]; reproduces [`super::grad_adjoint`].
    pub fn forward_difference_transposed() -> Self {
        Self {
            out_channels: 1,
            in_channels: 2,
            taps: vec![-1.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            vec![0.0; out_channels * in_channels * 4],
        )
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, 2, 2]
    }

    #[inline]
    fn tap(&self, o: usize, c: usize, di: usize, dj: usize) -> f64 {
        self.taps[((o * self.in_channels + c) * 2 + di) * 2 + dj]
    }

    fn forward(&self, inputs: &[&[f64]], h: usize, w: usize) -> Vec<Vec<f64>> {
        let mut outs = vec![vec![0.0; h * w]; self.out_channels];
        for (o, out) in outs.iter_mut().enumerate() {
            for i in 0..h {
                let rows = [i, (i + 1).min(h - 1)];
                for j in 0..w {
                    let cols = [j, (j + 1).min(w - 1)];
                    let mut acc = 0.0;
                    for (c, input) in inputs.iter().enumerate() {
                        for (di, &r) in rows.iter().enumerate() {
                            for (dj, &q) in cols.iter().enumerate() {
                                acc += self.tap(o, c, di, dj) * input[r * w + q];
                            }
                        }
                    }
                    out[i * w + j] = acc;
                }
            }
        }
        outs
    }

    /// Adjoint of the forward convolution whose `[c][0]` taps equal this
    /// kernel's `[0][c]` taps (a transposed convolution, 2 channels to 1).
    fn transposed(&self, inputs: &[&[f64]], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(self.out_channels, 1);
        let mut out = vec![0.0; h * w];
        for (c, input) in inputs.iter().enumerate() {
            for i in 0..h {
                let rows = [i, (i + 1).min(h - 1)];
                for j in 0..w {
                    let cols = [j, (j + 1).min(w - 1)];
                    let g = input[i * w + j];
                    for (di, &r) in rows.iter().enumerate() {
                        for (dj, &q) in cols.iter().enumerate() {
                            out[r * w + q] += self.tap(0, c, di, dj) * g;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Input or output of [`conv2x2`]: a one-channel image or a two-channel field.
#[derive(Clone, Debug, PartialEq)]
pub enum Signal {
    Image(Image),
    Field(GradientField),
}

impl Signal {
    fn channels(&self) -> usize {
        match self {
            Signal::Image(_) => 1,
            Signal::Field(_) => 2,
        }
    }
}

/// Plain 2x2 convolution with replicate padding on the bottom/right edges.
/// Output has one channel (image) or two (field) per the kernel.
pub fn conv2x2(kernel: &ConvKernel2x2, input: &Signal) -> Result<Signal> {
    if input.channels() != kernel.in_channels {
        return Err(Error::ChannelMismatch {
            expected: kernel.in_channels,
            got: input.channels(),
        });
    }
    let (h, w, chans): (usize, usize, Vec<&[f64]>) = match input {
        Signal::Image(img) => (img.height(), img.width(), vec![img.as_slice()]),
        Signal::Field(f) => (f.dims().0, f.dims().1, vec![f.dx(), f.dy()]),
    };
    let mut outs = kernel.forward(&chans, h, w);
    Ok(if kernel.out_channels == 1 {
        Signal::Image(Image::from_raw(h, w, outs.pop().unwrap()))
    } else {
        let dy = outs.pop().unwrap();
        let dx = outs.pop().unwrap();
        Signal::Field(GradientField::from_vecs(h, w, dx, dy))
    })
}

/// A `2 out x 1 in` kernel used wherever `D` appears.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientKernel(ConvKernel2x2);

impl GradientKernel {
    pub fn new(kernel: ConvKernel2x2) -> Result<Self> {
        if kernel.shape() != [2, 1, 2, 2] {
            return Err(Error::InvalidParameter(format!(
                "gradient kernel must be 2x1x2x2, got {:?}",
                kernel.shape()
            )));
        }
        Ok(Self(kernel))
    }

    pub fn forward_difference() -> Self {
        Self(ConvKernel2x2::forward_difference())
    }

    pub fn kernel(&self) -> &ConvKernel2x2 {
        &self.0
    }
}

impl GradOp for GradientKernel {
    fn apply(&self, u: &Image) -> GradientField {
        let (h, w) = u.dims();
        let mut outs = self.0.forward(&[u.as_slice()], h, w);
        let dy = outs.pop().unwrap();
        let dx = outs.pop().unwrap();
        GradientField::from_vecs(h, w, dx, dy)
    }
}

/// A `1 out x 2 in` kernel used wherever `D^T` appears, applied as a
/// transposed convolution. Its taps are independent of any [`GradientKernel`];
/// with the forward-difference taps it equals [`super::grad_adjoint`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointKernel(ConvKernel2x2);

impl AdjointKernel {
    pub fn new(kernel: ConvKernel2x2) -> Result<Self> {
        if kernel.shape() != [1, 2, 2, 2] {
            return Err(Error::InvalidParameter(format!(
                "adjoint kernel must be 1x2x2x2, got {:?}",
                kernel.shape()
            )));
        }
        Ok(Self(kernel))
    }

    pub fn forward_difference_transposed() -> Self {
        Self(ConvKernel2x2::forward_difference_transposed())
    }

    pub fn kernel(&self) -> &ConvKernel2x2 {
        &self.0
    }
}

impl GradAdjointOp for AdjointKernel {
    fn apply_adjoint(&self, g: &GradientField) -> Image {
        let (h, w) = g.dims();
        let out = self.0.transposed(&[g.dx(), g.dy()], h, w);
        Image::from_raw(h, w, out)
    }
}
