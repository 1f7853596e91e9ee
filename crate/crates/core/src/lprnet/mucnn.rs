//! Small CNN estimating a positive balancing weight `mu` from the current
//! `(u, v)` pair: three 3x3 conv layers (4, 8, 16 channels, ReLU each),
//! global average pooling, a 16 -> 1 linear layer and a softplus.

use crate::error::{Error, Result};
use crate::imgcore::Image;

/// 3x3 convolution, stride 1, replicate padding. Weights `[out][in][3][3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.out_channels * self.in_channels * 9
            || self.bias.len() != self.out_channels
        {
            return Err(Error::InvalidParameter(format!(
                "{name}: inconsistent layer sizes"
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name}: non-finite weight"
            )));
        }
        Ok(())
    }

    fn forward_relu(&self, input: &[Vec<f64>], h: usize, w: usize) -> Vec<Vec<f64>> {
        debug_assert_eq!(input.len(), self.in_channels);
        let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
        (0..self.out_channels)
            .map(|o| {
                let mut out = vec![self.bias[o]; h * w];
                for (c, chan) in input.iter().enumerate() {
                    let k = &self.weight[(o * self.in_channels + c) * 9..][..9];
                    for i in 0..h {
                        let rows = [clamp(i as isize - 1, h), i, clamp(i as isize + 1, h)];
                        for j in 0..w {
                            let cols = [clamp(j as isize - 1, w), j, clamp(j as isize + 1, w)];
                            let mut acc = 0.0;
                            for (di, &r) in rows.iter().enumerate() {
                                for (dj, &q) in cols.iter().enumerate() {
                                    acc += k[di * 3 + dj] * chan[r * w + q];
                                }
                            }
                            out[i * w + j] += acc;
                        }
                    }
                }
                for x in out.iter_mut() {
                    *x = x.max(0.0);
                }
                out
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuCnnWeights {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub conv3: Conv3x3,
    /// 16 weights of the final linear layer.
    pub fc_weight: Vec<f64>,
    pub fc_bias: f64,
}

impl MuCnnWeights {
    /// All weights zero except the final bias, chosen so the output is `mu`.
    pub fn constant(mu: f64) -> Self {
        Self {
            conv1: Conv3x3::zeros(4, 2),
            conv2: Conv3x3::zeros(8, 4),
            conv3: Conv3x3::zeros(16, 8),
            fc_weight: vec![0.0; 16],
            fc_bias: softplus_inverse(mu),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, layer, shape) in [
            ("conv1", &self.conv1, (4, 2)),
            ("conv2", &self.conv2, (8, 4)),
            ("conv3", &self.conv3, (16, 8)),
        ] {
            if (layer.out_channels, layer.in_channels) != shape {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be {}x{}x3x3",
                    shape.0, shape.1
                )));
            }
            layer.check(name)?;
        }
        if self.fc_weight.len() != 16 || self.fc_weight.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "fc weight must be 16 finite values".into(),
            ));
        }
        if !self.fc_bias.is_finite() {
            return Err(Error::InvalidParameter("fc bias must be finite".into()));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)`, strictly positive.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn mu_cnn_forward(u: &Image, v: &Image, w: &MuCnnWeights) -> Result<f64> {
    u.ensure_same_dims(v)?;
    let (h, wd) = u.dims();
    if h < 3 || wd < 3 {
        return Err(Error::InvalidParameter(format!(
            "mu estimator needs at least 3x3 inputs, got {h}x{wd}"
        )));
    }
    let x = vec![u.as_slice().to_vec(), v.as_slice().to_vec()];
    let x = w.conv1.forward_relu(&x, h, wd);
    let x = w.conv2.forward_relu(&x, h, wd);
    let x = w.conv3.forward_relu(&x, h, wd);
    let n = (h * wd) as f64;
    let logit = x
        .iter()
        .zip(&w.fc_weight)
        .map(|(chan, wt)| wt * (chan.iter().sum::<f64>() / n))
        .sum::<f64>()
        + w.fc_bias;
    Ok(softplus(logit))
}
