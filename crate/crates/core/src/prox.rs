//! Closed-form proximal maps used by the ADMM sub-problems and the
//! projection onto the data-fit constraint set.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgcore::{ensure_dims, Image, Mask};
use crate::operators::GradientField;

/// Parameters of the gradient sub-problem
/// `min_t (mu/rho_t) phi(|t|; a) + 1/2 |t - w|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McpParams {
    pub mu: f64,
    pub rho_t: f64,
    pub a: f64,
}

impl McpParams {
    pub fn new(mu: f64, rho_t: f64, a: f64) -> Result<Self> {
        let p = Self { mu, rho_t, a };
        p.validate()?;
        Ok(p)
    }

    /// Shrinkage threshold `lambda = mu / rho_t`.
    #[inline]
    pub fn lambda(&self) -> f64 {
        self.mu / self.rho_t
    }

    /// Requires positive `mu`, `rho_t`, nonnegative `a`, and
    /// `a <= rho_t / mu` (equality allowed).
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.rho_t > 0.0 && self.rho_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rho_t must be positive, got {}",
                self.rho_t
            )));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "a must be nonnegative, got {}",
                self.a
            )));
        }
        let concavity = self.a * self.lambda();
        if concavity > 1.0 {
            return Err(Error::NonConvexProx(concavity));
        }
        Ok(())
    }
}

/// Minimax concave penalty `phi(t; a)`; `|t|` when `a = 0`.
pub fn mcp_value(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if a == 0.0 {
        t
    } else if t <= 1.0 / a {
        t - 0.5 * a * t * t
    } else {
        0.5 / a
    }
}

#[inline]
fn mcp_factor(norm: f64, lambda: f64, concavity: f64) -> f64 {
    let soft = (1.0 - lambda / norm).max(0.0);
    if soft == 0.0 {
        return 0.0;
    }
    let denom = 1.0 - concavity;
    // at concavity == 1 the scale 1/(1 - a*lambda) is +inf and the cap applies
    if denom <= 0.0 {
        1.0
    } else {
        (soft / denom).min(1.0)
    }
}

/// Unique minimizer of `lambda phi(|t|; a) + 1/2 |t - w|^2` over `R^2`.
pub fn prox_mcp_2d(w: [f64; 2], params: &McpParams) -> Result<[f64; 2]> {
    params.validate()?;
    Ok(prox_unchecked(
        w,
        params.lambda(),
        params.a * params.lambda(),
    ))
}

#[inline]
fn prox_unchecked(w: [f64; 2], lambda: f64, concavity: f64) -> [f64; 2] {
    let norm = w[0].hypot(w[1]);
    if norm == 0.0 {
        return [0.0, 0.0];
    }
    let s = mcp_factor(norm, lambda, concavity);
    [s * w[0], s * w[1]]
}

/// Pixelwise [`prox_mcp_2d`] on `(dx(i,j), dy(i,j))`.
pub fn prox_mcp_field(w: &GradientField, params: &McpParams) -> Result<GradientField> {
    params.validate()?;
    let (lambda, concavity) = (params.lambda(), params.a * params.lambda());
    let (h, wd) = w.dims();
    let (dx, dy): (Vec<f64>, Vec<f64>) = w
        .dx()
        .par_iter()
        .zip(w.dy().par_iter())
        .map(|(&x, &y)| {
            let [a, b] = prox_unchecked([x, y], lambda, concavity);
            (a, b)
        })
        .unzip();
    let mut out = GradientField::zeros(h, wd);
    out.dx_mut().copy_from_slice(&dx);
    out.dy_mut().copy_from_slice(&dy);
    Ok(out)
}

/// Singular value thresholding `U max(S - beta, 0) V^T` with a full thin SVD.
pub fn svt(m: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be nonnegative, got {beta}"
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Svd("non-finite input matrix".into()));
    }
    if m.is_empty() {
        return Ok(m.clone());
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Svd("did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let shrunk = svd.singular_values.map(|s| (s - beta).max(0.0));
    let mut us = u.clone();
    for (k, mut col) in us.column_iter_mut().enumerate() {
        col *= shrunk[k];
    }
    Ok(us * v_t)
}

/// Euclidean projection of `(u, v)` onto `{ f = M(u + v) }`: the residual is
/// split equally between the two components at observed pixels.
pub fn project_c(u: &Image, v: &Image, f: &Image, mask: &Mask) -> Result<(Image, Image)> {
    ensure_dims(u.dims(), v.dims())?;
    ensure_dims(u.dims(), f.dims())?;
    ensure_dims(u.dims(), mask.dims())?;
    let mut u2 = u.clone();
    let mut v2 = v.clone();
    project_c_in_place(&mut u2, &mut v2, f, mask);
    Ok((u2, v2))
}

pub(crate) fn project_c_in_place(u: &mut Image, v: &mut Image, f: &Image, mask: &Mask) {
    let obs = mask.as_slice();
    let fs = f.as_slice();
    for (k, (ui, vi)) in u
        .as_mut_slice()
        .iter_mut()
        .zip(v.as_mut_slice().iter_mut())
        .enumerate()
    {
        if obs[k] {
            let r = 0.5 * (fs[k] - *ui - *vi);
            *ui += r;
            *vi += r;
        }
    }
}
