//! ADMM for the constrained low patch rank model
//!
//! ```text
//! min_{u,v}  mu * sum_i phi(|(Du)_i|; a) + |P v|_*   s.t.  f = M(u + v)
//! ```
//!
//! with splitting variables `t = Du`, `s = v`. Each iteration runs the
//! t-update (MCP shrinkage), s-update (singular value thresholding on the
//! patch matrix), x-update (`n` projected gradient steps on the constrained
//! quadratic) and the multiplier update, in that order.
//!
//! Convergence is only guaranteed in the convex case `a = 0`.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ensure_dims, Image, Mask};
use crate::operators::{
    patch_extract, patch_reconstruct, GradAdjointOp, GradOp, GradOps, GradientField, PatchConfig,
    PatchMatrix,
};
use crate::prox::{project_c_in_place, prox_mcp_field, svt, McpParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub mu: f64,
    pub a: f64,
    pub rho_t: f64,
    pub rho_s: f64,
    /// Projected gradient step.
    pub tau: f64,
    pub outer_iters: usize,
    pub pgd_iters: usize,
    pub patch: PatchConfig,
    /// Early stop when `max(|Du - t|, |v - s|) <= tol * |f|`; 0 disables.
    pub tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            mu: 0.05,
            a: 0.0,
            rho_t: 1.0,
            rho_s: 1.0,
            tau: 0.1,
            outer_iters: 100,
            pgd_iters: 20,
            patch: PatchConfig::default(),
            tol: 0.0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        self.mcp().validate()?;
        for (name, x) in [("rho_s", self.rho_s), ("tau", self.tau)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        // written to reject NaN as well
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be >= 0, got {}",
                self.tol
            )));
        }
        self.patch.validate()
    }

    pub fn mcp(&self) -> McpParams {
        McpParams {
            mu: self.mu,
            rho_t: self.rho_t,
            a: self.a,
        }
    }

    pub fn pgd(&self) -> PgdParams {
        PgdParams {
            rho_t: self.rho_t,
            rho_s: self.rho_s,
            tau: self.tau,
            iters: self.pgd_iters,
        }
    }

    /// `tau < 2 / (8 rho_t + rho_s)`, using `|D|^2 <= 8`.
    pub fn tau_is_stable(&self) -> bool {
        self.tau < 2.0 / (8.0 * self.rho_t + self.rho_s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdParams {
    pub rho_t: f64,
    pub rho_s: f64,
    pub tau: f64,
    pub iters: usize,
}

/// The full iterate: primal `(u, v)`, splitting variables `(t, s)` and
/// multipliers `(y_t, y_s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub u: Image,
    pub v: Image,
    pub t: GradientField,
    pub s: Image,
    pub y_t: GradientField,
    pub y_s: Image,
}

impl AdmmState {
    /// `u = f`, `v = 0`, everything else zero.
    pub fn initial(f: &Image) -> Self {
        let (h, w) = f.dims();
        Self {
            u: f.clone(),
            v: Image::zeros(h, w),
            t: GradientField::zeros(h, w),
            s: Image::zeros(h, w),
            y_t: GradientField::zeros(h, w),
            y_s: Image::zeros(h, w),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn is_finite(&self) -> bool {
        let field_ok = |g: &GradientField| g.dx().iter().chain(g.dy()).all(|x| x.is_finite());
        self.u.is_finite()
            && self.v.is_finite()
            && self.s.is_finite()
            && self.y_s.is_finite()
            && field_ok(&self.t)
            && field_ok(&self.y_t)
    }

    pub fn max_abs_diff(&self, other: &AdmmState) -> f64 {
        [
            self.u.max_abs_diff(&other.u),
            self.v.max_abs_diff(&other.v),
            self.s.max_abs_diff(&other.s),
            self.y_s.max_abs_diff(&other.y_s),
            self.t.max_abs_diff(&other.t),
            self.y_t.max_abs_diff(&other.y_t),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `t = prox_mcp(D u + y_t / rho_t)`.
pub fn t_step(state: &AdmmState, mcp: &McpParams, d: &dyn GradOp) -> Result<GradientField> {
    let rho = mcp.rho_t;
    let w = d.apply(&state.u).zip_map(&state.y_t, |g, y| g + y / rho);
    prox_mcp_field(&w, mcp)
}

/// `s = P^+ svt(P (v + y_s / rho_s), 1 / rho_s)`.
///
/// With overlapping patches the exact prox of `|P .|_*` is not separable;
/// thresholding happens in the patch domain and the result is mapped back
/// with the left inverse of `P`. Exact for `overlap = 0`.
pub fn s_step(state: &AdmmState, rho_s: f64, patch: PatchConfig) -> Result<Image> {
    let w = state.v.zip_map(&state.y_s, |v, y| v + y / rho_s);
    let pm = patch_extract(&w, patch)?;
    let shrunk = svt(&pm.matrix, 1.0 / rho_s)?;
    patch_reconstruct(&PatchMatrix {
        matrix: shrunk,
        ..pm
    })
}

/// `n` projected gradient steps `x <- P_C(x - tau (A x - B z))` on the
/// x-subproblem, starting from the incoming `(u, v)`.
#[allow(clippy::too_many_arguments)]
pub fn x_step(
    state: &AdmmState,
    t_new: &GradientField,
    s_new: &Image,
    f: &Image,
    mask: &Mask,
    pgd: &PgdParams,
    d: &dyn GradOp,
    d_adj: &dyn GradAdjointOp,
) -> (Image, Image) {
    let PgdParams {
        rho_t,
        rho_s,
        tau,
        iters,
    } = *pgd;
    let z_t = t_new.zip_map(&state.y_t, |t, y| t - y / rho_t);
    let z_s = s_new.zip_map(&state.y_s, |s, y| s - y / rho_s);
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    for _ in 0..iters {
        let r = d.apply(&u).zip_map(&z_t, |du, z| du - z);
        let grad_u = d_adj.apply_adjoint(&r);
        for (ui, gi) in u.as_mut_slice().iter_mut().zip(grad_u.as_slice()) {
            *ui -= tau * (rho_t * gi);
        }
        for (vi, zi) in v.as_mut_slice().iter_mut().zip(z_s.as_slice()) {
            *vi -= tau * (rho_s * (*vi - zi));
        }
        project_c_in_place(&mut u, &mut v, f, mask);
    }
    (u, v)
}

/// `y_t += rho_t (D u - t)`, `y_s += rho_s (v - s)`.
#[allow(clippy::too_many_arguments)]
pub fn y_step(
    state: &AdmmState,
    t_new: &GradientField,
    s_new: &Image,
    u_new: &Image,
    v_new: &Image,
    rho_t: f64,
    rho_s: f64,
    d: &dyn GradOp,
) -> (GradientField, Image) {
    let r_t = d.apply(u_new).zip_map(t_new, |du, t| du - t);
    let y_t = state.y_t.zip_map(&r_t, |y, r| y + rho_t * r);
    let r_s = v_new.zip_map(s_new, |v, s| v - s);
    let y_s = state.y_s.zip_map(&r_s, |y, r| y + rho_s * r);
    (y_t, y_s)
}

/// One ADMM iteration (t, s, x, y updates).
pub fn iterate(
    state: &AdmmState,
    f: &Image,
    mask: &Mask,
    mcp: &McpParams,
    pgd: &PgdParams,
    patch: PatchConfig,
    ops: GradOps<'_>,
) -> Result<AdmmState> {
    let t = t_step(state, mcp, ops.t)?;
    let s = s_step(state, pgd.rho_s, patch)?;
    let (u, v) = x_step(state, &t, &s, f, mask, pgd, ops.x, ops.x_adjoint);
    let (y_t, y_s) = y_step(state, &t, &s, &u, &v, pgd.rho_t, pgd.rho_s, ops.y);
    Ok(AdmmState {
        u,
        v,
        t,
        s,
        y_t,
        y_s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `|Du - t|_2`
    pub res_t: f64,
    /// `|v - s|_2`
    pub res_s: f64,
    /// `max |f - (u + v)|` over observed pixels
    pub res_constraint: f64,
    pub ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    /// Set when `tau >= 2 / (8 rho_t + rho_s)`.
    pub tau_unstable: bool,
}

impl Diagnostics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,res_t,res_s,res_constraint,ms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:.3}",
                r.iter, r.res_t, r.res_s, r.res_constraint, r.ms
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub u: Image,
    pub v: Image,
    pub state: AdmmState,
    pub diagnostics: Diagnostics,
}

/// Largest constraint violation `|f - (u + v)|` over observed pixels.
pub fn constraint_residual(u: &Image, v: &Image, f: &Image, mask: &Mask) -> f64 {
    let obs = mask.as_slice();
    u.as_slice()
        .iter()
        .zip(v.as_slice())
        .zip(f.as_slice())
        .zip(obs)
        .filter(|(_, &o)| o)
        .fold(0.0, |m, (((u, v), f), _)| m.max((f - (u + v)).abs()))
}

pub fn solve(f: &Image, mask: &Mask, cfg: &AdmmConfig) -> Result<Decomposition> {
    solve_with_ops(f, mask, cfg, GradOps::discrete())
}

/// [`solve`] with caller-supplied gradient-like operators.
pub fn solve_with_ops(
    f: &Image,
    mask: &Mask,
    cfg: &AdmmConfig,
    ops: GradOps<'_>,
) -> Result<Decomposition> {
    cfg.validate()?;
    ensure_dims(f.dims(), mask.dims())?;
    cfg.patch.check_admissible(f.height(), f.width())?;

    let mcp = cfg.mcp();
    let pgd = cfg.pgd();
    let f_norm = f.norm();
    let mut diagnostics = Diagnostics {
        records: Vec::with_capacity(cfg.outer_iters),
        tau_unstable: !cfg.tau_is_stable(),
    };
    let mut state = AdmmState::initial(f);
    for iter in 0..cfg.outer_iters {
        let start = Instant::now();
        state = iterate(&state, f, mask, &mcp, &pgd, cfg.patch, ops)?;
        if !state.is_finite() {
            return Err(Error::Diverged(iter));
        }
        let res_t = ops.y.apply(&state.u).zip_map(&state.t, |a, b| a - b).norm();
        let res_s = state.v.zip_map(&state.s, |a, b| a - b).norm();
        let res_constraint = constraint_residual(&state.u, &state.v, f, mask);
        diagnostics.records.push(IterationRecord {
            iter,
            res_t,
            res_s,
            res_constraint,
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if cfg.tol > 0.0 && res_t.max(res_s) <= cfg.tol * f_norm {
            break;
        }
    }
    Ok(Decomposition {
        u: state.u.clone(),
        v: state.v.clone(),
        state,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{grad, DiscreteGradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    fn random_state(rng: &mut impl Rng, h: usize, w: usize) -> AdmmState {
        let field = |rng: &mut dyn rand::RngCore| {
            GradientField::from_components(
                Image::from_fn(h, w, |_, _| rng.random_range(-0.5..0.5)),
                Image::from_fn(h, w, |_, _| rng.random_range(-0.5..0.5)),
            )
            .unwrap()
        };
        AdmmState {
            u: random_image(rng, h, w),
            v: random_image(rng, h, w),
            t: field(rng),
            s: random_image(rng, h, w),
            y_t: field(rng),
            y_s: random_image(rng, h, w),
        }
    }

    #[test]
    fn t_step_constant_u_is_zero() {
        let st = AdmmState::initial(&Image::filled(6, 6, 0.4));
        let t = t_step(&st, &AdmmConfig::default().mcp(), &DiscreteGradient).unwrap();
        assert_eq!(t, GradientField::zeros(6, 6));
    }

    #[test]
    fn t_step_soft_thresholds_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = AdmmState::initial(&random_image(&mut rng, 6, 6));
        let mcp = McpParams::new(0.2, 1.0, 0.0).unwrap();
        let t = t_step(&st, &mcp, &DiscreteGradient).unwrap();
        let g = grad(&st.u);
        for i in 0..6 {
            for j in 0..6 {
                let w = g.at(i, j);
                let n = w[0].hypot(w[1]);
                let s = if n == 0.0 {
                    0.0
                } else {
                    (1.0 - 0.2 / n).max(0.0)
                };
                let e = [s * w[0], s * w[1]];
                let got = t.at(i, j);
                assert!((got[0] - e[0]).abs() < 1e-15 && (got[1] - e[1]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn t_step_negligible_mu_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = random_state(&mut rng, 6, 6);
        let mcp = McpParams::new(1e-12, 1.0, 0.0).unwrap();
        let t = t_step(&st, &mcp, &DiscreteGradient).unwrap();
        let expected = grad(&st.u).zip_map(&st.y_t, |g, y| g + y);
        assert!(t.max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn s_step_zero_and_vanishing_threshold() {
        let st = AdmmState::initial(&Image::zeros(6, 6));
        let s = s_step(&st, 1.0, PatchConfig::default()).unwrap();
        assert_eq!(s, Image::zeros(6, 6));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = random_state(&mut rng, 8, 8);
        let rho = 1e12;
        let s = s_step(&st, rho, PatchConfig::default()).unwrap();
        let w = st.v.zip_map(&st.y_s, |v, y| v + y / rho);
        assert!(s.max_abs_diff(&w) < 1e-8);
    }

    #[test]
    fn s_step_disjoint_patches_is_exact_prox() {
        // objective |P s|_* + rho/2 |s - w|^2 at the output vs perturbations
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let st = random_state(&mut rng, 8, 8);
        let cfg = PatchConfig::new(4, 0).unwrap();
        let rho = 0.8;
        let s = s_step(&st, rho, cfg).unwrap();
        let w = st.v.zip_map(&st.y_s, |v, y| v + y / rho);
        let objective = |x: &Image| {
            let pm = patch_extract(x, cfg).unwrap();
            let nuc: f64 = pm.matrix.singular_values().iter().sum();
            let d = x.zip_map(&w, |a, b| a - b);
            nuc + 0.5 * rho * d.dot(&d)
        };
        let base = objective(&s);
        for _ in 0..100 {
            let noise: Vec<f64> = (0..s.len())
                .map(|_| rng.random_range(-1e-3..1e-3))
                .collect();
            let p = Image::from_vec(
                8,
                8,
                s.as_slice()
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| a + b)
                    .collect(),
            )
            .unwrap();
            assert!(objective(&p) >= base - 1e-12);
        }
    }

    #[test]
    fn x_step_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_image(&mut rng, 6, 6);
        let v = random_image(&mut rng, 6, 6);
        let f = u.zip_map(&v, |a, b| a + b);
        let mut st = AdmmState::initial(&f);
        st.u = u.clone();
        st.v = v.clone();
        let t = grad(&u);
        let pgd = AdmmConfig::default().pgd();
        let (u2, v2) = x_step(
            &st,
            &t,
            &v,
            &f,
            &Mask::ones(6, 6),
            &pgd,
            &DiscreteGradient,
            &DiscreteGradient,
        );
        assert!(u2.max_abs_diff(&u) < 1e-12 && v2.max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn x_step_zero_iterations_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let st = random_state(&mut rng, 6, 6);
        let f = random_image(&mut rng, 6, 6);
        let pgd = PgdParams {
            iters: 0,
            ..AdmmConfig::default().pgd()
        };
        let (u, v) = x_step(
            &st,
            &st.t,
            &st.s,
            &f,
            &Mask::ones(6, 6),
            &pgd,
            &DiscreteGradient,
            &DiscreteGradient,
        );
        assert_eq!((u, v), (st.u.clone(), st.v.clone()));
    }

    #[test]
    fn y_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = random_state(&mut rng, 6, 6);
        let u = random_image(&mut rng, 6, 6);
        let v = random_image(&mut rng, 6, 6);
        let (yt, ys) = y_step(&st, &grad(&u), &v, &u, &v, 1.0, 1.0, &DiscreteGradient);
        assert_eq!((yt, ys), (st.y_t.clone(), st.y_s.clone()));

        let mut zero = AdmmState::initial(&Image::zeros(6, 6));
        let g = grad(&u);
        let (yt, _) = y_step(
            &zero,
            &GradientField::zeros(6, 6),
            &v,
            &u,
            &v,
            2.5,
            1.0,
            &DiscreteGradient,
        );
        assert!(yt.max_abs_diff(&g.map(|x| 2.5 * x)) < 1e-15);

        // two steps with the same residual advance by 2 rho r
        let s = Image::zeros(6, 6);
        let (yt1, ys1) = y_step(
            &zero,
            &GradientField::zeros(6, 6),
            &s,
            &u,
            &v,
            1.5,
            0.5,
            &DiscreteGradient,
        );
        zero.y_t = yt1;
        zero.y_s = ys1;
        let (_, ys2) = y_step(
            &zero,
            &GradientField::zeros(6, 6),
            &s,
            &u,
            &v,
            1.5,
            0.5,
            &DiscreteGradient,
        );
        assert!(ys2.max_abs_diff(&v.map(|x| 2.0 * 0.5 * x)) < 1e-15);
    }

    #[test]
    fn zero_image_stays_zero() {
        let f = Image::zeros(8, 8);
        let cfg = AdmmConfig {
            outer_iters: 10,
            pgd_iters: 5,
            ..Default::default()
        };
        let out = solve(&f, &Mask::ones(8, 8), &cfg).unwrap();
        assert_eq!(out.u, f);
        assert_eq!(out.v, f);
        assert_eq!(out.diagnostics.records.len(), 10);
    }

    #[test]
    fn rejects_bad_config() {
        let f = Image::zeros(8, 8);
        let m = Mask::ones(8, 8);
        let bad = AdmmConfig {
            a: 30.0,
            ..Default::default()
        };
        assert!(matches!(solve(&f, &m, &bad), Err(Error::NonConvexProx(_))));
        let bad = AdmmConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(solve(&f, &m, &bad).is_err());
        assert!(matches!(
            solve(
                &Image::zeros(7, 8),
                &Mask::ones(7, 8),
                &AdmmConfig::default()
            ),
            Err(Error::InadmissiblePatch(_))
        ));
    }

    #[test]
    fn unstable_tau_is_flagged() {
        let f = Image::zeros(4, 4);
        let cfg = AdmmConfig {
            tau: 0.5,
            outer_iters: 1,
            ..Default::default()
        };
        assert!(
            solve(&f, &Mask::ones(4, 4), &cfg)
                .unwrap()
                .diagnostics
                .tau_unstable
        );
    }

    #[test]
    fn early_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_image(&mut rng, 8, 8);
        let cfg = AdmmConfig {
            outer_iters: 500,
            tol: 1e-2,
            ..Default::default()
        };
        let out = solve(&f, &Mask::ones(8, 8), &cfg).unwrap();
        assert!(out.diagnostics.records.len() < 500);
        let last = out.diagnostics.records.last().unwrap();
        assert!(last.res_t.max(last.res_s) <= 1e-2 * f.norm());
    }

    #[test]
    fn csv_header() {
        let d = Diagnostics {
            records: vec![IterationRecord {
                iter: 0,
                res_t: 1.0,
                res_s: 2.0,
                res_constraint: 0.0,
                ms: 1.5,
            }],
            tau_unstable: false,
        };
        let csv = d.to_csv();
        assert!(csv.starts_with("iter,res_t,res_s,res_constraint,ms\n0,"));
        assert_eq!(csv.lines().count(), 2);
    }
}
