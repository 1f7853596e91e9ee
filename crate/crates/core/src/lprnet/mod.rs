//! Unrolled network: `K` blocks, each one ADMM iteration whose operators and
//! scalars are learned. Block `k` applies the t, s, x and y updates in order,
//! with
//!
//! * `D_T` (2x2 conv) in place of `D` in the t-update,
//! * `D_X` / `D~_X` in place of `D` / `D^T` inside the projected gradient
//!   steps (the pair is not tied; `D~_X` is applied as a transposed conv),
//! * `D_Y` in place of `D` in the multiplier update,
//! * a per-block `mu` that is either a learned scalar or estimated by a small
//!   CNN from the block input `(u, v)`,
//! * for the non-convex configurations, `a = (rho_t / mu)(1 - 1/b)` with a
//!   learned `b >= 1`, so the MCP prox is always well defined.
//!
//! `rho_t`, `rho_s` and `tau` are shared by all blocks.

mod mucnn;
mod weights;

pub use mucnn::{mu_cnn_forward, softplus, softplus_inverse, Conv3x3, MuCnnWeights};
pub use weights::{
    decode_weights, encode_weights, load_weights, read_manifest, save_weights, tensor_layout,
    Manifest, TensorEntry, WEIGHTS_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmConfig, AdmmState, PgdParams};
use crate::error::{Error, Result};
use crate::imgcore::{ensure_dims, Image, Mask};
use crate::operators::{AdjointKernel, GradOps, GradientKernel, PatchConfig};
use crate::prox::McpParams;

/// The four learnable parameter sets: convex TV or MCP, crossed with a fixed
/// per-block `mu` or a CNN-estimated one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamSet {
    /// `a = 0`, learned scalar `mu` per block.
    ConvexFixedMu,
    /// learned `b`, learned scalar `mu` per block.
    NonConvexFixedMu,
    /// `a = 0`, CNN-estimated `mu`.
    ConvexCnnMu,
    /// learned `b`, CNN-estimated `mu`.
    NonConvexCnnMu,
}

impl ParamSet {
    pub const ALL: [ParamSet; 4] = [
        ParamSet::ConvexFixedMu,
        ParamSet::NonConvexFixedMu,
        ParamSet::ConvexCnnMu,
        ParamSet::NonConvexCnnMu,
    ];

    /// Identifier `1..=4` used in weight files.
    pub fn id(self) -> u8 {
        match self {
            ParamSet::ConvexFixedMu => 1,
            ParamSet::NonConvexFixedMu => 2,
            ParamSet::ConvexCnnMu => 3,
            ParamSet::NonConvexCnnMu => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).wrapping_sub(1)).copied()
    }

    pub fn learns_b(self) -> bool {
        matches!(self, ParamSet::NonConvexFixedMu | ParamSet::NonConvexCnnMu)
    }

    pub fn uses_cnn(self) -> bool {
        matches!(self, ParamSet::ConvexCnnMu | ParamSet::NonConvexCnnMu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of unrolled blocks `K`.
    pub blocks: usize,
    /// Projected gradient steps per block `n`.
    pub pgd_iters: usize,
    pub params: ParamSet,
    pub patch: PatchConfig,
}

impl NetConfig {
    pub fn new(blocks: usize, pgd_iters: usize, params: ParamSet) -> Self {
        Self {
            blocks,
            pgd_iters,
            params,
            patch: PatchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MuSource {
    Fixed(f64),
    Cnn(Box<MuCnnWeights>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub d_t: GradientKernel,
    pub d_x: GradientKernel,
    pub d_x_tilde: AdjointKernel,
    pub d_y: GradientKernel,
    pub mu: MuSource,
    /// Present only for the non-convex parameter sets.
    pub b: Option<f64>,
}

impl BlockWeights {
    fn initial(params: ParamSet) -> Self {
        Self {
            d_t: GradientKernel::forward_difference(),
            d_x: GradientKernel::forward_difference(),
            d_x_tilde: AdjointKernel::forward_difference_transposed(),
            d_y: GradientKernel::forward_difference(),
            mu: if params.uses_cnn() {
                MuSource::Cnn(Box::new(MuCnnWeights::constant(INIT_MU)))
            } else {
                MuSource::Fixed(INIT_MU)
            },
            b: params.learns_b().then_some(INIT_B),
        }
    }

    /// The effective `mu` for this block given its input state.
    pub fn mu(&self, u: &Image, v: &Image) -> Result<f64> {
        match &self.mu {
            MuSource::Fixed(mu) => Ok(*mu),
            MuSource::Cnn(w) => mu_cnn_forward(u, v, w),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub config: NetConfig,
    pub rho_t: f64,
    pub rho_s: f64,
    pub tau: f64,
    pub blocks: Vec<BlockWeights>,
}

pub const INIT_MU: f64 = 0.05;
pub const INIT_RHO: f64 = 1.0;
pub const INIT_TAU: f64 = 0.1;
pub const INIT_B: f64 = 1.1;

impl NetWeights {
    /// Untrained weights: every kernel at the discrete gradient (and its
    /// transpose), `mu = 0.05`, `rho_t = rho_s = 1`, `tau = 0.1`, `b = 1.1`,
    /// and the CNN zeroed except for a final bias giving `mu = 0.05`.
    pub fn initial(config: NetConfig) -> Self {
        Self {
            config,
            rho_t: INIT_RHO,
            rho_s: INIT_RHO,
            tau: INIT_TAU,
            blocks: (0..config.blocks)
                .map(|_| BlockWeights::initial(config.params))
                .collect(),
        }
    }

    /// The classical solver configuration these weights reduce to when all
    /// kernels sit at the discrete gradient and `mu` is fixed.
    pub fn equivalent_admm_config(&self, mu: f64, a: f64) -> AdmmConfig {
        AdmmConfig {
            mu,
            a,
            rho_t: self.rho_t,
            rho_s: self.rho_s,
            tau: self.tau,
            outer_iters: self.config.blocks,
            pgd_iters: self.config.pgd_iters,
            patch: self.config.patch,
            tol: 0.0,
        }
    }

    /// Rounds every scalar to `f32`, the on-disk precision.
    pub fn to_single_precision(&self) -> Self {
        decode_weights(&encode_weights(self).expect("valid weights")).expect("round trip")
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != self.config.blocks {
            return Err(Error::InvalidParameter(format!(
                "{} blocks for K = {}",
                self.blocks.len(),
                self.config.blocks
            )));
        }
        self.config.patch.validate()?;
        for (name, x) in [
            ("rho_t", self.rho_t),
            ("rho_s", self.rho_s),
            ("tau", self.tau),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        let params = self.config.params;
        for (k, b) in self.blocks.iter().enumerate() {
            match (&b.mu, params.uses_cnn()) {
                (MuSource::Fixed(mu), false) => {
                    if !(*mu > 0.0 && mu.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "block {k}: mu must be positive, got {mu}"
                        )));
                    }
                }
                (MuSource::Cnn(w), true) => w.validate()?,
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "block {k}: mu source does not match parameter set {}",
                        params.id()
                    )))
                }
            }
            match (b.b, params.learns_b()) {
                (Some(bv), true) if bv >= 1.0 && bv.is_finite() => {}
                (Some(bv), true) => {
                    return Err(Error::InvalidParameter(format!(
                        "block {k}: b must be >= 1, got {bv}"
                    )))
                }
                (None, false) => {}
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "block {k}: b presence does not match parameter set {}",
                        params.id()
                    )))
                }
            }
        }
        Ok(())
    }
}

/// `a = (rho_t / mu)(1 - 1/b)`; lies in `[0, rho_t / mu)` for any `b >= 1`.
pub fn a_from_b(rho_t: f64, mu: f64, b: f64) -> Result<f64> {
    if !(rho_t > 0.0 && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho_t and mu must be positive, got {rho_t}, {mu}"
        )));
    }
    if !(b >= 1.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("b must be >= 1, got {b}")));
    }
    Ok((rho_t / mu) * (1.0 - 1.0 / b))
}

/// One unrolled block: `Y o X o S o T` applied to `state`.
pub fn forward_block(
    state: &AdmmState,
    f: &Image,
    mask: &Mask,
    block: &BlockWeights,
    net: &NetWeights,
) -> Result<AdmmState> {
    let mu = block.mu(&state.u, &state.v)?;
    let a = match block.b {
        Some(b) if net.config.params.learns_b() => a_from_b(net.rho_t, mu, b)?,
        _ => 0.0,
    };
    let mcp = McpParams {
        mu,
        rho_t: net.rho_t,
        a,
    };
    let pgd = PgdParams {
        rho_t: net.rho_t,
        rho_s: net.rho_s,
        tau: net.tau,
        iters: net.config.pgd_iters,
    };
    let ops = GradOps {
        t: &block.d_t,
        x: &block.d_x,
        x_adjoint: &block.d_x_tilde,
        y: &block.d_y,
    };
    admm::iterate(state, f, mask, &mcp, &pgd, net.config.patch, ops)
}

#[derive(Clone, Debug)]
pub struct NetOutput {
    pub u: Image,
    pub v: Image,
    /// State after each block, when requested.
    pub trace: Vec<AdmmState>,
}

/// Runs all blocks from `u = f`, `v = 0`, zero multipliers.
pub fn forward(f: &Image, mask: &Mask, net: &NetWeights) -> Result<NetOutput> {
    run(f, mask, net, false)
}

pub fn forward_with_trace(f: &Image, mask: &Mask, net: &NetWeights) -> Result<NetOutput> {
    run(f, mask, net, true)
}

fn run(f: &Image, mask: &Mask, net: &NetWeights, keep_trace: bool) -> Result<NetOutput> {
    net.validate()?;
    ensure_dims(f.dims(), mask.dims())?;
    net.config.patch.check_admissible(f.height(), f.width())?;
    let mut state = AdmmState::initial(f);
    let mut trace = Vec::new();
    for block in &net.blocks {
        state = forward_block(&state, f, mask, block, net)?;
        if keep_trace {
            trace.push(state.clone());
        }
    }
    Ok(NetOutput {
        u: state.u,
        v: state.v,
        trace,
    })
}
