use lpr_core::admm::{
    constraint_residual, iterate, solve, solve_with_ops, x_step, AdmmConfig, AdmmState, PgdParams,
};
use lpr_core::imgcore::{Image, Mask};
use lpr_core::lprnet::{a_from_b, forward, NetConfig, NetWeights, ParamSet};
use lpr_core::operators::{
    grad, AdjointKernel, DiscreteGradient, GradOps, GradientField, GradientKernel, PatchConfig,
};
use lpr_core::prox::McpParams;
use lpr_core::synthgen::{gen_sample, GenParams, MaskKind};
use lpr_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

/// Forward differences with a zero last row/column, as a dense `2N x N`
/// matrix (horizontal block first), built from the definition.
fn dense_gradient(h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut d = DMatrix::zeros(2 * n, n);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                d[(k, k)] = -1.0;
                d[(k, k + 1)] = 1.0;
            }
            if i + 1 < h {
                d[(n + k, k)] = -1.0;
                d[(n + k, k + w)] = 1.0;
            }
        }
    }
    d
}

#[test]
fn x_step_converges_to_kkt_solution() {
    let (h, w) = (4, 4);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_image(&mut rng, h, w);
    let observed: Vec<bool> = (0..n).map(|k| k % 3 != 1).collect();
    let mask = Mask::from_bools(h, w, observed.clone()).unwrap();
    let mut state = AdmmState::initial(&f);
    state.u = random_image(&mut rng, h, w);
    state.v = random_image(&mut rng, h, w);
    state.y_s = random_image(&mut rng, h, w);
    state.y_t =
        GradientField::from_components(random_image(&mut rng, h, w), random_image(&mut rng, h, w))
            .unwrap();
    let t =
        GradientField::from_components(random_image(&mut rng, h, w), random_image(&mut rng, h, w))
            .unwrap();
    let s = random_image(&mut rng, h, w);
    let (rho_t, rho_s) = (1.0, 1.0);
    let pgd = PgdParams {
        rho_t,
        rho_s,
        tau: 0.1,
        iters: 500,
    };
    let (u, v) = x_step(
        &state,
        &t,
        &s,
        &f,
        &mask,
        &pgd,
        &DiscreteGradient,
        &DiscreteGradient,
    );

    // min rho_t/2 |Du - z_t|^2 + rho_s/2 |v - z_s|^2  s.t.  u_k + v_k = f_k (observed k)
    let d = dense_gradient(h, w);
    let z_t = DVector::from_iterator(
        2 * n,
        t.dx()
            .iter()
            .zip(state.y_t.dx())
            .chain(t.dy().iter().zip(state.y_t.dy()))
            .map(|(t, y)| t - y / rho_t),
    );
    let z_s = DVector::from_iterator(
        n,
        s.as_slice()
            .iter()
            .zip(state.y_s.as_slice())
            .map(|(s, y)| s - y / rho_s),
    );
    let obs: Vec<usize> = (0..n).filter(|&k| observed[k]).collect();
    let m = obs.len();
    let mut kkt = DMatrix::zeros(2 * n + m, 2 * n + m);
    let mut rhs = DVector::zeros(2 * n + m);
    kkt.view_mut((0, 0), (n, n))
        .copy_from(&(d.transpose() * &d * rho_t));
    for k in 0..n {
        kkt[(n + k, n + k)] = rho_s;
    }
    for (r, &k) in obs.iter().enumerate() {
        for col in [k, n + k] {
            kkt[(2 * n + r, col)] = 1.0;
            kkt[(col, 2 * n + r)] = 1.0;
        }
        rhs[2 * n + r] = f.as_slice()[k];
    }
    rhs.rows_mut(0, n)
        .copy_from(&(d.transpose() * &z_t * rho_t));
    rhs.rows_mut(n, n).copy_from(&(&z_s * rho_s));
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");

    let mut worst: f64 = 0.0;
    for k in 0..n {
        worst = worst.max((u.as_slice()[k] - sol[k]).abs());
        worst = worst.max((v.as_slice()[k] - sol[n + k]).abs());
    }
    assert!(worst <= 1e-6, "max deviation from KKT solution {worst:e}");
}

#[test]
fn learned_operators_at_init_match_discrete_gradient() {
    let s = gen_sample(
        2,
        &GenParams {
            height: 16,
            width: 16,
            freq_range: [2.0, 6.0],
            ..Default::default()
        },
    )
    .unwrap();
    let mask = Mask::ones(16, 16);
    let cfg = AdmmConfig {
        outer_iters: 8,
        pgd_iters: 5,
        ..Default::default()
    };
    let k = GradientKernel::forward_difference();
    let kt = AdjointKernel::forward_difference_transposed();
    let ops = GradOps {
        t: &k,
        x: &k,
        x_adjoint: &kt,
        y: &k,
    };
    let a = solve(&s.f, &mask, &cfg).unwrap();
    let b = solve_with_ops(&s.f, &mask, &cfg, ops).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.v, b.v);
}

#[test]
fn convex_iterations_reduce_splitting_residuals() {
    let s = gen_sample(3, &GenParams::default()).unwrap();
    let d = solve(&s.f, &s.mask, &AdmmConfig::default()).unwrap();
    let r = &d.diagnostics.records;
    assert_eq!(r.len(), 100);
    assert!(!d.diagnostics.tau_unstable);
    let early = r[4].res_t.max(r[4].res_s);
    let late = r[99].res_t.max(r[99].res_s);
    assert!(
        late < early,
        "residual {late:e} after 100 iterations vs {early:e} after 5"
    );
}

#[test]
fn tolerance_stops_early() {
    let s = gen_sample(4, &GenParams::default()).unwrap();
    let cfg = AdmmConfig {
        tol: 1e-2,
        ..Default::default()
    };
    let d = solve(&s.f, &s.mask, &cfg).unwrap();
    let n = d.diagnostics.records.len();
    assert!(n < 100);
    let last = d.diagnostics.records[n - 1];
    assert!(last.res_t.max(last.res_s) <= 1e-2 * s.f.norm());
}

#[test]
fn solver_errors() {
    let f = Image::zeros(7, 8);
    let mask = Mask::ones(7, 8);
    assert!(matches!(
        solve(&f, &mask, &AdmmConfig::default()),
        Err(Error::InadmissiblePatch(_))
    ));
    let f = Image::zeros(8, 8);
    let cfg = AdmmConfig {
        a: 30.0,
        ..Default::default()
    };
    assert!(matches!(
        solve(&f, &Mask::ones(8, 8), &cfg),
        Err(Error::NonConvexProx(_))
    ));
    assert!(matches!(
        solve(&f, &Mask::ones(6, 8), &AdmmConfig::default()),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn large_step_is_flagged_and_diverges() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_image(&mut rng, 8, 8);
    let cfg = AdmmConfig {
        tau: 5.0,
        outer_iters: 200,
        ..Default::default()
    };
    assert!(!cfg.tau_is_stable());
    match solve(&f, &Mask::ones(8, 8), &cfg) {
        Err(Error::Diverged(_)) | Err(Error::Svd(_)) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn admissible_dims() -> impl Strategy<Value = (usize, usize)> {
    (0usize..5, 0usize..5).prop_map(|(a, b)| (4 + 2 * a, 4 + 2 * b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_satisfies_constraint_on_observed_pixels(
        (h, w) in admissible_dims(),
        seed in any::<u64>(),
        config in 1u8..=4,
        ratio in 0.0f64..0.9,
    ) {
        let s = gen_sample(seed, &GenParams {
            height: h,
            width: w,
            n_freqs: 1,
            freq_range: [1.0, 2.0],
            mask_kind: MaskKind::RandomPixels(ratio),
            ..Default::default()
        }).unwrap();
        let net = NetWeights::initial(NetConfig::new(2, 1, ParamSet::from_id(config).unwrap()));
        let out = forward(&s.f, &s.mask, &net).unwrap();
        prop_assert!(constraint_residual(&out.u, &out.v, &s.f, &s.mask) <= 1e-12);
        prop_assert!(out.u.is_finite() && out.v.is_finite());
    }

    #[test]
    fn untrained_network_tracks_admm(
        (h, w) in admissible_dims(),
        seed in any::<u64>(),
        k in 0usize..4,
        n in 0usize..4,
        config in 1u8..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_image(&mut rng, h, w);
        let mask = Mask::ones(h, w);
        let params = ParamSet::from_id(config).unwrap();
        let net = NetWeights::initial(NetConfig::new(k, n, params));
        let a = if params.learns_b() { a_from_b(1.0, 0.05, 1.1).unwrap() } else { 0.0 };
        let cfg = AdmmConfig { mu: 0.05, a, outer_iters: k, pgd_iters: n, ..Default::default() };
        let reference = solve(&f, &mask, &cfg).unwrap();
        let out = forward(&f, &mask, &net).unwrap();
        prop_assert!(out.u.max_abs_diff(&reference.u) <= 1e-10);
        prop_assert!(out.v.max_abs_diff(&reference.v) <= 1e-10);
    }

    #[test]
    fn iterate_keeps_multiplier_update_consistent(seed in any::<u64>()) {
        // y_t^{k+1} - y_t^k = rho_t (D u^{k+1} - t^{k+1})
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_image(&mut rng, 8, 8);
        let mask = Mask::ones(8, 8);
        let cfg = AdmmConfig { rho_t: 0.7, rho_s: 1.3, tau: 0.05, ..Default::default() };
        let st0 = AdmmState::initial(&f);
        let mcp = McpParams::new(cfg.mu, cfg.rho_t, cfg.a).unwrap();
        let st1 = iterate(&st0, &f, &mask, &mcp, &cfg.pgd(), PatchConfig::default(), GradOps::discrete()).unwrap();
        let lhs = st1.y_t.zip_map(&st0.y_t, |a, b| a - b);
        let rhs = grad(&st1.u).zip_map(&st1.t, |a, b| 0.7 * (a - b));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        let lhs = st1.y_s.zip_map(&st0.y_s, |a, b| a - b);
        let rhs = st1.v.zip_map(&st1.s, |a, b| 1.3 * (a - b));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }
}
