//! Acceptance suite: every pinned end-to-end guarantee of the pipeline, one
//! test per guarantee. Each test prints a single `ACCEPTANCE[n] ...: PASS`
//! line with its measured margin (visible under `--nocapture`), and fails
//! hard if the margin or its runtime budget is exceeded.

use std::time::Instant;

use bandsplat::config::TrainConfig;
use bandsplat::constraints::{project_to_surface, remove_outliers, scp_loss};
use bandsplat::eval::{chamfer_l1, extract_mesh};
use bandsplat::geometry::{logit, CameraView, Gaussian, GaussianGrads, Vec3, Vec4};
use bandsplat::raster::{GrayImage, Raster};
use bandsplat::render::{
    depth_distortion_loss, depth_to_normal, depth_to_normal_backward, edge_aware_weights,
    multiview_geom_loss, ncc_loss, normal_smooth_loss, render_backward, render_depth_maps,
    render_view, rgb_loss, NeighborWarp, PlaneMaps, RenderGrads, RenderOptions,
};
use bandsplat::scene::{chamfer_pointcloud, Scene, SceneParams, Shape};
use bandsplat::tsdf::{fuse_depth_maps, GridSpec, TsdfGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Raw scalar parameters per Gaussian: center 0..3, log_scale 3..6,
/// rotation 6..10, opacity logit 10, color 11..14.
const N_PARAMS: usize = 14;

fn param_get(g: &Gaussian, p: usize) -> f64 {
    match p {
        0..=2 => g.center[p],
        3..=5 => g.log_scale[p - 3],
        6..=9 => g.rotation[p - 6],
        10 => g.opacity_logit,
        _ => g.color[p - 11],
    }
}

fn param_set(g: &mut Gaussian, p: usize, v: f64) {
    match p {
        0..=2 => g.center[p] = v,
        3..=5 => g.log_scale[p - 3] = v,
        6..=9 => g.rotation[p - 6] = v,
        10 => g.opacity_logit = v,
        _ => g.color[p - 11] = v,
    }
}

fn grad_get(grads: &GaussianGrads, i: usize, p: usize) -> f64 {
    match p {
        0..=2 => grads.center[i][p],
        3..=5 => grads.log_scale[i][p - 3],
        6..=9 => grads.rotation[i][p - 6],
        10 => grads.opacity_logit[i],
        _ => grads.color[i][p - 11],
    }
}

fn unit_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_quat(rng: &mut ChaCha8Rng) -> Vec4 {
    loop {
        let q = Vec4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return q / n;
        }
    }
}

/// Evenly spread unit directions (golden spiral).
fn spread_directions(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), y, r * t.sin())
        })
        .collect()
}

fn plain_gaussian(center: Vec3) -> Gaussian {
    Gaussian {
        center,
        log_scale: Vec3::repeat(0.05f64.ln()),
        rotation: Vec4::new(1.0, 0.0, 0.0, 0.0),
        opacity_logit: logit(0.5),
        color: Vec3::repeat(0.5),
    }
}

/// Unit sphere signed-distance grid over [-1.5, 1.5]^3 with a 4-voxel band.
fn sphere_grid(resolution: u32) -> TsdfGrid {
    let spec = GridSpec::covering(Vec3::repeat(-1.5), Vec3::repeat(1.5), 0.0, resolution).unwrap();
    let truncation = 4.0 * spec.voxel_size;
    TsdfGrid::from_fn(spec, truncation, |p| p.norm() - 1.0).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients of every loss match central finite differences
// ---------------------------------------------------------------------------

const FD_SEED: u64 = 11;
const GRAD_TOL: f64 = 1e-3;
const SCP_OPACITY_TOL: f64 = 1e-5;

/// Test scene for gradient checks: a ring of cameras dense enough that
/// adjacent views overlap on 8x8 frames, so the two-view losses engage.
fn grad_scene() -> Scene {
    Scene::build(SceneParams {
        n_views: 12,
        image_width: 8,
        image_height: 8,
        ..SceneParams::default()
    })
    .unwrap()
}

/// Five visible Gaussians inside the object silhouette. Opacities stay at or
/// below 0.75 so five layers never push transmittance below the blending
/// cutoff: the record set is then stable under the FD probes.
fn visible_gaussians(rng: &mut ChaCha8Rng) -> Vec<Gaussian> {
    (0..5)
        .map(|_| {
            let dir = unit_vec(rng);
            let r = rng.gen_range(0.55..0.95);
            Gaussian {
                center: r * dir,
                log_scale: Vec3::new(
                    rng.gen_range(0.25..0.40f64).ln(),
                    rng.gen_range(0.25..0.40f64).ln(),
                    0.02f64.ln(),
                ),
                rotation: random_quat(rng),
                opacity_logit: logit(rng.gen_range(0.45..0.75)),
                color: Vec3::new(
                    rng.gen_range(0.25..0.75),
                    rng.gen_range(0.25..0.75),
                    rng.gen_range(0.25..0.75),
                ),
            }
        })
        .collect()
}

struct FdContext {
    scene: Scene,
    opts: RenderOptions,
    gray: Vec<GrayImage>,
    eta: Vec<Raster<f64>>,
}

impl FdContext {
    fn new() -> FdContext {
        let scene = grad_scene();
        let opts = RenderOptions {
            background: scene.params.background,
            ..RenderOptions::default()
        };
        let gray: Vec<GrayImage> = scene.gt_rgb.iter().map(|img| img.to_gray()).collect();
        let eta = gray.iter().map(edge_aware_weights).collect();
        FdContext {
            scene,
            opts,
            gray,
            eta,
        }
    }
}

const BETA: f64 = 0.2;
const ALPHA_MIN: f64 = 0.5;

/// Image reconstruction loss: (1-beta) MAE + beta DSSIM + patch correlation.
fn rgb_chain(ctx: &FdContext, gs: &[Gaussian], grads: bool) -> (f64, Option<GaussianGrads>) {
    let v0 = &ctx.scene.views[0];
    let out = render_view(gs, v0, &ctx.opts).unwrap();
    let mut g = RenderGrads::zeros(&out);
    let mut parts = rgb_loss(&out.rgb, &ctx.scene.gt_rgb[0], BETA, 1.0, &mut g.d_rgb).unwrap();
    let planes = PlaneMaps::new(&out, v0, ALPHA_MIN).unwrap();
    let warp = NeighborWarp::new(v0, &ctx.scene.views[1]);
    parts.photometric = ncc_loss(&warp, v0, &planes, &ctx.gray[0], &ctx.gray[1], 1, 1.0, &mut g);
    let loss = parts.total(BETA);
    if !grads {
        return (loss, None);
    }
    (loss, Some(render_backward(gs, v0, &ctx.opts, &out, &g).unwrap()))
}

/// Per-pixel depth concentration penalty.
fn depth_chain(ctx: &FdContext, gs: &[Gaussian], grads: bool) -> (f64, Option<GaussianGrads>) {
    let v0 = &ctx.scene.views[0];
    let out = render_view(gs, v0, &ctx.opts).unwrap();
    let mut g = RenderGrads::zeros(&out);
    let loss = depth_distortion_loss(&out, 1.0, &mut g);
    if !grads {
        return (loss, None);
    }
    (loss, Some(render_backward(gs, v0, &ctx.opts, &out, &g).unwrap()))
}

/// Edge-aware consistency between rendered normals and depth-implied normals.
fn normal_chain(ctx: &FdContext, gs: &[Gaussian], grads: bool) -> (f64, Option<GaussianGrads>) {
    let v0 = &ctx.scene.views[0];
    let out = render_view(gs, v0, &ctx.opts).unwrap();
    let mut g = RenderGrads::zeros(&out);
    let n_prime = depth_to_normal(&out.depth, v0);
    let mut d_n_prime = Raster::filled(out.width(), out.height(), Vec3::zeros());
    let loss = normal_smooth_loss(
        &out.normal,
        &n_prime,
        &ctx.eta[0],
        1.0,
        &mut g.d_normal,
        &mut d_n_prime,
    )
    .unwrap();
    if !grads {
        return (loss, None);
    }
    let d_depth = depth_to_normal_backward(&out.depth, v0, &d_n_prime);
    for y in 0..out.height() {
        for x in 0..out.width() {
            let v = g.d_depth.get(x, y) + d_depth.get(x, y);
            g.d_depth.set(x, y, v);
        }
    }
    (loss, Some(render_backward(gs, v0, &ctx.opts, &out, &g).unwrap()))
}

/// Two-view plane reprojection consistency.
fn multiview_chain(ctx: &FdContext, gs: &[Gaussian], grads: bool) -> (f64, Option<GaussianGrads>) {
    let v0 = &ctx.scene.views[0];
    let v1 = &ctx.scene.views[1];
    let out_r = render_view(gs, v0, &ctx.opts).unwrap();
    let out_n = render_view(gs, v1, &ctx.opts).unwrap();
    let mut g_r = RenderGrads::zeros(&out_r);
    let mut g_n = RenderGrads::zeros(&out_n);
    let planes_r = PlaneMaps::new(&out_r, v0, ALPHA_MIN).unwrap();
    let planes_n = PlaneMaps::new(&out_n, v1, ALPHA_MIN).unwrap();
    let warp = NeighborWarp::new(v0, v1);
    let loss = multiview_geom_loss(&warp, v0, &planes_r, v1, &planes_n, 1.0, &mut g_r, &mut g_n);
    if !grads {
        return (loss, None);
    }
    let mut grads_out = render_backward(gs, v0, &ctx.opts, &out_r, &g_r).unwrap();
    let nbr = render_backward(gs, v1, &ctx.opts, &out_n, &g_n).unwrap();
    grads_out.add_scaled(&nbr, 1.0).unwrap();
    (loss, Some(grads_out))
}

/// Central finite differences of `forward` over every raw parameter.
fn numeric_grads(
    gaussians: &[Gaussian],
    h: f64,
    mut forward: impl FnMut(&[Gaussian]) -> f64,
) -> Vec<[f64; N_PARAMS]> {
    let mut work = gaussians.to_vec();
    let mut out = vec![[0.0; N_PARAMS]; gaussians.len()];
    for i in 0..gaussians.len() {
        for p in 0..N_PARAMS {
            let base = param_get(&work[i], p);
            param_set(&mut work[i], p, base + h);
            let up = forward(&work);
            param_set(&mut work[i], p, base - h);
            let down = forward(&work);
            param_set(&mut work[i], p, base);
            out[i][p] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Worst relative error over the requested parameters. Entries below
/// `1e-4 * max|analytic|` on both sides are measured against that floor, so
/// noise in near-zero entries cannot dominate.
fn max_rel_error(
    analytic: &GaussianGrads,
    numeric: &[[f64; N_PARAMS]],
    params: &[usize],
) -> (f64, f64) {
    let mut gmax = 0.0f64;
    for i in 0..analytic.len() {
        for &p in params {
            gmax = gmax.max(grad_get(analytic, i, p).abs());
        }
    }
    assert!(gmax > 0.0, "gradient check is vacuous: all entries zero");
    let floor = 1e-4 * gmax;
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        for &p in params {
            let a = grad_get(analytic, i, p);
            let n = numeric[i][p];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    (worst, gmax)
}

#[test]
fn a1_loss_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let ctx = FdContext::new();
    let mut rng = ChaCha8Rng::seed_from_u64(FD_SEED);
    let gaussians = visible_gaussians(&mut rng);
    let all: Vec<usize> = (0..N_PARAMS).collect();
    let h = 1e-5;

    type Chain = fn(&FdContext, &[Gaussian], bool) -> (f64, Option<GaussianGrads>);
    let cases: [(&str, Chain); 4] = [
        ("reconstruction", rgb_chain),
        ("depth-concentration", depth_chain),
        ("normal-consistency", normal_chain),
        ("multiview-consistency", multiview_chain),
    ];
    let mut report = String::new();
    for (name, chain) in cases {
        let (loss, grads) = chain(&ctx, &gaussians, true);
        assert!(loss > 0.0, "{name} loss is zero: check is vacuous");
        let numeric = numeric_grads(&gaussians, h, |gs| chain(&ctx, gs, false).0);
        let (worst, _) = max_rel_error(&grads.unwrap(), &numeric, &all);
        assert!(
            worst < GRAD_TOL,
            "{name}: worst relative gradient error {worst:.3e} exceeds {GRAD_TOL:.0e}"
        );
        report.push_str(&format!("{name}={worst:.1e} "));
    }

    // Band-weighted opacity regularizer: gradients flow only through the
    // opacity logit (the sampled distance is a constant of the prior), so
    // only that parameter is compared, at a tighter tolerance.
    let grid = sphere_grid(32);
    let truncation = grid.truncation;
    let dirs = spread_directions(5);
    let offsets = [-0.8, -0.25, 0.0, 0.2, 0.7]; // on- and off-surface mix
    let scp_gaussians: Vec<Gaussian> = dirs
        .iter()
        .zip(offsets)
        .map(|(dir, off)| {
            let mut g = plain_gaussian((1.0 + off * truncation) * dir);
            g.opacity_logit = logit(0.3 + 0.1 * (off + 1.0));
            g
        })
        .collect();
    let delta = 0.3;
    let mut analytic = GaussianGrads::zeros(scp_gaussians.len());
    let loss = scp_loss(&scp_gaussians, &grid, delta, 1.0, Some(&mut analytic));
    assert!(loss > 0.0, "band opacity loss is zero: check is vacuous");
    let numeric = numeric_grads(&scp_gaussians, 1e-6, |gs| {
        scp_loss(gs, &grid, delta, 1.0, None)
    });
    let (worst, _) = max_rel_error(&analytic, &numeric, &[10]);
    assert!(
        worst < SCP_OPACITY_TOL,
        "band-opacity: worst relative opacity gradient error {worst:.3e} exceeds {SCP_OPACITY_TOL:.0e}"
    );
    report.push_str(&format!("band-opacity={worst:.1e}"));

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "gradient suite took {dt:.1}s, budget 60s");
    println!("ACCEPTANCE[1] loss gradients match finite differences: PASS ({report}; {dt:.1}s)");
}

// ---------------------------------------------------------------------------
// 2. Depth fusion is bit-equal to a brute-force per-voxel oracle
// ---------------------------------------------------------------------------

#[test]
fn a2_depth_fusion_matches_brute_force_oracle() {
    let t0 = Instant::now();
    let scene = Scene::build(SceneParams {
        n_views: 4,
        image_width: 64,
        image_height: 64,
        ..SceneParams::default()
    })
    .unwrap();
    let spec = scene.grid_spec(0.05, 32).unwrap();
    // A tight two-voxel band guarantees the occluded-view skip fires.
    let truncation = 2.0 * spec.voxel_size;
    let fused = fuse_depth_maps(&spec, truncation, &scene.views, &scene.gt_depth).unwrap();

    // Oracle: for each voxel center, walk the views in order; project, read
    // the nearest depth pixel, skip behind-camera / out-of-frame / invalid /
    // occluded samples, and average the clamped normalized distances.
    let [nx, ny, nz] = spec.dims;
    let mut observed = 0usize;
    let mut occlusion_skips = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = spec.position(i, j, k);
                let mut sum = 0.0;
                let mut weight = 0.0;
                for (view, depth) in scene.views.iter().zip(&scene.gt_depth) {
                    let c = view.rotation * p + view.translation;
                    let z = c.z;
                    if z <= 0.0 {
                        continue;
                    }
                    let u = view.intrinsics.cx + view.intrinsics.fx * c.x / z;
                    let v = view.intrinsics.cy + view.intrinsics.fy * c.y / z;
                    let (ix, iy) = (u.floor(), v.floor());
                    if !(ix >= 0.0 && iy >= 0.0) {
                        continue;
                    }
                    let (ix, iy) = (ix as usize, iy as usize);
                    if ix >= depth.width() || iy >= depth.height() {
                        continue;
                    }
                    let d = depth.get(ix, iy);
                    if !(d.is_finite() && d > 0.0) {
                        continue;
                    }
                    let sdf = d - z;
                    if sdf < -truncation {
                        occlusion_skips += 1;
                        continue;
                    }
                    sum += (sdf / truncation).clamp(-1.0, 1.0);
                    weight += 1.0;
                }
                let (value, weight) = if weight > 0.0 {
                    observed += 1;
                    (sum / weight, weight)
                } else {
                    (1.0, 0.0)
                };
                let idx = fused.index(i, j, k);
                assert_eq!(
                    fused.values()[idx].to_bits(),
                    value.to_bits(),
                    "value mismatch at voxel ({i},{j},{k})"
                );
                assert_eq!(
                    fused.weights()[idx].to_bits(),
                    weight.to_bits(),
                    "weight mismatch at voxel ({i},{j},{k})"
                );
            }
        }
    }
    let total = spec.len();
    assert!(observed > 0, "no observed voxels: oracle is vacuous");
    assert!(observed < total, "every voxel observed: unobserved path untested");
    assert!(occlusion_skips > 0, "occlusion skip never fired: band too wide");

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "fusion oracle took {dt:.1}s, budget 10s");
    println!(
        "ACCEPTANCE[2] depth fusion bit-equal to brute-force oracle: PASS \
         ({observed}/{total} voxels observed, {occlusion_skips} occlusion skips; {dt:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// 3. Trilinear sampling matches the cell polynomial; FD gradient is exact
// ---------------------------------------------------------------------------

#[test]
fn a3_trilinear_sample_and_gradient_match_cell_polynomial() {
    let t0 = Instant::now();
    let spec = GridSpec {
        origin: Vec3::new(-0.37, 0.11, -0.52),
        voxel_size: 0.23,
        dims: [7, 6, 9],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = spec.len();
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grid = TsdfGrid::from_parts(spec, 0.5, values, vec![1.0; n]).unwrap();

    let corner = |i: u32, j: u32, k: u32| grid.value(i, j, k);
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..300 {
        // Interior cells only, with fractions clear of the faces, so the
        // gradient probes (eps 1e-4) stay inside one cell on every axis.
        let i = rng.gen_range(1..spec.dims[0] - 2);
        let j = rng.gen_range(1..spec.dims[1] - 2);
        let k = rng.gen_range(1..spec.dims[2] - 2);
        let f = Vec3::new(
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        );
        let p = spec.origin + spec.voxel_size * (Vec3::new(i as f64, j as f64, k as f64) + f);

        // The eight cell corners determine the trilinear polynomial
        // a0 + a1 fx + a2 fy + a3 fz + a4 fx fy + a5 fy fz + a6 fx fz
        //    + a7 fx fy fz.
        let c000 = corner(i, j, k);
        let c100 = corner(i + 1, j, k);
        let c010 = corner(i, j + 1, k);
        let c001 = corner(i, j, k + 1);
        let c110 = corner(i + 1, j + 1, k);
        let c011 = corner(i, j + 1, k + 1);
        let c101 = corner(i + 1, j, k + 1);
        let c111 = corner(i + 1, j + 1, k + 1);
        let a0 = c000;
        let a1 = c100 - c000;
        let a2 = c010 - c000;
        let a3 = c001 - c000;
        let a4 = c110 - c100 - c010 + c000;
        let a5 = c011 - c010 - c001 + c000;
        let a6 = c101 - c100 - c001 + c000;
        let a7 = c111 - c110 - c101 - c011 + c100 + c010 + c001 - c000;
        let (fx, fy, fz) = (f.x, f.y, f.z);
        let poly =
            a0 + a1 * fx + a2 * fy + a3 * fz + a4 * fx * fy + a5 * fy * fz + a6 * fx * fz
                + a7 * fx * fy * fz;
        worst_value = worst_value.max((grid.sample(&p) - poly).abs());

        // In-cell analytic gradient of the polynomial, in 1/length units.
        let expect = Vec3::new(
            a1 + a4 * fy + a6 * fz + a7 * fy * fz,
            a2 + a4 * fx + a5 * fz + a7 * fx * fz,
            a3 + a5 * fy + a6 * fx + a7 * fx * fy,
        ) / spec.voxel_size;
        let got = grid.gradient_fd(&p, 1e-4).unwrap();
        for a in 0..3 {
            let rel = (got[a] - expect[a]).abs() / got[a].abs().max(expect[a].abs()).max(1e-9);
            worst_grad = worst_grad.max(rel);
        }
    }
    assert!(
        worst_value <= 1e-12,
        "trilinear sample deviates from cell polynomial by {worst_value:.3e}"
    );
    assert!(
        worst_grad <= 1e-6,
        "FD gradient deviates from analytic cell gradient by {worst_grad:.3e} relative"
    );

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "trilinear oracle took {dt:.2}s, budget 1s");
    println!(
        "ACCEPTANCE[3] trilinear sample/gradient match the cell polynomial: PASS \
         (value err {worst_value:.1e}, grad rel err {worst_grad:.1e}; {dt:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// 4. Surface projection contracts band distances by 10x
// ---------------------------------------------------------------------------

#[test]
fn a4_projection_contracts_band_distances() {
    let t0 = Instant::now();
    let grid = sphere_grid(128);
    let truncation = grid.truncation;

    // 2000 probes spread over the sphere, stratified through the band.
    let dirs = spread_directions(2000);
    let mut gaussians: Vec<Gaussian> = dirs
        .iter()
        .enumerate()
        .map(|(i, dir)| {
            let u = -0.9 + 1.8 * (i as f64 + 0.5) / 2000.0;
            plain_gaussian((1.0 + u * truncation) * dir)
        })
        .collect();

    let metric_mean = |gs: &[Gaussian]| -> f64 {
        gs.iter()
            .map(|g| (truncation * grid.sample(&g.center)).abs())
            .sum::<f64>()
            / gs.len() as f64
    };
    let before = metric_mean(&gaussians);
    assert!(before > 0.1 * truncation, "probes start too close to the surface");
    project_to_surface(&mut gaussians, &grid, false).unwrap();
    let after = metric_mean(&gaussians);
    assert!(
        after <= 0.1 * before,
        "projection left mean |sdf| {after:.3e} > 10% of initial {before:.3e}"
    );

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "projection check took {dt:.1}s, budget 5s");
    println!(
        "ACCEPTANCE[4] one projection pass contracts mean band distance 10x: PASS \
         ({before:.4} -> {after:.5} over {} Gaussians; {dt:.1}s)",
        gaussians.len()
    );
}

// ---------------------------------------------------------------------------
// 5. Outlier removal is sound: no kept Gaussian sits outside the observed band
// ---------------------------------------------------------------------------

#[test]
fn a5_removal_never_keeps_observed_out_of_band_gaussians() {
    let scene = Scene::build(SceneParams {
        n_views: 6,
        image_width: 64,
        image_height: 64,
        ..SceneParams::default()
    })
    .unwrap();
    let spec = scene.grid_spec(0.05, 64).unwrap();
    let truncation = 4.0 * spec.voxel_size;
    let grid = fuse_depth_maps(&spec, truncation, &scene.views, &scene.gt_depth).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let gaussians: Vec<Gaussian> = (0..10_000)
        .map(|_| {
            plain_gaussian(Vec3::new(
                rng.gen_range(-1.4..1.4),
                rng.gen_range(-1.4..1.4),
                rng.gen_range(-1.4..1.4),
            ))
        })
        .collect();

    let t0 = Instant::now();
    let report = remove_outliers(&gaussians, &grid, 0.3, false);
    let mut violations = 0;
    for (g, kept) in gaussians.iter().zip(&report.keep) {
        let observed = grid.support_observed(&g.center) == Some(true);
        if *kept && observed && grid.sample(&g.center).abs() >= 1.0 - 1e-6 {
            violations += 1;
        }
    }
    let dt = t0.elapsed().as_secs_f64();

    assert_eq!(violations, 0, "{violations} kept Gaussians sit fully outside the observed band");
    assert!(report.removed() > 0, "removal dropped nothing: audit is vacuous");
    assert!(report.removed() < gaussians.len(), "removal dropped everything");
    assert!(dt < 1.0, "removal pass took {dt:.2}s, budget 1s");
    println!(
        "ACCEPTANCE[5] removal keeps no observed out-of-band Gaussians: PASS \
         (removed {} of {}, 0 violations; {dt:.2}s)",
        report.removed(),
        gaussians.len()
    );
}

// ---------------------------------------------------------------------------
// 6. Fusing ground-truth depths and meshing recovers the surface
// ---------------------------------------------------------------------------

#[test]
fn a6_fused_ground_truth_depths_mesh_to_the_surface() {
    let t0 = Instant::now();
    let scene = Scene::build(SceneParams {
        image_width: 128,
        image_height: 128,
        ..SceneParams::default()
    })
    .unwrap();
    let spec = scene.grid_spec(0.05, 128).unwrap();
    let truncation = 4.0 * spec.voxel_size;
    let grid = fuse_depth_maps(&spec, truncation, &scene.views, &scene.gt_depth).unwrap();
    let mesh = extract_mesh(&grid);
    assert!(!mesh.vertices.is_empty(), "marching cubes produced an empty mesh");

    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let ours = mesh.sample_surface(50_000, &mut rng).unwrap();
    let gt = chamfer_pointcloud(&scene.params.shape, 50_000, &mut rng);
    let cd = chamfer_l1(&ours, &gt).unwrap();
    let bound = 1.5 * spec.voxel_size;
    assert!(cd < bound, "Chamfer-L1 {cd:.5} exceeds 1.5 voxels ({bound:.5})");

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "fuse+mesh check took {dt:.1}s, budget 30s");
    println!(
        "ACCEPTANCE[6] fused ground-truth depths mesh to the surface: PASS \
         (Chamfer-L1 {cd:.5} < {bound:.5}; {dt:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// 8. Default schedule: refreshes at 5000/10000/15000, opacity loss from 10000
// ---------------------------------------------------------------------------

#[test]
fn a8_default_schedule_fires_refreshes_and_opacity_loss_on_time() {
    let t0 = Instant::now();
    let mut config = TrainConfig::default();
    // Shrink the scene so 20k iterations stay cheap; every schedule knob
    // (refresh iterations, bandwidth factors, opacity-loss start) keeps its
    // default value.
    config.scene.views = 4;
    config.scene.width = 24;
    config.scene.height = 24;
    config.init.count = 60;
    config.init.mode = "surface".into();
    config.train.iterations = 20_001;
    config.train.ncc_stride = 4;
    config.densify.interval = 0;
    config.prior.resolution = 16;
    // Small frames render softer coverage; keep fusion permissive.
    config.prior.fusion_alpha_min = 0.2;
    let scene = Scene::build(config.scene_params().unwrap()).unwrap();

    let result = bandsplat::optim::train(&scene, &config, None).unwrap();
    assert_eq!(
        result.stats.prior_updates,
        vec![(5000, 1.0), (10_000, 0.5), (15_000, 0.25)],
        "prior refresh schedule deviates from defaults"
    );
    let mut first_scp = None;
    for row in &result.stats.trace {
        if row.l_scp > 0.0 {
            first_scp = Some(row.iter);
            break;
        }
        assert_eq!(row.l_scp, 0.0);
    }
    assert_eq!(
        first_scp,
        Some(10_000),
        "band opacity loss should first contribute exactly at iteration 10000"
    );

    let dt = t0.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE[8] default schedule refreshes at 5000/10000/15000 (sigma 1/0.5/0.25) \
         and the opacity loss joins at 10000: PASS ({dt:.0}s)"
    );
}

// ---------------------------------------------------------------------------
// 9. Training is bitwise deterministic for a fixed seed
// ---------------------------------------------------------------------------

#[test]
fn a9_training_is_bitwise_deterministic() {
    let t0 = Instant::now();
    let mut config = TrainConfig::default();
    config.scene.views = 4;
    config.scene.width = 24;
    config.scene.height = 24;
    config.init.count = 60;
    config.init.mode = "surface".into();
    config.train.iterations = 40;
    config.train.seed = 123;
    config.train.scp_start_iter = 20;
    config.train.ncc_stride = 4;
    config.densify.interval = 10;
    config.densify.start_iter = 10;
    config.densify.stop_iter = 30;
    config.densify.max_gaussians = 200;
    config.prior.resolution = 16;
    config.prior.first_update_iter = 10;
    config.prior.update_interval = 10;
    config.prior.stop_iter = 40;
    config.prior.fusion_alpha_min = 0.2;
    let scene = Scene::build(config.scene_params().unwrap()).unwrap();

    let a = bandsplat::optim::train(&scene, &config, None).unwrap();
    let b = bandsplat::optim::train(&scene, &config, None).unwrap();

    assert_eq!(a.stats.trace.len(), b.stats.trace.len());
    for (ra, rb) in a.stats.trace.iter().zip(&b.stats.trace) {
        assert_eq!(ra.csv_line(), rb.csv_line(), "trace diverges at iteration {}", ra.iter);
    }
    assert_eq!(a.gaussians.len(), b.gaussians.len());
    for (i, (ga, gb)) in a.gaussians.iter().zip(&b.gaussians).enumerate() {
        for p in 0..N_PARAMS {
            assert_eq!(
                param_get(ga, p).to_bits(),
                param_get(gb, p).to_bits(),
                "Gaussian {i} parameter {p} differs between runs"
            );
        }
    }

    let dt = t0.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE[9] training is bitwise deterministic for a fixed seed: PASS \
         ({} iterations replayed identically; {dt:.0}s)",
        a.stats.trace.len()
    );
}
