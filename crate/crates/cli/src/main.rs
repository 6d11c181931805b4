//! Command-line driver: training runs, depth fusion, mesh extraction,
//! rendering, evaluation, and a quick self-test of the numerical core.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bandsplat::config::TrainConfig;
use bandsplat::constraints::{project_to_surface, remove_outliers, scp_loss};
use bandsplat::eval::{chamfer_l1, extract_mesh, psnr, Mesh};
use bandsplat::geometry::{logit, Gaussian, Vec3, Vec4};
use bandsplat::io;
use bandsplat::optim::{train, AdamState, TrainResult};
use bandsplat::render::{render_depth_maps, render_view, RenderOptions};
use bandsplat::scene::{chamfer_pointcloud, init_gaussians, Scene, Shape};
use bandsplat::tsdf::{fuse_depth_maps, GridSpec, TsdfGrid};

/// Environment variable overriding the output directory (and nothing else).
const OUT_DIR_ENV: &str = "BANDSPLAT_OUT_DIR";

#[derive(Parser)]
#[command(name = "bandsplat", version, about = "Planar-splat surface reconstruction engine")]
struct Cli {
    /// Worker threads; 1 (the default and currently only implementation)
    /// guarantees fully deterministic execution.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize Gaussians on a synthetic scene and write all run artifacts.
    Train(TrainArgs),
    /// Fuse depth maps (ground truth or a checkpoint's renders) into a grid file.
    Fuse(FuseArgs),
    /// Run marching cubes on a grid file and write a PLY mesh.
    ExtractMesh(ExtractMeshArgs),
    /// Render one view of a checkpoint to PNG + PFM.
    Render(RenderArgs),
    /// Compare a mesh against the scene's analytic surface.
    Eval(EvalArgs),
    /// Run fast built-in sanity checks of the numerical core.
    Selftest,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides config and the BANDSPLAT_OUT_DIR variable).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Disable the fused-grid prior entirely (plain splat training).
    #[arg(long)]
    no_prior: bool,
    /// Keep the prior but drop its opacity-regularization loss.
    #[arg(long)]
    no_scp: bool,
    /// Keep the prior but never remove off-surface Gaussians.
    #[arg(long)]
    no_remove: bool,
    /// Keep the prior but never project Gaussians onto the surface.
    #[arg(long)]
    no_project: bool,
    /// Use this bandwidth factor for every prior refresh instead of the
    /// configured narrowing sequence.
    #[arg(long, value_name = "SIGMA")]
    bandwidth_fixed: Option<f64>,
    /// Random seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Require bit-reproducible execution (rejects --threads > 1).
    #[arg(long)]
    deterministic: bool,
    /// Also remove Gaussians whose support was never observed by any view.
    #[arg(long)]
    remove_unobserved: bool,
    /// Surface projection takes the raw normalized-distance step instead of
    /// the metric Newton step.
    #[arg(long)]
    literal_eq5: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fuse depths rendered from this checkpoint instead of ground truth.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractMeshArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid file produced by `fuse` or a training run.
    #[arg(long, value_name = "PATH")]
    grid: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to render.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Scene view index.
    #[arg(long, default_value_t = 0)]
    view: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Mesh to evaluate.
    #[arg(long, value_name = "PATH")]
    mesh: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => cmd_train(args, cli.threads),
        Command::Fuse(args) => cmd_fuse(args),
        Command::ExtractMesh(args) => cmd_extract_mesh(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Selftest => cmd_selftest(),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

/// Output directory precedence: `--out` flag, then env var, then config.
fn resolve_out(args: &CommonArgs, config: &TrainConfig) -> Result<PathBuf> {
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn build_scene(config: &TrainConfig) -> Result<Scene> {
    Ok(Scene::build(config.scene_params()?)?)
}

fn render_options(scene: &Scene) -> RenderOptions {
    RenderOptions {
        background: scene.params.background,
        ..RenderOptions::default()
    }
}

/// Fresh grid fused from the model's own rendered depths at the base
/// truncation; the shared final-mesh protocol for all training variants.
fn fuse_model_grid(
    gaussians: &[Gaussian],
    scene: &Scene,
    config: &TrainConfig,
) -> Result<TsdfGrid> {
    let spec = scene.grid_spec(config.prior.pad_fraction, config.prior.resolution)?;
    let truncation = config.prior.base_truncation_voxels * spec.voxel_size;
    let depths = render_depth_maps(
        gaussians,
        &scene.views,
        &render_options(scene),
        config.prior.fusion_alpha_min,
    )?;
    Ok(fuse_depth_maps(&spec, truncation, &scene.views, &depths)?)
}

/// Chamfer-L1 between a mesh and the scene's analytic surface, with
/// deterministic sampling on both sides.
fn mesh_chamfer(mesh: &Mesh, shape: &Shape, config: &TrainConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predicted = mesh.sample_surface(config.eval.mesh_samples, &mut rng)?;
    let reference = chamfer_pointcloud(shape, config.eval.gt_samples, &mut rng);
    Ok(chamfer_l1(&predicted, &reference)?)
}

fn cmd_train(args: TrainArgs, threads: u32) -> Result<()> {
    if args.deterministic && threads > 1 {
        bail!("--deterministic requires --threads 1");
    }
    let mut config = load_config(&args.common.config)?;
    if args.no_prior {
        config.prior.enabled = false;
    }
    if args.no_scp {
        config.prior.scp = false;
    }
    if args.no_remove {
        config.prior.remove = false;
    }
    if args.no_project {
        config.prior.project = false;
    }
    if let Some(sigma) = args.bandwidth_fixed {
        config.prior.fixed_sigma = Some(sigma);
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if args.remove_unobserved {
        config.prior.remove_unobserved = true;
    }
    if args.literal_eq5 {
        config.prior.literal_projection = true;
    }
    config.validate()?;
    let out = resolve_out(&args.common, &config)?;

    let started = Instant::now();
    let scene = build_scene(&config)?;
    let iterations = config.train.iterations;
    let checkpoint_interval = config.output.checkpoint_interval;
    let progress_every = (iterations / 10).max(1);
    let out_for_sink = out.clone();
    let mut sink = |iter: u64, gaussians: &[Gaussian], state: &AdamState| {
        if iter % progress_every == 0 || iter == iterations {
            println!("iter {iter}/{iterations} gaussians={}", gaussians.len());
        }
        if checkpoint_interval > 0 && iter % checkpoint_interval == 0 && iter != iterations {
            let path = out_for_sink.join(format!("checkpoint_{iter:07}.ckpt"));
            io::write_checkpoint(&path, iter, gaussians, state)?;
        }
        Ok(())
    };
    let result: TrainResult = train(&scene, &config, Some(&mut sink))?;
    let stats = &result.stats;

    io::write_trace(&out.join("trace.csv"), &stats.trace)?;
    io::write_lines(&out.join("removal.log"), &stats.removal_lines)?;
    io::write_checkpoint(
        &out.join("final.ckpt"),
        iterations,
        &result.gaussians,
        &result.state,
    )?;
    if let Some(prior) = &result.prior {
        io::write_tsdf(&out.join("prior.tsdf"), prior)?;
    }

    let grid = fuse_model_grid(&result.gaussians, &scene, &config)?;
    let mesh = extract_mesh(&grid);
    io::write_ply_mesh(&out.join("mesh.ply"), &mesh)?;

    let chamfer = if mesh.is_empty() {
        f64::INFINITY
    } else {
        mesh_chamfer(&mesh, &scene.params.shape, &config, config.train.seed)?
    };
    let opts = render_options(&scene);
    let mut psnr_sum = 0.0;
    for (view, gt) in scene.views.iter().zip(&scene.gt_rgb) {
        let rendered = render_view(&result.gaussians, view, &opts)?;
        psnr_sum += psnr(&rendered.rgb, gt)?;
    }
    let mean_psnr = psnr_sum / scene.views.len() as f64;
    let runtime = started.elapsed().as_secs_f64();

    let last = stats
        .trace
        .last()
        .context("training produced no trace rows")?;
    io::write_report(
        &out.join("metrics.json"),
        &[
            ("chamfer_l1", chamfer),
            ("psnr", mean_psnr),
            ("num_gaussians", result.gaussians.len() as f64),
            ("l_rgb", last.l_rgb),
            ("l_scp", last.l_scp),
            ("total_loss", last.total),
            ("runtime_seconds", runtime),
        ],
    )?;

    println!(
        "counters: prior_fusions={} projection_calls={} removal_calls={} scp_evaluations={} \
         densify_events={} cloned={} split={} pruned={} removed={} adam_skipped={}",
        stats.prior_fusions,
        stats.projection_calls,
        stats.removal_calls,
        stats.scp_evaluations,
        stats.densify_events,
        stats.total_cloned,
        stats.total_split,
        stats.total_pruned,
        stats.total_removed,
        stats.adam_skipped
    );
    println!(
        "done: chamfer_l1={chamfer} psnr={mean_psnr} gaussians={} runtime_s={runtime:.1} out={}",
        result.gaussians.len(),
        out.display()
    );
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    config.validate()?;
    let out = resolve_out(&args.common, &config)?;
    let scene = build_scene(&config)?;
    let spec = scene.grid_spec(config.prior.pad_fraction, config.prior.resolution)?;
    let truncation = config.prior.base_truncation_voxels * spec.voxel_size;
    let grid = match &args.checkpoint {
        Some(path) => {
            let (_, gaussians, _) = io::read_checkpoint(path)?;
            let depths = render_depth_maps(
                &gaussians,
                &scene.views,
                &render_options(&scene),
                config.prior.fusion_alpha_min,
            )?;
            fuse_depth_maps(&spec, truncation, &scene.views, &depths)?
        }
        None => fuse_depth_maps(&spec, truncation, &scene.views, &scene.gt_depth)?,
    };
    let path = out.join("grid.tsdf");
    io::write_tsdf(&path, &grid)?;
    println!(
        "fused {} views into {} ({}x{}x{} voxels)",
        scene.views.len(),
        path.display(),
        grid.spec.dims[0],
        grid.spec.dims[1],
        grid.spec.dims[2]
    );
    Ok(())
}

fn cmd_extract_mesh(args: ExtractMeshArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    let out = resolve_out(&args.common, &config)?;
    let grid = io::read_tsdf(&args.grid)?;
    let mesh = extract_mesh(&grid);
    let path = out.join("mesh.ply");
    io::write_ply_mesh(&path, &mesh)?;
    println!(
        "extracted {} vertices / {} faces into {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        path.display()
    );
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    config.validate()?;
    let out = resolve_out(&args.common, &config)?;
    let scene = build_scene(&config)?;
    ensure!(
        args.view < scene.views.len(),
        "view {} out of range (scene has {})",
        args.view,
        scene.views.len()
    );
    let (_, gaussians, _) = io::read_checkpoint(&args.checkpoint)?;
    let rendered = render_view(&gaussians, &scene.views[args.view], &render_options(&scene))?;
    let png = out.join(format!("render_{:03}.png", args.view));
    let pfm = out.join(format!("depth_{:03}.pfm", args.view));
    io::write_png(&png, &rendered.rgb)?;
    io::write_pfm(&pfm, &rendered.depth)?;
    println!("wrote {} and {}", png.display(), pfm.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    config.validate()?;
    let out = resolve_out(&args.common, &config)?;
    let mesh = io::read_ply_mesh(&args.mesh)?;
    let chamfer = mesh_chamfer(&mesh, &config.shape()?, &config, config.train.seed)?;
    io::write_report(&out.join("metrics.json"), &[("chamfer_l1", chamfer)])?;
    println!("chamfer_l1={chamfer}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Self-test
// ---------------------------------------------------------------------------

fn check(name: &str, ok: bool, detail: String) -> Result<()> {
    if ok {
        println!("ok {name} ({detail})");
        Ok(())
    } else {
        bail!("selftest failed: {name} ({detail})");
    }
}

fn sphere_grid(resolution: u32, radius: f64, truncation: f64) -> Result<TsdfGrid> {
    let spec = GridSpec::covering(
        Vec3::repeat(-1.5 * radius),
        Vec3::repeat(1.5 * radius),
        0.0,
        resolution,
    )?;
    Ok(TsdfGrid::from_fn(spec, truncation, |p| p.norm() - radius)?)
}

/// Golden-spiral directions: deterministic, roughly uniform on the sphere.
fn spiral_directions(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

fn plain_gaussian(center: Vec3) -> Gaussian {
    Gaussian {
        center,
        log_scale: Vec3::new(-3.0, -3.0, -5.0),
        rotation: Vec4::new(1.0, 0.0, 0.0, 0.0),
        opacity_logit: logit(0.9),
        color: Vec3::repeat(0.5),
    }
}

fn cmd_selftest() -> Result<()> {
    // Sampling a grid whose stored field is linear must be exact.
    let spec = GridSpec::covering(Vec3::repeat(-1.0), Vec3::repeat(1.0), 0.0, 16)?;
    let linear = |p: &Vec3| 0.2 * p.x + 0.3 * p.y - 0.1 * p.z + 0.05;
    let grid = TsdfGrid::from_fn(spec, 100.0, |p| linear(&p))?;
    let mut worst = 0.0f64;
    for d in spiral_directions(40) {
        let p = 0.7 * d;
        worst = worst.max((grid.sample(&p) - linear(&p) / 100.0).abs());
    }
    check("trilinear-exact-on-linear-field", worst < 1e-12, format!("max err {worst:.2e}"))?;

    // Finite-difference gradients of a spherical field point radially.
    let grid = sphere_grid(48, 0.6, 0.5)?;
    let mut worst_dot = 1.0f64;
    for d in spiral_directions(60) {
        let g = grid.gradient_fd(&(0.55 * d), 1e-5)?;
        worst_dot = worst_dot.min(g.normalize().dot(&d));
    }
    check("gradient-radial-on-sphere", worst_dot > 0.99, format!("min alignment {worst_dot:.4}"))?;

    // Ground-truth fusion plus marching cubes recovers the sphere.
    let mut config = TrainConfig::default();
    config.scene.views = 8;
    config.scene.width = 64;
    config.scene.height = 64;
    config.prior.resolution = 48;
    let scene = build_scene(&config)?;
    let spec = scene.grid_spec(config.prior.pad_fraction, config.prior.resolution)?;
    let truncation = config.prior.base_truncation_voxels * spec.voxel_size;
    let fused = fuse_depth_maps(&spec, truncation, &scene.views, &scene.gt_depth)?;
    let mesh = extract_mesh(&fused);
    let radius = config.scene.size;
    let mut mean_r = 0.0f64;
    let mut worst_r = 0.0f64;
    for v in &mesh.vertices {
        let err = (v.norm() - radius).abs();
        mean_r += err;
        worst_r = worst_r.max(err);
    }
    mean_r /= mesh.vertices.len().max(1) as f64;
    let ok = !mesh.is_empty() && mean_r < 0.5 * spec.voxel_size && worst_r < 2.0 * spec.voxel_size;
    check(
        "fuse-extract-recovers-sphere",
        ok,
        format!(
            "{} vertices, radial err mean {mean_r:.4} max {worst_r:.4} (voxel {:.4})",
            mesh.vertices.len(),
            spec.voxel_size
        ),
    )?;

    // One projection call contracts Gaussians onto the zero level set.
    let grid = sphere_grid(64, 1.0, 4.0 * 3.0 / 63.0)?;
    let mut gaussians: Vec<Gaussian> = spiral_directions(300)
        .into_iter()
        .map(|d| plain_gaussian((1.0 + 0.5 * grid.truncation) * d))
        .collect();
    let stats = project_to_surface(&mut gaussians, &grid, false)?;
    let ok = stats.moved > 250 && stats.mean_abs_sdf_after <= 0.1 * stats.mean_abs_sdf_before;
    check(
        "projection-contracts",
        ok,
        format!(
            "moved {} mean |s| {:.4} -> {:.5}",
            stats.moved, stats.mean_abs_sdf_before, stats.mean_abs_sdf_after
        ),
    )?;

    // Analytic opacity gradients of the opacity-regularization loss match
    // central finite differences tightly.
    let grid = sphere_grid(32, 0.8, 0.3)?;
    let mut gaussians: Vec<Gaussian> = [0.78, 0.85, 0.95]
        .iter()
        .map(|&r| plain_gaussian(Vec3::new(r, 0.02, -0.03)))
        .collect();
    let mut grads = bandsplat::geometry::GaussianGrads::zeros(gaussians.len());
    scp_loss(&gaussians, &grid, 0.3, 1.0, Some(&mut grads));
    let mut worst_rel = 0.0f64;
    for i in 0..gaussians.len() {
        let h = 1e-6;
        let base = gaussians[i].opacity_logit;
        gaussians[i].opacity_logit = base + h;
        let up = scp_loss(&gaussians, &grid, 0.3, 1.0, None);
        gaussians[i].opacity_logit = base - h;
        let down = scp_loss(&gaussians, &grid, 0.3, 1.0, None);
        gaussians[i].opacity_logit = base;
        let numeric = (up - down) / (2.0 * h);
        let rel = (grads.opacity_logit[i] - numeric).abs() / numeric.abs().max(1e-12);
        worst_rel = worst_rel.max(rel);
    }
    check("opacity-gradient-matches-fd", worst_rel < 1e-5, format!("max rel err {worst_rel:.2e}"))?;

    // Outlier removal never keeps an observed far-from-surface Gaussian.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = sphere_grid(48, 0.7, 0.25)?;
    let candidates: Vec<Gaussian> = (0..2000)
        .map(|_| {
            use rand::Rng;
            plain_gaussian(Vec3::new(
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
            ))
        })
        .collect();
    let report = remove_outliers(&candidates, &grid, 0.3, false);
    let mut violations = 0;
    for (g, &keep) in candidates.iter().zip(&report.keep) {
        if keep
            && grid.support_observed(&g.center) == Some(true)
            && grid.sample(&g.center).abs() >= 1.0 - 1e-6
        {
            violations += 1;
        }
    }
    check(
        "removal-drops-observed-outliers",
        violations == 0,
        format!("{} removed, {violations} violations", report.removed()),
    )?;

    // Two tiny training runs with the same seed are bit-identical.
    let mut config = TrainConfig::default();
    config.scene.views = 4;
    config.scene.width = 24;
    config.scene.height = 24;
    config.init.count = 40;
    config.init.mode = "surface".into();
    config.train.iterations = 5;
    config.prior.enabled = false;
    config.densify.start_iter = 100;
    let scene = build_scene(&config)?;
    let a = train(&scene, &config, None)?;
    let b = train(&scene, &config, None)?;
    let same = a
        .stats
        .trace
        .iter()
        .zip(&b.stats.trace)
        .all(|(x, y)| x.csv_line() == y.csv_line());
    check("training-deterministic", same && a.stats.trace.len() == 5, "5 iterations".into())?;

    // Random initialization is exercised too (smoke only).
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = init_gaussians(&scene, 25, config.init_mode()?, 0.1, &mut rng);
    check("init-produces-requested-count", init.len() == 25, format!("{}", init.len()))?;

    println!("selftest passed");
    Ok(())
}
