//! Training loop: per-iteration rendering and losses, Adam updates,
//! density control, and the scheduled refresh of the fused distance-grid
//! prior with its projection/removal/opacity constraints.

pub mod adam;
pub mod densify;

pub use adam::{AdamState, LearningRates, BETA1, BETA2, EPS};
pub use densify::{densify_and_prune, DensifyOutcome, GradAccum};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::constraints::{compact, project_to_surface, remove_outliers, scp_loss};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, Gaussian, GaussianGrads, Vec3};
use crate::raster::Raster;
use crate::render::{
    depth_distortion_loss, depth_to_normal, depth_to_normal_backward, edge_aware_weights,
    multiview_geom_loss, ncc_loss, normal_smooth_loss, render_backward, render_depth_maps,
    render_view, rgb_loss, NeighborWarp, PlaneMaps, RenderGrads, RenderOptions,
};
use crate::scene::Scene;
use crate::tsdf::{maybe_update_prior, TsdfGrid};

/// Header of the per-iteration loss trace.
pub const TRACE_HEADER: &str = "iter,l_rgb,l_depth,l_ns,l_nm,l_scp,total,num_gaussians";

/// One loss-trace row. Component values are unweighted; `total` applies the
/// configured loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub l_rgb: f64,
    pub l_depth: f64,
    pub l_ns: f64,
    pub l_nm: f64,
    pub l_scp: f64,
    pub total: f64,
    pub num_gaussians: usize,
}

impl TraceRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            self.l_rgb,
            self.l_depth,
            self.l_ns,
            self.l_nm,
            self.l_scp,
            self.total,
            self.num_gaussians
        )
    }

    pub fn parse_csv(line: &str) -> Result<TraceRow> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::invalid("trace row", format!("{} fields", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid("trace row", format!("bad number {s:?}")))
        };
        Ok(TraceRow {
            iter: fields[0]
                .parse()
                .map_err(|_| Error::invalid("trace row", format!("bad iter {:?}", fields[0])))?,
            l_rgb: num(fields[1])?,
            l_depth: num(fields[2])?,
            l_ns: num(fields[3])?,
            l_nm: num(fields[4])?,
            l_scp: num(fields[5])?,
            total: num(fields[6])?,
            num_gaussians: fields[7]
                .parse()
                .map_err(|_| Error::invalid("trace row", format!("bad count {:?}", fields[7])))?,
        })
    }
}

/// Weighted sum of the loss components.
pub fn total_loss(
    l_rgb: f64,
    l_depth: f64,
    l_ns: f64,
    l_nm: f64,
    l_scp: f64,
    config: &TrainConfig,
) -> f64 {
    let t = &config.train;
    l_rgb
        + t.lambda_depth * l_depth
        + t.lambda_normal_smooth * l_ns
        + t.lambda_multiview * l_nm
        + t.lambda_scp * l_scp
}

/// Counters and logs accumulated over a training run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub trace: Vec<TraceRow>,
    /// `(iteration, bandwidth factor)` of every prior refresh.
    pub prior_updates: Vec<(u64, f64)>,
    /// One formatted line per outlier-removal pass.
    pub removal_lines: Vec<String>,
    pub prior_fusions: u64,
    pub projection_calls: u64,
    pub removal_calls: u64,
    pub scp_evaluations: u64,
    pub densify_events: u64,
    pub total_cloned: usize,
    pub total_split: usize,
    pub total_pruned: usize,
    pub total_removed: usize,
    pub adam_skipped: u64,
}

/// Final model and bookkeeping returned by [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub gaussians: Vec<Gaussian>,
    pub state: AdamState,
    /// Last refreshed prior grid, if any refresh fired.
    pub prior: Option<TsdfGrid>,
    pub stats: RunStats,
}

/// Closest other cameras for every view, nearest first.
fn neighbor_lists(views: &[CameraView], k: usize) -> Vec<Vec<usize>> {
    (0..views.len())
        .map(|i| {
            let here = views[i].center();
            let mut others: Vec<usize> = (0..views.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                let da = (views[a].center() - here).norm();
                let db = (views[b].center() - here).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            others.truncate(k.max(1));
            others
        })
        .collect()
}

/// Gradient-only penalty keeping the smallest scale axis an order of
/// magnitude under the median one, so each Gaussian stays plate-like and its
/// shortest axis is a meaningful surface normal.
fn apply_flatten_penalty(gaussians: &[Gaussian], weight: f64, grads: &mut GaussianGrads) {
    if weight == 0.0 {
        return;
    }
    for (i, g) in gaussians.iter().enumerate() {
        let s = g.scales();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        let min_axis = order[0];
        let excess = s[min_axis] - 0.1 * s[order[1]];
        if excess > 0.0 {
            grads.log_scale[i][min_axis] += weight * 2.0 * excess * s[min_axis];
        }
    }
}

fn ensure_finite(value: f64, what: &'static str, iter: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            iter,
        })
    }
}

/// Full optimization run over a scene.
///
/// Per iteration: one reference view (round-robin) and one of its nearest
/// neighbors are rendered; color, depth-concentration, normal-smoothness,
/// and multi-view consistency losses drive a hand-derived backward pass into
/// parameter gradients, followed by an Adam step. The prior grid refreshes
/// on its schedule from the model's own rendered depths; after each
/// densification event, in-band Gaussians are pulled onto the estimated
/// surface and out-of-band ones removed. `checkpoint` (if given) is invoked
/// once per iteration with the current state.
pub fn train(
    scene: &Scene,
    config: &TrainConfig,
    mut checkpoint: Option<&mut dyn FnMut(u64, &[Gaussian], &AdamState) -> Result<()>>,
) -> Result<TrainResult> {
    config.validate()?;
    let t = &config.train;
    let n_views = scene.views.len();
    if n_views < 2 {
        return Err(Error::TooFewCameras {
            need: 2,
            got: n_views,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut gaussians = crate::scene::init_gaussians(
        scene,
        config.init.count,
        config.init_mode()?,
        config.init.pad_fraction,
        &mut rng,
    );
    let mut state = AdamState::new(gaussians.len());
    let mut accum = GradAccum::new(gaussians.len());
    let rates = LearningRates::from_config(&config.optimizer, t.iterations);

    let opts = RenderOptions {
        background: scene.params.background,
        ..RenderOptions::default()
    };
    let neighbors = neighbor_lists(&scene.views, t.neighbor_count);
    let gt_gray: Vec<_> = scene.gt_rgb.iter().map(|img| img.to_gray()).collect();
    let eta: Vec<_> = gt_gray.iter().map(edge_aware_weights).collect();

    let mut prior: Option<TsdfGrid> = None;
    let (grid_spec, mut schedule) = if config.prior.enabled {
        let spec = scene.grid_spec(config.prior.pad_fraction, config.prior.resolution)?;
        let schedule = config.prior.schedule(spec.voxel_size)?;
        (Some(spec), Some(schedule))
    } else {
        (None, None)
    };

    let mut stats = RunStats::default();
    let d = &config.densify;

    for iter in 1..=t.iterations {
        if let (Some(spec), Some(schedule)) = (&grid_spec, schedule.as_mut()) {
            let fresh = maybe_update_prior(schedule, iter, spec, &scene.views, || {
                render_depth_maps(&gaussians, &scene.views, &opts, config.prior.fusion_alpha_min)
            })?;
            if let Some(grid) = fresh {
                let sigma = schedule.sigma_sequence[schedule.updates_done - 1];
                stats.prior_updates.push((iter, sigma));
                stats.prior_fusions += 1;
                prior = Some(grid);
            }
        }

        let vr = ((iter - 1) % n_views as u64) as usize;
        let pool = &neighbors[vr];
        let vn = pool[((iter - 1) / n_views as u64) as usize % pool.len()];
        let ref_view = &scene.views[vr];
        let nbr_view = &scene.views[vn];

        let out_ref = render_view(&gaussians, ref_view, &opts)?;
        let out_nbr = render_view(&gaussians, nbr_view, &opts)?;
        let mut g_ref = RenderGrads::zeros(&out_ref);
        let mut g_nbr = RenderGrads::zeros(&out_nbr);

        let mut parts = rgb_loss(&out_ref.rgb, &scene.gt_rgb[vr], t.beta, 1.0, &mut g_ref.d_rgb)?;
        let ref_planes = PlaneMaps::new(&out_ref, ref_view, t.alpha_min)?;
        let nbr_planes = PlaneMaps::new(&out_nbr, nbr_view, t.alpha_min)?;
        let warp = NeighborWarp::new(ref_view, nbr_view);
        parts.photometric = ncc_loss(
            &warp,
            ref_view,
            &ref_planes,
            &gt_gray[vr],
            &gt_gray[vn],
            t.ncc_stride,
            1.0,
            &mut g_ref,
        );
        let l_rgb = parts.total(t.beta);

        let l_depth = depth_distortion_loss(&out_ref, t.lambda_depth, &mut g_ref);

        let n_prime = depth_to_normal(&out_ref.depth, ref_view);
        let mut d_n_prime = Raster::filled(out_ref.width(), out_ref.height(), Vec3::zeros());
        let l_ns = normal_smooth_loss(
            &out_ref.normal,
            &n_prime,
            &eta[vr],
            t.lambda_normal_smooth,
            &mut g_ref.d_normal,
            &mut d_n_prime,
        )?;
        let d_depth_ns = depth_to_normal_backward(&out_ref.depth, ref_view, &d_n_prime);
        for y in 0..out_ref.height() {
            for x in 0..out_ref.width() {
                let v = g_ref.d_depth.get(x, y) + d_depth_ns.get(x, y);
                g_ref.d_depth.set(x, y, v);
            }
        }

        let l_nm = multiview_geom_loss(
            &warp,
            ref_view,
            &ref_planes,
            nbr_view,
            &nbr_planes,
            t.lambda_multiview,
            &mut g_ref,
            &mut g_nbr,
        );

        let mut grads = render_backward(&gaussians, ref_view, &opts, &out_ref, &g_ref)?;
        let nbr_grads = render_backward(&gaussians, nbr_view, &opts, &out_nbr, &g_nbr)?;
        grads.add_scaled(&nbr_grads, 1.0)?;

        let scp_active = iter >= t.scp_start_iter && config.prior.scp && prior.is_some();
        let l_scp = if scp_active {
            let grid = prior.as_ref().expect("prior checked above");
            stats.scp_evaluations += 1;
            scp_loss(
                &gaussians,
                grid,
                config.prior.delta,
                t.lambda_scp,
                Some(&mut grads),
            )
        } else {
            0.0
        };

        apply_flatten_penalty(&gaussians, t.flatten_weight, &mut grads);

        ensure_finite(l_rgb, "l_rgb", iter)?;
        ensure_finite(l_depth, "l_depth", iter)?;
        ensure_finite(l_ns, "l_ns", iter)?;
        ensure_finite(l_nm, "l_nm", iter)?;
        ensure_finite(l_scp, "l_scp", iter)?;
        let total = total_loss(l_rgb, l_depth, l_ns, l_nm, l_scp, config);
        ensure_finite(total, "total loss", iter)?;

        accum.record(&grads)?;
        state.step(&mut gaussians, &grads, &rates, iter)?;

        let densify_due = d.interval > 0
            && iter >= d.start_iter
            && iter <= d.stop_iter
            && (iter - d.start_iter) % d.interval == 0;
        if densify_due {
            let outcome = densify_and_prune(
                &mut gaussians,
                &mut accum,
                &mut state,
                d,
                scene.scale(),
                &mut rng,
            )?;
            stats.densify_events += 1;
            stats.total_cloned += outcome.cloned;
            stats.total_split += outcome.split;
            stats.total_pruned += outcome.pruned;
            if gaussians.is_empty() {
                return Err(Error::EmptyModel { iter });
            }
            if let Some(grid) = &prior {
                if config.prior.project {
                    project_to_surface(&mut gaussians, grid, config.prior.literal_projection)?;
                    stats.projection_calls += 1;
                }
                if config.prior.remove {
                    let report = remove_outliers(
                        &gaussians,
                        grid,
                        config.prior.delta,
                        config.prior.remove_unobserved,
                    );
                    stats.removal_lines.push(report.log_line(iter));
                    stats.removal_calls += 1;
                    stats.total_removed += report.removed();
                    if report.removed() > 0 {
                        compact(&mut gaussians, &report.keep);
                        state.keep(&report.keep);
                        accum.keep(&report.keep);
                        if gaussians.is_empty() {
                            return Err(Error::EmptyModel { iter });
                        }
                    }
                }
            }
        }

        stats.trace.push(TraceRow {
            iter,
            l_rgb,
            l_depth,
            l_ns,
            l_nm,
            l_scp,
            total,
            num_gaussians: gaussians.len(),
        });

        if let Some(sink) = checkpoint.as_mut() {
            sink(iter, &gaussians, &state)?;
        }
    }

    stats.adam_skipped = state.skipped_nonfinite;
    Ok(TrainResult {
        gaussians,
        state,
        prior,
        stats,
    })
}
