//! Hand-written reverse-mode pass for [`super::render_view`].
//!
//! Upstream gradients arrive on the output maps (rgb / normalized depth /
//! normalized normal / accumulated alpha) and, for losses that reach into the
//! blend directly, on individual record weights ω_u and record depths ρ_u.
//! The backward pass re-walks every pixel's contributor list, reconstructs
//! per-contributor alphas and transmittances from the stored weights, runs
//! the reverse blend scan, and chains through the exact ray–plane–response
//! geometry into every raw Gaussian parameter.

use super::{build_caches, RenderOptions, RenderOutput, ALPHA_FLOOR, ALPHA_MAX};
use crate::error::Result;
use crate::geometry::{quat_rotation_backward, CameraView, Gaussian, GaussianGrads, Mat3, Vec3};
use crate::raster::Raster;

/// Upstream gradients for one rendered view. Map-shaped fields align with
/// the output rasters; `d_weight` / `d_rec_depth` align with
/// [`RenderOutput::records`].
#[derive(Debug, Clone)]
pub struct RenderGrads {
    pub d_rgb: Raster<Vec3>,
    /// On the alpha-normalized depth map.
    pub d_depth: Raster<f64>,
    /// On the unit-normalized blended normal map.
    pub d_normal: Raster<Vec3>,
    /// On the accumulated alpha map Σω.
    pub d_alpha: Raster<f64>,
    pub d_weight: Vec<f64>,
    pub d_rec_depth: Vec<f64>,
}

impl RenderGrads {
    pub fn zeros(out: &RenderOutput) -> RenderGrads {
        let (w, h) = (out.width(), out.height());
        RenderGrads {
            d_rgb: Raster::filled(w, h, Vec3::zeros()),
            d_depth: Raster::zeros(w, h),
            d_normal: Raster::filled(w, h, Vec3::zeros()),
            d_alpha: Raster::zeros(w, h),
            d_weight: vec![0.0; out.records().len()],
            d_rec_depth: vec![0.0; out.records().len()],
        }
    }
}

/// Pull upstream gradients back to raw Gaussian parameters.
///
/// `out` must come from `render_view` with the same `gaussians`, `view`, and
/// `opts`; the geometric chain is recomputed here with identical arithmetic.
pub fn render_backward(
    gaussians: &[Gaussian],
    view: &CameraView,
    opts: &RenderOptions,
    out: &RenderOutput,
    upstream: &RenderGrads,
) -> Result<GaussianGrads> {
    let caches = build_caches(gaussians)?;
    let mut grads = GaussianGrads::zeros(gaussians.len());
    // Rotation-matrix cotangents, pulled back through the quaternion once per
    // Gaussian at the end (the pullback is linear in d_rot).
    let mut d_rot = vec![Mat3::zeros(); gaussians.len()];
    let cam_rot_t = view.rotation.transpose();
    // Scratch reused across pixels: (alpha, transmittance-before, n_cam, flip).
    let mut scratch: Vec<(f64, f64, Vec3, f64)> = Vec::new();
    for iy in 0..out.height() {
        for ix in 0..out.width() {
            let range = out.record_range(ix, iy);
            if range.is_empty() {
                continue;
            }
            let recs = &out.records()[range.clone()];
            let ray = view.pixel_ray(ix, iy);
            // Reconstruct alphas/transmittances and camera-facing normals.
            scratch.clear();
            let mut t_run = 1.0;
            for r in recs {
                let alpha = if t_run > 1e-300 { r.weight / t_run } else { 0.0 };
                let c = &caches[r.gaussian as usize];
                let d0 = c.n0.dot(&ray.dir);
                let flip = if d0 < 0.0 { 1.0 } else { -1.0 };
                scratch.push((alpha, t_run, view.rotation * (flip * c.n0), flip));
                t_run -= r.weight;
            }
            // Pixel-level upstream.
            let g_rgb = upstream.d_rgb.get(ix, iy);
            let g_depth = upstream.d_depth.get(ix, iy);
            let g_alpha_up = upstream.d_alpha.get(ix, iy);
            let g_normal = upstream.d_normal.get(ix, iy);
            // depth = num / max(alpha, floor).
            let alpha_sum = out.alpha.get(ix, iy);
            let denom = alpha_sum.max(ALPHA_FLOOR);
            let num = out.depth.get(ix, iy) * denom;
            let d_num = g_depth / denom;
            let d_alpha_from_depth = if alpha_sum > ALPHA_FLOOR {
                -g_depth * num / (denom * denom)
            } else {
                0.0
            };
            // normal = v / |v| with v = Σ ω n.
            let mut v = Vec3::zeros();
            for (r, s) in recs.iter().zip(&scratch) {
                v += r.weight * s.2;
            }
            let vn = v.norm();
            let d_v = if vn > 1e-12 {
                let nb = v / vn;
                (g_normal - nb * nb.dot(&g_normal)) / vn
            } else {
                Vec3::zeros()
            };
            let d_alpha_pix = g_alpha_up + d_alpha_from_depth;
            // Per-record upstream totals.
            let d_omega: Vec<f64> = recs
                .iter()
                .zip(&scratch)
                .enumerate()
                .map(|(i, (r, s))| {
                    let c = &caches[r.gaussian as usize];
                    g_rgb.dot(&c.color)
                        + d_num * r.depth
                        + d_alpha_pix
                        + d_v.dot(&s.2)
                        + upstream.d_weight[range.start + i]
                })
                .collect();
            // Reverse blend scan; terminal transmittance feeds the background.
            let mut g_t = g_rgb.dot(&opts.background);
            let mut d_alpha_rec = vec![0.0; recs.len()];
            for u in (0..recs.len()).rev() {
                let (alpha, t_before, _, _) = scratch[u];
                d_alpha_rec[u] = d_omega[u] * t_before - g_t * t_before;
                g_t = d_omega[u] * alpha + g_t * (1.0 - alpha);
            }
            // Geometric chain per record.
            for (u, r) in recs.iter().enumerate() {
                let gi = r.gaussian as usize;
                let c = &caches[gi];
                let (alpha, _, _, flip) = scratch[u];
                let d_rho = d_num * r.weight + upstream.d_rec_depth[range.start + u];
                let d_n_cam = r.weight * d_v;
                let d_alpha = d_alpha_rec[u];
                // Recompute the forward geometry (identical arithmetic).
                let n = flip * c.n0;
                let dd = n.dot(&ray.dir);
                let to_center = c.center - ray.origin;
                let t_hit = to_center.dot(&n) / dd;
                let x = ray.origin + t_hit * ray.dir;
                let w_vec = x - c.center;
                let q = c.rot.transpose() * w_vec;
                let response = r.response;
                // α = min(opacity · response, ALPHA_MAX): clamp gates the chain.
                let (d_opacity, d_response) = if c.opacity * response >= ALPHA_MAX {
                    (0.0, 0.0)
                } else {
                    (d_alpha * response, d_alpha * c.opacity)
                };
                grads.opacity_logit[gi] += d_opacity * c.opacity * (1.0 - c.opacity);
                grads.color[gi] += r.weight * upstream.d_rgb.get(ix, iy);
                let d_m = d_response * (-0.5) * response;
                // m = Σ (q_a / s_a)².
                let mut d_q = Vec3::zeros();
                for a in 0..3 {
                    let inv_s2 = 1.0 / (c.scales[a] * c.scales[a]);
                    d_q[a] = d_m * 2.0 * q[a] * inv_s2;
                    grads.log_scale[gi][a] += d_m * (-2.0) * q[a] * q[a] * inv_s2;
                }
                // q = Rᵀ w.
                let d_w = c.rot * d_q;
                d_rot[gi] += w_vec * d_q.transpose();
                // w = origin + t·dir − center; ρ = t · dz.
                let mut d_t = d_w.dot(&ray.dir) + d_rho * ray.dz;
                let mut d_center = -d_w;
                // t = N / D with N = (center − origin)·n, D = dir·n.
                let d_big_n = d_t / dd;
                let d_big_d = -d_t * t_hit / dd;
                d_t = 0.0;
                let _ = d_t;
                d_center += d_big_n * n;
                let mut d_n = d_big_n * to_center + d_big_d * ray.dir;
                // Blended normal is R_cam · n.
                d_n += cam_rot_t * d_n_cam;
                // n = flip · (rotation column `axis`).
                let d_n0 = flip * d_n;
                for i in 0..3 {
                    d_rot[gi][(i, c.axis)] += d_n0[i];
                }
                grads.center[gi] += d_center;
                let _ = alpha;
            }
        }
    }
    for (gi, g) in gaussians.iter().enumerate() {
        grads.rotation[gi] = quat_rotation_backward(&g.rotation, &d_rot[gi])?;
    }
    Ok(grads)
}
