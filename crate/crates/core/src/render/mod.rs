//! Differentiable per-pixel ray-cast splatter.
//!
//! For every pixel, each Gaussian whose screen footprint covers the pixel is
//! intersected exactly: the pixel ray is cut with the Gaussian's supporting
//! plane, the 3D Mahalanobis response `exp(−½ qᵀΣ⁻¹q)` is evaluated at the
//! intersection, and contributors with response inside 3σ (`m ≤ 9`) and alpha
//! at least [`ALPHA_CUTOFF`] are alpha-blended front to back in
//! intersection-depth order, stopping once transmittance falls below
//! [`TRANSMITTANCE_MIN`]:
//!
//! - `α_u = clamp(opacity · response, 0, 0.999)`
//! - `ω_u = α_u · Π_{v<u} (1 − α_v)`
//! - rgb = Σ ω_u c_u + T_final · background, depth = Σ ω_u ρ_u / max(Σω, 1e-8)
//! - normal = normalize(Σ ω_u n_u) with camera-facing plane normals, in the
//!   camera frame.
//!
//! Screen-space binning (EWA-projected 3σ radius, padded) is *culling only*;
//! the blend math never depends on it, which the exhaustive-reference oracle
//! test pins down.

mod backward;
mod losses;
mod ssim;

pub use backward::{render_backward, RenderGrads};
pub use losses::{
    compute_homography, depth_distortion_loss, depth_to_normal, depth_to_normal_backward,
    edge_aware_weights, mae_loss, multiview_geom_loss, ncc_loss, normal_smooth_loss, rgb_loss,
    NeighborWarp, PlaneMaps, RgbLossParts,
};
pub use ssim::{ssim_backward, ssim_forward, SsimForward, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::Result;
use crate::geometry::{CameraView, Gaussian, Mat3, Vec3};
use crate::raster::{DepthMap, Raster, RgbImage};

/// Alpha ceiling per contributor (keeps transmittance strictly positive).
pub const ALPHA_MAX: f64 = 0.999;
/// Footprint cutoff: contributors need Mahalanobis m ≤ 3².
pub const FOOTPRINT_M_MAX: f64 = 9.0;
/// Contributors whose alpha would fall below this are dropped entirely
/// (folded into each Gaussian's Mahalanobis cutoff, so low-opacity
/// Gaussians cost nothing).
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// Blending stops once accumulated transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Depth-normalization floor for nearly empty pixels.
pub const ALPHA_FLOOR: f64 = 1e-8;
/// Minimum |plane normal · ray dir| for a usable intersection.
pub const MIN_PLANE_DOT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub near: f64,
    pub far: f64,
    pub background: Vec3,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            near: 0.05,
            far: 100.0,
            background: Vec3::new(0.02, 0.02, 0.05),
        }
    }
}

/// One blended contributor at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRecord {
    pub gaussian: u32,
    /// Blend weight ω_u = α_u Π(1−α_v).
    pub weight: f64,
    /// Intersection depth ρ_u (camera-z, world units).
    pub depth: f64,
    /// Gaussian density response exp(−½ m) at the intersection.
    pub response: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    /// Blended intersection depth, already normalized by accumulated alpha.
    pub depth: DepthMap,
    /// Normalized blended plane normal, camera frame; zero where no support.
    pub normal: Raster<Vec3>,
    /// Accumulated alpha Σω per pixel.
    pub alpha: Raster<f64>,
    records: Vec<PixelRecord>,
    /// CSR offsets into `records`, length width·height + 1, row-major.
    offsets: Vec<u32>,
}

impl RenderOutput {
    #[inline]
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Contributors of one pixel, front-to-back.
    #[inline]
    pub fn pixel_records(&self, ix: usize, iy: usize) -> &[PixelRecord] {
        let p = self.rgb.idx(ix, iy);
        &self.records[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }

    /// All records, pixel-major; index with [`Self::record_range`].
    pub fn records(&self) -> &[PixelRecord] {
        &self.records
    }

    #[inline]
    pub fn record_range(&self, ix: usize, iy: usize) -> std::ops::Range<usize> {
        let p = self.rgb.idx(ix, iy);
        self.offsets[p] as usize..self.offsets[p + 1] as usize
    }

    /// Depth with pixels below the alpha threshold marked invalid (NaN).
    pub fn masked_depth(&self, alpha_min: f64) -> DepthMap {
        let mut out = self.depth.clone();
        for iy in 0..self.height() {
            for ix in 0..self.width() {
                if self.alpha.get(ix, iy) <= alpha_min {
                    out.set(ix, iy, f64::NAN);
                }
            }
        }
        out
    }
}

/// Per-Gaussian quantities cached for one render call.
pub(crate) struct GaussianCache {
    pub center: Vec3,
    pub rot: Mat3,
    pub scales: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    /// Plane normal in world space, sign as stored (flipped per pixel).
    pub n0: Vec3,
    pub axis: usize,
    /// Effective Mahalanobis cutoff: the 3σ footprint tightened so that
    /// `opacity · exp(−½m)` stays at or above [`ALPHA_CUTOFF`].
    pub m_max: f64,
}

pub(crate) fn build_caches(gaussians: &[Gaussian]) -> Result<Vec<GaussianCache>> {
    gaussians
        .iter()
        .map(|g| {
            let rot = g.rotation_matrix()?;
            let axis = g.plane_axis();
            let opacity = g.opacity();
            let m_max = if opacity > ALPHA_CUTOFF {
                FOOTPRINT_M_MAX.min(-2.0 * (ALPHA_CUTOFF / opacity).ln())
            } else {
                -1.0
            };
            Ok(GaussianCache {
                center: g.center,
                rot,
                scales: g.scales(),
                opacity,
                color: g.color,
                n0: rot.column(axis).into(),
                axis,
                m_max,
            })
        })
        .collect()
}

/// Result of cutting one pixel ray with one Gaussian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub alpha: f64,
    pub response: f64,
    /// Camera-z depth of the intersection.
    pub depth: f64,
    /// Camera-frame plane normal (camera-facing sign).
    pub n_cam: Vec3,
}

/// Forward ray–plane–response evaluation shared by render and backward.
/// Returns `None` when the contributor is culled (grazing plane, out of the
/// depth range, or outside the 3σ footprint).
#[inline]
pub(crate) fn evaluate_contribution(
    cache: &GaussianCache,
    ray_origin: &Vec3,
    ray_dir: &Vec3,
    dz: f64,
    cam_rot: &Mat3,
    opts: &RenderOptions,
) -> Option<Contribution> {
    let d0 = cache.n0.dot(ray_dir);
    if d0.abs() < MIN_PLANE_DOT {
        return None;
    }
    // Camera-facing normal: oppose the ray direction.
    let flip = if d0 < 0.0 { 1.0 } else { -1.0 };
    let n = flip * cache.n0;
    let dd = flip * d0;
    let num = (cache.center - ray_origin).dot(&n);
    let t = num / dd;
    if t <= 0.0 {
        return None;
    }
    let depth = t * dz;
    if depth <= opts.near || depth >= opts.far {
        return None;
    }
    let x = ray_origin + t * ray_dir;
    let q = cache.rot.transpose() * (x - cache.center);
    let m = (q.x / cache.scales.x).powi(2)
        + (q.y / cache.scales.y).powi(2)
        + (q.z / cache.scales.z).powi(2);
    if m > cache.m_max {
        return None;
    }
    let response = (-0.5 * m).exp();
    let alpha = (cache.opacity * response).min(ALPHA_MAX);
    Some(Contribution {
        alpha,
        response,
        depth,
        n_cam: cam_rot * n,
    })
}

/// Conservative pixel bounding box of a Gaussian's 3σ screen footprint;
/// `None` when the center is behind the near plane or the box misses the
/// frame. Culling only — correctness is carried by the m ≤ 9 test.
fn footprint_bbox(
    cache: &GaussianCache,
    view: &CameraView,
    opts: &RenderOptions,
) -> Option<(usize, usize, usize, usize)> {
    let cam = view.rotation * cache.center + view.translation;
    if cam.z <= opts.near.max(1e-6) {
        return None;
    }
    let (fx, fy) = (view.intrinsics.fx, view.intrinsics.fy);
    let j = nalgebra::Matrix2x3::new(
        fx / cam.z,
        0.0,
        -fx * cam.x / (cam.z * cam.z),
        0.0,
        fy / cam.z,
        -fy * cam.y / (cam.z * cam.z),
    );
    let s = &cache.scales;
    let cov_local = Mat3::from_diagonal(&Vec3::new(s.x * s.x, s.y * s.y, s.z * s.z));
    let cov_cam = (view.rotation * cache.rot) * cov_local * (view.rotation * cache.rot).transpose();
    let cov2 = j * cov_cam * j.transpose();
    let (a, b, c) = (cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]);
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lam_max = (half_trace + disc).max(0.0);
    // 3σ radius, padded: the linearized footprint slightly under-covers
    // oblique planar splats.
    let radius = 3.0 * lam_max.sqrt() * 1.3 + 2.0;
    let u = view.intrinsics.cx + fx * cam.x / cam.z;
    let v = view.intrinsics.cy + fy * cam.y / cam.z;
    let x0 = (u - radius).floor().max(0.0) as usize;
    let y0 = (v - radius).floor().max(0.0) as usize;
    if u + radius < 0.0 || v + radius < 0.0 {
        return None;
    }
    if x0 >= view.width || y0 >= view.height {
        return None;
    }
    let x1 = ((u + radius).ceil() as usize).min(view.width - 1);
    let y1 = ((v + radius).ceil() as usize).min(view.height - 1);
    Some((x0, y0, x1, y1))
}

/// CSR candidate lists: for each pixel, the Gaussians whose footprint box
/// covers it, in increasing Gaussian index order.
pub(crate) struct CandidateBins {
    offsets: Vec<u32>,
    candidates: Vec<u32>,
}

impl CandidateBins {
    pub fn build(caches: &[GaussianCache], view: &CameraView, opts: &RenderOptions) -> CandidateBins {
        let n_px = view.width * view.height;
        let boxes: Vec<Option<(usize, usize, usize, usize)>> = caches
            .iter()
            .map(|c| footprint_bbox(c, view, opts))
            .collect();
        let mut counts = vec![0u32; n_px + 1];
        for bb in boxes.iter().flatten() {
            let (x0, y0, x1, y1) = *bb;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    counts[y * view.width + x + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let mut cursors: Vec<u32> = offsets[..n_px].to_vec();
        let mut candidates = vec![0u32; offsets[n_px] as usize];
        for (gi, bb) in boxes.iter().enumerate() {
            let Some((x0, y0, x1, y1)) = *bb else { continue };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * view.width + x;
                    candidates[cursors[p] as usize] = gi as u32;
                    cursors[p] += 1;
                }
            }
        }
        CandidateBins {
            offsets,
            candidates,
        }
    }

    #[inline]
    pub fn at(&self, pixel: usize) -> &[u32] {
        &self.candidates[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }
}

/// Render one view. Pure function of its inputs.
pub fn render_view(
    gaussians: &[Gaussian],
    view: &CameraView,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    let caches = build_caches(gaussians)?;
    let bins = CandidateBins::build(&caches, view, opts);
    let (w, h) = (view.width, view.height);
    let mut rgb = RgbImage::black(w, h);
    let mut depth = DepthMap::zeros(w, h);
    let mut normal = Raster::filled(w, h, Vec3::zeros());
    let mut alpha = Raster::zeros(w, h);
    let mut records = Vec::new();
    let mut offsets = Vec::with_capacity(w * h + 1);
    offsets.push(0u32);
    // Scratch: (depth, gaussian index, contribution), sorted per pixel.
    let mut hits: Vec<(f64, u32, Contribution)> = Vec::new();
    for iy in 0..h {
        for ix in 0..w {
            let ray = view.pixel_ray(ix, iy);
            hits.clear();
            for &gi in bins.at(iy * w + ix) {
                if let Some(c) = evaluate_contribution(
                    &caches[gi as usize],
                    &ray.origin,
                    &ray.dir,
                    ray.dz,
                    &view.rotation,
                    opts,
                ) {
                    hits.push((c.depth, gi, c));
                }
            }
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut transmittance = 1.0;
            let mut acc_rgb = Vec3::zeros();
            let mut acc_num = 0.0;
            let mut acc_alpha = 0.0;
            let mut acc_normal = Vec3::zeros();
            for &(_, gi, c) in &hits {
                let wgt = c.alpha * transmittance;
                acc_rgb += wgt * caches[gi as usize].color;
                acc_num += wgt * c.depth;
                acc_alpha += wgt;
                acc_normal += wgt * c.n_cam;
                transmittance *= 1.0 - c.alpha;
                records.push(PixelRecord {
                    gaussian: gi,
                    weight: wgt,
                    depth: c.depth,
                    response: c.response,
                });
                if transmittance < TRANSMITTANCE_MIN {
                    break;
                }
            }
            offsets.push(records.len() as u32);
            rgb.set(ix, iy, acc_rgb + transmittance * opts.background);
            depth.set(ix, iy, acc_num / acc_alpha.max(ALPHA_FLOOR));
            alpha.set(ix, iy, acc_alpha);
            let nn = acc_normal.norm();
            normal.set(ix, iy, if nn > 1e-12 { acc_normal / nn } else { Vec3::zeros() });
        }
    }
    Ok(RenderOutput {
        rgb,
        depth,
        normal,
        alpha,
        records,
        offsets,
    })
}

/// Depth maps for every view, masked by accumulated alpha (used for fusion).
pub fn render_depth_maps(
    gaussians: &[Gaussian],
    views: &[CameraView],
    opts: &RenderOptions,
    alpha_min: f64,
) -> Result<Vec<DepthMap>> {
    views
        .iter()
        .map(|v| Ok(render_view(gaussians, v, opts)?.masked_depth(alpha_min)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{logit, Intrinsics, Vec4};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_camera(n: usize, f: f64) -> CameraView {
        CameraView {
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: n as f64 / 2.0,
                cy: n as f64 / 2.0,
            },
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width: n,
            height: n,
        }
    }

    fn plane_gaussian(z: f64, opacity_logit: f64) -> Gaussian {
        Gaussian {
            center: Vec3::new(0.0, 0.0, z),
            log_scale: Vec3::new(2.0_f64.ln(), 2.0_f64.ln(), (1e-4_f64).ln()),
            rotation: Vec4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit,
            color: Vec3::new(0.8, 0.4, 0.2),
        }
    }

    #[test]
    fn single_plane_gaussian_depth_and_normal() {
        let cam = straight_camera(16, 40.0);
        let out = render_view(&[plane_gaussian(2.0, 30.0)], &cam, &RenderOptions::default()).unwrap();
        for iy in 0..16 {
            for ix in 0..16 {
                assert!(out.alpha.get(ix, iy) > 0.9, "({ix},{iy})");
                // Intersection with the z=2 plane has camera-z exactly 2.
                assert_relative_eq!(out.depth.get(ix, iy), 2.0, epsilon = 1e-9);
                assert_relative_eq!(
                    out.normal.get(ix, iy),
                    Vec3::new(0.0, 0.0, -1.0),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn opaque_front_plane_dominates_depth() {
        let cam = straight_camera(8, 20.0);
        let out = render_view(
            &[plane_gaussian(2.0, 40.0), plane_gaussian(1.0, 40.0)],
            &cam,
            &RenderOptions::default(),
        )
        .unwrap();
        let d = out.depth.get(4, 4);
        assert!((d - 1.0).abs() < 0.01, "depth {d}");
        // Records are sorted front to back.
        let recs = out.pixel_records(4, 4);
        assert_eq!(recs.len(), 2);
        assert!(recs[0].depth < recs[1].depth);
        assert_eq!(recs[0].gaussian, 1);
    }

    #[test]
    fn alpha_telescopes_to_one_minus_transmittance() {
        let cam = straight_camera(12, 30.0);
        let gaussians: Vec<Gaussian> = (0..6)
            .map(|i| plane_gaussian(1.0 + 0.3 * i as f64, -0.5 + 0.4 * i as f64))
            .collect();
        let out = render_view(&gaussians, &cam, &RenderOptions::default()).unwrap();
        for iy in 0..12 {
            for ix in 0..12 {
                let recs = out.pixel_records(ix, iy);
                // Reconstruct per-contributor alphas: α_u = ω_u / T_u,
                // T_{u+1} = T_u − ω_u.
                let mut t = 1.0;
                for r in recs {
                    let a = r.weight / t;
                    assert!((0.0..=ALPHA_MAX + 1e-12).contains(&a));
                    t -= r.weight;
                }
                let sum: f64 = recs.iter().map(|r| r.weight).sum();
                assert_relative_eq!(sum, 1.0 - t, epsilon = 1e-12);
                assert_relative_eq!(out.alpha.get(ix, iy), sum, epsilon = 1e-12);
                assert!(sum < 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn background_shows_through_transmittance() {
        let cam = straight_camera(8, 20.0);
        let opts = RenderOptions {
            background: Vec3::new(0.1, 0.2, 0.3),
            ..RenderOptions::default()
        };
        // Half-transparent plane: rgb = ω·c + (1−ω)·bg at the center pixel.
        let g = plane_gaussian(2.0, 0.0); // opacity 0.5
        let out = render_view(&[g.clone()], &cam, &opts).unwrap();
        let r = out.pixel_records(4, 4)[0];
        let want = r.weight * g.color + (1.0 - r.weight) * opts.background;
        assert_relative_eq!(out.rgb.get(4, 4), want, epsilon = 1e-12);
    }

    fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
        Gaussian {
            center: Vec3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(1.2..3.0),
            ),
            log_scale: Vec3::new(
                rng.gen_range(-2.0..-0.5),
                rng.gen_range(-2.0..-0.5),
                rng.gen_range(-5.0..-3.5),
            ),
            rotation: Vec4::new(
                rng.gen_range(0.5..1.0),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ),
            opacity_logit: rng.gen_range(-1.5..2.5),
            color: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
        }
    }

    /// Exhaustive reference: loop every Gaussian at every pixel (no binning),
    /// same contribution math. Results must match exactly — this pins the
    /// binning as conservative and order-preserving.
    #[test]
    fn binning_matches_exhaustive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cam = straight_camera(16, 12.0);
        let opts = RenderOptions::default();
        for _ in 0..5 {
            let gaussians: Vec<Gaussian> = (0..7).map(|_| random_gaussian(&mut rng)).collect();
            let fast = render_view(&gaussians, &cam, &opts).unwrap();
            let caches = build_caches(&gaussians).unwrap();
            for iy in 0..16 {
                for ix in 0..16 {
                    let ray = cam.pixel_ray(ix, iy);
                    let mut hits: Vec<(f64, u32, Contribution)> = Vec::new();
                    for (gi, c) in caches.iter().enumerate() {
                        if let Some(con) = evaluate_contribution(
                            c,
                            &ray.origin,
                            &ray.dir,
                            ray.dz,
                            &cam.rotation,
                            &opts,
                        ) {
                            hits.push((con.depth, gi as u32, con));
                        }
                    }
                    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let mut t = 1.0;
                    let mut rgb = Vec3::zeros();
                    let mut num = 0.0;
                    let mut asum = 0.0;
                    let mut blended = 0;
                    for &(_, gi, c) in &hits {
                        let w = c.alpha * t;
                        rgb += w * caches[gi as usize].color;
                        num += w * c.depth;
                        asum += w;
                        t *= 1.0 - c.alpha;
                        blended += 1;
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    rgb += t * opts.background;
                    assert_eq!(fast.rgb.get(ix, iy), rgb, "rgb ({ix},{iy})");
                    assert_eq!(
                        fast.depth.get(ix, iy),
                        num / asum.max(ALPHA_FLOOR),
                        "depth ({ix},{iy})"
                    );
                    let recs = fast.pixel_records(ix, iy);
                    assert_eq!(recs.len(), blended, "record count ({ix},{iy})");
                }
            }
        }
    }

    /// 10 contributors on a single pixel: blend matches a scalar recurrence.
    #[test]
    fn scalar_blending_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cam = straight_camera(1, 0.7); // one pixel, wide ray
        let opts = RenderOptions::default();
        let gaussians: Vec<Gaussian> = (0..10)
            .map(|i| {
                let mut g = plane_gaussian(1.0 + 0.25 * i as f64, rng.gen_range(-1.0..2.0));
                g.center.x = rng.gen_range(-0.05..0.05);
                g.color = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                g
            })
            .collect();
        let out = render_view(&gaussians, &cam, &opts).unwrap();
        let recs = out.pixel_records(0, 0);
        // Blending stops early once the pixel saturates; the dropped tail
        // carries transmittance below the cutoff.
        assert!(!recs.is_empty() && recs.len() <= 10);
        let tail: f64 = recs.iter().fold(1.0, |t, r| t - r.weight);
        assert!(recs.len() == 10 || tail < TRANSMITTANCE_MIN);
        // Scalar recurrence over (alpha, depth, color) recovered from records.
        let mut t = 1.0;
        let mut rgb = Vec3::zeros();
        let mut num = 0.0;
        let mut asum = 0.0;
        for r in recs {
            let a = r.weight / t;
            let g = &gaussians[r.gaussian as usize];
            rgb += t * a * g.color;
            num += t * a * r.depth;
            asum += t * a;
            t *= 1.0 - a;
        }
        rgb += t * opts.background;
        assert_relative_eq!(out.rgb.get(0, 0), rgb, epsilon = 1e-10);
        assert_relative_eq!(out.depth.get(0, 0), num / asum.max(ALPHA_FLOOR), epsilon = 1e-10);
    }

    #[test]
    fn masked_depth_invalidates_thin_pixels() {
        let cam = straight_camera(16, 40.0);
        // Small, faint Gaussian: many pixels have tiny or zero alpha.
        let mut g = plane_gaussian(2.0, logit(0.6));
        g.log_scale = Vec3::new((0.08_f64).ln(), (0.08_f64).ln(), (1e-4_f64).ln());
        let out = render_view(&[g], &cam, &RenderOptions::default()).unwrap();
        let masked = out.masked_depth(0.5);
        let mut valid = 0;
        for iy in 0..16 {
            for ix in 0..16 {
                if out.alpha.get(ix, iy) <= 0.5 {
                    assert!(!masked.get(ix, iy).is_finite());
                } else {
                    assert_eq!(masked.get(ix, iy), out.depth.get(ix, iy));
                    valid += 1;
                }
            }
        }
        assert!(valid > 0, "test scene produced no valid pixels");
    }
}
