//! Training losses over rendered maps, with hand-written adjoints.
//!
//! Conventions shared by every loss here:
//! - The returned scalar is the *unweighted* loss value; the `weight`
//!   argument scales only the gradient contributions. Callers can therefore
//!   log raw terms and keep schedule weights in one place.
//! - Gradients accumulate (`+=`) into caller-provided buffers, so several
//!   losses can share one [`RenderGrads`] per view.

use super::ssim::{ssim_backward, ssim_forward};
use super::{RenderGrads, RenderOutput};
use crate::error::Result;
use crate::geometry::{CameraView, Mat3, Vec3};
use crate::raster::{DepthMap, GrayImage, Raster, RgbImage};

/// Minimum |plane offset| (normal · point) for a usable per-pixel plane.
pub const PLANE_MIN_TAU: f64 = 1e-6;
/// Patch radius for the multi-view photometric term (7×7 patches).
pub const NCC_RADIUS: usize = 3;
const NCC_SIDE: usize = 2 * NCC_RADIUS + 1;
const NCC_AREA: usize = NCC_SIDE * NCC_SIDE;

/// L1 subgradient with the 0 ↦ 0 convention.
#[inline]
fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn add_vec3(r: &mut Raster<Vec3>, x: usize, y: usize, v: Vec3) {
    let c = r.get(x, y);
    r.set(x, y, c + v);
}

#[inline]
fn add_f64(r: &mut Raster<f64>, x: usize, y: usize, v: f64) {
    let c = r.get(x, y);
    r.set(x, y, c + v);
}

/// Mean absolute error over pixels and channels.
pub fn mae_loss(
    pred: &RgbImage,
    target: &RgbImage,
    weight: f64,
    d_pred: &mut Raster<Vec3>,
) -> Result<f64> {
    pred.same_size(target)?;
    pred.same_size(d_pred)?;
    let inv = 1.0 / (pred.len() * 3) as f64;
    let mut total = 0.0;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let d = pred.get(x, y) - target.get(x, y);
            total += d.x.abs() + d.y.abs() + d.z.abs();
            let g = Vec3::new(l1_sign(d.x), l1_sign(d.y), l1_sign(d.z));
            add_vec3(d_pred, x, y, weight * inv * g);
        }
    }
    Ok(total * inv)
}

/// Components of the image reconstruction loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RgbLossParts {
    pub mae: f64,
    /// Structural dissimilarity `1 − mean SSIM`.
    pub dssim: f64,
    /// Multi-view photometric term `1 − mean NCC` (set by the caller when
    /// neighbor views are in play; zero otherwise).
    pub photometric: f64,
}

impl RgbLossParts {
    /// `(1−β)·mae + β·dssim + photometric`.
    pub fn total(&self, beta: f64) -> f64 {
        (1.0 - beta) * self.mae + beta * self.dssim + self.photometric
    }
}

/// Reconstruction loss `(1−β)·MAE + β·(1−SSIM)` against the observed image.
/// The photometric part of [`RgbLossParts`] is left at zero.
pub fn rgb_loss(
    pred: &RgbImage,
    target: &RgbImage,
    beta: f64,
    weight: f64,
    d_pred: &mut Raster<Vec3>,
) -> Result<RgbLossParts> {
    let mae = mae_loss(pred, target, weight * (1.0 - beta), d_pred)?;
    let fwd = ssim_forward(pred, target)?;
    let dssim = 1.0 - fwd.mean;
    let g = ssim_backward(&fwd, pred, target, -weight * beta);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            add_vec3(d_pred, x, y, g.get(x, y));
        }
    }
    Ok(RgbLossParts {
        mae,
        dssim,
        photometric: 0.0,
    })
}

/// Depth concentration penalty: per pixel, the pairwise spread
/// `Σ_{u<u'} ω_u ω_{u'} (ρ_u − ρ_{u'})²` over blend records, averaged over
/// all pixels. Gradients go to the record weights and record depths.
pub fn depth_distortion_loss(out: &RenderOutput, weight: f64, grads: &mut RenderGrads) -> f64 {
    let inv = 1.0 / (out.width() * out.height()) as f64;
    let mut total = 0.0;
    for iy in 0..out.height() {
        for ix in 0..out.width() {
            let range = out.record_range(ix, iy);
            let recs = &out.records()[range.clone()];
            if recs.len() < 2 {
                continue;
            }
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for r in recs {
                s1 += r.weight;
                s2 += r.weight * r.depth;
                s3 += r.weight * r.depth * r.depth;
            }
            for (i, r) in recs.iter().enumerate() {
                // Sums over the *other* records.
                let o1 = s1 - r.weight;
                let o2 = s2 - r.weight * r.depth;
                let o3 = s3 - r.weight * r.depth * r.depth;
                let spread = r.depth * r.depth * o1 - 2.0 * r.depth * o2 + o3;
                total += 0.5 * r.weight * spread;
                grads.d_weight[range.start + i] += weight * inv * spread;
                grads.d_rec_depth[range.start + i] +=
                    weight * inv * 2.0 * r.weight * (r.depth * o1 - o2);
            }
        }
    }
    total * inv
}

/// Camera-frame surface normal implied by a depth map: back-project the four
/// axis neighbors (one-sided at borders), cross the tangents. Pixels whose
/// stencil touches invalid depth get the zero vector.
pub fn depth_to_normal(depth: &DepthMap, view: &CameraView) -> Raster<Vec3> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = Raster::filled(w, h, Vec3::zeros());
    for y in 0..h {
        for x in 0..w {
            if let Some((_, _, _, _, c)) = normal_stencil(depth, view, x, y) {
                let n = c.norm();
                if n > 1e-12 {
                    out.set(x, y, c / n);
                }
            }
        }
    }
    out
}

/// Stencil evaluation shared by [`depth_to_normal`] and its backward pass:
/// returns the tap coordinates, both tangents, and the raw cross product.
#[allow(clippy::type_complexity)]
fn normal_stencil(
    depth: &DepthMap,
    view: &CameraView,
    x: usize,
    y: usize,
) -> Option<((usize, usize), (usize, usize), Vec3, Vec3, Vec3)> {
    let (w, h) = (depth.width(), depth.height());
    if !depth.depth_valid(x, y) {
        return None;
    }
    let point = |px: usize, py: usize| -> Option<Vec3> {
        if depth.depth_valid(px, py) {
            Some(depth.get(px, py) * view.intrinsics.unproject(px as f64 + 0.5, py as f64 + 0.5))
        } else {
            None
        }
    };
    let x0 = x.saturating_sub(1);
    let x1 = (x + 1).min(w - 1);
    let y0 = y.saturating_sub(1);
    let y1 = (y + 1).min(h - 1);
    let (Some(pa), Some(pb), Some(pc), Some(pd)) =
        (point(x1, y), point(x0, y), point(x, y1), point(x, y0))
    else {
        return None;
    };
    let t_u = pa - pb;
    let t_v = pc - pd;
    Some(((x0, x1), (y0, y1), t_u, t_v, t_v.cross(&t_u)))
}

/// Pull gradients on the implied normal map back to the depth map.
pub fn depth_to_normal_backward(
    depth: &DepthMap,
    view: &CameraView,
    d_normal: &Raster<Vec3>,
) -> Raster<f64> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some(((x0, x1), (y0, y1), t_u, t_v, c)) = normal_stencil(depth, view, x, y) else {
                continue;
            };
            let n = c.norm();
            if n <= 1e-12 {
                continue;
            }
            let up = d_normal.get(x, y);
            if up == Vec3::zeros() {
                continue;
            }
            // Through the normalization: (I − n̂n̂ᵀ)/‖c‖.
            let nb = c / n;
            let d_c = (up - nb * nb.dot(&up)) / n;
            // c = t_v × t_u.
            let d_tv = t_u.cross(&d_c);
            let d_tu = d_c.cross(&t_v);
            // Taps: X = z · K⁻¹h̃, so ∂X/∂z is the fixed back-projection dir.
            let dir = |px: usize, py: usize| -> Vec3 {
                view.intrinsics.unproject(px as f64 + 0.5, py as f64 + 0.5)
            };
            add_f64(&mut out, x1, y, d_tu.dot(&dir(x1, y)));
            add_f64(&mut out, x0, y, -d_tu.dot(&dir(x0, y)));
            add_f64(&mut out, x, y1, d_tv.dot(&dir(x, y1)));
            add_f64(&mut out, x, y0, -d_tv.dot(&dir(x, y0)));
        }
    }
    out
}

/// Edge-aware weights from an observed grayscale image:
/// `(1 − min(‖∇I‖, 1))²` with clamp-to-edge central differences. Flat areas
/// weigh 1, strong edges fall toward 0.
pub fn edge_aware_weights(gray: &GrayImage) -> Raster<f64> {
    let (w, h) = (gray.width(), gray.height());
    let mut out = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            let gx = 0.5 * (gray.get(xp, y) - gray.get(xm, y));
            let gy = 0.5 * (gray.get(x, yp) - gray.get(x, ym));
            let g = (gx * gx + gy * gy).sqrt();
            out.set(x, y, (1.0 - g.min(1.0)).powi(2));
        }
    }
    out
}

/// Edge-aware L1 consistency between the rendered normal map and the normal
/// map implied by the rendered depth: `(1/|I|) Σ η ‖n − n'‖₁`. Pixels where
/// either normal is the zero vector contribute nothing; the denominator is
/// the full pixel count.
pub fn normal_smooth_loss(
    normal: &Raster<Vec3>,
    n_prime: &Raster<Vec3>,
    eta: &Raster<f64>,
    weight: f64,
    d_normal: &mut Raster<Vec3>,
    d_n_prime: &mut Raster<Vec3>,
) -> Result<f64> {
    normal.same_size(n_prime)?;
    normal.same_size(eta)?;
    normal.same_size(d_normal)?;
    normal.same_size(d_n_prime)?;
    let inv = 1.0 / normal.len() as f64;
    let mut total = 0.0;
    for y in 0..normal.height() {
        for x in 0..normal.width() {
            let n = normal.get(x, y);
            let np = n_prime.get(x, y);
            if n == Vec3::zeros() || np == Vec3::zeros() {
                continue;
            }
            let e = eta.get(x, y);
            let d = n - np;
            total += e * (d.x.abs() + d.y.abs() + d.z.abs());
            let g = weight * inv * e * Vec3::new(l1_sign(d.x), l1_sign(d.y), l1_sign(d.z));
            add_vec3(d_normal, x, y, g);
            add_vec3(d_n_prime, x, y, -g);
        }
    }
    Ok(total * inv)
}

/// Rigid transform between two camera frames: `x_to = R · x_from + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Relative pose mapping `from`-camera coordinates into `to`-camera
/// coordinates.
pub fn relative_pose(from: &CameraView, to: &CameraView) -> RelativePose {
    let rotation = to.rotation * from.rotation.transpose();
    let translation = to.translation - rotation * from.translation;
    RelativePose {
        rotation,
        translation,
    }
}

/// Homography induced by the plane `n · X = τ` (both in the source camera
/// frame) between pixel coordinates of two views:
/// `H = K_to (R + T nᵀ/τ) K_from⁻¹`.
pub fn compute_homography(
    pose: &RelativePose,
    k_from_inv: &Mat3,
    k_to: &Mat3,
    normal: &Vec3,
    tau: f64,
) -> Mat3 {
    k_to * (pose.rotation + pose.translation * normal.transpose() / tau) * k_from_inv
}

/// Precomputed two-way warp data between a reference view and one neighbor.
#[derive(Debug, Clone)]
pub struct NeighborWarp {
    pub to_neighbor: RelativePose,
    pub to_reference: RelativePose,
    pub k_ref: Mat3,
    pub k_ref_inv: Mat3,
    pub k_nbr: Mat3,
    pub k_nbr_inv: Mat3,
}

impl NeighborWarp {
    pub fn new(reference: &CameraView, neighbor: &CameraView) -> NeighborWarp {
        NeighborWarp {
            to_neighbor: relative_pose(reference, neighbor),
            to_reference: relative_pose(neighbor, reference),
            k_ref: reference.intrinsics.matrix(),
            k_ref_inv: reference.intrinsics.inverse_matrix(),
            k_nbr: neighbor.intrinsics.matrix(),
            k_nbr_inv: neighbor.intrinsics.inverse_matrix(),
        }
    }
}

/// Per-pixel plane parameters read off rendered maps: camera-frame normal
/// `n` and offset `τ = n · X` with `X = depth · K⁻¹h̃` at the pixel center.
#[derive(Debug, Clone)]
pub struct PlaneMaps {
    pub normal: Raster<Vec3>,
    pub depth: DepthMap,
    pub tau: Raster<f64>,
    pub valid: Raster<bool>,
}

impl PlaneMaps {
    /// Build from explicit maps. A pixel is valid when its accumulated alpha
    /// exceeds `alpha_min`, depth is finite and positive, the normal is
    /// nonzero, and |τ| clears [`PLANE_MIN_TAU`].
    pub fn from_parts(
        normal: Raster<Vec3>,
        depth: DepthMap,
        alpha: &Raster<f64>,
        view: &CameraView,
        alpha_min: f64,
    ) -> Result<PlaneMaps> {
        normal.same_size(&depth)?;
        normal.same_size(alpha)?;
        let (w, h) = (normal.width(), normal.height());
        let mut tau = Raster::zeros(w, h);
        let mut valid = Raster::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if alpha.get(x, y) <= alpha_min || !depth.depth_valid(x, y) {
                    continue;
                }
                let n = normal.get(x, y);
                if n == Vec3::zeros() {
                    continue;
                }
                let dir = view.intrinsics.unproject(x as f64 + 0.5, y as f64 + 0.5);
                let t = depth.get(x, y) * n.dot(&dir);
                tau.set(x, y, t);
                valid.set(x, y, t.abs() > PLANE_MIN_TAU);
            }
        }
        Ok(PlaneMaps {
            normal,
            depth,
            tau,
            valid,
        })
    }

    /// Plane maps of a rendered view.
    pub fn new(out: &RenderOutput, view: &CameraView, alpha_min: f64) -> Result<PlaneMaps> {
        PlaneMaps::from_parts(
            out.normal.clone(),
            out.depth.clone(),
            &out.alpha,
            view,
            alpha_min,
        )
    }
}

/// d/dh of `s · π(h)` for the projective division `π(h) = (h.x/h.z, h.y/h.z)`.
#[inline]
fn projective_backward(h: &Vec3, px: f64, py: f64, sx: f64, sy: f64) -> Vec3 {
    Vec3::new(sx / h.z, sy / h.z, -(sx * px + sy * py) / h.z)
}

/// Chain a gradient on `H = K_to (R + T nᵀ/τ) K_from⁻¹` back to the plane
/// parameters and, through `τ = n·X`, `X = depth·dir`, to the defining
/// pixel's normal and depth. Returns `(d_normal, d_depth)`.
fn plane_homography_backward(
    d_h: &Mat3,
    k_to: &Mat3,
    k_from_inv: &Mat3,
    t: &Vec3,
    n: &Vec3,
    tau: f64,
    x_cam: &Vec3,
    dir: &Vec3,
) -> (Vec3, f64) {
    let d_m = k_to.transpose() * d_h * k_from_inv.transpose();
    let d_tau = -t.dot(&(d_m * n)) / (tau * tau);
    let d_n = d_m.transpose() * t / tau + d_tau * x_cam;
    (d_n, d_tau * n.dot(dir))
}

/// One forward-warp/backward-warp evaluation for the geometric consistency
/// loss at reference pixel (ix, iy).
struct NmEval {
    ix: usize,
    iy: usize,
    mx: usize,
    my: usize,
    h_p: Vec3,
    h1: Vec3,
    h2: Vec3,
    p2x: f64,
    p2y: f64,
    sx: f64,
    sy: f64,
    h_mr: Mat3,
    residual: f64,
}

fn nm_eval(
    warp: &NeighborWarp,
    ref_planes: &PlaneMaps,
    nbr_planes: &PlaneMaps,
    ix: usize,
    iy: usize,
) -> Option<NmEval> {
    if !ref_planes.valid.get(ix, iy) {
        return None;
    }
    let n_r = ref_planes.normal.get(ix, iy);
    let tau_r = ref_planes.tau.get(ix, iy);
    let h_rm = compute_homography(&warp.to_neighbor, &warp.k_ref_inv, &warp.k_nbr, &n_r, tau_r);
    let h_p = Vec3::new(ix as f64 + 0.5, iy as f64 + 0.5, 1.0);
    let h1 = h_rm * h_p;
    if h1.z <= 1e-9 {
        return None;
    }
    let p1x = h1.x / h1.z;
    let p1y = h1.y / h1.z;
    if !(p1x >= 0.0 && p1y >= 0.0) {
        return None;
    }
    let (mx, my) = (p1x.floor() as usize, p1y.floor() as usize);
    if mx >= nbr_planes.valid.width() || my >= nbr_planes.valid.height() {
        return None;
    }
    if !nbr_planes.valid.get(mx, my) {
        return None;
    }
    // Plane of the nearest neighbor pixel; the cell choice itself is
    // piecewise constant and carries no gradient.
    let n_m = nbr_planes.normal.get(mx, my);
    let tau_m = nbr_planes.tau.get(mx, my);
    let h_mr = compute_homography(&warp.to_reference, &warp.k_nbr_inv, &warp.k_ref, &n_m, tau_m);
    let h2 = h_mr * h1;
    if h2.z <= 1e-9 {
        return None;
    }
    let p2x = h2.x / h2.z;
    let p2y = h2.y / h2.z;
    let rx = p2x - h_p.x;
    let ry = p2y - h_p.y;
    Some(NmEval {
        ix,
        iy,
        mx,
        my,
        h_p,
        h1,
        h2,
        p2x,
        p2y,
        sx: l1_sign(rx),
        sy: l1_sign(ry),
        h_mr,
        residual: rx.abs() + ry.abs(),
    })
}

/// Geometric multi-view consistency: warp each valid reference pixel into
/// the neighbor view with its own plane homography, warp it back with the
/// plane of the nearest neighbor pixel, and charge the L1 reprojection
/// residual, averaged over contributing pixels. Gradients flow into the
/// normal and depth maps of both views.
#[allow(clippy::too_many_arguments)]
pub fn multiview_geom_loss(
    warp: &NeighborWarp,
    ref_view: &CameraView,
    ref_planes: &PlaneMaps,
    nbr_view: &CameraView,
    nbr_planes: &PlaneMaps,
    weight: f64,
    d_ref: &mut RenderGrads,
    d_nbr: &mut RenderGrads,
) -> f64 {
    let (w, h) = (ref_planes.valid.width(), ref_planes.valid.height());
    let mut evals = Vec::new();
    let mut total = 0.0;
    for iy in 0..h {
        for ix in 0..w {
            if let Some(e) = nm_eval(warp, ref_planes, nbr_planes, ix, iy) {
                total += e.residual;
                evals.push(e);
            }
        }
    }
    if evals.is_empty() {
        return 0.0;
    }
    let count = evals.len() as f64;
    let scale = weight / count;
    for e in &evals {
        let d_h2 = projective_backward(&e.h2, e.p2x, e.p2y, scale * e.sx, scale * e.sy);
        let d_hmr = d_h2 * e.h1.transpose();
        let d_h1 = e.h_mr.transpose() * d_h2;
        let d_hrm = d_h1 * e.h_p.transpose();
        // Neighbor-side plane (backward warp).
        let n_m = nbr_planes.normal.get(e.mx, e.my);
        let tau_m = nbr_planes.tau.get(e.mx, e.my);
        let dir_m = nbr_view
            .intrinsics
            .unproject(e.mx as f64 + 0.5, e.my as f64 + 0.5);
        let x_m = nbr_planes.depth.get(e.mx, e.my) * dir_m;
        let (dn_m, dd_m) = plane_homography_backward(
            &d_hmr,
            &warp.k_ref,
            &warp.k_nbr_inv,
            &warp.to_reference.translation,
            &n_m,
            tau_m,
            &x_m,
            &dir_m,
        );
        add_vec3(&mut d_nbr.d_normal, e.mx, e.my, dn_m);
        add_f64(&mut d_nbr.d_depth, e.mx, e.my, dd_m);
        // Reference-side plane (forward warp).
        let n_r = ref_planes.normal.get(e.ix, e.iy);
        let tau_r = ref_planes.tau.get(e.ix, e.iy);
        let dir_r = ref_view
            .intrinsics
            .unproject(e.ix as f64 + 0.5, e.iy as f64 + 0.5);
        let x_r = ref_planes.depth.get(e.ix, e.iy) * dir_r;
        let (dn_r, dd_r) = plane_homography_backward(
            &d_hrm,
            &warp.k_nbr,
            &warp.k_ref_inv,
            &warp.to_neighbor.translation,
            &n_r,
            tau_r,
            &x_r,
            &dir_r,
        );
        add_vec3(&mut d_ref.d_normal, e.ix, e.iy, dn_r);
        add_f64(&mut d_ref.d_depth, e.ix, e.iy, dd_r);
    }
    total / count
}

/// One warped patch comparison for the photometric term.
struct NccEval {
    a_hat: [f64; NCC_AREA],
    b_hat: [f64; NCC_AREA],
    hq: [Vec3; NCC_AREA],
    pqx: [f64; NCC_AREA],
    pqy: [f64; NCC_AREA],
    sa: f64,
    sb: f64,
    ncc: f64,
}

fn ncc_eval(
    cx: usize,
    cy: usize,
    h_rm: &Mat3,
    ref_gray: &GrayImage,
    nbr_gray: &GrayImage,
) -> Option<NccEval> {
    let mut a = [0.0; NCC_AREA];
    let mut b = [0.0; NCC_AREA];
    let mut hq = [Vec3::zeros(); NCC_AREA];
    let mut pqx = [0.0; NCC_AREA];
    let mut pqy = [0.0; NCC_AREA];
    let r = NCC_RADIUS as i64;
    let mut j = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let qx = cx as i64 + dx;
            let qy = cy as i64 + dy;
            let hv = h_rm * Vec3::new(qx as f64 + 0.5, qy as f64 + 0.5, 1.0);
            if hv.z <= 1e-9 {
                return None;
            }
            let px = hv.x / hv.z;
            let py = hv.y / hv.z;
            let bv = nbr_gray.bilinear(px, py)?;
            a[j] = ref_gray.get(qx as usize, qy as usize);
            b[j] = bv;
            hq[j] = hv;
            pqx[j] = px;
            pqy[j] = py;
            j += 1;
        }
    }
    let inv = 1.0 / NCC_AREA as f64;
    let mu_a: f64 = a.iter().sum::<f64>() * inv;
    let mu_b: f64 = b.iter().sum::<f64>() * inv;
    let mut a_hat = [0.0; NCC_AREA];
    let mut b_hat = [0.0; NCC_AREA];
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for j in 0..NCC_AREA {
        a_hat[j] = a[j] - mu_a;
        b_hat[j] = b[j] - mu_b;
        va += a_hat[j] * a_hat[j];
        vb += b_hat[j] * b_hat[j];
        cov += a_hat[j] * b_hat[j];
    }
    let sa = va.sqrt();
    let sb = vb.sqrt();
    // Flat patches carry no appearance signal.
    if sa < 1e-12 || sb < 1e-12 {
        return None;
    }
    Some(NccEval {
        a_hat,
        b_hat,
        hq,
        pqx,
        pqy,
        sa,
        sb,
        ncc: cov / (sa * sb),
    })
}

/// Photometric multi-view consistency: `1 − NCC` between a grayscale patch
/// around each sampled reference pixel and the patch warped into the
/// neighbor image by the pixel's plane homography, averaged over contributing
/// patches. Both patches come from *observed* images; gradients flow only
/// through the warp into the reference normal and depth maps.
#[allow(clippy::too_many_arguments)]
pub fn ncc_loss(
    warp: &NeighborWarp,
    ref_view: &CameraView,
    ref_planes: &PlaneMaps,
    ref_gray: &GrayImage,
    nbr_gray: &GrayImage,
    stride: usize,
    weight: f64,
    d_ref: &mut RenderGrads,
) -> f64 {
    let (w, h) = (ref_gray.width(), ref_gray.height());
    if w < NCC_SIDE || h < NCC_SIDE {
        return 0.0;
    }
    let stride = stride.max(1);
    let homography_at = |cx: usize, cy: usize| -> Mat3 {
        compute_homography(
            &warp.to_neighbor,
            &warp.k_ref_inv,
            &warp.k_nbr,
            &ref_planes.normal.get(cx, cy),
            ref_planes.tau.get(cx, cy),
        )
    };
    let mut centers = Vec::new();
    let mut total = 0.0;
    let mut cy = NCC_RADIUS;
    while cy + NCC_RADIUS < h {
        let mut cx = NCC_RADIUS;
        while cx + NCC_RADIUS < w {
            if ref_planes.valid.get(cx, cy) {
                if let Some(e) = ncc_eval(cx, cy, &homography_at(cx, cy), ref_gray, nbr_gray) {
                    total += 1.0 - e.ncc;
                    centers.push((cx, cy));
                }
            }
            cx += stride;
        }
        cy += stride;
    }
    if centers.is_empty() {
        return 0.0;
    }
    let count = centers.len() as f64;
    let scale = weight / count;
    for &(cx, cy) in &centers {
        let h_rm = homography_at(cx, cy);
        let e = ncc_eval(cx, cy, &h_rm, ref_gray, nbr_gray)
            .expect("patch contributed in the forward pass");
        let mut d_h = Mat3::zeros();
        let r = NCC_RADIUS as i64;
        let mut j = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                // d(1−NCC)/db_j through mean, centering, and scale.
                let d_b = -scale
                    * (e.a_hat[j] / (e.sa * e.sb) - e.ncc * e.b_hat[j] / (e.sb * e.sb));
                let (gu, gv) = nbr_gray
                    .bilinear_grad(e.pqx[j], e.pqy[j])
                    .expect("sample position validated in the forward pass");
                let d_hq =
                    projective_backward(&e.hq[j], e.pqx[j], e.pqy[j], d_b * gu, d_b * gv);
                let h_in = Vec3::new(
                    (cx as i64 + dx) as f64 + 0.5,
                    (cy as i64 + dy) as f64 + 0.5,
                    1.0,
                );
                d_h += d_hq * h_in.transpose();
                j += 1;
            }
        }
        let n_r = ref_planes.normal.get(cx, cy);
        let tau_r = ref_planes.tau.get(cx, cy);
        let dir_r = ref_view
            .intrinsics
            .unproject(cx as f64 + 0.5, cy as f64 + 0.5);
        let x_r = ref_planes.depth.get(cx, cy) * dir_r;
        let (dn, dd) = plane_homography_backward(
            &d_h,
            &warp.k_nbr,
            &warp.k_ref_inv,
            &warp.to_neighbor.translation,
            &n_r,
            tau_r,
            &x_r,
            &dir_r,
        );
        add_vec3(&mut d_ref.d_normal, cx, cy, dn);
        add_f64(&mut d_ref.d_depth, cx, cy, dd);
    }
    total / count
}
