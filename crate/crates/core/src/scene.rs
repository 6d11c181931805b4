//! Analytic test scenes: SDF shapes, camera rigs, ray-traced ground truth,
//! Gaussian initialization, and reference surface point clouds.

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Gaussian, Intrinsics, Ray, Vec3, Vec4};
use crate::raster::{DepthMap, RgbImage};
use crate::tsdf::GridSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sphere-tracing step budget per ray.
pub const TRACE_STEPS: usize = 64;
/// Hit tolerance as a fraction of the scene scale (bounding-box diagonal).
pub const TRACE_TOL_FRAC: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    Torus { major: f64, minor: f64 },
}

impl Shape {
    /// Exact signed distance (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Torus { major, minor } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }
        }
    }

    /// Tight axis-aligned bounds of the surface.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        match *self {
            Shape::Sphere { radius } => (Vec3::repeat(-radius), Vec3::repeat(radius)),
            Shape::Box { half_extents } => (-half_extents, half_extents),
            Shape::Torus { major, minor } => {
                let r = major + minor;
                (Vec3::new(-r, -r, -minor), Vec3::new(r, r, minor))
            }
        }
    }

    /// Outward unit normal from central differences of the SDF.
    pub fn normal(&self, p: &Vec3, h: f64) -> Vec3 {
        let mut n = Vec3::zeros();
        for a in 0..3 {
            let mut pp = *p;
            let mut pm = *p;
            pp[a] += h;
            pm[a] -= h;
            n[a] = self.sdf(&pp) - self.sdf(&pm);
        }
        n.try_normalize(1e-300).unwrap_or_else(|| Vec3::new(0.0, 0.0, 1.0))
    }

    /// Uniform-by-area surface sample.
    pub fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            Shape::Sphere { radius } => radius * random_unit(rng),
            Shape::Box { half_extents } => {
                let h = half_extents;
                let areas = [h.y * h.z, h.x * h.z, h.x * h.y]; // ± faces share area
                let total: f64 = areas.iter().sum::<f64>() * 2.0;
                let mut pick = rng.gen_range(0.0..total);
                for axis in 0..3 {
                    for side in [-1.0, 1.0] {
                        if pick < areas[axis] {
                            let mut p = Vec3::new(
                                rng.gen_range(-h.x..=h.x),
                                rng.gen_range(-h.y..=h.y),
                                rng.gen_range(-h.z..=h.z),
                            );
                            p[axis] = side * h[axis];
                            return p;
                        }
                        pick -= areas[axis];
                    }
                }
                // Float round-off fallback: last face.
                Vec3::new(rng.gen_range(-h.x..=h.x), rng.gen_range(-h.y..=h.y), h.z)
            }
            Shape::Torus { major, minor } => {
                // Area element ∝ (major + minor·cos v): rejection-sample v.
                let u = rng.gen_range(0.0..std::f64::consts::TAU);
                let v = loop {
                    let v = rng.gen_range(0.0..std::f64::consts::TAU);
                    let accept = (major + minor * v.cos()) / (major + minor);
                    if rng.gen_range(0.0..1.0) < accept {
                        break v;
                    }
                };
                let ring = major + minor * v.cos();
                Vec3::new(ring * u.cos(), ring * u.sin(), minor * v.sin())
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    // Rejection sampling in the unit ball, then normalize.
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

/// Scene description (shape + cameras + appearance).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub shape: Shape,
    pub n_views: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub fov_deg: f64,
    /// Distance of every camera from the origin.
    pub camera_radius: f64,
    pub checker_period: f64,
    pub color_a: Vec3,
    pub color_b: Vec3,
    pub background: Vec3,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            shape: Shape::Sphere { radius: 1.0 },
            n_views: 20,
            image_width: 96,
            image_height: 96,
            fov_deg: 45.0,
            camera_radius: 3.0,
            checker_period: 0.4,
            color_a: Vec3::new(0.9, 0.85, 0.2),
            color_b: Vec3::new(0.2, 0.35, 0.9),
            background: Vec3::new(0.02, 0.02, 0.05),
        }
    }
}

/// A fully realized scene: cameras plus ground-truth rasters.
///
/// Ground truth is quantized to its on-disk precision (8-bit RGB, f32 depth)
/// at build time, so a freshly rendered scene and one reloaded from cache are
/// bit-identical.
#[derive(Debug, Clone)]
pub struct Scene {
    pub params: SceneParams,
    pub views: Vec<CameraView>,
    pub gt_rgb: Vec<RgbImage>,
    pub gt_depth: Vec<DepthMap>,
}

impl Scene {
    /// Build cameras and render ground truth.
    pub fn build(params: SceneParams) -> Result<Scene> {
        if params.n_views < 2 {
            return Err(Error::TooFewCameras {
                need: 2,
                got: params.n_views,
            });
        }
        let views = camera_ring(&params)?;
        for v in &views {
            if params.shape.sdf(&v.center()) <= 0.0 {
                return Err(Error::invalid("scene", "camera inside the shape"));
            }
        }
        let mut gt_rgb = Vec::with_capacity(views.len());
        let mut gt_depth = Vec::with_capacity(views.len());
        for view in &views {
            let (rgb, depth) = render_ground_truth(&params, view);
            gt_rgb.push(rgb);
            gt_depth.push(depth);
        }
        Ok(Scene {
            params,
            views,
            gt_rgb,
            gt_depth,
        })
    }

    /// Bounding-box diagonal, the scene's length scale.
    pub fn scale(&self) -> f64 {
        let (lo, hi) = self.params.shape.bbox();
        (hi - lo).norm()
    }

    pub fn padded_bbox(&self, pad_fraction: f64) -> (Vec3, Vec3) {
        let (lo, hi) = self.params.shape.bbox();
        let pad = pad_fraction * (hi - lo).norm();
        (lo - Vec3::repeat(pad), hi + Vec3::repeat(pad))
    }

    /// Grid placement covering the padded bounding box.
    pub fn grid_spec(&self, pad_fraction: f64, resolution: u32) -> Result<GridSpec> {
        let (lo, hi) = self.params.shape.bbox();
        GridSpec::covering(lo, hi, pad_fraction, resolution)
    }
}

/// Cameras on a sphere of radius `camera_radius`, looking at the origin,
/// spread by a golden-angle spiral over a pole-free elevation band.
fn camera_ring(params: &SceneParams) -> Result<Vec<CameraView>> {
    let n = params.n_views;
    let half = (params.fov_deg.to_radians() / 2.0).tan();
    let intr = Intrinsics {
        fx: params.image_width as f64 / (2.0 * half),
        fy: params.image_width as f64 / (2.0 * half),
        cx: params.image_width as f64 / 2.0,
        cy: params.image_height as f64 / 2.0,
    };
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            // cos(elevation) spread uniformly in a band away from the poles.
            let band = -0.72 + 1.5 * (i as f64 + 0.5) / n as f64;
            let z = band.clamp(-0.72, 0.78);
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let eye = params.camera_radius * Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
            CameraView::look_at(
                eye,
                Vec3::zeros(),
                Vec3::new(0.0, 0.0, 1.0),
                intr,
                params.image_width,
                params.image_height,
            )
        })
        .collect()
}

/// Sphere-trace a single ray; returns ray length of the hit.
pub fn trace_ray(shape: &Shape, ray: &Ray, tol: f64, t_max: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..TRACE_STEPS {
        let d = shape.sdf(&(ray.origin + t * ray.dir));
        if d < tol {
            return Some(t);
        }
        t += d;
        if t > t_max {
            return None;
        }
    }
    None
}

/// Ray-traced ground truth for one view: RGB (checker albedo × Lambert
/// headlight) and camera-z depth. Missed pixels take the background color and
/// an invalid (NaN) depth.
pub fn render_ground_truth(params: &SceneParams, view: &CameraView) -> (RgbImage, DepthMap) {
    let (lo, hi) = params.shape.bbox();
    let scale = (hi - lo).norm();
    let tol = TRACE_TOL_FRAC * scale;
    let t_max = 4.0 * params.camera_radius;
    let mut rgb = RgbImage::black(view.width, view.height);
    let mut depth = DepthMap::filled(view.width, view.height, f64::NAN);
    for iy in 0..view.height {
        for ix in 0..view.width {
            let ray = view.pixel_ray(ix, iy);
            let Some(t) = trace_ray(&params.shape, &ray, tol, t_max) else {
                rgb.set(ix, iy, quantize_rgb(&params.background));
                continue;
            };
            let p = ray.origin + t * ray.dir;
            let n = params.shape.normal(&p, 1e-4 * scale);
            let lambert = (-n.dot(&ray.dir)).max(0.0);
            let albedo = checker(params, &p);
            rgb.set(ix, iy, quantize_rgb(&(albedo * lambert)));
            depth.set(ix, iy, quantize_depth(t * ray.dz));
        }
    }
    (rgb, depth)
}

fn checker(params: &SceneParams, p: &Vec3) -> Vec3 {
    let cell = |x: f64| (x / params.checker_period).floor() as i64;
    if (cell(p.x) + cell(p.y) + cell(p.z)).rem_euclid(2) == 0 {
        params.color_a
    } else {
        params.color_b
    }
}

/// Round each channel to the 8-bit lattice used by the PNG cache.
#[inline]
pub fn quantize_rgb(c: &Vec3) -> Vec3 {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Round to f32, the PFM cache precision.
#[inline]
pub fn quantize_depth(d: f64) -> f64 {
    d as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Centers uniform in the padded bounding box.
    Random,
    /// Centers sampled uniformly on the exact surface.
    Surface,
}

/// Initialization defaults shared by training and tests. Opacity starts
/// dense (logit 0.1, opacity ≈ 0.52): translucent starts let the far side of
/// closed surfaces bleed into blended depth maps, which poisons depth fusion
/// early in training.
pub const INIT_OPACITY_LOGIT: f64 = 0.1;
pub const INIT_COLOR: f64 = 0.5;

/// Seeded Gaussian initialization. Scales start isotropic at
/// `bbox_diag / (count^{1/3} · 4)`; rotations are identity-ish (small random
/// axis-angle); opacity starts at [`INIT_OPACITY_LOGIT`].
pub fn init_gaussians(
    scene: &Scene,
    count: usize,
    mode: InitMode,
    pad_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Gaussian> {
    let (lo, hi) = scene.padded_bbox(pad_fraction);
    let sigma = scene.scale() / (count as f64).cbrt() / 4.0;
    (0..count)
        .map(|_| {
            let center = match mode {
                InitMode::Random => Vec3::new(
                    rng.gen_range(lo.x..hi.x),
                    rng.gen_range(lo.y..hi.y),
                    rng.gen_range(lo.z..hi.z),
                ),
                InitMode::Surface => scene.params.shape.sample_surface(rng),
            };
            let axis = random_unit(rng);
            let angle: f64 = rng.gen_range(0.0..0.3);
            let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
            Gaussian {
                center,
                log_scale: Vec3::repeat(sigma.ln()),
                rotation: Vec4::new(c, s * axis.x, s * axis.y, s * axis.z),
                opacity_logit: INIT_OPACITY_LOGIT,
                color: Vec3::repeat(INIT_COLOR),
            }
        })
        .collect()
}

/// `n` uniform-by-area reference points on the surface.
pub fn chamfer_pointcloud(shape: &Shape, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n).map(|_| shape.sample_surface(rng)).collect()
}
