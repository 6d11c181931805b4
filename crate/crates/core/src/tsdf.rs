//! Truncated signed distance grid fused from rendered depth maps.
//!
//! The grid stores *normalized* signed distances in [-1, 1] (metric distance
//! divided by the truncation T) at lattice points `origin + index·voxel_size`,
//! x-fastest row-major, together with per-voxel fusion weights. Unobserved
//! voxels carry value +1 and weight 0.
//!
//! Fusion rule, per voxel and per view: project the voxel into the view; if
//! the depth pixel is valid, form `sdf_metric = depth(pixel) − voxel_z`.
//! Contributions with `sdf_metric < −T` (voxel far behind the observed
//! surface, i.e. occluded) are skipped entirely; all others contribute
//! `clamp(sdf_metric / T, −1, 1)` with weight 1, and the voxel stores the
//! weighted mean.

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Vec3};
use crate::raster::DepthMap;

/// Finite-difference step (world units) for [`gradient_fd`].
pub const GRAD_EPS: f64 = 1e-4;

/// Geometric placement of a grid: lattice point `(i,j,k)` sits at
/// `origin + (i,j,k) · voxel_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [u32; 3],
}

impl GridSpec {
    /// Cover `lo..hi` padded by `pad_fraction` of its diagonal on every side,
    /// with `resolution` lattice points along the longest axis.
    pub fn covering(lo: Vec3, hi: Vec3, pad_fraction: f64, resolution: u32) -> Result<GridSpec> {
        if resolution < 2 {
            return Err(Error::GridTooSmall {
                dims: [resolution; 3],
            });
        }
        let diag = (hi - lo).norm();
        if !(diag > 0.0) {
            return Err(Error::invalid("grid bounds", "empty bounding box"));
        }
        let pad = pad_fraction * diag;
        let lo = lo - Vec3::repeat(pad);
        let hi = hi + Vec3::repeat(pad);
        let extent = hi - lo;
        let longest = extent.max();
        let voxel_size = longest / (resolution - 1) as f64;
        let dims = [
            ((extent.x / voxel_size).ceil() as u32 + 1).max(2),
            ((extent.y / voxel_size).ceil() as u32 + 1).max(2),
            ((extent.z / voxel_size).ceil() as u32 + 1).max(2),
        ];
        Ok(GridSpec {
            origin: lo,
            voxel_size,
            dims,
        })
    }

    #[inline]
    pub fn position(&self, i: u32, j: u32, k: u32) -> Vec3 {
        self.origin + self.voxel_size * Vec3::new(i as f64, j as f64, k as f64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] as usize * self.dims[1] as usize * self.dims[2] as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::GridTooSmall { dims: self.dims });
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::invalid("voxel size", format!("{}", self.voxel_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfGrid {
    pub spec: GridSpec,
    /// Metric truncation distance T (> 0).
    pub truncation: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl TsdfGrid {
    /// Fresh all-unobserved grid (value +1, weight 0).
    pub fn unobserved(spec: GridSpec, truncation: f64) -> Result<TsdfGrid> {
        spec.validate()?;
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(Error::invalid("truncation", format!("{truncation}")));
        }
        let n = spec.len();
        Ok(TsdfGrid {
            spec,
            truncation,
            values: vec![1.0; n],
            weights: vec![0.0; n],
        })
    }

    /// Fully observed synthetic grid: value = clamp(f(p)/T, −1, 1), weight 1
    /// at every lattice point, where `f` is a metric signed distance.
    pub fn from_fn<F: Fn(&Vec3) -> f64>(spec: GridSpec, truncation: f64, f: F) -> Result<TsdfGrid> {
        let mut g = TsdfGrid::unobserved(spec, truncation)?;
        let [nx, ny, nz] = spec.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = g.index(i, j, k);
                    g.values[idx] = (f(&spec.position(i, j, k)) / truncation).clamp(-1.0, 1.0);
                    g.weights[idx] = 1.0;
                }
            }
        }
        Ok(g)
    }

    /// Rebuild a grid from raw storage (deserialization).
    pub fn from_parts(
        spec: GridSpec,
        truncation: f64,
        values: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<TsdfGrid> {
        let mut g = TsdfGrid::unobserved(spec, truncation)?;
        if values.len() != g.spec.len() || weights.len() != g.spec.len() {
            return Err(Error::CountMismatch {
                what: "grid voxels",
                expected: g.spec.len(),
                got: values.len().min(weights.len()),
            });
        }
        g.values = values;
        g.weights = weights;
        Ok(g)
    }

    #[inline]
    pub fn index(&self, i: u32, j: u32, k: u32) -> usize {
        debug_assert!(i < self.spec.dims[0] && j < self.spec.dims[1] && k < self.spec.dims[2]);
        (k as usize * self.spec.dims[1] as usize + j as usize) * self.spec.dims[0] as usize
            + i as usize
    }

    #[inline]
    pub fn value(&self, i: u32, j: u32, k: u32) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn weight(&self, i: u32, j: u32, k: u32) -> f64 {
        self.weights[self.index(i, j, k)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// All eight corners of cell `(i,j,k)` observed (weight > 0)?
    /// Cell indices run to `dims − 2` per axis.
    pub fn cell_observed(&self, i: u32, j: u32, k: u32) -> bool {
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    if self.weights[self.index(i + di, j + dj, k + dk)] <= 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Observation state of the trilinear support of `p`:
    /// `None` if `p` is outside the grid, otherwise `Some(true)` when at
    /// least one of the 8 support corners has weight > 0.
    pub fn support_observed(&self, p: &Vec3) -> Option<bool> {
        let (i0, j0, k0, _, _, _) = self.cell_of(p)?;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    if self.weights[self.index(i0 + di, j0 + dj, k0 + dk)] > 0.0 {
                        return Some(true);
                    }
                }
            }
        }
        Some(false)
    }

    /// Trilinear support cell and in-cell fractions for `p`; `None` outside
    /// the grid. Points exactly on the far boundary use the last cell with
    /// fraction 1.
    #[inline]
    fn cell_of(&self, p: &Vec3) -> Option<(u32, u32, u32, f64, f64, f64)> {
        let g = (p - self.spec.origin) / self.spec.voxel_size;
        let max = [
            (self.spec.dims[0] - 1) as f64,
            (self.spec.dims[1] - 1) as f64,
            (self.spec.dims[2] - 1) as f64,
        ];
        if !(g.x >= 0.0 && g.y >= 0.0 && g.z >= 0.0 && g.x <= max[0] && g.y <= max[1] && g.z <= max[2])
        {
            return None; // also rejects NaN
        }
        let i0 = (g.x.floor() as u32).min(self.spec.dims[0] - 2);
        let j0 = (g.y.floor() as u32).min(self.spec.dims[1] - 2);
        let k0 = (g.z.floor() as u32).min(self.spec.dims[2] - 2);
        Some((
            i0,
            j0,
            k0,
            g.x - i0 as f64,
            g.y - j0 as f64,
            g.z - k0 as f64,
        ))
    }

    /// Trilinear interpolation of the normalized distance at `p`; returns +1
    /// outside the grid (out-of-grid space is treated as unobserved far side).
    pub fn sample(&self, p: &Vec3) -> f64 {
        match self.cell_of(p) {
            None => 1.0,
            Some((i0, j0, k0, fx, fy, fz)) => {
                let v = |di: u32, dj: u32, dk: u32| {
                    self.values[self.index(i0 + di, j0 + dj, k0 + dk)]
                };
                let c00 = v(0, 0, 0) * (1.0 - fx) + v(1, 0, 0) * fx;
                let c10 = v(0, 1, 0) * (1.0 - fx) + v(1, 1, 0) * fx;
                let c01 = v(0, 0, 1) * (1.0 - fx) + v(1, 0, 1) * fx;
                let c11 = v(0, 1, 1) * (1.0 - fx) + v(1, 1, 1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                c0 * (1.0 - fz) + c1 * fz
            }
        }
    }

    /// Central finite-difference gradient of [`Self::sample`] (units: 1/length,
    /// since values are normalized). Errors unless `p` is inside the grid by
    /// at least one voxel plus `eps` on every axis, so all probes stay well
    /// inside.
    pub fn gradient_fd(&self, p: &Vec3, eps: f64) -> Result<Vec3> {
        let lo = self.spec.origin + Vec3::repeat(self.spec.voxel_size + eps);
        let far = |a: usize| {
            self.spec.origin[a] + (self.spec.dims[a] - 2) as f64 * self.spec.voxel_size - eps
        };
        for a in 0..3 {
            if !(p[a] >= lo[a] && p[a] <= far(a)) {
                return Err(Error::GridBoundary {
                    point: [p.x, p.y, p.z],
                });
            }
        }
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut pp = *p;
            let mut pm = *p;
            pp[a] += eps;
            pm[a] -= eps;
            g[a] = (self.sample(&pp) - self.sample(&pm)) / (2.0 * eps);
        }
        Ok(g)
    }
}

/// Fuse depth maps from calibrated views into a fresh grid.
/// `truncation` is the metric truncation distance T.
pub fn fuse_depth_maps(
    spec: &GridSpec,
    truncation: f64,
    views: &[CameraView],
    depths: &[DepthMap],
) -> Result<TsdfGrid> {
    if views.len() != depths.len() {
        return Err(Error::CountMismatch {
            what: "depth maps",
            expected: views.len(),
            got: depths.len(),
        });
    }
    for (view, depth) in views.iter().zip(depths) {
        if depth.width() != view.width || depth.height() != view.height {
            return Err(Error::RasterSizeMismatch {
                a_w: view.width,
                a_h: view.height,
                b_w: depth.width(),
                b_h: depth.height(),
            });
        }
    }
    let mut grid = TsdfGrid::unobserved(*spec, truncation)?;
    let [nx, ny, nz] = spec.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = spec.position(i, j, k);
                let mut sum = 0.0;
                let mut weight = 0.0;
                for (view, depth) in views.iter().zip(depths) {
                    let (px, z) = view.project(&p);
                    if z <= 0.0 {
                        continue;
                    }
                    let (ix, iy) = (px.x.floor(), px.y.floor());
                    if !(ix >= 0.0 && iy >= 0.0) {
                        continue;
                    }
                    let (ix, iy) = (ix as usize, iy as usize);
                    if ix >= depth.width() || iy >= depth.height() || !depth.depth_valid(ix, iy) {
                        continue;
                    }
                    let sdf_metric = depth.get(ix, iy) - z;
                    if sdf_metric < -truncation {
                        continue; // occluded: the voxel is far behind the surface
                    }
                    sum += (sdf_metric / truncation).clamp(-1.0, 1.0);
                    weight += 1.0;
                }
                let idx = grid.index(i, j, k);
                if weight > 0.0 {
                    grid.values[idx] = sum / weight;
                    grid.weights[idx] = weight;
                }
            }
        }
    }
    Ok(grid)
}

/// Prior refresh schedule: updates fire at `first_update_iter`, then every
/// `update_interval`, while unconsumed bandwidth factors remain and
/// `iter ≤ stop_iter`. Each update consumes the next σ; the metric truncation
/// of update `u` is `σ_u · base_truncation`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSchedule {
    pub first_update_iter: u64,
    pub update_interval: u64,
    pub stop_iter: u64,
    /// Bandwidth factors, one per update, applied in order.
    pub sigma_sequence: Vec<f64>,
    /// On-surface band half-width in normalized units.
    pub delta: f64,
    /// Metric truncation at σ = 1.
    pub base_truncation: f64,
    pub updates_done: usize,
    pub last_update_iter: Option<u64>,
}

impl BandSchedule {
    pub fn new(
        first_update_iter: u64,
        update_interval: u64,
        stop_iter: u64,
        sigma_sequence: Vec<f64>,
        delta: f64,
        base_truncation: f64,
    ) -> Result<BandSchedule> {
        if update_interval == 0 {
            return Err(Error::invalid("band schedule", "update_interval = 0"));
        }
        if sigma_sequence.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("band schedule", "non-positive σ"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("band schedule", format!("delta {delta} outside (0,1)")));
        }
        Ok(BandSchedule {
            first_update_iter,
            update_interval,
            stop_iter,
            sigma_sequence,
            delta,
            base_truncation,
            updates_done: 0,
            last_update_iter: None,
        })
    }

    /// σ for an update due at `iter`, without consuming it.
    pub fn due(&self, iter: u64) -> Option<f64> {
        if self.updates_done >= self.sigma_sequence.len() {
            return None;
        }
        if iter < self.first_update_iter || iter > self.stop_iter {
            return None;
        }
        if (iter - self.first_update_iter) % self.update_interval != 0 {
            return None;
        }
        Some(self.sigma_sequence[self.updates_done])
    }

    /// Metric half-width of the on-surface band after an update with factor σ.
    pub fn metric_band_half_width(&self, sigma: f64) -> f64 {
        self.delta * sigma * self.base_truncation
    }
}

/// Run a scheduled prior refresh if one is due at `iter`: renders depths via
/// the callback (only when due), fuses them at truncation σ·base, and
/// advances the schedule. Returns the fresh grid, or `None` when not due.
pub fn maybe_update_prior<F>(
    schedule: &mut BandSchedule,
    iter: u64,
    spec: &GridSpec,
    views: &[CameraView],
    render_depths: F,
) -> Result<Option<TsdfGrid>>
where
    F: FnOnce() -> Result<Vec<DepthMap>>,
{
    let Some(sigma) = schedule.due(iter) else {
        return Ok(None);
    };
    let depths = render_depths()?;
    let grid = fuse_depth_maps(spec, sigma * schedule.base_truncation, views, &depths)?;
    schedule.updates_done += 1;
    schedule.last_update_iter = Some(iter);
    Ok(Some(grid))
}
