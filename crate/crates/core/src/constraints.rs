//! Band constraints: classify Gaussians against the fused grid, drop
//! out-of-band outliers, pull in-band centers onto the zero level set, and
//! regularize opacity by band membership.

use crate::error::Result;
use crate::geometry::{sigmoid, Gaussian, GaussianGrads, Vec3};
use crate::tsdf::{TsdfGrid, GRAD_EPS};

/// |s| ≥ 1 − OUTSIDE_TOL counts as fully outside the band.
pub const OUTSIDE_TOL: f64 = 1e-6;

/// Minimum gradient norm for a projection step to be well defined.
pub const MIN_GRAD_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandLabel {
    /// |s| ≤ δ: treated as lying on the reconstructed surface.
    OnSurface,
    /// δ < |s| < 1: inside the truncation band but off the surface.
    OffSurface,
    /// |s| ≥ 1 (within [`OUTSIDE_TOL`]): outside the band entirely.
    Outside,
    /// Entire trilinear support has fusion weight 0: no observation.
    Unobserved,
}

/// Classify one center against the grid; also returns the sampled normalized
/// distance s. Out-of-grid points read +1 and classify as `Outside`;
/// `Unobserved` takes precedence over the |s| thresholds (an unobserved
/// region also reads +1).
pub fn classify(grid: &TsdfGrid, delta: f64, center: &Vec3) -> (BandLabel, f64) {
    match grid.support_observed(center) {
        None => (BandLabel::Outside, 1.0),
        Some(false) => (BandLabel::Unobserved, grid.sample(center)),
        Some(true) => {
            let s = grid.sample(center);
            let label = if s.abs() >= 1.0 - OUTSIDE_TOL {
                BandLabel::Outside
            } else if s.abs() <= delta {
                BandLabel::OnSurface
            } else {
                BandLabel::OffSurface
            };
            (label, s)
        }
    }
}

/// Outcome of an outlier-removal pass. `keep[i]` tells whether Gaussian `i`
/// survives; counts are tallied over the *input* set.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalReport {
    pub keep: Vec<bool>,
    pub on_surface: usize,
    pub off_surface: usize,
    pub outside: usize,
    pub unobserved: usize,
}

impl RemovalReport {
    pub fn removed(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// One line of the removal log.
    pub fn log_line(&self, iter: u64) -> String {
        format!(
            "iter={} removed={} on={} off={} outside={} unobserved={}",
            iter,
            self.removed(),
            self.on_surface,
            self.off_surface,
            self.outside,
            self.unobserved
        )
    }
}

/// Mark Gaussians whose center lies fully outside the band for removal.
/// Unobserved Gaussians are retained unless `remove_unobserved` is set (a
/// fresh prior fused from partial coverage says nothing about them).
pub fn remove_outliers(
    gaussians: &[Gaussian],
    grid: &TsdfGrid,
    delta: f64,
    remove_unobserved: bool,
) -> RemovalReport {
    let mut report = RemovalReport {
        keep: Vec::with_capacity(gaussians.len()),
        on_surface: 0,
        off_surface: 0,
        outside: 0,
        unobserved: 0,
    };
    for g in gaussians {
        let (label, _) = classify(grid, delta, &g.center);
        let keep = match label {
            BandLabel::OnSurface => {
                report.on_surface += 1;
                true
            }
            BandLabel::OffSurface => {
                report.off_surface += 1;
                true
            }
            BandLabel::Outside => {
                report.outside += 1;
                false
            }
            BandLabel::Unobserved => {
                report.unobserved += 1;
                !remove_unobserved
            }
        };
        report.keep.push(keep);
    }
    report
}

/// Apply a keep-mask in place, preserving order of the survivors.
pub fn compact<T>(items: &mut Vec<T>, keep: &[bool]) {
    debug_assert_eq!(items.len(), keep.len());
    let mut it = keep.iter();
    items.retain(|_| *it.next().unwrap());
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionStats {
    pub moved: usize,
    pub skipped_outside: usize,
    pub skipped_boundary: usize,
    pub skipped_small_grad: usize,
    /// Mean |metric sdf| over the moved subset, before / after the step.
    pub mean_abs_sdf_before: f64,
    pub mean_abs_sdf_after: f64,
}

/// One projection step pulling in-band centers toward the zero level set.
///
/// Default step (`literal_step = false`): a metric Newton-style step along the
/// normalized field gradient, `μ ← μ − (s·T) · ∇f/‖∇f‖`, which lands exactly
/// on the surface for a locally linear field. `literal_step = true` uses the
/// raw form `μ ← μ − s·∇f` instead (gradient unnormalized; for a normalized
/// field ‖∇f‖ ≈ 1/T, so the step size carries units of 1/length and
/// under-relaxes on wide bands).
///
/// Gaussians are skipped when |s| ≥ 1 (outside the band), when the center is
/// too close to the grid wall for finite differences, or when the gradient is
/// numerically zero.
pub fn project_to_surface(
    gaussians: &mut [Gaussian],
    grid: &TsdfGrid,
    literal_step: bool,
) -> Result<ProjectionStats> {
    let mut stats = ProjectionStats::default();
    let mut before = 0.0;
    let mut after = 0.0;
    for g in gaussians.iter_mut() {
        let s = grid.sample(&g.center);
        if s.abs() >= 1.0 - OUTSIDE_TOL {
            stats.skipped_outside += 1;
            continue;
        }
        let grad = match grid.gradient_fd(&g.center, GRAD_EPS) {
            Ok(grad) => grad,
            Err(crate::error::Error::GridBoundary { .. }) => {
                stats.skipped_boundary += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let norm = grad.norm();
        if norm <= MIN_GRAD_NORM {
            stats.skipped_small_grad += 1;
            continue;
        }
        let step = if literal_step {
            s * grad
        } else {
            (s * grid.truncation) * (grad / norm)
        };
        g.center -= step;
        stats.moved += 1;
        before += (s * grid.truncation).abs();
        after += (grid.sample(&g.center) * grid.truncation).abs();
    }
    if stats.moved > 0 {
        stats.mean_abs_sdf_before = before / stats.moved as f64;
        stats.mean_abs_sdf_after = after / stats.moved as f64;
    }
    Ok(stats)
}

/// Band-weighted opacity regularizer.
///
/// L = (1/M) [ Σ_on ε_k (o_k − 1)² + Σ_off ε_k o_k² ] with ε = 1/(1+|s|)²,
/// where M is the *total* Gaussian count and the sums run over on-surface /
/// off-surface members only (Outside and Unobserved contribute nothing).
/// The sampled distance s is treated as a constant: the only gradient is
/// through the opacity sigmoid, written into `grads.opacity_logit` scaled by
/// `weight`.
pub fn scp_loss(
    gaussians: &[Gaussian],
    grid: &TsdfGrid,
    delta: f64,
    weight: f64,
    grads: Option<&mut GaussianGrads>,
) -> f64 {
    let m = gaussians.len();
    if m == 0 {
        return 0.0;
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut d_logit = grads.map(|g| &mut g.opacity_logit);
    for (i, g) in gaussians.iter().enumerate() {
        let (label, s) = classify(grid, delta, &g.center);
        let eps_k = 1.0 / ((1.0 + s.abs()) * (1.0 + s.abs()));
        let o = sigmoid(g.opacity_logit);
        let (term, d_o) = match label {
            BandLabel::OnSurface => (eps_k * (o - 1.0) * (o - 1.0), eps_k * 2.0 * (o - 1.0)),
            BandLabel::OffSurface => (eps_k * o * o, eps_k * 2.0 * o),
            BandLabel::Outside | BandLabel::Unobserved => (0.0, 0.0),
        };
        loss += inv_m * term;
        if let Some(d) = d_logit.as_deref_mut() {
            d[i] += weight * inv_m * d_o * o * (1.0 - o);
        }
    }
    loss
}
