//! Adaptive density control: clone small / split large high-gradient
//! Gaussians and prune transparent ones, keeping optimizer rows aligned.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::DensifyConfig;
use crate::constraints::compact;
use crate::error::{Error, Result};
use crate::geometry::{Gaussian, GaussianGrads, Vec3};
use crate::optim::adam::AdamState;

/// Running mean of center-gradient norms between densification events.
#[derive(Debug, Clone)]
pub struct GradAccum {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradAccum {
    pub fn new(n: usize) -> GradAccum {
        GradAccum {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Adds this iteration's center-gradient norms.
    pub fn record(&mut self, grads: &GaussianGrads) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::CountMismatch {
                what: "gradient rows",
                expected: self.len(),
                got: grads.len(),
            });
        }
        for (i, g) in grads.center.iter().enumerate() {
            let norm = g.norm();
            if norm.is_finite() {
                self.sum[i] += norm;
                self.count[i] += 1;
            }
        }
        Ok(())
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn keep(&mut self, keep: &[bool]) {
        compact(&mut self.sum, keep);
        compact(&mut self.count, keep);
    }

    pub fn reset(&mut self, n: usize) {
        self.sum.clear();
        self.sum.resize(n, 0.0);
        self.count.clear();
        self.count.resize(n, 0);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Standard-normal triple via Box–Muller.
fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    let mut out = [0.0f64; 3];
    for pair in 0..2 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out[2 * pair] = r * c;
        if 2 * pair + 1 < 3 {
            out[2 * pair + 1] = r * s;
        }
    }
    Vec3::new(out[0], out[1], out[2])
}

/// One density-control event.
///
/// Gaussians whose mean accumulated gradient exceeds the threshold are cloned
/// in place (small ones) or replaced by two children drawn from their own
/// distribution with scales divided by `split_shrink` (large ones, relative
/// to `percent_dense · scene_scale`). Afterwards Gaussians with opacity below
/// `prune_opacity` are dropped, never going below `min_gaussians` (the
/// highest-opacity ones survive). New rows get zero optimizer moments; the
/// gradient accumulator is reset.
pub fn densify_and_prune(
    gaussians: &mut Vec<Gaussian>,
    accum: &mut GradAccum,
    state: &mut AdamState,
    cfg: &DensifyConfig,
    scene_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyOutcome> {
    let n = gaussians.len();
    if accum.len() != n || state.len() != n {
        return Err(Error::CountMismatch {
            what: "densify rows",
            expected: n,
            got: accum.len().min(state.len()),
        });
    }
    let cap = if cfg.max_gaussians == 0 {
        usize::MAX
    } else {
        cfg.max_gaussians
    };
    let split_cutoff = cfg.percent_dense * scene_scale;
    let mut outcome = DensifyOutcome::default();
    let mut drop_parent = vec![false; n];

    for i in 0..n {
        if accum.mean(i) <= cfg.grad_threshold {
            continue;
        }
        if gaussians.len() >= cap {
            break;
        }
        let parent = gaussians[i].clone();
        let scales = parent.scales();
        if scales.max() > split_cutoff {
            let rot = parent.rotation_matrix()?;
            for _ in 0..2 {
                let offset = rot * normal3(rng).component_mul(&scales);
                let mut child = parent.clone();
                child.center += offset;
                child.log_scale -= Vec3::repeat(cfg.split_shrink.ln());
                gaussians.push(child);
            }
            drop_parent[i] = true;
            outcome.split += 1;
        } else {
            gaussians.push(parent.clone());
            outcome.cloned += 1;
        }
    }
    let added = gaussians.len() - n;
    state.append_rows(added);

    // Prune: split parents always go; low-opacity rows go unless needed to
    // hold the population floor.
    let total = gaussians.len();
    let mut keep = vec![true; total];
    let mut survivors = total;
    for i in 0..n {
        if drop_parent[i] {
            keep[i] = false;
            survivors -= 1;
        }
    }
    let mut prunable: Vec<usize> = (0..total)
        .filter(|&i| keep[i] && gaussians[i].opacity() < cfg.prune_opacity)
        .collect();
    if survivors.saturating_sub(prunable.len()) < cfg.min_gaussians {
        // Spare the highest-opacity candidates, lowest index first on ties.
        prunable.sort_by(|&a, &b| {
            gaussians[a]
                .opacity()
                .total_cmp(&gaussians[b].opacity())
                .then(b.cmp(&a))
        });
        let spare = (cfg.min_gaussians + prunable.len()).saturating_sub(survivors);
        prunable.drain(prunable.len() - spare.min(prunable.len())..);
    }
    outcome.pruned = prunable.len();
    for i in prunable {
        keep[i] = false;
    }

    compact(gaussians, &keep);
    state.keep(&keep);
    accum.reset(gaussians.len());
    Ok(outcome)
}
