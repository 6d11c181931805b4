//! Adam with per-field learning rates over the Gaussian collection.

use crate::config::OptimizerConfig;
use crate::constraints::compact;
use crate::error::{Error, Result};
use crate::geometry::{Gaussian, GaussianGrads, Vec4};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

/// Per-field learning rates; the center rate decays exponentially from
/// `center` to `center_final` over `decay_horizon` iterations.
#[derive(Debug, Clone, Copy)]
pub struct LearningRates {
    pub center: f64,
    pub center_final: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub decay_horizon: u64,
}

impl LearningRates {
    pub fn from_config(config: &OptimizerConfig, decay_horizon: u64) -> LearningRates {
        LearningRates {
            center: config.lr_center,
            center_final: config.lr_center_final,
            opacity: config.lr_opacity,
            scale: config.lr_scale,
            rotation: config.lr_rotation,
            color: config.lr_color,
            decay_horizon: decay_horizon.max(1),
        }
    }

    /// Log-linear interpolation from `center` to `center_final`.
    pub fn center_at(&self, iter: u64) -> f64 {
        let t = iter.min(self.decay_horizon) as f64 / self.decay_horizon as f64;
        self.center * (self.center_final / self.center).powf(t)
    }
}

/// First/second-moment rows aligned with the Gaussian collection.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: GaussianGrads,
    pub v: GaussianGrads,
    /// Scalar updates skipped because their gradient was non-finite.
    pub skipped_nonfinite: u64,
}

impl AdamState {
    pub fn new(count: usize) -> AdamState {
        AdamState {
            step: 0,
            m: GaussianGrads::zeros(count),
            v: GaussianGrads::zeros(count),
            skipped_nonfinite: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected step; quaternions are renormalized afterwards.
    /// `train_iter` drives the center-rate decay.
    pub fn step(
        &mut self,
        gaussians: &mut [Gaussian],
        grads: &GaussianGrads,
        rates: &LearningRates,
        train_iter: u64,
    ) -> Result<()> {
        if grads.len() != gaussians.len() || self.len() != gaussians.len() {
            return Err(Error::CountMismatch {
                what: "gradient rows",
                expected: gaussians.len(),
                got: grads.len().min(self.len()),
            });
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let lr_center = rates.center_at(train_iter);
        let mut skipped = 0u64;

        let mut scalar = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64| {
            if !g.is_finite() {
                skipped += 1;
                return;
            }
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPS);
        };

        for (i, g) in gaussians.iter_mut().enumerate() {
            for a in 0..3 {
                scalar(
                    &mut g.center[a],
                    grads.center[i][a],
                    &mut self.m.center[i][a],
                    &mut self.v.center[i][a],
                    lr_center,
                );
                scalar(
                    &mut g.log_scale[a],
                    grads.log_scale[i][a],
                    &mut self.m.log_scale[i][a],
                    &mut self.v.log_scale[i][a],
                    rates.scale,
                );
                scalar(
                    &mut g.color[a],
                    grads.color[i][a],
                    &mut self.m.color[i][a],
                    &mut self.v.color[i][a],
                    rates.color,
                );
            }
            for a in 0..4 {
                scalar(
                    &mut g.rotation[a],
                    grads.rotation[i][a],
                    &mut self.m.rotation[i][a],
                    &mut self.v.rotation[i][a],
                    rates.rotation,
                );
            }
            scalar(
                &mut g.opacity_logit,
                grads.opacity_logit[i],
                &mut self.m.opacity_logit[i],
                &mut self.v.opacity_logit[i],
                rates.opacity,
            );
            let norm = g.rotation.norm();
            if norm > 1e-12 {
                g.rotation /= norm;
            } else {
                g.rotation = Vec4::new(1.0, 0.0, 0.0, 0.0);
            }
        }
        self.skipped_nonfinite += skipped;
        Ok(())
    }

    /// Drops moment rows whose `keep` flag is false.
    pub fn keep(&mut self, keep: &[bool]) {
        for grads in [&mut self.m, &mut self.v] {
            compact(&mut grads.center, keep);
            compact(&mut grads.log_scale, keep);
            compact(&mut grads.rotation, keep);
            compact(&mut grads.opacity_logit, keep);
            compact(&mut grads.color, keep);
        }
    }

    /// Appends zero-moment rows for newly created Gaussians.
    pub fn append_rows(&mut self, n: usize) {
        use crate::geometry::Vec3;
        for grads in [&mut self.m, &mut self.v] {
            let len = grads.len() + n;
            grads.center.resize(len, Vec3::zeros());
            grads.log_scale.resize(len, Vec3::zeros());
            grads.rotation.resize(len, Vec4::zeros());
            grads.opacity_logit.resize(len, 0.0);
            grads.color.resize(len, Vec3::zeros());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn unit_gaussian() -> Gaussian {
        Gaussian {
            center: Vec3::zeros(),
            log_scale: Vec3::repeat(-2.0),
            rotation: Vec4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: 0.0,
            color: Vec3::repeat(0.5),
        }
    }

    fn rates() -> LearningRates {
        LearningRates::from_config(&OptimizerConfig::default(), 1000)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(1);
        let grads = GaussianGrads::zeros(1);
        state.step(&mut gaussians, &grads, &rates(), 1).unwrap();
        let reference = unit_gaussian();
        assert_eq!(gaussians[0].center, reference.center);
        assert_eq!(gaussians[0].opacity_logit, reference.opacity_logit);
        assert_eq!(gaussians[0].rotation, reference.rotation);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(1);
        let mut grads = GaussianGrads::zeros(1);
        grads.center[0].x = 0.3;
        grads.opacity_logit[0] = -0.7;
        let r = rates();
        state.step(&mut gaussians, &grads, &r, 0).unwrap();
        // After bias correction the first step is −lr·g/(|g| + eps).
        let expected_center = -r.center_at(0) * 0.3 / (0.3 + EPS);
        let expected_opacity = -r.opacity * (-0.7) / (0.7 + EPS);
        assert!((gaussians[0].center.x - expected_center).abs() < 1e-12);
        assert!((gaussians[0].opacity_logit - expected_opacity).abs() < 1e-12);
        assert_eq!(gaussians[0].center.y, 0.0);
    }

    #[test]
    fn constant_gradient_step_magnitude_approaches_rate() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(1);
        let mut grads = GaussianGrads::zeros(1);
        grads.opacity_logit[0] = 0.1;
        let r = rates();
        let mut previous = gaussians[0].opacity_logit;
        let mut last_delta = 0.0;
        for iter in 1..=500 {
            state.step(&mut gaussians, &grads, &r, iter).unwrap();
            last_delta = (gaussians[0].opacity_logit - previous).abs();
            previous = gaussians[0].opacity_logit;
        }
        assert!(
            (last_delta - r.opacity).abs() < 0.01 * r.opacity,
            "late step {last_delta} vs lr {}",
            r.opacity
        );
    }

    #[test]
    fn nonfinite_gradient_is_skipped_and_counted() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(1);
        let mut grads = GaussianGrads::zeros(1);
        grads.center[0].x = f64::NAN;
        grads.center[0].y = 1.0;
        state.step(&mut gaussians, &grads, &rates(), 1).unwrap();
        assert_eq!(gaussians[0].center.x, 0.0);
        assert!(gaussians[0].center.y < 0.0);
        assert_eq!(state.skipped_nonfinite, 1);
        assert!(gaussians[0].center.x.is_finite());
    }

    #[test]
    fn quaternion_is_renormalized_after_step() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(1);
        let mut grads = GaussianGrads::zeros(1);
        grads.rotation[0] = Vec4::new(0.5, -0.2, 0.8, 0.1);
        state.step(&mut gaussians, &grads, &rates(), 1).unwrap();
        assert!((gaussians[0].rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn center_rate_decays_exponentially() {
        let r = rates();
        assert!((r.center_at(0) - r.center).abs() < 1e-18);
        assert!((r.center_at(r.decay_horizon) - r.center_final).abs() < 1e-12);
        let mid = r.center_at(r.decay_horizon / 2);
        assert!((mid - (r.center * r.center_final).sqrt()).abs() < 1e-12);
        assert!(r.center_at(10 * r.decay_horizon) == r.center_final);
    }

    #[test]
    fn keep_and_append_track_population() {
        let mut state = AdamState::new(3);
        state.m.center[1].x = 7.0;
        state.keep(&[false, true, true]);
        assert_eq!(state.len(), 2);
        assert_eq!(state.m.center[0].x, 7.0);
        state.append_rows(2);
        assert_eq!(state.len(), 4);
        assert_eq!(state.m.center[3], Vec3::zeros());
    }

    #[test]
    fn mismatched_rows_error() {
        let mut gaussians = vec![unit_gaussian()];
        let mut state = AdamState::new(2);
        let grads = GaussianGrads::zeros(1);
        assert!(state.step(&mut gaussians, &grads, &rates(), 1).is_err());
    }
}
