//! Run configuration: TOML-backed hyperparameters for scenes, training, the
//! distance-grid prior, and outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{InitMode, SceneParams, Shape};
use crate::tsdf::BandSchedule;

///Nested run configuration; every section and key is optional in the file
/// and falls back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scene: SceneConfig,
    pub init: InitConfig,
    pub train: TrainLoopConfig,
    pub optimizer: OptimizerConfig,
    pub densify: DensifyConfig,
    pub prior: PriorConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

/// Analytic scene selection and camera rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// `"sphere"`, `"box"`, or `"torus"`.
    pub shape: String,
    /// Sphere radius, box half-extent, or torus major radius (minor = 0.35·size).
    pub size: f64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub camera_radius: f64,
    pub checker_period: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            shape: "sphere".into(),
            size: 1.0,
            views: 20,
            width: 96,
            height: 96,
            fov_deg: 45.0,
            camera_radius: 3.0,
            checker_period: 0.4,
        }
    }
}

/// Gaussian initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub count: usize,
    /// `"random"` (uniform in the padded bounding box) or `"surface"`.
    pub mode: String,
    pub pad_fraction: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            count: 10_000,
            mode: "random".into(),
            pad_fraction: 0.1,
        }
    }
}

/// Loop length, loss weights, and per-iteration sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLoopConfig {
    pub iterations: u64,
    pub seed: u64,
    /// Structural-dissimilarity mix in the color loss.
    pub beta: f64,
    pub lambda_depth: f64,
    pub lambda_normal_smooth: f64,
    pub lambda_multiview: f64,
    pub lambda_scp: f64,
    /// First iteration at which the opacity constraint contributes.
    pub scp_start_iter: u64,
    /// Closest-camera pool size for neighbor-view sampling.
    pub neighbor_count: usize,
    /// Patch-center stride of the photometric consistency term.
    pub ncc_stride: usize,
    /// Gradient-only penalty flattening the smallest scale axis.
    pub flatten_weight: f64,
    /// Coverage threshold below which rendered depth/normal pixels are
    /// ignored by the multi-view terms.
    pub alpha_min: f64,
}

impl Default for TrainLoopConfig {
    fn default() -> Self {
        TrainLoopConfig {
            iterations: 30_000,
            seed: 1,
            beta: 0.2,
            lambda_depth: 0.01,
            lambda_normal_smooth: 0.1,
            lambda_multiview: 0.1,
            lambda_scp: 0.01,
            scp_start_iter: 10_000,
            neighbor_count: 2,
            ncc_stride: 1,
            flatten_weight: 10.0,
            alpha_min: 0.5,
        }
    }
}

/// Adam learning rates; betas (0.9, 0.999) and eps 1e-15 are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_center: f64,
    /// Center rate decays exponentially to this value over the run.
    pub lr_center_final: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_center: 1.6e-4,
            lr_center_final: 1.6e-6,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_color: 2.5e-3,
        }
    }
}

/// Clone/split/prune schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    /// 0 disables densification entirely.
    pub interval: u64,
    pub start_iter: u64,
    pub stop_iter: u64,
    /// Mean center-gradient norm that marks a Gaussian for clone/split.
    pub grad_threshold: f64,
    /// Scale cutoff (fraction of scene scale) between cloning and splitting.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Pruning never drops the population below this floor.
    pub min_gaussians: usize,
    /// Hard population cap; 0 means unlimited.
    pub max_gaussians: usize,
    /// Scale divisor applied to split children.
    pub split_shrink: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            interval: 100,
            start_iter: 500,
            stop_iter: 15_000,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            min_gaussians: 16,
            max_gaussians: 0,
            split_shrink: 1.6,
        }
    }
}

/// Self-fused distance-grid prior: placement, refresh schedule, and the
/// constraint toggles used by the ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub enabled: bool,
    /// Voxels along the longest padded-bounding-box axis.
    pub resolution: u32,
    pub pad_fraction: f64,
    /// Metric truncation at bandwidth factor 1, in voxels.
    pub base_truncation_voxels: f64,
    pub first_update_iter: u64,
    pub update_interval: u64,
    pub stop_iter: u64,
    /// Bandwidth factors, one per refresh, in order.
    pub sigma_sequence: Vec<f64>,
    /// Replaces every entry of `sigma_sequence` when set (bandwidth ablation).
    pub fixed_sigma: Option<f64>,
    /// On/off-surface split of the normalized distance.
    pub delta: f64,
    /// Coverage threshold masking rendered depths before fusion.
    pub fusion_alpha_min: f64,
    /// Apply the opacity constraint (once past its start iteration).
    pub scp: bool,
    /// Drop out-of-band Gaussians after each densification.
    pub remove: bool,
    /// Treat Gaussians in unobserved space as outliers too.
    pub remove_unobserved: bool,
    /// Pull in-band Gaussians onto the estimated surface after each
    /// densification.
    pub project: bool,
    /// Take the literal normalized-gradient step instead of the metric
    /// Newton step when projecting.
    pub literal_projection: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            enabled: true,
            resolution: 128,
            pad_fraction: 0.05,
            base_truncation_voxels: 4.0,
            first_update_iter: 5_000,
            update_interval: 5_000,
            stop_iter: 20_000,
            sigma_sequence: vec![1.0, 0.5, 0.25],
            fixed_sigma: None,
            delta: 0.3,
            fusion_alpha_min: 0.5,
            scp: true,
            remove: true,
            remove_unobserved: false,
            project: true,
            literal_projection: false,
        }
    }
}

/// Final-evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Points sampled from the extracted mesh for the Chamfer metric.
    pub mesh_samples: usize,
    /// Points sampled from the analytic surface for the Chamfer metric.
    pub gt_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mesh_samples: 100_000,
            gt_samples: 100_000,
        }
    }
}

/// Artifact destinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Checkpoint every N iterations; 0 writes only the final state.
    pub checkpoint_interval: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &'static str, why: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(what, why))
            }
        }
        let s = &self.scene;
        self.shape()?;
        check(s.views >= 2, "scene.views", "need at least 2")?;
        check(s.width >= 8 && s.height >= 8, "scene.size", "images must be at least 8x8")?;
        check(s.fov_deg > 1.0 && s.fov_deg < 179.0, "scene.fov_deg", "outside (1, 179)")?;
        check(s.camera_radius > 0.0, "scene.camera_radius", "must be positive")?;
        check(s.checker_period > 0.0, "scene.checker_period", "must be positive")?;

        self.init_mode()?;
        check(self.init.count >= 1, "init.count", "need at least 1 Gaussian")?;
        check(self.init.pad_fraction >= 0.0, "init.pad_fraction", "must be non-negative")?;

        let t = &self.train;
        check(t.iterations >= 1, "train.iterations", "must be at least 1")?;
        check((0.0..=1.0).contains(&t.beta), "train.beta", "outside [0, 1]")?;
        for (name, l) in [
            ("train.lambda_depth", t.lambda_depth),
            ("train.lambda_normal_smooth", t.lambda_normal_smooth),
            ("train.lambda_multiview", t.lambda_multiview),
            ("train.lambda_scp", t.lambda_scp),
            ("train.flatten_weight", t.flatten_weight),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        check(t.neighbor_count >= 1, "train.neighbor_count", "must be at least 1")?;
        check(
            t.neighbor_count < s.views,
            "train.neighbor_count",
            "must leave at least one reference view",
        )?;
        check(t.ncc_stride >= 1, "train.ncc_stride", "must be at least 1")?;
        check((0.0..1.0).contains(&t.alpha_min), "train.alpha_min", "outside [0, 1)")?;

        let o = &self.optimizer;
        for (name, lr) in [
            ("optimizer.lr_center", o.lr_center),
            ("optimizer.lr_center_final", o.lr_center_final),
            ("optimizer.lr_opacity", o.lr_opacity),
            ("optimizer.lr_scale", o.lr_scale),
            ("optimizer.lr_rotation", o.lr_rotation),
            ("optimizer.lr_color", o.lr_color),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and positive")));
            }
        }

        let d = &self.densify;
        if d.interval > 0 {
            check(d.grad_threshold > 0.0, "densify.grad_threshold", "must be positive")?;
            check(d.percent_dense > 0.0, "densify.percent_dense", "must be positive")?;
            check(d.split_shrink > 1.0, "densify.split_shrink", "must exceed 1")?;
            check(d.min_gaussians >= 1, "densify.min_gaussians", "must be at least 1")?;
            check(
                (0.0..1.0).contains(&d.prune_opacity),
                "densify.prune_opacity",
                "outside [0, 1)",
            )?;
        }

        let p = &self.prior;
        if p.enabled {
            check(p.resolution >= 8, "prior.resolution", "must be at least 8")?;
            check(p.pad_fraction >= 0.0, "prior.pad_fraction", "must be non-negative")?;
            check(
                p.base_truncation_voxels > 0.0,
                "prior.base_truncation_voxels",
                "must be positive",
            )?;
            check(!p.sigma_sequence.is_empty(), "prior.sigma_sequence", "must be non-empty")?;
            for &sig in &p.sigma_sequence {
                check(sig > 0.0 && sig.is_finite(), "prior.sigma_sequence", "factors must be positive")?;
            }
            if let Some(sig) = p.fixed_sigma {
                check(sig > 0.0 && sig.is_finite(), "prior.fixed_sigma", "must be positive")?;
            }
            check(p.update_interval >= 1, "prior.update_interval", "must be at least 1")?;
            check((0.0..1.0).contains(&p.delta) && p.delta > 0.0, "prior.delta", "outside (0, 1)")?;
            check(
                (0.0..1.0).contains(&p.fusion_alpha_min),
                "prior.fusion_alpha_min",
                "outside [0, 1)",
            )?;
        }

        check(self.eval.mesh_samples >= 1, "eval.mesh_samples", "must be at least 1")?;
        check(self.eval.gt_samples >= 1, "eval.gt_samples", "must be at least 1")?;
        Ok(())
    }

    pub fn shape(&self) -> Result<Shape> {
        let size = self.scene.size;
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::invalid("scene.size", "must be finite and positive"));
        }
        match self.scene.shape.as_str() {
            "sphere" => Ok(Shape::Sphere { radius: size }),
            "box" => Ok(Shape::Box {
                half_extents: Vec3::repeat(size),
            }),
            "torus" => Ok(Shape::Torus {
                major: size,
                minor: 0.35 * size,
            }),
            other => Err(Error::Config(format!(
                "unknown scene.shape {other:?} (expected sphere, box, or torus)"
            ))),
        }
    }

    pub fn init_mode(&self) -> Result<InitMode> {
        match self.init.mode.as_str() {
            "random" => Ok(InitMode::Random),
            "surface" => Ok(InitMode::Surface),
            other => Err(Error::Config(format!(
                "unknown init.mode {other:?} (expected random or surface)"
            ))),
        }
    }

    pub fn scene_params(&self) -> Result<SceneParams> {
        Ok(SceneParams {
            shape: self.shape()?,
            n_views: self.scene.views,
            image_width: self.scene.width,
            image_height: self.scene.height,
            fov_deg: self.scene.fov_deg,
            camera_radius: self.scene.camera_radius,
            checker_period: self.scene.checker_period,
            ..SceneParams::default()
        })
    }
}

impl PriorConfig {
    /// Effective bandwidth factors after the fixed-bandwidth override.
    pub fn sigmas(&self) -> Vec<f64> {
        match self.fixed_sigma {
            Some(sig) => vec![sig; self.sigma_sequence.len()],
            None => self.sigma_sequence.clone(),
        }
    }

    /// Refresh schedule for a grid with the given voxel size.
    pub fn schedule(&self, voxel_size: f64) -> Result<BandSchedule> {
        BandSchedule::new(
            self.first_update_iter,
            self.update_interval,
            self.stop_iter,
            self.sigmas(),
            self.delta,
            self.base_truncation_voxels * voxel_size,
        )
    }
}
