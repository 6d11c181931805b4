//! Gaussian and camera primitives.
//!
//! Conventions used throughout the crate:
//! - World → camera: `x_cam = R · x_world + T`; the camera looks along +z.
//! - Depth means camera-z of a point, not ray length.
//! - Pixel `(ix, iy)` covers the unit square with center `(ix+0.5, iy+0.5)`
//!   in continuous image coordinates; projection returns continuous coords.
//! - Quaternions are stored as raw `(w, x, y, z)` and normalized on use, so
//!   gradients flow through the normalization.

use crate::error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec4 = nalgebra::Vector4<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie strictly in (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One planar-ish 3D Gaussian in raw (optimizer-facing) parameterization.
///
/// Activated quantities: `scales = exp(log_scale)` per axis and
/// `opacity = sigmoid(opacity_logit)`. The axis with the smallest scale is
/// the plane normal of the splat. Color is degree-0 (view independent) RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vec3,
    pub log_scale: Vec3,
    /// Raw quaternion (w, x, y, z); kept within 1e-6 of unit norm by the
    /// optimizer, but consumers must normalize anyway.
    pub rotation: Vec4,
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl Gaussian {
    #[inline]
    pub fn scales(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Rotation matrix (local → world); columns are the Gaussian's axes.
    pub fn rotation_matrix(&self) -> Result<Mat3> {
        quat_to_rotation(&self.rotation)
    }

    /// Index of the smallest-scale axis (the plane normal axis).
    /// Ties resolve to the lowest index.
    #[inline]
    pub fn plane_axis(&self) -> usize {
        let s = &self.log_scale;
        let mut k = 0;
        if s[1] < s[0] {
            k = 1;
        }
        if s[2] < s[k] {
            k = 2;
        }
        k
    }

    /// World-space covariance `R · diag(scales²) · Rᵀ`.
    pub fn covariance(&self) -> Result<Mat3> {
        let r = self.rotation_matrix()?;
        let s = self.scales();
        let d = Mat3::from_diagonal(&Vec3::new(s.x * s.x, s.y * s.y, s.z * s.z));
        Ok(r * d * r.transpose())
    }
}

/// Oriented plane: unit normal plus a point on the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub point: Vec3,
}

/// Supporting plane of a Gaussian: passes through the center, normal along
/// the minimum-scale axis (sign as stored in the rotation).
pub fn gaussian_plane(g: &Gaussian) -> Result<Plane> {
    let r = g.rotation_matrix()?;
    Ok(Plane {
        normal: r.column(g.plane_axis()).into(),
        point: g.center,
    })
}

/// Like [`gaussian_plane`], but the normal is flipped if needed so that it
/// opposes `view_dir` (faces the viewer): `normal · view_dir < 0`.
pub fn gaussian_plane_facing(g: &Gaussian, view_dir: &Vec3) -> Result<Plane> {
    let mut p = gaussian_plane(g)?;
    if p.normal.dot(view_dir) > 0.0 {
        p.normal = -p.normal;
    }
    Ok(p)
}

/// Rotation matrix from a raw quaternion (w, x, y, z); the quaternion is
/// normalized internally. Errors on (near-)zero norm.
pub fn quat_to_rotation(q: &Vec4) -> Result<Mat3> {
    let n = q.norm();
    if n < 1e-12 {
        return Err(Error::ZeroQuaternion { norm: n });
    }
    let u = q / n;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Pull a loss gradient w.r.t. the rotation matrix back to the raw
/// quaternion, including the chain through internal normalization.
/// `d_rot[(i,j)] = ∂L/∂R_ij` for `R = quat_to_rotation(q)`.
pub fn quat_rotation_backward(q: &Vec4, d_rot: &Mat3) -> Result<Vec4> {
    let n = q.norm();
    if n < 1e-12 {
        return Err(Error::ZeroQuaternion { norm: n });
    }
    let u = q / n;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    // ∂R/∂(unit components), each scaled by 2.
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0);
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x);
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y);
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0);
    let contract = |m: &Mat3| 2.0 * m.component_mul(d_rot).sum();
    let d_unit = Vec4::new(contract(&dw), contract(&dx), contract(&dy), contract(&dz));
    // Chain through u = q / |q|: J = (I − u·uᵀ) / |q|.
    Ok((d_unit - u * u.dot(&d_unit)) / n)
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-frame direction (unnormalized, z = 1) through continuous
    /// image point (u, v).
    #[inline]
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// One calibrated view: pose, intrinsics, and image size (geometry only —
/// observed images live with the scene).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    /// World → camera rotation.
    pub rotation: Mat3,
    /// World → camera translation.
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

/// World-space ray with precomputed camera-z rate.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction in world space.
    pub dir: Vec3,
    /// Camera-z advanced per unit ray length: depth = t · dz.
    pub dz: f64,
}

impl CameraView {
    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose() * self.translation
    }

    /// Project a world point; returns continuous pixel coords and camera-z
    /// (which may be ≤ 0 for points behind the camera).
    #[inline]
    pub fn project(&self, x: &Vec3) -> (Vec2, f64) {
        project_point(&self.intrinsics, &self.rotation, &self.translation, x)
    }

    /// World-space ray through continuous image point (u, v).
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let d_cam = self.intrinsics.unproject(u, v);
        let len = d_cam.norm();
        Ray {
            origin: self.center(),
            dir: self.rotation.transpose() * (d_cam / len),
            dz: 1.0 / len,
        }
    }

    /// Ray through the center of pixel (ix, iy).
    #[inline]
    pub fn pixel_ray(&self, ix: usize, iy: usize) -> Ray {
        self.ray_through(ix as f64 + 0.5, iy as f64 + 0.5)
    }

    /// View with the camera at `eye` looking at `target`.
    /// `up_hint` must not be parallel to the view direction.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up_hint: Vec3,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<CameraView> {
        let fwd = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera pose", "eye coincides with target"))?;
        let right = fwd
            .cross(&up_hint)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::invalid("camera pose", "up parallel to view direction"))?;
        let down = fwd.cross(&right); // +y in image space points down
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let translation = -rotation * eye;
        Ok(CameraView {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }
}

/// Project a world point through a world→camera pose and pinhole intrinsics.
/// Returns continuous pixel coordinates and the camera-z depth; depth ≤ 0
/// means the point is at or behind the camera plane (pixel coords are then
/// meaningless and must not be used without checking depth).
#[inline]
pub fn project_point(
    intrinsics: &Intrinsics,
    rotation: &Mat3,
    translation: &Vec3,
    x: &Vec3,
) -> (Vec2, f64) {
    let c = rotation * x + translation;
    let z = c.z;
    let u = intrinsics.cx + intrinsics.fx * c.x / z;
    let v = intrinsics.cy + intrinsics.fy * c.y / z;
    (Vec2::new(u, v), z)
}

/// Gradients of a scalar loss w.r.t. every raw Gaussian parameter, stored as
/// struct-of-arrays parallel to a `Vec<Gaussian>`.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub center: Vec<Vec3>,
    pub log_scale: Vec<Vec3>,
    pub rotation: Vec<Vec4>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            center: vec![Vec3::zeros(); n],
            log_scale: vec![Vec3::zeros(); n],
            rotation: vec![Vec4::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    /// `self += scale · other` element-wise.
    pub fn add_scaled(&mut self, other: &GaussianGrads, scale: f64) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::CountMismatch {
                what: "gradient rows",
                expected: self.len(),
                got: other.len(),
            });
        }
        for i in 0..self.len() {
            self.center[i] += scale * other.center[i];
            self.log_scale[i] += scale * other.log_scale[i];
            self.rotation[i] += scale * other.rotation[i];
            self.opacity_logit[i] += scale * other.opacity_logit[i];
            self.color[i] += scale * other.color[i];
        }
        Ok(())
    }

    /// True when every stored gradient component is finite.
    pub fn all_finite(&self) -> bool {
        self.center.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self
                .log_scale
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
            && self
                .rotation
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logit.iter().all(|x| x.is_finite())
            && self.color.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_q(w: f64, x: f64, y: f64, z: f64) -> Vec4 {
        Vec4::new(w, x, y, z).normalize()
    }

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        let r = quat_to_rotation(&Vec4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_x_maps_z_to_minus_y() {
        let q = unit_q(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let r = quat_to_rotation(&q).unwrap();
        let v = r * Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(v, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn unnormalized_quaternion_is_accepted() {
        let r1 = quat_to_rotation(&Vec4::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(r1, Mat3::identity(), epsilon = 1e-15);
        assert!(matches!(
            quat_to_rotation(&Vec4::zeros()),
            Err(Error::ZeroQuaternion { .. })
        ));
    }

    /// Oracle: rotation of a quaternion product equals the product of the
    /// rotations (checked over a batch of random-ish quaternions).
    #[test]
    fn compose_and_compare_oracle() {
        let qs = [
            unit_q(0.9, 0.1, -0.3, 0.2),
            unit_q(-0.2, 0.8, 0.4, -0.1),
            unit_q(0.5, 0.5, 0.5, 0.5),
            unit_q(0.0, 1.0, 0.0, 0.0),
        ];
        for a in &qs {
            for b in &qs {
                // Hamilton product (w,x,y,z).
                let prod = Vec4::new(
                    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                    a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                    a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                    a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
                );
                let lhs = quat_to_rotation(&prod).unwrap();
                let rhs = quat_to_rotation(a).unwrap() * quat_to_rotation(b).unwrap();
                assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rotation_matrices_are_orthonormal() {
        for q in [
            Vec4::new(0.3, -0.4, 0.1, 2.0),
            Vec4::new(1.0, 1.0, 1.0, 1.0),
            Vec4::new(-0.01, 0.9, -0.2, 0.05),
        ] {
            let r = quat_to_rotation(&q).unwrap();
            assert_relative_eq!(r * r.transpose(), Mat3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    /// Finite-difference check of the rotation-matrix pullback, including the
    /// normalization chain (raw quaternion deliberately non-unit).
    #[test]
    fn quat_rotation_backward_matches_fd() {
        let q = Vec4::new(0.8, -0.3, 0.45, 0.2); // |q| ≈ 0.99, not exactly 1
        // Arbitrary fixed cotangent.
        let d_rot = Mat3::new(0.3, -1.0, 0.2, 0.7, 0.05, -0.4, -0.6, 0.9, 1.1);
        let loss = |q: &Vec4| -> f64 {
            let r = quat_to_rotation(q).unwrap();
            r.component_mul(&d_rot).sum()
        };
        let analytic = quat_rotation_backward(&q, &d_rot).unwrap();
        let h = 1e-6;
        for a in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[a] += h;
            qm[a] -= h;
            let fd = (loss(&qp) - loss(&qm)) / (2.0 * h);
            assert_relative_eq!(analytic[a], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn plane_axis_picks_min_scale_with_low_index_ties() {
        let mut g = test_gaussian();
        g.log_scale = Vec3::new(-1.0, -3.0, -2.0);
        assert_eq!(g.plane_axis(), 1);
        g.log_scale = Vec3::new(-2.0, -2.0, -2.0);
        assert_eq!(g.plane_axis(), 0);
    }

    fn test_gaussian() -> Gaussian {
        Gaussian {
            center: Vec3::new(0.1, -0.2, 0.3),
            log_scale: Vec3::new(-2.0, -2.0, -5.0),
            rotation: Vec4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: 0.5,
            color: Vec3::new(0.5, 0.5, 0.5),
        }
    }

    #[test]
    fn plane_of_axis_aligned_gaussian() {
        let g = test_gaussian();
        let p = gaussian_plane(&g).unwrap();
        assert_relative_eq!(p.normal, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(p.point, g.center, epsilon = 1e-15);
    }

    #[test]
    fn facing_plane_opposes_view_direction() {
        let g = test_gaussian();
        let view_dir = Vec3::new(0.0, 0.3, 1.0).normalize();
        let p = gaussian_plane_facing(&g, &view_dir).unwrap();
        assert!(p.normal.dot(&view_dir) < 0.0);
        assert_relative_eq!(p.normal, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn project_point_on_axis_hits_principal_point() {
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 40.0,
        };
        let (px, z) = project_point(&intr, &Mat3::identity(), &Vec3::zeros(), &Vec3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(px, Vec2::new(50.0, 40.0), epsilon = 1e-12);
        assert_relative_eq!(z, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn project_point_scales_with_focal_length() {
        let intr = Intrinsics {
            fx: 100.0,
            fy: 80.0,
            cx: 50.0,
            cy: 40.0,
        };
        let (px, z) = project_point(&intr, &Mat3::identity(), &Vec3::zeros(), &Vec3::new(0.5, 0.0, 2.0));
        assert_relative_eq!(px.x, 75.0, epsilon = 1e-12); // 50 + 100·(0.5/2)
        assert_relative_eq!(px.y, 40.0, epsilon = 1e-12);
        assert!(z > 0.0);
    }

    /// Oracle: projection via an explicit 4×4 homogeneous pipeline.
    #[test]
    fn project_point_matches_homogeneous_oracle() {
        let intr = Intrinsics {
            fx: 123.0,
            fy: 77.0,
            cx: 31.5,
            cy: 63.25,
        };
        let rot = quat_to_rotation(&Vec4::new(0.9, 0.2, -0.3, 0.1)).unwrap();
        let trans = Vec3::new(0.4, -0.2, 3.0);
        for x in [
            Vec3::new(0.3, 0.2, 0.1),
            Vec3::new(-1.0, 0.5, -0.4),
            Vec3::new(2.0, -2.0, 1.5),
        ] {
            let (px, z) = project_point(&intr, &rot, &trans, &x);
            // Oracle: K·[R|T] acting on homogeneous coordinates.
            let mut m = nalgebra::Matrix3x4::<f64>::zeros();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(intr.matrix() * rot));
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(intr.matrix() * trans));
            let h = m * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
            assert_relative_eq!(px.x, h.x / h.z, epsilon = 1e-10);
            assert_relative_eq!(px.y, h.y / h.z, epsilon = 1e-10);
            assert_relative_eq!(z, h.z, epsilon = 1e-12);
        }
    }

    #[test]
    fn principal_point_shift_moves_pixel_not_depth() {
        let mut intr = Intrinsics {
            fx: 90.0,
            fy: 90.0,
            cx: 10.0,
            cy: 20.0,
        };
        let x = Vec3::new(0.3, -0.1, 1.7);
        let (p0, z0) = project_point(&intr, &Mat3::identity(), &Vec3::zeros(), &x);
        intr.cx += 5.0;
        intr.cy -= 3.0;
        let (p1, z1) = project_point(&intr, &Mat3::identity(), &Vec3::zeros(), &x);
        assert_relative_eq!(p1.x - p0.x, 5.0, epsilon = 1e-12);
        assert_relative_eq!(p1.y - p0.y, -3.0, epsilon = 1e-12);
        assert_relative_eq!(z0, z1, epsilon = 1e-15);
    }

    #[test]
    fn behind_camera_yields_nonpositive_depth() {
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        };
        let (_, z) = project_point(&intr, &Mat3::identity(), &Vec3::zeros(), &Vec3::new(0.0, 0.0, -1.0));
        assert!(z < 0.0);
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let cam = CameraView::look_at(
            Vec3::new(0.0, -3.0, 1.0),
            Vec3::zeros(),
            Vec3::new(0.0, 0.0, 1.0),
            Intrinsics {
                fx: 60.0,
                fy: 60.0,
                cx: 32.0,
                cy: 32.0,
            },
            64,
            64,
        )
        .unwrap();
        // Target projects to the principal point with positive depth.
        let (px, z) = cam.project(&Vec3::zeros());
        assert_relative_eq!(px, Vec2::new(32.0, 32.0), epsilon = 1e-9);
        assert_relative_eq!(z, (10.0_f64).sqrt(), epsilon = 1e-12);
        // Rotation is orthonormal and the center maps back to the eye.
        assert_relative_eq!(
            cam.rotation * cam.rotation.transpose(),
            Mat3::identity(),
            epsilon = 1e-12
        );
        assert_relative_eq!(cam.center(), Vec3::new(0.0, -3.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn pixel_ray_reprojects_to_pixel_center() {
        let cam = CameraView::look_at(
            Vec3::new(1.0, -2.0, 0.5),
            Vec3::new(0.1, 0.2, -0.1),
            Vec3::new(0.0, 0.0, 1.0),
            Intrinsics {
                fx: 55.0,
                fy: 48.0,
                cx: 24.0,
                cy: 20.0,
            },
            48,
            40,
        )
        .unwrap();
        for (ix, iy) in [(0usize, 0usize), (17, 31), (47, 39)] {
            let ray = cam.pixel_ray(ix, iy);
            let p = ray.origin + 2.37 * ray.dir;
            let (px, z) = cam.project(&p);
            assert_relative_eq!(px.x, ix as f64 + 0.5, epsilon = 1e-9);
            assert_relative_eq!(px.y, iy as f64 + 0.5, epsilon = 1e-9);
            // dz converts ray length to camera-z.
            assert_relative_eq!(z, 2.37 * ray.dz, epsilon = 1e-12);
        }
    }
}
