//! SE(3) poses, pinhole cameras, depth maps and inverse warping.
//!
//! Conventions used across the crate:
//!
//! - A [`Pose`] is a rigid map `p -> R p + t`. Trajectory poses are
//!   camera-to-world maps, so `pose.translation` is the camera position.
//! - The relative pose stored on a graph edge `(i, j)` is `P_i^-1 * P_j`,
//!   i.e. the pose of camera `j` expressed in camera `i`'s frame. As a
//!   coordinate map it takes points from frame `j` to frame `i`.
//! - The warp argument `pose_t_to_s` maps target-frame coordinates into the
//!   source frame, matching the reconstruction direction of the photometric
//!   loss: a target pixel is backprojected, moved into the source camera and
//!   sampled there.
//! - Tangent vectors are `[rotation; translation]`, rotation first.

mod warp;

pub use warp::{bilinear_sample, inverse_warp};

use nalgebra::{Matrix3, Matrix4, Unit, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

/// Rigid-body transform on SE(3).
///
/// The rotation is kept as a unit quaternion and renormalized after every
/// composition so long chains do not drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    /// Pose from an axis-angle rotation and a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: UnitQuaternion::from_scaled_axis(axis_angle),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(
                (self.rotation * other.rotation).into_inner(),
            ),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// Relative pose `self^-1 ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Decoupled exponential: rotation from the axis-angle part, translation
    /// taken verbatim. Tangent layout is `[ω; v]`.
    pub fn exp(tangent: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(tangent[0], tangent[1], tangent[2]);
        let v = Vector3::new(tangent[3], tangent[4], tangent[5]);
        Pose {
            rotation: UnitQuaternion::from_scaled_axis(omega),
            translation: v,
        }
    }

    /// Inverse of [`Pose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        Vector6::new(
            omega[0],
            omega[1],
            omega[2],
            self.translation[0],
            self.translation[1],
            self.translation[2],
        )
    }

    /// Right-multiplicative retraction `self ∘ exp(δ)`, the local
    /// parameterization used by the window and pose-graph optimizers.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation.into_inner().norm()
    }
}

/// Rotation angle and translation distance between two poses.
///
/// The rotation error is the angle of the relative rotation in `[0, π]`; the
/// translation error is the Euclidean distance between the two translations
/// (equal to the translation norm of the relative pose). Both are exactly
/// symmetric in their arguments: the angle is computed from the quaternion
/// chord `min(|p-q|, |p+q|)`, which is the same expression either way around.
pub fn pose_distance(a: &Pose, b: &Pose) -> (f64, f64) {
    let p = a.rotation.into_inner().coords;
    let q = b.rotation.into_inner().coords;
    let chord = (p - q).norm().min((p + q).norm());
    let rot_err = 4.0 * (0.5 * chord).clamp(0.0, 1.0).asin();
    let trans_err = (b.translation - a.translation).norm();
    (rot_err, trans_err)
}

/// Chain ego-motion steps from an initial pose.
///
/// `out[0] = initial`, `out[i+1] = out[i] ∘ egomotions[i]`; each step is the
/// pose of frame `i+1` expressed in frame `i`.
pub fn accumulate_trajectory(initial: &Pose, egomotions: &[Pose]) -> Result<Vec<Pose>> {
    if egomotions.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::with_capacity(egomotions.len() + 1);
    out.push(*initial);
    for step in egomotions {
        let next = out.last().unwrap().compose(step);
        out.push(next);
    }
    Ok(out)
}

/// Skew-symmetric matrix of `v`, so that `hat(v) * x = v × x`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Inverse right Jacobian of SO(3) at axis-angle `phi`.
///
/// Satisfies `log(exp(φ) exp(δ)) ≈ φ + Jr^-1(φ) δ` for small `δ`.
pub fn inv_right_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let hat_phi = hat(phi);
    if theta2 < 1e-14 {
        return Matrix3::identity() + 0.5 * hat_phi + hat_phi * hat_phi / 12.0;
    }
    let theta = theta2.sqrt();
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * hat_phi + coeff * (hat_phi * hat_phi)
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(Error::InvalidArgument(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Project a camera-frame point (z > 0) to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p[2] <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }

    /// Backproject pixel `(u, v)` at depth `d` into the camera frame.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * d,
            (v - self.cy) / self.fy * d,
            d,
        )
    }

    /// Normalized image coordinates of pixel `(u, v)`.
    pub fn normalize(&self, u: f64, v: f64) -> Vector2<f64> {
        Vector2::new((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }
}

/// Row-major H×W grid of f64 samples, used for images and depth values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Depth values with a per-pixel validity mask. Valid depths are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// All-valid depth map; panics if any value is not positive.
    pub fn dense(values: Grid) -> Self {
        assert!(
            values.data.iter().all(|&d| d > 0.0),
            "dense depth map requires positive depths"
        );
        let n = values.data.len();
        DepthMap {
            values,
            valid: vec![true; n],
        }
    }

    pub fn with_mask(values: Grid, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != values.data.len() {
            return Err(Error::DimensionMismatch(
                "depth mask length differs from grid".into(),
            ));
        }
        for (i, &ok) in valid.iter().enumerate() {
            if ok && values.data[i] <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "valid depth at index {i} is not positive"
                )));
            }
        }
        Ok(DepthMap { values, valid })
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.values.width + x]
    }

    #[inline]
    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.values.at(x, y)
    }

    pub fn width(&self) -> usize {
        self.values.width
    }

    pub fn height(&self) -> usize {
        self.values.height
    }

    /// Per-frame affine map `d -> a*d + b`, applied on the valid mask.
    pub fn affine_transformed(&self, a: f64, b: f64) -> DepthMap {
        let mut values = self.values.clone();
        let mut valid = self.valid.clone();
        for (i, v) in values.data.iter_mut().enumerate() {
            if valid[i] {
                *v = a * *v + b;
                if *v <= 0.0 {
                    valid[i] = false;
                }
            }
        }
        DepthMap { values, valid }
    }
}

/// Midpoint triangulation of two bearing rays.
///
/// `x_a`, `x_b` are normalized image coordinates in frames `a` and `b`;
/// `pose_b_in_a` is the pose of camera `b` in frame `a`. Returns the midpoint
/// in frame-`a` coordinates and the ray parallax angle in radians, or `None`
/// when the rays are too close to parallel to intersect meaningfully.
pub fn triangulate_midpoint(
    x_a: &Vector2<f64>,
    x_b: &Vector2<f64>,
    pose_b_in_a: &Pose,
    min_parallax_rad: f64,
) -> Option<(Vector3<f64>, f64)> {
    let d_a = Unit::new_normalize(Vector3::new(x_a[0], x_a[1], 1.0));
    let d_b_in_b = Vector3::new(x_b[0], x_b[1], 1.0);
    let d_b = Unit::new_normalize(pose_b_in_a.rotation * d_b_in_b);
    let o_b = pose_b_in_a.translation;

    let cos_angle = d_a.dot(&d_b).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    if angle < min_parallax_rad {
        return None;
    }

    // Closest points on the two rays: o_a + s*d_a and o_b + t*d_b.
    let w = -o_b;
    let b = d_a.dot(&d_b);
    let d = d_a.dot(&w);
    let e = d_b.dot(&w);
    let denom = 1.0 - b * b;
    if denom.abs() < 1e-12 {
        return None;
    }
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;

    let p_a = s * d_a.into_inner();
    let p_b = o_b + t * d_b.into_inner();
    Some(((p_a + p_b) * 0.5, angle))
}
