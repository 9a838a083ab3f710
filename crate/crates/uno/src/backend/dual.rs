//! Fixed-lane forward-mode dual numbers.
//!
//! The window optimizer evaluates each edge loss generically over a scalar
//! type: `f64` for plain values during line search, [`Dual`] with 16 lanes
//! (two pose tangents plus two affine-depth pairs) for analytic gradients.
//! Bilinear sampling differentiates through the interpolation weights, which
//! is exactly the sub-pixel image gradient.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by the loss kernels.
pub trait Smooth:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn abs(self) -> Self;
    /// Multiply by a plain constant.
    fn scale(self, s: f64) -> Self;
    fn add_const(self, s: f64) -> Self;
}

impl Smooth for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn add_const(self, s: f64) -> Self {
        self + s
    }
}

/// Value plus `N` partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
}

impl<const N: usize> Dual<N> {
    #[inline]
    pub fn seeded(v: f64, lane: usize) -> Self {
        let mut g = [0.0; N];
        g[lane] = 1.0;
        Dual { v, g }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual {
            v: self.v + rhs.v,
            g: std::array::from_fn(|i| self.g[i] + rhs.g[i]),
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual {
            v: self.v - rhs.v,
            g: std::array::from_fn(|i| self.g[i] - rhs.g[i]),
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual {
            v: self.v * rhs.v,
            g: std::array::from_fn(|i| self.v * rhs.g[i] + rhs.v * self.g[i]),
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        Dual {
            v,
            g: std::array::from_fn(|i| (self.g[i] - v * rhs.g[i]) * inv),
        }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual {
            v: -self.v,
            g: self.g.map(|x| -x),
        }
    }
}

impl<const N: usize> Smooth for Dual<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual { v, g: [0.0; N] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn abs(self) -> Self {
        if self.v < 0.0 {
            -self
        } else if self.v == 0.0 {
            // Minimal-norm subgradient at the kink, so exact optima report a
            // zero gradient.
            Dual::constant(0.0)
        } else {
            self
        }
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        Dual {
            v: self.v * s,
            g: self.g.map(|x| x * s),
        }
    }
    #[inline]
    fn add_const(self, s: f64) -> Self {
        Dual {
            v: self.v + s,
            g: self.g,
        }
    }
}

/// 3-vector helpers over a generic scalar.
pub type Vec3S<S> = [S; 3];

#[inline]
pub fn vec3_constant<S: Smooth>(v: &nalgebra::Vector3<f64>) -> Vec3S<S> {
    [S::constant(v[0]), S::constant(v[1]), S::constant(v[2])]
}

#[inline]
pub fn vec3_add<S: Smooth>(a: &Vec3S<S>, b: &Vec3S<S>) -> Vec3S<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn vec3_sub<S: Smooth>(a: &Vec3S<S>, b: &Vec3S<S>) -> Vec3S<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn vec3_cross<S: Smooth>(a: &Vec3S<S>, b: &Vec3S<S>) -> Vec3S<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Constant rotation matrix applied to a generic vector.
#[inline]
pub fn mat3_mul_vec<S: Smooth>(m: &nalgebra::Matrix3<f64>, v: &Vec3S<S>) -> Vec3S<S> {
    [
        v[0].scale(m[(0, 0)]) + v[1].scale(m[(0, 1)]) + v[2].scale(m[(0, 2)]),
        v[0].scale(m[(1, 0)]) + v[1].scale(m[(1, 1)]) + v[2].scale(m[(1, 2)]),
        v[0].scale(m[(2, 0)]) + v[1].scale(m[(2, 1)]) + v[2].scale(m[(2, 2)]),
    ]
}

/// A relative pose `Exp(δ_left)^-1 ∘ M0 ∘ Exp(δ_right)` linearized at the
/// seed perturbations (exact to first order, which is all duals carry).
///
/// `M0` maps right-frame coordinates to left-frame coordinates; the
/// perturbations live in the right-tangent spaces of the two absolute poses.
pub struct PerturbedRelPose<S: Smooth> {
    pub r0: nalgebra::Matrix3<f64>,
    pub t0: nalgebra::Vector3<f64>,
    pub left_rot: Vec3S<S>,
    pub left_trans: Vec3S<S>,
    pub right_rot: Vec3S<S>,
    pub right_trans: Vec3S<S>,
}

impl<S: Smooth> PerturbedRelPose<S> {
    /// Unperturbed relative pose (all seeds zero).
    pub fn frozen(m0: &crate::geometry::Pose) -> Self {
        let zero = [S::constant(0.0), S::constant(0.0), S::constant(0.0)];
        PerturbedRelPose {
            r0: m0.rotation_matrix(),
            t0: m0.translation,
            left_rot: zero,
            left_trans: zero,
            right_rot: zero,
            right_trans: zero,
        }
    }

    /// Map a right-frame point into the left frame.
    #[inline]
    pub fn transform(&self, x: &Vec3S<S>) -> Vec3S<S> {
        // Exp(δ_r)(x) = x + δ_r×x + δ_rt
        let u = vec3_add(
            &vec3_add(x, &vec3_cross(&self.right_rot, x)),
            &self.right_trans,
        );
        // M0(u)
        let mut w = mat3_mul_vec(&self.r0, &u);
        w[0] = w[0].add_const(self.t0[0]);
        w[1] = w[1].add_const(self.t0[1]);
        w[2] = w[2].add_const(self.t0[2]);
        // Exp(δ_l)^-1(w) = w − δ_lt − δ_lr×(w − δ_lt)
        let y = vec3_sub(&w, &self.left_trans);
        vec3_sub(&y, &vec3_cross(&self.left_rot, &y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use nalgebra::{Vector3, Vector6};

    #[test]
    fn dual_arithmetic_matches_finite_differences() {
        let f = |x: f64, y: f64| (x * y + 3.0) / (x - 0.5 * y) - x.abs();
        let fd_x = (f(2.0 + 1e-7, 1.2) - f(2.0 - 1e-7, 1.2)) / 2e-7;
        let fd_y = (f(2.0, 1.2 + 1e-7) - f(2.0, 1.2 - 1e-7)) / 2e-7;

        let x = Dual::<2>::seeded(2.0, 0);
        let y = Dual::<2>::seeded(1.2, 1);
        let r = (x * y).add_const(3.0) / (x - y.scale(0.5)) - x.abs();
        assert!((r.g[0] - fd_x).abs() < 1e-6);
        assert!((r.g[1] - fd_y).abs() < 1e-6);
    }

    // The perturbed transform's dual derivatives must match finite
    // differences through the exact retraction.
    #[test]
    fn perturbed_pose_gradient_matches_retraction() {
        let p_i = Pose::from_axis_angle(Vector3::new(0.2, -0.1, 0.3), Vector3::new(1.0, 0.5, -0.2));
        let p_j = Pose::from_axis_angle(Vector3::new(-0.1, 0.2, 0.1), Vector3::new(0.8, 0.4, 0.1));
        let x = Vector3::new(0.3, -0.6, 2.5);
        let h = 1e-7;

        for lane in 0..12 {
            let mut rel = PerturbedRelPose::<Dual<12>>::frozen(&p_i.between(&p_j));
            for a in 0..3 {
                rel.left_rot[a] = Dual::seeded(0.0, a);
                rel.left_trans[a] = Dual::seeded(0.0, 3 + a);
                rel.right_rot[a] = Dual::seeded(0.0, 6 + a);
                rel.right_trans[a] = Dual::seeded(0.0, 9 + a);
            }
            let xs = vec3_constant::<Dual<12>>(&x);
            let y = rel.transform(&xs);

            // Finite difference through the actual retraction of the poses.
            let mut delta_i = Vector6::zeros();
            let mut delta_j = Vector6::zeros();
            match lane {
                0..=2 => delta_i[lane] = h,
                3..=5 => delta_i[lane] = h,
                6..=8 => delta_j[lane - 6] = h,
                _ => delta_j[lane - 6] = h,
            }
            let m_plus = p_i
                .retract(&delta_i)
                .between(&p_j.retract(&delta_j));
            let m_minus = p_i
                .retract(&(-delta_i))
                .between(&p_j.retract(&(-delta_j)));
            let fd = (m_plus.transform_point(&x) - m_minus.transform_point(&x)) / (2.0 * h);
            for a in 0..3 {
                assert!(
                    (y[a].g[lane] - fd[a]).abs() < 1e-5,
                    "lane {lane} axis {a}: dual {} fd {}",
                    y[a].g[lane],
                    fd[a]
                );
            }
        }
    }
}
